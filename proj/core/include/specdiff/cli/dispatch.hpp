#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace specdiff::cli {

/// Root for run directories: $SPECDIFF_RUN_ROOT, else ./runs.
std::filesystem::path run_root();

/// Parses argv (argv[0] is the program name), routes to one of preprocess,
/// train, synthesize, evaluate or schedule and returns the process exit code.
/// Every routed command gets a run directory holding the resolved config and
/// a provenance record.
int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace specdiff::cli
