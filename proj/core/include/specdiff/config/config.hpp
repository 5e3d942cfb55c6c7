#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "specdiff/config/run_config.hpp"

namespace specdiff::config {

/// Reads an INI file, applies defaults for missing keys and validates.
/// Throws ConfigError naming "section.key" for unknown keys, unparsable
/// values and violated cross-field constraints.
RunConfig validate_config(const std::filesystem::path& file);
RunConfig parse_config(const std::string& ini_text, const std::string& source = "<string>");

/// Cross-field checks only; throws ConfigError on the first violation.
void validate(const RunConfig& cfg);

/// Every key with its resolved value, in INI form. Feeding the result back
/// through parse_config yields an equal RunConfig.
std::string dump_config(const RunConfig& cfg);

/// Overrides one key given as "section.key=value" (validated afterwards by the caller).
void apply_override(RunConfig& cfg, const std::string& assignment);

/// "section.key" for every schema entry, in dump order.
std::vector<std::string> schema_keys();

struct KernelSize {
  int height = 3;
  int width = 3;
};
KernelSize parse_kernel_size(const std::string& text);

}  // namespace specdiff::config
