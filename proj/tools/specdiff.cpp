#include "specdiff/cli/dispatch.hpp"

int main(int argc, char** argv) { return specdiff::cli::dispatch(argc, argv); }
