#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

namespace hyspec::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// `base`/<UTC timestamp>-<command>, with a numeric suffix on collision.
std::filesystem::path make_run_dir(const std::filesystem::path& base, const std::string& command);

}  // namespace hyspec::cli
