#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gdro {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Relative paths are resolved against $GDRO_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output_path(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace gdro
