#pragma once

#include <string>
#include <vector>

namespace diffcal {

// Whole-file read. Throws DependencyError if the file cannot be opened.
std::string read_file(const std::string& path);

// Atomic write: temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& content);

// Non-empty lines of a file, in order.
std::vector<std::string> read_lines(const std::string& path);

bool file_exists(const std::string& path);

void ensure_parent_dir(const std::string& path);

}  // namespace diffcal
