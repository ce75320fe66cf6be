#pragma once

#include <string>

namespace trajcl {

std::string read_file(const std::string& path);

/// Write-temp-then-rename so readers never observe a partial file.
void atomic_write_file(const std::string& path, const std::string& bytes);

}  // namespace trajcl
