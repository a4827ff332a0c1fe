#pragma once

#include <string>

#include "mcl/mat.hpp"

namespace mcl {

// One-line JSON header {rows, cols} followed by raw little-endian doubles.
void save_matrix(const Mat& m, const std::string& path);
Mat load_matrix(const std::string& path);

} // namespace mcl
