#pragma once

#include <cstddef>
#include <vector>

#include "fimc/matrix.hpp"

namespace fimc {

// Minimum-cost assignment (Kuhn-Munkres with potentials, O(n^3)).
// Rectangular inputs are padded with zero-cost dummies. Returns, for each row,
// the assigned column, or -1 when the row was matched to a dummy column.
std::vector<long> solve_assignment(const Matrix& cost);

}  // namespace fimc
