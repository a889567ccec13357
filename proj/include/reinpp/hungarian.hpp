#pragma once

#include "reinpp/tensor.hpp"

#include <vector>

namespace reinpp {

struct Assignment {
    std::vector<std::size_t> col_of_row;  // injective row -> column map
    double total_cost = 0.0;
};

// Minimum-total-cost injective assignment of rows to columns, rows <= cols.
// Kuhn-Munkres with potentials, O(A^2 B). Rejects non-finite entries.
Assignment hungarian_assign(const Tensor& cost);

}  // namespace reinpp
