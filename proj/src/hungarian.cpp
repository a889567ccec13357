#include "reinpp/hungarian.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace reinpp {

Assignment hungarian_assign(const Tensor& cost) {
    if (cost.ndim() != 2) throw std::invalid_argument("hungarian_assign: 2-D cost required");
    const std::size_t n = cost.rows(), m = cost.cols();
    if (n > m) throw std::invalid_argument("hungarian_assign: rows must not exceed cols");
    for (double v : cost.data)
        if (!std::isfinite(v)) throw std::invalid_argument("hungarian_assign: non-finite cost entry");

    const double inf = std::numeric_limits<double>::infinity();
    // 1-indexed potentials; p[j] = row matched to column j (0 = none).
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    Assignment a;
    a.col_of_row.assign(n, 0);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0) a.col_of_row[p[j] - 1] = j - 1;
    for (std::size_t i = 0; i < n; ++i) a.total_cost += cost.at(i, a.col_of_row[i]);
    return a;
}

}  // namespace reinpp
