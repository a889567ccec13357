#pragma once

#include "reinpp/param_store.hpp"

#include <functional>
#include <string>
#include <vector>

namespace reinpp {

struct GradReport {
    struct Item {
        std::string name;
        double max_rel_err = 0.0;
        double max_abs_err = 0.0;
        std::size_t coords_checked = 0;
    };
    std::vector<Item> items;
    double tolerance = 0.0;
    bool pass = true;

    double max_rel_err() const;
};

// Central-difference check of analytic gradients. loss_fn must be
// deterministic. Arrays larger than max_coords are sub-sampled with a seeded
// selection (at least max_coords coordinates each). Frozen entries are
// skipped. Relative error uses max(1, |analytic|, |numeric|) as denominator.
GradReport finite_diff_check(const std::function<double(const ParamStore&)>& loss_fn,
                             const std::function<GradMap(const ParamStore&)>& grad_fn,
                             const ParamStore& params, double step, double tolerance,
                             std::uint64_t seed = 7, std::size_t max_coords = 64);

}  // namespace reinpp
