#include "reinpp/gradcheck.hpp"

#include "reinpp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace reinpp {

double GradReport::max_rel_err() const {
    double mx = 0;
    for (const auto& it : items) mx = std::max(mx, it.max_rel_err);
    return mx;
}

GradReport finite_diff_check(const std::function<double(const ParamStore&)>& loss_fn,
                             const std::function<GradMap(const ParamStore&)>& grad_fn,
                             const ParamStore& params, double step, double tolerance,
                             std::uint64_t seed, std::size_t max_coords) {
    if (step <= 0) throw std::invalid_argument("finite_diff_check: step must be positive");
    GradReport report;
    report.tolerance = tolerance;
    const GradMap grads = grad_fn(params);

    ParamStore work = params;
    for (const auto& [name, entry] : params.entries()) {
        if (!entry.trainable) continue;
        auto git = grads.find(name);
        if (git == grads.end())
            throw std::runtime_error("finite_diff_check: no analytic gradient for " + name);
        const Tensor& g = git->second;
        const std::size_t n = entry.value.numel();

        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), 0);
        if (n > max_coords) {
            std::mt19937_64 rng(mix_seed(seed, std::hash<std::string>{}(name)));
            for (std::size_t i = 0; i < max_coords; ++i) {
                std::uniform_int_distribution<std::size_t> d(i, n - 1);
                std::swap(coords[i], coords[d(rng)]);
            }
            coords.resize(max_coords);
        }

        GradReport::Item item;
        item.name = name;
        item.coords_checked = coords.size();
        auto& wv = work.entries().at(name).value;
        for (std::size_t idx : coords) {
            const double orig = wv.data[idx];
            wv.data[idx] = orig + step;
            const double lp = loss_fn(work);
            wv.data[idx] = orig - step;
            const double lm = loss_fn(work);
            wv.data[idx] = orig;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw std::runtime_error("finite_diff_check: non-finite loss probing " + name);
            const double num = (lp - lm) / (2.0 * step);
            const double ana = g.data[idx];
            const double abs_err = std::abs(ana - num);
            const double rel = abs_err / std::max({1.0, std::abs(ana), std::abs(num)});
            item.max_abs_err = std::max(item.max_abs_err, abs_err);
            item.max_rel_err = std::max(item.max_rel_err, rel);
        }
        if (item.max_rel_err >= tolerance) report.pass = false;
        report.items.push_back(std::move(item));
    }
    return report;
}

}  // namespace reinpp
