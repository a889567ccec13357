#include "reinpp/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace reinpp {

void adamw_step(ParamStore& params, const GradMap& grads, AdamMoments& moments,
                const AdamConfig& cfg, const std::function<double(const std::string&)>& lr_for) {
    moments.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(moments.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(moments.step));
    for (auto& [name, entry] : params.entries()) {
        if (!entry.trainable) continue;
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        if (g.shape != entry.value.shape)
            throw std::invalid_argument("adamw_step: grad shape mismatch for " + name);
        if (!g.all_finite()) throw std::runtime_error("adamw_step: non-finite gradient for " + name);
        auto& m = moments.m.try_emplace(name, Tensor::zeros(g.shape)).first->second;
        auto& v = moments.v.try_emplace(name, Tensor::zeros(g.shape)).first->second;
        const double lr = lr_for ? lr_for(name) : cfg.lr;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
            const double mh = m.data[i] / bc1;
            const double vh = v.data[i] / bc2;
            double& w = entry.value.data[i];
            w -= lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * w);
        }
    }
}

void ema_update(ParamStore& teacher, const ParamStore& student, double momentum,
                bool only_student_trainable) {
    if (teacher.size() != student.size())
        throw std::invalid_argument("ema_update: entry count mismatch");
    auto ti = teacher.entries().begin();
    auto si = student.entries().begin();
    for (; ti != teacher.entries().end(); ++ti, ++si) {
        if (ti->first != si->first)
            throw std::invalid_argument("ema_update: name mismatch " + ti->first + " vs " + si->first);
        if (ti->second.value.shape != si->second.value.shape)
            throw std::invalid_argument("ema_update: shape mismatch for " + ti->first);
        if (only_student_trainable && !si->second.trainable) continue;
        auto& t = ti->second.value.data;
        const auto& s = si->second.value.data;
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = momentum * t[i] + (1.0 - momentum) * s[i];
    }
}

}  // namespace reinpp
