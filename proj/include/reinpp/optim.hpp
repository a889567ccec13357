#pragma once

#include "reinpp/param_store.hpp"

#include <functional>

namespace reinpp {

// First/second moment buffers plus the shared step counter. Created lazily
// per trainable entry on the first step.
struct AdamMoments {
    GradMap m;
    GradMap v;
    std::uint64_t step = 0;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam with bias correction. Frozen entries and
// entries without a gradient are untouched. lr_for overrides the base
// learning rate per parameter name when provided.
void adamw_step(ParamStore& params, const GradMap& grads, AdamMoments& moments,
                const AdamConfig& cfg,
                const std::function<double(const std::string&)>& lr_for = nullptr);

// teacher <- momentum * teacher + (1 - momentum) * student, matched by name.
// With only_student_trainable, entries frozen in the student are skipped.
void ema_update(ParamStore& teacher, const ParamStore& student, double momentum,
                bool only_student_trainable = false);

}  // namespace reinpp
