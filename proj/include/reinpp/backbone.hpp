#pragma once

#include "reinpp/binding.hpp"
#include "reinpp/param_store.hpp"
#include "reinpp/tape.hpp"

#include <functional>

namespace reinpp {

struct BackboneConfig {
    std::size_t layers = 4;    // N
    std::size_t dim = 32;      // c
    std::size_t heads = 4;
    std::size_t patch = 4;     // patch side in pixels
    std::size_t image = 32;    // H = W
    std::uint64_t seed = 0;

    std::size_t grid() const { return image / patch; }
    std::size_t patches() const { return grid() * grid(); }
    void validate() const;
};

// Per-layer features with injected refinements. out = pre[N-1] + delta[N-1].
struct FeatureStack {
    std::vector<Var> pre;
    std::vector<Var> delta;  // invalid Var where the injector returned none
    Var out;
};

// layer index is 1-based; returns an (n,c) delta or an invalid Var for zero.
using Injector = std::function<Var(Tape&, std::size_t, Var)>;

// Seeded init; every entry flagged frozen. Weight matrices and position
// embeddings ~ N(0, 0.02^2); layernorm affine at identity.
ParamStore init_frozen_backbone(const BackboneConfig& cfg);

// Patchified image -> N pre-norm blocks with deltas added between layers.
// image is (H,W,3) with values in [0,1].
FeatureStack forward_with_injection(Tape& tape, Binding& params, const BackboneConfig& cfg,
                                    const Tensor& image, const Injector& injector = nullptr);

}  // namespace reinpp
