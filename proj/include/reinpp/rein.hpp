#pragma once

#include "reinpp/backbone.hpp"
#include "reinpp/binding.hpp"

namespace reinpp {

struct ReinConfig {
    std::size_t tokens = 8;      // m, per layer
    std::size_t rank = 4;        // r
    std::size_t dim = 32;        // c, backbone feature dim
    std::size_t query_dim = 16;  // c'
    std::size_t layers = 4;      // N
    std::size_t heads = 1;       // h, used when use_multihead
    bool use_link = true;
    bool use_lowrank = true;
    bool use_multihead = false;
    bool use_gelu = false;

    std::size_t effective_heads() const { return use_multihead ? heads : 1; }
    void validate() const;
};

// Token banks plus layer-shared MLPs, names under "rein.". The final
// projection (f for the plain variant, g for the GELU variant) and the
// query concat projection start at zero so the refined forward initially
// equals the frozen forward.
ParamStore init_rein(const ReinConfig& cfg, std::uint64_t seed);

// Closed-form trainable parameter count for a config.
std::size_t count_trainable(const ReinConfig& cfg);

// T_i = A_i x B_i (or the full bank when low-rank is off); layer is 0-based.
Var materialize_tokens(Tape& tape, Binding& params, const ReinConfig& cfg, std::size_t layer);

// Per-head softmax similarity maps, each (n, m); scores scaled by
// 1/sqrt(c/h) over the head's channel group.
std::vector<Var> similarity(Tape& tape, Var features, Var tokens, std::size_t heads);

// Full per-layer feature delta: similarity, first-token drop, token MLP,
// feature MLP (plain or GELU variant).
Var refine(Tape& tape, Binding& params, const ReinConfig& cfg, Var features, Var tokens);

// Layer-wise queries aggregated by elementwise max/avg, concatenated with
// the last layer's and projected to (m, c').
Var link_queries(Tape& tape, Binding& params, const ReinConfig& cfg);

// Injector wiring refine() into forward_with_injection.
Injector make_rein_injector(Binding& params, const ReinConfig& cfg);

// Precomputed per-layer materialized tokens for inference; numerically
// identical to the uncached path.
struct ReinCache {
    std::vector<Tensor> tokens;  // per layer (m, c)
};
ReinCache precompute_tokens(const ParamStore& store, const ReinConfig& cfg);
Injector make_cached_injector(Binding& params, const ReinConfig& cfg, const ReinCache& cache);

}  // namespace reinpp
