#include "reinpp/rein.hpp"

#include "reinpp/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace reinpp {

void ReinConfig::validate() const {
    if (tokens < 2) throw std::invalid_argument("ReinConfig: need at least 2 tokens (one is dropped)");
    if (use_lowrank && rank >= dim) throw std::invalid_argument("ReinConfig: rank must be < dim");
    if (use_multihead && dim % heads != 0)
        throw std::invalid_argument("ReinConfig: dim must divide by heads");
    if (use_gelu && dim % 2 != 0) throw std::invalid_argument("ReinConfig: GELU variant needs even dim");
    if (layers == 0) throw std::invalid_argument("ReinConfig: zero layers");
}

ParamStore init_rein(const ReinConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(mix_seed(seed, 0x7265696eULL));  // "rein"
    const std::size_t m = cfg.tokens, r = cfg.rank, c = cfg.dim, cq = cfg.query_dim;
    const double sd = 0.02;
    ParamStore ps;
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        const std::string p = "rein.tok" + std::to_string(i) + ".";
        if (cfg.use_lowrank) {
            ps.add(p + "A", randn({m, r}, rng, sd), true);
            ps.add(p + "B", randn({r, c}, rng, sd), true);
        } else {
            ps.add(p + "T", randn({m, c}, rng, sd), true);
        }
    }
    ps.add("rein.mlp.t.w", randn({c, c}, rng, sd), true);
    ps.add("rein.mlp.t.b", randn({c}, rng, sd), true);
    if (cfg.use_gelu) {
        ps.add("rein.mlp.f.w", randn({c, c / 2}, rng, sd), true);
        ps.add("rein.mlp.f.b", randn({c / 2}, rng, sd), true);
        ps.add("rein.mlp.g.w", Tensor::zeros({c / 2, c}), true);
        ps.add("rein.mlp.g.b", Tensor::zeros({c}), true);
    } else {
        ps.add("rein.mlp.f.w", Tensor::zeros({c, c}), true);
        ps.add("rein.mlp.f.b", Tensor::zeros({c}), true);
    }
    if (cfg.use_link) {
        ps.add("rein.link.q.w", randn({c, cq}, rng, sd), true);
        ps.add("rein.link.q.b", randn({cq}, rng, sd), true);
        ps.add("rein.link.cat.w", Tensor::zeros({3 * cq, cq}), true);
        ps.add("rein.link.cat.b", Tensor::zeros({cq}), true);
    }
    return ps;
}

std::size_t count_trainable(const ReinConfig& cfg) {
    cfg.validate();
    const std::size_t m = cfg.tokens, r = cfg.rank, c = cfg.dim, cq = cfg.query_dim, N = cfg.layers;
    std::size_t n = 0;
    n += N * (cfg.use_lowrank ? (m * r + r * c) : m * c);
    n += c * c + c;  // token MLP
    n += cfg.use_gelu ? (c * (c / 2) + c / 2 + (c / 2) * c + c) : (c * c + c);
    if (cfg.use_link) {
        n += c * cq + cq;          // query MLP
        n += 3 * cq * cq + cq;     // concat projection
    }
    return n;
}

Var materialize_tokens(Tape& tape, Binding& params, const ReinConfig& cfg, std::size_t layer) {
    const std::string p = "rein.tok" + std::to_string(layer) + ".";
    if (cfg.use_lowrank) return tape.matmul(params(p + "A"), params(p + "B"));
    return params(p + "T");
}

std::vector<Var> similarity(Tape& tape, Var features, Var tokens, std::size_t heads) {
    const std::size_t c = tape.value(features).cols();
    if (tape.value(tokens).cols() != c) throw std::invalid_argument("similarity: dim mismatch");
    if (heads == 0 || c % heads != 0) throw std::invalid_argument("similarity: bad head count");
    const std::size_t dh = c / heads;
    std::vector<Var> maps;
    maps.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var fh = heads == 1 ? features : tape.slice_cols(features, h * dh, (h + 1) * dh);
        Var th = heads == 1 ? tokens : tape.slice_cols(tokens, h * dh, (h + 1) * dh);
        Var scores = tape.matmul(fh, th, false, true);
        maps.push_back(tape.softmax_rows(scores, 1.0 / std::sqrt(static_cast<double>(dh))));
    }
    return maps;
}

Var refine(Tape& tape, Binding& params, const ReinConfig& cfg, Var features, Var tokens) {
    const std::size_t m = tape.value(tokens).rows(), c = cfg.dim;
    const std::size_t h = cfg.effective_heads();
    const std::size_t dh = c / h;
    auto maps = similarity(tape, features, tokens, h);
    // token MLP, then first token dropped from both the map and the tokens
    Var tok_proj = tape.add_row_bias(tape.matmul(tokens, params("rein.mlp.t.w")), params("rein.mlp.t.b"));
    Var tok_tail = tape.slice_rows(tok_proj, 1, m);
    std::vector<Var> parts;
    parts.reserve(h);
    for (std::size_t hh = 0; hh < h; ++hh) {
        Var s_tail = tape.slice_cols(maps[hh], 1, m);
        Var t_head = h == 1 ? tok_tail : tape.slice_cols(tok_tail, hh * dh, (hh + 1) * dh);
        parts.push_back(tape.matmul(s_tail, t_head));
    }
    Var dbar = h == 1 ? parts[0] : tape.concat_cols(parts);
    Var z = tape.add(dbar, features);
    Var hid = tape.add_row_bias(tape.matmul(z, params("rein.mlp.f.w")), params("rein.mlp.f.b"));
    if (!cfg.use_gelu) return hid;
    return tape.add_row_bias(tape.matmul(tape.gelu(hid), params("rein.mlp.g.w")), params("rein.mlp.g.b"));
}

Var link_queries(Tape& tape, Binding& params, const ReinConfig& cfg) {
    if (!cfg.use_link) throw std::logic_error("link_queries: use_link disabled");
    Var wq = params("rein.link.q.w");
    Var bq = params("rein.link.q.b");
    Var q_max, q_avg, q_last;
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        Var t = materialize_tokens(tape, params, cfg, i);
        Var qi = tape.add_row_bias(tape.matmul(t, wq), bq);
        q_max = q_max.valid() ? tape.maximum(q_max, qi) : qi;
        q_avg = q_avg.valid() ? tape.add(q_avg, qi) : qi;
        q_last = qi;
    }
    q_avg = tape.scale(q_avg, 1.0 / static_cast<double>(cfg.layers));
    Var cat = tape.concat_cols({q_max, q_avg, q_last});
    return tape.add_row_bias(tape.matmul(cat, params("rein.link.cat.w")), params("rein.link.cat.b"));
}

Injector make_rein_injector(Binding& params, const ReinConfig& cfg) {
    return [&params, cfg](Tape& tape, std::size_t layer, Var f) -> Var {
        Var tokens = materialize_tokens(tape, params, cfg, layer - 1);
        return refine(tape, params, cfg, f, tokens);
    };
}

ReinCache precompute_tokens(const ParamStore& store, const ReinConfig& cfg) {
    ReinCache cache;
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        const std::string p = "rein.tok" + std::to_string(i) + ".";
        if (cfg.use_lowrank)
            cache.tokens.push_back(matmul(store.get(p + "A"), store.get(p + "B")));
        else
            cache.tokens.push_back(store.get(p + "T"));
    }
    return cache;
}

Injector make_cached_injector(Binding& params, const ReinConfig& cfg, const ReinCache& cache) {
    return [&params, cfg, &cache](Tape& tape, std::size_t layer, Var f) -> Var {
        Var tokens = tape.constant(cache.tokens.at(layer - 1));
        return refine(tape, params, cfg, f, tokens);
    };
}

}  // namespace reinpp
