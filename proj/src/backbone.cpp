#include "reinpp/backbone.hpp"

#include "reinpp/rng.hpp"

#include <stdexcept>
#include <string>

namespace reinpp {

void BackboneConfig::validate() const {
    if (layers == 0 || dim == 0 || heads == 0 || patch == 0 || image == 0)
        throw std::invalid_argument("BackboneConfig: zero dimension");
    if (dim % heads != 0) throw std::invalid_argument("BackboneConfig: dim must divide by heads");
    if (image % patch != 0) throw std::invalid_argument("BackboneConfig: image must divide by patch");
}

ParamStore init_frozen_backbone(const BackboneConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x6261636bULL));  // "back"
    const std::size_t c = cfg.dim, n = cfg.patches(), pd = cfg.patch * cfg.patch * 3;
    const double std_dev = 0.02;
    ParamStore ps;
    auto add = [&](const std::string& name, std::vector<std::size_t> shape) {
        ps.add(name, randn(std::move(shape), rng, std_dev), false);
    };
    add("backbone.embed.w", {pd, c});
    add("backbone.embed.b", {c});
    add("backbone.pos", {n, c});
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        const std::string p = "backbone.blk" + std::to_string(i) + ".";
        ps.add(p + "ln1.g", Tensor::full({c}, 1.0), false);
        ps.add(p + "ln1.b", Tensor::zeros({c}), false);
        add(p + "qkv.w", {c, 3 * c});
        add(p + "qkv.b", {3 * c});
        add(p + "proj.w", {c, c});
        add(p + "proj.b", {c});
        ps.add(p + "ln2.g", Tensor::full({c}, 1.0), false);
        ps.add(p + "ln2.b", Tensor::zeros({c}), false);
        add(p + "mlp1.w", {c, 4 * c});
        add(p + "mlp1.b", {4 * c});
        add(p + "mlp2.w", {4 * c, c});
        add(p + "mlp2.b", {c});
    }
    ps.add("backbone.lnf.g", Tensor::full({c}, 1.0), false);
    ps.add("backbone.lnf.b", Tensor::zeros({c}), false);
    return ps;
}

namespace {

// (H,W,3) in [0,1] -> standardized patch rows (n, patch*patch*3)
Tensor patchify(const BackboneConfig& cfg, const Tensor& image) {
    if (image.shape != std::vector<std::size_t>{cfg.image, cfg.image, 3})
        throw std::invalid_argument("forward: image shape must be (H,W,3)");
    const std::size_t g = cfg.grid(), p = cfg.patch;
    Tensor out({g * g, p * p * 3});
    for (std::size_t py = 0; py < g; ++py)
        for (std::size_t px = 0; px < g; ++px) {
            const std::size_t row = py * g + px;
            std::size_t k = 0;
            for (std::size_t dy = 0; dy < p; ++dy)
                for (std::size_t dx = 0; dx < p; ++dx)
                    for (std::size_t ch = 0; ch < 3; ++ch) {
                        const double v = image.data[((py * p + dy) * cfg.image + (px * p + dx)) * 3 + ch];
                        out.at(row, k++) = (v - 0.5) / 0.25;
                    }
        }
    return out;
}

Var block_forward(Tape& t, Binding& P, const std::string& p, std::size_t heads, Var x) {
    const std::size_t n = t.value(x).rows(), c = t.value(x).cols();
    const std::size_t dh = c / heads;
    Var h = t.layernorm_rows(x, P(p + "ln1.g"), P(p + "ln1.b"));
    Var qkv = t.add_row_bias(t.matmul(h, P(p + "qkv.w")), P(p + "qkv.b"));
    std::vector<Var> head_outs;
    head_outs.reserve(heads);
    for (std::size_t hh = 0; hh < heads; ++hh) {
        Var q = t.slice_cols(qkv, hh * dh, (hh + 1) * dh);
        Var k = t.slice_cols(qkv, c + hh * dh, c + (hh + 1) * dh);
        Var v = t.slice_cols(qkv, 2 * c + hh * dh, 2 * c + (hh + 1) * dh);
        Var attn = t.softmax_rows(t.matmul(q, k, false, true), 1.0 / std::sqrt(double(dh)));
        head_outs.push_back(t.matmul(attn, v));
    }
    Var merged = heads == 1 ? head_outs[0] : t.concat_cols(head_outs);
    Var attn_out = t.add_row_bias(t.matmul(merged, P(p + "proj.w")), P(p + "proj.b"));
    x = t.add(x, attn_out);
    Var h2 = t.layernorm_rows(x, P(p + "ln2.g"), P(p + "ln2.b"));
    Var m1 = t.gelu(t.add_row_bias(t.matmul(h2, P(p + "mlp1.w")), P(p + "mlp1.b")));
    Var m2 = t.add_row_bias(t.matmul(m1, P(p + "mlp2.w")), P(p + "mlp2.b"));
    (void)n;
    return t.add(x, m2);
}

}  // namespace

FeatureStack forward_with_injection(Tape& tape, Binding& params, const BackboneConfig& cfg,
                                    const Tensor& image, const Injector& injector) {
    cfg.validate();
    const std::size_t n = cfg.patches(), c = cfg.dim;
    Var x = tape.constant(patchify(cfg, image));
    x = tape.add_row_bias(tape.matmul(x, params("backbone.embed.w")), params("backbone.embed.b"));
    x = tape.add(x, params("backbone.pos"));

    FeatureStack fs;
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        Var f = block_forward(tape, params, "backbone.blk" + std::to_string(i) + ".", cfg.heads, x);
        if (i + 1 == cfg.layers)
            f = tape.layernorm_rows(f, params("backbone.lnf.g"), params("backbone.lnf.b"));
        fs.pre.push_back(f);
        Var delta;
        if (injector) delta = injector(tape, i + 1, f);
        if (delta.valid()) {
            const Tensor& dv = tape.value(delta);
            if (dv.shape != std::vector<std::size_t>{n, c})
                throw std::invalid_argument("injection shape mismatch at layer " + std::to_string(i + 1) +
                                            ": got " + dv.shape_str());
            fs.delta.push_back(delta);
            x = tape.add(f, delta);
        } else {
            fs.delta.push_back(Var{});
            x = f;
        }
    }
    fs.out = x;
    return fs;
}

}  // namespace reinpp
