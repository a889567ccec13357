#include "reinpp/stm.hpp"

#include "reinpp/rng.hpp"

#include <stdexcept>

namespace reinpp {

void StmConfig::validate() const {
    if (dim == 0 || hidden == 0 || classes < 2) throw std::invalid_argument("StmConfig: bad dims");
    if (grid == 0 || image % grid != 0) throw std::invalid_argument("StmConfig: grid must divide image");
}

ParamStore init_stm(const StmConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(mix_seed(seed, 0x73746d21ULL));
    auto w = [&](std::size_t r, std::size_t c) { return randn({r, c}, rng, 0.02); };
    ParamStore ps;
    ps.add("stm.mlp1.w", w(cfg.dim, cfg.hidden), true);
    ps.add("stm.mlp1.b", Tensor::zeros({cfg.hidden}), true);
    ps.add("stm.mlp2.w", w(cfg.hidden, cfg.hidden), true);
    ps.add("stm.mlp2.b", Tensor::zeros({cfg.hidden}), true);
    ps.add("stm.cls.w", w(cfg.hidden, cfg.classes + 1), true);
    ps.add("stm.cls.b", Tensor::zeros({cfg.classes + 1}), true);
    return ps;
}

Tensor mask_pool_matrix(const std::vector<std::vector<std::uint8_t>>& masks, std::size_t image,
                        std::size_t grid, std::vector<char>& keep) {
    const std::size_t cell = image / grid;
    const std::size_t n = grid * grid;
    keep.assign(masks.size(), 0);

    std::vector<std::vector<double>> rows;
    for (std::size_t mi = 0; mi < masks.size(); ++mi) {
        const auto& m = masks[mi];
        if (m.size() != image * image) throw std::invalid_argument("mask_pool_matrix: mask size");
        std::vector<double> row(n, 0.0);
        double total = 0.0;
        for (std::size_t gy = 0; gy < grid; ++gy)
            for (std::size_t gx = 0; gx < grid; ++gx) {
                std::size_t hit = 0;
                for (std::size_t dy = 0; dy < cell; ++dy)
                    for (std::size_t dx = 0; dx < cell; ++dx)
                        hit += m[(gy * cell + dy) * image + gx * cell + dx];
                if (2 * hit >= cell * cell) {
                    row[gy * grid + gx] = 1.0;
                    total += 1.0;
                }
            }
        if (total == 0.0) continue;
        for (auto& v : row) v /= total;
        keep[mi] = 1;
        rows.push_back(std::move(row));
    }

    Tensor pool = Tensor::zeros({rows.size(), n});
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) pool.at(i, j) = rows[i][j];
    return pool;
}

StmPrediction stm_forward(Tape& tape, Binding& params, const StmConfig& cfg, Var features,
                          const std::vector<std::vector<std::uint8_t>>& oracle_masks) {
    cfg.validate();
    if (oracle_masks.empty()) throw std::invalid_argument("stm_forward: no oracle masks");

    std::vector<char> keep;
    Tensor pool = mask_pool_matrix(oracle_masks, cfg.image, cfg.grid, keep);
    if (pool.shape[0] == 0) throw std::invalid_argument("stm_forward: all masks empty after pooling");

    Var pooled = tape.const_matmul(std::move(pool), features);  // (M_kept, c)
    Var h = tape.gelu(tape.add_row_bias(tape.matmul(pooled, params("stm.mlp1.w")), params("stm.mlp1.b")));
    h = tape.gelu(tape.add_row_bias(tape.matmul(h, params("stm.mlp2.w")), params("stm.mlp2.b")));
    Var logits = tape.add_row_bias(tape.matmul(h, params("stm.cls.w")), params("stm.cls.b"));

    StmPrediction out;
    out.class_logits = logits;
    for (std::size_t i = 0; i < oracle_masks.size(); ++i) {
        if (keep[i])
            out.masks.push_back(oracle_masks[i]);
        else
            ++out.dropped;
    }
    return out;
}

}  // namespace reinpp
