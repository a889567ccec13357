#pragma once

#include "reinpp/binding.hpp"
#include "reinpp/head.hpp"

#include <cstdint>
#include <vector>

namespace reinpp {

struct StmConfig {
    std::size_t dim = 32;     // backbone feature dim
    std::size_t hidden = 16;  // MLP width
    std::size_t classes = 6;  // K (no-object is index K)
    std::size_t grid = 8;     // patch grid side
    std::size_t image = 32;   // mask resolution side
    void validate() const;
};

ParamStore init_stm(const StmConfig& cfg, std::uint64_t seed);

// Class logits per kept mask plus the masks themselves; input masks that
// vanish after patch-grid downsampling are dropped and counted.
struct StmPrediction {
    Var class_logits;                             // (M_kept, K+1)
    std::vector<std::vector<std::uint8_t>> masks; // passthrough, image res
    std::size_t dropped = 0;
};

// Average-pool features over each mask's patch-grid support (cell kept when
// covered area >= 0.5), then a 2-layer MLP and a linear classifier.
StmPrediction stm_forward(Tape& tape, Binding& params, const StmConfig& cfg, Var features,
                          const std::vector<std::vector<std::uint8_t>>& oracle_masks);

// (M, n) row-normalized pooling matrix; rows of dropped masks are absent.
// keep[i] records whether mask i survived.
Tensor mask_pool_matrix(const std::vector<std::vector<std::uint8_t>>& masks, std::size_t image,
                        std::size_t grid, std::vector<char>& keep);

}  // namespace reinpp
