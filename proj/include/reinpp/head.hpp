#pragma once

#include "reinpp/binding.hpp"
#include "reinpp/hungarian.hpp"

#include <cstdint>
#include <vector>

namespace reinpp {

struct HeadConfig {
    std::size_t queries = 8;     // N_q
    std::size_t classes = 6;     // K (no-object is index K)
    std::size_t query_dim = 16;  // c'
    std::size_t dim = 32;        // c
    std::size_t hidden = 8;      // query MLP hidden width
    std::size_t grid = 8;        // mask logit side at feature resolution
    std::size_t image = 32;      // label-resolution side
    double lambda_cls = 2.0;
    double lambda_bce = 5.0;
    double lambda_dice = 5.0;
    double no_object_weight = 0.1;
    double eps_norm = 1e-8;      // semantic-aggregate normalization

    std::size_t patches() const { return grid * grid; }
    std::size_t pixels() const { return image * image; }
    void validate() const;
};

ParamStore init_head(const HeadConfig& cfg, std::uint64_t seed);

// N_q probability-mask pairs; mask logits at patch resolution plus the
// bilinear upsampling to label resolution used by every loss.
struct MaskPredVars {
    Var class_logits;      // (N_q, K+1)
    Var mask_logits;       // (N_q, n)
    Var mask_logits_full;  // (N_q, HW)
};

// One cross-attention block over the projected features plus a per-query
// MLP; class logits by linear map, mask logits by query/pixel dot product.
// extra_queries (from rein link) is added to the learned embeddings when valid.
MaskPredVars head_forward(Tape& tape, Binding& params, const HeadConfig& cfg, Var features,
                          Var extra_queries = Var{});

// Constant (HW, n) bilinear interpolation matrix from the patch grid.
Tensor bilinear_upsample_matrix(std::size_t grid, std::size_t image);

struct GtInstance {
    int cls = 0;                     // in [0, K)
    std::vector<std::uint8_t> mask;  // HW binary
};
using GroundTruthSet = std::vector<GtInstance>;

// s(x,k) = sum_q p[q,k] * m[q,x], no-object column excluded. (HW, K).
Var semantic_aggregate(Tape& tape, Var class_probs, Var mask_probs_full);

// mean BCE + dice (eps = 1) for one mask-logit row against a binary target.
Var dice_bce(Tape& tape, Var mask_logit_row, const std::vector<std::uint8_t>& target,
             double dice_eps = 1.0);

// Hungarian-matched mask classification loss.
Var mask_cls_loss(Tape& tape, const MaskPredVars& pred, const GroundTruthSet& gt,
                  const HeadConfig& cfg, Assignment* matched = nullptr);

// Per-pixel cross-entropy on epsilon-normalized aggregated semantics.
// labels: HW entries in [0,K) or ignore (255); weight per pixel.
Var logit_loss(Tape& tape, const MaskPredVars& pred, const HeadConfig& cfg,
               const std::vector<std::uint16_t>& labels, const std::vector<double>& pixel_weight,
               std::uint16_t ignore_id = 255);

// Query-order-aligned distillation: CE against per-query target classes
// (K = no-object) plus dice_bce against binary target masks for non-empty
// targets.
Var instance_loss(Tape& tape, const MaskPredVars& student, const HeadConfig& cfg,
                  const std::vector<int>& target_classes,
                  const std::vector<std::vector<std::uint8_t>>& target_masks);

}  // namespace reinpp
