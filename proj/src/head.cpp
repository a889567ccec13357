#include "reinpp/head.hpp"

#include "reinpp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace reinpp {

void HeadConfig::validate() const {
    if (queries == 0 || classes == 0 || query_dim == 0 || dim == 0 || grid == 0 || image < grid)
        throw std::invalid_argument("HeadConfig: bad dimensions");
}

ParamStore init_head(const HeadConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(mix_seed(seed, 0x68656164ULL));  // "head"
    const std::size_t c = cfg.dim, cq = cfg.query_dim, hd = cfg.hidden, kk = cfg.classes + 1;
    const double sd = 0.02;
    ParamStore ps;
    ps.add("head.in.w", randn({c, cq}, rng, sd), true);
    ps.add("head.in.b", randn({cq}, rng, sd), true);
    ps.add("head.query", randn({cfg.queries, cq}, rng, sd), true);
    ps.add("head.mlp1.w", randn({cq, hd}, rng, sd), true);
    ps.add("head.mlp1.b", randn({hd}, rng, sd), true);
    ps.add("head.mlp2.w", randn({hd, cq}, rng, sd), true);
    ps.add("head.mlp2.b", randn({cq}, rng, sd), true);
    ps.add("head.cls.w", randn({cq, kk}, rng, sd), true);
    ps.add("head.cls.b", randn({kk}, rng, sd), true);
    ps.add("head.pix.w", randn({c, cq}, rng, sd), true);
    ps.add("head.pix.b", randn({cq}, rng, sd), true);
    return ps;
}

Tensor bilinear_upsample_matrix(std::size_t grid, std::size_t image) {
    const double scale = static_cast<double>(grid) / static_cast<double>(image);
    Tensor u({image * image, grid * grid});
    for (std::size_t y = 0; y < image; ++y)
        for (std::size_t x = 0; x < image; ++x) {
            const double gy = (static_cast<double>(y) + 0.5) * scale - 0.5;
            const double gx = (static_cast<double>(x) + 0.5) * scale - 0.5;
            const double fy = std::clamp(gy, 0.0, static_cast<double>(grid - 1));
            const double fx = std::clamp(gx, 0.0, static_cast<double>(grid - 1));
            const std::size_t y0 = static_cast<std::size_t>(fy);
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t y1 = std::min(y0 + 1, grid - 1);
            const std::size_t x1 = std::min(x0 + 1, grid - 1);
            const double wy = fy - static_cast<double>(y0);
            const double wx = fx - static_cast<double>(x0);
            const std::size_t row = y * image + x;
            u.at(row, y0 * grid + x0) += (1 - wy) * (1 - wx);
            u.at(row, y0 * grid + x1) += (1 - wy) * wx;
            u.at(row, y1 * grid + x0) += wy * (1 - wx);
            u.at(row, y1 * grid + x1) += wy * wx;
        }
    return u;
}

MaskPredVars head_forward(Tape& tape, Binding& params, const HeadConfig& cfg, Var features,
                          Var extra_queries) {
    cfg.validate();
    const Tensor& fv = tape.value(features);
    if (fv.cols() != cfg.dim || fv.rows() != cfg.patches())
        throw std::invalid_argument("head_forward: feature shape " + fv.shape_str());
    Var f_proj = tape.add_row_bias(tape.matmul(features, params("head.in.w")), params("head.in.b"));
    Var queries = params("head.query");
    if (extra_queries.valid()) {
        if (tape.value(extra_queries).shape != tape.value(queries).shape)
            throw std::invalid_argument("head_forward: linked query shape mismatch");
        queries = tape.add(queries, extra_queries);
    }
    Var attn = tape.softmax_rows(tape.matmul(queries, f_proj, false, true),
                                 1.0 / std::sqrt(static_cast<double>(cfg.query_dim)));
    Var q1 = tape.add(queries, tape.matmul(attn, f_proj));
    Var h = tape.gelu(tape.add_row_bias(tape.matmul(q1, params("head.mlp1.w")), params("head.mlp1.b")));
    Var q2 = tape.add(q1, tape.add_row_bias(tape.matmul(h, params("head.mlp2.w")), params("head.mlp2.b")));

    MaskPredVars out;
    out.class_logits = tape.add_row_bias(tape.matmul(q2, params("head.cls.w")), params("head.cls.b"));
    Var pix = tape.add_row_bias(tape.matmul(features, params("head.pix.w")), params("head.pix.b"));
    out.mask_logits = tape.matmul(q2, pix, false, true);
    out.mask_logits_full =
        tape.matmul_const(out.mask_logits, bilinear_upsample_matrix(cfg.grid, cfg.image), false, true);
    return out;
}

Var semantic_aggregate(Tape& tape, Var class_probs, Var mask_probs_full) {
    const std::size_t k = tape.value(class_probs).cols() - 1;
    Var pk = tape.slice_cols(class_probs, 0, k);
    return tape.matmul(mask_probs_full, pk, true, false);
}

namespace {

Tensor to_tensor(const std::vector<std::uint8_t>& mask) {
    Tensor t({mask.size()});
    for (std::size_t i = 0; i < mask.size(); ++i) t.data[i] = mask[i] ? 1.0 : 0.0;
    return t;
}

Var bce_part(Tape& tape, Var row, const Tensor& target) {
    const double n = static_cast<double>(target.numel());
    Var s = tape.sub(tape.sum(tape.softplus(row)), tape.weighted_sum(row, target));
    return tape.scale(s, 1.0 / n);
}

Var dice_part(Tape& tape, Var row, const Tensor& target, double eps) {
    double tsum = 0;
    for (double v : target.data) tsum += v;
    Var s = tape.sigmoid(row);
    Var num = tape.add_const(tape.scale(tape.weighted_sum(s, target), 2.0), eps);
    Var den = tape.add_const(tape.sum(s), tsum + eps);
    return tape.sub(tape.constant(1.0), tape.sdiv(num, den));
}

// numeric (value-only) versions for the matching cost
double bce_value(const Tensor& logits, std::size_t row, const std::vector<std::uint8_t>& t) {
    const std::size_t n = t.size();
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = logits.at(row, i);
        s += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))) - (t[i] ? x : 0.0);
    }
    return s / static_cast<double>(n);
}

double dice_value(const Tensor& logits, std::size_t row, const std::vector<std::uint8_t>& t,
                  double eps) {
    double inter = 0, ssum = 0, tsum = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-logits.at(row, i)));
        ssum += p;
        if (t[i]) {
            inter += p;
            tsum += 1.0;
        }
    }
    return 1.0 - (2.0 * inter + eps) / (ssum + tsum + eps);
}

}  // namespace

Var dice_bce(Tape& tape, Var mask_logit_row, const std::vector<std::uint8_t>& target, double dice_eps) {
    if (tape.value(mask_logit_row).numel() != target.size())
        throw std::invalid_argument("dice_bce: size mismatch");
    Tensor t = to_tensor(target);
    return tape.add(bce_part(tape, mask_logit_row, t), dice_part(tape, mask_logit_row, t, dice_eps));
}

Var mask_cls_loss(Tape& tape, const MaskPredVars& pred, const GroundTruthSet& gt,
                  const HeadConfig& cfg, Assignment* matched) {
    const std::size_t nq = cfg.queries, kk = cfg.classes + 1, hw = cfg.pixels();
    if (gt.size() > nq)
        throw std::invalid_argument("mask_cls_loss: more ground-truth instances than queries");
    for (const auto& g : gt) {
        if (g.cls < 0 || g.cls >= static_cast<int>(cfg.classes))
            throw std::invalid_argument("mask_cls_loss: class id out of range");
        if (g.mask.size() != hw) throw std::invalid_argument("mask_cls_loss: gt mask size");
    }

    Var lsm = tape.log_softmax_rows(pred.class_logits);
    const Tensor& lsm_v = tape.value(lsm);
    const Tensor& mfull_v = tape.value(pred.mask_logits_full);

    Assignment assign;
    std::vector<char> query_matched(nq, 0);
    std::vector<std::size_t> gt_of_query(nq, 0);
    if (!gt.empty()) {
        Tensor cost({gt.size(), nq});
        for (std::size_t j = 0; j < gt.size(); ++j)
            for (std::size_t q = 0; q < nq; ++q) {
                const double p = std::exp(lsm_v.at(q, static_cast<std::size_t>(gt[j].cls)));
                cost.at(j, q) = cfg.lambda_cls * (-p) +
                                cfg.lambda_bce * bce_value(mfull_v, q, gt[j].mask) +
                                cfg.lambda_dice * dice_value(mfull_v, q, gt[j].mask, 1.0);
            }
        assign = hungarian_assign(cost);
        for (std::size_t j = 0; j < gt.size(); ++j) {
            query_matched[assign.col_of_row[j]] = 1;
            gt_of_query[assign.col_of_row[j]] = j;
        }
    }
    if (matched) *matched = assign;

    Tensor ce_w({nq, kk});
    for (std::size_t q = 0; q < nq; ++q) {
        if (query_matched[q])
            ce_w.at(q, static_cast<std::size_t>(gt[gt_of_query[q]].cls)) =
                -cfg.lambda_cls / static_cast<double>(nq);
        else
            ce_w.at(q, kk - 1) = -cfg.lambda_cls * cfg.no_object_weight / static_cast<double>(nq);
    }
    Var loss = tape.weighted_sum(lsm, std::move(ce_w));

    const double mask_norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, gt.size()));
    for (std::size_t q = 0; q < nq; ++q) {
        if (!query_matched[q]) continue;
        const auto& g = gt[gt_of_query[q]];
        Var row = tape.slice_rows(pred.mask_logits_full, q, q + 1);
        Tensor t = to_tensor(g.mask);
        Var term = tape.add(tape.scale(bce_part(tape, row, t), cfg.lambda_bce),
                            tape.scale(dice_part(tape, row, t, 1.0), cfg.lambda_dice));
        loss = tape.add(loss, tape.scale(term, mask_norm));
    }
    return loss;
}

Var logit_loss(Tape& tape, const MaskPredVars& pred, const HeadConfig& cfg,
               const std::vector<std::uint16_t>& labels, const std::vector<double>& pixel_weight,
               std::uint16_t ignore_id) {
    const std::size_t hw = cfg.pixels(), k = cfg.classes;
    if (labels.size() != hw || pixel_weight.size() != hw)
        throw std::invalid_argument("logit_loss: label/weight size");
    std::size_t n_scored = 0;
    for (std::size_t x = 0; x < hw; ++x)
        if (labels[x] != ignore_id) {
            if (labels[x] >= k) throw std::invalid_argument("logit_loss: label out of range");
            ++n_scored;
        }
    if (n_scored == 0) return tape.constant(0.0);

    Var p_probs = tape.softmax_rows(pred.class_logits);
    Var m_probs = tape.sigmoid(pred.mask_logits_full);
    Var s = semantic_aggregate(tape, p_probs, m_probs);  // (HW, K)
    Var t = tape.add_const(s, cfg.eps_norm);
    Var lp = tape.log(tape.div_rows(t, tape.row_sum(t)));

    Tensor w({hw, k});
    for (std::size_t x = 0; x < hw; ++x)
        if (labels[x] != ignore_id)
            w.at(x, labels[x]) = -pixel_weight[x] / static_cast<double>(n_scored);
    return tape.weighted_sum(lp, std::move(w));
}

Var instance_loss(Tape& tape, const MaskPredVars& student, const HeadConfig& cfg,
                  const std::vector<int>& target_classes,
                  const std::vector<std::vector<std::uint8_t>>& target_masks) {
    const std::size_t nq = cfg.queries, kk = cfg.classes + 1;
    if (target_classes.size() != nq || target_masks.size() != nq)
        throw std::invalid_argument("instance_loss: query count mismatch");

    Var lsm = tape.log_softmax_rows(student.class_logits);
    Tensor ce_w({nq, kk});
    std::size_t n_mask = 0;
    for (std::size_t q = 0; q < nq; ++q) {
        const int c = target_classes[q];
        if (c < 0 || c >= static_cast<int>(kk))
            throw std::invalid_argument("instance_loss: target class out of range");
        ce_w.at(q, static_cast<std::size_t>(c)) = -1.0 / static_cast<double>(nq);
        if (c != static_cast<int>(cfg.classes)) ++n_mask;  // non-empty target
    }
    Var loss = tape.weighted_sum(lsm, std::move(ce_w));
    if (n_mask == 0) return loss;
    const double norm = 1.0 / static_cast<double>(n_mask);
    for (std::size_t q = 0; q < nq; ++q) {
        if (target_classes[q] == static_cast<int>(cfg.classes)) continue;
        Var row = tape.slice_rows(student.mask_logits_full, q, q + 1);
        loss = tape.add(loss, tape.scale(dice_bce(tape, row, target_masks[q]), norm));
    }
    return loss;
}

}  // namespace reinpp
