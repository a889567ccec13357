#include "reinpp/adapt.hpp"

#include "reinpp/hungarian.hpp"
#include "reinpp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace reinpp {

void AdaptConfig::validate() const {
    backbone.validate();
    rein.validate();
    head.validate();
    stm.validate();
    if (alpha < 0 || beta < 0) throw std::invalid_argument("AdaptConfig: negative branch weight");
    if (ema_momentum < 0 || ema_momentum > 1) throw std::invalid_argument("AdaptConfig: bad ema momentum");
    if (mask_ratio < 0 || mask_ratio > 1) throw std::invalid_argument("AdaptConfig: bad mask ratio");
    if (mask_cell == 0 || backbone.image % mask_cell != 0)
        throw std::invalid_argument("AdaptConfig: mask cell must divide image side");
    if (batch == 0) throw std::invalid_argument("AdaptConfig: empty batch");
    if (rcs_temperature <= 0) throw std::invalid_argument("AdaptConfig: temperature must be positive");
}

TrainerState init_trainer(const AdaptConfig& cfg, const ParamStore& student) {
    cfg.validate();
    TrainerState st;
    st.cfg = cfg;
    st.student = student;
    st.teacher = student;
    for (auto& [name, e] : st.teacher.entries()) e.trainable = false;
    st.stm = init_stm(cfg.stm, mix_seed(cfg.seed, 0x73746dULL));
    return st;
}

Tensor image_to_tensor(const SampleRecord& rec) {
    Tensor t({rec.side, rec.side, 3});
    for (std::size_t i = 0; i < rec.image.size(); ++i) t.data[i] = rec.image[i] / 255.0;
    return t;
}

GroundTruthSet gt_from_sample(const SampleRecord& rec) {
    const std::size_t hw = rec.side * rec.side;
    std::vector<std::uint16_t> ids;
    for (auto id : rec.instances)
        if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    std::sort(ids.begin(), ids.end());

    GroundTruthSet gt;
    for (auto id : ids) {
        GtInstance inst;
        inst.mask.assign(hw, 0);
        int cls = -1;
        for (std::size_t p = 0; p < hw; ++p)
            if (rec.instances[p] == id) {
                inst.mask[p] = 1;
                if (cls < 0 && rec.label[p] != 255) cls = rec.label[p];
            }
        if (cls < 0) continue;  // fully ignored region
        inst.cls = cls;
        gt.push_back(std::move(inst));
    }
    return gt;
}

MaskPredVars model_forward(Tape& tape, Binding& params, const BackboneConfig& bb,
                           const ReinConfig& rein, const HeadConfig& head, const Tensor& image,
                           bool use_rein) {
    Injector inj = use_rein ? make_rein_injector(params, rein) : Injector{};
    FeatureStack fs = forward_with_injection(tape, params, bb, image, inj);
    Var extra{};
    if (use_rein && rein.use_link) extra = link_queries(tape, params, rein);
    return head_forward(tape, params, head, fs.out, extra);
}

namespace {

// eps-normalized class probabilities per pixel, plus argmax and confidence.
void normalize_semantic(const Tensor& s_raw, double eps, double tau, Tensor& semantic,
                        std::vector<std::uint16_t>& argmax, double& confidence) {
    const std::size_t hw = s_raw.rows(), k = s_raw.cols();
    semantic = Tensor::zeros({hw, k});
    argmax.assign(hw, 0);
    std::size_t confident = 0;
    for (std::size_t p = 0; p < hw; ++p) {
        double tot = 0;
        for (std::size_t j = 0; j < k; ++j) tot += s_raw.at(p, j) + eps;
        double best = -1;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const double v = (s_raw.at(p, j) + eps) / tot;
            semantic.at(p, j) = v;
            if (v > best) {
                best = v;
                best_j = j;
            }
        }
        argmax[p] = static_cast<std::uint16_t>(best_j);
        if (best >= tau) ++confident;
    }
    confidence = static_cast<double>(confident) / static_cast<double>(hw);
}

}  // namespace

PseudoLabel generate_pseudo(const ParamStore& teacher, const AdaptConfig& cfg,
                            const Tensor& image) {
    Tape tape;
    Binding bind(tape, teacher);
    FeatureStack fs =
        forward_with_injection(tape, bind, cfg.backbone, image, make_rein_injector(bind, cfg.rein));
    Var extra{};
    if (cfg.rein.use_link) extra = link_queries(tape, bind, cfg.rein);
    MaskPredVars pred = head_forward(tape, bind, cfg.head, fs.out, extra);

    Var p_probs = tape.softmax_rows(pred.class_logits);
    Var m_probs = tape.sigmoid(pred.mask_logits_full);
    Var s = semantic_aggregate(tape, p_probs, m_probs);

    PseudoLabel out;
    out.features = tape.value(fs.out);
    out.mask_probs = tape.value(m_probs);
    const Tensor& pv = tape.value(p_probs);
    for (std::size_t q = 0; q < pv.rows(); ++q) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < pv.cols(); ++j)
            if (pv.at(q, j) > pv.at(q, best)) best = j;
        out.classes.push_back(static_cast<int>(best));
    }
    normalize_semantic(tape.value(s), cfg.head.eps_norm, cfg.conf_tau, out.semantic, out.argmax,
                       out.confidence);
    return out;
}

std::vector<std::uint16_t> predict_labels(const ParamStore& params, const BackboneConfig& bb,
                                          const ReinConfig& rein, const HeadConfig& head,
                                          const Tensor& image, bool use_rein) {
    Tape tape;
    Binding bind(tape, params);
    MaskPredVars pred = model_forward(tape, bind, bb, rein, head, image, use_rein);
    Var s = semantic_aggregate(tape, tape.softmax_rows(pred.class_logits),
                               tape.sigmoid(pred.mask_logits_full));
    const Tensor& sv = tape.value(s);
    std::vector<std::uint16_t> out(sv.rows(), 0);
    for (std::size_t p = 0; p < sv.rows(); ++p) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < sv.cols(); ++j)
            if (sv.at(p, j) > sv.at(p, best)) best = j;
        out[p] = static_cast<std::uint16_t>(best);
    }
    return out;
}

MixResult class_mix(const Tensor& x_s, const std::vector<std::uint8_t>& y_s, const Tensor& x_t,
                    const PseudoLabel& pseudo, std::mt19937_64& rng,
                    const std::vector<int>* forced_classes) {
    if (!x_s.same_shape(const_cast<Tensor&>(x_t)))
        throw std::invalid_argument("class_mix: image shape mismatch");
    const std::size_t hw = y_s.size();

    std::vector<int> present;
    for (auto y : y_s)
        if (y != 255 && std::find(present.begin(), present.end(), y) == present.end())
            present.push_back(y);
    std::sort(present.begin(), present.end());

    std::vector<int> selected;
    if (forced_classes) {
        selected = *forced_classes;
    } else {
        const std::size_t take = (present.size() + 1) / 2;
        std::vector<int> pool = present;
        for (std::size_t i = 0; i < take; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
            std::swap(pool[i], pool[pick(rng)]);
            selected.push_back(pool[i]);
        }
    }

    MixResult out;
    out.image = x_t;
    out.labels.assign(hw, 0);
    out.weight.assign(hw, 0.0);
    out.from_source.assign(hw, 0);
    for (std::size_t p = 0; p < hw; ++p) {
        const bool src = y_s[p] != 255 &&
                         std::find(selected.begin(), selected.end(), y_s[p]) != selected.end();
        if (src) {
            out.from_source[p] = 1;
            for (int ch = 0; ch < 3; ++ch) out.image.data[p * 3 + ch] = x_s.data[p * 3 + ch];
            out.labels[p] = y_s[p];
            out.weight[p] = 1.0;
        } else {
            out.labels[p] = pseudo.argmax[p];
            out.weight[p] = pseudo.confidence;
        }
    }
    return out;
}

std::vector<std::uint8_t> random_patch_mask(std::size_t side, double ratio, std::size_t cell,
                                            std::mt19937_64& rng) {
    if (cell == 0 || side % cell != 0)
        throw std::invalid_argument("random_patch_mask: cell must divide side");
    const std::size_t g = side / cell, cells = g * g;
    const std::size_t masked = static_cast<std::size_t>(ratio * static_cast<double>(cells));

    std::vector<std::size_t> order(cells);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < masked; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, cells - 1);
        std::swap(order[i], order[pick(rng)]);
    }

    std::vector<std::uint8_t> mask(side * side, 1);
    for (std::size_t i = 0; i < masked; ++i) {
        const std::size_t gy = order[i] / g, gx = order[i] % g;
        for (std::size_t dy = 0; dy < cell; ++dy)
            for (std::size_t dx = 0; dx < cell; ++dx)
                mask[(gy * cell + dy) * side + gx * cell + dx] = 0;
    }
    return mask;
}

std::size_t rcs_pick_class(const std::vector<double>& freq, double temperature,
                           std::mt19937_64& rng) {
    std::vector<double> w(freq.size());
    for (std::size_t c = 0; c < freq.size(); ++c) w[c] = std::exp((1.0 - freq[c]) / temperature);
    std::discrete_distribution<std::size_t> d(w.begin(), w.end());
    return d(rng);
}

std::size_t rcs_sample(const std::vector<double>& freq,
                       const std::vector<std::vector<std::size_t>>& images_with_class,
                       std::size_t n_images, double temperature, std::mt19937_64& rng) {
    if (n_images == 0) throw std::invalid_argument("rcs_sample: no images");
    const std::size_t c = rcs_pick_class(freq, temperature, rng);
    const auto& pool = images_with_class.at(c);
    if (pool.empty())
        return std::uniform_int_distribution<std::size_t>(0, n_images - 1)(rng);
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
}

std::vector<double> class_pixel_freq(const std::vector<LoadedSample>& samples,
                                     std::size_t classes) {
    std::vector<double> freq(classes, 0.0);
    double total = 0.0;
    for (const auto& s : samples)
        for (auto y : s.rec.label)
            if (y != 255 && y < classes) {
                freq[y] += 1.0;
                total += 1.0;
            }
    if (total > 0)
        for (auto& f : freq) f /= total;
    return freq;
}

std::vector<std::vector<std::size_t>> index_images_by_class(
    const std::vector<LoadedSample>& samples, std::size_t classes) {
    std::vector<std::vector<std::size_t>> idx(classes);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::vector<char> has(classes, 0);
        for (auto y : samples[i].rec.label)
            if (y != 255 && y < classes) has[y] = 1;
        for (std::size_t c = 0; c < classes; ++c)
            if (has[c]) idx[c].push_back(i);
    }
    return idx;
}

namespace {

Tensor saturated_mask_logits(const std::vector<std::vector<std::uint8_t>>& masks, std::size_t hw) {
    Tensor t({masks.size(), hw});
    for (std::size_t i = 0; i < masks.size(); ++i)
        for (std::size_t p = 0; p < hw; ++p) t.at(i, p) = masks[i][p] ? 12.0 : -12.0;
    return t;
}

// Keep at most `limit` masks, largest areas first (stable by index).
void cap_masks(std::vector<std::vector<std::uint8_t>>& masks, std::vector<std::size_t>& order,
               std::size_t limit) {
    order.resize(masks.size());
    std::iota(order.begin(), order.end(), 0);
    if (masks.size() <= limit) return;
    std::vector<std::size_t> area(masks.size(), 0);
    for (std::size_t i = 0; i < masks.size(); ++i)
        area[i] = std::accumulate(masks[i].begin(), masks[i].end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return area[a] > area[b]; });
    order.resize(limit);
    std::vector<std::vector<std::uint8_t>> kept;
    for (auto i : order) kept.push_back(masks[i]);
    masks = std::move(kept);
}

}  // namespace

LossBreakdown train_step(TrainerState& state, const std::vector<const LoadedSample*>& source,
                         const std::vector<const LoadedSample*>& target) {
    const AdaptConfig& cfg = state.cfg;
    if (source.size() != cfg.batch || target.size() != cfg.batch)
        throw std::invalid_argument("train_step: batch size mismatch");
    const std::size_t hw = cfg.backbone.image * cfg.backbone.image;
    const double inv_b = 1.0 / static_cast<double>(cfg.batch);

    std::mt19937_64 rng(mix_seed(cfg.seed, mix_seed(0x61646170ULL, state.iteration)));

    GradMap student_grads, stm_grads;
    LossBreakdown bd;

    for (std::size_t b = 0; b < cfg.batch; ++b) {
        const LoadedSample& s = *source[b];
        const LoadedSample& t = *target[b];
        const Tensor x_s = image_to_tensor(s.rec);
        const Tensor x_t = image_to_tensor(t.rec);
        const GroundTruthSet gt_s = gt_from_sample(s.rec);

        PseudoLabel pseudo = generate_pseudo(state.teacher, cfg, x_t);
        bd.conf += pseudo.confidence * inv_b;

        // source branch
        {
            Tape tape;
            Binding bind(tape, state.student);
            MaskPredVars pred =
                model_forward(tape, bind, cfg.backbone, cfg.rein, cfg.head, x_s, true);
            Var loss = mask_cls_loss(tape, pred, gt_s, cfg.head);
            tape.backward(loss);
            bd.src += tape.scalar_value(loss) * inv_b;
            grad_accumulate(student_grads, bind.grads(), inv_b);
        }

        // mix branch
        MixResult mix;
        bool have_mix = false;
        if (cfg.use_mix) {
            mix = class_mix(x_s, s.rec.label, x_t, pseudo, rng);
            have_mix = true;
            Tape tape;
            Binding bind(tape, state.student);
            MaskPredVars pred =
                model_forward(tape, bind, cfg.backbone, cfg.rein, cfg.head, mix.image, true);
            Var loss = logit_loss(tape, pred, cfg.head, mix.labels, mix.weight);
            tape.backward(loss);
            bd.mix += tape.scalar_value(loss) * inv_b;
            grad_accumulate(student_grads, bind.grads(), cfg.alpha * inv_b);
        }

        // mask branch (teacher targets + STM targets share one student graph)
        if (cfg.use_mask) {
            const std::vector<std::uint8_t> patch_mask =
                random_patch_mask(cfg.backbone.image, cfg.mask_ratio, cfg.mask_cell, rng);
            Tensor x_masked = x_t;
            for (std::size_t p = 0; p < hw; ++p)
                if (!patch_mask[p])
                    for (int ch = 0; ch < 3; ++ch) x_masked.data[p * 3 + ch] = 0.0;

            std::vector<std::vector<std::uint8_t>> teach_masks(cfg.head.queries);
            for (std::size_t q = 0; q < cfg.head.queries; ++q) {
                teach_masks[q].assign(hw, 0);
                for (std::size_t p = 0; p < hw; ++p)
                    teach_masks[q][p] = pseudo.mask_probs.at(q, p) >= 0.5 ? 1 : 0;
            }

            Tape tape;
            Binding bind(tape, state.student);
            MaskPredVars pred =
                model_forward(tape, bind, cfg.backbone, cfg.rein, cfg.head, x_masked, true);
            Var loss = instance_loss(tape, pred, cfg.head, pseudo.classes, teach_masks);
            bd.mask += tape.scalar_value(loss) * inv_b;
            Var combined = loss;

            if (cfg.use_stm) {
                // STM targets on the clean target image, gradient-free.
                auto omasks = split_oracle_masks(t.oracle, t.rec.side);
                std::vector<std::size_t> order;
                cap_masks(omasks, order, cfg.head.queries);

                Tape ttape;
                Binding tbind(ttape, state.stm);
                StmConfig scfg = cfg.stm;
                StmPrediction sp =
                    stm_forward(ttape, tbind, scfg, ttape.constant(pseudo.features), omasks);
                state.stm_dropped += sp.dropped;
                const Tensor& slog = ttape.value(sp.class_logits);

                // assign each STM mask to the teacher query it overlaps most
                Tensor cost({sp.masks.size(), cfg.head.queries});
                for (std::size_t i = 0; i < sp.masks.size(); ++i)
                    for (std::size_t q = 0; q < cfg.head.queries; ++q) {
                        double inter = 0, tot = 1e-9;
                        for (std::size_t p = 0; p < hw; ++p) {
                            const double mp = pseudo.mask_probs.at(q, p);
                            inter += sp.masks[i][p] * mp;
                            tot += sp.masks[i][p] + mp;
                        }
                        cost.at(i, q) = 1.0 - 2.0 * inter / tot;
                    }
                Assignment asg = hungarian_assign(cost);

                std::vector<int> stm_classes(cfg.head.queries, static_cast<int>(cfg.head.classes));
                std::vector<std::vector<std::uint8_t>> stm_masks(
                    cfg.head.queries, std::vector<std::uint8_t>(hw, 0));
                for (std::size_t i = 0; i < sp.masks.size(); ++i) {
                    const std::size_t q = asg.col_of_row[i];
                    std::size_t best = 0;
                    for (std::size_t j = 1; j < slog.cols(); ++j)
                        if (slog.at(i, j) > slog.at(i, best)) best = j;
                    stm_classes[q] = static_cast<int>(best);
                    stm_masks[q] = sp.masks[i];
                }
                Var stm_loss = instance_loss(tape, pred, cfg.head, stm_classes, stm_masks);
                bd.mask_stm += tape.scalar_value(stm_loss) * inv_b;
                combined = tape.add(combined, stm_loss);
            }
            tape.backward(combined);
            grad_accumulate(student_grads, bind.grads(), cfg.beta * inv_b);
        }

        // STM source branch: teacher features, oracle masks, gt supervision
        if (cfg.use_stm) {
            Tape tape;
            Binding bbind(tape, state.teacher);
            FeatureStack fs = forward_with_injection(tape, bbind, cfg.backbone, x_s,
                                                     make_rein_injector(bbind, cfg.rein));
            auto omasks = split_oracle_masks(s.oracle, s.rec.side);
            Binding sbind(tape, state.stm);
            StmPrediction sp = stm_forward(tape, sbind, cfg.stm, fs.out, omasks);
            state.stm_dropped += sp.dropped;

            HeadConfig scfg = cfg.head;
            scfg.queries = sp.masks.size();
            MaskPredVars spred;
            spred.class_logits = sp.class_logits;
            spred.mask_logits_full = tape.constant(saturated_mask_logits(sp.masks, hw));
            spred.mask_logits = spred.mask_logits_full;

            GroundTruthSet gt = gt_s;
            if (gt.size() > sp.masks.size()) {
                std::stable_sort(gt.begin(), gt.end(), [](const GtInstance& a, const GtInstance& b) {
                    return std::accumulate(a.mask.begin(), a.mask.end(), 0u) >
                           std::accumulate(b.mask.begin(), b.mask.end(), 0u);
                });
                gt.resize(sp.masks.size());
            }
            Var loss = mask_cls_loss(tape, spred, gt, scfg);
            tape.backward(loss);
            bd.src_stm += tape.scalar_value(loss) * inv_b;
            grad_accumulate(stm_grads, sbind.grads(), inv_b);
        }

        // STM mix branch
        if (cfg.use_stm && have_mix) {
            std::vector<std::uint16_t> mixed_ids(hw, 0);
            for (std::size_t p = 0; p < hw; ++p)
                mixed_ids[p] = mix.from_source[p]
                                   ? static_cast<std::uint16_t>(s.rec.instances[p] + 1000)
                                   : t.rec.instances[p];
            auto omasks = split_oracle_masks(mixed_ids, s.rec.side);

            Tape tape;
            Binding bbind(tape, state.teacher);
            FeatureStack fs = forward_with_injection(tape, bbind, cfg.backbone, mix.image,
                                                     make_rein_injector(bbind, cfg.rein));
            Binding sbind(tape, state.stm);
            StmPrediction sp = stm_forward(tape, sbind, cfg.stm, fs.out, omasks);
            state.stm_dropped += sp.dropped;

            HeadConfig scfg = cfg.head;
            scfg.queries = sp.masks.size();
            MaskPredVars spred;
            spred.class_logits = sp.class_logits;
            spred.mask_logits_full = tape.constant(saturated_mask_logits(sp.masks, hw));
            spred.mask_logits = spred.mask_logits_full;

            Var loss = logit_loss(tape, spred, scfg, mix.labels, mix.weight);
            tape.backward(loss);
            bd.mix_stm += tape.scalar_value(loss) * inv_b;
            grad_accumulate(stm_grads, sbind.grads(), cfg.alpha * inv_b);
        }
    }

    bd.total = bd.src + cfg.alpha * bd.mix + cfg.beta * bd.mask + bd.src_stm +
               cfg.alpha * bd.mix_stm + cfg.beta * bd.mask_stm;
    if (!std::isfinite(bd.total)) {
        std::ostringstream os;
        os << "train_step: non-finite loss at iteration " << state.iteration << " (src=" << bd.src
           << " mix=" << bd.mix << " mask=" << bd.mask << " src_stm=" << bd.src_stm
           << " mix_stm=" << bd.mix_stm << " mask_stm=" << bd.mask_stm << ")";
        throw std::runtime_error(os.str());
    }

    adamw_step(state.student, student_grads, state.moments, cfg.optim);
    adamw_step(state.stm, stm_grads, state.stm_moments, cfg.optim);
    ema_update(state.teacher, state.student, cfg.ema_momentum, true);
    ++state.iteration;
    return bd;
}

}  // namespace reinpp
