#pragma once

#include "reinpp/adapt.hpp"
#include "reinpp/evalkit.hpp"

#include <iosfwd>

namespace reinpp {

enum class Mode { freeze, full, rein };

Mode parse_mode(const std::string& s);
std::string mode_name(Mode m);

struct ExperimentConfig {
    AdaptConfig adapt;  // model dims plus all trainer knobs
    Mode mode = Mode::rein;
    std::size_t dg_iterations = 3000;
    std::size_t da_iterations = 3000;
    double lr_backbone = 1e-4;
    double lr_head = 1e-4;  // head + rein + stm
    std::string data_dir;
    std::string out_dir;

    bool use_rein() const { return mode == Mode::rein; }
    void validate() const;
};

// Desk-scale defaults: N=4, c=32, 4 heads, patch 4, 32x32 canvas, m=8, r=4,
// c'=16, N_q=8, K=6, batch 4.
ExperimentConfig desk_config();

// Flat key=value lines; '#' starts a comment. Unknown keys are errors.
void apply_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value);
void load_config_file(ExperimentConfig& cfg, const std::string& path);

// Backbone plus head, plus rein when mode=rein; mode=full unfreezes the
// backbone.
ParamStore init_model(const ExperimentConfig& cfg);

double evaluate(const ParamStore& model, const ExperimentConfig& cfg,
                const std::vector<LoadedSample>& samples, ConfusionMatrix* cm_out = nullptr);

struct DgResult {
    double source_miou = 0.0;
    double target_miou = 0.0;
};

// Supervised source training with the matched mask classification loss.
// Writes one JSON object per step to metrics.
DgResult train_dg(const ExperimentConfig& cfg, const Dataset& src, const Dataset& tgt,
                  ParamStore& model, std::ostream& metrics);

// Adaptation loop over train_step; source batches drawn by rare-class
// sampling, target batches uniformly.
double run_adapt(const ExperimentConfig& cfg, TrainerState& state, const Dataset& src,
                 const Dataset& tgt, std::ostream& metrics);

}  // namespace reinpp
