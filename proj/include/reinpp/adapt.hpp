#pragma once

#include "reinpp/backbone.hpp"
#include "reinpp/head.hpp"
#include "reinpp/optim.hpp"
#include "reinpp/rein.hpp"
#include "reinpp/stm.hpp"
#include "reinpp/synthdata.hpp"

#include <random>

namespace reinpp {

struct AdaptConfig {
    BackboneConfig backbone;
    ReinConfig rein;
    HeadConfig head;
    StmConfig stm;
    double alpha = 1.0;
    double beta = 1.0;
    double ema_momentum = 0.999;
    double conf_tau = 0.968;
    double mask_ratio = 0.5;
    std::size_t mask_cell = 4;
    double rcs_temperature = 0.1;
    AdamConfig optim;
    std::size_t batch = 4;
    bool use_mix = true;
    bool use_mask = true;
    bool use_stm = true;
    std::uint64_t seed = 0;

    void validate() const;
};

// Student and teacher share names; the teacher carries no optimizer state and
// its entries are all frozen. STM trains in the same step from its own store.
struct TrainerState {
    AdaptConfig cfg;
    ParamStore student;  // backbone.* frozen, rein.* + head.* trainable
    ParamStore teacher;
    ParamStore stm;
    AdamMoments moments;
    AdamMoments stm_moments;
    std::size_t iteration = 0;
    std::size_t stm_dropped = 0;
};

// Teacher starts as a copy of the (source-trained) student.
TrainerState init_trainer(const AdaptConfig& cfg, const ParamStore& student);

struct PseudoLabel {
    std::vector<int> classes;           // per query, K = no-object
    Tensor features;                    // (n, c) teacher backbone output
    Tensor mask_probs;                  // (N_q, HW) sigmoid
    Tensor semantic;                    // (HW, K) eps-normalized
    std::vector<std::uint16_t> argmax;  // HW
    double confidence = 0.0;
};

struct LossBreakdown {
    double src = 0, mix = 0, mask = 0;
    double src_stm = 0, mix_stm = 0, mask_stm = 0;
    double total = 0;
    double conf = 0;
};

// Full model graph: backbone with optional token refinement, then the head
// (token-linked queries added when the rein link is on).
MaskPredVars model_forward(Tape& tape, Binding& params, const BackboneConfig& bb,
                           const ReinConfig& rein, const HeadConfig& head, const Tensor& image,
                           bool use_rein);

Tensor image_to_tensor(const SampleRecord& rec);

// One instance per id present in the instance map, background included as
// class 0; instance class read from the label map.
GroundTruthSet gt_from_sample(const SampleRecord& rec);

// Per-pixel argmax of the aggregated semantics; gradient-free.
std::vector<std::uint16_t> predict_labels(const ParamStore& params, const BackboneConfig& bb,
                                          const ReinConfig& rein, const HeadConfig& head,
                                          const Tensor& image, bool use_rein);

// Gradient-free teacher forward; deterministic given (teacher, image).
PseudoLabel generate_pseudo(const ParamStore& teacher, const AdaptConfig& cfg,
                            const Tensor& image);

struct MixResult {
    Tensor image;
    std::vector<std::uint16_t> labels;
    std::vector<double> weight;
    std::vector<char> from_source;  // per pixel
};

// Paste ceil(|C|/2) of the classes present in y_s onto the target image.
// forced_classes overrides the random selection (tests).
MixResult class_mix(const Tensor& x_s, const std::vector<std::uint8_t>& y_s, const Tensor& x_t,
                    const PseudoLabel& pseudo, std::mt19937_64& rng,
                    const std::vector<int>* forced_classes = nullptr);

// Exactly floor(ratio * cells) patch cells zeroed, chosen uniformly.
std::vector<std::uint8_t> random_patch_mask(std::size_t side, double ratio, std::size_t cell,
                                            std::mt19937_64& rng);

// P(c) proportional to exp((1 - freq[c]) / temperature).
std::size_t rcs_pick_class(const std::vector<double>& freq, double temperature,
                           std::mt19937_64& rng);

// Class draw, then a uniform image among those containing it; uniform
// fallback over n_images when the class has no images.
std::size_t rcs_sample(const std::vector<double>& freq,
                       const std::vector<std::vector<std::size_t>>& images_with_class,
                       std::size_t n_images, double temperature, std::mt19937_64& rng);

std::vector<double> class_pixel_freq(const std::vector<LoadedSample>& samples,
                                     std::size_t classes);
std::vector<std::vector<std::size_t>> index_images_by_class(
    const std::vector<LoadedSample>& samples, std::size_t classes);

// One optimizer step over student + STM from all six branch losses, then the
// EMA teacher update.
LossBreakdown train_step(TrainerState& state, const std::vector<const LoadedSample*>& source,
                         const std::vector<const LoadedSample*>& target);

}  // namespace reinpp
