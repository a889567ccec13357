#include "reinpp/experiment.hpp"

#include "reinpp/rng.hpp"

#include <json.hpp>

#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace reinpp {

Mode parse_mode(const std::string& s) {
    if (s == "freeze") return Mode::freeze;
    if (s == "full") return Mode::full;
    if (s == "rein") return Mode::rein;
    throw std::invalid_argument("unknown mode: " + s);
}

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::freeze: return "freeze";
        case Mode::full: return "full";
        default: return "rein";
    }
}

void ExperimentConfig::validate() const {
    adapt.validate();
    if (lr_backbone <= 0 || lr_head <= 0) throw std::invalid_argument("learning rates must be positive");
    if (adapt.rein.use_link && adapt.rein.tokens != adapt.head.queries)
        throw std::invalid_argument("query linking needs token count equal to query count");
}

ExperimentConfig desk_config() {
    ExperimentConfig cfg;
    cfg.adapt.backbone = BackboneConfig{4, 32, 4, 4, 32, 0};
    cfg.adapt.rein = ReinConfig{};
    cfg.adapt.head = HeadConfig{};
    cfg.adapt.stm = StmConfig{};
    cfg.adapt.optim.lr = 1e-4;
    return cfg;
}

namespace {

bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw std::invalid_argument("bad boolean value: " + v);
}

}  // namespace

void apply_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    AdaptConfig& a = cfg.adapt;
    if (key == "seed") {
        a.seed = std::stoull(value);
        a.backbone.seed = a.seed;
    } else if (key == "mode") {
        cfg.mode = parse_mode(value);
    } else if (key == "dg_iterations") {
        cfg.dg_iterations = std::stoull(value);
    } else if (key == "da_iterations") {
        cfg.da_iterations = std::stoull(value);
    } else if (key == "batch") {
        a.batch = std::stoull(value);
    } else if (key == "alpha") {
        a.alpha = std::stod(value);
    } else if (key == "beta") {
        a.beta = std::stod(value);
    } else if (key == "ema_momentum") {
        a.ema_momentum = std::stod(value);
    } else if (key == "conf_tau") {
        a.conf_tau = std::stod(value);
    } else if (key == "mask_ratio") {
        a.mask_ratio = std::stod(value);
    } else if (key == "mask_cell") {
        a.mask_cell = std::stoull(value);
    } else if (key == "rcs_temperature") {
        a.rcs_temperature = std::stod(value);
    } else if (key == "lr_backbone") {
        cfg.lr_backbone = std::stod(value);
    } else if (key == "lr_head") {
        cfg.lr_head = std::stod(value);
        a.optim.lr = cfg.lr_head;
    } else if (key == "weight_decay") {
        a.optim.weight_decay = std::stod(value);
    } else if (key == "data_dir") {
        cfg.data_dir = value;
    } else if (key == "out_dir") {
        cfg.out_dir = value;
    } else if (key == "tokens") {
        a.rein.tokens = std::stoull(value);
    } else if (key == "rank") {
        a.rein.rank = std::stoull(value);
    } else if (key == "query_dim") {
        a.rein.query_dim = std::stoull(value);
        a.head.query_dim = a.rein.query_dim;
    } else if (key == "queries") {
        a.head.queries = std::stoull(value);
    } else if (key == "classes") {
        a.head.classes = std::stoull(value);
        a.stm.classes = a.head.classes;
    } else if (key == "layers") {
        a.backbone.layers = std::stoull(value);
        a.rein.layers = a.backbone.layers;
    } else if (key == "dim") {
        a.backbone.dim = std::stoull(value);
        a.rein.dim = a.backbone.dim;
        a.head.dim = a.backbone.dim;
        a.stm.dim = a.backbone.dim;
    } else if (key == "heads") {
        a.backbone.heads = std::stoull(value);
    } else if (key == "rein_heads") {
        a.rein.heads = std::stoull(value);
    } else if (key == "patch") {
        a.backbone.patch = std::stoull(value);
    } else if (key == "image") {
        a.backbone.image = std::stoull(value);
        a.head.image = a.backbone.image;
        a.stm.image = a.backbone.image;
    } else if (key == "use_link") {
        a.rein.use_link = parse_bool(value);
    } else if (key == "use_lowrank") {
        a.rein.use_lowrank = parse_bool(value);
    } else if (key == "use_multihead") {
        a.rein.use_multihead = parse_bool(value);
    } else if (key == "use_gelu") {
        a.rein.use_gelu = parse_bool(value);
    } else if (key == "use_mix") {
        a.use_mix = parse_bool(value);
    } else if (key == "use_mask") {
        a.use_mask = parse_bool(value);
    } else if (key == "use_stm") {
        a.use_stm = parse_bool(value);
    } else {
        throw std::invalid_argument("unknown config key: " + key);
    }
}

void load_config_file(ExperimentConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read config " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::string trimmed;
        for (char c : line)
            if (!isspace(static_cast<unsigned char>(c))) trimmed += c;
        if (trimmed.empty()) continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos) {
            std::ostringstream os;
            os << path << ":" << lineno << ": expected key=value";
            throw std::invalid_argument(os.str());
        }
        apply_kv(cfg, trimmed.substr(0, eq), trimmed.substr(eq + 1));
    }
}

ParamStore init_model(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::uint64_t seed = cfg.adapt.seed;
    ParamStore model = init_frozen_backbone(cfg.adapt.backbone);
    if (cfg.mode == Mode::full)
        for (auto& [name, e] : model.entries()) e.trainable = true;
    const ParamStore head = init_head(cfg.adapt.head, seed);
    for (const auto& [name, e] : head.entries()) model.add(name, e.value, e.trainable);
    if (cfg.use_rein()) {
        const ParamStore rein = init_rein(cfg.adapt.rein, seed);
        for (const auto& [name, e] : rein.entries()) model.add(name, e.value, e.trainable);
    }
    return model;
}

double evaluate(const ParamStore& model, const ExperimentConfig& cfg,
                const std::vector<LoadedSample>& samples, ConfusionMatrix* cm_out) {
    ConfusionMatrix cm(cfg.adapt.head.classes);
    for (const auto& s : samples) {
        const auto pred = predict_labels(model, cfg.adapt.backbone, cfg.adapt.rein, cfg.adapt.head,
                                         image_to_tensor(s.rec), cfg.use_rein());
        const std::vector<std::uint16_t> gt(s.rec.label.begin(), s.rec.label.end());
        cm += confusion(pred, gt, cfg.adapt.head.classes);
    }
    if (cm_out) *cm_out = cm;
    return miou(cm).mean;
}

DgResult train_dg(const ExperimentConfig& cfg, const Dataset& src, const Dataset& tgt,
                  ParamStore& model, std::ostream& metrics) {
    cfg.validate();
    if (src.train.empty()) throw std::invalid_argument("train_dg: empty source train split");
    const AdaptConfig& a = cfg.adapt;

    const auto freq = class_pixel_freq(src.train, a.head.classes);
    const auto by_class = index_images_by_class(src.train, a.head.classes);
    std::mt19937_64 samp(mix_seed(a.seed, 0x64672d73ULL));

    AdamMoments moments;
    AdamConfig opt = a.optim;
    opt.lr = cfg.lr_head;
    const auto lr_for = [&](const std::string& name) {
        return name.rfind("backbone.", 0) == 0 ? cfg.lr_backbone : cfg.lr_head;
    };

    for (std::size_t it = 0; it < cfg.dg_iterations; ++it) {
        GradMap grads;
        double loss_sum = 0.0;
        const double inv_b = 1.0 / static_cast<double>(a.batch);
        for (std::size_t b = 0; b < a.batch; ++b) {
            const auto& s = src.train[rcs_sample(freq, by_class, src.train.size(),
                                                 a.rcs_temperature, samp)];
            Tape tape;
            Binding bind(tape, model);
            MaskPredVars pred = model_forward(tape, bind, a.backbone, a.rein, a.head,
                                              image_to_tensor(s.rec), cfg.use_rein());
            Var loss = mask_cls_loss(tape, pred, gt_from_sample(s.rec), a.head);
            tape.backward(loss);
            loss_sum += tape.scalar_value(loss) * inv_b;
            grad_accumulate(grads, bind.grads(), inv_b);
        }
        if (!std::isfinite(loss_sum)) {
            std::ostringstream os;
            os << "train_dg: non-finite loss at iteration " << it;
            throw std::runtime_error(os.str());
        }
        adamw_step(model, grads, moments, opt, lr_for);

        nlohmann::ordered_json js;
        js["iter"] = it;
        js["loss"] = loss_sum;
        metrics << js.dump() << "\n";
    }

    DgResult res;
    res.source_miou = evaluate(model, cfg, src.eval);
    res.target_miou = evaluate(model, cfg, tgt.eval);
    return res;
}

double run_adapt(const ExperimentConfig& cfg, TrainerState& state, const Dataset& src,
                 const Dataset& tgt, std::ostream& metrics) {
    cfg.validate();
    if (cfg.mode != Mode::rein) throw std::invalid_argument("run_adapt: adaptation requires mode=rein");
    if (src.train.empty() || tgt.train.empty())
        throw std::invalid_argument("run_adapt: empty train split");
    const AdaptConfig& a = cfg.adapt;

    const auto freq = class_pixel_freq(src.train, a.head.classes);
    const auto by_class = index_images_by_class(src.train, a.head.classes);
    std::mt19937_64 samp(mix_seed(a.seed, 0x64612d73ULL));

    for (std::size_t it = 0; it < cfg.da_iterations; ++it) {
        std::vector<const LoadedSample*> sb, tb;
        for (std::size_t b = 0; b < a.batch; ++b) {
            sb.push_back(&src.train[rcs_sample(freq, by_class, src.train.size(),
                                               a.rcs_temperature, samp)]);
            tb.push_back(&tgt.train[std::uniform_int_distribution<std::size_t>(
                0, tgt.train.size() - 1)(samp)]);
        }
        const LossBreakdown bd = train_step(state, sb, tb);

        nlohmann::ordered_json js;
        js["iter"] = it;
        js["L_src"] = bd.src;
        js["L_mix"] = bd.mix;
        js["L_mask"] = bd.mask;
        js["L_src_stm"] = bd.src_stm;
        js["L_mix_stm"] = bd.mix_stm;
        js["L_mask_stm"] = bd.mask_stm;
        js["total"] = bd.total;
        js["conf"] = bd.conf;
        metrics << js.dump() << "\n";
    }
    return evaluate(state.student, cfg, tgt.eval);
}

}  // namespace reinpp
