#include "reinpp/adapt.hpp"
#include "reinpp/evalkit.hpp"
#include "reinpp/experiment.hpp"
#include "reinpp/gradcheck.hpp"
#include "reinpp/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace reinpp;

namespace {

int log_level() {
    const char* v = std::getenv("REIN_LOG_LEVEL");
    if (!v) return 1;
    const std::string s = v;
    if (s == "error") return 0;
    if (s == "debug") return 2;
    return 1;
}

void info(const std::string& msg) {
    if (log_level() >= 1) std::cout << msg << "\n";
}

struct CliOptions {
    std::string config;
    std::string out;
    std::string data;
    std::string mode;
    std::string ablate;
    std::string checkpoint;
    long long seed = -1;
    bool force = false;
};

ExperimentConfig build_config(const CliOptions& opt) {
    ExperimentConfig cfg = desk_config();
    if (!opt.config.empty()) load_config_file(cfg, opt.config);
    if (opt.seed >= 0) apply_kv(cfg, "seed", std::to_string(opt.seed));
    if (!opt.mode.empty()) apply_kv(cfg, "mode", opt.mode);
    if (!opt.data.empty()) cfg.data_dir = opt.data;
    if (!opt.out.empty()) cfg.out_dir = opt.out;
    if (!opt.ablate.empty()) {
        if (opt.ablate == "no_mix")
            cfg.adapt.use_mix = false;
        else if (opt.ablate == "no_mask")
            cfg.adapt.use_mask = false;
        else if (opt.ablate == "no_stm")
            cfg.adapt.use_stm = false;
        else
            throw std::invalid_argument("unknown ablation: " + opt.ablate);
    }
    cfg.validate();
    return cfg;
}

void require_out_dir(const ExperimentConfig& cfg) {
    if (cfg.out_dir.empty()) throw std::invalid_argument("--out (or out_dir=) is required");
    fs::create_directories(cfg.out_dir);
}

void check_compatible(const ParamStore& ckpt, const ParamStore& expect, const std::string& what) {
    for (const auto& [name, e] : expect.entries()) {
        if (!ckpt.has(name)) throw std::runtime_error(what + ": missing entry " + name);
        if (ckpt.get(name).shape != e.value.shape)
            throw std::runtime_error(what + ": shape mismatch for " + name);
    }
}

int cmd_gen_data(const CliOptions& opt, std::size_t n_source, std::size_t n_target,
                 std::uint64_t spec_seed, const std::string& shift) {
    if (opt.out.empty()) throw std::invalid_argument("--out is required");
    if (fs::exists(opt.out) && !fs::is_empty(opt.out) && !opt.force)
        throw std::invalid_argument("output directory not empty (use --force): " + opt.out);
    DomainSpec spec;
    if (shift == "night")
        spec.shift = DomainShift::night();
    else if (shift == "dusk")
        spec.shift = DomainShift::dusk();
    else if (shift == "identity")
        spec.shift = DomainShift{};
    else
        throw std::invalid_argument("unknown shift preset: " + shift);
    spec.seed = spec_seed;
    gen_pair(spec, n_source, n_target, opt.out);
    info("wrote " + std::to_string(n_source + n_target) + " samples to " + opt.out);
    return 0;
}

int cmd_train_dg(const CliOptions& opt) {
    ExperimentConfig cfg = build_config(opt);
    require_out_dir(cfg);
    if (cfg.data_dir.empty()) throw std::invalid_argument("data_dir is required");

    Dataset src = load_domain(cfg.data_dir, "source");
    Dataset tgt = load_domain(cfg.data_dir, "target");
    ParamStore model = init_model(cfg);

    std::ofstream metrics(fs::path(cfg.out_dir) / ("metrics_dg_" + mode_name(cfg.mode) + ".jsonl"));
    if (!metrics) throw std::runtime_error("cannot write metrics in " + cfg.out_dir);
    DgResult res = train_dg(cfg, src, tgt, model, metrics);

    model.save((fs::path(cfg.out_dir) / ("checkpoint_dg_" + mode_name(cfg.mode) + ".bin")).string());
    nlohmann::ordered_json js;
    js["mode"] = mode_name(cfg.mode);
    js["source_miou"] = res.source_miou * 100.0;
    js["target_miou"] = res.target_miou * 100.0;
    std::ofstream(fs::path(cfg.out_dir) / ("result_dg_" + mode_name(cfg.mode) + ".json"))
        << js.dump(2) << "\n";
    std::cout << js.dump(2) << "\n";
    return 0;
}

int cmd_adapt_da(const CliOptions& opt) {
    CliOptions o = opt;
    if (o.mode.empty()) o.mode = "rein";
    ExperimentConfig cfg = build_config(o);
    require_out_dir(cfg);
    if (cfg.data_dir.empty()) throw std::invalid_argument("data_dir is required");
    if (opt.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");

    Dataset src = load_domain(cfg.data_dir, "source");
    Dataset tgt = load_domain(cfg.data_dir, "target");

    ParamStore student = ParamStore::load(opt.checkpoint);
    check_compatible(student, init_model(cfg), "checkpoint");
    TrainerState state = init_trainer(cfg.adapt, student);

    const std::string tag = opt.ablate.empty() ? "full" : opt.ablate;
    std::ofstream metrics(fs::path(cfg.out_dir) / ("metrics_da_" + tag + ".jsonl"));
    if (!metrics) throw std::runtime_error("cannot write metrics in " + cfg.out_dir);
    const double target_miou = run_adapt(cfg, state, src, tgt, metrics);

    // only the trainable (rein + head) entries travel in the adaptation
    // checkpoint; the frozen backbone is shared with the DG checkpoint
    ParamStore light = state.student.subset(
        [&](const std::string& n) { return state.student.trainable(n); });
    light.save((fs::path(cfg.out_dir) / ("checkpoint_da_" + tag + ".bin")).string());

    nlohmann::ordered_json js;
    js["ablation"] = tag;
    js["target_miou"] = target_miou * 100.0;
    js["stm_dropped_masks"] = state.stm_dropped;
    std::ofstream(fs::path(cfg.out_dir) / ("result_da_" + tag + ".json")) << js.dump(2) << "\n";
    std::cout << js.dump(2) << "\n";
    return 0;
}

int cmd_eval(const CliOptions& opt, const std::string& domain) {
    ExperimentConfig cfg = build_config(opt);
    require_out_dir(cfg);
    if (cfg.data_dir.empty()) throw std::invalid_argument("data_dir is required");
    if (opt.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");

    ParamStore ckpt = ParamStore::load(opt.checkpoint);
    ParamStore model = init_model(cfg);
    // a trainable-only adaptation checkpoint overlays the initialized model
    for (auto& [name, e] : model.entries())
        if (ckpt.has(name)) e.value = ckpt.get(name);

    Dataset ds = load_domain(cfg.data_dir, domain);
    ConfusionMatrix cm(cfg.adapt.head.classes);
    const double m = evaluate(model, cfg, ds.eval, &cm);
    write_report((fs::path(cfg.out_dir) / ("iou_" + domain + ".csv")).string(),
                 (fs::path(cfg.out_dir) / ("iou_" + domain + ".json")).string(), cm);
    std::cout << "miou_" << domain << " " << m * 100.0 << "\n";
    return 0;
}

int cmd_param_count() {
    struct Case {
        std::size_t layers, dim;
        const char* target;
    };
    const Case cases[] = {{24, 1024, "2.99M"}, {40, 1536, "6.36M"}, {48, 3200, "24.0M"}};
    bool ok = true;
    for (const auto& c : cases) {
        ReinConfig rc;
        rc.layers = c.layers;
        rc.dim = c.dim;
        rc.tokens = 100;
        rc.rank = 16;
        rc.query_dim = 256;
        const std::size_t n = count_trainable(rc);
        const double millions = static_cast<double>(n) / 1e6;
        char rounded[32];
        std::snprintf(rounded, sizeof(rounded), millions < 10 ? "%.2fM" : "%.1fM", millions);
        const bool match = std::string(rounded) == c.target;
        ok = ok && match;
        std::cout << "N=" << c.layers << " c=" << c.dim << " -> " << n << " (" << rounded
                  << ", target " << c.target << ") " << (match ? "ok" : "MISMATCH") << "\n";
    }
    ExperimentConfig desk = desk_config();
    std::cout << "desk-L -> " << count_trainable(desk.adapt.rein) << "\n";
    return ok ? 0 : 1;
}

int cmd_verify(const CliOptions& opt) {
    int failures = 0;
    auto check = [&](bool ok, const std::string& what) {
        std::cout << (ok ? "pass " : "FAIL ") << what << "\n";
        if (!ok) ++failures;
    };

    check(cmd_param_count() == 0, "parameter-count anchors");

    // matching oracle against exhaustive permutations
    {
        bool ok = true;
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> u(0.0, 10.0);
        std::uniform_int_distribution<std::size_t> dim(1, 6);
        for (int trial = 0; trial < 200 && ok; ++trial) {
            const std::size_t n = dim(rng);
            Tensor cost({n, n});
            for (auto& v : cost.data) v = u(rng);
            const Assignment a = hungarian_assign(cost);
            std::vector<std::size_t> perm(n);
            for (std::size_t i = 0; i < n; ++i) perm[i] = i;
            double best = 1e18;
            do {
                double c = 0;
                for (std::size_t i = 0; i < n; ++i) c += cost.at(i, perm[i]);
                best = std::min(best, c);
            } while (std::next_permutation(perm.begin(), perm.end()));
            ok = std::abs(a.total_cost - best) < 1e-9;
        }
        check(ok, "hungarian permutation oracle (200 trials)");
    }

    // gradient checks through every loss on the desk configuration
    {
        ExperimentConfig cfg = desk_config();
        if (opt.seed >= 0) apply_kv(cfg, "seed", std::to_string(opt.seed));
        DomainSpec spec;
        spec.seed = cfg.adapt.seed + 5;
        const SampleRecord rec = gen_sample(spec, false, 0);
        const Tensor image = image_to_tensor(rec);
        const GroundTruthSet gt = gt_from_sample(rec);
        ParamStore model = init_model(cfg);

        auto run_check = [&](const std::string& what,
                             const std::function<Var(Tape&, Binding&, const ParamStore&)>& make) {
            auto loss_fn = [&](const ParamStore& p) {
                Tape tape;
                Binding bind(tape, p);
                return tape.scalar_value(make(tape, bind, p));
            };
            auto grad_fn = [&](const ParamStore& p) {
                Tape tape;
                Binding bind(tape, p);
                tape.backward(make(tape, bind, p));
                return bind.grads();
            };
            const GradReport rep = finite_diff_check(loss_fn, grad_fn, model, 1e-5, 1e-4);
            check(rep.pass, what + " gradients (max rel err " + std::to_string(rep.max_rel_err()) + ")");
        };

        run_check("mask-cls", [&](Tape& tape, Binding& bind, const ParamStore&) {
            return mask_cls_loss(
                tape, model_forward(tape, bind, cfg.adapt.backbone, cfg.adapt.rein, cfg.adapt.head,
                                    image, true),
                gt, cfg.adapt.head);
        });
        std::vector<std::uint16_t> labels(rec.label.begin(), rec.label.end());
        std::vector<double> w(labels.size(), 1.0);
        run_check("logit", [&](Tape& tape, Binding& bind, const ParamStore&) {
            return logit_loss(tape,
                              model_forward(tape, bind, cfg.adapt.backbone, cfg.adapt.rein,
                                            cfg.adapt.head, image, true),
                              cfg.adapt.head, labels, w);
        });
        std::vector<int> tc(cfg.adapt.head.queries, 0);
        tc.back() = static_cast<int>(cfg.adapt.head.classes);
        std::vector<std::vector<std::uint8_t>> tm(cfg.adapt.head.queries, gt[0].mask);
        run_check("instance", [&](Tape& tape, Binding& bind, const ParamStore&) {
            return instance_loss(tape,
                                 model_forward(tape, bind, cfg.adapt.backbone, cfg.adapt.rein,
                                               cfg.adapt.head, image, true),
                                 cfg.adapt.head, tc, tm);
        });

        // STM parameters through its mask-cls loss on frozen features
        ParamStore stm = init_stm(cfg.adapt.stm, 3);
        Tensor feats;
        {
            Tape tape;
            Binding bind(tape, model);
            feats = tape.value(
                forward_with_injection(tape, bind, cfg.adapt.backbone, image,
                                       make_rein_injector(bind, cfg.adapt.rein))
                    .out);
        }
        auto omasks = split_oracle_masks(rec.instances, rec.side);
        auto stm_make = [&](Tape& tape, Binding& bind) {
            StmPrediction sp = stm_forward(tape, bind, cfg.adapt.stm, tape.constant(feats), omasks);
            HeadConfig hc = cfg.adapt.head;
            hc.queries = sp.masks.size();
            MaskPredVars pred;
            pred.class_logits = sp.class_logits;
            Tensor sat({sp.masks.size(), labels.size()});
            for (std::size_t i = 0; i < sp.masks.size(); ++i)
                for (std::size_t p = 0; p < labels.size(); ++p)
                    sat.at(i, p) = sp.masks[i][p] ? 12.0 : -12.0;
            pred.mask_logits_full = tape.constant(sat);
            pred.mask_logits = pred.mask_logits_full;
            GroundTruthSet g = gt;
            if (g.size() > sp.masks.size()) g.resize(sp.masks.size());
            return mask_cls_loss(tape, pred, g, hc);
        };
        {
            auto loss_fn = [&](const ParamStore& p) {
                Tape tape;
                Binding bind(tape, p);
                return tape.scalar_value(stm_make(tape, bind));
            };
            auto grad_fn = [&](const ParamStore& p) {
                Tape tape;
                Binding bind(tape, p);
                tape.backward(stm_make(tape, bind));
                return bind.grads();
            };
            const GradReport rep = finite_diff_check(loss_fn, grad_fn, stm, 1e-5, 1e-4);
            check(rep.pass, "stm gradients (max rel err " + std::to_string(rep.max_rel_err()) + ")");
        }

        // identity at init: refined forward equals frozen forward
        {
            Tape tape;
            Binding bind(tape, model);
            Var with = model_forward(tape, bind, cfg.adapt.backbone, cfg.adapt.rein, cfg.adapt.head,
                                     image, true)
                           .class_logits;
            Var without = model_forward(tape, bind, cfg.adapt.backbone, cfg.adapt.rein,
                                        cfg.adapt.head, image, false)
                              .class_logits;
            double diff = 0;
            for (std::size_t i = 0; i < tape.value(with).numel(); ++i)
                diff = std::max(diff, std::abs(tape.value(with).at(i) - tape.value(without).at(i)));
            check(diff < 1e-12, "identity at init (max deviation " + std::to_string(diff) + ")");
        }
    }

    return failures == 0 ? 0 : 1;
}

int cmd_report(const CliOptions& opt) {
    if (opt.out.empty()) throw std::invalid_argument("--out is required");
    nlohmann::ordered_json summary = nlohmann::ordered_json::array();
    for (const auto& entry : fs::directory_iterator(opt.out)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("result_", 0) != 0 || entry.path().extension() != ".json") continue;
        std::ifstream is(entry.path());
        nlohmann::ordered_json js;
        is >> js;
        js["file"] = name;
        summary.push_back(js);
    }
    std::cout << summary.dump(2) << "\n";
    std::ofstream(fs::path(opt.out) / "report.json") << summary.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"token-refinement segmentation experiments"};
    app.require_subcommand(1);
    CliOptions opt;

    std::size_t n_source = 400, n_target = 400;
    std::uint64_t spec_seed = 0;
    std::string eval_domain = "target";
    std::string shift_preset = "night";

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opt.config, "key=value config file");
        cmd->add_option("--seed", opt.seed, "seed override");
        cmd->add_option("--out", opt.out, "output directory");
    };

    auto* gen = app.add_subcommand("gen-data", "generate the two-domain benchmark");
    gen->add_option("--out", opt.out, "output directory")->required();
    gen->add_option("--seed", opt.seed, "generator seed");
    gen->add_option("--n-source", n_source, "source sample count");
    gen->add_option("--n-target", n_target, "target sample count");
    gen->add_option("--shift", shift_preset, "night | dusk | identity");
    gen->add_flag("--force", opt.force, "overwrite existing data");

    auto* dg = app.add_subcommand("train-dg", "supervised source training");
    add_common(dg);
    dg->add_option("--data", opt.data, "dataset directory");
    dg->add_option("--mode", opt.mode, "freeze | full | rein");

    auto* da = app.add_subcommand("adapt-da", "unsupervised adaptation");
    add_common(da);
    da->add_option("--data", opt.data, "dataset directory");
    da->add_option("--checkpoint", opt.checkpoint, "source-trained checkpoint");
    da->add_option("--ablate", opt.ablate, "no_mix | no_mask | no_stm");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev);
    ev->add_option("--data", opt.data, "dataset directory");
    ev->add_option("--checkpoint", opt.checkpoint, "checkpoint to evaluate");
    ev->add_option("--domain", eval_domain, "source | target");
    ev->add_option("--mode", opt.mode, "freeze | full | rein");

    auto* ver = app.add_subcommand("verify", "run the verification suite");
    ver->add_option("--seed", opt.seed, "seed override");

    app.add_subcommand("param-count", "print trainable-parameter counts");

    auto* rep = app.add_subcommand("report", "summarize result files");
    rep->add_option("--out", opt.out, "directory with result_*.json files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(opt, n_source, n_target,
                                               opt.seed >= 0 ? opt.seed : spec_seed, shift_preset);
        if (dg->parsed()) return cmd_train_dg(opt);
        if (da->parsed()) return cmd_adapt_da(opt);
        if (ev->parsed()) return cmd_eval(opt, eval_domain);
        if (ver->parsed()) return cmd_verify(opt);
        if (app.get_subcommand("param-count")->parsed()) return cmd_param_count();
        if (rep->parsed()) return cmd_report(opt);
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        const bool io = msg.find("cannot") == 0 || msg.find("truncated") != std::string::npos;
        std::cerr << (io ? "I/O error: " : "error: ") << msg << "\n";
        return io ? 3 : 1;
    }
    return 0;
}
