#include <doctest.h>

#include "reinpp/adapt.hpp"
#include "reinpp/experiment.hpp"
#include "reinpp/rng.hpp"

#include <cmath>
#include <numeric>

using namespace reinpp;

namespace {

ExperimentConfig desk() {
    ExperimentConfig cfg = desk_config();
    cfg.mode = Mode::rein;
    return cfg;
}

std::vector<LoadedSample> make_samples(const DomainSpec& spec, bool target, std::size_t n,
                                       std::uint64_t oracle_seed) {
    std::vector<LoadedSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        LoadedSample s;
        s.rec = gen_sample(spec, target, i);
        std::mt19937_64 rng(mix_seed(oracle_seed, i));
        s.oracle = jitter_instance_map(s.rec.instances, s.rec.side, spec.oracle_jitter, rng);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_CASE("stm pools constant features to identical logits") {
    StmConfig cfg;
    ParamStore ps = init_stm(cfg, 1);
    Tape tape;
    Binding bind(tape, ps);
    Tensor f = Tensor::full({cfg.grid * cfg.grid, cfg.dim}, 0.37);

    std::vector<std::vector<std::uint8_t>> masks(3, std::vector<std::uint8_t>(cfg.image * cfg.image, 0));
    for (std::size_t p = 0; p < 256; ++p) masks[0][p] = 1;
    for (std::size_t p = 256; p < 512; ++p) masks[1][p] = 1;
    for (std::size_t p = 512; p < 1024; ++p) masks[2][p] = 1;

    StmPrediction pred = stm_forward(tape, bind, cfg, tape.constant(f), masks);
    const Tensor& lg = tape.value(pred.class_logits);
    REQUIRE(lg.rows() == 3);
    for (std::size_t i = 1; i < 3; ++i)
        for (std::size_t k = 0; k < lg.cols(); ++k)
            CHECK(lg.at(i, k) == doctest::Approx(lg.at(0, k)).epsilon(1e-12));
    CHECK(pred.dropped == 0);
    CHECK(pred.masks == masks);
}

TEST_CASE("mask pooling averages the covered region") {
    StmConfig cfg;
    // top half vs bottom half of the patch grid, two-valued features
    Tensor f({cfg.grid * cfg.grid, cfg.dim});
    for (std::size_t p = 0; p < f.rows(); ++p)
        for (std::size_t c = 0; c < cfg.dim; ++c) f.at(p, c) = p < f.rows() / 2 ? 2.0 : -3.0;

    std::vector<std::vector<std::uint8_t>> masks(2, std::vector<std::uint8_t>(cfg.image * cfg.image, 0));
    for (std::size_t p = 0; p < 512; ++p) masks[0][p] = 1;
    for (std::size_t p = 512; p < 1024; ++p) masks[1][p] = 1;

    std::vector<char> keep;
    Tensor pool = mask_pool_matrix(masks, cfg.image, cfg.grid, keep);
    REQUIRE(keep == std::vector<char>{1, 1});
    Tensor pooled = matmul(pool, f);
    for (std::size_t c = 0; c < cfg.dim; ++c) {
        CHECK(pooled.at(0, c) == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(pooled.at(1, c) == doctest::Approx(-3.0).epsilon(1e-12));
    }
}

TEST_CASE("sub-cell masks are dropped and counted") {
    StmConfig cfg;
    std::vector<std::vector<std::uint8_t>> masks(2, std::vector<std::uint8_t>(cfg.image * cfg.image, 0));
    masks[0][0] = 1;  // one pixel: covers 1/16 of its cell, below the 0.5 cut
    for (std::size_t p = 0; p < 512; ++p) masks[1][p] = 1;

    ParamStore ps = init_stm(cfg, 2);
    Tape tape;
    Binding bind(tape, ps);
    StmPrediction pred =
        stm_forward(tape, bind, cfg, tape.constant(Tensor::zeros({64, cfg.dim})), masks);
    CHECK(pred.dropped == 1);
    CHECK(tape.value(pred.class_logits).rows() == 1);
}

TEST_CASE("rare-class sampling follows the softmax rule") {
    std::mt19937_64 rng(3);

    // equal frequencies: uniform
    std::vector<double> eq = {0.25, 0.25, 0.25, 0.25};
    std::vector<std::size_t> hits(4, 0);
    for (int i = 0; i < 40000; ++i) ++hits[rcs_pick_class(eq, 0.1, rng)];
    for (auto h : hits) CHECK(std::abs(h / 40000.0 - 0.25) < 0.02);

    // huge temperature: uniform regardless of f
    std::vector<double> skew = {0.97, 0.01, 0.01, 0.01};
    hits.assign(4, 0);
    for (int i = 0; i < 40000; ++i) ++hits[rcs_pick_class(skew, 1e9, rng)];
    for (auto h : hits) CHECK(std::abs(h / 40000.0 - 0.25) < 0.02);

    // f=[0.9,0.1], T=1: P(rare) = e^0.9/(e^0.1+e^0.9)
    std::vector<double> two = {0.9, 0.1};
    std::size_t rare = 0;
    for (int i = 0; i < 200000; ++i) rare += rcs_pick_class(two, 1.0, rng) == 1;
    CHECK(std::abs(rare / 200000.0 - 0.689974) < 0.01);
}

TEST_CASE("rcs_sample falls back to uniform when the class has no images") {
    std::mt19937_64 rng(4);
    std::vector<double> freq = {0.0, 1.0};
    std::vector<std::vector<std::size_t>> by_class = {{}, {0, 1, 2}};
    for (int i = 0; i < 50; ++i) CHECK(rcs_sample(freq, by_class, 3, 0.1, rng) < 3);
}

TEST_CASE("patch mask cell counts are exact") {
    std::mt19937_64 rng(5);
    auto count_off = [](const std::vector<std::uint8_t>& m) {
        return m.size() - std::accumulate(m.begin(), m.end(), std::size_t{0});
    };
    CHECK(count_off(random_patch_mask(32, 0.0, 4, rng)) == 0);
    CHECK(count_off(random_patch_mask(32, 1.0, 4, rng)) == 1024);
    const auto half = random_patch_mask(32, 0.5, 4, rng);
    CHECK(count_off(half) == 512);  // 32 of 64 cells

    // masked cells are whole 4x4 blocks
    for (std::size_t gy = 0; gy < 8; ++gy)
        for (std::size_t gx = 0; gx < 8; ++gx) {
            std::size_t on = 0;
            for (std::size_t dy = 0; dy < 4; ++dy)
                for (std::size_t dx = 0; dx < 4; ++dx)
                    on += half[(gy * 4 + dy) * 32 + gx * 4 + dx];
            CHECK((on == 0 || on == 16));
        }
    CHECK_THROWS(random_patch_mask(32, 0.5, 5, rng));
}

TEST_CASE("class_mix provenance and forced selections") {
    DomainSpec spec;
    spec.seed = 21;
    SampleRecord s = gen_sample(spec, false, 0);
    SampleRecord t = gen_sample(spec, true, 1);
    const Tensor x_s = image_to_tensor(s), x_t = image_to_tensor(t);

    PseudoLabel pseudo;
    pseudo.argmax.assign(s.label.size(), 2);
    pseudo.confidence = 0.4;

    // all classes forced: the mix is the source sample with weight one
    std::vector<int> all;
    for (int c = 0; c < 6; ++c) all.push_back(c);
    std::mt19937_64 rng(6);
    MixResult m_all = class_mix(x_s, s.label, x_t, pseudo, rng, &all);
    for (std::size_t p = 0; p < s.label.size(); ++p) {
        CHECK(m_all.labels[p] == s.label[p]);
        CHECK(m_all.weight[p] == 1.0);
        for (int ch = 0; ch < 3; ++ch)
            CHECK(m_all.image.data[p * 3 + ch] == x_s.data[p * 3 + ch]);
    }

    // nothing selected: the target sample with pseudo labels
    std::vector<int> none;
    MixResult m_none = class_mix(x_s, s.label, x_t, pseudo, rng, &none);
    for (std::size_t p = 0; p < s.label.size(); ++p) {
        CHECK(m_none.labels[p] == 2);
        CHECK(m_none.weight[p] == 0.4);
        for (int ch = 0; ch < 3; ++ch)
            CHECK(m_none.image.data[p * 3 + ch] == x_t.data[p * 3 + ch]);
    }

    // random selection: per-pixel provenance is exact
    MixResult m = class_mix(x_s, s.label, x_t, pseudo, rng);
    for (std::size_t p = 0; p < s.label.size(); ++p) {
        const Tensor& from = m.from_source[p] ? x_s : x_t;
        for (int ch = 0; ch < 3; ++ch) CHECK(m.image.data[p * 3 + ch] == from.data[p * 3 + ch]);
        if (m.from_source[p]) {
            CHECK(m.labels[p] == s.label[p]);
            CHECK(m.weight[p] == 1.0);
        } else {
            CHECK(m.labels[p] == 2);
            CHECK(m.weight[p] == 0.4);
        }
    }
}

TEST_CASE("pseudo labels: confidence limits and determinism") {
    ExperimentConfig cfg = desk();
    ParamStore model = init_model(cfg);
    TrainerState state = init_trainer(cfg.adapt, model);
    DomainSpec spec;
    spec.seed = 22;
    const Tensor x = image_to_tensor(gen_sample(spec, true, 0));

    AdaptConfig a0 = cfg.adapt;
    a0.conf_tau = 0.0;
    CHECK(generate_pseudo(state.teacher, a0, x).confidence == 1.0);

    PseudoLabel p1 = generate_pseudo(state.teacher, cfg.adapt, x);
    PseudoLabel p2 = generate_pseudo(state.teacher, cfg.adapt, x);
    CHECK(p1.argmax == p2.argmax);
    CHECK(p1.confidence == p2.confidence);
    CHECK(p1.semantic.data == p2.semantic.data);
    CHECK(p1.classes == p2.classes);
}

TEST_CASE("fifty adaptation steps honor the frozen-backbone and EMA contracts") {
    ExperimentConfig cfg = desk();
    cfg.adapt.seed = 7;
    ParamStore model = init_model(cfg);
    TrainerState state = init_trainer(cfg.adapt, model);

    DomainSpec spec;
    spec.seed = 23;
    auto src = make_samples(spec, false, 6, 100);
    auto tgt = make_samples(spec, true, 6, 200);

    const ParamStore backbone0 = state.student.subset_prefix("backbone.");
    std::mt19937_64 pick(8);
    for (int it = 0; it < 50; ++it) {
        // expected teacher after this step: lambda*teacher + (1-lambda)*student'
        const ParamStore teacher_before = state.teacher;

        std::vector<const LoadedSample*> sb, tb;
        for (std::size_t b = 0; b < cfg.adapt.batch; ++b) {
            sb.push_back(&src[pick() % src.size()]);
            tb.push_back(&tgt[pick() % tgt.size()]);
        }
        LossBreakdown bd = train_step(state, sb, tb);

        const double expect = bd.src + cfg.adapt.alpha * bd.mix + cfg.adapt.beta * bd.mask +
                              bd.src_stm + cfg.adapt.alpha * bd.mix_stm +
                              cfg.adapt.beta * bd.mask_stm;
        CHECK(std::abs(bd.total - expect) <= 1e-12);

        const double lam = cfg.adapt.ema_momentum;
        for (const auto& [name, e] : state.teacher.entries()) {
            if (!state.student.entries().at(name).trainable) continue;
            const Tensor& tb_ = teacher_before.get(name);
            const Tensor& sa = state.student.get(name);
            for (std::size_t i = 0; i < e.value.numel(); ++i) {
                const double want = lam * tb_.at(i) + (1.0 - lam) * sa.at(i);
                CHECK(std::abs(e.value.at(i) - want) <= 1e-12);
            }
        }
    }
    CHECK(state.iteration == 50);
    const ParamStore backbone_now = state.student.subset_prefix("backbone.");
    CHECK(backbone_now == backbone0);
}

TEST_CASE("alpha=beta=0 matches a run with the branches disabled") {
    DomainSpec spec;
    spec.seed = 24;
    auto src = make_samples(spec, false, 4, 300);
    auto tgt = make_samples(spec, true, 4, 400);

    auto run = [&](bool branches_on) {
        ExperimentConfig cfg = desk();
        cfg.adapt.seed = 9;
        cfg.adapt.alpha = 0.0;
        cfg.adapt.beta = 0.0;
        cfg.adapt.use_mix = branches_on;
        cfg.adapt.use_mask = branches_on;
        ParamStore model = init_model(cfg);
        TrainerState state = init_trainer(cfg.adapt, model);
        for (int it = 0; it < 3; ++it) {
            std::vector<const LoadedSample*> sb = {&src[0], &src[1], &src[2], &src[3]};
            std::vector<const LoadedSample*> tb = {&tgt[0], &tgt[1], &tgt[2], &tgt[3]};
            train_step(state, sb, tb);
        }
        return state;
    };
    TrainerState on = run(true), off = run(false);
    CHECK(on.student == off.student);
    CHECK(on.teacher == off.teacher);
}

TEST_CASE("identical seeds give identical loss streams") {
    DomainSpec spec;
    spec.seed = 25;
    auto src = make_samples(spec, false, 4, 500);
    auto tgt = make_samples(spec, true, 4, 600);

    auto run = [&]() {
        ExperimentConfig cfg = desk();
        cfg.adapt.seed = 11;
        ParamStore model = init_model(cfg);
        TrainerState state = init_trainer(cfg.adapt, model);
        std::vector<LossBreakdown> bds;
        for (int it = 0; it < 3; ++it) {
            std::vector<const LoadedSample*> sb = {&src[it], &src[it + 1], &src[0], &src[1]};
            std::vector<const LoadedSample*> tb = {&tgt[it], &tgt[it + 1], &tgt[0], &tgt[1]};
            bds.push_back(train_step(state, sb, tb));
        }
        return std::make_pair(state, bds);
    };
    auto [s1, b1] = run();
    auto [s2, b2] = run();
    CHECK(s1.student == s2.student);
    for (std::size_t i = 0; i < b1.size(); ++i) {
        CHECK(b1[i].total == b2[i].total);
        CHECK(b1[i].src == b2[i].src);
        CHECK(b1[i].mask == b2[i].mask);
    }
}

TEST_CASE("masking more of the image cannot make consistency easier") {
    DomainSpec spec;
    spec.seed = 26;
    auto src = make_samples(spec, false, 4, 700);
    auto tgt = make_samples(spec, true, 4, 800);

    double prev = -1.0;
    for (double rho : {0.0, 0.25, 0.5}) {
        double mean = 0.0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            ExperimentConfig cfg = desk();
            cfg.adapt.seed = 100 + seed;
            cfg.adapt.mask_ratio = rho;
            ParamStore model = init_model(cfg);
            TrainerState state = init_trainer(cfg.adapt, model);
            std::vector<const LoadedSample*> sb = {&src[0], &src[1], &src[2], &src[3]};
            std::vector<const LoadedSample*> tb = {&tgt[0], &tgt[1], &tgt[2], &tgt[3]};
            mean += train_step(state, sb, tb).mask / 20.0;
        }
        CHECK(mean >= prev);
        prev = mean;
    }
}
