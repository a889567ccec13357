#include <doctest.h>

#include "reinpp/backbone.hpp"
#include "reinpp/gradcheck.hpp"
#include "reinpp/rng.hpp"

using namespace reinpp;

namespace {

BackboneConfig desk_bb() { return BackboneConfig{4, 32, 4, 4, 32, 7}; }

Tensor test_image(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor img({32, 32, 3});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : img.data) v = u(rng);
    return img;
}

}  // namespace

TEST_CASE("backbone init is deterministic and frozen") {
    ParamStore a = init_frozen_backbone(desk_bb());
    ParamStore b = init_frozen_backbone(desk_bb());
    CHECK(a == b);
    for (const auto& [name, e] : a.entries()) CHECK(!e.trainable);

    BackboneConfig other = desk_bb();
    other.seed = 8;
    CHECK(!(init_frozen_backbone(other) == a));
}

TEST_CASE("backbone patch count and parameter count") {
    BackboneConfig cfg = desk_bb();
    CHECK(cfg.patches() == 64);

    const std::size_t c = cfg.dim, pd = cfg.patch * cfg.patch * 3, n = cfg.patches();
    const std::size_t per_block = 2 * c          // ln1
                                  + c * 3 * c + 3 * c  // qkv
                                  + c * c + c          // proj
                                  + 2 * c              // ln2
                                  + c * 4 * c + 4 * c  // mlp in
                                  + 4 * c * c + c;     // mlp out
    const std::size_t expect = pd * c + c + n * c + cfg.layers * per_block + 2 * c;
    CHECK(init_frozen_backbone(cfg).total_params() == expect);
}

TEST_CASE("zero injector equals plain forward and out = f_N") {
    BackboneConfig cfg = desk_bb();
    ParamStore ps = init_frozen_backbone(cfg);
    Tensor img = test_image(1);

    Tape tape;
    Binding bind(tape, ps);
    FeatureStack plain = forward_with_injection(tape, bind, cfg, img);
    FeatureStack zeroed = forward_with_injection(
        tape, bind, cfg, img, [](Tape&, std::size_t, Var) { return Var{}; });

    REQUIRE(plain.pre.size() == cfg.layers);
    const Tensor& a = tape.value(plain.out);
    const Tensor& b = tape.value(zeroed.out);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
    const Tensor& last = tape.value(plain.pre.back());
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == last.at(i));
}

TEST_CASE("constant injection at the last layer adds exactly") {
    BackboneConfig cfg = desk_bb();
    ParamStore ps = init_frozen_backbone(cfg);
    Tensor img = test_image(2);
    Tensor d = Tensor::full({cfg.patches(), cfg.dim}, 0.25);

    Tape tape;
    Binding bind(tape, ps);
    FeatureStack plain = forward_with_injection(tape, bind, cfg, img);
    FeatureStack inj = forward_with_injection(
        tape, bind, cfg, img, [&](Tape& t, std::size_t layer, Var) -> Var {
            if (layer == cfg.layers) return t.constant(d);
            return Var{};
        });

    const Tensor& a = tape.value(plain.out);
    const Tensor& b = tape.value(inj.out);
    for (std::size_t i = 0; i < a.numel(); ++i)
        CHECK(b.at(i) == doctest::Approx(a.at(i) + 0.25).epsilon(1e-15));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const Tensor& pa = tape.value(plain.pre[l]);
        const Tensor& pb = tape.value(inj.pre[l]);
        for (std::size_t i = 0; i < pa.numel(); ++i) CHECK(pa.at(i) == pb.at(i));
    }
}

TEST_CASE("forward is bitwise deterministic") {
    BackboneConfig cfg = desk_bb();
    ParamStore ps = init_frozen_backbone(cfg);
    Tensor img = test_image(3);
    auto run = [&]() {
        Tape tape;
        Binding bind(tape, ps);
        return tape.value(forward_with_injection(tape, bind, cfg, img).out);
    };
    Tensor a = run(), b = run();
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("position embeddings break patch-permutation invariance") {
    BackboneConfig cfg = desk_bb();
    ParamStore ps = init_frozen_backbone(cfg);
    Tensor img = test_image(4);

    // swap the two top-left patches of the image
    Tensor swapped = img;
    for (std::size_t y = 0; y < cfg.patch; ++y)
        for (std::size_t x = 0; x < cfg.patch; ++x)
            for (int ch = 0; ch < 3; ++ch)
                std::swap(swapped.data[(y * 32 + x) * 3 + ch],
                          swapped.data[(y * 32 + x + cfg.patch) * 3 + ch]);

    Tape tape;
    Binding bind(tape, ps);
    const Tensor a = tape.value(forward_with_injection(tape, bind, cfg, img).out);
    const Tensor b = tape.value(forward_with_injection(tape, bind, cfg, swapped).out);
    double diff = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a.at(i) - b.at(i)));
    CHECK(diff > 1e-6);
}

TEST_CASE("gradients flow through an injected delta") {
    BackboneConfig cfg = desk_bb();
    ParamStore frozen = init_frozen_backbone(cfg);
    Tensor img = test_image(5);

    std::mt19937_64 rng(6);
    ParamStore ps;
    ps.add("delta", randn({cfg.patches(), cfg.dim}, rng, 0.1), true);

    auto loss = [&](const ParamStore& p) {
        Tape tape;
        Binding bb(tape, frozen);
        Binding bind(tape, p);
        FeatureStack fs = forward_with_injection(tape, bb, cfg, img,
                                                 [&](Tape&, std::size_t layer, Var) -> Var {
                                                     if (layer == 1) return bind("delta");
                                                     return Var{};
                                                 });
        return tape.scalar_value(tape.mean(tape.mul(fs.out, fs.out)));
    };
    auto grad = [&](const ParamStore& p) {
        Tape tape;
        Binding bb(tape, frozen);
        Binding bind(tape, p);
        FeatureStack fs = forward_with_injection(tape, bb, cfg, img,
                                                 [&](Tape&, std::size_t layer, Var) -> Var {
                                                     if (layer == 1) return bind("delta");
                                                     return Var{};
                                                 });
        tape.backward(tape.mean(tape.mul(fs.out, fs.out)));
        return bind.grads();
    };
    GradReport rep = finite_diff_check(loss, grad, ps, 1e-5, 1e-4);
    CHECK(rep.pass);
    double gmax = 0;
    Tape tape;
    Binding bb(tape, frozen);
    Binding bind(tape, ps);
    FeatureStack fs = forward_with_injection(tape, bb, cfg, img,
                                             [&](Tape&, std::size_t layer, Var) -> Var {
                                                 if (layer == 1) return bind("delta");
                                                 return Var{};
                                             });
    tape.backward(tape.mean(tape.mul(fs.out, fs.out)));
    for (double v : bind.grads()["delta"].data) gmax = std::max(gmax, std::abs(v));
    CHECK(gmax > 0.0);
}

TEST_CASE("injector shape errors name the layer") {
    BackboneConfig cfg = desk_bb();
    ParamStore ps = init_frozen_backbone(cfg);
    Tape tape;
    Binding bind(tape, ps);
    try {
        forward_with_injection(tape, bind, cfg, test_image(7),
                               [](Tape& t, std::size_t layer, Var) -> Var {
                                   if (layer == 2) return t.constant(Tensor::zeros({3, 3}));
                                   return Var{};
                               });
        FAIL("expected a throw");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
}
