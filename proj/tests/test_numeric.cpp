#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "reinpp/binding.hpp"
#include "reinpp/gradcheck.hpp"
#include "reinpp/hungarian.hpp"
#include "reinpp/optim.hpp"
#include "reinpp/rng.hpp"
#include "reinpp/tape.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace reinpp;

TEST_CASE("matmul against hand products") {
    Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::matrix(3, 2, {7, 8, 9, 10, 11, 12});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == doctest::Approx(58).epsilon(1e-12));
    CHECK(c.at(1, 1) == doctest::Approx(154).epsilon(1e-12));

    Tensor ct = matmul(b, a, true, true);  // (A*B)^T = B^T A^T
    CHECK(ct.at(0, 1) == doctest::Approx(c.at(1, 0)).epsilon(1e-12));
}

TEST_CASE("hungarian single cell and 2x2") {
    Assignment a = hungarian_assign(Tensor::matrix(1, 1, {0.0}));
    CHECK(a.col_of_row == std::vector<std::size_t>{0});
    CHECK(a.total_cost == 0.0);

    Assignment b = hungarian_assign(Tensor::matrix(2, 2, {1, 2, 2, 1}));
    CHECK(b.total_cost == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(b.col_of_row == std::vector<std::size_t>{0, 1});
}

TEST_CASE("hungarian equals exhaustive minimum, rectangular included") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int trial = 0; trial < 220; ++trial) {
        std::uniform_int_distribution<std::size_t> ad(1, 7);
        const std::size_t rows = ad(rng);
        std::uniform_int_distribution<std::size_t> bd(rows, 7);
        const std::size_t cols = bd(rng);
        Tensor cost({rows, cols});
        for (auto& v : cost.data) v = u(rng);

        Assignment got = hungarian_assign(cost);
        // assignment is injective and its cost sums the selected cells
        std::vector<char> used(cols, 0);
        double sum = 0;
        for (std::size_t i = 0; i < rows; ++i) {
            CHECK(!used[got.col_of_row[i]]);
            used[got.col_of_row[i]] = 1;
            sum += cost.at(i, got.col_of_row[i]);
        }
        CHECK(got.total_cost == doctest::Approx(sum).epsilon(1e-12));

        std::vector<std::size_t> perm(cols);
        for (std::size_t i = 0; i < cols; ++i) perm[i] = i;
        double best = 1e100;
        do {
            double c = 0;
            for (std::size_t i = 0; i < rows; ++i) c += cost.at(i, perm[i]);
            best = std::min(best, c);
        } while (std::next_permutation(perm.begin(), perm.end()));
        CHECK(got.total_cost == doctest::Approx(best).epsilon(1e-9));
    }
}

TEST_CASE("hungarian rejects bad input") {
    Tensor nan_cost = Tensor::matrix(1, 1, {std::nan("")});
    CHECK_THROWS(hungarian_assign(nan_cost));
    CHECK_THROWS(hungarian_assign(Tensor::matrix(2, 1, {1, 2})));
}

namespace {
ParamStore two_entry_store() {
    ParamStore ps;
    ps.add("a", Tensor::row({1.0, 2.0}), true);
    ps.add("b", Tensor::row({3.0}), false);
    return ps;
}
}  // namespace

TEST_CASE("ema endpoints and scalar value") {
    ParamStore teacher = two_entry_store();
    ParamStore student = two_entry_store();
    student.set("a", Tensor::row({0.0, 0.0}));

    ParamStore t1 = teacher;
    ema_update(t1, student, 1.0);
    CHECK(t1 == teacher);

    ParamStore t0 = teacher;
    ema_update(t0, student, 0.0);
    CHECK(t0.get("a").at(0) == 0.0);

    ParamStore ts;
    ts.add("x", Tensor::scalar(1.0), true);
    ParamStore ss;
    ss.add("x", Tensor::scalar(0.0), true);
    ema_update(ts, ss, 0.999);
    CHECK(ts.get("x").at(0) == doctest::Approx(0.999).epsilon(1e-15));
}

TEST_CASE("ema applied twice equals squared-momentum mixing") {
    std::mt19937_64 rng(3);
    ParamStore teacher, student;
    teacher.add("w", randn({4, 3}, rng, 1.0), true);
    student.add("w", randn({4, 3}, rng, 1.0), true);

    const double lam = 0.9;
    ParamStore twice = teacher;
    ema_update(twice, student, lam);
    ema_update(twice, student, lam);

    ParamStore once = teacher;
    ema_update(once, student, lam * lam);
    for (std::size_t i = 0; i < 12; ++i)
        CHECK(twice.get("w").at(i) == doctest::Approx(once.get("w").at(i)).epsilon(1e-12));
}

TEST_CASE("ema rejects mismatched stores") {
    ParamStore teacher = two_entry_store();
    ParamStore student;
    student.add("a", Tensor::row({1.0, 2.0}), true);
    CHECK_THROWS(ema_update(teacher, student, 0.5));
}

TEST_CASE("adamw first step matches hand evaluation") {
    ParamStore ps;
    ps.add("w", Tensor::scalar(1.0), true);
    GradMap g;
    g["w"] = Tensor::scalar(1.0);
    AdamMoments mom;
    AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    adamw_step(ps, g, mom, cfg);
    // m_hat = 1, v_hat = 1 after bias correction
    CHECK(ps.get("w").at(0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adamw freeze and zero-lr contracts") {
    ParamStore ps;
    ps.add("w", Tensor::scalar(2.0), false);
    ps.add("v", Tensor::scalar(2.0), true);
    GradMap g;
    g["w"] = Tensor::scalar(5.0);
    g["v"] = Tensor::scalar(5.0);
    AdamMoments mom;
    AdamConfig cfg;
    cfg.lr = 0.0;
    cfg.weight_decay = 0.0;
    adamw_step(ps, g, mom, cfg);
    CHECK(ps.get("w").at(0) == 2.0);
    CHECK(ps.get("v").at(0) == 2.0);

    cfg.lr = 0.1;
    adamw_step(ps, g, mom, cfg);
    CHECK(ps.get("w").at(0) == 2.0);  // frozen stays put
    CHECK(ps.get("v").at(0) < 2.0);
}

TEST_CASE("adamw rejects non-finite gradients by name") {
    ParamStore ps;
    ps.add("bad.weight", Tensor::scalar(0.0), true);
    GradMap g;
    g["bad.weight"] = Tensor::scalar(std::nan(""));
    AdamMoments mom;
    try {
        adamw_step(ps, g, mom, AdamConfig{});
        FAIL("expected a throw");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("bad.weight") != std::string::npos);
    }
}

TEST_CASE("checkpoint round-trip is bitwise") {
    std::mt19937_64 rng(9);
    ParamStore ps;
    ps.add("alpha", randn({3, 5}, rng, 1.0), true);
    ps.add("beta", randn({7}, rng, 1.0), false);
    const std::string path = (std::filesystem::temp_directory_path() / "ck_test.bin").string();
    ps.save(path);
    ParamStore back = ParamStore::load(path);
    CHECK(back == ps);
    CHECK(back.trainable("alpha"));
    CHECK(!back.trainable("beta"));
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint reader rejects unknown magic") {
    const std::string path = (std::filesystem::temp_directory_path() / "ck_bad.bin").string();
    std::ofstream(path, std::ios::binary) << "NOPE!junkjunk";
    CHECK_THROWS(ParamStore::load(path));
    std::filesystem::remove(path);
}

TEST_CASE("param store order is lexicographic and shapes are fixed") {
    ParamStore ps;
    ps.add("zz", Tensor::scalar(1.0), true);
    ps.add("aa", Tensor::scalar(2.0), true);
    CHECK(ps.entries().begin()->first == "aa");
    CHECK_THROWS(ps.set("aa", Tensor::row({1.0, 2.0})));
    CHECK_THROWS(ps.add("aa", Tensor::scalar(0.0), true));
}

TEST_CASE("finite differences are exact on a quadratic") {
    ParamStore ps;
    ps.add("x", Tensor::scalar(3.0), true);
    ps.add("frozen", Tensor::scalar(1.0), false);
    auto loss = [](const ParamStore& p) { return p.get("x").at(0) * p.get("x").at(0); };
    auto grad = [](const ParamStore& p) {
        GradMap g;
        g["x"] = Tensor::scalar(2.0 * p.get("x").at(0));
        return g;
    };
    GradReport rep = finite_diff_check(loss, grad, ps, 1e-3, 1e-9);
    CHECK(rep.pass);
    REQUIRE(rep.items.size() == 1);  // frozen entry absent
    CHECK(rep.items[0].name == "x");
    CHECK(rep.items[0].max_rel_err < 1e-10);
}

TEST_CASE("finite differences flag a wrong gradient") {
    ParamStore ps;
    ps.add("x", Tensor::scalar(2.0), true);
    auto loss = [](const ParamStore& p) { return p.get("x").at(0) * p.get("x").at(0); };
    auto grad = [](const ParamStore&) {
        GradMap g;
        g["x"] = Tensor::scalar(1.0);
        return g;
    };
    CHECK(!finite_diff_check(loss, grad, ps, 1e-5, 1e-4).pass);
}

TEST_CASE("tape gradients for core operations") {
    std::mt19937_64 rng(17);
    ParamStore ps;
    ps.add("a", randn({3, 4}, rng, 1.0), true);
    ps.add("b", randn({4, 2}, rng, 1.0), true);
    ps.add("bias", randn({2}, rng, 1.0), true);
    ps.add("g", Tensor::full({4}, 1.1), true);
    ps.add("be", Tensor::full({4}, -0.2), true);

    auto make = [](Tape& tape, Binding& bind) {
        Var x = tape.layernorm_rows(bind("a"), bind("g"), bind("be"));
        Var y = tape.add_row_bias(tape.matmul(x, bind("b")), bind("bias"));
        Var z = tape.gelu(tape.softmax_rows(y, 0.7));
        Var w = tape.concat_cols({tape.sigmoid(z), tape.softplus(z)});
        Var l = tape.mean(tape.mul(w, w));
        Var extra = tape.sum(tape.log(tape.add_const(tape.sigmoid(tape.slice_cols(w, 0, 1)), 0.1)));
        return tape.add(l, tape.scale(extra, 0.01));
    };
    auto loss = [&](const ParamStore& p) {
        Tape tape;
        Binding bind(tape, p);
        return tape.scalar_value(make(tape, bind));
    };
    auto grad = [&](const ParamStore& p) {
        Tape tape;
        Binding bind(tape, p);
        tape.backward(make(tape, bind));
        return bind.grads();
    };
    CHECK(finite_diff_check(loss, grad, ps, 1e-5, 1e-4).pass);
}

TEST_CASE("tape maximum, div_rows, log_softmax gradients") {
    std::mt19937_64 rng(23);
    ParamStore ps;
    ps.add("p", randn({4, 5}, rng, 1.0), true);
    ps.add("q", randn({4, 5}, rng, 1.0), true);

    auto make = [](Tape& tape, Binding& bind) {
        Var m = tape.maximum(bind("p"), bind("q"));
        Var ls = tape.log_softmax_rows(m);
        Var r = tape.row_sum(tape.sigmoid(bind("p")));
        Var d = tape.div_rows(tape.add_const(ls, 3.0), r);
        return tape.mean(tape.sub(d, tape.scale(bind("q"), 0.3)));
    };
    auto loss = [&](const ParamStore& p) {
        Tape tape;
        Binding bind(tape, p);
        return tape.scalar_value(make(tape, bind));
    };
    auto grad = [&](const ParamStore& p) {
        Tape tape;
        Binding bind(tape, p);
        tape.backward(make(tape, bind));
        return bind.grads();
    };
    CHECK(finite_diff_check(loss, grad, ps, 1e-5, 1e-4).pass);
}

TEST_CASE("grad_accumulate sums with coefficients") {
    GradMap into;
    GradMap from;
    from["w"] = Tensor::row({1.0, 2.0});
    grad_accumulate(into, from, 0.5);
    grad_accumulate(into, from, 2.0);
    CHECK(into["w"].at(0) == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(into["w"].at(1) == doctest::Approx(5.0).epsilon(1e-15));
}
