#include <doctest.h>

#include "reinpp/evalkit.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace reinpp;

TEST_CASE("perfect prediction fills the diagonal") {
    std::vector<std::uint16_t> gt = {0, 1, 2, 1, 0, 2, 2, 1};
    ConfusionMatrix cm = confusion(gt, gt, 3);
    CHECK(cm.total() == 8);
    CHECK(cm.at(0, 0) == 2);
    CHECK(cm.at(1, 1) == 3);
    CHECK(cm.at(2, 2) == 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (i != j) CHECK(cm.at(i, j) == 0);

    IouReport r = miou(cm);
    CHECK(r.mean == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ignored pixels contribute nothing") {
    std::vector<std::uint16_t> gt = {255, 255, 255, 255};
    std::vector<std::uint16_t> pred = {0, 1, 0, 1};
    ConfusionMatrix cm = confusion(pred, gt, 2);
    CHECK(cm.total() == 0);
    CHECK_THROWS(miou(cm));
}

TEST_CASE("a single error lands in the right cell") {
    std::vector<std::uint16_t> gt = {0, 0, 1, 1};
    std::vector<std::uint16_t> pred = {0, 1, 1, 1};
    ConfusionMatrix cm = confusion(pred, gt, 2);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 1) == 2);
    CHECK(cm.at(1, 0) == 0);
    // IoU_0 = 1/2, IoU_1 = 2/3
    IouReport r = miou(cm);
    CHECK(r.per_class[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.per_class[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));
}

TEST_CASE("hand confusion matrix gives the published ratios") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 3;
    cm.at(0, 1) = 1;
    cm.at(1, 0) = 2;
    cm.at(1, 1) = 4;
    IouReport r = miou(cm);
    CHECK(r.per_class[0] == doctest::Approx(0.5).epsilon(1e-12));       // 3/(3+1+2)
    CHECK(r.per_class[1] == doctest::Approx(4.0 / 7).epsilon(1e-12));   // 4/(4+1+2)
    CHECK(r.mean == doctest::Approx((0.5 + 4.0 / 7) / 2).epsilon(1e-12));
}

TEST_CASE("disjoint prediction scores zero for the swapped classes") {
    std::vector<std::uint16_t> gt = {0, 0, 1, 1};
    std::vector<std::uint16_t> pred = {1, 1, 0, 0};
    IouReport r = miou(confusion(pred, gt, 2));
    CHECK(r.per_class[0] == 0.0);
    CHECK(r.per_class[1] == 0.0);
    CHECK(r.mean == 0.0);
}

TEST_CASE("absent classes are excluded from the mean") {
    std::vector<std::uint16_t> gt = {0, 0, 1, 1};
    std::vector<std::uint16_t> pred = {0, 0, 1, 0};
    IouReport r = miou(confusion(pred, gt, 4));
    CHECK(std::isnan(r.per_class[2]));
    CHECK(std::isnan(r.per_class[3]));
    CHECK(r.mean == doctest::Approx((2.0 / 3 + 0.5) / 2).epsilon(1e-12));
}

TEST_CASE("simultaneous relabeling leaves the mean unchanged") {
    std::vector<std::uint16_t> gt = {0, 1, 2, 0, 1, 2, 2, 0};
    std::vector<std::uint16_t> pred = {0, 2, 2, 1, 1, 0, 2, 0};
    const double base = miou(confusion(pred, gt, 3)).mean;

    auto relabel = [](std::vector<std::uint16_t> v) {
        for (auto& x : v) x = static_cast<std::uint16_t>((x + 1) % 3);
        return v;
    };
    CHECK(miou(confusion(relabel(pred), relabel(gt), 3)).mean == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("confusion accumulates over batches") {
    std::vector<std::uint16_t> gt1 = {0, 1}, pred1 = {0, 0};
    std::vector<std::uint16_t> gt2 = {1, 1}, pred2 = {1, 0};
    ConfusionMatrix a = confusion(pred1, gt1, 2);
    a += confusion(pred2, gt2, 2);
    std::vector<std::uint16_t> gt = {0, 1, 1, 1}, pred = {0, 0, 1, 0};
    ConfusionMatrix b = confusion(pred, gt, 2);
    CHECK(a.counts == b.counts);
}

TEST_CASE("shape and range errors throw") {
    std::vector<std::uint16_t> gt = {0, 1};
    std::vector<std::uint16_t> bad = {0};
    CHECK_THROWS(confusion(bad, gt, 2));
    std::vector<std::uint16_t> range = {0, 7};
    CHECK_THROWS(confusion(range, gt, 2));
}

TEST_CASE("report files carry the summary") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "reinpp_test_report";
    fs::remove_all(dir);
    fs::create_directories(dir);

    ConfusionMatrix cm(3);
    cm.at(0, 0) = 5;
    cm.at(1, 1) = 3;
    cm.at(1, 0) = 1;
    const std::string csv = (dir / "r.csv").string(), js = (dir / "r.json").string();
    write_report(csv, js, cm);

    std::ifstream c(csv);
    std::string line;
    std::getline(c, line);
    CHECK(line == "class,iou");
    std::size_t rows = 0;
    while (std::getline(c, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3);

    std::ifstream j(js);
    std::string body((std::istreambuf_iterator<char>(j)), std::istreambuf_iterator<char>());
    CHECK(body.find("\"miou\"") != std::string::npos);
    CHECK(body.find("\"n_pixels\"") != std::string::npos);
    fs::remove_all(dir);
}
