#include <doctest.h>

#include "reinpp/synthdata.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

using namespace reinpp;
namespace fs = std::filesystem;

namespace {

DomainSpec base_spec(std::uint64_t seed = 5) {
    DomainSpec s;
    s.seed = seed;
    return s;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("reinpp_test_" + tag);
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("samples are deterministic in (spec, domain, index)") {
    DomainSpec spec = base_spec();
    for (bool dom : {false, true}) {
        SampleRecord a = gen_sample(spec, dom, 3);
        SampleRecord b = gen_sample(spec, dom, 3);
        CHECK(a.image == b.image);
        CHECK(a.label == b.label);
        CHECK(a.instances == b.instances);
    }
    SampleRecord a = gen_sample(spec, false, 3);
    SampleRecord c = gen_sample(spec, false, 4);
    CHECK(a.image != c.image);
}

TEST_CASE("identity shift with paired geometry reproduces the source domain") {
    DomainSpec spec = base_spec(9);
    spec.shift = DomainShift{};
    spec.paired_geometry = true;
    REQUIRE(spec.shift.is_identity());
    for (std::size_t i = 0; i < 5; ++i) {
        SampleRecord s = gen_sample(spec, false, i);
        SampleRecord t = gen_sample(spec, true, i);
        CHECK(s.image == t.image);
        CHECK(s.label == t.label);
        CHECK(s.instances == t.instances);
    }
}

TEST_CASE("night shift changes appearance but not labels") {
    DomainSpec spec = base_spec(10);
    spec.paired_geometry = true;
    double diff = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        SampleRecord s = gen_sample(spec, false, i);
        SampleRecord t = gen_sample(spec, true, i);
        CHECK(s.label == t.label);
        CHECK(s.instances == t.instances);
        for (std::size_t j = 0; j < s.image.size(); ++j) {
            diff += std::abs(static_cast<double>(s.image[j]) - static_cast<double>(t.image[j]));
            ++n;
        }
    }
    CHECK(diff / static_cast<double>(n) > 10.0);
}

TEST_CASE("netpbm round-trips are bit exact") {
    TempDir tmp("netpbm");
    fs::create_directories(tmp.path);
    SampleRecord s = gen_sample(base_spec(11), true, 0);

    const std::string ppm = (tmp.path / "a.ppm").string();
    write_ppm(ppm, s.image, s.side);
    std::size_t side = 0;
    CHECK(read_ppm(ppm, side) == s.image);
    CHECK(side == s.side);

    const std::string pgm = (tmp.path / "a.pgm").string();
    write_pgm8(pgm, s.label, s.side);
    CHECK(read_pgm8(pgm, side) == s.label);

    const std::string pgm16 = (tmp.path / "a16.pgm").string();
    std::vector<std::uint16_t> wide = s.instances;
    wide[0] = 40000;  // force the high byte into play
    write_pgm16(pgm16, wide, s.side);
    CHECK(read_pgm16(pgm16, side) == wide);
}

TEST_CASE("source class distribution is imbalanced") {
    DomainSpec spec = base_spec(12);
    std::map<int, std::size_t> count;
    std::size_t fg = 0;
    for (std::size_t i = 0; i < 200; ++i) {
        SampleRecord s = gen_sample(spec, false, i);
        for (auto y : s.label)
            if (y != 0 && y != 255) {
                ++count[y];
                ++fg;
            }
    }
    for (std::size_t c = 1; c < spec.classes; ++c) CHECK(count[static_cast<int>(c)] > 0);
    double min_share = 1.0;
    for (const auto& [c, n] : count)
        min_share = std::min(min_share, static_cast<double>(n) / static_cast<double>(fg));
    CHECK(min_share < 0.05);
}

TEST_CASE("oracle masks partition the canvas") {
    DomainSpec spec = base_spec(13);
    SampleRecord s = gen_sample(spec, false, 1);

    auto masks = split_oracle_masks(s.instances, s.side);
    REQUIRE(!masks.empty());
    std::vector<std::size_t> cover(s.side * s.side, 0);
    for (const auto& m : masks) {
        REQUIRE(m.size() == cover.size());
        for (std::size_t p = 0; p < m.size(); ++p) cover[p] += m[p];
    }
    for (auto c : cover) CHECK(c == 1);  // disjoint and complete

    // each mask stays within a single instance id
    for (const auto& m : masks) {
        std::set<std::uint16_t> ids;
        for (std::size_t p = 0; p < m.size(); ++p)
            if (m[p]) ids.insert(s.instances[p]);
        CHECK(ids.size() == 1);
    }
}

TEST_CASE("zero jitter is the identity") {
    DomainSpec spec = base_spec(14);
    SampleRecord s = gen_sample(spec, false, 2);
    std::mt19937_64 rng(1);
    CHECK(jitter_instance_map(s.instances, s.side, 0, rng) == s.instances);
}

TEST_CASE("unit jitter keeps per-instance IoU at 0.8 or better") {
    DomainSpec spec = base_spec(15);
    double worst = 1.0;
    for (std::size_t i = 0; i < 100; ++i) {
        SampleRecord s = gen_sample(spec, false, i);
        std::mt19937_64 rng(1000 + i);
        auto jit = jitter_instance_map(s.instances, s.side, 1, rng);

        std::set<std::uint16_t> ids(s.instances.begin(), s.instances.end());
        for (auto id : ids) {
            std::size_t inter = 0, uni = 0;
            for (std::size_t p = 0; p < jit.size(); ++p) {
                const bool a = s.instances[p] == id, b = jit[p] == id;
                inter += a && b;
                uni += a || b;
            }
            if (uni) worst = std::min(worst, static_cast<double>(inter) / static_cast<double>(uni));
        }
    }
    CHECK(worst >= 0.8);
}

TEST_CASE("dataset tree is deterministic and the manifest is complete") {
    TempDir ta("tree_a"), tb("tree_b");
    DomainSpec spec = base_spec(16);
    gen_pair(spec, 6, 5, ta.path.string());
    gen_pair(spec, 6, 5, tb.path.string());

    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(ta.path))
        if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), ta.path));
    std::sort(rel.begin(), rel.end());
    REQUIRE(!rel.empty());
    for (const auto& r : rel) {
        CHECK(fs::exists(tb.path / r));
        CHECK(slurp(ta.path / r) == slurp(tb.path / r));
    }

    std::ifstream manifest(ta.path / "index.tsv");
    REQUIRE(manifest.good());
    std::size_t rows = 0;
    std::string line;
    while (std::getline(manifest, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 11);

    Dataset src = load_domain(ta.path.string(), "source");
    Dataset tgt = load_domain(ta.path.string(), "target");
    CHECK(src.train.size() + src.eval.size() == 6);
    CHECK(tgt.train.size() + tgt.eval.size() == 5);
    CHECK(!src.train.empty());
    CHECK(!src.eval.empty());
    for (const auto& s : src.train) {
        CHECK(s.rec.image.size() == s.rec.side * s.rec.side * 3);
        CHECK(s.oracle.size() == s.rec.side * s.rec.side);
    }
}
