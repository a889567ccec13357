#include "reinpp/synthdata.hpp"

#include "reinpp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace reinpp {

bool DomainShift::is_identity() const {
    return gain == std::array<double, 3>{1.0, 1.0, 1.0} &&
           offset == std::array<double, 3>{0.0, 0.0, 0.0} && gamma == 1.0 && noise_std == 0.0;
}

DomainShift DomainShift::night() {
    DomainShift s;
    s.gamma = 2.2;
    s.gain = {0.55, 0.65, 0.95};
    s.offset = {0.0, 0.0, 0.04};
    s.noise_std = 8.0 / 255.0;
    return s;
}

DomainShift DomainShift::dusk() {
    DomainShift s;
    s.gamma = 1.35;
    s.gain = {0.80, 0.85, 1.00};
    s.offset = {0.0, 0.0, 0.02};
    s.noise_std = 4.0 / 255.0;
    return s;
}

void DomainSpec::validate() const {
    if (classes < 2) throw std::invalid_argument("DomainSpec: need at least 2 classes");
    if (canvas < 8) throw std::invalid_argument("DomainSpec: canvas too small");
    if (min_shapes == 0 || min_shapes > max_shapes)
        throw std::invalid_argument("DomainSpec: bad shape count range");
}

namespace {

constexpr double kPalette[6][3] = {
    {0.0, 0.0, 0.0},     // background handled separately
    {0.85, 0.25, 0.25},  // rectangle
    {0.25, 0.75, 0.30},  // ellipse
    {0.30, 0.40, 0.90},  // horizontal bar
    {0.90, 0.80, 0.30},  // vertical bar
    {0.80, 0.30, 0.85},  // triangle (rare)
};

struct Canvas {
    std::size_t side;
    std::vector<double> rgb;             // H*W*3
    std::vector<std::uint8_t> label;     // class ids
    std::vector<std::uint16_t> inst;
    explicit Canvas(std::size_t s) : side(s), rgb(s * s * 3, 0.0), label(s * s, 0), inst(s * s, 0) {}
    void paint(std::size_t y, std::size_t x, const double col[3], std::uint8_t cls, std::uint16_t id) {
        const std::size_t p = y * side + x;
        rgb[p * 3 + 0] = col[0];
        rgb[p * 3 + 1] = col[1];
        rgb[p * 3 + 2] = col[2];
        label[p] = cls;
        inst[p] = id;
    }
};

void render_geometry(const DomainSpec& spec, std::uint64_t geo_seed, Canvas& cv) {
    std::mt19937_64 rng(geo_seed);
    const std::size_t s = spec.canvas;
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    // background: soft vertical gradient around a mid gray
    const double g0 = 0.55 + 0.15 * u01(rng);
    const double tint = 0.04 * (u01(rng) - 0.5);
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
            const double g = g0 + 0.08 * (static_cast<double>(y) / s - 0.5);
            const std::size_t p = (y * s + x) * 3;
            cv.rgb[p] = g + tint;
            cv.rgb[p + 1] = g;
            cv.rgb[p + 2] = g - tint;
        }

    const std::size_t n_classes = spec.classes;  // shape classes: 1 .. n_classes-1
    std::vector<double> weights(n_classes - 1, 0.0);
    if (weights.size() == 1) {
        weights[0] = 1.0;
    } else {
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) weights[i] = 0.94 / (weights.size() - 1);
        weights.back() = 0.06;  // keep the last class rare
    }
    std::discrete_distribution<std::size_t> cls_dist(weights.begin(), weights.end());

    std::uniform_int_distribution<std::size_t> n_shapes_dist(spec.min_shapes, spec.max_shapes);
    const std::size_t n_shapes = n_shapes_dist(rng);
    for (std::size_t k = 0; k < n_shapes; ++k) {
        const std::uint8_t cls = static_cast<std::uint8_t>(1 + cls_dist(rng));
        const std::uint16_t id = static_cast<std::uint16_t>(k + 1);
        double col[3];
        for (int ch = 0; ch < 3; ++ch)
            col[ch] = std::clamp(kPalette[(cls - 1) % 5 + 1][ch] + 0.16 * (u01(rng) - 0.5), 0.0, 1.0);

        const int kind = (cls - 1) % 5;
        auto ui = [&](std::size_t lo, std::size_t hi) {
            return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
        };
        if (kind == 0) {  // rectangle
            const std::size_t w = ui(6, 14), h = ui(6, 14);
            const std::size_t x0 = ui(0, s - w), y0 = ui(0, s - h);
            for (std::size_t y = y0; y < y0 + h; ++y)
                for (std::size_t x = x0; x < x0 + w; ++x) cv.paint(y, x, col, cls, id);
        } else if (kind == 1) {  // ellipse
            const double rx = 3.5 + 4.5 * u01(rng), ry = 3.5 + 4.5 * u01(rng);
            const double cx = rx + u01(rng) * (s - 2 * rx), cy = ry + u01(rng) * (s - 2 * ry);
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x) {
                    const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
                    if (dx * dx + dy * dy <= 1.0) cv.paint(y, x, col, cls, id);
                }
        } else if (kind == 2) {  // horizontal bar
            const std::size_t h = ui(3, 5), y0 = ui(0, s - h);
            for (std::size_t y = y0; y < y0 + h; ++y)
                for (std::size_t x = 0; x < s; ++x) cv.paint(y, x, col, cls, id);
        } else if (kind == 3) {  // vertical bar
            const std::size_t w = ui(3, 5), x0 = ui(0, s - w);
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = x0; x < x0 + w; ++x) cv.paint(y, x, col, cls, id);
        } else {  // right triangle
            const std::size_t sz = ui(7, 11);
            const std::size_t x0 = ui(0, s - sz), y0 = ui(0, s - sz);
            for (std::size_t dy = 0; dy < sz; ++dy)
                for (std::size_t dx = 0; dx + dy < sz; ++dx) cv.paint(y0 + dy, x0 + dx, col, cls, id);
        }
    }
}

void apply_shift(const DomainShift& shift, std::uint64_t noise_seed, std::vector<double>& rgb) {
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> noise(0.0, shift.noise_std);
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        const int ch = static_cast<int>(i % 3);
        double v = std::pow(std::max(rgb[i], 0.0), shift.gamma);
        v = shift.gain[ch] * v + shift.offset[ch];
        if (shift.noise_std > 0.0) v += noise(rng);
        rgb[i] = std::clamp(v, 0.0, 1.0);
    }
}

std::uint64_t geo_seed(const DomainSpec& spec, bool target, std::size_t index) {
    const std::uint64_t dom = (target && !spec.paired_geometry) ? 1 : 0;
    return mix_seed(spec.seed, mix_seed(0x67656f21ULL, dom * 1000003ULL + index));
}

}  // namespace

SampleRecord gen_sample(const DomainSpec& spec, bool target_domain, std::size_t index) {
    spec.validate();
    Canvas cv(spec.canvas);
    render_geometry(spec, geo_seed(spec, target_domain, index), cv);
    if (target_domain)
        apply_shift(spec.shift, mix_seed(spec.seed, mix_seed(0x6e6f6973ULL, index)), cv.rgb);

    SampleRecord rec;
    rec.side = spec.canvas;
    rec.image.resize(cv.rgb.size());
    for (std::size_t i = 0; i < cv.rgb.size(); ++i)
        rec.image[i] = static_cast<std::uint8_t>(std::lround(cv.rgb[i] * 255.0));
    rec.label = std::move(cv.label);
    rec.instances = std::move(cv.inst);
    return rec;
}

std::vector<std::uint16_t> jitter_instance_map(const std::vector<std::uint16_t>& instances,
                                               std::size_t side, int jitter, std::mt19937_64& rng) {
    std::vector<std::uint16_t> cur = instances;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, 3);
    const int dyx[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};

    // Per-id erosion/dilation budgets of 10% of the original support keep
    // every instance IoU >= 0.9/1.1 no matter how many rounds run.
    std::map<std::uint16_t, std::size_t> area, lost, gained;
    for (auto id : instances) ++area[id];
    auto budget = [&](std::uint16_t id) { return area[id] / 10; };

    for (int round = 0; round < jitter; ++round) {
        std::vector<std::uint16_t> next = cur;
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x) {
                bool boundary = false;
                const std::uint16_t id = cur[y * side + x];
                for (const auto& d : dyx) {
                    const long ny = static_cast<long>(y) + d[0], nx = static_cast<long>(x) + d[1];
                    if (ny < 0 || nx < 0 || ny >= static_cast<long>(side) || nx >= static_cast<long>(side))
                        continue;
                    if (cur[ny * side + nx] != id) boundary = true;
                }
                if (!boundary) continue;
                if (u01(rng) < 0.25) {
                    const auto& d = dyx[pick(rng)];
                    const long ny = std::clamp<long>(static_cast<long>(y) + d[0], 0, side - 1);
                    const long nx = std::clamp<long>(static_cast<long>(x) + d[1], 0, side - 1);
                    const std::uint16_t to = cur[ny * side + nx];
                    if (to == id) continue;
                    if (lost[id] >= budget(id) || gained[to] >= budget(to)) continue;
                    ++lost[id];
                    ++gained[to];
                    next[y * side + x] = to;
                }
            }
        cur = std::move(next);
    }
    return cur;
}

std::vector<std::vector<std::uint8_t>> split_oracle_masks(const std::vector<std::uint16_t>& id_map,
                                                          std::size_t side) {
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<char> seen(side * side, 0);
    for (std::size_t start = 0; start < side * side; ++start) {
        if (seen[start]) continue;
        const std::uint16_t id = id_map[start];
        std::vector<std::uint8_t> mask(side * side, 0);
        std::queue<std::size_t> q;
        q.push(start);
        seen[start] = 1;
        while (!q.empty()) {
            const std::size_t p = q.front();
            q.pop();
            mask[p] = 1;
            const std::size_t y = p / side, x = p % side;
            const long nb[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
            for (const auto& d : nb) {
                const long ny = static_cast<long>(y) + d[0], nx = static_cast<long>(x) + d[1];
                if (ny < 0 || nx < 0 || ny >= static_cast<long>(side) || nx >= static_cast<long>(side))
                    continue;
                const std::size_t np = ny * side + nx;
                if (!seen[np] && id_map[np] == id) {
                    seen[np] = 1;
                    q.push(np);
                }
            }
        }
        masks.push_back(std::move(mask));
    }
    return masks;
}

std::vector<std::vector<std::uint8_t>> oracle_masks(const std::vector<std::uint16_t>& instances,
                                                    std::size_t side, int jitter,
                                                    std::mt19937_64& rng) {
    return split_oracle_masks(jitter_instance_map(instances, side, jitter, rng), side);
}

namespace {
void open_out(std::ofstream& os, const std::string& path) {
    os.open(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
}
void expect_magic(std::ifstream& is, const std::string& magic, const std::string& path) {
    std::string m;
    is >> m;
    if (m != magic) throw std::runtime_error("bad magic in " + path);
}
}  // namespace

void write_ppm(const std::string& path, const std::vector<std::uint8_t>& rgb, std::size_t side) {
    std::ofstream os;
    open_out(os, path);
    os << "P6\n" << side << " " << side << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

void write_pgm8(const std::string& path, const std::vector<std::uint8_t>& v, std::size_t side) {
    std::ofstream os;
    open_out(os, path);
    os << "P5\n" << side << " " << side << "\n255\n";
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size()));
}

void write_pgm16(const std::string& path, const std::vector<std::uint16_t>& v, std::size_t side) {
    std::ofstream os;
    open_out(os, path);
    os << "P5\n" << side << " " << side << "\n65535\n";
    for (std::uint16_t x : v) {  // big-endian per netpbm
        const char b[2] = {static_cast<char>(x >> 8), static_cast<char>(x & 0xff)};
        os.write(b, 2);
    }
}

std::vector<std::uint8_t> read_ppm(const std::string& path, std::size_t& side) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    expect_magic(is, "P6", path);
    std::size_t w, h, maxv;
    is >> w >> h >> maxv;
    is.get();
    if (w != h || maxv != 255) throw std::runtime_error("unsupported ppm " + path);
    side = w;
    std::vector<std::uint8_t> v(w * h * 3);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size()));
    if (!is) throw std::runtime_error("truncated ppm " + path);
    return v;
}

std::vector<std::uint8_t> read_pgm8(const std::string& path, std::size_t& side) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    expect_magic(is, "P5", path);
    std::size_t w, h, maxv;
    is >> w >> h >> maxv;
    is.get();
    if (w != h || maxv != 255) throw std::runtime_error("unsupported pgm " + path);
    side = w;
    std::vector<std::uint8_t> v(w * h);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size()));
    if (!is) throw std::runtime_error("truncated pgm " + path);
    return v;
}

std::vector<std::uint16_t> read_pgm16(const std::string& path, std::size_t& side) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    expect_magic(is, "P5", path);
    std::size_t w, h, maxv;
    is >> w >> h >> maxv;
    is.get();
    if (w != h || maxv != 65535) throw std::runtime_error("unsupported 16-bit pgm " + path);
    side = w;
    std::vector<std::uint16_t> v(w * h);
    for (auto& x : v) {
        const int hi = is.get(), lo = is.get();
        if (hi < 0 || lo < 0) throw std::runtime_error("truncated pgm " + path);
        x = static_cast<std::uint16_t>((hi << 8) | lo);
    }
    return v;
}

void gen_pair(const DomainSpec& spec, std::size_t n_source, std::size_t n_target,
              const std::string& out_dir) {
    spec.validate();
    for (const char* dom : {"source", "target"})
        for (const char* sub : {"images", "labels", "instances", "oracle"})
            fs::create_directories(fs::path(out_dir) / dom / sub);

    std::ofstream manifest(fs::path(out_dir) / "index.tsv");
    if (!manifest) throw std::runtime_error("cannot write manifest in " + out_dir);

    for (int dom = 0; dom < 2; ++dom) {
        const bool target = dom == 1;
        const std::string dname = target ? "target" : "source";
        const std::size_t n = target ? n_target : n_source;
        const std::size_t n_train = (n * 8) / 10;
        for (std::size_t i = 0; i < n; ++i) {
            SampleRecord rec = gen_sample(spec, target, i);
            char name[16];
            std::snprintf(name, sizeof(name), "%05zu", i);
            const fs::path base = fs::path(out_dir) / dname;
            write_ppm((base / "images" / (std::string(name) + ".ppm")).string(), rec.image, rec.side);
            write_pgm8((base / "labels" / (std::string(name) + ".pgm")).string(), rec.label, rec.side);
            write_pgm16((base / "instances" / (std::string(name) + ".pgm")).string(), rec.instances,
                        rec.side);
            std::mt19937_64 orng(mix_seed(spec.seed, mix_seed(0x6f72636cULL, dom * 1000003ULL + i)));
            write_pgm16((base / "oracle" / (std::string(name) + ".pgm")).string(),
                        jitter_instance_map(rec.instances, rec.side, spec.oracle_jitter, orng),
                        rec.side);
            manifest << dname << "/images/" << name << ".ppm\t" << dname << "\t"
                     << (i < n_train ? "train" : "eval") << "\n";
        }
    }
}

Dataset load_domain(const std::string& root, const std::string& domain) {
    std::ifstream manifest(fs::path(root) / "index.tsv");
    if (!manifest) throw std::runtime_error("cannot read manifest in " + root);
    Dataset ds;
    std::string line;
    while (std::getline(manifest, line)) {
        std::istringstream ls(line);
        std::string path, dom, split;
        if (!(ls >> path >> dom >> split)) continue;
        if (dom != domain) continue;
        LoadedSample s;
        std::size_t side;
        s.rec.image = read_ppm((fs::path(root) / path).string(), side);
        s.rec.side = side;
        std::string p = path;
        auto swap_dir = [&](const std::string& from, const std::string& to) {
            std::string q = path;
            const auto pos = q.find(from);
            q.replace(pos, from.size(), to);
            q.replace(q.size() - 4, 4, ".pgm");
            return (fs::path(root) / q).string();
        };
        s.rec.label = read_pgm8(swap_dir("/images/", "/labels/"), side);
        s.rec.instances = read_pgm16(swap_dir("/images/", "/instances/"), side);
        s.oracle = read_pgm16(swap_dir("/images/", "/oracle/"), side);
        (split == "train" ? ds.train : ds.eval).push_back(std::move(s));
    }
    return ds;
}

}  // namespace reinpp
