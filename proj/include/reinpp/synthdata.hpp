#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace reinpp {

// Appearance-only transform for the target domain; geometry and labels are
// unaffected by construction.
struct DomainShift {
    std::array<double, 3> gain{1.0, 1.0, 1.0};
    std::array<double, 3> offset{0.0, 0.0, 0.0};
    double gamma = 1.0;
    double noise_std = 0.0;  // in [0,1] units

    bool is_identity() const;
    static DomainShift night();  // gamma darkening + blue shift + noise
    static DomainShift dusk();   // milder variant used by the pinned benchmark
};

struct DomainSpec {
    std::size_t classes = 6;  // K, background is class 0
    std::size_t canvas = 32;  // H = W
    std::size_t min_shapes = 2;
    std::size_t max_shapes = 5;
    DomainShift shift = DomainShift::night();
    std::uint64_t seed = 0;
    int oracle_jitter = 1;          // boundary jitter amplitude in pixels
    bool paired_geometry = false;   // target reuses source geometry seeds

    void validate() const;
};

struct SampleRecord {
    std::size_t side = 0;
    std::vector<std::uint8_t> image;       // H*W*3 interleaved RGB
    std::vector<std::uint8_t> label;       // H*W class ids, 255 = ignore
    std::vector<std::uint16_t> instances;  // H*W instance ids, 0 = background
};

// Deterministic given (spec, domain, index).
SampleRecord gen_sample(const DomainSpec& spec, bool target_domain, std::size_t index);

// Writes the dataset tree and index.tsv manifest. 80/20 train/eval split
// per domain; target labels are emitted for evaluation only.
void gen_pair(const DomainSpec& spec, std::size_t n_source, std::size_t n_target,
              const std::string& out_dir);

// Boundary-jittered class-agnostic id map: each pixel takes the instance id
// at a randomly displaced coordinate (|dx|,|dy| <= jitter).
std::vector<std::uint16_t> jitter_instance_map(const std::vector<std::uint16_t>& instances,
                                               std::size_t side, int jitter, std::mt19937_64& rng);

// One binary mask per connected component of each id (background included).
std::vector<std::vector<std::uint8_t>> split_oracle_masks(const std::vector<std::uint16_t>& id_map,
                                                          std::size_t side);

// jitter + split, the promptable-segmenter stand-in.
std::vector<std::vector<std::uint8_t>> oracle_masks(const std::vector<std::uint16_t>& instances,
                                                    std::size_t side, int jitter,
                                                    std::mt19937_64& rng);

// netpbm IO (binary P6 / P5; 16-bit PGM big-endian)
void write_ppm(const std::string& path, const std::vector<std::uint8_t>& rgb, std::size_t side);
void write_pgm8(const std::string& path, const std::vector<std::uint8_t>& v, std::size_t side);
void write_pgm16(const std::string& path, const std::vector<std::uint16_t>& v, std::size_t side);
std::vector<std::uint8_t> read_ppm(const std::string& path, std::size_t& side);
std::vector<std::uint8_t> read_pgm8(const std::string& path, std::size_t& side);
std::vector<std::uint16_t> read_pgm16(const std::string& path, std::size_t& side);

// A dataset split loaded in memory.
struct LoadedSample {
    SampleRecord rec;
    std::vector<std::uint16_t> oracle;  // jittered id map
};
struct Dataset {
    std::vector<LoadedSample> train;
    std::vector<LoadedSample> eval;
};
Dataset load_domain(const std::string& root, const std::string& domain);

}  // namespace reinpp
