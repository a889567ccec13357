#pragma once

#include "reinpp/tensor.hpp"

#include <cstdint>
#include <random>

namespace reinpp {

// splitmix64; used to derive independent streams from one experiment seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Tensor randn(std::vector<std::size_t> shape, std::mt19937_64& rng, double std_dev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std_dev);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

}  // namespace reinpp
