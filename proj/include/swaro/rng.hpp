#pragma once

#include <cstdint>
#include <random>

#include "swaro/tensor.hpp"

namespace swaro {

/// splitmix64 — used to derive independent stream seeds from a base seed
/// so that e.g. data shuffling and attack noise never share a stream.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    return mix_seed(mix_seed(base) ^ mix_seed(stream * 0x2545f4914f6cdd1dULL + 1));
}

inline std::mt19937_64 make_rng(std::uint64_t base, std::uint64_t stream = 0) {
    return std::mt19937_64(derive_seed(base, stream));
}

inline Tensor random_uniform(std::vector<std::size_t> shape, double lo, double hi,
                             std::mt19937_64& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.mutable_data()) v = dist(rng);
    return t;
}

inline Tensor random_normal(std::vector<std::size_t> shape, double mean, double std,
                            std::mt19937_64& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::normal_distribution<double> dist(mean, std);
    for (double& v : t.mutable_data()) v = dist(rng);
    return t;
}

}  // namespace swaro
