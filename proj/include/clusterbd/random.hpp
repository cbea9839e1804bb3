#pragma once

#include "clusterbd/types.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>

namespace clusterbd {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based seed split: the child seed depends only on the parent and the tags,
/// so independent work items never share a generator.
inline std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = splitmix64(parent);
    for (auto t : tags) s = splitmix64(s ^ splitmix64(t + 0x632be59bd9b4e019ULL));
    return s;
}

/// Zero-mean circularly-symmetric complex Gaussian with unit total variance.
inline cdouble complex_gaussian(Rng& rng) {
    std::normal_distribution<double> n(0.0, std::sqrt(0.5));
    const double re = n(rng);
    const double im = n(rng);
    return {re, im};
}

inline CMatrix complex_gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    CMatrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = complex_gaussian(rng);
    return m;
}

} // namespace clusterbd
