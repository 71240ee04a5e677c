// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "fvlm/rng.hpp"

#include <cmath>
#include <numbers>

namespace fvlm {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double SeededRng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() {
    if (m_spare_normal) {
        double v = *m_spare_normal;
        m_spare_normal.reset();
        return v;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    m_spare_normal = radius * std::sin(angle);
    return radius * std::cos(angle);
}

std::uint64_t SeededRng::uniform_index(std::uint64_t bound) {
    // Reject the tail that would bias the modulo.
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % bound);
    std::uint64_t x = next_u64();
    while (x >= limit) {
        x = next_u64();
    }
    return x % bound;
}

SeededRng SeededRng::derive(std::uint64_t stream) const {
    return SeededRng(mix_seed(m_seed, stream));
}

}  // namespace fvlm
