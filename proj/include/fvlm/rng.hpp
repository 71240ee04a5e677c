// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>

namespace fvlm {

/// Deterministic random source.
///
/// Raw draws come from std::mt19937_64, whose output sequence is fixed by
/// the C++ standard. Derived distributions (uniform doubles, normals,
/// bounded integers) are implemented here rather than through
/// <random> distributions, whose algorithms are implementation-defined, so
/// a given seed produces the same stream on every platform.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : m_seed(seed), m_engine(seed) {}

    std::uint64_t seed() const noexcept { return m_seed; }

    std::uint64_t next_u64() { return m_engine(); }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    double uniform();

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal();

    /// Uniform integer in [0, bound), unbiased (rejection sampling). bound > 0.
    std::uint64_t uniform_index(std::uint64_t bound);

    /// Independent child stream for `stream`; does not advance this generator.
    SeededRng derive(std::uint64_t stream) const;

private:
    std::uint64_t m_seed;
    std::mt19937_64 m_engine;
    std::optional<double> m_spare_normal;
};

/// SplitMix64 finalizer; used to mix seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace fvlm
