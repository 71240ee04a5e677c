// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fvlm/harness.hpp"
#include "fvlm/rng.hpp"

namespace fvlm {

SyntheticWorkload make_workload(const WorkloadSpec& spec, const EncoderWeights& encoder, std::size_t vocab,
                                std::uint64_t seed) {
    const std::size_t n = encoder.config.n_patches;
    const std::size_t d = encoder.config.d_model;
    if (spec.n_salient > n) {
        throw Error("harness", "workload asks for more salient tokens than patches");
    }
    if (vocab == 0) {
        throw Error("harness", "workload needs a non-empty vocabulary");
    }
    SeededRng rng(seed);
    SyntheticWorkload w;
    w.patches = randn_matrix(rng, n, d, 1.0);

    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < spec.n_salient; ++i) {
        std::swap(pool[i], pool[i + static_cast<std::size_t>(rng.uniform_index(n - i))]);
    }
    w.salient.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.n_salient));
    std::sort(w.salient.begin(), w.salient.end());

    const double amplitude = spec.salient_strength * std::sqrt(static_cast<double>(d));
    for (std::size_t idx : w.salient) {
        auto row = w.patches.row(idx);
        for (std::size_t c = 0; c < d; ++c) {
            row[c] += amplitude * encoder.salience_direction[c];
        }
    }

    auto draw_token = [&] { return static_cast<TokenId>(rng.uniform_index(vocab)); };
    for (std::size_t i = 0; i < spec.sys_len; ++i) {
        w.sys_tokens.push_back(draw_token());
    }
    for (std::size_t i = 0; i < spec.txt_len; ++i) {
        w.txt_tokens.push_back(draw_token());
    }
    w.start_token = draw_token();
    return w;
}

double salient_recall(std::span<const std::size_t> kept, std::span<const std::size_t> salient) {
    if (salient.empty()) {
        return 1.0;
    }
    std::size_t hits = 0;
    for (std::size_t s : salient) {
        if (std::find(kept.begin(), kept.end(), s) != kept.end()) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(salient.size());
}

}  // namespace fvlm
