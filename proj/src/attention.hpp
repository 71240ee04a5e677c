// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "fvlm/model.hpp"
#include "fvlm/tensor.hpp"

namespace fvlm::detail {

/// Scaled dot-product attention per head over column blocks of q/k/v.
/// `mask` (optional) is additive; per-head probabilities are appended to
/// `probs` when non-null. Returns the head outputs concatenated (q.rows x d).
DenseMatrix multi_head_attention(const DenseMatrix& q, const DenseMatrix& k, const DenseMatrix& v,
                                 std::size_t n_heads, const DenseMatrix* mask,
                                 std::vector<DenseMatrix>* probs);

DenseMatrix feed_forward(const BlockWeights& block, const DenseMatrix& normed);

std::vector<std::size_t> iota_positions(std::size_t n);

}  // namespace fvlm::detail
