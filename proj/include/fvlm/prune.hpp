// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fvlm/model.hpp"
#include "fvlm/rng.hpp"

namespace fvlm {

enum class PolicyId {
    Random,          // uniform sample, before the LLM
    PatchAttention,  // mean patch->patch attention, before the LLM
    FasterVlm,       // [CLS] attention, before the LLM
    ClsAtLayer2,     // [CLS] attention, applied inside the LLM
    ClsMerge,        // [CLS] attention + key-similarity merge, before the LLM
    FastV,           // last-row decoder attention, applied inside the LLM
};

std::string_view policy_name(PolicyId id);
PolicyId parse_policy(std::string_view name);
/// Every policy, in ablation-table order.
std::span<const PolicyId> all_policies();

/// Where a decision takes effect.
struct AppliedAt {
    enum class Kind { BeforeLlm, LlmLayer };
    Kind kind = Kind::BeforeLlm;
    std::size_t layer = 0;

    static AppliedAt before_llm() { return {Kind::BeforeLlm, 0}; }
    static AppliedAt llm_layer(std::size_t k) { return {Kind::LlmLayer, k}; }

    /// "before_llm" or "llm_layer_<k>".
    std::string to_string() const;
    static AppliedAt parse(std::string_view text);

    friend bool operator==(const AppliedAt&, const AppliedAt&) = default;
};

struct PruneDecision {
    /// Original visual-token indices, strictly increasing.
    std::vector<std::size_t> kept;
    /// Score threshold; absent for policies without scores (random).
    std::optional<double> tau;
    double budget_R = 0.0;
    PolicyId policy = PolicyId::FasterVlm;
    AppliedAt applied_at;
    /// Number of visual tokens the decision was taken over.
    std::size_t n_total = 0;

    friend bool operator==(const PruneDecision&, const PruneDecision&) = default;
};

struct Budget {
    double tau = 0.0;
    std::size_t keep_count = 0;
};

/// max(1, floor(n * (1 - R))). R must lie in [0, 1).
std::size_t keep_count(std::size_t n, double R);

/// tau is the keep_count-th largest score. `keep_override` replaces the
/// computed keep_count (1 <= override <= n).
Budget threshold_for_budget(std::span<const double> scores, double R,
                            std::optional<std::size_t> keep_override = std::nullopt);

/// Highest keep_count scores, ties broken toward the lower index, returned
/// in ascending index order. The decision is tagged FasterVlm/before_llm;
/// policies retag it.
PruneDecision select_tokens(std::span<const double> scores, double R,
                            std::optional<std::size_t> keep_override = std::nullopt);

// Policies. Encoder-trace policies read the penultimate layer of the trace.

PruneDecision faster_vlm_policy(const AttentionTrace& encoder_trace, double R,
                                std::optional<std::size_t> keep_override = std::nullopt);

/// Scores are the head-averaged attention the final decoder row pays to
/// each image token in layer prune_layer - 1 (the last layer that still
/// sees every token); the decision applies from layer prune_layer on.
PruneDecision fastv_policy(const AttentionTrace& decoder_trace, double R, std::size_t prune_layer = 2,
                           std::optional<std::size_t> keep_override = std::nullopt);

PruneDecision random_policy(SeededRng& rng, std::size_t n, double R,
                            std::optional<std::size_t> keep_override = std::nullopt);

PruneDecision patch_attention_policy(const AttentionTrace& encoder_trace, double R,
                                     std::optional<std::size_t> keep_override = std::nullopt);

PruneDecision cls_at_layer2_policy(const AttentionTrace& encoder_trace, double R, std::size_t prune_layer = 2,
                                   std::optional<std::size_t> keep_override = std::nullopt);

struct MergeAssignment {
    std::size_t pruned = 0;
    std::size_t kept = 0;
    /// Contribution weight of the pruned token; 0 when it is not among the
    /// k_merge most similar tokens of its kept token.
    double weight = 0.0;
    double similarity = 0.0;
};

/// Every pruned token mapped to exactly one kept token (ascending by pruned index).
struct MergeSpec {
    std::vector<MergeAssignment> assignments;
};

struct MergeDecision {
    PruneDecision decision;
    MergeSpec merge;
};

/// Selects by [CLS] attention, then assigns each pruned token to the kept
/// token with the highest key cosine similarity (ties toward the lower kept
/// index). Each kept token absorbs its k_merge most similar assigned tokens
/// with weight max(0, cosine). `keys` holds one row per image token.
MergeDecision cls_merge_policy(const AttentionTrace& encoder_trace, const DenseMatrix& keys, double R,
                               std::size_t k_merge, std::optional<std::size_t> keep_override = std::nullopt);

/// Kept rows in original order, packed contiguously.
DenseMatrix apply_before_llm(const DenseMatrix& embeddings, const PruneDecision& decision);

/// Like apply_before_llm, but each kept row becomes
/// (x_kept + sum w_i x_i) / (1 + sum w_i) over its merged tokens.
DenseMatrix apply_merge(const DenseMatrix& embeddings, const PruneDecision& decision, const MergeSpec& merge);

/// Decoder sequence rows retained by an in-LLM decision: every non-image row
/// plus the kept image rows.
InLayerPrune to_in_layer_prune(const PruneDecision& decision, const SequenceLayout& layout);

}  // namespace fvlm
