// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "fvlm/prune.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fvlm/error.hpp"
#include "fvlm/probe.hpp"

namespace fvlm {

namespace {

constexpr const char* kModule = "prune-policies";

constexpr std::array<PolicyId, 6> kPolicies{PolicyId::Random,      PolicyId::PatchAttention, PolicyId::FasterVlm,
                                            PolicyId::ClsAtLayer2, PolicyId::ClsMerge,       PolicyId::FastV};

void check_ratio(double R) {
    if (!(R >= 0.0 && R < 1.0)) {
        std::ostringstream os;
        os << "reduction ratio " << R << " outside [0, 1)";
        throw Error(kModule, os.str());
    }
}

std::size_t resolve_keep(std::size_t n, double R, std::optional<std::size_t> keep_override) {
    check_ratio(R);
    if (n == 0) {
        throw Error(kModule, "cannot prune an empty token set");
    }
    if (keep_override) {
        if (*keep_override == 0 || *keep_override > n) {
            std::ostringstream os;
            os << "keep_count override " << *keep_override << " outside [1, " << n << "]";
            throw Error(kModule, os.str());
        }
        return *keep_override;
    }
    return keep_count(n, R);
}

void check_scores(std::span<const double> scores) {
    for (double s : scores) {
        if (!std::isfinite(s) || s < 0.0) {
            throw Error(kModule, "scores must be finite and non-negative");
        }
    }
}

/// Indices ordered by (score descending, index ascending), first `k` only.
std::vector<std::size_t> top_indices(std::span<const double> scores, std::size_t k) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto ranks_before = [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), ranks_before);
    order.resize(k);
    return order;
}

std::size_t encoder_extraction_layer(const AttentionTrace& trace) {
    if (trace.layers.size() < 2) {
        throw Error(kModule, "encoder trace needs at least 2 layers to take the penultimate one");
    }
    return trace.layers.size() - 2;
}

PruneDecision retag(PruneDecision d, PolicyId policy, AppliedAt at) {
    d.policy = policy;
    d.applied_at = at;
    return d;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return dot / std::sqrt(na * nb);
}

}  // namespace

std::string_view policy_name(PolicyId id) {
    switch (id) {
        case PolicyId::Random:
            return "random";
        case PolicyId::PatchAttention:
            return "patch_attention";
        case PolicyId::FasterVlm:
            return "faster_vlm";
        case PolicyId::ClsAtLayer2:
            return "cls_at_layer2";
        case PolicyId::ClsMerge:
            return "cls_merge";
        case PolicyId::FastV:
            return "fastv";
    }
    return "unknown";
}

PolicyId parse_policy(std::string_view name) {
    for (PolicyId id : kPolicies) {
        if (policy_name(id) == name) {
            return id;
        }
    }
    throw Error(kModule, "unknown policy '" + std::string(name) + "'");
}

std::span<const PolicyId> all_policies() { return kPolicies; }

std::string AppliedAt::to_string() const {
    if (kind == Kind::BeforeLlm) {
        return "before_llm";
    }
    return "llm_layer_" + std::to_string(layer);
}

AppliedAt AppliedAt::parse(std::string_view text) {
    if (text == "before_llm") {
        return before_llm();
    }
    constexpr std::string_view prefix = "llm_layer_";
    if (text.starts_with(prefix) && text.size() > prefix.size()) {
        std::size_t k = 0;
        for (char c : text.substr(prefix.size())) {
            if (c < '0' || c > '9') {
                throw Error(kModule, "bad applied_at '" + std::string(text) + "'");
            }
            k = k * 10 + static_cast<std::size_t>(c - '0');
        }
        return llm_layer(k);
    }
    throw Error(kModule, "bad applied_at '" + std::string(text) + "'");
}

std::size_t keep_count(std::size_t n, double R) {
    check_ratio(R);
    if (n == 0) {
        throw Error(kModule, "cannot budget an empty token set");
    }
    // The small slack keeps products like 10 * (1 - 0.8) = 1.999... from
    // flooring one token short.
    const auto kept = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - R) + 1e-9));
    return std::max<std::size_t>(1, kept);
}

Budget threshold_for_budget(std::span<const double> scores, double R, std::optional<std::size_t> keep_override) {
    const std::size_t k = resolve_keep(scores.size(), R, keep_override);
    check_scores(scores);
    std::vector<double> sorted(scores.begin(), scores.end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end(),
                     std::greater<>());
    return Budget{sorted[k - 1], k};
}

PruneDecision select_tokens(std::span<const double> scores, double R, std::optional<std::size_t> keep_override) {
    const Budget budget = threshold_for_budget(scores, R, keep_override);
    PruneDecision d;
    d.kept = top_indices(scores, budget.keep_count);
    std::sort(d.kept.begin(), d.kept.end());
    d.tau = budget.tau;
    d.budget_R = R;
    d.n_total = scores.size();
    return d;
}

PruneDecision faster_vlm_policy(const AttentionTrace& encoder_trace, double R,
                                std::optional<std::size_t> keep_override) {
    const ClsAttention cls = extract_cls_attention(encoder_trace, encoder_extraction_layer(encoder_trace));
    return retag(select_tokens(cls.scores, R, keep_override), PolicyId::FasterVlm, AppliedAt::before_llm());
}

PruneDecision fastv_policy(const AttentionTrace& decoder_trace, double R, std::size_t prune_layer,
                           std::optional<std::size_t> keep_override) {
    if (prune_layer == 0 || decoder_trace.layers.size() <= prune_layer) {
        std::ostringstream os;
        os << "fastv needs a decoder deeper than its prune layer " << prune_layer << " (trace has "
           << decoder_trace.layers.size() << " layers)";
        throw Error(kModule, os.str());
    }
    const std::size_t rank_layer = prune_layer - 1;
    if (decoder_trace.layers[rank_layer].positions.size() != decoder_trace.layout.total()) {
        throw Error(kModule, "fastv ranking layer must see the unpruned sequence");
    }
    const VisualAttentionProfile last =
        extract_visual_profile(decoder_trace, decoder_trace.layout, rank_layer, AttentionSource::Last);
    return retag(select_tokens(last.values, R, keep_override), PolicyId::FastV, AppliedAt::llm_layer(prune_layer));
}

PruneDecision random_policy(SeededRng& rng, std::size_t n, double R, std::optional<std::size_t> keep_override) {
    const std::size_t k = resolve_keep(n, R, keep_override);
    // Partial Fisher-Yates.
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
        std::swap(pool[i], pool[j]);
    }
    PruneDecision d;
    d.kept.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(d.kept.begin(), d.kept.end());
    d.budget_R = R;
    d.policy = PolicyId::Random;
    d.applied_at = AppliedAt::before_llm();
    d.n_total = n;
    return d;
}

PruneDecision patch_attention_policy(const AttentionTrace& encoder_trace, double R,
                                     std::optional<std::size_t> keep_override) {
    const VisualAttentionProfile patch =
        extract_patch_attention(encoder_trace, encoder_extraction_layer(encoder_trace));
    return retag(select_tokens(patch.values, R, keep_override), PolicyId::PatchAttention, AppliedAt::before_llm());
}

PruneDecision cls_at_layer2_policy(const AttentionTrace& encoder_trace, double R, std::size_t prune_layer,
                                   std::optional<std::size_t> keep_override) {
    return retag(faster_vlm_policy(encoder_trace, R, keep_override), PolicyId::ClsAtLayer2,
                 AppliedAt::llm_layer(prune_layer));
}

MergeDecision cls_merge_policy(const AttentionTrace& encoder_trace, const DenseMatrix& keys, double R,
                               std::size_t k_merge, std::optional<std::size_t> keep_override) {
    MergeDecision out;
    out.decision = retag(faster_vlm_policy(encoder_trace, R, keep_override), PolicyId::ClsMerge,
                         AppliedAt::before_llm());
    const PruneDecision& d = out.decision;
    if (keys.rows() != d.n_total) {
        std::ostringstream os;
        os << "merge keys have " << keys.rows() << " rows for " << d.n_total << " image tokens";
        throw Error(kModule, os.str());
    }
    if (k_merge >= d.kept.size()) {
        std::ostringstream os;
        os << "k_merge " << k_merge << " must be smaller than keep_count " << d.kept.size();
        throw Error(kModule, os.str());
    }

    std::vector<bool> is_kept(d.n_total, false);
    for (std::size_t k : d.kept) {
        is_kept[k] = true;
    }
    for (std::size_t p = 0; p < d.n_total; ++p) {
        if (is_kept[p]) {
            continue;
        }
        MergeAssignment a;
        a.pruned = p;
        a.similarity = -2.0;
        for (std::size_t k : d.kept) {
            const double sim = cosine(keys.row(p), keys.row(k));
            if (sim > a.similarity) {
                a.similarity = sim;
                a.kept = k;
            }
        }
        out.merge.assignments.push_back(a);
    }

    // Each kept token keeps only its k_merge most similar assignees.
    for (std::size_t k : d.kept) {
        std::vector<MergeAssignment*> mine;
        for (auto& a : out.merge.assignments) {
            if (a.kept == k) {
                mine.push_back(&a);
            }
        }
        std::stable_sort(mine.begin(), mine.end(), [](const MergeAssignment* x, const MergeAssignment* y) {
            return x->similarity > y->similarity;
        });
        for (std::size_t i = 0; i < mine.size() && i < k_merge; ++i) {
            mine[i]->weight = std::max(0.0, mine[i]->similarity);
        }
    }
    return out;
}

DenseMatrix apply_before_llm(const DenseMatrix& embeddings, const PruneDecision& decision) {
    if (decision.applied_at.kind != AppliedAt::Kind::BeforeLlm) {
        throw Error(kModule, "apply_before_llm called with an in-LLM decision");
    }
    for (std::size_t k : decision.kept) {
        if (k >= embeddings.rows()) {
            std::ostringstream os;
            os << "kept index " << k << " out of range for " << embeddings.rows() << " visual tokens";
            throw Error(kModule, os.str());
        }
    }
    return embeddings.gather_rows(decision.kept);
}

DenseMatrix apply_merge(const DenseMatrix& embeddings, const PruneDecision& decision, const MergeSpec& merge) {
    DenseMatrix out = apply_before_llm(embeddings, decision);
    for (std::size_t i = 0; i < decision.kept.size(); ++i) {
        const std::size_t k = decision.kept[i];
        double total_weight = 1.0;
        std::vector<double> acc(embeddings.row(k).begin(), embeddings.row(k).end());
        for (const auto& a : merge.assignments) {
            if (a.kept != k || a.weight <= 0.0) {
                continue;
            }
            if (a.pruned >= embeddings.rows()) {
                throw Error(kModule, "merge assignment references a missing token");
            }
            const auto src = embeddings.row(a.pruned);
            for (std::size_t c = 0; c < acc.size(); ++c) {
                acc[c] += a.weight * src[c];
            }
            total_weight += a.weight;
        }
        auto dst = out.row(i);
        for (std::size_t c = 0; c < acc.size(); ++c) {
            dst[c] = acc[c] / total_weight;
        }
    }
    return out;
}

InLayerPrune to_in_layer_prune(const PruneDecision& decision, const SequenceLayout& layout) {
    if (decision.applied_at.kind != AppliedAt::Kind::LlmLayer) {
        throw Error(kModule, "to_in_layer_prune called with a before-LLM decision");
    }
    if (decision.n_total != layout.img_len) {
        throw Error(kModule, "decision token count does not match the layout's image segment");
    }
    InLayerPrune prune;
    prune.layer = decision.applied_at.layer;
    for (std::size_t r = 0; r < layout.img_begin(); ++r) {
        prune.keep_rows.push_back(r);
    }
    for (std::size_t k : decision.kept) {
        prune.keep_rows.push_back(layout.img_begin() + k);
    }
    for (std::size_t r = layout.txt_begin(); r < layout.total(); ++r) {
        prune.keep_rows.push_back(r);
    }
    return prune;
}

}  // namespace fvlm
