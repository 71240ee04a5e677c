// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fvlm::cost {

/// Analytic FLOPs / KV-cache accounting for the visual tokens inside the
/// language model. Text tokens are ignored. The per-layer FFN term (6ndm)
/// assumes a gated 3-matrix FFN, independent of whatever the toy decoder
/// uses. Nothing here is measured; FlashAttention-style kernels change
/// memory traffic but not these counts.
struct CostModelConfig {
    double n = 0.0;  // visual tokens before pruning
    double d = 0.0;  // hidden size
    double m = 0.0;  // FFN intermediate size
    std::size_t layers = 0;
    /// fp16 KV cache.
    double bytes_per_element = 2.0;

    void validate() const;
};

/// Token count per layer: `kept` everywhere (before_llm), or the full n for
/// layers < layer and `kept` from `layer` on (at_layer).
struct PruneSchedule {
    enum class Kind { BeforeLlm, AtLayer };
    Kind kind = Kind::BeforeLlm;
    std::size_t layer = 0;
    double kept = 0.0;

    static PruneSchedule before_llm(double kept) { return {Kind::BeforeLlm, 0, kept}; }
    static PruneSchedule at_layer(std::size_t k, double kept) { return {Kind::AtLayer, k, kept}; }

    double tokens_at(const CostModelConfig& cfg, std::size_t layer_index) const;
    void validate(const CostModelConfig& cfg) const;
};

enum class DecodeFormula {
    /// 8d^2 + 4nd + 6ndm: the FFN term scales with the cached length.
    FullSequence,
    /// 8d^2 + 4nd + 6dm: the FFN only runs on the one new token.
    PerToken,
};

/// 8nd^2 + 4n^2 d + 6ndm.
double prefill_layer_flops(double n, double d, double m);
double decode_layer_flops(double n, double d, double m, DecodeFormula formula = DecodeFormula::FullSequence);

/// R + 2n / (4d + 2n + 3m) * (R - R^2).
double flops_reduction_closed_form(double n, double d, double m, double R);

double pipeline_prefill_flops(const CostModelConfig& cfg, const PruneSchedule& schedule);
/// One decode step with a cache holding each layer's tokens.
double pipeline_decode_flops(const CostModelConfig& cfg, const PruneSchedule& schedule,
                             DecodeFormula formula = DecodeFormula::FullSequence);

/// K and V rows cached across all layers, in bytes.
double kv_storage_bytes(const CostModelConfig& cfg, const PruneSchedule& schedule);
/// Bytes to MiB (2^20 bytes).
double bytes_to_mib(double bytes);

struct NamedSchedule {
    std::string method;
    PruneSchedule schedule;
};

struct FlopsRow {
    std::string method;
    double reduction = 0.0;
    double tokens = 0.0;
    double tflops = 0.0;
    double storage_mib = 0.0;
};

std::vector<FlopsRow> flops_table(const CostModelConfig& cfg, std::span<const NamedSchedule> schedules);

/// Unpruned, then FastV-style (at_layer(2)) and before-LLM rows per ratio,
/// with keep counts floor(n * (1 - R)).
std::vector<NamedSchedule> comparison_schedules(const CostModelConfig& cfg, std::span<const double> ratios);

/// Header `method,reduction,tokens,tflops,storage_mib`.
void write_flops_csv(std::ostream& out, std::span<const FlopsRow> rows);

}  // namespace fvlm::cost
