// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fvlm/analysis.hpp"
#include "fvlm/error.hpp"
#include "fvlm/model.hpp"
#include "fvlm/prune.hpp"
#include "json.hpp"

namespace fvlm {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct WorkloadSpec {
    std::size_t n_salient = 5;
    /// Salient patches get strength * sqrt(d) along the encoder's salience
    /// direction on top of unit Gaussian noise.
    double salient_strength = 2.0;
    std::size_t sys_len = 4;
    std::size_t txt_len = 8;
    /// Patch grid width, used for row profiles.
    std::size_t grid_cols = 8;
};

/// How image tokens are numbered inside the decoder after before-LLM pruning.
enum class PositionMode {
    Packed,    // contiguous ids over the shortened sequence
    Original,  // ids of the unpruned sequence (gaps where tokens were removed)
};

struct PipelineConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    WorkloadSpec workload;
    PolicyId policy = PolicyId::FasterVlm;
    double reduction = 0.5;
    std::optional<std::size_t> keep_count;
    std::size_t k_merge = 1;
    /// Decoder layer in-LLM policies prune before.
    std::size_t prune_layer = 2;
    PositionMode position_mode = PositionMode::Packed;
    std::size_t max_new = 8;
    /// Decoder layer the image/text/last diagnostics are read from.
    std::size_t analysis_layer = 1;
    std::uint64_t seed = 0;

    void validate() const;

    /// Canonical flat key/value form; the same keys the config file accepts.
    std::map<std::string, std::string> to_key_values() const;
    /// FNV-1a over the canonical key/value text.
    std::uint64_t hash() const;
    std::string hash_hex() const;
};

/// Sets one `key = value` entry. Throws on unknown keys or bad values.
void apply_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value);

/// Flat text format: one `key = value` per line, `#` starts a comment,
/// blank lines ignored. Unlisted keys keep their defaults.
PipelineConfig parse_config(std::istream& in);
PipelineConfig load_config_file(const std::string& path);

// ---------------------------------------------------------------------------
// Workloads
// ---------------------------------------------------------------------------

struct SyntheticWorkload {
    DenseMatrix patches;
    /// Ground-truth salient patch indices, ascending.
    std::vector<std::size_t> salient;
    std::vector<TokenId> sys_tokens;
    std::vector<TokenId> txt_tokens;
    TokenId start_token = 0;
};

SyntheticWorkload make_workload(const WorkloadSpec& spec, const EncoderWeights& encoder, std::size_t vocab,
                                std::uint64_t seed);

/// |kept ∩ salient| / |salient|; 1 when there is nothing to recall.
double salient_recall(std::span<const std::size_t> kept, std::span<const std::size_t> salient);

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct SourceStats {
    ShiftStat shift;
    double top_share_20 = 0.0;
    double entropy = 0.0;
};

struct RunReport {
    std::map<std::string, std::string> config;
    std::string config_hash;
    PruneDecision decision;
    std::map<std::string, SourceStats> attention;
    std::vector<std::size_t> salient;
    double salient_recall = 0.0;
    std::size_t decoder_visual_tokens = 0;
    double prefill_flops_unpruned = 0.0;
    double prefill_flops_pruned = 0.0;
    double kv_bytes_unpruned = 0.0;
    double kv_bytes_pruned = 0.0;
    std::vector<TokenId> baseline_tokens;
    std::vector<TokenId> generated_tokens;
    double wall_time_ms = 0.0;

    /// Key-sorted JSON. Wall time is left out unless requested so identical
    /// runs serialize to identical bytes.
    nlohmann::json to_json(bool include_timing = false) const;
};

/// Everything a run computed, for inspection by tests and trace dumps.
struct RunOutcome {
    RunReport report;
    EncoderOutput encoder;
    /// Unpruned decoder prefill (diagnostics and FastV ranking).
    PrefillResult baseline;
    /// Decoder prefill actually used for generation.
    PrefillResult pruned;
    std::optional<MergeSpec> merge;
};

/// Error surfaced by the harness: the failing module plus the config hash.
class PipelineError : public Error {
public:
    PipelineError(const Error& cause, std::string config_hash)
        : Error(cause.module(), cause.message()), m_config_hash(std::move(config_hash)) {}

    const std::string& config_hash() const noexcept { return m_config_hash; }

    nlohmann::json to_json() const;

private:
    std::string m_config_hash;
};

RunOutcome run_pipeline_detailed(const PipelineConfig& cfg);
RunReport run_pipeline(const PipelineConfig& cfg);

struct AblationRow {
    std::string strategy;
    double reduction = 0.0;
    std::size_t keep_count = 0;
    std::string applied_at;
    double salient_recall = 0.0;
    double prefill_flops = 0.0;
    double kv_bytes = 0.0;
    std::vector<std::size_t> kept;
    std::vector<TokenId> generated_tokens;
};

/// Every policy at every ratio; rows ordered policy-major. Runs execute
/// concurrently, output order is fixed.
std::vector<AblationRow> run_ablation_suite(const PipelineConfig& base, std::span<const double> ratios);

/// `base.policy` at every ratio.
std::vector<AblationRow> run_sweep(const PipelineConfig& base, std::span<const double> ratios);

/// Header `strategy,reduction,keep_count,applied_at,salient_recall,prefill_flops,kv_bytes,kept,generated`;
/// list columns are space-separated.
void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);

/// {0, .25, .5, .75, .9, .95}.
std::vector<double> default_reduction_grid();

}  // namespace fvlm
