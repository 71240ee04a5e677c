// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <ostream>
#include <thread>

#include "fvlm/cost.hpp"
#include "fvlm/harness.hpp"
#include "fvlm/probe.hpp"
#include "fvlm/rng.hpp"
#include "fvlm/serialization.hpp"

namespace fvlm {

namespace {

// Independent random streams derived from the run seed.
enum Stream : std::uint64_t { kEncoderStream = 1, kDecoderStream, kProjectorStream, kWorkloadStream, kPolicyStream };

SourceStats summarize(std::span<const double> scores) {
    SourceStats s;
    if (scores.size() >= 2) {
        s.shift = shift_stat(scores);
    }
    const DispersionStat d = dispersion_stat(scores);
    s.top_share_20 = d.top_share(0.2);
    s.entropy = d.entropy;
    return s;
}

DenseMatrix stack_rows(std::initializer_list<const DenseMatrix*> parts, std::size_t cols) {
    DenseMatrix out(0, cols);
    for (const DenseMatrix* part : parts) {
        for (std::size_t r = 0; r < part->rows(); ++r) {
            out.append_row(part->row(r));
        }
    }
    return out;
}

std::vector<std::size_t> original_position_ids(const SequenceLayout& full, std::span<const std::size_t> kept) {
    std::vector<std::size_t> ids;
    for (std::size_t r = 0; r < full.img_begin(); ++r) {
        ids.push_back(r);
    }
    for (std::size_t k : kept) {
        ids.push_back(full.img_begin() + k);
    }
    for (std::size_t r = full.txt_begin(); r < full.total(); ++r) {
        ids.push_back(r);
    }
    return ids;
}

RunOutcome run_impl(const PipelineConfig& cfg, const std::string& hash) {
    const auto started = std::chrono::steady_clock::now();
    cfg.validate();

    EncoderConfig enc_cfg = cfg.encoder;
    enc_cfg.seed = mix_seed(cfg.seed, kEncoderStream);
    DecoderConfig dec_cfg = cfg.decoder;
    dec_cfg.seed = mix_seed(cfg.seed, kDecoderStream);
    const VisionEncoder encoder(enc_cfg);
    const LanguageDecoder decoder(dec_cfg);
    SeededRng projector_rng(mix_seed(cfg.seed, kProjectorStream));
    // Linear stand-in for the multimodal projector.
    const DenseMatrix projector = randn_matrix(projector_rng, enc_cfg.d_model, dec_cfg.d_model,
                                               1.0 / std::sqrt(static_cast<double>(enc_cfg.d_model)));
    const SyntheticWorkload workload =
        make_workload(cfg.workload, encoder.weights(), dec_cfg.vocab, mix_seed(cfg.seed, kWorkloadStream));

    RunOutcome out;
    out.encoder = encoder.forward(workload.patches);
    const std::size_t feature_layer = encoder.penultimate_layer();
    const DenseMatrix features = out.encoder.patch_features(feature_layer);
    const std::size_t n = features.rows();

    const DenseMatrix sys_emb = decoder.embed_tokens(workload.sys_tokens);
    const DenseMatrix txt_emb = decoder.embed_tokens(workload.txt_tokens);
    const DenseMatrix start_emb = decoder.embed_tokens(std::vector<TokenId>{workload.start_token});
    auto assemble = [&](const DenseMatrix& visual_features) {
        const DenseMatrix visual = matmul(visual_features, projector);
        return stack_rows({&sys_emb, &visual, &txt_emb, &start_emb}, dec_cfg.d_model);
    };

    const SequenceLayout full_layout{cfg.workload.sys_len, n, cfg.workload.txt_len, 1};
    const DenseMatrix full_sequence = assemble(features);
    out.baseline = decoder.prefill(full_sequence, full_layout);
    RunReport& report = out.report;
    report.baseline_tokens = decoder.greedy_generate(full_sequence, full_layout, cfg.max_new);

    PruneDecision decision;
    switch (cfg.policy) {
        case PolicyId::Random: {
            SeededRng rng(mix_seed(cfg.seed, kPolicyStream));
            decision = random_policy(rng, n, cfg.reduction, cfg.keep_count);
            break;
        }
        case PolicyId::PatchAttention:
            decision = patch_attention_policy(out.encoder.trace, cfg.reduction, cfg.keep_count);
            break;
        case PolicyId::FasterVlm:
            decision = faster_vlm_policy(out.encoder.trace, cfg.reduction, cfg.keep_count);
            break;
        case PolicyId::ClsAtLayer2:
            decision = cls_at_layer2_policy(out.encoder.trace, cfg.reduction, cfg.prune_layer, cfg.keep_count);
            break;
        case PolicyId::ClsMerge: {
            std::vector<std::size_t> patch_rows(n);
            std::iota(patch_rows.begin(), patch_rows.end(), std::size_t{1});
            const DenseMatrix keys = out.encoder.keys.at(feature_layer).gather_rows(patch_rows);
            MergeDecision merged =
                cls_merge_policy(out.encoder.trace, keys, cfg.reduction, cfg.k_merge, cfg.keep_count);
            decision = std::move(merged.decision);
            out.merge = std::move(merged.merge);
            break;
        }
        case PolicyId::FastV:
            decision = fastv_policy(out.baseline.trace, cfg.reduction, cfg.prune_layer, cfg.keep_count);
            break;
    }

    DenseMatrix sequence;
    SequenceLayout layout = full_layout;
    PrefillOptions options;
    if (decision.applied_at.kind == AppliedAt::Kind::BeforeLlm) {
        const DenseMatrix kept_features =
            out.merge ? apply_merge(features, decision, *out.merge) : apply_before_llm(features, decision);
        sequence = assemble(kept_features);
        layout.img_len = decision.kept.size();
        if (cfg.position_mode == PositionMode::Original) {
            options.position_ids = original_position_ids(full_layout, decision.kept);
        }
    } else {
        sequence = full_sequence;
        options.prune = to_in_layer_prune(decision, full_layout);
    }
    out.pruned = decoder.prefill(sequence, layout, options);
    report.generated_tokens = decoder.greedy_generate(sequence, layout, cfg.max_new, options);

    report.config = cfg.to_key_values();
    report.config_hash = hash;
    report.salient = workload.salient;
    report.salient_recall = salient_recall(decision.kept, workload.salient);
    report.decoder_visual_tokens = layout.img_len;

    report.attention["cls"] = summarize(extract_cls_attention(out.encoder.trace, feature_layer).scores);
    report.attention["patch"] = summarize(extract_patch_attention(out.encoder.trace, feature_layer).values);
    for (AttentionSource src : {AttentionSource::Image, AttentionSource::Text, AttentionSource::Last}) {
        if (src == AttentionSource::Text && full_layout.txt_len == 0) {
            continue;
        }
        const auto profile = extract_visual_profile(out.baseline.trace, full_layout, cfg.analysis_layer, src);
        report.attention[std::string(to_string(src))] = summarize(profile.values);
    }

    const cost::CostModelConfig cost_cfg{static_cast<double>(n), static_cast<double>(dec_cfg.d_model),
                                         static_cast<double>(dec_cfg.d_ffn), dec_cfg.n_layers};
    const auto unpruned = cost::PruneSchedule::before_llm(static_cast<double>(n));
    const double kept = static_cast<double>(decision.kept.size());
    const auto schedule = decision.applied_at.kind == AppliedAt::Kind::BeforeLlm
                              ? cost::PruneSchedule::before_llm(kept)
                              : cost::PruneSchedule::at_layer(decision.applied_at.layer, kept);
    report.prefill_flops_unpruned = cost::pipeline_prefill_flops(cost_cfg, unpruned);
    report.prefill_flops_pruned = cost::pipeline_prefill_flops(cost_cfg, schedule);
    report.kv_bytes_unpruned = cost::kv_storage_bytes(cost_cfg, unpruned);
    report.kv_bytes_pruned = cost::kv_storage_bytes(cost_cfg, schedule);

    report.decision = std::move(decision);
    report.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return out;
}

AblationRow to_row(const RunReport& r) {
    AblationRow row;
    row.strategy = std::string(policy_name(r.decision.policy));
    row.reduction = r.decision.budget_R;
    row.keep_count = r.decision.kept.size();
    row.applied_at = r.decision.applied_at.to_string();
    row.salient_recall = r.salient_recall;
    row.prefill_flops = r.prefill_flops_pruned;
    row.kv_bytes = r.kv_bytes_pruned;
    row.kept = r.decision.kept;
    row.generated_tokens = r.generated_tokens;
    return row;
}

std::vector<AblationRow> run_all(std::vector<PipelineConfig> configs) {
    std::vector<AblationRow> rows(configs.size());
    const std::size_t width = std::max(1U, std::thread::hardware_concurrency());
    for (std::size_t begin = 0; begin < configs.size(); begin += width) {
        const std::size_t end = std::min(configs.size(), begin + width);
        std::vector<std::future<RunReport>> batch;
        for (std::size_t i = begin; i < end; ++i) {
            batch.push_back(std::async(std::launch::async, [&configs, i] { return run_pipeline(configs[i]); }));
        }
        for (std::size_t i = begin; i < end; ++i) {
            rows[i] = to_row(batch[i - begin].get());
        }
    }
    return rows;
}

template <typename T>
std::string join(const std::vector<T>& values) {
    std::ostringstream os;
    for (std::size_t i = 0; i < values.size(); ++i) {
        os << (i ? " " : "") << values[i];
    }
    return os.str();
}

}  // namespace

nlohmann::json RunReport::to_json(bool include_timing) const {
    nlohmann::json attn = nlohmann::json::object();
    for (const auto& [name, s] : attention) {
        attn[name] = {{"shift", s.shift}, {"top_share_20", s.top_share_20}, {"entropy", s.entropy}};
    }
    nlohmann::json j = {
        {"config", config},
        {"config_hash", config_hash},
        {"decision", decision},
        {"attention", attn},
        {"salient", salient},
        {"metrics",
         {{"salient_recall", salient_recall},
          {"keep_count", decision.kept.size()},
          {"decoder_visual_tokens", decoder_visual_tokens}}},
        {"flops",
         {{"prefill_unpruned", prefill_flops_unpruned},
          {"prefill_pruned", prefill_flops_pruned},
          {"prefill_reduction", 1.0 - prefill_flops_pruned / prefill_flops_unpruned},
          {"kv_bytes_unpruned", kv_bytes_unpruned},
          {"kv_bytes_pruned", kv_bytes_pruned}}},
        {"baseline_tokens", baseline_tokens},
        {"generated_tokens", generated_tokens},
    };
    if (include_timing) {
        j["wall_time_ms"] = wall_time_ms;
    }
    return j;
}

nlohmann::json PipelineError::to_json() const {
    return {{"error", {{"module", module()}, {"message", message()}, {"config_hash", m_config_hash}}}};
}

RunOutcome run_pipeline_detailed(const PipelineConfig& cfg) {
    const std::string hash = cfg.hash_hex();
    try {
        return run_impl(cfg, hash);
    } catch (const PipelineError&) {
        throw;
    } catch (const Error& e) {
        throw PipelineError(e, hash);
    }
}

RunReport run_pipeline(const PipelineConfig& cfg) { return run_pipeline_detailed(cfg).report; }

std::vector<AblationRow> run_ablation_suite(const PipelineConfig& base, std::span<const double> ratios) {
    std::vector<PipelineConfig> configs;
    for (PolicyId policy : all_policies()) {
        for (double R : ratios) {
            PipelineConfig cfg = base;
            cfg.policy = policy;
            cfg.reduction = R;
            configs.push_back(cfg);
        }
    }
    return run_all(std::move(configs));
}

std::vector<AblationRow> run_sweep(const PipelineConfig& base, std::span<const double> ratios) {
    std::vector<PipelineConfig> configs;
    for (double R : ratios) {
        PipelineConfig cfg = base;
        cfg.reduction = R;
        configs.push_back(cfg);
    }
    return run_all(std::move(configs));
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
    out << "strategy,reduction,keep_count,applied_at,salient_recall,prefill_flops,kv_bytes,kept,generated\n";
    out << std::setprecision(12);
    for (const auto& r : rows) {
        out << r.strategy << ',' << r.reduction << ',' << r.keep_count << ',' << r.applied_at << ','
            << r.salient_recall << ',' << r.prefill_flops << ',' << r.kv_bytes << ',' << join(r.kept) << ','
            << join(r.generated_tokens) << '\n';
    }
}

std::vector<double> default_reduction_grid() { return {0.0, 0.25, 0.5, 0.75, 0.9, 0.95}; }

}  // namespace fvlm
