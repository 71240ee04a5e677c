// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "fvlm/cost.hpp"
#include "fvlm/harness.hpp"
#include "fvlm/serialization.hpp"

using namespace fvlm;

namespace {

PipelineConfig small_config(PolicyId policy, double R, std::uint64_t seed = 1) {
    PipelineConfig cfg;
    cfg.encoder.n_patches = 64;
    cfg.encoder.d_model = 32;
    cfg.encoder.d_ffn = 64;
    cfg.decoder.d_model = 32;
    cfg.decoder.d_ffn = 64;
    cfg.decoder.vocab = 64;
    cfg.workload.grid_cols = 8;
    cfg.workload.n_salient = 3;
    cfg.policy = policy;
    cfg.reduction = R;
    cfg.max_new = 4;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("config parsing") {
    std::istringstream in(
        "# comment\n"
        "policy = fastv\n"
        "reduction = 0.75   # trailing comment\n"
        "\n"
        "encoder.n_patches = 16\n"
        "keep_count = 3\n"
        "position_ids = original\n");
    const PipelineConfig cfg = parse_config(in);
    CHECK(cfg.policy == PolicyId::FastV);
    CHECK(cfg.reduction == 0.75);
    CHECK(cfg.encoder.n_patches == 16);
    CHECK(cfg.keep_count == std::optional<std::size_t>{3});
    CHECK(cfg.position_mode == PositionMode::Original);

    // Round trip through the canonical key/value form.
    PipelineConfig again;
    for (const auto& [k, v] : cfg.to_key_values()) {
        apply_config_value(again, k, v);
    }
    CHECK(again.to_key_values() == cfg.to_key_values());
    CHECK(again.hash() == cfg.hash());
    CHECK(cfg.hash_hex().size() == 16);

    PipelineConfig other = cfg;
    other.seed = 99;
    CHECK(other.hash() != cfg.hash());

    PipelineConfig bad;
    CHECK_THROWS_AS(apply_config_value(bad, "nonsense", "1"), Error);
    CHECK_THROWS_AS(apply_config_value(bad, "reduction", "abc"), Error);
    CHECK_THROWS_AS(apply_config_value(bad, "policy", "magic"), Error);
    CHECK_THROWS_AS(apply_config_value(bad, "encoder.n_heads", "-2"), Error);
    std::istringstream no_equals("policy fastv\n");
    CHECK_THROWS_AS(parse_config(no_equals), Error);
    bad.reduction = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK_THROWS_AS(load_config_file("/nonexistent/fvlm.cfg"), Error);
}

TEST_CASE("workload construction") {
    const PipelineConfig cfg = small_config(PolicyId::FasterVlm, 0.5);
    const auto enc = EncoderWeights::random(cfg.encoder);
    const auto a = make_workload(cfg.workload, enc, cfg.decoder.vocab, 7);
    const auto b = make_workload(cfg.workload, enc, cfg.decoder.vocab, 7);
    CHECK(a.patches == b.patches);
    CHECK(a.salient == b.salient);
    CHECK(a.salient.size() == 3);
    CHECK(std::is_sorted(a.salient.begin(), a.salient.end()));
    CHECK(a.patches.rows() == 64);
    CHECK(a.txt_tokens.size() == cfg.workload.txt_len);

    CHECK(salient_recall(std::vector<std::size_t>{1, 2, 5}, std::vector<std::size_t>{2, 5, 9, 11}) == 0.5);
    CHECK(salient_recall(std::vector<std::size_t>{1}, std::vector<std::size_t>{}) == 1.0);

    WorkloadSpec too_many = cfg.workload;
    too_many.n_salient = 80;
    CHECK_THROWS_AS(make_workload(too_many, enc, cfg.decoder.vocab, 1), Error);
}

TEST_CASE("R=0 reproduces the unpruned generation for every policy") {
    for (PolicyId p : all_policies()) {
        const RunReport r = run_pipeline(small_config(p, 0.0, 5));
        CAPTURE(policy_name(p));
        CHECK(r.generated_tokens == r.baseline_tokens);
        CHECK(r.decision.kept.size() == 64);
        CHECK(r.prefill_flops_pruned == r.prefill_flops_unpruned);
    }
}

TEST_CASE("budget and monotone FLOPs across the reduction grid") {
    for (PolicyId p : all_policies()) {
        double previous_flops = 0.0;
        bool first = true;
        for (double R : default_reduction_grid()) {
            const RunOutcome out = run_pipeline_detailed(small_config(p, R, 2));
            const RunReport& r = out.report;
            CAPTURE(policy_name(p));
            CAPTURE(R);
            CHECK(r.decision.kept.size() == keep_count(64, R));
            if (r.decision.applied_at == AppliedAt::before_llm()) {
                CHECK(r.decoder_visual_tokens == keep_count(64, R));
            }
            if (!first) {
                CHECK(r.prefill_flops_pruned < previous_flops);
            }
            previous_flops = r.prefill_flops_pruned;
            first = false;
            CHECK(out.pruned.logits.size() == 64);
            CHECK(std::all_of(out.pruned.logits.begin(), out.pruned.logits.end(),
                              [](double v) { return std::isfinite(v); }));
        }
    }
}

TEST_CASE("determinism and report shape") {
    const PipelineConfig cfg = small_config(PolicyId::ClsMerge, 0.75, 11);
    const std::string a = run_pipeline(cfg).to_json().dump(2);
    const std::string b = run_pipeline(cfg).to_json().dump(2);
    CHECK(a == b);
    const auto j = nlohmann::json::parse(a);
    CHECK_FALSE(j.contains("wall_time_ms"));
    CHECK(run_pipeline(cfg).to_json(true).contains("wall_time_ms"));
    CHECK(j["config_hash"] == cfg.hash_hex());
    for (const char* source : {"cls", "patch", "image", "text", "last"}) {
        CHECK(j["attention"].contains(source));
    }
    const PruneDecision round = j["decision"].get<PruneDecision>();
    CHECK(round == run_pipeline(cfg).decision);
}

TEST_CASE("planted tokens survive [CLS] pruning") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        PipelineConfig cfg = small_config(PolicyId::FasterVlm, 0.9, seed);
        cfg.keep_count = cfg.workload.n_salient;
        CHECK(run_pipeline(cfg).salient_recall == 1.0);
    }
}

TEST_CASE("ablation suite") {
    const double ratios[] = {0.5, 0.9};
    const auto rows = run_ablation_suite(small_config(PolicyId::FasterVlm, 0.5, 3), ratios);
    REQUIRE(rows.size() == 12);
    const auto find = [&](const std::string& name, double R) {
        return *std::find_if(rows.begin(), rows.end(),
                             [&](const AblationRow& r) { return r.strategy == name && r.reduction == R; });
    };
    for (double R : ratios) {
        const auto before = find("faster_vlm", R);
        const auto inside = find("cls_at_layer2", R);
        CHECK(before.kept == inside.kept);
        CHECK(before.prefill_flops < inside.prefill_flops);
        CHECK(inside.applied_at == "llm_layer_2");
        CHECK(find("cls_merge", R).keep_count == before.keep_count);
    }
    CHECK(find("faster_vlm", 0.9).salient_recall >= find("random", 0.9).salient_recall);

    std::ostringstream os;
    write_ablation_csv(os, rows);
    const std::string csv = os.str();
    CHECK(csv.rfind("strategy,reduction,keep_count,applied_at,salient_recall,prefill_flops,kv_bytes,kept,generated\n",
                    0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);

    const auto sweep = run_sweep(small_config(PolicyId::FastV, 0.5, 3), ratios);
    REQUIRE(sweep.size() == 2);
    CHECK(sweep[0].strategy == "fastv");
}

TEST_CASE("errors carry the module and config hash") {
    PipelineConfig cfg = small_config(PolicyId::ClsMerge, 0.95, 1);
    cfg.k_merge = 5;
    try {
        run_pipeline(cfg);
        FAIL("expected a pipeline error");
    } catch (const PipelineError& e) {
        CHECK(e.module() == "prune-policies");
        CHECK(e.config_hash() == cfg.hash_hex());
        const auto j = e.to_json();
        CHECK(j["error"]["config_hash"] == cfg.hash_hex());
        CHECK(j["error"]["module"] == "prune-policies");
    }

    PipelineConfig shallow = small_config(PolicyId::FasterVlm, 0.5, 1);
    shallow.encoder.n_layers = 1;
    CHECK_THROWS_AS(run_pipeline(shallow), PipelineError);
}
