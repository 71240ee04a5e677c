// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: run / ablate / sweep / flops / analyze.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fvlm/analysis.hpp"
#include "fvlm/cost.hpp"
#include "fvlm/harness.hpp"
#include "fvlm/probe.hpp"
#include "fvlm/serialization.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> policy;
    std::optional<double> reduction;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config_path, "Flat key = value config file");
    cmd->add_option("--seed", opts.seed, "Run seed (u64)");
    cmd->add_option("--policy", opts.policy,
                    "random | patch_attention | faster_vlm | cls_at_layer2 | cls_merge | fastv");
    cmd->add_option("--reduction", opts.reduction, "Reduction ratio R in [0, 1)");
    cmd->add_option("--out", opts.out_dir, "Output directory (stdout when omitted)");
}

fvlm::PipelineConfig resolve_config(const CommonOptions& opts) {
    fvlm::PipelineConfig cfg = opts.config_path.empty() ? fvlm::PipelineConfig{}
                                                        : fvlm::load_config_file(opts.config_path);
    if (opts.seed) {
        cfg.seed = *opts.seed;
    }
    if (opts.policy) {
        cfg.policy = fvlm::parse_policy(*opts.policy);
    }
    if (opts.reduction) {
        cfg.reduction = *opts.reduction;
    }
    return cfg;
}

std::vector<double> parse_ratio_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) {
            throw fvlm::Error("harness", "bad reduction list entry '" + item + "'");
        }
        out.push_back(v);
    }
    if (out.empty()) {
        throw fvlm::Error("harness", "empty reduction list");
    }
    return out;
}

/// Writes `name` under the output directory, or to stdout when none is set.
template <typename Fn>
void emit(const std::string& out_dir, const std::string& name, Fn&& write) {
    if (out_dir.empty()) {
        write(std::cout);
        return;
    }
    fs::create_directories(out_dir);
    const fs::path path = fs::path(out_dir) / name;
    std::ofstream file(path, std::ios::binary);
    if (!file) {
        throw fvlm::Error("harness", "cannot write " + path.string());
    }
    write(file);
    std::cerr << "wrote " << path.string() << "\n";
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
    std::ofstream file(path, std::ios::binary);
    if (!file) {
        throw fvlm::Error("harness", "cannot write " + path.string());
    }
    file << j.dump() << "\n";
}

int cmd_run(const CommonOptions& opts, bool dump_traces, bool timing) {
    const fvlm::PipelineConfig cfg = resolve_config(opts);
    const fvlm::RunOutcome outcome = fvlm::run_pipeline_detailed(cfg);
    emit(opts.out_dir, "report.json",
         [&](std::ostream& os) { os << outcome.report.to_json(timing).dump(2) << "\n"; });
    if (dump_traces) {
        const fs::path dir = opts.out_dir.empty() ? fs::path(".") : fs::path(opts.out_dir);
        write_json_file(dir / "encoder_trace.json", outcome.encoder.trace);
        write_json_file(dir / "decoder_trace.json", outcome.baseline.trace);
    }
    if (!timing) {
        std::cerr << "wall time " << outcome.report.wall_time_ms << " ms\n";
    }
    return 0;
}

int cmd_table(const CommonOptions& opts, const std::string& ratios, bool ablation) {
    const fvlm::PipelineConfig cfg = resolve_config(opts);
    const std::vector<double> grid = ratios.empty() ? fvlm::default_reduction_grid() : parse_ratio_list(ratios);
    const auto rows = ablation ? fvlm::run_ablation_suite(cfg, grid) : fvlm::run_sweep(cfg, grid);
    emit(opts.out_dir, ablation ? "ablation.csv" : "sweep.csv",
         [&](std::ostream& os) { fvlm::write_ablation_csv(os, rows); });
    return 0;
}

struct FlopsOptions {
    double n = 2880;
    double d = 4096;
    double m = 11008;
    std::size_t layers = 32;
    std::string ratios = "0.5,0.95";
};

int cmd_flops(const CommonOptions& opts, const FlopsOptions& f) {
    const fvlm::cost::CostModelConfig cfg{f.n, f.d, f.m, f.layers};
    std::vector<double> ratios = parse_ratio_list(f.ratios);
    if (opts.reduction) {
        ratios = {*opts.reduction};
    }
    const auto schedules = fvlm::cost::comparison_schedules(cfg, ratios);
    const auto rows = fvlm::cost::flops_table(cfg, schedules);
    emit(opts.out_dir, "flops.csv", [&](std::ostream& os) { fvlm::cost::write_flops_csv(os, rows); });
    return 0;
}

int cmd_analyze(const CommonOptions& opts, const std::string& trace_path, std::optional<std::size_t> layer,
                std::size_t row_len) {
    std::ifstream in(trace_path);
    if (!in) {
        throw fvlm::Error("harness", "cannot open trace file '" + trace_path + "'");
    }
    fvlm::AttentionTrace trace;
    try {
        trace = nlohmann::json::parse(in).get<fvlm::AttentionTrace>();
    } catch (const nlohmann::json::exception& e) {
        throw fvlm::Error("harness", std::string("malformed trace file: ") + e.what());
    }

    std::vector<fvlm::VisualAttentionProfile> profiles;
    if (!trace.causal) {
        const std::size_t l = layer.value_or(trace.layers.size() >= 2 ? trace.layers.size() - 2 : 0);
        profiles.push_back(fvlm::to_profile(fvlm::extract_cls_attention(trace, l)));
        profiles.push_back(fvlm::extract_patch_attention(trace, l));
    } else {
        std::vector<std::size_t> layers;
        if (layer) {
            layers.push_back(*layer);
        } else {
            for (std::size_t l = 0; l < trace.layers.size(); ++l) {
                layers.push_back(l);
            }
        }
        for (std::size_t l : layers) {
            for (auto src : {fvlm::AttentionSource::Image, fvlm::AttentionSource::Text, fvlm::AttentionSource::Last}) {
                if (src == fvlm::AttentionSource::Text && trace.layout.txt_len == 0) {
                    continue;
                }
                profiles.push_back(fvlm::extract_visual_profile(trace, trace.layout, l, src));
            }
        }
    }

    emit(opts.out_dir, "profiles.csv", [&](std::ostream& os) { fvlm::write_profile_csv(os, profiles); });
    emit(opts.out_dir, "cdf.csv", [&](std::ostream& os) {
        bool header = true;
        for (const auto& p : profiles) {
            fvlm::write_cdf_csv(os, std::string(fvlm::to_string(p.source)), p.layer, fvlm::dispersion_stat(p.values),
                                header);
            header = false;
        }
    });
    emit(opts.out_dir, "stats.csv", [&](std::ostream& os) {
        os << "source,layer,slope,pearson_r,top_share_20,entropy\n" << std::setprecision(12);
        for (const auto& p : profiles) {
            const auto shift = fvlm::shift_stat(p.values);
            const auto disp = fvlm::dispersion_stat(p.values);
            os << fvlm::to_string(p.source) << ',' << p.layer << ',' << shift.slope << ',' << shift.pearson_r << ','
               << disp.top_share(0.2) << ',' << disp.entropy << '\n';
        }
    });
    if (row_len > 0) {
        emit(opts.out_dir, "row_profiles.csv", [&](std::ostream& os) {
            os << "column,score,source,layer\n" << std::setprecision(17);
            for (const auto& p : profiles) {
                const auto prof = fvlm::row_profile(p.values, row_len);
                for (std::size_t c = 0; c < prof.size(); ++c) {
                    os << c << ',' << prof[c] << ',' << fvlm::to_string(p.source) << ',' << p.layer << '\n';
                }
            }
        });
    }
    return 0;
}

void print_error(const std::string& module, const std::string& message, const std::string& hash) {
    nlohmann::json err = {{"error", {{"module", module}, {"message", message}}}};
    if (!hash.empty()) {
        err["error"]["config_hash"] = hash;
    }
    std::cerr << err.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Visual token pruning toolkit: [CLS]-attention pruning, baselines, diagnostics, cost model"};
    app.require_subcommand(1);

    CommonOptions opts;
    bool dump_traces = false;
    bool timing = false;
    auto* run = app.add_subcommand("run", "Run one pipeline and write report.json");
    add_common(run, opts);
    run->add_flag("--dump-traces", dump_traces, "Also write encoder_trace.json and decoder_trace.json");
    run->add_flag("--timing", timing, "Include wall time in the report (breaks byte-identical output)");

    std::string ratios;
    auto* ablate = app.add_subcommand("ablate", "Every pruning strategy at every reduction ratio");
    add_common(ablate, opts);
    ablate->add_option("--reductions", ratios, "Comma-separated ratios (default 0,.25,.5,.75,.9,.95)");

    auto* sweep = app.add_subcommand("sweep", "One policy over a reduction-ratio grid");
    add_common(sweep, opts);
    sweep->add_option("--reductions", ratios, "Comma-separated ratios (default 0,.25,.5,.75,.9,.95)");

    FlopsOptions flops_opts;
    auto* flops = app.add_subcommand("flops", "Analytic prefill FLOPs and KV storage table");
    add_common(flops, opts);
    flops->add_option("--n", flops_opts.n, "Visual tokens")->capture_default_str();
    flops->add_option("--d", flops_opts.d, "Hidden size")->capture_default_str();
    flops->add_option("--m", flops_opts.m, "FFN intermediate size")->capture_default_str();
    flops->add_option("--layers", flops_opts.layers, "Decoder layers")->capture_default_str();
    flops->add_option("--reductions", flops_opts.ratios, "Comma-separated ratios")->capture_default_str();

    std::string trace_path;
    std::optional<std::size_t> layer;
    std::size_t row_len = 0;
    auto* analyze = app.add_subcommand("analyze", "Shift/dispersion CSVs from a trace file");
    add_common(analyze, opts);
    analyze->add_option("--trace", trace_path, "Trace JSON written by `run --dump-traces`")->required();
    analyze->add_option("--layer", layer, "Layer to analyze (encoder: penultimate; decoder: all)");
    analyze->add_option("--row-len", row_len, "Image grid width for row profiles");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        print_error("cli", e.what(), "");
        return 2;
    }

    try {
        if (*run) {
            return cmd_run(opts, dump_traces, timing);
        }
        if (*ablate) {
            return cmd_table(opts, ratios, true);
        }
        if (*sweep) {
            return cmd_table(opts, ratios, false);
        }
        if (*flops) {
            return cmd_flops(opts, flops_opts);
        }
        if (*analyze) {
            return cmd_analyze(opts, trace_path, layer, row_len);
        }
    } catch (const fvlm::PipelineError& e) {
        print_error(e.module(), e.message(), e.config_hash());
        return 1;
    } catch (const fvlm::Error& e) {
        print_error(e.module(), e.message(), "");
        return 1;
    } catch (const std::exception& e) {
        print_error("cli", e.what(), "");
        return 1;
    }
    return 1;
}
