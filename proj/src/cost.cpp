// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "fvlm/cost.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "fvlm/error.hpp"

namespace fvlm::cost {

namespace {
constexpr const char* kModule = "cost-model";
}  // namespace

void CostModelConfig::validate() const {
    if (!(n > 0.0 && d > 0.0 && m > 0.0 && layers > 0 && bytes_per_element > 0.0)) {
        throw Error(kModule, "cost config fields must all be positive");
    }
}

double PruneSchedule::tokens_at(const CostModelConfig& cfg, std::size_t layer_index) const {
    if (kind == Kind::AtLayer && layer_index < layer) {
        return cfg.n;
    }
    return kept;
}

void PruneSchedule::validate(const CostModelConfig& cfg) const {
    if (!(kept > 0.0 && kept <= cfg.n)) {
        std::ostringstream os;
        os << "schedule keeps " << kept << " of " << cfg.n << " tokens";
        throw Error(kModule, os.str());
    }
    if (kind == Kind::AtLayer && layer >= cfg.layers) {
        std::ostringstream os;
        os << "schedule prunes at layer " << layer << " of a " << cfg.layers << "-layer model";
        throw Error(kModule, os.str());
    }
}

double prefill_layer_flops(double n, double d, double m) {
    return 8.0 * n * d * d + 4.0 * n * n * d + 6.0 * n * d * m;
}

double decode_layer_flops(double n, double d, double m, DecodeFormula formula) {
    const double ffn = formula == DecodeFormula::FullSequence ? 6.0 * n * d * m : 6.0 * d * m;
    return 8.0 * d * d + 4.0 * n * d + ffn;
}

double flops_reduction_closed_form(double n, double d, double m, double R) {
    if (!(R >= 0.0 && R <= 1.0)) {
        throw Error(kModule, "reduction ratio outside [0, 1]");
    }
    return R + (2.0 * n / (4.0 * d + 2.0 * n + 3.0 * m)) * (R - R * R);
}

double pipeline_prefill_flops(const CostModelConfig& cfg, const PruneSchedule& schedule) {
    cfg.validate();
    schedule.validate(cfg);
    double total = 0.0;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        total += prefill_layer_flops(schedule.tokens_at(cfg, l), cfg.d, cfg.m);
    }
    return total;
}

double pipeline_decode_flops(const CostModelConfig& cfg, const PruneSchedule& schedule, DecodeFormula formula) {
    cfg.validate();
    schedule.validate(cfg);
    double total = 0.0;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        total += decode_layer_flops(schedule.tokens_at(cfg, l), cfg.d, cfg.m, formula);
    }
    return total;
}

double kv_storage_bytes(const CostModelConfig& cfg, const PruneSchedule& schedule) {
    cfg.validate();
    schedule.validate(cfg);
    double tokens = 0.0;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        tokens += schedule.tokens_at(cfg, l);
    }
    return tokens * 2.0 * cfg.d * cfg.bytes_per_element;
}

double bytes_to_mib(double bytes) { return bytes / (1024.0 * 1024.0); }

std::vector<FlopsRow> flops_table(const CostModelConfig& cfg, std::span<const NamedSchedule> schedules) {
    std::vector<FlopsRow> rows;
    rows.reserve(schedules.size());
    for (const auto& s : schedules) {
        FlopsRow row;
        row.method = s.method;
        row.tokens = s.schedule.kept;
        row.reduction = 1.0 - s.schedule.kept / cfg.n;
        row.tflops = pipeline_prefill_flops(cfg, s.schedule) / 1e12;
        row.storage_mib = bytes_to_mib(kv_storage_bytes(cfg, s.schedule));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<NamedSchedule> comparison_schedules(const CostModelConfig& cfg, std::span<const double> ratios) {
    cfg.validate();
    std::vector<NamedSchedule> out{{"unpruned", PruneSchedule::before_llm(cfg.n)}};
    for (double R : ratios) {
        if (!(R >= 0.0 && R < 1.0)) {
            throw Error(kModule, "reduction ratio outside [0, 1)");
        }
        const double kept = std::max(1.0, std::floor(cfg.n * (1.0 - R) + 1e-9));
        out.push_back({"fastv", PruneSchedule::at_layer(2, kept)});
        out.push_back({"faster_vlm", PruneSchedule::before_llm(kept)});
    }
    return out;
}

void write_flops_csv(std::ostream& out, std::span<const FlopsRow> rows) {
    out << "method,reduction,tokens,tflops,storage_mib\n";
    for (const auto& r : rows) {
        out << r.method << ',' << std::fixed << std::setprecision(4) << r.reduction << ','
            << std::setprecision(0) << r.tokens << ',' << std::setprecision(4) << r.tflops << ','
            << std::setprecision(2) << r.storage_mib << '\n';
        out << std::defaultfloat;
    }
}

}  // namespace fvlm::cost
