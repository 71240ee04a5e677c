// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "fvlm/serialization.hpp"

#include "fvlm/error.hpp"

namespace fvlm {

void to_json(nlohmann::json& j, const DenseMatrix& m) {
    j = nlohmann::json{{"rows", m.rows()},
                       {"cols", m.cols()},
                       {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

void from_json(const nlohmann::json& j, DenseMatrix& m) {
    m = DenseMatrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                    j.at("data").get<std::vector<double>>());
}

void to_json(nlohmann::json& j, const SequenceLayout& layout) {
    j = nlohmann::json{{"sys_len", layout.sys_len},
                       {"img_len", layout.img_len},
                       {"txt_len", layout.txt_len},
                       {"out_len", layout.out_len}};
}

void from_json(const nlohmann::json& j, SequenceLayout& layout) {
    j.at("sys_len").get_to(layout.sys_len);
    j.at("img_len").get_to(layout.img_len);
    j.at("txt_len").get_to(layout.txt_len);
    j.at("out_len").get_to(layout.out_len);
}

void to_json(nlohmann::json& j, const AttentionTrace& trace) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : trace.layers) {
        layers.push_back({{"positions", layer.positions}, {"heads", layer.heads}});
    }
    j = nlohmann::json{{"causal", trace.causal}, {"layout", trace.layout}, {"layers", std::move(layers)}};
}

void from_json(const nlohmann::json& j, AttentionTrace& trace) {
    j.at("causal").get_to(trace.causal);
    j.at("layout").get_to(trace.layout);
    trace.layers.clear();
    for (const auto& jl : j.at("layers")) {
        LayerAttention layer;
        jl.at("positions").get_to(layer.positions);
        jl.at("heads").get_to(layer.heads);
        for (const auto& h : layer.heads) {
            if (h.rows() != layer.positions.size() || h.cols() != layer.positions.size()) {
                throw Error("attention-probe", "trace head shape does not match its positions");
            }
        }
        trace.layers.push_back(std::move(layer));
    }
}

void to_json(nlohmann::json& j, const PruneDecision& decision) {
    j = nlohmann::json{{"policy", std::string(policy_name(decision.policy))},
                       {"R", decision.budget_R},
                       {"tau", decision.tau ? nlohmann::json(*decision.tau) : nlohmann::json(nullptr)},
                       {"kept", decision.kept},
                       {"applied_at", decision.applied_at.to_string()},
                       {"n_total", decision.n_total}};
}

void from_json(const nlohmann::json& j, PruneDecision& decision) {
    decision.policy = parse_policy(j.at("policy").get<std::string>());
    j.at("R").get_to(decision.budget_R);
    const auto& tau = j.at("tau");
    decision.tau = tau.is_null() ? std::nullopt : std::optional<double>(tau.get<double>());
    j.at("kept").get_to(decision.kept);
    decision.applied_at = AppliedAt::parse(j.at("applied_at").get<std::string>());
    decision.n_total = j.value("n_total", std::size_t{0});
}

void to_json(nlohmann::json& j, const ShiftStat& stat) {
    j = nlohmann::json{{"slope", stat.slope}, {"pearson_r", stat.pearson_r}};
}

}  // namespace fvlm
