// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fvlm/analysis.hpp"
#include "fvlm/model.hpp"
#include "fvlm/prune.hpp"
#include "json.hpp"

namespace fvlm {

// JSON forms used by reports and trace files.
//
// PruneDecision: {"policy", "R", "tau" (number or null), "kept": [...],
//                 "applied_at": "before_llm" | "llm_layer_<k>", "n_total"}
// AttentionTrace: {"causal", "layout": {sys_len, img_len, txt_len, out_len},
//                  "layers": [{"positions": [...],
//                              "heads": [{"rows", "cols", "data": [...]}]}]}

void to_json(nlohmann::json& j, const DenseMatrix& m);
void from_json(const nlohmann::json& j, DenseMatrix& m);

void to_json(nlohmann::json& j, const SequenceLayout& layout);
void from_json(const nlohmann::json& j, SequenceLayout& layout);

void to_json(nlohmann::json& j, const AttentionTrace& trace);
void from_json(const nlohmann::json& j, AttentionTrace& trace);

void to_json(nlohmann::json& j, const PruneDecision& decision);
void from_json(const nlohmann::json& j, PruneDecision& decision);

void to_json(nlohmann::json& j, const ShiftStat& stat);

}  // namespace fvlm
