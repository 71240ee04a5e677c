// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "fvlm/model.hpp"

namespace fvlm {

/// Which query rows an attention view is averaged over.
///   cls    - encoder row 0 ([CLS])
///   patch  - encoder patch rows
///   image / text / last - decoder image rows, text rows, final row
enum class AttentionSource { Cls, Patch, Image, Text, Last };

std::string_view to_string(AttentionSource source);
AttentionSource parse_attention_source(std::string_view name);

/// [CLS] attention over the n image patches; the [CLS]->[CLS] entry is
/// dropped and the rest is not renormalized.
struct ClsAttention {
    std::vector<double> scores;
    std::size_t source_layer = 0;
};

/// Attention received by each image token, averaged over the query rows of
/// one source segment and over heads. Tokens absent from the layer (pruned
/// earlier) receive 0.
struct VisualAttentionProfile {
    std::vector<double> values;
    AttentionSource source = AttentionSource::Last;
    std::size_t layer = 0;
};

ClsAttention extract_cls_attention(const AttentionTrace& encoder_trace, std::size_t layer);

/// Mean attention each patch receives from all patch queries ([CLS] row
/// excluded), head-averaged.
VisualAttentionProfile extract_patch_attention(const AttentionTrace& encoder_trace, std::size_t layer);

VisualAttentionProfile extract_visual_profile(const AttentionTrace& decoder_trace, const SequenceLayout& layout,
                                              std::size_t layer, AttentionSource source);

VisualAttentionProfile to_profile(const ClsAttention& cls);

/// CSV with header `position,score,source,layer`.
void write_profile_csv(std::ostream& out, const std::vector<VisualAttentionProfile>& profiles);

}  // namespace fvlm
