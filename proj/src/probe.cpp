// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "fvlm/probe.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

#include "fvlm/error.hpp"

namespace fvlm {

namespace {

constexpr const char* kModule = "attention-probe";

const LayerAttention& checked_layer(const AttentionTrace& trace, std::size_t layer) {
    if (layer >= trace.layers.size()) {
        std::ostringstream os;
        os << "layer " << layer << " out of range for trace with " << trace.layers.size() << " layers";
        throw Error(kModule, os.str());
    }
    return trace.layers[layer];
}

void require_encoder_trace(const AttentionTrace& trace) {
    if (trace.causal || trace.layout.sys_len != 1) {
        throw Error(kModule, "expected an encoder trace with [CLS] at index 0");
    }
}

}  // namespace

std::string_view to_string(AttentionSource source) {
    switch (source) {
        case AttentionSource::Cls:
            return "cls";
        case AttentionSource::Patch:
            return "patch";
        case AttentionSource::Image:
            return "image";
        case AttentionSource::Text:
            return "text";
        case AttentionSource::Last:
            return "last";
    }
    return "unknown";
}

AttentionSource parse_attention_source(std::string_view name) {
    for (auto s : {AttentionSource::Cls, AttentionSource::Patch, AttentionSource::Image, AttentionSource::Text,
                   AttentionSource::Last}) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw Error(kModule, "unknown attention source '" + std::string(name) + "'");
}

ClsAttention extract_cls_attention(const AttentionTrace& encoder_trace, std::size_t layer) {
    require_encoder_trace(encoder_trace);
    const LayerAttention& attn = checked_layer(encoder_trace, layer);
    ClsAttention out;
    out.source_layer = layer;
    const std::size_t n = encoder_trace.layout.img_len;
    out.scores.assign(n, 0.0);
    for (const DenseMatrix& head : attn.heads) {
        for (std::size_t j = 0; j < n; ++j) {
            out.scores[j] += head(0, j + 1);
        }
    }
    for (double& s : out.scores) {
        s /= static_cast<double>(attn.heads.size());
    }
    return out;
}

VisualAttentionProfile extract_patch_attention(const AttentionTrace& encoder_trace, std::size_t layer) {
    require_encoder_trace(encoder_trace);
    const DenseMatrix mean = checked_layer(encoder_trace, layer).head_mean();
    const std::size_t n = encoder_trace.layout.img_len;
    VisualAttentionProfile out;
    out.source = AttentionSource::Patch;
    out.layer = layer;
    out.values.assign(n, 0.0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out.values[j] += mean(i, j + 1);
        }
    }
    for (double& v : out.values) {
        v /= static_cast<double>(n);
    }
    return out;
}

VisualAttentionProfile extract_visual_profile(const AttentionTrace& decoder_trace, const SequenceLayout& layout,
                                              std::size_t layer, AttentionSource source) {
    if (!decoder_trace.causal) {
        throw Error(kModule, "extract_visual_profile expects a decoder trace");
    }
    const LayerAttention& attn = checked_layer(decoder_trace, layer);

    std::size_t seg_begin = 0;
    std::size_t seg_len = 0;
    switch (source) {
        case AttentionSource::Image:
            seg_begin = layout.img_begin();
            seg_len = layout.img_len;
            break;
        case AttentionSource::Text:
            seg_begin = layout.txt_begin();
            seg_len = layout.txt_len;
            break;
        case AttentionSource::Last:
            seg_begin = layout.total() - 1;
            seg_len = layout.total() == 0 ? 0 : 1;
            break;
        default:
            throw Error(kModule, "decoder profiles take image, text or last sources");
    }
    if (seg_len == 0) {
        throw Error(kModule, std::string("source segment '") + std::string(to_string(source)) + "' is empty");
    }

    const DenseMatrix mean = attn.head_mean();
    VisualAttentionProfile out;
    out.source = source;
    out.layer = layer;
    out.values.assign(layout.img_len, 0.0);
    std::size_t query_rows = 0;
    for (std::size_t r = 0; r < attn.positions.size(); ++r) {
        const std::size_t qpos = attn.positions[r];
        if (qpos < seg_begin || qpos >= seg_begin + seg_len) {
            continue;
        }
        ++query_rows;
        for (std::size_t c = 0; c < attn.positions.size(); ++c) {
            const std::size_t kpos = attn.positions[c];
            if (kpos >= layout.img_begin() && kpos < layout.txt_begin()) {
                out.values[kpos - layout.img_begin()] += mean(r, c);
            }
        }
    }
    if (query_rows == 0) {
        throw Error(kModule, std::string("source segment '") + std::string(to_string(source)) +
                                 "' has no rows at this layer");
    }
    for (double& v : out.values) {
        v /= static_cast<double>(query_rows);
    }
    return out;
}

VisualAttentionProfile to_profile(const ClsAttention& cls) {
    return VisualAttentionProfile{cls.scores, AttentionSource::Cls, cls.source_layer};
}

void write_profile_csv(std::ostream& out, const std::vector<VisualAttentionProfile>& profiles) {
    out << "position,score,source,layer\n";
    out << std::setprecision(17);
    for (const auto& p : profiles) {
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            out << i << ',' << p.values[i] << ',' << to_string(p.source) << ',' << p.layer << '\n';
        }
    }
}

}  // namespace fvlm
