// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <sstream>

#include "attention.hpp"
#include "fvlm/error.hpp"
#include "fvlm/model.hpp"
#include "fvlm/rng.hpp"

namespace fvlm {

namespace {

constexpr const char* kModule = "mini-vlm";

std::vector<double> project_last_row(const DenseMatrix& x, const DenseMatrix& lm_head) {
    DenseMatrix normed = rms_norm_rows(x.gather_rows(std::vector<std::size_t>{x.rows() - 1}));
    DenseMatrix logits = matmul(normed, lm_head);
    return {logits.data().begin(), logits.data().end()};
}

void validate_prune(const InLayerPrune& prune, std::size_t total, std::size_t n_layers) {
    std::ostringstream os;
    if (prune.layer >= n_layers) {
        os << "prune layer " << prune.layer << " outside decoder of " << n_layers << " layers";
    } else if (prune.keep_rows.empty() || prune.keep_rows.back() != total - 1) {
        os << "prune keep_rows must retain the final position " << total - 1;
    } else if (!std::is_sorted(prune.keep_rows.begin(), prune.keep_rows.end()) ||
               std::adjacent_find(prune.keep_rows.begin(), prune.keep_rows.end()) != prune.keep_rows.end()) {
        os << "prune keep_rows must be strictly increasing";
    }
    if (!os.str().empty()) {
        throw Error(kModule, os.str());
    }
}

}  // namespace

void DecoderConfig::validate() const {
    std::ostringstream os;
    if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0) {
        os << "d_model (" << d_model << ") must be a positive multiple of n_heads (" << n_heads << ")";
    } else if (n_layers == 0) {
        os << "n_layers must be positive";
    } else if (d_ffn == 0) {
        os << "d_ffn must be positive";
    } else if (vocab == 0) {
        os << "vocab must be positive";
    } else if (max_positions == 0) {
        os << "max_positions must be positive";
    } else if (!(init_scale > 0.0)) {
        os << "init_scale must be positive";
    }
    if (!os.str().empty()) {
        throw Error(kModule, "decoder config: " + os.str());
    }
}

DecoderWeights DecoderWeights::random(const DecoderConfig& config) {
    config.validate();
    const std::size_t d = config.d_model;
    SeededRng rng(config.seed);
    DecoderWeights w;
    w.config = config;
    w.token_embedding = randn_matrix(rng, config.vocab, d, 1.0);
    w.positions = randn_matrix(rng, config.max_positions, d, config.init_scale);
    for (std::size_t layer = 0; layer < config.n_layers; ++layer) {
        BlockWeights b;
        b.wq = randn_matrix(rng, d, d, config.init_scale);
        b.wk = randn_matrix(rng, d, d, config.init_scale);
        b.wv = randn_matrix(rng, d, d, config.init_scale);
        b.wo = randn_matrix(rng, d, d, config.init_scale);
        b.w_up = randn_matrix(rng, d, config.d_ffn, config.init_scale);
        b.w_down = randn_matrix(rng, config.d_ffn, d, config.init_scale);
        w.blocks.push_back(std::move(b));
    }
    w.lm_head = randn_matrix(rng, d, config.vocab, config.init_scale);
    return w;
}

TokenId argmax_lowest(std::span<const double> logits) {
    if (logits.empty()) {
        throw Error(kModule, "argmax over empty logits");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) {
            best = i;
        }
    }
    return static_cast<TokenId>(best);
}

LanguageDecoder::LanguageDecoder(const DecoderConfig& config) : m_weights(DecoderWeights::random(config)) {}

LanguageDecoder::LanguageDecoder(DecoderWeights weights) : m_weights(std::move(weights)) {
    m_weights.config.validate();
}

DenseMatrix LanguageDecoder::embed_tokens(std::span<const TokenId> ids) const {
    std::vector<std::size_t> rows;
    rows.reserve(ids.size());
    for (TokenId id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= m_weights.config.vocab) {
            std::ostringstream os;
            os << "token id " << id << " outside vocab of " << m_weights.config.vocab;
            throw Error(kModule, os.str());
        }
        rows.push_back(static_cast<std::size_t>(id));
    }
    if (rows.empty()) {
        return DenseMatrix(0, m_weights.config.d_model);
    }
    return m_weights.token_embedding.gather_rows(rows);
}

PrefillResult LanguageDecoder::prefill(const DenseMatrix& embeddings, const SequenceLayout& layout,
                                       const PrefillOptions& options) const {
    const DecoderConfig& cfg = m_weights.config;
    if (layout.out_len != 1) {
        throw Error(kModule, "decoder_prefill: layout must end in exactly one output token");
    }
    if (embeddings.rows() != layout.total() || embeddings.cols() != cfg.d_model) {
        std::ostringstream os;
        os << "decoder_prefill: embeddings " << embeddings.shape_string() << " do not match layout total "
           << layout.total() << " x d_model " << cfg.d_model;
        throw Error(kModule, os.str());
    }
    const std::size_t total = layout.total();
    std::vector<std::size_t> position_ids = options.position_ids.value_or(detail::iota_positions(total));
    if (position_ids.size() != total) {
        throw Error(kModule, "decoder_prefill: position_ids length does not match sequence length");
    }
    for (std::size_t p : position_ids) {
        if (p >= cfg.max_positions) {
            std::ostringstream os;
            os << "decoder_prefill: position id " << p << " exceeds max_positions " << cfg.max_positions;
            throw Error(kModule, os.str());
        }
    }
    if (options.prune) {
        validate_prune(*options.prune, total, cfg.n_layers);
    }

    DenseMatrix x = add(embeddings, m_weights.positions.gather_rows(position_ids));
    std::vector<std::size_t> active = detail::iota_positions(total);

    PrefillResult result;
    result.trace.causal = true;
    result.trace.layout = layout;
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        if (options.prune && options.prune->layer == i) {
            active = options.prune->keep_rows;
            x = x.gather_rows(active);
        }
        const BlockWeights& block = m_weights.blocks[i];
        const DenseMatrix h = rms_norm_rows(x);
        DenseMatrix q = matmul(h, block.wq);
        DenseMatrix k = matmul(h, block.wk);
        DenseMatrix v = matmul(h, block.wv);
        const DenseMatrix mask = causal_mask(x.rows());
        LayerAttention layer;
        layer.positions = active;
        DenseMatrix attn = detail::multi_head_attention(q, k, v, cfg.n_heads, &mask, &layer.heads);
        add_inplace(x, matmul(attn, block.wo));
        add_inplace(x, detail::feed_forward(block, rms_norm_rows(x)));
        result.trace.layers.push_back(std::move(layer));
        result.cache.layers.push_back(LayerCache{std::move(k), std::move(v)});
    }
    result.logits = project_last_row(x, m_weights.lm_head);
    result.cache.tokens_seen = total;
    result.cache.next_position = position_ids.back() + 1;
    return result;
}

std::vector<double> LanguageDecoder::step(KVCache& cache, std::span<const double> embedding) const {
    const DecoderConfig& cfg = m_weights.config;
    if (cache.empty()) {
        throw Error(kModule, "decoder_step: cache is empty; run prefill first");
    }
    if (cache.layers.size() != cfg.n_layers) {
        throw Error(kModule, "decoder_step: cache layer count does not match decoder");
    }
    if (embedding.size() != cfg.d_model) {
        throw Error(kModule, "decoder_step: embedding width does not match d_model");
    }
    if (cache.next_position >= cfg.max_positions) {
        throw Error(kModule, "decoder_step: position exceeds max_positions");
    }
    DenseMatrix x(1, cfg.d_model, std::vector<double>(embedding.begin(), embedding.end()));
    for (std::size_t c = 0; c < cfg.d_model; ++c) {
        x(0, c) += m_weights.positions(cache.next_position, c);
    }
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        const BlockWeights& block = m_weights.blocks[i];
        const DenseMatrix h = rms_norm_rows(x);
        DenseMatrix q = matmul(h, block.wq);
        LayerCache& layer = cache.layers[i];
        layer.keys.append_row(matmul(h, block.wk).row(0));
        layer.values.append_row(matmul(h, block.wv).row(0));
        DenseMatrix attn = detail::multi_head_attention(q, layer.keys, layer.values, cfg.n_heads, nullptr, nullptr);
        add_inplace(x, matmul(attn, block.wo));
        add_inplace(x, detail::feed_forward(block, rms_norm_rows(x)));
    }
    ++cache.tokens_seen;
    ++cache.next_position;
    return project_last_row(x, m_weights.lm_head);
}

std::vector<TokenId> LanguageDecoder::greedy_generate(const DenseMatrix& embeddings, const SequenceLayout& layout,
                                                      std::size_t max_new, const PrefillOptions& options) const {
    if (max_new == 0) {
        throw Error(kModule, "greedy_generate: max_new must be at least 1");
    }
    PrefillResult prefilled = prefill(embeddings, layout, options);
    std::vector<TokenId> out{argmax_lowest(prefilled.logits)};
    while (out.size() < max_new) {
        const TokenId id = out.back();
        std::vector<double> logits =
            step(prefilled.cache, m_weights.token_embedding.row(static_cast<std::size_t>(id)));
        out.push_back(argmax_lowest(logits));
    }
    return out;
}

}  // namespace fvlm
