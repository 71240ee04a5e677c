// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <sstream>

#include "attention.hpp"
#include "fvlm/error.hpp"
#include "fvlm/model.hpp"
#include "fvlm/rng.hpp"

namespace fvlm {

namespace {

constexpr const char* kModule = "mini-vlm";

std::vector<double> zero_mean_unit(std::vector<double> v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double norm = 0.0;
    for (double& x : v) {
        x -= mean;
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) {
        x /= norm;
    }
    return v;
}

std::vector<double> random_direction(SeededRng& rng, std::size_t d) {
    std::vector<double> v(d);
    for (double& x : v) {
        x = rng.normal();
    }
    return zero_mean_unit(std::move(v));
}

}  // namespace

namespace detail {

DenseMatrix multi_head_attention(const DenseMatrix& q, const DenseMatrix& k, const DenseMatrix& v,
                                 std::size_t n_heads, const DenseMatrix* mask,
                                 std::vector<DenseMatrix>* probs) {
    const std::size_t head_dim = q.cols() / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    DenseMatrix out(q.rows(), q.cols());
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t begin = h * head_dim;
        DenseMatrix scores = scale(matmul_transposed(q.col_block(begin, head_dim), k.col_block(begin, head_dim)),
                                   inv_sqrt);
        DenseMatrix p = mask != nullptr ? masked_softmax_rows(scores, *mask) : softmax_rows(scores);
        out.set_col_block(begin, matmul(p, v.col_block(begin, head_dim)));
        if (probs != nullptr) {
            probs->push_back(std::move(p));
        }
    }
    return out;
}

DenseMatrix feed_forward(const BlockWeights& block, const DenseMatrix& normed) {
    return matmul(gelu(matmul(normed, block.w_up)), block.w_down);
}

std::vector<std::size_t> iota_positions(std::size_t n) {
    std::vector<std::size_t> out(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
}

}  // namespace detail

DenseMatrix LayerAttention::head_mean() const {
    if (heads.empty()) {
        throw Error("mini-vlm", "head_mean: layer has no heads");
    }
    DenseMatrix mean(heads.front().rows(), heads.front().cols());
    for (const auto& h : heads) {
        add_inplace(mean, h);
    }
    return scale(mean, 1.0 / static_cast<double>(heads.size()));
}

void EncoderConfig::validate() const {
    std::ostringstream os;
    if (n_patches == 0) {
        os << "n_patches must be positive";
    } else if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0) {
        os << "d_model (" << d_model << ") must be a positive multiple of n_heads (" << n_heads << ")";
    } else if (n_layers == 0) {
        os << "n_layers must be positive";
    } else if (d_ffn == 0) {
        os << "d_ffn must be positive";
    } else if (!(init_scale > 0.0)) {
        os << "init_scale must be positive";
    } else if (!(salience_gain >= 0.0)) {
        os << "salience_gain must be non-negative";
    }
    if (!os.str().empty()) {
        throw Error(kModule, "encoder config: " + os.str());
    }
}

EncoderWeights EncoderWeights::random(const EncoderConfig& config) {
    config.validate();
    const std::size_t d = config.d_model;
    const std::size_t hd = config.head_dim();
    SeededRng rng(config.seed);

    EncoderWeights w;
    w.config = config;

    const std::vector<double> cls_dir = random_direction(rng, d);
    std::vector<double> salience = random_direction(rng, d);
    const double overlap = std::inner_product(salience.begin(), salience.end(), cls_dir.begin(), 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        salience[i] -= overlap * cls_dir[i];
    }
    w.salience_direction = zero_mean_unit(std::move(salience));

    w.cls_embedding = DenseMatrix(1, d);
    for (std::size_t i = 0; i < d; ++i) {
        w.cls_embedding(0, i) = cls_dir[i] * std::sqrt(static_cast<double>(d));
    }
    w.positions = randn_matrix(rng, config.n_patches + 1, d, config.init_scale);

    for (std::size_t layer = 0; layer < config.n_layers; ++layer) {
        BlockWeights b;
        b.wq = randn_matrix(rng, d, d, config.init_scale);
        b.wk = randn_matrix(rng, d, d, config.init_scale);
        b.wv = randn_matrix(rng, d, d, config.init_scale);
        b.wo = randn_matrix(rng, d, d, config.init_scale);
        b.w_up = randn_matrix(rng, d, config.d_ffn, config.init_scale);
        b.w_down = randn_matrix(rng, config.d_ffn, d, config.init_scale);
        // Rank-one query/key terms per head: the [CLS] direction queries,
        // the salience direction answers.
        for (std::size_t h = 0; h < config.n_heads; ++h) {
            std::vector<double> head_dir(hd);
            double norm = 0.0;
            for (double& x : head_dir) {
                x = rng.normal();
                norm += x * x;
            }
            norm = std::sqrt(norm);
            for (std::size_t r = 0; r < d; ++r) {
                for (std::size_t c = 0; c < hd; ++c) {
                    const double unit = head_dir[c] / norm;
                    b.wq(r, h * hd + c) += config.salience_gain * cls_dir[r] * unit;
                    b.wk(r, h * hd + c) += config.salience_gain * w.salience_direction[r] * unit;
                }
            }
        }
        w.blocks.push_back(std::move(b));
    }
    return w;
}

DenseMatrix EncoderOutput::patch_features(std::size_t layer) const {
    const DenseMatrix& h = hidden_states.at(layer);
    std::vector<std::size_t> rows(h.rows() - 1);
    std::iota(rows.begin(), rows.end(), std::size_t{1});
    return h.gather_rows(rows);
}

VisionEncoder::VisionEncoder(const EncoderConfig& config) : m_weights(EncoderWeights::random(config)) {}

VisionEncoder::VisionEncoder(EncoderWeights weights) : m_weights(std::move(weights)) {
    m_weights.config.validate();
}

std::size_t VisionEncoder::penultimate_layer() const {
    if (m_weights.config.n_layers < 2) {
        throw Error(kModule, "penultimate layer requires an encoder with at least 2 layers");
    }
    return m_weights.config.n_layers - 2;
}

EncoderOutput VisionEncoder::forward(const DenseMatrix& patches) const {
    const EncoderConfig& cfg = m_weights.config;
    if (patches.rows() != cfg.n_patches || patches.cols() != cfg.d_model) {
        std::ostringstream os;
        os << "encoder_forward: patches " << patches.shape_string() << " expected (" << cfg.n_patches << "x"
           << cfg.d_model << ")";
        throw Error(kModule, os.str());
    }
    const std::size_t tokens = cfg.n_patches + 1;

    DenseMatrix x(0, 0);
    x.append_row(m_weights.cls_embedding.row(0));
    for (std::size_t r = 0; r < patches.rows(); ++r) {
        x.append_row(patches.row(r));
    }
    if (cfg.positional) {
        add_inplace(x, m_weights.positions);
    }

    EncoderOutput out;
    out.trace.causal = false;
    // [CLS] occupies the leading slot.
    out.trace.layout = SequenceLayout{1, cfg.n_patches, 0, 0};
    for (const BlockWeights& block : m_weights.blocks) {
        const DenseMatrix h = layer_norm_rows(x);
        DenseMatrix q = matmul(h, block.wq);
        DenseMatrix k = matmul(h, block.wk);
        DenseMatrix v = matmul(h, block.wv);
        LayerAttention layer;
        layer.positions = detail::iota_positions(tokens);
        DenseMatrix attn = detail::multi_head_attention(q, k, v, cfg.n_heads, nullptr, &layer.heads);
        add_inplace(x, matmul(attn, block.wo));
        add_inplace(x, detail::feed_forward(block, layer_norm_rows(x)));
        out.trace.layers.push_back(std::move(layer));
        out.keys.push_back(std::move(k));
        out.hidden_states.push_back(x);
    }
    return out;
}

}  // namespace fvlm
