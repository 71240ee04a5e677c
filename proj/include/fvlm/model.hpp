// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "fvlm/tensor.hpp"

namespace fvlm {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Toy vision encoder: global (bidirectional) attention over
/// [CLS; patch_0 ... patch_{n-1}], pre-norm blocks with a 2-layer GELU MLP.
struct EncoderConfig {
    std::size_t n_patches = 64;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 3;
    std::size_t d_ffn = 256;
    /// Learned absolute position embeddings added to the input sequence.
    bool positional = true;
    /// Stddev of randomly initialized weights.
    double init_scale = 0.02;
    /// Strength of the planted [CLS]-query / salience-key alignment in every
    /// attention layer. 0 gives a purely random encoder.
    double salience_gain = 0.5;
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return d_model / n_heads; }
    void validate() const;
};

/// Toy causal language decoder: pre-RMSNorm blocks, plain 2-matrix GELU FFN of
/// width d_ffn, learned absolute positions, untied LM head.
struct DecoderConfig {
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 4;
    std::size_t d_ffn = 256;
    std::size_t vocab = 256;
    std::size_t max_positions = 512;
    double init_scale = 0.125;
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return d_model / n_heads; }
    void validate() const;
};

/// Decoder input ordering: [system; image; text; output].
struct SequenceLayout {
    std::size_t sys_len = 0;
    std::size_t img_len = 0;
    std::size_t txt_len = 0;
    std::size_t out_len = 1;

    std::size_t total() const { return sys_len + img_len + txt_len + out_len; }
    std::size_t img_begin() const { return sys_len; }
    std::size_t txt_begin() const { return sys_len + img_len; }
    std::size_t out_begin() const { return sys_len + img_len + txt_len; }

    friend bool operator==(const SequenceLayout&, const SequenceLayout&) = default;
};

// ---------------------------------------------------------------------------
// Traces and caches
// ---------------------------------------------------------------------------

/// Attention probabilities of one layer, one matrix per head
/// (rows = queries, cols = keys). `positions[i]` is the original sequence
/// index of row/column i; it differs from the identity only after in-layer
/// pruning has dropped tokens.
struct LayerAttention {
    std::vector<DenseMatrix> heads;
    std::vector<std::size_t> positions;

    /// Arithmetic mean over heads.
    DenseMatrix head_mean() const;
};

struct AttentionTrace {
    std::vector<LayerAttention> layers;
    SequenceLayout layout;
    bool causal = false;
};

struct LayerCache {
    DenseMatrix keys;
    DenseMatrix values;
};

/// Per-layer key/value rows. Every layer holds one row per token it has
/// processed, so after in-layer pruning early layers hold more rows than later
/// ones; appending a token always adds exactly one row to every layer.
struct KVCache {
    std::vector<LayerCache> layers;
    /// Tokens fed to the decoder so far (prefill + steps).
    std::size_t tokens_seen = 0;
    /// Position id the next appended token receives.
    std::size_t next_position = 0;

    bool empty() const { return layers.empty() || tokens_seen == 0; }
    std::size_t rows_in_layer(std::size_t layer) const { return layers.at(layer).keys.rows(); }
};

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

struct BlockWeights {
    DenseMatrix wq, wk, wv, wo;  // d x d
    DenseMatrix w_up;            // d x d_ffn
    DenseMatrix w_down;          // d_ffn x d
};

struct EncoderWeights {
    EncoderConfig config;
    DenseMatrix cls_embedding;  // 1 x d
    DenseMatrix positions;      // (n_patches + 1) x d
    std::vector<BlockWeights> blocks;
    /// Unit, zero-mean direction that planted attention keys respond to.
    std::vector<double> salience_direction;

    static EncoderWeights random(const EncoderConfig& config);
};

struct DecoderWeights {
    DecoderConfig config;
    DenseMatrix token_embedding;  // vocab x d
    DenseMatrix positions;        // max_positions x d
    std::vector<BlockWeights> blocks;
    DenseMatrix lm_head;  // d x vocab

    static DecoderWeights random(const DecoderConfig& config);
};

/// Flat binary weight files, all scalars little-endian:
///   magic      8 bytes  "FVLMENC1" or "FVLMDEC1"
///   config     u64/f64 fields in declaration order (bool stored as u64)
///   tensors    each as u64 rows, u64 cols, rows*cols f64 (row-major)
/// Encoder tensor order: cls_embedding, positions, per block {wq wk wv wo
/// w_up w_down}, salience_direction (1 x d). Decoder: token_embedding,
/// positions, per block {...}, lm_head.
void save_weights(std::ostream& out, const EncoderWeights& weights);
void save_weights(std::ostream& out, const DecoderWeights& weights);
EncoderWeights load_encoder_weights(std::istream& in);
DecoderWeights load_decoder_weights(std::istream& in);

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

struct EncoderOutput {
    /// Output of each layer, (n_patches + 1) x d, [CLS] at row 0.
    std::vector<DenseMatrix> hidden_states;
    /// Attention keys (all heads concatenated) computed inside each layer.
    std::vector<DenseMatrix> keys;
    AttentionTrace trace;

    /// Patch rows (1..n) of layer `layer`'s output.
    DenseMatrix patch_features(std::size_t layer) const;
};

class VisionEncoder {
public:
    explicit VisionEncoder(const EncoderConfig& config);
    explicit VisionEncoder(EncoderWeights weights);

    const EncoderConfig& config() const { return m_weights.config; }
    const EncoderWeights& weights() const { return m_weights; }

    /// Index of the second-to-last layer; the layer visual features and
    /// [CLS] attention are taken from. Requires n_layers >= 2.
    std::size_t penultimate_layer() const;

    EncoderOutput forward(const DenseMatrix& patches) const;

private:
    EncoderWeights m_weights;
};

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

/// Drop tokens from the residual stream before layer `layer`. `keep_rows`
/// are sequence indices, strictly increasing, and must include the final
/// position.
struct InLayerPrune {
    std::size_t layer = 2;
    std::vector<std::size_t> keep_rows;
};

struct PrefillOptions {
    /// Explicit position ids (one per input row); contiguous 0..l-1 otherwise.
    std::optional<std::vector<std::size_t>> position_ids;
    std::optional<InLayerPrune> prune;
};

struct PrefillResult {
    std::vector<double> logits;
    KVCache cache;
    AttentionTrace trace;
};

using TokenId = std::int32_t;

/// Index of the largest entry; ties go to the lowest index.
TokenId argmax_lowest(std::span<const double> logits);

class LanguageDecoder {
public:
    explicit LanguageDecoder(const DecoderConfig& config);
    explicit LanguageDecoder(DecoderWeights weights);

    const DecoderConfig& config() const { return m_weights.config; }
    const DecoderWeights& weights() const { return m_weights; }

    DenseMatrix embed_tokens(std::span<const TokenId> ids) const;

    PrefillResult prefill(const DenseMatrix& embeddings, const SequenceLayout& layout,
                          const PrefillOptions& options = {}) const;

    /// Appends one token to `cache` and returns next-token logits.
    std::vector<double> step(KVCache& cache, std::span<const double> embedding) const;

    /// Greedy decoding: the prefill's argmax followed by up to max_new - 1
    /// cached steps. Returns exactly max_new ids.
    std::vector<TokenId> greedy_generate(const DenseMatrix& embeddings, const SequenceLayout& layout,
                                         std::size_t max_new, const PrefillOptions& options = {}) const;

private:
    DecoderWeights m_weights;
};

}  // namespace fvlm
