// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "fvlm/error.hpp"
#include "fvlm/model.hpp"
#include "fvlm/probe.hpp"
#include "fvlm/rng.hpp"
#include "reference_decoder.hpp"

using namespace fvlm;

namespace {

EncoderConfig small_encoder(std::size_t n_patches = 6, std::size_t layers = 2, std::size_t heads = 2) {
    EncoderConfig cfg;
    cfg.n_patches = n_patches;
    cfg.d_model = 16;
    cfg.n_heads = heads;
    cfg.n_layers = layers;
    cfg.d_ffn = 32;
    cfg.seed = 17;
    return cfg;
}

DecoderConfig small_decoder() {
    DecoderConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 3;
    cfg.d_ffn = 24;
    cfg.vocab = 20;
    cfg.max_positions = 40;
    cfg.seed = 23;
    return cfg;
}

bool bytes_equal(const DenseMatrix& a, const DenseMatrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

double row_sum(const DenseMatrix& m, std::size_t r) {
    double s = 0.0;
    for (double v : m.row(r)) {
        s += v;
    }
    return s;
}

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

}  // namespace

TEST_CASE("encoder_forward shapes and normalization") {
    EncoderConfig cfg = small_encoder(4, 1, 1);
    const VisionEncoder enc(cfg);
    SeededRng rng(1);
    const auto out = enc.forward(randn_matrix(rng, 4, 16, 1.0));
    REQUIRE(out.trace.layers.size() == 1);
    REQUIRE(out.trace.layers[0].heads.size() == 1);
    const DenseMatrix& a = out.trace.layers[0].heads[0];
    CHECK(a.rows() == 5);
    CHECK(a.cols() == 5);
    for (std::size_t r = 0; r < 5; ++r) {
        CHECK(std::abs(row_sum(a, r) - 1.0) < 1e-9);
    }
    CHECK(out.hidden_states[0].rows() == 5);
    CHECK_THROWS_AS(enc.penultimate_layer(), Error);
    CHECK_THROWS_AS(enc.forward(DenseMatrix(3, 16)), Error);
}

TEST_CASE("encoder: identical patches give uniform [CLS] attention") {
    EncoderConfig cfg = small_encoder(8, 3, 4);
    cfg.positional = false;
    const VisionEncoder enc(cfg);
    DenseMatrix patches(8, 16);
    SeededRng rng(4);
    const auto one = randn_matrix(rng, 1, 16, 1.0);
    for (std::size_t r = 0; r < 8; ++r) {
        for (std::size_t c = 0; c < 16; ++c) {
            patches(r, c) = one(0, c);
        }
    }
    const auto out = enc.forward(patches);
    for (std::size_t layer = 0; layer < 3; ++layer) {
        const auto cls = extract_cls_attention(out.trace, layer);
        const auto [lo, hi] = std::minmax_element(cls.scores.begin(), cls.scores.end());
        CHECK(*hi - *lo < 1e-9);
    }
}

TEST_CASE("encoder: deterministic trace") {
    const EncoderConfig cfg = small_encoder();
    SeededRng r1(8);
    SeededRng r2(8);
    const auto a = VisionEncoder(cfg).forward(randn_matrix(r1, 6, 16, 1.0));
    const auto b = VisionEncoder(cfg).forward(randn_matrix(r2, 6, 16, 1.0));
    for (std::size_t l = 0; l < a.trace.layers.size(); ++l) {
        for (std::size_t h = 0; h < a.trace.layers[l].heads.size(); ++h) {
            CHECK(bytes_equal(a.trace.layers[l].heads[h], b.trace.layers[l].heads[h]));
        }
    }
}

TEST_CASE("encoder: permuting patches permutes [CLS] scores") {
    EncoderConfig cfg = small_encoder(7, 3, 2);
    cfg.positional = false;
    const VisionEncoder enc(cfg);
    SeededRng rng(31);
    const DenseMatrix patches = randn_matrix(rng, 7, 16, 1.0);
    const std::vector<std::size_t> perm{3, 6, 0, 5, 1, 2, 4};
    const auto base = extract_cls_attention(enc.forward(patches).trace, 1);
    const auto moved = extract_cls_attention(enc.forward(patches.gather_rows(perm)).trace, 1);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        CHECK(std::abs(moved.scores[i] - base.scores[perm[i]]) < 1e-12);
    }
}

TEST_CASE("encoder: planted salience draws [CLS] attention") {
    EncoderConfig cfg;  // defaults: 64 patches, d 64
    cfg.seed = 5;
    const VisionEncoder enc(cfg);
    SeededRng rng(6);
    DenseMatrix patches = randn_matrix(rng, cfg.n_patches, cfg.d_model, 1.0);
    const std::vector<std::size_t> salient{3, 40};
    for (std::size_t s : salient) {
        for (std::size_t c = 0; c < cfg.d_model; ++c) {
            patches(s, c) += 16.0 * enc.weights().salience_direction[c];
        }
    }
    const auto cls = extract_cls_attention(enc.forward(patches).trace, enc.penultimate_layer());
    for (std::size_t j = 0; j < cls.scores.size(); ++j) {
        if (j != 3 && j != 40) {
            CHECK(cls.scores[j] < std::min(cls.scores[3], cls.scores[40]));
        }
    }
}

TEST_CASE("decoder_prefill: causal trace and shapes") {
    const LanguageDecoder dec(small_decoder());
    SeededRng rng(2);
    const SequenceLayout layout{2, 5, 3, 1};
    const DenseMatrix emb = randn_matrix(rng, layout.total(), 16, 1.0);
    const auto res = dec.prefill(emb, layout);
    REQUIRE(res.trace.layers.size() == 3);
    for (const auto& layer : res.trace.layers) {
        CHECK(layer.heads.size() == 2);
        for (const auto& h : layer.heads) {
            REQUIRE(h.rows() == layout.total());
            for (std::size_t i = 0; i < h.rows(); ++i) {
                CHECK(std::abs(row_sum(h, i) - 1.0) < 1e-9);
                for (std::size_t j = i + 1; j < h.cols(); ++j) {
                    CHECK(h(i, j) == 0.0);
                }
            }
        }
    }
    CHECK(res.logits.size() == 20);
    CHECK(res.cache.tokens_seen == layout.total());
    CHECK(testing::max_abs_diff(res.logits, testing::reference_last_logits(dec.weights(), emb, iota(11))) < 1e-12);

    SUBCASE("single token") {
        const auto one = dec.prefill(randn_matrix(rng, 1, 16, 1.0), SequenceLayout{0, 0, 0, 1});
        for (const auto& layer : one.trace.layers) {
            CHECK(layer.heads[0] == DenseMatrix{{1.0}});
        }
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(dec.prefill(emb, SequenceLayout{2, 5, 2, 1}), Error);
        CHECK_THROWS_AS(dec.prefill(emb, SequenceLayout{2, 5, 2, 2}), Error);
        PrefillOptions bad;
        bad.prune = InLayerPrune{2, {0, 1, 2}};  // drops the final row
        CHECK_THROWS_AS(dec.prefill(emb, layout, bad), Error);
        bad.prune = InLayerPrune{3, iota(11)};
        CHECK_THROWS_AS(dec.prefill(emb, layout, bad), Error);
    }
}

TEST_CASE("decoder: causality under perturbation") {
    const LanguageDecoder dec(small_decoder());
    SeededRng rng(9);
    const SequenceLayout layout{0, 8, 0, 1};
    DenseMatrix emb = randn_matrix(rng, 9, 16, 1.0);
    const auto before = dec.prefill(emb, layout);
    const std::size_t j = 5;
    for (std::size_t c = 0; c < 16; ++c) {
        emb(j, c) += 3.0;
    }
    const auto after = dec.prefill(emb, layout);
    for (std::size_t l = 0; l < 3; ++l) {
        for (std::size_t h = 0; h < 2; ++h) {
            const auto& a = before.trace.layers[l].heads[h];
            const auto& b = after.trace.layers[l].heads[h];
            for (std::size_t i = 0; i < j; ++i) {
                for (std::size_t c = 0; c < 9; ++c) {
                    CHECK(a(i, c) == b(i, c));
                }
            }
        }
        // Cached keys of earlier positions are unaffected too.
        for (std::size_t i = 0; i < j; ++i) {
            for (std::size_t c = 0; c < 16; ++c) {
                CHECK(before.cache.layers[l].keys(i, c) == after.cache.layers[l].keys(i, c));
            }
        }
    }
}

TEST_CASE("decoder_step matches full recompute") {
    const LanguageDecoder dec(small_decoder());
    SeededRng rng(12);
    const SequenceLayout layout{1, 4, 2, 1};
    const DenseMatrix emb = randn_matrix(rng, layout.total(), 16, 1.0);
    const DenseMatrix extra = randn_matrix(rng, 3, 16, 1.0);

    auto res = dec.prefill(emb, layout);
    const auto zero_steps = dec.prefill(emb, layout);
    CHECK(res.logits == zero_steps.logits);

    DenseMatrix longer = emb;
    std::vector<double> logits;
    for (std::size_t t = 0; t < 3; ++t) {
        const std::size_t before = res.cache.tokens_seen;
        logits = dec.step(res.cache, extra.row(t));
        CHECK(res.cache.tokens_seen == before + 1);
        for (std::size_t l = 0; l < 3; ++l) {
            CHECK(res.cache.rows_in_layer(l) == before + 1);
        }
        longer.append_row(extra.row(t));
    }
    const auto full = dec.prefill(longer, SequenceLayout{1, 4, 5, 1});
    CHECK(testing::max_abs_diff(logits, full.logits) < 1e-9);

    SUBCASE("same cache and embedding give the same logits") {
        auto c1 = dec.prefill(emb, layout).cache;
        auto c2 = c1;
        CHECK(dec.step(c1, extra.row(0)) == dec.step(c2, extra.row(0)));
    }

    SUBCASE("empty cache") {
        KVCache empty;
        CHECK_THROWS_AS(dec.step(empty, extra.row(0)), Error);
    }
}

TEST_CASE("KV-cache equivalence on random tiny configs") {
    SeededRng rng(2024);
    for (int trial = 0; trial < 40; ++trial) {
        const DecoderConfig cfg = testing::random_tiny_decoder(rng, 1, 3);
        const LanguageDecoder dec(cfg);
        const std::size_t prompt = 1 + rng.uniform_index(10);
        const std::size_t steps = 1 + rng.uniform_index(16 - prompt);
        const DenseMatrix all = randn_matrix(rng, prompt + steps, cfg.d_model, 1.0);
        std::vector<std::size_t> first(prompt);
        std::iota(first.begin(), first.end(), std::size_t{0});
        auto res = dec.prefill(all.gather_rows(first), SequenceLayout{0, 0, prompt - 1, 1});
        std::vector<double> logits;
        for (std::size_t t = 0; t < steps; ++t) {
            logits = dec.step(res.cache, all.row(prompt + t));
        }
        const auto full = dec.prefill(all, SequenceLayout{0, 0, prompt + steps - 1, 1});
        CHECK(testing::max_abs_diff(logits, full.logits) < 1e-9);
    }
}

TEST_CASE("greedy_generate") {
    DecoderConfig one_word = small_decoder();
    one_word.vocab = 1;
    const LanguageDecoder tiny(one_word);
    SeededRng rng(3);
    const DenseMatrix emb = randn_matrix(rng, 4, 16, 1.0);
    CHECK(tiny.greedy_generate(emb, SequenceLayout{0, 3, 0, 1}, 5) == std::vector<TokenId>(5, 0));

    const LanguageDecoder dec(small_decoder());
    const auto a = dec.greedy_generate(emb, SequenceLayout{0, 3, 0, 1}, 6);
    const auto b = LanguageDecoder(small_decoder()).greedy_generate(emb, SequenceLayout{0, 3, 0, 1}, 6);
    CHECK(a.size() == 6);
    CHECK(a == b);
    CHECK_THROWS_AS(dec.greedy_generate(emb, SequenceLayout{0, 3, 0, 1}, 0), Error);

    CHECK(argmax_lowest(std::vector<double>{1.0, 3.0, 3.0, 2.0}) == 1);
}

TEST_CASE("in-layer pruning keeps per-layer cache lengths") {
    const LanguageDecoder dec(small_decoder());
    SeededRng rng(14);
    const SequenceLayout layout{1, 6, 2, 1};
    const DenseMatrix emb = randn_matrix(rng, layout.total(), 16, 1.0);
    PrefillOptions opts;
    opts.prune = InLayerPrune{2, {0, 2, 5, 7, 8, 9}};
    auto res = dec.prefill(emb, layout, opts);
    CHECK(res.cache.rows_in_layer(0) == 10);
    CHECK(res.cache.rows_in_layer(1) == 10);
    CHECK(res.cache.rows_in_layer(2) == 6);
    CHECK(res.trace.layers[2].positions == opts.prune->keep_rows);
    dec.step(res.cache, emb.row(0));
    CHECK(res.cache.rows_in_layer(0) == 11);
    CHECK(res.cache.rows_in_layer(2) == 7);
}

TEST_CASE("weight files round-trip") {
    const VisionEncoder enc(small_encoder());
    const LanguageDecoder dec(small_decoder());

    std::stringstream enc_buf;
    save_weights(enc_buf, enc.weights());
    const VisionEncoder enc2(load_encoder_weights(enc_buf));
    SeededRng rng(1);
    const DenseMatrix patches = randn_matrix(rng, 6, 16, 1.0);
    CHECK(bytes_equal(enc.forward(patches).hidden_states.back(), enc2.forward(patches).hidden_states.back()));

    std::stringstream dec_buf;
    save_weights(dec_buf, dec.weights());
    const std::string raw = dec_buf.str();
    CHECK(raw.substr(0, 8) == "FVLMDEC1");
    // First config field (d_model = 16) is little-endian right after the magic.
    CHECK(static_cast<unsigned char>(raw[8]) == 16);
    CHECK(raw[9] == 0);
    const LanguageDecoder dec2(load_decoder_weights(dec_buf));
    const DenseMatrix emb = randn_matrix(rng, 5, 16, 1.0);
    CHECK(dec.prefill(emb, SequenceLayout{0, 4, 0, 1}).logits == dec2.prefill(emb, SequenceLayout{0, 4, 0, 1}).logits);

    std::stringstream truncated(raw.substr(0, raw.size() / 2));
    CHECK_THROWS_AS(load_decoder_weights(truncated), Error);
    std::stringstream wrong(raw);
    CHECK_THROWS_AS(load_encoder_weights(wrong), Error);
}
