// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "fvlm/error.hpp"
#include "fvlm/model.hpp"

namespace fvlm {

namespace {

constexpr const char* kModule = "mini-vlm";
constexpr std::array<char, 8> kEncoderMagic{'F', 'V', 'L', 'M', 'E', 'N', 'C', '1'};
constexpr std::array<char, 8> kDecoderMagic{'F', 'V', 'L', 'M', 'D', 'E', 'C', '1'};
// Refuse to allocate absurd tensors from a corrupt header.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

class Writer {
public:
    explicit Writer(std::ostream& out) : m_out(out) {}

    void bytes(const std::array<char, 8>& raw) { m_out.write(raw.data(), raw.size()); }

    void u64(std::uint64_t v) {
        std::array<char, 8> raw{};
        for (std::size_t i = 0; i < 8; ++i) {
            raw[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
        }
        m_out.write(raw.data(), raw.size());
    }

    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void matrix(const DenseMatrix& m) {
        u64(m.rows());
        u64(m.cols());
        for (double v : m.data()) {
            f64(v);
        }
    }

    void finish() {
        if (!m_out) {
            throw Error(kModule, "failed writing weight file");
        }
    }

private:
    std::ostream& m_out;
};

class Reader {
public:
    explicit Reader(std::istream& in) : m_in(in) {}

    void expect_magic(const std::array<char, 8>& magic) {
        std::array<char, 8> raw{};
        read(raw.data(), raw.size());
        if (raw != magic) {
            throw Error(kModule, "weight file has wrong magic; expected " + std::string(magic.data(), magic.size()));
        }
    }

    std::uint64_t u64() {
        std::array<unsigned char, 8> raw{};
        read(reinterpret_cast<char*>(raw.data()), raw.size());
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(raw[i]) << (8 * i);
        }
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    DenseMatrix matrix(std::size_t rows, std::size_t cols) {
        const std::uint64_t r = u64();
        const std::uint64_t c = u64();
        if (r != rows || c != cols) {
            throw Error(kModule, "weight file tensor shape does not match its config header");
        }
        if (r * c > kMaxElements) {
            throw Error(kModule, "weight file tensor too large");
        }
        std::vector<double> data(r * c);
        for (double& v : data) {
            v = f64();
        }
        return DenseMatrix(rows, cols, std::move(data));
    }

private:
    void read(char* dst, std::size_t n) {
        m_in.read(dst, static_cast<std::streamsize>(n));
        if (m_in.gcount() != static_cast<std::streamsize>(n)) {
            throw Error(kModule, "weight file truncated");
        }
    }

    std::istream& m_in;
};

void write_block(Writer& w, const BlockWeights& b) {
    for (const DenseMatrix* m : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w_up, &b.w_down}) {
        w.matrix(*m);
    }
}

BlockWeights read_block(Reader& r, std::size_t d, std::size_t d_ffn) {
    BlockWeights b;
    b.wq = r.matrix(d, d);
    b.wk = r.matrix(d, d);
    b.wv = r.matrix(d, d);
    b.wo = r.matrix(d, d);
    b.w_up = r.matrix(d, d_ffn);
    b.w_down = r.matrix(d_ffn, d);
    return b;
}

std::size_t checked_size(std::uint64_t v) {
    if (v > kMaxElements) {
        throw Error(kModule, "weight file config field out of range");
    }
    return static_cast<std::size_t>(v);
}

}  // namespace

void save_weights(std::ostream& out, const EncoderWeights& weights) {
    const EncoderConfig& c = weights.config;
    Writer w(out);
    w.bytes(kEncoderMagic);
    w.u64(c.n_patches);
    w.u64(c.d_model);
    w.u64(c.n_heads);
    w.u64(c.n_layers);
    w.u64(c.d_ffn);
    w.u64(c.positional ? 1 : 0);
    w.f64(c.init_scale);
    w.f64(c.salience_gain);
    w.u64(c.seed);
    w.matrix(weights.cls_embedding);
    w.matrix(weights.positions);
    for (const auto& b : weights.blocks) {
        write_block(w, b);
    }
    w.matrix(DenseMatrix(1, weights.salience_direction.size(), weights.salience_direction));
    w.finish();
}

void save_weights(std::ostream& out, const DecoderWeights& weights) {
    const DecoderConfig& c = weights.config;
    Writer w(out);
    w.bytes(kDecoderMagic);
    w.u64(c.d_model);
    w.u64(c.n_heads);
    w.u64(c.n_layers);
    w.u64(c.d_ffn);
    w.u64(c.vocab);
    w.u64(c.max_positions);
    w.f64(c.init_scale);
    w.u64(c.seed);
    w.matrix(weights.token_embedding);
    w.matrix(weights.positions);
    for (const auto& b : weights.blocks) {
        write_block(w, b);
    }
    w.matrix(weights.lm_head);
    w.finish();
}

EncoderWeights load_encoder_weights(std::istream& in) {
    Reader r(in);
    r.expect_magic(kEncoderMagic);
    EncoderWeights w;
    EncoderConfig& c = w.config;
    c.n_patches = checked_size(r.u64());
    c.d_model = checked_size(r.u64());
    c.n_heads = checked_size(r.u64());
    c.n_layers = checked_size(r.u64());
    c.d_ffn = checked_size(r.u64());
    c.positional = r.u64() != 0;
    c.init_scale = r.f64();
    c.salience_gain = r.f64();
    c.seed = r.u64();
    c.validate();
    w.cls_embedding = r.matrix(1, c.d_model);
    w.positions = r.matrix(c.n_patches + 1, c.d_model);
    for (std::size_t i = 0; i < c.n_layers; ++i) {
        w.blocks.push_back(read_block(r, c.d_model, c.d_ffn));
    }
    DenseMatrix dir = r.matrix(1, c.d_model);
    w.salience_direction.assign(dir.data().begin(), dir.data().end());
    return w;
}

DecoderWeights load_decoder_weights(std::istream& in) {
    Reader r(in);
    r.expect_magic(kDecoderMagic);
    DecoderWeights w;
    DecoderConfig& c = w.config;
    c.d_model = checked_size(r.u64());
    c.n_heads = checked_size(r.u64());
    c.n_layers = checked_size(r.u64());
    c.d_ffn = checked_size(r.u64());
    c.vocab = checked_size(r.u64());
    c.max_positions = checked_size(r.u64());
    c.init_scale = r.f64();
    c.seed = r.u64();
    c.validate();
    w.token_embedding = r.matrix(c.vocab, c.d_model);
    w.positions = r.matrix(c.max_positions, c.d_model);
    for (std::size_t i = 0; i < c.n_layers; ++i) {
        w.blocks.push_back(read_block(r, c.d_model, c.d_ffn));
    }
    w.lm_head = r.matrix(c.d_model, c.vocab);
    return w;
}

}  // namespace fvlm
