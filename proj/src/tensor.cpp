// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "fvlm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fvlm/error.hpp"
#include "fvlm/rng.hpp"

namespace fvlm {

namespace {

constexpr const char* kModule = "core-tensor";

[[noreturn]] void shape_error(const char* op, const DenseMatrix& a, const DenseMatrix& b) {
    std::ostringstream os;
    os << op << ": incompatible shapes " << a.shape_string() << " and " << b.shape_string();
    throw Error(kModule, os.str());
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
    if (m_data.size() != rows * cols) {
        std::ostringstream os;
        os << "data length " << m_data.size() << " does not match shape " << shape_string();
        throw Error(kModule, os.str());
    }
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    m_rows = rows.size();
    m_cols = m_rows == 0 ? 0 : rows.begin()->size();
    m_data.reserve(m_rows * m_cols);
    for (const auto& r : rows) {
        if (r.size() != m_cols) {
            throw Error(kModule, "ragged initializer list");
        }
        m_data.insert(m_data.end(), r.begin(), r.end());
    }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        out(i, i) = 1.0;
    }
    return out;
}

void DenseMatrix::append_row(std::span<const double> values) {
    if (m_rows == 0 && m_cols == 0) {
        m_cols = values.size();
    }
    if (values.size() != m_cols) {
        std::ostringstream os;
        os << "append_row: row of length " << values.size() << " into " << shape_string();
        throw Error(kModule, os.str());
    }
    m_data.insert(m_data.end(), values.begin(), values.end());
    ++m_rows;
}

DenseMatrix DenseMatrix::gather_rows(std::span<const std::size_t> indices) const {
    DenseMatrix out(indices.size(), m_cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= m_rows) {
            std::ostringstream os;
            os << "gather_rows: index " << indices[i] << " out of range for " << shape_string();
            throw Error(kModule, os.str());
        }
        std::copy_n(m_data.begin() + static_cast<std::ptrdiff_t>(indices[i] * m_cols), m_cols,
                    out.m_data.begin() + static_cast<std::ptrdiff_t>(i * m_cols));
    }
    return out;
}

DenseMatrix DenseMatrix::col_block(std::size_t begin, std::size_t count) const {
    if (begin + count > m_cols) {
        throw Error(kModule, "col_block: range exceeds " + shape_string());
    }
    DenseMatrix out(m_rows, count);
    for (std::size_t r = 0; r < m_rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) {
            out(r, c) = (*this)(r, begin + c);
        }
    }
    return out;
}

void DenseMatrix::set_col_block(std::size_t begin, const DenseMatrix& block) {
    if (block.rows() != m_rows || begin + block.cols() > m_cols) {
        shape_error("set_col_block", *this, block);
    }
    for (std::size_t r = 0; r < m_rows; ++r) {
        for (std::size_t c = 0; c < block.cols(); ++c) {
            (*this)(r, begin + c) = block(r, c);
        }
    }
}

std::string DenseMatrix::shape_string() const {
    std::ostringstream os;
    os << "(" << m_rows << "x" << m_cols << ")";
    return os.str();
}

bool DenseMatrix::all_finite() const noexcept {
    return std::all_of(m_data.begin(), m_data.end(), [](double v) { return std::isfinite(v); });
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) {
        shape_error("matmul", a, b);
    }
    DenseMatrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) {
                continue;
            }
            auto b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out_row[j] += aik * b_row[j];
            }
        }
    }
    return out;
}

DenseMatrix matmul_transposed(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.cols()) {
        shape_error("matmul_transposed", a, b);
    }
    DenseMatrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto a_row = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto b_row = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += a_row[k] * b_row[k];
            }
            out(i, j) = acc;
        }
    }
    return out;
}

DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix out = a;
    add_inplace(out, b);
    return out;
}

void add_inplace(DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        shape_error("add", a, b);
    }
    auto lhs = a.data();
    auto rhs = b.data();
    for (std::size_t i = 0; i < lhs.size(); ++i) {
        lhs[i] += rhs[i];
    }
}

DenseMatrix scale(const DenseMatrix& a, double factor) {
    DenseMatrix out = a;
    for (double& v : out.data()) {
        v *= factor;
    }
    return out;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        shape_error("max_abs_diff", a, b);
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    }
    return worst;
}

DenseMatrix softmax_rows(const DenseMatrix& x) {
    DenseMatrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto dst = out.row(r);
        const double peak = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            dst[c] = std::exp(in[c] - peak);
            total += dst[c];
        }
        for (double& v : dst) {
            v /= total;
        }
    }
    return out;
}

DenseMatrix masked_softmax_rows(const DenseMatrix& x, const DenseMatrix& mask) {
    if (x.rows() != mask.rows() || x.cols() != mask.cols()) {
        shape_error("masked_softmax_rows", x, mask);
    }
    DenseMatrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto m = mask.row(r);
        auto dst = out.row(r);
        double peak = -std::numeric_limits<double>::infinity();
        bool any_open = false;
        for (std::size_t c = 0; c < in.size(); ++c) {
            if (m[c] > kMaskSentinel) {
                peak = std::max(peak, in[c] + m[c]);
                any_open = true;
            }
        }
        if (!any_open) {
            std::ostringstream os;
            os << "masked_softmax_rows: row " << r << " is fully masked";
            throw Error(kModule, os.str());
        }
        double total = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            dst[c] = m[c] > kMaskSentinel ? std::exp(in[c] + m[c] - peak) : 0.0;
            total += dst[c];
        }
        for (double& v : dst) {
            v /= total;
        }
    }
    return out;
}

DenseMatrix causal_mask(std::size_t n) {
    DenseMatrix mask(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            mask(i, j) = kMaskSentinel;
        }
    }
    return mask;
}

DenseMatrix randn_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale) {
    if (!(scale > 0.0)) {
        throw Error(kModule, "randn_matrix: scale must be positive");
    }
    DenseMatrix out(rows, cols);
    for (double& v : out.data()) {
        v = scale * rng.normal();
    }
    return out;
}

DenseMatrix layer_norm_rows(const DenseMatrix& x, double eps) {
    DenseMatrix out(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        double mean = 0.0;
        for (double v : in) {
            mean += v;
        }
        mean /= n;
        double var = 0.0;
        for (double v : in) {
            var += (v - mean) * (v - mean);
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        auto dst = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) {
            dst[c] = (in[c] - mean) * inv;
        }
    }
    return out;
}

DenseMatrix rms_norm_rows(const DenseMatrix& x, double eps) {
    DenseMatrix out(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        double sq = 0.0;
        for (double v : in) {
            sq += v * v;
        }
        const double inv = 1.0 / std::sqrt(sq / n + eps);
        auto dst = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) {
            dst[c] = in[c] * inv;
        }
    }
    return out;
}

DenseMatrix gelu(const DenseMatrix& x) {
    constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
    DenseMatrix out = x;
    for (double& v : out.data()) {
        v = 0.5 * v * (1.0 + std::tanh(kAlpha * (v + 0.044715 * v * v * v)));
    }
    return out;
}

}  // namespace fvlm
