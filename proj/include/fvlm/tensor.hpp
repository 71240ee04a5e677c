// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fvlm {

class SeededRng;

/// Row-major dense matrix of doubles.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

    static DenseMatrix identity(std::size_t n);

    std::size_t rows() const noexcept { return m_rows; }
    std::size_t cols() const noexcept { return m_cols; }
    std::size_t size() const noexcept { return m_data.size(); }
    bool empty() const noexcept { return m_data.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }

    std::span<double> row(std::size_t r) { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const double> row(std::size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }

    std::span<const double> data() const noexcept { return m_data; }
    std::span<double> data() noexcept { return m_data; }

    /// Appends one row; `values.size()` must equal cols() (or set cols when empty).
    void append_row(std::span<const double> values);

    /// Rows at `indices`, in the given order.
    DenseMatrix gather_rows(std::span<const std::size_t> indices) const;
    /// Columns [begin, begin + count).
    DenseMatrix col_block(std::size_t begin, std::size_t count) const;
    /// Writes `block` into columns [begin, begin + block.cols()).
    void set_col_block(std::size_t begin, const DenseMatrix& block);

    std::string shape_string() const;

    bool all_finite() const noexcept;

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

/// Additive mask value standing in for -inf.
inline constexpr double kMaskSentinel = -1e30;

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// a * b^T without materializing the transpose.
DenseMatrix matmul_transposed(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
void add_inplace(DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scale(const DenseMatrix& a, double factor);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

DenseMatrix softmax_rows(const DenseMatrix& x);

/// Softmax over x + mask. Mask entries are 0 (keep) or <= kMaskSentinel
/// (drop); dropped positions come out exactly 0. Throws if a row has no
/// unmasked entry.
DenseMatrix masked_softmax_rows(const DenseMatrix& x, const DenseMatrix& mask);

/// Lower-triangular additive mask: 0 on and below the diagonal, sentinel above.
DenseMatrix causal_mask(std::size_t n);

/// Entries i.i.d. N(0, scale^2).
DenseMatrix randn_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale);

/// Per-row standardization (zero mean, unit variance), no affine terms.
DenseMatrix layer_norm_rows(const DenseMatrix& x, double eps = 1e-5);
/// Per-row division by root-mean-square, no affine terms.
DenseMatrix rms_norm_rows(const DenseMatrix& x, double eps = 1e-6);
/// tanh-approximated GELU, elementwise.
DenseMatrix gelu(const DenseMatrix& x);

}  // namespace fvlm
