// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fvlm {

/// Positional trend of attention: OLS fit of score against i / (n - 1).
/// A positive slope means later tokens draw more attention.
struct ShiftStat {
    double slope = 0.0;
    /// 0 when either series is constant.
    double pearson_r = 0.0;
};

/// Concentration of attention mass.
struct DispersionStat {
    /// cdf[k] = share of total mass held by the k + 1 largest scores.
    std::vector<double> cdf;
    /// Shannon entropy (natural log) of the normalized scores.
    double entropy = 0.0;

    /// Share held by the top fraction p of tokens, linearly interpolated
    /// between integer ranks (rank 0 holds 0). p in [0, 1].
    double top_share(double p) const;
};

ShiftStat shift_stat(std::span<const double> scores);
DispersionStat dispersion_stat(std::span<const double> scores);

/// Folds scores into rows of `row_len` (image grid order) and averages each
/// grid column.
std::vector<double> row_profile(std::span<const double> scores, std::size_t row_len);

/// CSV with header `rank,cdf,source,layer`; rank is 1-based.
void write_cdf_csv(std::ostream& out, const std::string& source, std::size_t layer, const DispersionStat& stat,
                   bool header);

}  // namespace fvlm
