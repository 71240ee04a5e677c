// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "fvlm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "fvlm/error.hpp"

namespace fvlm {

namespace {
constexpr const char* kModule = "attn-analysis";
}  // namespace

ShiftStat shift_stat(std::span<const double> scores) {
    const std::size_t n = scores.size();
    if (n < 2) {
        throw Error(kModule, "shift_stat needs at least 2 scores");
    }
    // Centered position of index i is (2i - (n-1)) / (2(n-1)), so i and
    // n-1-i carry exactly opposite offsets. Accumulating over mirrored pairs
    // makes every sum order-independent under reversal, and the slope flips
    // sign exactly.
    const double span = 2.0 * static_cast<double>(n - 1);
    auto offset = [&](std::size_t i) {
        return (2.0 * static_cast<double>(i) - static_cast<double>(n - 1)) / span;
    };
    const std::size_t half = n / 2;

    double y_sum = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
        y_sum += scores[i] + scores[n - 1 - i];
    }
    if (n % 2 == 1) {
        y_sum += scores[half];
    }
    const double y_mean = y_sum / static_cast<double>(n);

    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
        const double dx = offset(i);
        const double lo = scores[i] - y_mean;
        const double hi = scores[n - 1 - i] - y_mean;
        sxy += dx * (scores[i] - scores[n - 1 - i]);
        sxx += 2.0 * dx * dx;
        syy += lo * lo + hi * hi;
    }
    if (n % 2 == 1) {
        const double mid = scores[half] - y_mean;
        syy += mid * mid;
    }

    ShiftStat out;
    out.slope = sxy / sxx;
    if (syy > 0.0) {
        out.pearson_r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    }
    return out;
}

DispersionStat dispersion_stat(std::span<const double> scores) {
    if (scores.empty()) {
        throw Error(kModule, "dispersion_stat needs at least one score");
    }
    std::vector<double> sorted(scores.begin(), scores.end());
    for (double s : sorted) {
        if (!std::isfinite(s) || s < 0.0) {
            throw Error(kModule, "dispersion_stat needs finite non-negative scores");
        }
    }
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
    if (!(total > 0.0)) {
        throw Error(kModule, "dispersion_stat input is all zero");
    }
    DispersionStat out;
    out.cdf.reserve(sorted.size());
    double running = 0.0;
    for (double s : sorted) {
        running += s;
        out.cdf.push_back(running / total);
    }
    out.cdf.back() = 1.0;
    for (double s : sorted) {
        const double p = s / total;
        if (p > 0.0) {
            out.entropy -= p * std::log(p);
        }
    }
    return out;
}

double DispersionStat::top_share(double p) const {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw Error(kModule, "top_share fraction must lie in [0, 1]");
    }
    const double rank = p * static_cast<double>(cdf.size());
    const auto lower = static_cast<std::size_t>(std::floor(rank));
    if (lower >= cdf.size()) {
        return cdf.back();
    }
    const double at_lower = lower == 0 ? 0.0 : cdf[lower - 1];
    const double frac = rank - static_cast<double>(lower);
    if (frac == 0.0) {
        return at_lower;
    }
    return at_lower + frac * (cdf[lower] - at_lower);
}

std::vector<double> row_profile(std::span<const double> scores, std::size_t row_len) {
    if (row_len == 0 || scores.size() % row_len != 0) {
        std::ostringstream os;
        os << "row_profile: " << scores.size() << " scores do not fold into rows of " << row_len;
        throw Error(kModule, os.str());
    }
    const std::size_t n_rows = scores.size() / row_len;
    std::vector<double> profile(row_len, 0.0);
    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t c = 0; c < row_len; ++c) {
            profile[c] += scores[r * row_len + c];
        }
    }
    for (double& v : profile) {
        v /= static_cast<double>(n_rows);
    }
    return profile;
}

void write_cdf_csv(std::ostream& out, const std::string& source, std::size_t layer, const DispersionStat& stat,
                   bool header) {
    if (header) {
        out << "rank,cdf,source,layer\n";
    }
    out << std::setprecision(17);
    for (std::size_t i = 0; i < stat.cdf.size(); ++i) {
        out << i + 1 << ',' << stat.cdf[i] << ',' << source << ',' << layer << '\n';
    }
}

}  // namespace fvlm
