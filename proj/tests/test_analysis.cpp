// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fvlm/analysis.hpp"
#include "fvlm/error.hpp"
#include "fvlm/rng.hpp"

using namespace fvlm;

TEST_CASE("dispersion_stat extremes") {
    std::vector<double> one_hot(50, 0.0);
    one_hot[17] = 3.0;
    const auto a = dispersion_stat(one_hot);
    CHECK(a.entropy == 0.0);
    CHECK(a.top_share(0.2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.top_share(0.0) == 0.0);

    const auto u = dispersion_stat(std::vector<double>(100, 0.01));
    CHECK(std::abs(u.entropy - std::log(100.0)) < 1e-9);
    CHECK(std::abs(u.top_share(0.2) - 0.2) < 1e-9);
    CHECK(std::abs(u.top_share(1.0) - 1.0) < 1e-12);
}

TEST_CASE("dispersion_stat cdf and interpolation") {
    const auto s = dispersion_stat(std::vector<double>{1, 4, 2, 3});
    REQUIRE(s.cdf.size() == 4);
    const double expected[] = {0.4, 0.7, 0.9, 1.0};
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(s.cdf[k] == doctest::Approx(expected[k]).epsilon(1e-15));
    }
    // p = 0.125 sits halfway to rank 1: 0.2.
    CHECK(s.top_share(0.125) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(s.top_share(0.375) == doctest::Approx(0.55).epsilon(1e-15));
    CHECK_THROWS_AS(s.top_share(1.5), Error);

    // Zipf mass concentrates more than uniform.
    std::vector<double> zipf(200);
    for (std::size_t i = 0; i < zipf.size(); ++i) {
        zipf[i] = 1.0 / static_cast<double>(i + 1);
    }
    const auto z = dispersion_stat(zipf);
    const auto u = dispersion_stat(std::vector<double>(200, 1.0));
    CHECK(z.top_share(0.1) > u.top_share(0.1));
    CHECK(z.entropy < u.entropy);
}

TEST_CASE("dispersion_stat invariances") {
    SeededRng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(300);
        std::vector<double> s(n);
        for (double& v : s) {
            v = rng.uniform() + 1e-6;
        }
        const auto base = dispersion_stat(s);

        auto perm = s;
        for (std::size_t i = n; i > 1; --i) {
            std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
        }
        const double c = 0.01 + 50.0 * rng.uniform();
        auto scaled = s;
        for (double& v : scaled) {
            v *= c;
        }
        for (const auto& other : {dispersion_stat(perm), dispersion_stat(scaled)}) {
            CHECK(std::abs(other.entropy - base.entropy) < 1e-9);
            for (std::size_t k = 0; k < n; ++k) {
                REQUIRE(std::abs(other.cdf[k] - base.cdf[k]) < 1e-9);
            }
        }
        CHECK(std::is_sorted(base.cdf.begin(), base.cdf.end()));
        CHECK(std::abs(base.cdf.back() - 1.0) < 1e-12);
        CHECK(base.entropy <= std::log(static_cast<double>(n)) + 1e-12);
    }
}

TEST_CASE("dispersion_stat errors") {
    CHECK_THROWS_AS(dispersion_stat(std::vector<double>{}), Error);
    CHECK_THROWS_AS(dispersion_stat(std::vector<double>{0, 0}), Error);
    CHECK_THROWS_AS(dispersion_stat(std::vector<double>{1, -1}), Error);
    CHECK_THROWS_AS(dispersion_stat(std::vector<double>{1, NAN}), Error);
}

TEST_CASE("shift_stat") {
    SUBCASE("linear ramp has slope 1") {
        for (std::size_t n : {2u, 3u, 10u, 577u}) {
            std::vector<double> ramp(n);
            for (std::size_t i = 0; i < n; ++i) {
                ramp[i] = static_cast<double>(i) / static_cast<double>(n - 1);
            }
            const auto s = shift_stat(ramp);
            CHECK(std::abs(s.slope - 1.0) < 1e-9);
            CHECK(std::abs(s.pearson_r - 1.0) < 1e-9);
        }
    }
    SUBCASE("constant and reversal") {
        const auto flat = shift_stat(std::vector<double>(9, 0.3));
        CHECK(flat.slope == 0.0);
        CHECK(flat.pearson_r == 0.0);

        SeededRng rng(6);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> s(2 + rng.uniform_index(100));
            for (double& v : s) {
                v = rng.uniform();
            }
            auto r = s;
            std::reverse(r.begin(), r.end());
            CHECK(shift_stat(r).slope == -shift_stat(s).slope);
            auto shifted = s;
            for (double& v : shifted) {
                v += 4.0;
            }
            CHECK(std::abs(shift_stat(shifted).slope - shift_stat(s).slope) < 1e-9);
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(shift_stat(std::vector<double>{1.0}), Error);
    }
}

TEST_CASE("row_profile") {
    CHECK(row_profile(std::vector<double>{1, 0, 1, 0}, 2) == std::vector<double>{1, 0});
    CHECK(row_profile(std::vector<double>{1, 2, 3, 4, 5, 6}, 3) == std::vector<double>{2.5, 3.5, 4.5});
    CHECK_THROWS_AS(row_profile(std::vector<double>{1, 2, 3}, 2), Error);
    CHECK_THROWS_AS(row_profile(std::vector<double>{1, 2}, 0), Error);
}

TEST_CASE("cdf CSV") {
    std::ostringstream os;
    write_cdf_csv(os, "last", 1, dispersion_stat(std::vector<double>{3, 1}), true);
    CHECK(os.str() == "rank,cdf,source,layer\n1,0.75,last,1\n2,1,last,1\n");
}
