// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fvlm/cost.hpp"
#include "fvlm/error.hpp"
#include "fvlm/rng.hpp"

using namespace fvlm;
using namespace fvlm::cost;

namespace {

const CostModelConfig kLlava{2880, 4096, 11008, 32, 2.0};

double relative_error(double got, double want) { return std::abs(got - want) / std::abs(want); }

}  // namespace

TEST_CASE("per-layer formulas") {
    CHECK(prefill_layer_flops(3, 2, 4) == 8 * 3 * 4 + 4 * 9 * 2 + 6 * 3 * 2 * 4);
    CHECK(decode_layer_flops(3, 2, 4) == 200.0);
    CHECK(decode_layer_flops(3, 2, 4, DecodeFormula::PerToken) == 32 + 24 + 48);
}

TEST_CASE("closed-form reduction") {
    CHECK(std::abs(flops_reduction_closed_form(2880, 4096, 11008, 0.5) - 0.52613) < 1e-4);
    CHECK(std::abs(flops_reduction_closed_form(2880, 4096, 11008, 0.5) - (0.5 + 0.25 * 5760.0 / 55168.0)) < 1e-15);
    CHECK(flops_reduction_closed_form(100, 64, 256, 0.0) == 0.0);
    CHECK(flops_reduction_closed_form(100, 64, 256, 1.0) == 1.0);
    CHECK_THROWS_AS(flops_reduction_closed_form(100, 64, 256, 1.5), Error);

    SeededRng rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const double n = 1 + rng.uniform_index(10000);
        const double d = 1 + rng.uniform_index(8192);
        const double m = 1 + rng.uniform_index(32768);
        const double R = rng.uniform();
        const double direct = 1.0 - prefill_layer_flops(n * (1 - R), d, m) / prefill_layer_flops(n, d, m);
        const double closed = flops_reduction_closed_form(n, d, m, R);
        REQUIRE(std::abs(direct - closed) < 1e-9);
        if (R > 0.0 && R < 1.0) {
            CHECK(closed > R);
        }
    }
}

TEST_CASE("pipeline accounting on the 7B shape") {
    const auto unpruned = PruneSchedule::before_llm(2880);
    const auto before = PruneSchedule::before_llm(1440);
    const auto at2 = PruneSchedule::at_layer(2, 1440);

    CHECK(relative_error(pipeline_prefill_flops(kLlava, unpruned) / 1e12, 41.65) < 0.005);
    CHECK(relative_error(pipeline_prefill_flops(kLlava, before) / 1e12, 19.74) < 0.005);
    CHECK(relative_error(pipeline_prefill_flops(kLlava, at2) / 1e12, 21.11) < 0.005);

    CHECK(std::abs(bytes_to_mib(kv_storage_bytes(kLlava, unpruned)) - 1440) < 1);
    CHECK(std::abs(bytes_to_mib(kv_storage_bytes(kLlava, before)) - 720) < 1);
    CHECK(std::abs(bytes_to_mib(kv_storage_bytes(kLlava, at2)) - 765) < 1);

    // Layer-wise schedule.
    CHECK(at2.tokens_at(kLlava, 1) == 2880);
    CHECK(at2.tokens_at(kLlava, 2) == 1440);
    CHECK(before.tokens_at(kLlava, 0) == 1440);
    CHECK(pipeline_decode_flops(kLlava, before) < pipeline_decode_flops(kLlava, at2));
    CHECK(pipeline_decode_flops(kLlava, at2) < pipeline_decode_flops(kLlava, unpruned));

    CHECK_THROWS_AS(PruneSchedule::at_layer(40, 10).validate(kLlava), Error);
    CHECK_THROWS_AS(PruneSchedule::before_llm(3000).validate(kLlava), Error);
    const CostModelConfig bad{0, 1, 1, 1};
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("before-LLM reduction matches the closed form") {
    for (double R : {0.25, 0.5, 0.75, 0.9}) {
        const double direct = 1.0 - pipeline_prefill_flops(kLlava, PruneSchedule::before_llm(2880 * (1 - R))) /
                                        pipeline_prefill_flops(kLlava, PruneSchedule::before_llm(2880));
        CHECK(std::abs(direct - flops_reduction_closed_form(2880, 4096, 11008, R)) < 1e-9);
    }
}

TEST_CASE("comparison table") {
    const double ratios[] = {0.5, 0.95};
    const auto schedules = comparison_schedules(kLlava, ratios);
    REQUIRE(schedules.size() == 5);
    CHECK(schedules[0].method == "unpruned");
    CHECK(schedules[1].method == "fastv");
    CHECK(schedules[2].method == "faster_vlm");
    CHECK(schedules[4].schedule.kept == 144);

    const auto rows = flops_table(kLlava, schedules);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].reduction == 0.0);
    CHECK(rows[2].tokens == 1440);
    CHECK(rows[2].tflops < rows[1].tflops);
    CHECK(rows[4].storage_mib < rows[3].storage_mib);

    std::ostringstream os;
    write_flops_csv(os, rows);
    const std::string csv = os.str();
    CHECK(csv.rfind("method,reduction,tokens,tflops,storage_mib\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}
