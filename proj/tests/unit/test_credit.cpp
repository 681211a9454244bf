#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "clonelab/credit.hpp"
#include "clonelab/rng.hpp"

#include "../helpers/fixtures.hpp"

using namespace clonelab;
using fixtures::synthetic_trajectory;

namespace {
const AnswerChecker accept_42 = [](const std::string& s) { return s == "42"; };
}

TEST_CASE("ramp penalty closed form") {
    CHECK(penalty(0, 256) == 0.0);
    CHECK(penalty(-100, 256) == 0.0);
    CHECK_THAT(penalty(256, 256), Catch::Matchers::WithinAbs(1.0 - std::exp(-1.0), 1e-12));
    CHECK_THROWS_AS(penalty(1, 0), ConfigError);

    // Monotone, bounded in [0, 1).
    double prev = -1.0;
    for (int x = 0; x <= 1000; ++x) {
        double p = penalty(x, 256.0);
        CHECK(p >= prev);
        CHECK(p >= 0.0);
        CHECK(p < 1.0);
        prev = p;
    }
}

TEST_CASE("reward composition matches the closed form") {
    RewardConfig cfg;

    SECTION("root overage only") {
        Trajectory t = synthetic_trajectory(768, {{400}, {500}}, "42");
        double r = compute_reward(t, cfg, accept_42);
        CHECK_THAT(r, Catch::Matchers::WithinAbs(1.0 - 0.3 * (1.0 - std::exp(-1.0)), 1e-9));
    }
    SECTION("no penalties at all") {
        Trajectory t = synthetic_trajectory(400, {}, "42");
        CHECK(compute_reward(t, cfg, accept_42) == 1.0);
    }
    SECTION("wrong answer, clone overage, one repair") {
        Trajectory t = synthetic_trajectory(100, {{1024}}, "41", 1);
        double r = compute_reward(t, cfg, accept_42);
        CHECK_THAT(r, Catch::Matchers::WithinAbs(0.0 - 0.2 * (1.0 - std::exp(-1.0)) - 0.05, 1e-9));
    }
    SECTION("worst clone wins the max") {
        Trajectory t = synthetic_trajectory(100, {{513}, {1024}, {400}}, "42");
        double r = compute_reward(t, cfg, accept_42);
        CHECK_THAT(r, Catch::Matchers::WithinAbs(1.0 - 0.2 * (1.0 - std::exp(-512.0 / 512.0)), 1e-12));
    }
    SECTION("unfinalized trajectory rejected") {
        Trajectory t;
        CHECK_THROWS_AS(compute_reward(t, cfg, accept_42), UsageError);
    }
    SECTION("reward is capped at 1 and nonpositive when wrong") {
        Trajectory wrong = synthetic_trajectory(2000, {{2000}}, "0", 3);
        CHECK(compute_reward(wrong, cfg, accept_42) <= 0.0);
        Trajectory right = synthetic_trajectory(1, {}, "42");
        CHECK(compute_reward(right, cfg, accept_42) <= 1.0);
    }
}

TEST_CASE("GRPO advantages") {
    auto a = grpo_advantages({1, 0, 1, 0});
    REQUIRE(a.size() == 4);
    CHECK_THAT(a[0], Catch::Matchers::WithinAbs(1.0, 1e-9));
    CHECK_THAT(a[1], Catch::Matchers::WithinAbs(-1.0, 1e-9));
    CHECK_THAT(a[2], Catch::Matchers::WithinAbs(1.0, 1e-9));
    CHECK_THAT(a[3], Catch::Matchers::WithinAbs(-1.0, 1e-9));

    auto zeros = grpo_advantages({0.7, 0.7, 0.7, 0.7});
    for (double v : zeros) CHECK(v == 0.0);

    CHECK_THROWS_AS(grpo_advantages({1.0}), UsageError);

    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> rewards;
        for (int i = 0; i < 4; ++i) rewards.push_back(rng.real01());
        auto adv = grpo_advantages(rewards);
        double mean = 0;
        for (double v : adv) mean += v;
        mean /= static_cast<double>(adv.size());
        REQUIRE(std::abs(mean) < 1e-9);
    }
}

TEST_CASE("hard protocol gate") {
    Trajectory t = synthetic_trajectory(10, {{10, true, false, "3484077"},
                                             {1024, false, true, "cut tail"},
                                             {10, true, false, ""}},
                                        "42");
    CHECK(gate_hard(t.rollouts[1]) == 1.0);
    CHECK(gate_hard(t.rollouts[2]) == 0.0); // truncated, no marker
    CHECK(gate_hard(t.rollouts[3]) == 0.0); // empty marker pair
    CHECK_THROWS_AS(gate_hard(t.rollouts[0]), UsageError);
}

TEST_CASE("soft quality gate") {
    Trajectory t = synthetic_trajectory(
        10, {{10, true, false, "ok"},
             {1024, false, true, "tail", RolloutStatus::TruncatedByTokenLimit}},
        "42");
    CHECK_THAT(gate_soft(t.rollouts[1], 1.0), Catch::Matchers::WithinAbs(0.9933071490757153, 1e-9));
    // All three indicators fire: score 5 - 9 = -4.
    CHECK(soft_gate_score(t.rollouts[2]) == -4);
    CHECK_THAT(gate_soft(t.rollouts[2], 1.0), Catch::Matchers::WithinAbs(0.01798620996209156, 1e-9));
    CHECK(gate_soft(t.rollouts[1], 0.0) == 0.5);
    CHECK(gate_soft(t.rollouts[2], 0.0) == 0.5);
}

TEST_CASE("use gate: substring semantics, spurious credit and all") {
    Trajectory t = synthetic_trajectory(10, {{10, true, false, "3484077"},
                                             {10, true, false, "7"},
                                             {10, true, false, "3,484,077"}},
                                        "42");
    CHECK(gate_use(t.rollouts[1], "the total is 3484077") == 1.0);
    // Documented failure mode: a lone "7" matches almost anything.
    CHECK(gate_use(t.rollouts[2], "the total is 3484077") == 1.0);
    // Digit grouping is not normalized, only whitespace.
    CHECK(gate_use(t.rollouts[3], "the total is 3484077") == 0.0);
    CHECK(gate_use(t.rollouts[1], "no numbers here") == 0.0);
}

TEST_CASE("per-token weights resolve gate x advantage") {
    Trajectory t = synthetic_trajectory(5, {{3, true, false, "right"},
                                            {4, false, true, "cut", RolloutStatus::TruncatedByTokenLimit}},
                                        "42");

    SECTION("gated clone contributes nothing") {
        AdvantageLedger ledger = per_token_weights(t, +1.0, GateKind::Hard);
        REQUIRE(ledger.per_rollout.size() == 3);
        CHECK(ledger.per_rollout[0].token_weights == std::vector<double>(5, 1.0));
        CHECK(ledger.per_rollout[1].token_weights == std::vector<double>(3, 1.0));
        CHECK(ledger.per_rollout[2].token_weights == std::vector<double>(4, 0.0));
        CHECK(ledger.per_rollout[2].excluded);
        CHECK_FALSE(ledger.per_rollout[1].excluded);
    }
    SECTION("negative advantage drags parseable clones down with the group") {
        AdvantageLedger ledger = per_token_weights(t, -1.0, GateKind::Hard);
        CHECK(ledger.per_rollout[1].token_weights == std::vector<double>(3, -1.0));
        CHECK(ledger.per_rollout[2].token_weights == std::vector<double>(4, 0.0));
    }
    SECTION("zero advantage zeroes everything") {
        AdvantageLedger ledger = per_token_weights(t, 0.0, GateKind::Hard);
        for (const auto& e : ledger.per_rollout) {
            for (double w : e.token_weights) CHECK(w == 0.0);
        }
    }
    SECTION("weights are constant within a rollout for any gate") {
        for (GateKind g : {GateKind::None, GateKind::Hard, GateKind::Soft, GateKind::Use}) {
            AdvantageLedger ledger = per_token_weights(t, 0.7, g);
            for (const auto& e : ledger.per_rollout) {
                for (double w : e.token_weights) CHECK(w == e.gate_weight * 0.7);
            }
        }
    }
}
