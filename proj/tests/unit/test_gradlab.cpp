#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "clonelab/gradlab.hpp"

using namespace clonelab;
using namespace clonelab::gradlab;

namespace {

ToyPolicy randomized(const MicroEnv& env, std::uint64_t seed) {
    ToyPolicy p = env.uniform_policy();
    Rng rng(seed);
    for (double& x : p.theta) x = rng.real01() * 2.0 - 1.0;
    return p;
}

} // namespace

TEST_CASE("enumeration: probabilities sum to one on every env") {
    for (const MicroEnv& env : shipped_envs()) {
        for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
            ToyPolicy p = seed == 0 ? env.uniform_policy() : randomized(env, seed);
            auto trajs = enumerate_trajectories(env, p);
            REQUIRE(trajs.size() <= kEnumerationCap);
            double sum = 0.0;
            for (const auto& t : trajs) sum += t.prob;
            REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-10));
        }
    }
}

TEST_CASE("one-step env enumerates to the textbook example") {
    MicroEnv env = make_one_step_env();
    ToyPolicy p = env.uniform_policy();
    auto trajs = enumerate_trajectories(env, p);
    REQUIRE(trajs.size() == 2);
    CHECK_THAT(trajs[0].prob, Catch::Matchers::WithinAbs(0.5, 1e-15));
    CHECK_THAT(trajs[1].prob, Catch::Matchers::WithinAbs(0.5, 1e-15));
}

TEST_CASE("spawn probability factorizes across rollouts") {
    MicroEnv env = make_delegation_env();
    ToyPolicy p = randomized(env, 7);
    const double p_spawn = std::exp(p.act_logprob(0, 2));
    const double p_ret0 = std::exp(p.act_logprob(1, 0));
    for (const auto& t : enumerate_trajectories(env, p)) {
        if (t.steps.size() == 3 && t.steps[1].rollout == 1 && t.steps[1].action == 0) {
            const double p_ans = std::exp(p.act_logprob(t.steps[2].state, t.steps[2].action));
            REQUIRE_THAT(t.prob, Catch::Matchers::WithinRel(p_spawn * p_ret0 * p_ans, 1e-12));
        }
    }
}

TEST_CASE("factorization identity: scheduler order vs per-rollout regrouping") {
    for (const MicroEnv& env : shipped_envs()) {
        ToyPolicy p = randomized(env, 13);
        for (const auto& t : enumerate_trajectories(env, p)) {
            double by_rollout = 0.0;
            std::set<int> rollouts;
            for (const auto& s : t.steps) rollouts.insert(s.rollout);
            for (int r : rollouts) {
                for (const auto& s : t.steps) {
                    if (s.rollout == r) by_rollout += p.act_logprob(s.state, s.action);
                }
            }
            REQUIRE_THAT(by_rollout, Catch::Matchers::WithinAbs(t.logp, 1e-12));
        }
    }
}

TEST_CASE("score-function identity: sum of p grad-log-p vanishes") {
    for (const MicroEnv& env : shipped_envs()) {
        ToyPolicy p = randomized(env, 17);
        const auto trajs = enumerate_trajectories(env, p);
        GradTable acc(p.num_states, p.num_actions);
        for (const auto& t : trajs) {
            for (const auto& s : t.steps) {
                GradTable g = p.grad_act_logprob(s.state, s.action);
                acc.add_scaled(g, t.prob);
            }
        }
        for (double v : acc.v) REQUIRE(std::abs(v) < 1e-10);
    }
}

TEST_CASE("exact gradient: closed form and finite differences") {
    MicroEnv env = make_one_step_env(1.0, 0.0);
    ToyPolicy p = env.uniform_policy();
    GradTable g = exact_grad_J(env, p);
    CHECK_THAT(g.at(0, 0), Catch::Matchers::WithinAbs(0.25, 1e-9));
    CHECK_THAT(g.at(0, 1), Catch::Matchers::WithinAbs(-0.25, 1e-9));

    MicroEnv constant = make_constant_reward_env(0.37);
    GradTable zero = exact_grad_J(constant, constant.uniform_policy());
    for (double v : zero.v) CHECK(std::abs(v) < 1e-12);
    GradTable zero_rand = exact_grad_J(constant, randomized(constant, 4));
    for (double v : zero_rand.v) CHECK(std::abs(v) < 1e-12);

    // The relative-error check needs non-degenerate gradient components:
    // symmetric or constant-reward cases have exact zeros where epsilon-scale
    // fd noise turns into huge ratios. Random tables break every symmetry.
    CHECK(finite_diff_check(env, p) < 1e-5);
    for (const MicroEnv& e : shipped_envs()) {
        if (e.name == "constant_reward") continue;
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            REQUIRE(finite_diff_check(e, randomized(e, seed)) < 1e-5);
        }
    }
}

TEST_CASE("unbiased estimators match the exact gradient by enumeration") {
    for (const MicroEnv& env : shipped_envs()) {
        ToyPolicy p = randomized(env, 23);
        const GradTable exact = exact_grad_J(env, p);

        EstimatorSpec plain;
        CHECK(estimator_expectation(plain, env, p).max_abs_diff(exact) < 1e-10);

        EstimatorSpec constant{EstimatorSpec::Kind::ConstantBaseline, 0.37};
        CHECK(estimator_expectation(constant, env, p).max_abs_diff(exact) < 1e-10);

        EstimatorSpec diff{EstimatorSpec::Kind::DifferenceReward};
        CHECK(estimator_expectation(diff, env, p).max_abs_diff(exact) < 1e-10);

        EstimatorSpec coma{EstimatorSpec::Kind::ComaCounterfactual};
        CHECK(estimator_expectation(coma, env, p).max_abs_diff(exact) < 1e-10);
    }
}

TEST_CASE("baselines cut variance") {
    for (const MicroEnv& env : shipped_envs()) {
        ToyPolicy p = env.uniform_policy();
        EstimatorSpec plain;
        const double var_plain = estimator_variance(plain, env, p);
        EstimatorSpec mean_baseline{EstimatorSpec::Kind::ConstantBaseline, exact_J(env, p)};
        const double var_baselined = estimator_variance(mean_baseline, env, p);
        CHECK(var_baselined <= var_plain + 1e-12);
    }
}

TEST_CASE("deterministic policy has zero variance") {
    MicroEnv env = make_delegation_env();
    ToyPolicy p = env.uniform_policy();
    for (int s = 0; s < p.num_states; ++s) p.logit(s, 0) = 40.0; // saturate action 0 everywhere
    EstimatorSpec plain;
    CHECK(estimator_variance(plain, env, p) < 1e-12);
}

TEST_CASE("gating: biased against the global objective, but lower variance") {
    MicroEnv env = make_pathological_clone_env();
    ToyPolicy p = env.uniform_policy();
    const GradTable exact = exact_grad_J(env, p);

    EstimatorSpec gated{EstimatorSpec::Kind::GatedGrpo};
    EstimatorSpec ungated{EstimatorSpec::Kind::UngatedGrpo};

    GradTable gated_mean = estimator_expectation(gated, env, p);
    GradTable diff = gated_mean;
    diff.add_scaled(exact, -1.0);
    CHECK(diff.norm() > 1e-3);

    const double var_gated = estimator_variance(gated, env, p);
    const double var_ungated = estimator_variance(ungated, env, p);
    CHECK(var_gated < var_ungated);
}

TEST_CASE("enumeration cap triggers on a blown-up env") {
    // Chain 15 binary root decisions: 2^15 leaves exceeds the cap.
    MicroEnv env;
    env.name = "too_big";
    env.num_states = 1;
    env.num_actions = 2;
    env.actions_per_state = {2};
    // Node 0..14 chained, each action leads closer to terminal layer.
    for (int i = 0; i < 15; ++i) {
        EnvNode n;
        n.rollout = 0;
        n.state = 0;
        n.children = {i + 1, i + 1};
        env.nodes.push_back(n);
    }
    EnvNode leaf;
    leaf.terminal = true;
    leaf.reward = 1.0;
    env.nodes.push_back(leaf);
    // 2^15 = 32768 trajectories > cap
    CHECK_THROWS_AS(enumerate_trajectories(env, env.uniform_policy()), ConfigError);
}
