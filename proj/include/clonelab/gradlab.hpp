#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "clonelab/errors.hpp"
#include "clonelab/policy.hpp"
#include "clonelab/rng.hpp"

#include "json.hpp"

namespace clonelab::gradlab {

// Micro-environments small enough to enumerate every joint trajectory
// exactly. Decision nodes belong to a rollout (0 = root, >0 = clones) and
// point at a policy state; terminals carry the episode reward, which folds in
// a small per-decision cost so budget pressure is part of the signal.

struct EnvNode {
    bool terminal = false;
    double reward = 0.0;
    int rollout = 0;
    int state = 0;
    std::vector<int> children;  // one child per valid action of `state`
    std::vector<bool> violates; // action-level protocol violations (empty = none)
    int null_child = -1;        // where the game goes if this rollout is nulled
};

struct MicroEnv {
    std::string name;
    std::vector<EnvNode> nodes;
    int root_node = 0;
    int num_states = 0;
    int num_actions = 0;
    std::vector<int> actions_per_state;

    ToyPolicy uniform_policy() const {
        ToyPolicy p;
        p.num_states = num_states;
        p.num_actions = num_actions;
        p.actions_per_state = actions_per_state;
        p.theta.assign(static_cast<std::size_t>(num_states) * num_actions, 0.0);
        return p;
    }

    void validate() const {
        for (const EnvNode& n : nodes) {
            if (n.terminal) continue;
            const int k = actions_per_state[static_cast<std::size_t>(n.state)];
            if (static_cast<int>(n.children.size()) != k) {
                throw ConfigError(name + ": node child count does not match its state's action count");
            }
            if (!n.violates.empty() && static_cast<int>(n.violates.size()) != k) {
                throw ConfigError(name + ": violation flags must cover every action");
            }
        }
    }
};

inline constexpr std::size_t kEnumerationCap = 10'000;

struct EnumStep {
    int node = 0;
    int rollout = 0;
    int state = 0;
    int action = 0;
};

struct EnumTraj {
    std::vector<EnumStep> steps;
    double reward = 0.0;
    double prob = 0.0;
    double logp = 0.0; // accumulated in scheduler order

    bool rollout_violates(const MicroEnv& env, int rollout) const {
        for (const EnumStep& s : steps) {
            if (s.rollout != rollout) continue;
            const EnvNode& n = env.nodes[static_cast<std::size_t>(s.node)];
            if (!n.violates.empty() && n.violates[static_cast<std::size_t>(s.action)]) return true;
        }
        return false;
    }

    std::set<int> clone_rollouts() const {
        std::set<int> out;
        for (const EnumStep& s : steps) {
            if (s.rollout != 0) out.insert(s.rollout);
        }
        return out;
    }
};

namespace lab_detail {

inline void walk(const MicroEnv& env, const ToyPolicy& policy, int node_idx, std::vector<EnumStep>& steps,
                 double logp, std::vector<EnumTraj>& out) {
    const EnvNode& node = env.nodes[static_cast<std::size_t>(node_idx)];
    if (node.terminal) {
        if (out.size() >= kEnumerationCap) throw ConfigError(env.name + ": enumeration cap exceeded");
        out.push_back(EnumTraj{steps, node.reward, std::exp(logp), logp});
        return;
    }
    const int k = policy.valid_actions(node.state);
    for (int a = 0; a < k; ++a) {
        steps.push_back(EnumStep{node_idx, node.rollout, node.state, a});
        walk(env, policy, node.children[static_cast<std::size_t>(a)], steps,
             logp + policy.act_logprob(node.state, a), out);
        steps.pop_back();
    }
}

// Expected reward from a node under the policy. Null branches hang off the
// on-policy tree, so plain recursion covers them too.
inline double node_value(const MicroEnv& env, const ToyPolicy& policy, int node_idx,
                         std::map<int, double>& memo) {
    const EnvNode& node = env.nodes[static_cast<std::size_t>(node_idx)];
    if (node.terminal) return node.reward;
    auto it = memo.find(node_idx);
    if (it != memo.end()) return it->second;
    const std::vector<double> p = policy.probs(node.state);
    double v = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
        v += p[a] * node_value(env, policy, node.children[a], memo);
    }
    memo[node_idx] = v;
    return v;
}

inline void add_score_gradient(GradTable& g, const std::vector<std::vector<double>>& probs, int s, int a,
                               double scale) {
    const std::vector<double>& p = probs[static_cast<std::size_t>(s)];
    for (std::size_t i = 0; i < p.size(); ++i) {
        g.at(s, static_cast<int>(i)) += scale * ((static_cast<int>(i) == a ? 1.0 : 0.0) - p[i]);
    }
}

inline std::vector<std::vector<double>> all_probs(const ToyPolicy& policy) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(policy.num_states));
    for (int s = 0; s < policy.num_states; ++s) out[static_cast<std::size_t>(s)] = policy.probs(s);
    return out;
}

} // namespace lab_detail

inline std::vector<EnumTraj> enumerate_trajectories(const MicroEnv& env, const ToyPolicy& policy) {
    env.validate();
    std::vector<EnumTraj> out;
    std::vector<EnumStep> steps;
    lab_detail::walk(env, policy, env.root_node, steps, 0.0, out);
    return out;
}

inline double exact_J(const MicroEnv& env, const ToyPolicy& policy) {
    double j = 0.0;
    for (const EnumTraj& t : enumerate_trajectories(env, policy)) j += t.prob * t.reward;
    return j;
}

// exact grad J = sum over trajectories of p(tau) R(tau) grad log p(tau),
// with grad log p factorized over every rollout's decisions.
inline GradTable exact_grad_J(const MicroEnv& env, const ToyPolicy& policy) {
    GradTable g(policy.num_states, policy.num_actions);
    const auto probs = lab_detail::all_probs(policy);
    for (const EnumTraj& t : enumerate_trajectories(env, policy)) {
        for (const EnumStep& s : t.steps) {
            lab_detail::add_score_gradient(g, probs, s.state, s.action, t.prob * t.reward);
        }
    }
    return g;
}

struct EstimatorSpec {
    enum class Kind {
        PlainReinforce,
        ConstantBaseline,
        DifferenceReward,
        ComaCounterfactual,
        GatedGrpo,
        UngatedGrpo,
    };
    Kind kind = Kind::PlainReinforce;
    double baseline = 0.0; // ConstantBaseline only
    double grpo_eps = 1e-6;
};

namespace lab_detail {

// Per-trajectory gradient contribution of the non-grouped estimators.
inline GradTable per_traj_gradient(const EstimatorSpec& spec, const MicroEnv& env, const ToyPolicy& policy,
                                   const EnumTraj& t, const std::vector<std::vector<double>>& probs,
                                   std::map<int, double>& value_memo) {
    GradTable g(policy.num_states, policy.num_actions);
    for (const EnumStep& s : t.steps) {
        double scale = 0.0;
        switch (spec.kind) {
            case EstimatorSpec::Kind::PlainReinforce:
                scale = t.reward;
                break;
            case EstimatorSpec::Kind::ConstantBaseline:
                scale = t.reward - spec.baseline;
                break;
            case EstimatorSpec::Kind::ComaCounterfactual: {
                // Counterfactual baseline: expected return marginalizing this
                // decision under the current policy.
                const EnvNode& node = env.nodes[static_cast<std::size_t>(s.node)];
                double b = 0.0;
                const std::vector<double>& p = probs[static_cast<std::size_t>(s.state)];
                for (std::size_t a = 0; a < p.size(); ++a) {
                    b += p[a] * node_value(env, policy, node.children[a], value_memo);
                }
                scale = t.reward - b;
                break;
            }
            case EstimatorSpec::Kind::DifferenceReward: {
                if (s.rollout == 0) {
                    scale = t.reward;
                } else {
                    // Null-replacement counterfactual evaluated exactly from
                    // this rollout's entry node.
                    int entry = -1;
                    for (const EnumStep& q : t.steps) {
                        if (q.rollout == s.rollout) {
                            entry = q.node;
                            break;
                        }
                    }
                    const EnvNode& node = env.nodes[static_cast<std::size_t>(entry)];
                    if (node.null_child < 0) {
                        throw ConfigError(env.name + ": clone entry node lacks a null branch");
                    }
                    scale = t.reward - node_value(env, policy, node.null_child, value_memo);
                }
                break;
            }
            case EstimatorSpec::Kind::GatedGrpo:
            case EstimatorSpec::Kind::UngatedGrpo:
                throw UsageError("grouped estimator passed to per-trajectory path");
        }
        add_score_gradient(g, probs, s.state, s.action, scale);
    }
    return g;
}

// Gradient contribution of one group member given its normalized advantage.
inline GradTable grpo_member_gradient(const MicroEnv& env, const ToyPolicy& policy, const EnumTraj& t,
                                      double advantage, bool gated,
                                      const std::vector<std::vector<double>>& probs) {
    GradTable g(policy.num_states, policy.num_actions);
    for (const EnumStep& s : t.steps) {
        double w = 1.0;
        if (gated && s.rollout != 0) {
            w = t.rollout_violates(env, s.rollout) ? 0.0 : 1.0;
        }
        add_score_gradient(g, probs, s.state, s.action, w * advantage);
    }
    return g;
}

template <typename Fn>
inline void for_each_grpo_pair(const std::vector<EnumTraj>& trajs, double eps, Fn&& fn) {
    // Exhaustive ordered pairs stand in for sampled groups of two, so the
    // expectation and variance are exact rather than Monte-Carlo estimates.
    for (const EnumTraj& a : trajs) {
        for (const EnumTraj& b : trajs) {
            const double mean = 0.5 * (a.reward + b.reward);
            const double sd = std::sqrt(0.5 * ((a.reward - mean) * (a.reward - mean) +
                                               (b.reward - mean) * (b.reward - mean)));
            const double denom = std::max(sd, eps);
            fn(a, b, a.prob * b.prob, (a.reward - mean) / denom, (b.reward - mean) / denom);
        }
    }
}

} // namespace lab_detail

inline GradTable estimator_expectation(const EstimatorSpec& spec, const MicroEnv& env,
                                       const ToyPolicy& policy) {
    const auto trajs = enumerate_trajectories(env, policy);
    const auto probs = lab_detail::all_probs(policy);
    GradTable e(policy.num_states, policy.num_actions);
    if (spec.kind == EstimatorSpec::Kind::GatedGrpo || spec.kind == EstimatorSpec::Kind::UngatedGrpo) {
        const bool gated = spec.kind == EstimatorSpec::Kind::GatedGrpo;
        lab_detail::for_each_grpo_pair(trajs, spec.grpo_eps, [&](const EnumTraj& a, const EnumTraj& b,
                                                                 double p, double adv_a, double adv_b) {
            GradTable g = lab_detail::grpo_member_gradient(env, policy, a, adv_a, gated, probs);
            g += lab_detail::grpo_member_gradient(env, policy, b, adv_b, gated, probs);
            e.add_scaled(g.scale(0.5), p);
        });
        return e;
    }
    std::map<int, double> memo;
    for (const EnumTraj& t : trajs) {
        e.add_scaled(lab_detail::per_traj_gradient(spec, env, policy, t, probs, memo), t.prob);
    }
    return e;
}

// Trace of the estimator's covariance over its sampling unit (a trajectory,
// or an exhaustive group for the GRPO variants).
inline double estimator_variance(const EstimatorSpec& spec, const MicroEnv& env, const ToyPolicy& policy) {
    const auto trajs = enumerate_trajectories(env, policy);
    const auto probs = lab_detail::all_probs(policy);
    GradTable mean(policy.num_states, policy.num_actions);
    double second_moment = 0.0;
    if (spec.kind == EstimatorSpec::Kind::GatedGrpo || spec.kind == EstimatorSpec::Kind::UngatedGrpo) {
        const bool gated = spec.kind == EstimatorSpec::Kind::GatedGrpo;
        lab_detail::for_each_grpo_pair(trajs, spec.grpo_eps, [&](const EnumTraj& a, const EnumTraj& b,
                                                                 double p, double adv_a, double adv_b) {
            GradTable g = lab_detail::grpo_member_gradient(env, policy, a, adv_a, gated, probs);
            g += lab_detail::grpo_member_gradient(env, policy, b, adv_b, gated, probs);
            g.scale(0.5);
            second_moment += p * g.dot(g);
            mean.add_scaled(g, p);
        });
    } else {
        std::map<int, double> memo;
        for (const EnumTraj& t : trajs) {
            GradTable g = lab_detail::per_traj_gradient(spec, env, policy, t, probs, memo);
            second_moment += t.prob * g.dot(g);
            mean.add_scaled(g, t.prob);
        }
    }
    return second_moment - mean.dot(mean);
}

// Central finite differences of J as an independent check on the analytic
// gradient. Returns the max relative error over every parameter.
inline double finite_diff_check(const MicroEnv& env, const ToyPolicy& policy, double h = 1e-5) {
    const GradTable analytic = exact_grad_J(env, policy);
    double worst = 0.0;
    ToyPolicy probe = policy;
    for (int s = 0; s < policy.num_states; ++s) {
        for (int a = 0; a < policy.num_actions; ++a) {
            const double saved = probe.logit(s, a);
            probe.logit(s, a) = saved + h;
            const double jp = exact_J(env, probe);
            probe.logit(s, a) = saved - h;
            const double jm = exact_J(env, probe);
            probe.logit(s, a) = saved;
            const double fd = (jp - jm) / (2.0 * h);
            const double rel = std::abs(analytic.at(s, a) - fd) / (std::abs(analytic.at(s, a)) + 1e-12);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Shipped environments

inline MicroEnv make_one_step_env(double r0 = 1.0, double r1 = 0.0) {
    MicroEnv env;
    env.name = "one_step";
    env.num_states = 1;
    env.num_actions = 2;
    env.actions_per_state = {2};
    env.nodes.resize(3);
    env.nodes[0] = EnvNode{false, 0.0, 0, 0, {1, 2}, {}, -1};
    env.nodes[1] = EnvNode{true, r0, 0, 0, {}, {}, -1};
    env.nodes[2] = EnvNode{true, r1, 0, 0, {}, {}, -1};
    return env;
}

inline MicroEnv make_constant_reward_env(double c = 0.7) {
    MicroEnv env = make_one_step_env(c, c);
    env.name = "constant_reward";
    return env;
}

// Root may answer directly or spawn one clone whose return symbol routes the
// root into a different state before the final answer.
inline MicroEnv make_delegation_env() {
    MicroEnv env;
    env.name = "delegation";
    env.num_states = 5; // 0 root open, 1 clone, 2/3 root after RET_0/RET_1, 4 root after null
    env.num_actions = 3;
    env.actions_per_state = {3, 2, 2, 2, 2};
    const double cost = 0.05;
    auto t = [&](double r) {
        EnvNode n;
        n.terminal = true;
        n.reward = r;
        return n;
    };
    env.nodes.resize(13);
    env.nodes[0] = EnvNode{false, 0.0, 0, 0, {1, 2, 3}, {}, -1};
    env.nodes[1] = t(0.0 - cost);
    env.nodes[2] = t(1.0 - cost);
    env.nodes[3] = EnvNode{false, 0.0, 1, 1, {4, 5}, {}, 12};
    env.nodes[4] = EnvNode{false, 0.0, 0, 2, {6, 7}, {}, -1};
    env.nodes[5] = EnvNode{false, 0.0, 0, 3, {8, 9}, {}, -1};
    env.nodes[6] = t(0.0 - 3 * cost);
    env.nodes[7] = t(1.0 - 3 * cost);
    env.nodes[8] = t(0.0 - 3 * cost);
    env.nodes[9] = t(1.0 - 3 * cost);
    env.nodes[10] = t(0.0 - 2 * cost);
    env.nodes[11] = t(1.0 - 2 * cost);
    env.nodes[12] = EnvNode{false, 0.0, 0, 4, {10, 11}, {}, -1};
    return env;
}

// Two sequential clones; the root's best answer is the XOR of their returns.
inline MicroEnv make_two_clone_env() {
    MicroEnv env;
    env.name = "two_clone";
    env.num_states = 11;
    env.num_actions = 3;
    env.actions_per_state = {3, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2};
    const double cost = 0.05;
    auto t = [&](double r) {
        EnvNode n;
        n.terminal = true;
        n.reward = r;
        return n;
    };
    std::vector<EnvNode>& n = env.nodes;
    n.resize(40);
    int next = 0;
    const int root0 = next++;
    const int t_a0 = next++, t_a1 = next++;
    const int nodeA = next++;
    n[root0] = EnvNode{false, 0.0, 0, 0, {t_a0, t_a1, nodeA}, {}, -1};
    n[t_a0] = t(0.0 - cost);
    n[t_a1] = t(1.0 - cost);

    // Main line: clone A (rollout 1), then clone B (rollout 2), then root.
    int nodeB[2];
    for (int ra = 0; ra < 2; ++ra) nodeB[ra] = next++;
    int rootF[2][2];
    for (int ra = 0; ra < 2; ++ra) {
        for (int rb = 0; rb < 2; ++rb) {
            rootF[ra][rb] = next++;
            const int term0 = next++, term1 = next++;
            const int want = ra ^ rb;
            n[term0] = t((want == 0 ? 1.0 : 0.0) - 4 * cost);
            n[term1] = t((want == 1 ? 1.0 : 0.0) - 4 * cost);
            n[rootF[ra][rb]] = EnvNode{false, 0.0, 0, 3 + 2 * ra + rb, {term0, term1}, {}, -1};
        }
    }

    // A nulled: clone B still runs, root answers off B alone.
    const int nodeB_anull = next++;
    int rootF_anull[2];
    for (int rb = 0; rb < 2; ++rb) {
        rootF_anull[rb] = next++;
        const int term0 = next++, term1 = next++;
        n[term0] = t((rb == 0 ? 1.0 : 0.0) - 3 * cost);
        n[term1] = t((rb == 1 ? 1.0 : 0.0) - 3 * cost);
        n[rootF_anull[rb]] = EnvNode{false, 0.0, 0, 7 + rb, {term0, term1}, {}, -1};
    }
    n[nodeB_anull] = EnvNode{false, 0.0, 2, 2, {rootF_anull[0], rootF_anull[1]}, {}, -1};

    // B nulled (per A branch): root answers off A alone.
    int rootF_bnull[2];
    for (int ra = 0; ra < 2; ++ra) {
        rootF_bnull[ra] = next++;
        const int term0 = next++, term1 = next++;
        n[term0] = t((ra == 0 ? 1.0 : 0.0) - 3 * cost);
        n[term1] = t((ra == 1 ? 1.0 : 0.0) - 3 * cost);
        n[rootF_bnull[ra]] = EnvNode{false, 0.0, 0, 9 + ra, {term0, term1}, {}, -1};
    }

    n[nodeA] = EnvNode{false, 0.0, 1, 1, {nodeB[0], nodeB[1]}, {}, nodeB_anull};
    for (int ra = 0; ra < 2; ++ra) {
        n[nodeB[ra]] = EnvNode{false, 0.0, 2, 2, {rootF[ra][0], rootF[ra][1]}, {}, rootF_bnull[ra]};
    }
    n.resize(static_cast<std::size_t>(next));
    return env;
}

// One clone action is a protocol violation leading to a noisy, high-swing
// branch. Gating that branch's clone out of the update trades a measurable
// bias for a strict variance reduction.
inline MicroEnv make_pathological_clone_env() {
    MicroEnv env;
    env.name = "pathological_clone";
    env.num_states = 5; // 0 root open, 1 clone, 2 after good, 3 after noise, 4 after null
    env.num_actions = 3;
    env.actions_per_state = {3, 2, 2, 2, 2};
    const double cost = 0.05;
    auto t = [&](double r) {
        EnvNode n;
        n.terminal = true;
        n.reward = r;
        return n;
    };
    env.nodes.resize(13);
    env.nodes[0] = EnvNode{false, 0.0, 0, 0, {1, 2, 3}, {}, -1};
    env.nodes[1] = t(0.0 - cost);
    env.nodes[2] = t(1.0 - cost);
    env.nodes[3] = EnvNode{false, 0.0, 1, 1, {4, 5}, {false, true}, 12};
    env.nodes[4] = EnvNode{false, 0.0, 0, 2, {6, 7}, {}, -1};
    env.nodes[5] = EnvNode{false, 0.0, 0, 3, {8, 9}, {}, -1};
    env.nodes[6] = t(0.0 - 3 * cost);
    env.nodes[7] = t(1.0 - 3 * cost);
    env.nodes[8] = t(-2.0 - 3 * cost);
    env.nodes[9] = t(2.0 - 3 * cost);
    env.nodes[10] = t(0.0 - 2 * cost);
    env.nodes[11] = t(1.0 - 2 * cost);
    env.nodes[12] = EnvNode{false, 0.0, 0, 4, {10, 11}, {}, -1};
    return env;
}

inline std::vector<MicroEnv> shipped_envs() {
    return {make_one_step_env(), make_constant_reward_env(), make_delegation_env(), make_two_clone_env(),
            make_pathological_clone_env()};
}

inline MicroEnv env_by_name(std::string_view name) {
    for (MicroEnv& e : shipped_envs()) {
        if (e.name == name) return std::move(e);
    }
    throw ConfigError("unknown micro-env: " + std::string(name));
}

} // namespace clonelab::gradlab
