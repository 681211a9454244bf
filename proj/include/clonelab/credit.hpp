#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "clonelab/errors.hpp"
#include "clonelab/text.hpp"
#include "clonelab/trajectory.hpp"

namespace clonelab {

struct RewardConfig {
    std::int64_t rt_threshold = 512;
    double rt_ramp = 256.0;
    double rt_factor = 0.3;
    std::int64_t cl_threshold = 512;
    double cl_ramp = 512.0;
    double cl_factor = 0.2;
    double json_repair_penalty = 0.05; // per repaired call

    void validate() const {
        if (rt_ramp <= 0 || cl_ramp <= 0) throw ConfigError("ramps must be positive");
        if (rt_factor < 0 || cl_factor < 0 || json_repair_penalty < 0) throw ConfigError("factors must be >= 0");
        if (rt_threshold < 0 || cl_threshold < 0) throw ConfigError("thresholds must be >= 0");
    }
};

// Ramp penalty for a token excess x: max(0, 1 - e^(-x/ramp)).
// Zero at or below the threshold, saturating toward 1.
inline double penalty(double excess, double ramp) {
    if (ramp <= 0) throw ConfigError("ramp must be positive");
    if (excess <= 0) return 0.0;
    return 1.0 - std::exp(-excess / ramp);
}

using AnswerChecker = std::function<bool(const std::string&)>;

// Global episode reward: the accuracy term minus the root overage penalty,
// the worst clone overage penalty, and the per-call repair penalty.
inline double compute_reward(const Trajectory& traj, const RewardConfig& cfg, const AnswerChecker& checker) {
    cfg.validate();
    if (traj.rollouts.empty()) throw UsageError("compute_reward: trajectory not finalized");

    const double r0 = (traj.final_answer && checker(*traj.final_answer)) ? 1.0 : 0.0;

    const double rt_excess = static_cast<double>(traj.root_generated_tokens() - cfg.rt_threshold);
    double r = r0 - cfg.rt_factor * penalty(rt_excess, cfg.rt_ramp);

    double worst_clone = 0.0;
    for (std::int64_t cl : traj.clone_generated_tokens()) {
        const double p = cfg.cl_factor * penalty(static_cast<double>(cl - cfg.cl_threshold), cfg.cl_ramp);
        worst_clone = std::max(worst_clone, p);
    }
    r -= worst_clone;

    r -= cfg.json_repair_penalty * static_cast<double>(traj.repaired_calls);
    return r;
}

// Group-relative advantages: mean-centered, population-std normalized with an
// epsilon floor. An all-equal group yields all zeros.
inline std::vector<double> grpo_advantages(const std::vector<double>& rewards, double eps = 1e-6) {
    const std::size_t g = rewards.size();
    if (g < 2) throw UsageError("grpo_advantages: group size must be >= 2");
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(g);
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(g);
    const double denom = std::max(std::sqrt(var), eps);
    std::vector<double> out(g);
    for (std::size_t i = 0; i < g; ++i) out[i] = (rewards[i] - mean) / denom;
    return out;
}

// ---------------------------------------------------------------------------
// Rollout gates

// Protocol gate: 1 iff the clone came back with a parseable, non-empty
// marked answer. Equivalent to masking the clone out of the update.
inline double gate_hard(const Rollout& clone) {
    if (clone.role != Role::Clone) throw UsageError("gate_hard: root rollouts are never gated");
    if (!clone.clone_return) throw UsageError("gate_hard: clone_return not populated");
    return (clone.clone_return->parseable && !clone.clone_return->content.empty()) ? 1.0 : 0.0;
}

// Quality score feeding the soft gate: baseline 5, minus 3 for each of a
// missing marker, an unfinished rollout, and a truncated returned answer.
inline int soft_gate_score(const Rollout& clone) {
    if (clone.role != Role::Clone) throw UsageError("soft_gate_score: root rollouts are never gated");
    if (!clone.clone_return) throw UsageError("soft_gate_score: clone_return not populated");
    int score = 5;
    if (!clone.clone_return->parseable || clone.clone_return->content.empty()) score -= 3;
    if (clone.status != RolloutStatus::Completed) score -= 3;
    if (clone.clone_return->truncated) score -= 3;
    return score;
}

inline double gate_soft(const Rollout& clone, double alpha = 1.0) {
    const double s = alpha * static_cast<double>(soft_gate_score(clone));
    return 1.0 / (1.0 + std::exp(-s));
}

// Use gate: 1 iff the clone's return occurs verbatim (whitespace-normalized)
// in the root's final text. Matches are substring-level, so a root that
// coincidentally reproduces the content still credits the clone.
inline double gate_use(const Rollout& clone, const std::string& root_final_text) {
    if (clone.role != Role::Clone) throw UsageError("gate_use: root rollouts are never gated");
    if (!clone.clone_return) throw UsageError("gate_use: clone_return not populated");
    if (!clone.clone_return->parseable || clone.clone_return->content.empty()) return 0.0;
    const std::string needle = normalize_whitespace(clone.clone_return->content);
    const std::string haystack = normalize_whitespace(root_final_text);
    if (needle.empty()) return 0.0;
    return haystack.find(needle) != std::string::npos ? 1.0 : 0.0;
}

enum class GateKind : std::uint8_t { None, Hard, Soft, Use };

inline std::string_view to_string(GateKind g) {
    switch (g) {
        case GateKind::None: return "none";
        case GateKind::Hard: return "hard";
        case GateKind::Soft: return "soft";
        case GateKind::Use: return "use";
    }
    return "?";
}

template <>
inline GateKind enum_from_string<GateKind>(std::string_view s) {
    if (s == "none") return GateKind::None;
    if (s == "hard") return GateKind::Hard;
    if (s == "soft") return GateKind::Soft;
    if (s == "use") return GateKind::Use;
    throw ConfigError("unknown gate: " + std::string(s));
}

inline double apply_gate(GateKind kind, const Rollout& clone, const Trajectory& traj, double alpha = 1.0) {
    switch (kind) {
        case GateKind::None: return 1.0;
        case GateKind::Hard: return gate_hard(clone);
        case GateKind::Soft: return gate_soft(clone, alpha);
        case GateKind::Use: return gate_use(clone, traj.final_answer.value_or(""));
    }
    return 1.0;
}

// ---------------------------------------------------------------------------
// Per-token training weights

struct LedgerEntry {
    int rollout_id = 0;
    Role role = Role::Root;
    double gate_weight = 1.0;
    std::vector<double> token_weights; // one per generated token
    bool excluded = false;             // gated to zero; skip in backprop
};

struct AdvantageLedger {
    std::string trajectory_id;
    double group_advantage = 0.0;
    std::vector<LedgerEntry> per_rollout;
};

// Resolves gate x advantage into one weight per generated token. Root tokens
// carry the raw advantage; clone tokens carry gate * advantage; everything
// not generated carries nothing at all.
inline AdvantageLedger per_token_weights(const Trajectory& traj, double advantage, GateKind gate,
                                         double alpha = 1.0) {
    AdvantageLedger ledger;
    ledger.trajectory_id = traj.trajectory_id;
    ledger.group_advantage = advantage;
    for (const Rollout& r : traj.rollouts) {
        LedgerEntry e;
        e.rollout_id = r.rollout_id;
        e.role = r.role;
        e.gate_weight = (r.role == Role::Root) ? 1.0 : apply_gate(gate, r, traj, alpha);
        e.excluded = (e.gate_weight == 0.0);
        const auto n = static_cast<std::size_t>(r.generated_tokens());
        e.token_weights.assign(n, e.gate_weight * advantage);
        ledger.per_rollout.push_back(std::move(e));
    }
    return ledger;
}

} // namespace clonelab
