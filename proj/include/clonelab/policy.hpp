#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "clonelab/errors.hpp"
#include "clonelab/protocol.hpp"
#include "clonelab/rng.hpp"
#include "clonelab/trajectory.hpp"

#include "json.hpp"

namespace clonelab {

struct GenParams {
    Role role = Role::Root;
    int turn_index = 0;
    std::uint64_t seed = 0;
    std::int64_t max_tokens = 0;
};

// A decision-maker producing the next message for any rollout, root or clone.
class PolicyBackend {
public:
    virtual ~PolicyBackend() = default;
    virtual ChatMessage next_message(const std::vector<Segment>& history, const nlohmann::json& tools,
                                     const GenParams& params) = 0;
    virtual std::string kind() const = 0;
    virtual bool deterministic() const { return true; }
    virtual bool concurrent_safe() const { return true; }
};

// ---------------------------------------------------------------------------
// Tabular softmax policy

// Dense gradient table with the same shape as the policy parameters.
struct GradTable {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    GradTable() = default;
    GradTable(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

    GradTable& operator+=(const GradTable& o) {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
        return *this;
    }

    GradTable& add_scaled(const GradTable& o, double s) {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += s * o.v[i];
        return *this;
    }

    GradTable& scale(double s) {
        for (double& x : v) x *= s;
        return *this;
    }

    double norm() const {
        double n = 0;
        for (double x : v) n += x * x;
        return std::sqrt(n);
    }

    double dot(const GradTable& o) const {
        double n = 0;
        for (std::size_t i = 0; i < v.size(); ++i) n += v[i] * o.v[i];
        return n;
    }

    double max_abs_diff(const GradTable& o) const {
        double m = 0;
        for (std::size_t i = 0; i < v.size(); ++i) m = std::max(m, std::abs(v[i] - o.v[i]));
        return m;
    }
};

// Finite tabular policy: one logit row per state, softmax over that state's
// valid action prefix. The same table serves every rollout, so root and
// clone behavior differ only through the state encoding.
struct ToyPolicy {
    int num_states = 0;
    int num_actions = 0;
    std::vector<int> actions_per_state; // valid prefix length per state
    std::vector<double> theta;          // row-major [num_states x num_actions]

    static ToyPolicy uniform(int states, int actions) {
        ToyPolicy p;
        p.num_states = states;
        p.num_actions = actions;
        p.actions_per_state.assign(states, actions);
        p.theta.assign(static_cast<std::size_t>(states) * actions, 0.0);
        return p;
    }

    double logit(int s, int a) const { return theta[static_cast<std::size_t>(s) * num_actions + a]; }
    double& logit(int s, int a) { return theta[static_cast<std::size_t>(s) * num_actions + a]; }

    int valid_actions(int s) const { return actions_per_state[s]; }

    void check_indices(int s, int a) const {
        if (s < 0 || s >= num_states) throw UsageError("state index out of range");
        if (a < 0 || a >= valid_actions(s)) throw UsageError("action index out of range");
    }

    // log softmax over the state's valid actions, stabilized by the row max.
    double act_logprob(int s, int a) const {
        check_indices(s, a);
        const int k = valid_actions(s);
        double m = logit(s, 0);
        for (int i = 1; i < k; ++i) m = std::max(m, logit(s, i));
        double z = 0.0;
        for (int i = 0; i < k; ++i) z += std::exp(logit(s, i) - m);
        return (logit(s, a) - m) - std::log(z);
    }

    std::vector<double> probs(int s) const {
        const int k = valid_actions(s);
        std::vector<double> p(static_cast<std::size_t>(k));
        for (int a = 0; a < k; ++a) p[a] = std::exp(act_logprob(s, a));
        return p;
    }

    // Analytic score-function gradient: e_a - softmax on the state's row.
    GradTable grad_act_logprob(int s, int a) const {
        check_indices(s, a);
        GradTable g(num_states, num_actions);
        const std::vector<double> p = probs(s);
        for (int i = 0; i < valid_actions(s); ++i) g.at(s, i) = (i == a ? 1.0 : 0.0) - p[i];
        return g;
    }

    int sample_action(int s, Rng& rng) const {
        const std::vector<double> p = probs(s);
        double u = rng.real01();
        double acc = 0.0;
        for (std::size_t a = 0; a + 1 < p.size(); ++a) {
            acc += p[a];
            if (u < acc) return static_cast<int>(a);
        }
        return static_cast<int>(p.size()) - 1;
    }
};

// ---------------------------------------------------------------------------
// Message-producing adapters

// Uniformly picks one of a fixed set of candidate messages.
class RandomPolicy : public PolicyBackend {
public:
    explicit RandomPolicy(std::vector<ChatMessage> candidates) : candidates_(std::move(candidates)) {
        if (candidates_.empty()) throw ConfigError("RandomPolicy needs at least one candidate message");
    }

    ChatMessage next_message(const std::vector<Segment>& history, const nlohmann::json&,
                             const GenParams& params) override {
        Rng rng(mix_seed({params.seed, static_cast<std::uint64_t>(params.turn_index),
                          fnv1a64(history.empty() ? "" : history.back().text)}));
        return candidates_[rng.below(candidates_.size())];
    }

    std::string kind() const override { return "random"; }
    bool deterministic() const override { return false; }

private:
    std::vector<ChatMessage> candidates_;
};

// Drives a ToyPolicy through the message interface. The encoder is tabular
// over (role, turn, last observation symbol); actions map to canned messages.
struct ToyStateEncoder {
    int max_turns = 4;
    std::vector<std::string> obs_vocab; // matched against the last tool-result text

    int symbol_count() const { return static_cast<int>(obs_vocab.size()) + 1; }
    int state_count() const { return 2 * max_turns * symbol_count(); }

    int encode(Role role, int turn_index, const std::vector<Segment>& history) const {
        int symbol = 0;
        for (auto it = history.rbegin(); it != history.rend(); ++it) {
            if (it->origin == Origin::ToolResult) {
                for (std::size_t k = 0; k < obs_vocab.size(); ++k) {
                    if (it->text.find(obs_vocab[k]) != std::string::npos) {
                        symbol = static_cast<int>(k) + 1;
                        break;
                    }
                }
                break;
            }
        }
        const int role_idx = role == Role::Root ? 0 : 1;
        const int turn = std::min(turn_index, max_turns - 1);
        return (role_idx * max_turns + turn) * symbol_count() + symbol;
    }
};

class ToyPolicyBackend : public PolicyBackend {
public:
    ToyPolicyBackend(ToyPolicy policy, ToyStateEncoder encoder, std::vector<ChatMessage> action_messages)
        : policy_(std::move(policy)), encoder_(std::move(encoder)), actions_(std::move(action_messages)) {
        if (static_cast<int>(actions_.size()) != policy_.num_actions) {
            throw ConfigError("ToyPolicyBackend: one message per action required");
        }
    }

    ChatMessage next_message(const std::vector<Segment>& history, const nlohmann::json&,
                             const GenParams& params) override {
        const int state = encoder_.encode(params.role, params.turn_index, history);
        Rng rng(mix_seed({params.seed, static_cast<std::uint64_t>(params.turn_index)}));
        const int action = policy_.sample_action(state, rng);
        return actions_[static_cast<std::size_t>(action)];
    }

    std::string kind() const override { return "toy_softmax"; }
    bool deterministic() const override { return false; }

private:
    ToyPolicy policy_;
    ToyStateEncoder encoder_;
    std::vector<ChatMessage> actions_;
};

} // namespace clonelab
