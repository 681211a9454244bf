#pragma once

#include <cstdint>
#include <fstream>
#include <future>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clonelab/arith.hpp"
#include "clonelab/credit.hpp"
#include "clonelab/errors.hpp"
#include "clonelab/policy.hpp"
#include "clonelab/prompts.hpp"
#include "clonelab/protocol.hpp"
#include "clonelab/rng.hpp"
#include "clonelab/trajectory.hpp"

#include "json.hpp"

namespace clonelab {

struct TaskSpec {
    std::string task_id;
    std::string prompt;
    std::string expected_answer;
    bool numeric = true; // integer answers get thousands-separator-tolerant matching

    AnswerChecker checker() const {
        if (numeric) {
            const std::string want = normalize_answer(expected_answer);
            return [want](const std::string& got) { return normalize_answer(got) == want; };
        }
        const std::string want(trim(expected_answer));
        return [want](const std::string& got) { return std::string(trim(got)) == want; };
    }
};

// Keyed documents for retrieval-style tasks, loaded from JSONL {key, text}.
struct DocumentStore {
    std::unordered_map<std::string, std::string> docs;

    static DocumentStore load_jsonl(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open context store: " + path);
        DocumentStore store;
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto j = nlohmann::json::parse(line);
            store.docs[j.at("key").get<std::string>()] = j.at("text").get<std::string>();
        }
        return store;
    }

    std::optional<std::string> get(const std::string& key) const {
        auto it = docs.find(key);
        if (it == docs.end()) return std::nullopt;
        return it->second;
    }
};

// The expanded document goes to the clone only; the root never sees it.
inline std::optional<std::string> expand_context_key(const std::string& key, const DocumentStore& store) {
    return store.get(key);
}

struct EnvAdapter {
    DocumentStore docs;
    MarkerConfig marker;
    TokenCounter counter;
    bool tools_enabled = true;
    bool forced_spawn = false;
    std::string root_system_prompt = std::string(kRootSystemPrompt);
    std::string clone_system_prompt = std::string(kCloneSystemPrompt);
};

// Replay hook: substitute one clone with the null policy (it generates
// nothing and returns nothing parseable).
struct RunOptions {
    std::optional<ParentCall> null_clone;
    bool concurrent_clones = true;
};

namespace orch_detail {

inline std::string render_generated_text(const ChatMessage& msg) {
    std::string text = msg.content;
    for (const RawToolCall& c : msg.tool_calls) {
        if (!text.empty()) text += '\n';
        text += "<tool_call>" + c.arguments + "</tool_call>";
    }
    return text;
}

// Head-first truncation: keep the tail when the prompt does not fit.
inline std::string fit_prompt(const std::string& text, std::int64_t limit, const TokenCounter& counter,
                              bool& flagged) {
    if (counter.count(text) <= limit) return text;
    flagged = true;
    if (counter.kind == TokenCounterKind::Whitespace) {
        // Drop words from the front until the remainder fits.
        std::string t = text;
        while (counter.count(t) > limit) {
            std::size_t i = 0;
            while (i < t.size() && !std::isspace(static_cast<unsigned char>(t[i]))) ++i;
            while (i < t.size() && std::isspace(static_cast<unsigned char>(t[i]))) ++i;
            if (i == 0 || i >= t.size()) return {};
            t = t.substr(i);
        }
        return t;
    }
    return std::string(utf8_suffix(text, static_cast<std::size_t>(limit) * 4));
}

struct TurnOutcome {
    std::string text;
    std::int64_t tokens = 0;
    bool truncated = false;
};

inline TurnOutcome enforce_generation_budget(const ChatMessage& msg, std::int64_t remaining,
                                             const TokenCounter& counter, bool& accounting_error) {
    TurnOutcome out;
    std::string full = render_generated_text(msg);
    std::int64_t measured;
    if (counter.kind == TokenCounterKind::RemoteUsage) {
        if (msg.usage_completion_tokens) {
            measured = *msg.usage_completion_tokens;
        } else {
            accounting_error = true;
            measured = counter.count(full);
        }
    } else {
        measured = counter.count(full);
    }
    if (measured > remaining) {
        // The whole budget was consumed producing the cut-off text.
        out.text = counter.truncate(full, remaining);
        out.tokens = remaining;
        out.truncated = true;
        return out;
    }
    out.text = std::move(full);
    out.tokens = measured;
    out.truncated = false;
    return out;
}

inline std::string extract_final_answer(std::string_view content) {
    std::size_t pos = content.rfind(kFinalAnswerPrefix);
    if (pos != std::string_view::npos) {
        return std::string(trim(content.substr(pos + kFinalAnswerPrefix.size())));
    }
    return std::string(trim(content));
}

} // namespace orch_detail

class Orchestrator {
public:
    Orchestrator(PolicyBackend& policy, const EnvAdapter& env, const BudgetConfig& budgets)
        : policy_(policy), env_(env), budgets_(budgets) {
        budgets_.validate();
    }

    Trajectory run(const TaskSpec& task, std::uint64_t seed, const RunOptions& options = {}) {
        options_ = options;
        traj_ = Trajectory{};
        traj_.trajectory_id = task.task_id + "@" + std::to_string(seed);
        traj_.task_id = task.task_id;
        traj_.seed = seed;
        next_clone_id_ = 1;

        Rollout root;
        root.rollout_id = 0;
        root.role = Role::Root;
        append_segment(root, Origin::System, env_.root_system_prompt);
        append_segment(root, Origin::User,
                       orch_detail::fit_prompt(task.prompt, budgets_.prompt_limit, env_.counter,
                                               traj_.prompt_truncated));
        run_root_loop(root, seed);
        traj_.rollouts.insert(traj_.rollouts.begin(), std::move(root));
        return std::move(traj_);
    }

private:
    PolicyBackend& policy_;
    EnvAdapter env_;
    BudgetConfig budgets_;
    RunOptions options_;
    Trajectory traj_;
    int next_clone_id_ = 1;

    void append_segment(Rollout& r, Origin origin, std::string text) {
        Segment s;
        s.origin = origin;
        s.token_count = env_.counter.count(text);
        s.text = std::move(text);
        r.segments.push_back(std::move(s));
    }

    nlohmann::json tools_for_depth(int depth) const {
        if (!env_.tools_enabled || depth >= budgets_.max_clone_depth) return nlohmann::json::array();
        return nlohmann::json::array({clone_tool_schema()});
    }

    void run_root_loop(Rollout& root, std::uint64_t seed) {
        const std::uint64_t stream = mix_seed({seed, 0});
        int tool_turns = 0;
        bool nudged = false;
        // The turn index a policy sees counts its own generated segments, so
        // a forced-spawn nudge does not shift scripted turn tracking.
        for (int turn = 0;;) {
            const std::int64_t remaining = budgets_.generation_limit - root.generated_tokens();
            if (remaining <= 0) {
                root.status = RolloutStatus::TruncatedByTokenLimit;
                return;
            }
            GenParams params{Role::Root, turn, stream, remaining};
            ChatMessage msg = policy_.next_message(root.segments, tools_for_depth(0), params);
            auto outcome = orch_detail::enforce_generation_budget(msg, remaining, env_.counter,
                                                                  traj_.token_accounting_error);
            Segment seg;
            seg.origin = Origin::Generated;
            seg.text = outcome.text;
            seg.token_count = outcome.tokens;
            root.segments.push_back(std::move(seg));
            if (outcome.truncated) {
                root.status = RolloutStatus::TruncatedByTokenLimit;
                return;
            }

            std::vector<ToolCallParse> parses = parse_tool_calls(msg);
            if (!env_.tools_enabled) parses.clear();
            if (parses.empty()) {
                if (env_.forced_spawn && env_.tools_enabled && next_clone_id_ == 1 && !nudged) {
                    nudged = true;
                    // Reject the early direct answer once and re-prompt.
                    root.segments.pop_back();
                    append_segment(root, Origin::User, std::string(kForcedSpawnNudge));
                    continue;
                }
                traj_.final_answer = orch_detail::extract_final_answer(msg.content);
                root.status = RolloutStatus::Completed;
                return;
            }
            if (tool_turns == budgets_.max_tool_turns) {
                root.status = RolloutStatus::TruncatedByTurnLimit;
                return;
            }
            ++tool_turns;
            for (const ToolCallParse& p : parses) {
                if (p.ok() && p.call->repaired) ++traj_.repaired_calls;
            }
            append_segment(root, Origin::ToolResult, execute_calls(parses, turn, seed));
            ++turn;
        }
    }

    // Runs one turn's worth of clone calls and joins their returns in call
    // order, no matter how execution interleaves.
    std::string execute_calls(const std::vector<ToolCallParse>& parses, int turn, std::uint64_t seed) {
        struct Slot {
            std::string error_line;
            std::optional<Rollout> rollout;
        };
        std::vector<Slot> slots(parses.size());
        std::vector<std::pair<std::size_t, int>> to_run; // (call index, rollout id)

        for (std::size_t j = 0; j < parses.size(); ++j) {
            const ToolCallParse& p = parses[j];
            if (!p.ok()) {
                slots[j].error_line = "clone " + std::to_string(j) + " [ERROR]: " + p.error;
                continue;
            }
            if (static_cast<int>(j) >= budgets_.max_parallel_clones_per_turn) {
                slots[j].error_line =
                    "clone " + std::to_string(j) + " [ERROR]: parallel clone limit exceeded";
                continue;
            }
            if (p.call->context_key && !env_.docs.get(*p.call->context_key)) {
                slots[j].error_line = "clone " + std::to_string(j) +
                                      " [ERROR]: unknown context_key " + *p.call->context_key;
                continue;
            }
            to_run.emplace_back(j, next_clone_id_++);
        }

        auto run_one = [&](std::size_t j, int rollout_id) {
            return run_clone(*parses[j].call, rollout_id, ParentCall{turn, static_cast<int>(j)}, seed);
        };

        if (options_.concurrent_clones && policy_.concurrent_safe() && to_run.size() > 1) {
            std::vector<std::future<Rollout>> futures;
            futures.reserve(to_run.size());
            for (auto [j, id] : to_run) {
                futures.push_back(std::async(std::launch::async, run_one, j, id));
            }
            for (std::size_t k = 0; k < to_run.size(); ++k) {
                slots[to_run[k].first].rollout = futures[k].get();
            }
        } else {
            for (auto [j, id] : to_run) slots[j].rollout = run_one(j, id);
        }

        std::vector<CloneReturn> returns;
        std::vector<std::string> lines;
        for (std::size_t j = 0; j < slots.size(); ++j) {
            if (slots[j].rollout) {
                returns.push_back(*slots[j].rollout->clone_return);
                traj_.spawn_tree[turn].push_back(slots[j].rollout->rollout_id);
                traj_.rollouts.push_back(std::move(*slots[j].rollout));
            } else {
                lines.push_back(slots[j].error_line);
            }
        }
        std::string text = render_tool_result(returns);
        for (const std::string& line : lines) {
            if (!text.empty()) text += '\n';
            text += line;
        }
        return text;
    }

    Rollout run_clone(const ToolCall& call, int rollout_id, ParentCall parent, std::uint64_t seed) {
        Rollout clone;
        clone.rollout_id = rollout_id;
        clone.role = Role::Clone;
        clone.parent_call = parent;

        append_segment(clone, Origin::System, env_.clone_system_prompt);
        std::string user = call.task;
        if (call.context_key) {
            // Presence was validated by the caller.
            user += "\n\nDocument [" + *call.context_key + "]:\n" + *env_.docs.get(*call.context_key);
        }
        append_segment(clone, Origin::User,
                       orch_detail::fit_prompt(user, budgets_.prompt_limit, env_.counter,
                                               traj_.prompt_truncated));

        const bool nulled = options_.null_clone && *options_.null_clone == parent;
        if (nulled) {
            clone.segments.push_back(Segment{Origin::Generated, "", 0});
            clone.status = RolloutStatus::Completed;
        } else {
            run_clone_loop(clone, call, parent, seed);
        }

        CloneReturn ret = extract_return(clone.generated_text(), env_.marker);
        ret.clone_index = parent.call;
        if (clone.status != RolloutStatus::Completed) ret.truncated = true;
        clone.clone_return = ret;
        return clone;
    }

    void run_clone_loop(Rollout& clone, const ToolCall& call, ParentCall parent, std::uint64_t seed) {
        const std::int64_t limit =
            std::min<std::int64_t>(call.max_tokens.value_or(budgets_.generation_limit),
                                   budgets_.generation_limit);
        const std::uint64_t stream = mix_seed({seed, 1, static_cast<std::uint64_t>(parent.turn),
                                               static_cast<std::uint64_t>(parent.call)});
        int tool_turns = 0;
        for (int turn = 0;; ++turn) {
            const std::int64_t remaining = limit - clone.generated_tokens();
            if (remaining <= 0) {
                clone.status = RolloutStatus::TruncatedByTokenLimit;
                return;
            }
            GenParams params{Role::Clone, turn, stream, remaining};
            ChatMessage msg = policy_.next_message(clone.segments, tools_for_depth(1), params);
            auto outcome = orch_detail::enforce_generation_budget(msg, remaining, env_.counter,
                                                                  traj_.token_accounting_error);
            Segment seg;
            seg.origin = Origin::Generated;
            seg.text = outcome.text;
            seg.token_count = outcome.tokens;
            clone.segments.push_back(std::move(seg));
            if (outcome.truncated) {
                clone.status = RolloutStatus::TruncatedByTokenLimit;
                return;
            }
            std::vector<ToolCallParse> parses = parse_tool_calls(msg);
            if (parses.empty()) {
                clone.status = RolloutStatus::Completed;
                return;
            }
            if (tool_turns == budgets_.max_tool_turns) {
                clone.status = RolloutStatus::TruncatedByTurnLimit;
                return;
            }
            ++tool_turns;
            // Clones may not delegate further at the default depth budget.
            std::string text;
            for (std::size_t j = 0; j < parses.size(); ++j) {
                if (j > 0) text += '\n';
                text += "clone " + std::to_string(j) + " [ERROR]: depth exceeded";
            }
            append_segment(clone, Origin::ToolResult, text);
        }
    }
};

inline Trajectory run_episode(const TaskSpec& task, PolicyBackend& policy, const EnvAdapter& env,
                              const BudgetConfig& budgets, std::uint64_t seed, const RunOptions& options = {}) {
    Orchestrator orch(policy, env, budgets);
    return orch.run(task, seed, options);
}

// Difference reward by counterfactual replay: rerun the episode with one
// clone nulled out and diff the rewards. Only defined for deterministic
// policies, where the replayed prefix is guaranteed identical.
inline double difference_reward(const TaskSpec& task, PolicyBackend& policy, const EnvAdapter& env,
                                const BudgetConfig& budgets, std::uint64_t seed, const Trajectory& traj,
                                int clone_rollout_id, const RewardConfig& reward_cfg) {
    if (!policy.deterministic()) {
        throw UsageError("difference_reward: replay requires a deterministic policy");
    }
    const Rollout* target = nullptr;
    for (const Rollout& r : traj.rollouts) {
        if (r.rollout_id == clone_rollout_id && r.role == Role::Clone) target = &r;
    }
    if (!target || !target->parent_call) {
        throw UsageError("difference_reward: no such clone rollout");
    }
    RunOptions options;
    options.null_clone = *target->parent_call;
    Trajectory counterfactual = run_episode(task, policy, env, budgets, seed, options);

    const AnswerChecker checker = task.checker();
    const double base = traj.reward ? *traj.reward : compute_reward(traj, reward_cfg, checker);
    return base - compute_reward(counterfactual, reward_cfg, checker);
}

} // namespace clonelab
