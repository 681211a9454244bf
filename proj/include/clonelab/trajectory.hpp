#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "clonelab/errors.hpp"
#include "clonelab/protocol.hpp"
#include "clonelab/text.hpp"

#include "json.hpp"

namespace clonelab {

enum class Origin : std::uint8_t { System, User, Generated, ToolResult };
enum class Role : std::uint8_t { Root, Clone };
enum class RolloutStatus : std::uint8_t {
    Completed,
    TruncatedByTokenLimit,
    TruncatedByTurnLimit,
    ProtocolError,
};

inline std::string_view to_string(Origin o) {
    switch (o) {
        case Origin::System: return "system";
        case Origin::User: return "user";
        case Origin::Generated: return "generated";
        case Origin::ToolResult: return "tool_result";
    }
    return "?";
}

inline std::string_view to_string(Role r) { return r == Role::Root ? "root" : "clone"; }

inline std::string_view to_string(RolloutStatus s) {
    switch (s) {
        case RolloutStatus::Completed: return "completed";
        case RolloutStatus::TruncatedByTokenLimit: return "truncated_by_token_limit";
        case RolloutStatus::TruncatedByTurnLimit: return "truncated_by_turn_limit";
        case RolloutStatus::ProtocolError: return "protocol_error";
    }
    return "?";
}

template <typename T>
inline T enum_from_string(std::string_view s);

template <>
inline Origin enum_from_string<Origin>(std::string_view s) {
    if (s == "system") return Origin::System;
    if (s == "user") return Origin::User;
    if (s == "generated") return Origin::Generated;
    if (s == "tool_result") return Origin::ToolResult;
    throw ConfigError("unknown origin: " + std::string(s));
}

template <>
inline Role enum_from_string<Role>(std::string_view s) {
    if (s == "root") return Role::Root;
    if (s == "clone") return Role::Clone;
    throw ConfigError("unknown role: " + std::string(s));
}

template <>
inline RolloutStatus enum_from_string<RolloutStatus>(std::string_view s) {
    if (s == "completed") return RolloutStatus::Completed;
    if (s == "truncated_by_token_limit") return RolloutStatus::TruncatedByTokenLimit;
    if (s == "truncated_by_turn_limit") return RolloutStatus::TruncatedByTurnLimit;
    if (s == "protocol_error") return RolloutStatus::ProtocolError;
    throw ConfigError("unknown status: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Token accounting

enum class TokenCounterKind : std::uint8_t { ByteHeuristic, Whitespace, RemoteUsage };

// The heuristic counters are cheap stand-ins for a real tokenizer; the remote
// kind defers to server-reported usage for generated text (prompt-side
// segments fall back to the byte heuristic).
struct TokenCounter {
    TokenCounterKind kind = TokenCounterKind::ByteHeuristic;

    std::int64_t count(std::string_view text) const {
        switch (kind) {
            case TokenCounterKind::ByteHeuristic:
            case TokenCounterKind::RemoteUsage:
                return static_cast<std::int64_t>((text.size() + 3) / 4);
            case TokenCounterKind::Whitespace: {
                std::int64_t words = 0;
                bool in_word = false;
                for (char c : text) {
                    bool ws = std::isspace(static_cast<unsigned char>(c));
                    if (!ws && !in_word) ++words;
                    in_word = !ws;
                }
                return words;
            }
        }
        return 0;
    }

    // Longest prefix measuring at most max_tokens under this counter.
    std::string truncate(std::string_view text, std::int64_t max_tokens) const {
        if (max_tokens <= 0) return {};
        if (count(text) <= max_tokens) return std::string(text);
        switch (kind) {
            case TokenCounterKind::ByteHeuristic:
            case TokenCounterKind::RemoteUsage:
                return std::string(utf8_prefix(text, static_cast<std::size_t>(max_tokens) * 4));
            case TokenCounterKind::Whitespace: {
                std::int64_t words = 0;
                bool in_word = false;
                for (std::size_t i = 0; i < text.size(); ++i) {
                    bool ws = std::isspace(static_cast<unsigned char>(text[i]));
                    if (!ws && !in_word) {
                        if (words == max_tokens) return std::string(text.substr(0, i));
                        ++words;
                    }
                    in_word = !ws;
                }
                return std::string(text);
            }
        }
        return {};
    }
};

inline std::string_view to_string(TokenCounterKind k) {
    switch (k) {
        case TokenCounterKind::ByteHeuristic: return "byte";
        case TokenCounterKind::Whitespace: return "whitespace";
        case TokenCounterKind::RemoteUsage: return "remote";
    }
    return "?";
}

template <>
inline TokenCounterKind enum_from_string<TokenCounterKind>(std::string_view s) {
    if (s == "byte") return TokenCounterKind::ByteHeuristic;
    if (s == "whitespace") return TokenCounterKind::Whitespace;
    if (s == "remote") return TokenCounterKind::RemoteUsage;
    throw ConfigError("unknown token counter: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Rollouts and trajectories

struct Segment {
    Origin origin = Origin::Generated;
    std::string text;
    std::int64_t token_count = 0;
};

struct ParentCall {
    int turn = 0;
    int call = 0;
    friend bool operator==(const ParentCall&, const ParentCall&) = default;
};

struct Rollout {
    int rollout_id = 0;
    Role role = Role::Root;
    std::optional<ParentCall> parent_call;
    std::vector<Segment> segments;
    RolloutStatus status = RolloutStatus::Completed;
    std::optional<CloneReturn> clone_return;

    std::int64_t generated_tokens() const {
        std::int64_t n = 0;
        for (const Segment& s : segments) {
            if (s.origin == Origin::Generated) n += s.token_count;
        }
        return n;
    }

    std::string generated_text() const {
        std::string out;
        for (const Segment& s : segments) {
            if (s.origin == Origin::Generated) out += s.text;
        }
        return out;
    }
};

struct Trajectory {
    std::string trajectory_id;
    std::string task_id;
    std::uint64_t seed = 0;
    std::vector<Rollout> rollouts;
    std::map<int, std::vector<int>> spawn_tree; // root turn index -> clone rollout ids
    std::optional<std::string> final_answer;
    std::optional<double> reward;
    std::optional<double> advantage;
    std::optional<bool> correct;
    int repaired_calls = 0;
    bool prompt_truncated = false;
    bool token_accounting_error = false;

    const Rollout& root() const {
        for (const Rollout& r : rollouts) {
            if (r.role == Role::Root) return r;
        }
        throw UsageError("trajectory has no root rollout");
    }

    std::int64_t root_generated_tokens() const { return root().generated_tokens(); }

    std::vector<std::int64_t> clone_generated_tokens() const {
        std::vector<std::int64_t> out;
        for (const Rollout& r : rollouts) {
            if (r.role == Role::Clone) out.push_back(r.generated_tokens());
        }
        return out;
    }

    std::int64_t total_generated_tokens() const {
        std::int64_t n = 0;
        for (const Rollout& r : rollouts) n += r.generated_tokens();
        return n;
    }

    // Every segment of every rollout: prompts, contexts, and generations.
    std::int64_t total_context_tokens() const {
        std::int64_t n = 0;
        for (const Rollout& r : rollouts) {
            for (const Segment& s : r.segments) n += s.token_count;
        }
        return n;
    }
};

// ---------------------------------------------------------------------------
// Budgets

struct BudgetConfig {
    std::int64_t prompt_limit = 1024;
    std::int64_t generation_limit = 1024; // per rollout
    int max_tool_turns = 10;
    int max_clone_depth = 1;
    int max_parallel_clones_per_turn = 16;

    void validate() const {
        if (prompt_limit <= 0 || generation_limit <= 0 || max_tool_turns <= 0 || max_clone_depth <= 0 ||
            max_parallel_clones_per_turn <= 0) {
            throw ConfigError("budget limits must all be positive");
        }
    }
};

// ---------------------------------------------------------------------------
// Serialization (JSONL, one trajectory per line; ordered keys so identical
// runs produce identical bytes)

inline nlohmann::ordered_json to_json(const CloneReturn& r) {
    return nlohmann::ordered_json{{"clone_index", r.clone_index},
                                  {"content", r.content},
                                  {"parseable", r.parseable},
                                  {"truncated", r.truncated}};
}

inline CloneReturn clone_return_from_json(const nlohmann::json& j) {
    CloneReturn r;
    r.clone_index = j.at("clone_index").get<int>();
    r.content = j.at("content").get<std::string>();
    r.parseable = j.at("parseable").get<bool>();
    r.truncated = j.at("truncated").get<bool>();
    return r;
}

inline nlohmann::ordered_json to_json(const Rollout& r) {
    nlohmann::ordered_json j;
    j["rollout_id"] = r.rollout_id;
    j["role"] = to_string(r.role);
    if (r.parent_call) {
        j["parent_call"] = nlohmann::ordered_json::array({r.parent_call->turn, r.parent_call->call});
    } else {
        j["parent_call"] = nullptr;
    }
    j["status"] = to_string(r.status);
    auto segs = nlohmann::ordered_json::array();
    for (const Segment& s : r.segments) {
        segs.push_back(nlohmann::ordered_json{
            {"origin", to_string(s.origin)}, {"text", s.text}, {"token_count", s.token_count}});
    }
    j["segments"] = std::move(segs);
    j["clone_return"] = r.clone_return ? to_json(*r.clone_return) : nlohmann::ordered_json(nullptr);
    return j;
}

inline Rollout rollout_from_json(const nlohmann::json& j) {
    Rollout r;
    r.rollout_id = j.at("rollout_id").get<int>();
    r.role = enum_from_string<Role>(j.at("role").get<std::string>());
    if (!j.at("parent_call").is_null()) {
        r.parent_call = ParentCall{j.at("parent_call").at(0).get<int>(), j.at("parent_call").at(1).get<int>()};
    }
    r.status = enum_from_string<RolloutStatus>(j.at("status").get<std::string>());
    for (const auto& s : j.at("segments")) {
        r.segments.push_back(Segment{enum_from_string<Origin>(s.at("origin").get<std::string>()),
                                     s.at("text").get<std::string>(), s.at("token_count").get<std::int64_t>()});
    }
    if (!j.at("clone_return").is_null()) r.clone_return = clone_return_from_json(j.at("clone_return"));
    return r;
}

inline nlohmann::ordered_json to_json(const Trajectory& t) {
    nlohmann::ordered_json j;
    j["trajectory_id"] = t.trajectory_id;
    j["task_id"] = t.task_id;
    j["seed"] = t.seed;
    j["final_answer"] = t.final_answer ? nlohmann::ordered_json(*t.final_answer) : nlohmann::ordered_json(nullptr);
    j["reward"] = t.reward ? nlohmann::ordered_json(*t.reward) : nlohmann::ordered_json(nullptr);
    j["advantage"] = t.advantage ? nlohmann::ordered_json(*t.advantage) : nlohmann::ordered_json(nullptr);
    j["correct"] = t.correct ? nlohmann::ordered_json(*t.correct) : nlohmann::ordered_json(nullptr);
    j["rt_tokens"] = t.root_generated_tokens();
    j["clone_tokens"] = t.clone_generated_tokens();
    j["repaired_calls"] = t.repaired_calls;
    j["prompt_truncated"] = t.prompt_truncated;
    auto rolls = nlohmann::ordered_json::array();
    for (const Rollout& r : t.rollouts) rolls.push_back(to_json(r));
    j["rollouts"] = std::move(rolls);
    return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    Trajectory t;
    t.trajectory_id = j.at("trajectory_id").get<std::string>();
    t.task_id = j.at("task_id").get<std::string>();
    t.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("final_answer").is_null()) t.final_answer = j.at("final_answer").get<std::string>();
    if (!j.at("reward").is_null()) t.reward = j.at("reward").get<double>();
    if (!j.at("advantage").is_null()) t.advantage = j.at("advantage").get<double>();
    if (!j.at("correct").is_null()) t.correct = j.at("correct").get<bool>();
    t.repaired_calls = j.at("repaired_calls").get<int>();
    t.prompt_truncated = j.value("prompt_truncated", false);
    for (const auto& r : j.at("rollouts")) t.rollouts.push_back(rollout_from_json(r));
    // Rebuild the spawn tree from parent links.
    for (const Rollout& r : t.rollouts) {
        if (r.parent_call) t.spawn_tree[r.parent_call->turn].push_back(r.rollout_id);
    }
    return t;
}

} // namespace clonelab
