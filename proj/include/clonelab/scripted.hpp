#pragma once

#include <cstdint>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "clonelab/expr.hpp"
#include "clonelab/policy.hpp"
#include "clonelab/prompts.hpp"
#include "clonelab/protocol.hpp"
#include "clonelab/trajectory.hpp"

#include "json.hpp"

namespace clonelab {

// Deterministic scripted policies. These are regression fixtures: each is a
// pure function of the visible transcript, so episodes replay bit-for-bit.

namespace scripted_detail {

inline std::string user_task_text(const std::vector<Segment>& history) {
    for (const Segment& s : history) {
        if (s.origin == Origin::User) return s.text;
    }
    return {};
}

inline std::optional<std::string> after_prefix(std::string_view text, std::string_view prefix) {
    std::size_t pos = text.find(prefix);
    if (pos == std::string_view::npos) return std::nullopt;
    return std::string(trim(text.substr(pos + prefix.size())));
}

inline std::optional<Expr> try_parse(std::string_view s) {
    try {
        return parse_expr(s);
    } catch (const ParseError&) {
        return std::nullopt;
    }
}

struct ParsedResult {
    int index = 0;
    bool usable = false;
    std::string content;
};

// Reads back the "clone N[ flags]: content" lines of the latest tool result.
inline std::vector<ParsedResult> last_tool_results(const std::vector<Segment>& history) {
    const Segment* seg = nullptr;
    for (const Segment& s : history) {
        if (s.origin == Origin::ToolResult) seg = &s;
    }
    std::vector<ParsedResult> out;
    if (!seg) return out;
    std::string_view text = seg->text;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        std::string_view line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
        if (line.substr(0, 6) == "clone ") {
            ParsedResult r;
            std::size_t i = 6;
            while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
            r.index = std::atoi(std::string(line.substr(6, i - 6)).c_str());
            std::size_t colon = line.find(": ", i);
            if (colon != std::string_view::npos) {
                r.usable = line.substr(i, colon - i).find('[') == std::string_view::npos;
                r.content = std::string(line.substr(colon + 2));
                out.push_back(std::move(r));
            }
        }
        if (end == std::string_view::npos) break;
        start = end + 1;
    }
    return out;
}

inline RawToolCall make_clone_call(int index, std::string_view task,
                                   std::optional<std::string_view> context_key = std::nullopt) {
    nlohmann::ordered_json args;
    args["task"] = std::string(task);
    if (context_key) args["context_key"] = std::string(*context_key);
    return RawToolCall{"call-" + std::to_string(index), args.dump()};
}

inline ChatMessage final_answer_message(std::string_view answer) {
    return ChatMessage{std::string(kFinalAnswerPrefix) + " " + std::string(answer), {}, {}, {}};
}

inline ChatMessage marked_return_message(std::string_view value) {
    return ChatMessage{"<return>" + std::string(value) + "</return>", {}, {}, {}};
}

inline std::string filler_text(std::size_t bytes) {
    static constexpr std::string_view kChunk = "carrying the partial product forward digit by digit ";
    std::string out;
    out.reserve(bytes + kChunk.size());
    while (out.size() < bytes) out += kChunk;
    return out;
}

// Clone-side arithmetic: evaluate the "compute:" task exactly.
inline ChatMessage compute_clone_reply(const std::vector<Segment>& history) {
    auto task = after_prefix(user_task_text(history), kCloneComputePrefix);
    if (!task) return marked_return_message("error");
    auto expr = try_parse(*task);
    if (!expr) return marked_return_message("error");
    try {
        return marked_return_message(std::to_string(evaluate_expr(*expr)));
    } catch (const EvalError&) {
        return marked_return_message("error");
    }
}

} // namespace scripted_detail

// Answers in one turn, no delegation. `offset` lets tests script a policy
// that is confidently wrong.
class DirectAnswerer : public PolicyBackend {
public:
    explicit DirectAnswerer(std::int64_t offset = 0) : offset_(offset) {}

    ChatMessage next_message(const std::vector<Segment>& history, const nlohmann::json&,
                             const GenParams& params) override {
        using namespace scripted_detail;
        if (params.role == Role::Clone) return compute_clone_reply(history);
        auto task = after_prefix(user_task_text(history), kArithTaskPrefix);
        if (!task) return final_answer_message("unknown");
        auto expr = try_parse(*task);
        if (!expr) return final_answer_message("unknown");
        return final_answer_message(std::to_string(evaluate_expr(*expr) + offset_));
    }

    std::string kind() const override { return "scripted:direct-answerer"; }

private:
    std::int64_t offset_;
};

// Splits the expression at its top operator, delegates both sides, combines.
class PerfectDelegator : public PolicyBackend {
public:
    ChatMessage next_message(const std::vector<Segment>& history, const nlohmann::json&,
                             const GenParams& params) override {
        using namespace scripted_detail;
        if (params.role == Role::Clone) return clone_reply(history);
        if (params.turn_index == 0) return open_turn(history);
        return combine_turn(history);
    }

    std::string kind() const override { return "scripted:perfect-delegator"; }

protected:
    virtual ChatMessage clone_reply(const std::vector<Segment>& history) {
        return scripted_detail::compute_clone_reply(history);
    }

private:
    static ChatMessage open_turn(const std::vector<Segment>& history) {
        using namespace scripted_detail;
        auto task = after_prefix(user_task_text(history), kArithTaskPrefix);
        if (!task) return final_answer_message("unknown");
        auto expr = try_parse(*task);
        if (!expr) return final_answer_message("unknown");
        if (expr->is_leaf()) return final_answer_message(std::to_string(expr->leaf));
        ChatMessage msg;
        msg.content = "Splitting the computation.";
        msg.tool_calls.push_back(
            make_clone_call(0, std::string(kCloneComputePrefix) + render_expr(*expr->lhs)));
        msg.tool_calls.push_back(
            make_clone_call(1, std::string(kCloneComputePrefix) + render_expr(*expr->rhs)));
        return msg;
    }

    static ChatMessage combine_turn(const std::vector<Segment>& history) {
        using namespace scripted_detail;
        auto task = after_prefix(user_task_text(history), kArithTaskPrefix);
        auto expr = task ? try_parse(*task) : std::nullopt;
        auto results = last_tool_results(history);
        if (!expr || expr->is_leaf() || results.size() < 2 || !results[0].usable || !results[1].usable) {
            return final_answer_message("unknown");
        }
        errno = 0;
        char* end = nullptr;
        const std::int64_t l = std::strtoll(results[0].content.c_str(), &end, 10);
        if (errno != 0 || end == results[0].content.c_str()) return final_answer_message("unknown");
        errno = 0;
        const std::int64_t r = std::strtoll(results[1].content.c_str(), &end, 10);
        if (errno != 0) return final_answer_message("unknown");
        Expr combined = Expr::make(*expr->op, Expr::make_leaf(l), Expr::make_leaf(r));
        try {
            return final_answer_message(std::to_string(evaluate_expr(combined)));
        } catch (const EvalError&) {
            return final_answer_message("unknown");
        }
    }
};

// Same delegation shape, but its clones never use return markers, so every
// return comes back unverified and the root gives up.
class LazyClone : public PerfectDelegator {
public:
    std::string kind() const override { return "scripted:lazy-clone"; }

protected:
    ChatMessage clone_reply(const std::vector<Segment>& history) override {
        using namespace scripted_detail;
        ChatMessage marked = compute_clone_reply(history);
        // Strip the markers: same value, no protocol.
        std::string v = marked.content;
        auto open = v.find('>');
        auto close = v.rfind('<');
        if (open != std::string::npos && close != std::string::npos && close > open) {
            v = v.substr(open + 1, close - open - 1);
        }
        return ChatMessage{"the result works out to " + v, {}, {}, {}};
    }
};

// Clones pad far past the generation limit before ever reaching the marker.
class VerboseClone : public PerfectDelegator {
public:
    explicit VerboseClone(std::size_t pad_bytes = 8192) : pad_bytes_(pad_bytes) {}

    std::string kind() const override { return "scripted:verbose-clone"; }

protected:
    ChatMessage clone_reply(const std::vector<Segment>& history) override {
        using namespace scripted_detail;
        ChatMessage marked = compute_clone_reply(history);
        return ChatMessage{filler_text(pad_bytes_) + marked.content, {}, {}, {}};
    }

private:
    std::size_t pad_bytes_;
};

// Replays the recovery scenario: spawn one clone per left-spine prefix of the
// task expression; clones with more than three operations drown in filler and
// get cut by the token limit; the root then re-delegates the remainder seeded
// with the deepest usable intermediate value.
class FivePrefixReplayer : public PolicyBackend {
public:
    ChatMessage next_message(const std::vector<Segment>& history, const nlohmann::json&,
                             const GenParams& params) override {
        using namespace scripted_detail;
        if (params.role == Role::Clone) return clone_reply(history);
        if (params.turn_index == 0) return spawn_prefixes(history);
        if (params.turn_index == 1) return respawn_remainder(history);
        return finish(history);
    }

    std::string kind() const override { return "scripted:five-prefix"; }

private:
    // Non-leaf nodes along the left spine, innermost first.
    static std::vector<const Expr*> left_spine(const Expr& e) {
        std::vector<const Expr*> spine;
        const Expr* node = &e;
        while (!node->is_leaf()) {
            spine.push_back(node);
            node = node->lhs.get();
        }
        std::reverse(spine.begin(), spine.end());
        return spine;
    }

    static std::optional<Expr> task_expr(const std::vector<Segment>& history) {
        using namespace scripted_detail;
        auto task = after_prefix(user_task_text(history), kArithTaskPrefix);
        if (!task) return std::nullopt;
        return try_parse(*task);
    }

    static ChatMessage spawn_prefixes(const std::vector<Segment>& history) {
        using namespace scripted_detail;
        auto expr = task_expr(history);
        if (!expr || expr->is_leaf()) return final_answer_message("unknown");
        ChatMessage msg;
        msg.content = "Fanning out one clone per prefix.";
        const auto spine = left_spine(*expr);
        for (std::size_t i = 0; i < spine.size(); ++i) {
            msg.tool_calls.push_back(
                make_clone_call(static_cast<int>(i), std::string(kCloneComputePrefix) + render_expr(*spine[i])));
        }
        return msg;
    }

    static ChatMessage respawn_remainder(const std::vector<Segment>& history) {
        using namespace scripted_detail;
        auto expr = task_expr(history);
        if (!expr) return final_answer_message("unknown");
        const auto spine = left_spine(*expr);
        const auto results = last_tool_results(history);
        int best = -1;
        for (const auto& r : results) {
            if (r.usable && r.index > best && r.index < static_cast<int>(spine.size())) best = r.index;
        }
        if (best < 0) return final_answer_message("unknown");
        if (best + 1 == static_cast<int>(spine.size())) return final_answer_message(results[best].content);
        // Rebuild the remainder on top of the recovered intermediate value.
        std::string t = results[static_cast<std::size_t>(best)].content;
        for (std::size_t i = static_cast<std::size_t>(best) + 1; i < spine.size(); ++i) {
            const char* op_text = "";
            switch (*spine[i]->op) {
                case Op::Add: op_text = "+"; break;
                case Op::Sub: op_text = "−"; break;
                case Op::Mul: op_text = "×"; break;
                case Op::Div: op_text = "÷"; break;
            }
            t = "(" + t + op_text + render_expr(*spine[i]->rhs) + ")";
        }
        ChatMessage msg;
        msg.content = "Recovering from the truncated clones.";
        msg.tool_calls.push_back(make_clone_call(0, std::string(kCloneComputePrefix) + t));
        return msg;
    }

    static ChatMessage finish(const std::vector<Segment>& history) {
        using namespace scripted_detail;
        const auto results = last_tool_results(history);
        if (results.empty() || !results[0].usable) return final_answer_message("unknown");
        return final_answer_message(results[0].content);
    }

    static ChatMessage clone_reply(const std::vector<Segment>& history) {
        using namespace scripted_detail;
        auto task = after_prefix(user_task_text(history), kCloneComputePrefix);
        auto expr = task ? try_parse(*task) : std::nullopt;
        if (expr && expr->op_count() > 3) {
            // Too much work for one clone: runs headlong into the token limit.
            ChatMessage marked = compute_clone_reply(history);
            return ChatMessage{filler_text(8192) + marked.content, {}, {}, {}};
        }
        return compute_clone_reply(history);
    }
};

// Two-hop retrieval: follow NEXT= pointers through keyed documents until one
// yields ANSWER=. Clones carry only the pointer or the fact back to the root.
class TwoHopPolicy : public PolicyBackend {
public:
    ChatMessage next_message(const std::vector<Segment>& history, const nlohmann::json&,
                             const GenParams& params) override {
        using namespace scripted_detail;
        if (params.role == Role::Clone) return clone_reply(history);
        if (params.turn_index == 0) {
            auto key = after_prefix(first_line_with(history, "START_KEY="), "START_KEY=");
            if (!key) return final_answer_message("unknown");
            ChatMessage msg;
            msg.content = "Looking up the starting document.";
            msg.tool_calls.push_back(make_clone_call(0, "Extract the pointer or the answer.", *key));
            return msg;
        }
        const auto results = last_tool_results(history);
        if (results.empty() || !results[0].usable) return final_answer_message("unknown");
        const std::string& content = results[0].content;
        if (auto next = after_prefix(content, "NEXT=")) {
            ChatMessage msg;
            msg.content = "Following the pointer.";
            msg.tool_calls.push_back(make_clone_call(0, "Extract the pointer or the answer.", *next));
            return msg;
        }
        if (auto answer = after_prefix(content, "ANSWER=")) return final_answer_message(*answer);
        return final_answer_message("unknown");
    }

    std::string kind() const override { return "scripted:two-hop"; }

private:
    static std::string first_line_with(const std::vector<Segment>& history, std::string_view needle) {
        const std::string text = scripted_detail::user_task_text(history);
        std::size_t pos = text.find(needle);
        if (pos == std::string::npos) return {};
        std::size_t end = text.find('\n', pos);
        return text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    }

    static ChatMessage clone_reply(const std::vector<Segment>& history) {
        using namespace scripted_detail;
        const std::string text = user_task_text(history);
        for (std::string_view tag : {"ANSWER=", "NEXT="}) {
            std::size_t pos = text.find(tag);
            if (pos != std::string::npos) {
                std::size_t end = text.find('\n', pos);
                std::string_view line(text.data() + pos,
                                      (end == std::string::npos ? text.size() : end) - pos);
                return marked_return_message(trim(line));
            }
        }
        return marked_return_message("error");
    }
};

// Baseline for the retrieval comparison: every document is already inline in
// the prompt, so the root just scans for the answer and never spawns.
class FullContextPolicy : public PolicyBackend {
public:
    ChatMessage next_message(const std::vector<Segment>& history, const nlohmann::json&,
                             const GenParams&) override {
        using namespace scripted_detail;
        const std::string text = user_task_text(history);
        std::size_t pos = text.find("ANSWER=");
        if (pos == std::string::npos) return final_answer_message("unknown");
        std::size_t end = text.find('\n', pos);
        return final_answer_message(
            trim(text.substr(pos + 7, (end == std::string::npos ? text.size() : end) - pos - 7)));
    }

    std::string kind() const override { return "scripted:full-context"; }
};

inline std::unique_ptr<PolicyBackend> make_scripted_policy(std::string_view name) {
    if (name == "perfect-delegator") return std::make_unique<PerfectDelegator>();
    if (name == "direct-answerer") return std::make_unique<DirectAnswerer>();
    if (name == "direct-answerer-wrong") return std::make_unique<DirectAnswerer>(1);
    if (name == "lazy-clone") return std::make_unique<LazyClone>();
    if (name == "verbose-clone") return std::make_unique<VerboseClone>();
    if (name == "five-prefix") return std::make_unique<FivePrefixReplayer>();
    if (name == "two-hop") return std::make_unique<TwoHopPolicy>();
    if (name == "full-context") return std::make_unique<FullContextPolicy>();
    throw ConfigError("unknown scripted policy: " + std::string(name));
}

} // namespace clonelab
