#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "clonelab/json_repair.hpp"
#include "clonelab/text.hpp"

#include "json.hpp"

namespace clonelab {

// The single tool a root policy may call.
inline constexpr std::string_view kCloneToolName = "clone";

struct MarkerConfig {
    std::string open = "<return>";
    std::string close = "</return>";
};

inline constexpr std::size_t kMaxReturnBytes = 256;

struct ToolCall {
    std::string call_id;
    std::string task;
    std::optional<std::string> context_key;
    std::optional<std::int64_t> max_tokens;
    bool repaired = false;
};

// One per raw payload: either a ToolCall or a parse failure carrying the raw
// bytes, so the caller can answer with an error tool-result instead of dying.
struct ToolCallParse {
    std::optional<ToolCall> call;
    std::string error;
    std::string raw;
    bool ok() const { return call.has_value(); }
};

struct CloneReturn {
    int clone_index = 0;
    std::string content;
    bool parseable = false;
    bool truncated = false;
};

// A policy's output for one turn. Tool calls may arrive in the structured
// field or as inline <tool_call>...</tool_call> blocks in the content.
struct RawToolCall {
    std::string id;
    std::string arguments;
};

struct ChatMessage {
    std::string content;
    std::vector<RawToolCall> tool_calls;
    std::optional<std::int64_t> usage_prompt_tokens;
    std::optional<std::int64_t> usage_completion_tokens;
};

inline nlohmann::ordered_json clone_tool_schema() {
    return nlohmann::ordered_json{
        {"type", "function"},
        {"function",
         {{"name", std::string(kCloneToolName)},
          {"description",
           "Spawn a helper clone of yourself in a fresh context to work on a "
           "narrowly scoped sub-task. The clone sees only the task text (plus "
           "the expanded document when context_key is given) and must reply "
           "with its final answer wrapped in <return>...</return>."},
          {"parameters",
           {{"type", "object"},
            {"properties",
             {{"task", {{"type", "string"}, {"description", "Sub-task prompt for the clone."}}},
              {"context_key",
               {{"type", "string"}, {"description", "Optional key expanded into a stored document."}}},
              {"max_tokens",
               {{"type", "integer"}, {"description", "Optional per-clone generation limit."}}}}},
            {"required", nlohmann::ordered_json::array({"task"})}}}}}};
}

namespace protocol_detail {

inline constexpr std::string_view kInlineOpen = "<tool_call>";
inline constexpr std::string_view kInlineClose = "</tool_call>";

inline ToolCallParse parse_payload(std::string raw, std::string call_id) {
    ToolCallParse out;
    out.raw = raw;
    RepairResult rep = repair_json(raw);
    if (!rep.ok) {
        out.error = "malformed tool call: " + rep.error;
        return out;
    }
    if (!rep.value.is_object()) {
        out.error = "malformed tool call: arguments are not an object";
        return out;
    }
    auto task_it = rep.value.find("task");
    if (task_it == rep.value.end() || !task_it->is_string() || task_it->get<std::string>().empty()) {
        out.error = "malformed tool call: missing non-empty \"task\"";
        return out;
    }
    ToolCall call;
    call.call_id = std::move(call_id);
    call.task = task_it->get<std::string>();
    call.repaired = rep.repaired;
    if (auto it = rep.value.find("context_key"); it != rep.value.end() && it->is_string()) {
        call.context_key = it->get<std::string>();
    }
    if (auto it = rep.value.find("max_tokens"); it != rep.value.end() && it->is_number_integer()) {
        auto v = it->get<std::int64_t>();
        if (v > 0) call.max_tokens = v;
    }
    out.call = std::move(call);
    return out;
}

} // namespace protocol_detail

// Emission order is preserved: structured calls first (in field order), then
// inline blocks in the order they appear in the content.
inline std::vector<ToolCallParse> parse_tool_calls(const ChatMessage& msg) {
    std::vector<ToolCallParse> out;
    int counter = 0;
    for (const RawToolCall& rc : msg.tool_calls) {
        std::string id = rc.id.empty() ? "call-" + std::to_string(counter) : rc.id;
        out.push_back(protocol_detail::parse_payload(rc.arguments, std::move(id)));
        ++counter;
    }
    std::string_view content = msg.content;
    std::size_t pos = 0;
    while (true) {
        std::size_t open = content.find(protocol_detail::kInlineOpen, pos);
        if (open == std::string_view::npos) break;
        std::size_t body = open + protocol_detail::kInlineOpen.size();
        std::size_t close = content.find(protocol_detail::kInlineClose, body);
        if (close == std::string_view::npos) break;
        std::string payload(trim(content.substr(body, close - body)));
        out.push_back(protocol_detail::parse_payload(std::move(payload), "call-" + std::to_string(counter)));
        ++counter;
        pos = close + protocol_detail::kInlineClose.size();
    }
    return out;
}

// Pulls the clone's marked answer out of its raw output. With a complete
// marker pair the innermost span wins; without one the final max_bytes of the
// whole output are kept and flagged unverified. Content never exceeds
// max_bytes and never splits a UTF-8 sequence.
inline CloneReturn extract_return(std::string_view raw_output, const MarkerConfig& marker = {},
                                  std::size_t max_bytes = kMaxReturnBytes) {
    CloneReturn r;
    std::size_t open = raw_output.rfind(marker.open);
    while (open != std::string_view::npos) {
        std::size_t body = open + marker.open.size();
        std::size_t close = raw_output.find(marker.close, body);
        if (close != std::string_view::npos) {
            std::string_view span = raw_output.substr(body, close - body);
            std::string_view cut = utf8_prefix(span, max_bytes);
            r.content = std::string(cut);
            r.parseable = true;
            r.truncated = cut.size() < span.size();
            return r;
        }
        if (open == 0) break;
        open = raw_output.rfind(marker.open, open - 1);
    }
    r.content = std::string(utf8_suffix(raw_output, max_bytes));
    r.parseable = false;
    r.truncated = true;
    return r;
}

// Joins clone returns into the tool-result text the root sees next turn.
// Unusable returns are labeled so a policy can react to them.
inline std::string render_tool_result(const std::vector<CloneReturn>& returns) {
    std::string out;
    for (std::size_t i = 0; i < returns.size(); ++i) {
        const CloneReturn& r = returns[i];
        if (i > 0) out += '\n';
        out += "clone " + std::to_string(r.clone_index);
        if (!r.parseable) {
            out += " [UNVERIFIED/TRUNCATED]";
        } else if (r.truncated) {
            out += " [TRUNCATED]";
        }
        out += ": " + r.content;
    }
    return out;
}

} // namespace clonelab
