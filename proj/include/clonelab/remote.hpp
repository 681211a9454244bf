#pragma once

#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "clonelab/errors.hpp"
#include "clonelab/policy.hpp"
#include "clonelab/trajectory.hpp"

#include "httplib.h"
#include "json.hpp"

namespace clonelab {

struct RemoteConfig {
    std::string base_url = "http://127.0.0.1:8000";
    std::string model = "default";
    double temperature = 0.7;
    double top_p = 1.0;
    int max_retries = 2;
    int connect_timeout_s = 10;
    int read_timeout_s = 120;
    std::string api_key; // usually injected from the environment

    static RemoteConfig from_env(RemoteConfig base) {
        if (const char* url = std::getenv("CLONELAB_BASE_URL")) base.base_url = url;
        if (const char* key = std::getenv("CLONELAB_API_KEY")) base.api_key = key;
        return base;
    }
};

// Chat-completions client. Requests are idempotent generations, so transient
// transport failures and 5xx responses retry; anything else surfaces as a
// TransportError and the episode is dropped unscored.
class RemotePolicy : public PolicyBackend {
public:
    explicit RemotePolicy(RemoteConfig cfg) : cfg_(std::move(cfg)) {}

    ChatMessage next_message(const std::vector<Segment>& history, const nlohmann::json& tools,
                             const GenParams& params) override {
        const nlohmann::ordered_json request = build_request(history, tools, params);
        const std::string body = request.dump();

        std::string last_error;
        for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
            httplib::Client client(cfg_.base_url);
            client.set_connection_timeout(cfg_.connect_timeout_s, 0);
            client.set_read_timeout(cfg_.read_timeout_s, 0);
            httplib::Headers headers;
            if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

            auto res = client.Post("/v1/chat/completions", headers, body, "application/json");
            if (!res) {
                last_error = "connection failed: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "server error HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw TransportError("chat completion failed: HTTP " + std::to_string(res->status));
            }
            return parse_response(res->body);
        }
        throw TransportError("chat completion failed after " + std::to_string(cfg_.max_retries + 1) +
                             " attempts: " + last_error);
    }

    std::string kind() const override { return "remote"; }
    bool deterministic() const override { return false; }

private:
    RemoteConfig cfg_;

    nlohmann::ordered_json build_request(const std::vector<Segment>& history, const nlohmann::json& tools,
                                         const GenParams& params) const {
        auto messages = nlohmann::ordered_json::array();
        for (const Segment& s : history) {
            const char* role = "user";
            switch (s.origin) {
                case Origin::System: role = "system"; break;
                case Origin::User: role = "user"; break;
                case Origin::Generated: role = "assistant"; break;
                case Origin::ToolResult: role = "tool"; break;
            }
            messages.push_back(nlohmann::ordered_json{{"role", role}, {"content", s.text}});
        }
        nlohmann::ordered_json req{{"model", cfg_.model},
                                   {"messages", std::move(messages)},
                                   {"temperature", cfg_.temperature},
                                   {"top_p", cfg_.top_p},
                                   {"max_tokens", params.max_tokens},
                                   {"seed", params.seed}};
        if (tools.is_array() && !tools.empty()) req["tools"] = tools;
        return req;
    }

    static ChatMessage parse_response(const std::string& body) {
        nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") || j["choices"].empty()) {
            throw TransportError("malformed chat completion response");
        }
        const nlohmann::json& msg = j["choices"][0]["message"];
        ChatMessage out;
        if (msg.contains("content") && msg["content"].is_string()) {
            out.content = msg["content"].get<std::string>();
        }
        if (msg.contains("tool_calls") && msg["tool_calls"].is_array()) {
            for (const auto& call : msg["tool_calls"]) {
                RawToolCall rc;
                rc.id = call.value("id", "");
                if (call.contains("function")) {
                    const auto& fn = call["function"];
                    if (fn.contains("arguments")) {
                        rc.arguments = fn["arguments"].is_string() ? fn["arguments"].get<std::string>()
                                                                   : fn["arguments"].dump();
                    }
                }
                out.tool_calls.push_back(std::move(rc));
            }
        }
        if (j.contains("usage") && j["usage"].is_object()) {
            const auto& usage = j["usage"];
            if (usage.contains("prompt_tokens")) out.usage_prompt_tokens = usage["prompt_tokens"].get<std::int64_t>();
            if (usage.contains("completion_tokens")) {
                out.usage_completion_tokens = usage["completion_tokens"].get<std::int64_t>();
            }
        }
        return out;
    }
};

} // namespace clonelab
