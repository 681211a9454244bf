#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "clonelab/credit.hpp"
#include "clonelab/errors.hpp"
#include "clonelab/trajectory.hpp"

#include "json.hpp"

namespace clonelab {

// One run = one dataset x one policy x one seed. Batch commands and the CLI
// all speak this config; a JSON file provides the base and flags override it.
struct RunConfig {
    std::string dataset;
    std::string dataset_kind = "arith"; // arith | hops
    std::string context_store;          // optional keyed-document JSONL
    std::string policy = "perfect-delegator";
    std::string gate = "hard";
    double gate_alpha = 1.0;
    std::string counter = "byte";
    BudgetConfig budgets;
    RewardConfig reward;
    int group_size = 4;
    int episodes_per_task = 0; // 0 means one group
    std::uint64_t seed = 0;
    std::string out_dir = "run";
    int workers = 1;
    bool forced_spawn = false;
    int max_tasks = 0; // 0 means the whole dataset

    std::string remote_base_url;
    std::string remote_model = "default";
    double temperature = 0.7;
    double top_p = 1.0;

    int resolved_episodes_per_task() const { return episodes_per_task > 0 ? episodes_per_task : group_size; }

    void validate() const {
        budgets.validate();
        reward.validate();
        if (group_size < 2) throw ConfigError("group_size must be >= 2");
        if (workers < 1) throw ConfigError("workers must be >= 1");
        if (resolved_episodes_per_task() % group_size != 0) {
            throw ConfigError("episodes_per_task must be a multiple of group_size");
        }
        (void)enum_from_string<GateKind>(gate);
        (void)enum_from_string<TokenCounterKind>(counter);
        if (dataset_kind != "arith" && dataset_kind != "hops") {
            throw ConfigError("dataset_kind must be arith or hops");
        }
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        c.dataset = j.value("dataset", c.dataset);
        c.dataset_kind = j.value("dataset_kind", c.dataset_kind);
        c.context_store = j.value("context_store", c.context_store);
        c.policy = j.value("policy", c.policy);
        c.gate = j.value("gate", c.gate);
        c.gate_alpha = j.value("gate_alpha", c.gate_alpha);
        c.counter = j.value("counter", c.counter);
        if (j.contains("budgets")) {
            const auto& b = j["budgets"];
            c.budgets.prompt_limit = b.value("prompt_limit", c.budgets.prompt_limit);
            c.budgets.generation_limit = b.value("generation_limit", c.budgets.generation_limit);
            c.budgets.max_tool_turns = b.value("max_tool_turns", c.budgets.max_tool_turns);
            c.budgets.max_clone_depth = b.value("max_clone_depth", c.budgets.max_clone_depth);
            c.budgets.max_parallel_clones_per_turn =
                b.value("max_parallel_clones_per_turn", c.budgets.max_parallel_clones_per_turn);
        }
        if (j.contains("reward")) {
            const auto& r = j["reward"];
            c.reward.rt_threshold = r.value("rt_threshold", c.reward.rt_threshold);
            c.reward.rt_ramp = r.value("rt_ramp", c.reward.rt_ramp);
            c.reward.rt_factor = r.value("rt_factor", c.reward.rt_factor);
            c.reward.cl_threshold = r.value("cl_threshold", c.reward.cl_threshold);
            c.reward.cl_ramp = r.value("cl_ramp", c.reward.cl_ramp);
            c.reward.cl_factor = r.value("cl_factor", c.reward.cl_factor);
            c.reward.json_repair_penalty = r.value("json_repair_penalty", c.reward.json_repair_penalty);
        }
        c.group_size = j.value("group_size", c.group_size);
        c.episodes_per_task = j.value("episodes_per_task", c.episodes_per_task);
        c.seed = j.value("seed", c.seed);
        c.out_dir = j.value("out_dir", c.out_dir);
        c.workers = j.value("workers", c.workers);
        c.forced_spawn = j.value("forced_spawn", c.forced_spawn);
        c.max_tasks = j.value("max_tasks", c.max_tasks);
        c.remote_base_url = j.value("remote_base_url", c.remote_base_url);
        c.remote_model = j.value("remote_model", c.remote_model);
        c.temperature = j.value("temperature", c.temperature);
        c.top_p = j.value("top_p", c.top_p);
        return c;
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config: " + path);
        nlohmann::json j = nlohmann::json::parse(in);
        return from_json(j);
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["dataset"] = dataset;
        j["dataset_kind"] = dataset_kind;
        j["context_store"] = context_store;
        j["policy"] = policy;
        j["gate"] = gate;
        j["gate_alpha"] = gate_alpha;
        j["counter"] = counter;
        j["budgets"] = nlohmann::ordered_json{{"prompt_limit", budgets.prompt_limit},
                                              {"generation_limit", budgets.generation_limit},
                                              {"max_tool_turns", budgets.max_tool_turns},
                                              {"max_clone_depth", budgets.max_clone_depth},
                                              {"max_parallel_clones_per_turn", budgets.max_parallel_clones_per_turn}};
        j["reward"] = nlohmann::ordered_json{{"rt_threshold", reward.rt_threshold},
                                             {"rt_ramp", reward.rt_ramp},
                                             {"rt_factor", reward.rt_factor},
                                             {"cl_threshold", reward.cl_threshold},
                                             {"cl_ramp", reward.cl_ramp},
                                             {"cl_factor", reward.cl_factor},
                                             {"json_repair_penalty", reward.json_repair_penalty}};
        j["group_size"] = group_size;
        j["episodes_per_task"] = resolved_episodes_per_task();
        j["seed"] = seed;
        j["out_dir"] = out_dir;
        j["workers"] = workers;
        j["forced_spawn"] = forced_spawn;
        j["max_tasks"] = max_tasks;
        j["remote_base_url"] = remote_base_url;
        j["remote_model"] = remote_model;
        j["temperature"] = temperature;
        j["top_p"] = top_p;
        return j;
    }
};

} // namespace clonelab
