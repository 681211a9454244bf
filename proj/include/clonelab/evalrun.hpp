#pragma once

#include <atomic>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "clonelab/config.hpp"
#include "clonelab/credit.hpp"
#include "clonelab/metrics.hpp"
#include "clonelab/orchestrator.hpp"
#include "clonelab/remote.hpp"
#include "clonelab/scripted.hpp"

namespace clonelab {

inline std::vector<TaskSpec> load_tasks(const RunConfig& cfg) {
    std::vector<TaskSpec> tasks;
    if (cfg.dataset_kind == "arith") {
        for (const DatasetRecord& rec : read_dataset(cfg.dataset)) {
            tasks.push_back(TaskSpec{rec.id, arith_task_prompt(rec.expression), rec.answer, true});
        }
    } else {
        std::ifstream in(cfg.dataset);
        if (!in) throw ConfigError("cannot open dataset: " + cfg.dataset);
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto j = nlohmann::json::parse(line);
            tasks.push_back(TaskSpec{j.at("id").get<std::string>(),
                                     hop_task_prompt(j.at("question").get<std::string>(),
                                                     j.at("start_key").get<std::string>()),
                                     j.at("answer").get<std::string>(), false});
        }
    }
    if (cfg.max_tasks > 0 && static_cast<int>(tasks.size()) > cfg.max_tasks) {
        tasks.resize(static_cast<std::size_t>(cfg.max_tasks));
    }
    return tasks;
}

inline std::unique_ptr<PolicyBackend> make_policy(const RunConfig& cfg) {
    if (cfg.policy == "remote") {
        RemoteConfig rc;
        if (!cfg.remote_base_url.empty()) rc.base_url = cfg.remote_base_url;
        rc.model = cfg.remote_model;
        rc.temperature = cfg.temperature;
        rc.top_p = cfg.top_p;
        return std::make_unique<RemotePolicy>(RemoteConfig::from_env(rc));
    }
    return make_scripted_policy(cfg.policy);
}

inline EnvAdapter make_env(const RunConfig& cfg) {
    EnvAdapter env;
    if (!cfg.context_store.empty()) env.docs = DocumentStore::load_jsonl(cfg.context_store);
    env.counter.kind = enum_from_string<TokenCounterKind>(cfg.counter);
    env.forced_spawn = cfg.forced_spawn;
    return env;
}

struct EvalOutcome {
    std::vector<Trajectory> trajectories;
    MetricsReport report;
    std::int64_t unscored = 0;
};

// Runs every (task, group member) episode on a bounded worker pool. Episode
// seeds derive from (run seed, task id, member), so results are identical for
// any pool size; output order is fixed as (task, member).
inline EvalOutcome run_eval_batch(const RunConfig& cfg, bool tools_enabled = true) {
    cfg.validate();
    const std::vector<TaskSpec> tasks = load_tasks(cfg);
    if (tasks.empty()) throw ConfigError("dataset is empty: " + cfg.dataset);
    std::unique_ptr<PolicyBackend> policy = make_policy(cfg);
    EnvAdapter env = make_env(cfg);
    env.tools_enabled = tools_enabled;

    const int members = cfg.resolved_episodes_per_task();
    const std::size_t total = tasks.size() * static_cast<std::size_t>(members);
    std::vector<std::optional<Trajectory>> results(total);
    std::vector<char> failed(total, 0);

    auto run_index = [&](std::size_t flat) {
        const std::size_t ti = flat / static_cast<std::size_t>(members);
        const int m = static_cast<int>(flat % static_cast<std::size_t>(members));
        const TaskSpec& task = tasks[ti];
        const std::uint64_t ep_seed = mix_seed({cfg.seed, fnv1a64(task.task_id), static_cast<std::uint64_t>(m)});
        try {
            Trajectory t = run_episode(task, *policy, env, cfg.budgets, ep_seed);
            t.trajectory_id = task.task_id + "#" + std::to_string(m);
            results[flat] = std::move(t);
        } catch (const TransportError&) {
            failed[flat] = 1;
        }
    };

    const int workers = policy->concurrent_safe() ? cfg.workers : 1;
    if (workers <= 1) {
        for (std::size_t i = 0; i < total; ++i) run_index(i);
    } else {
        std::atomic<std::size_t> cursor{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = cursor.fetch_add(1); i < total; i = cursor.fetch_add(1)) run_index(i);
            });
        }
        for (std::thread& th : pool) th.join();
    }

    EvalOutcome out;
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
        const AnswerChecker checker = tasks[ti].checker();
        for (int g = 0; g < members; g += cfg.group_size) {
            std::vector<std::size_t> group_idx;
            for (int m = g; m < g + cfg.group_size; ++m) {
                const std::size_t flat = ti * static_cast<std::size_t>(members) + static_cast<std::size_t>(m);
                if (results[flat]) {
                    Trajectory& t = *results[flat];
                    t.reward = compute_reward(t, cfg.reward, checker);
                    t.correct = t.final_answer && checker(*t.final_answer);
                    group_idx.push_back(flat);
                } else {
                    ++out.unscored;
                }
            }
            if (static_cast<int>(group_idx.size()) == cfg.group_size) {
                std::vector<double> rewards;
                for (std::size_t flat : group_idx) rewards.push_back(*results[flat]->reward);
                const std::vector<double> advantages = grpo_advantages(rewards);
                for (std::size_t k = 0; k < group_idx.size(); ++k) {
                    results[group_idx[k]]->advantage = advantages[k];
                }
            }
        }
    }
    for (auto& slot : results) {
        if (slot) out.trajectories.push_back(std::move(*slot));
    }
    if (out.unscored * 2 > static_cast<std::int64_t>(total)) {
        throw TransportError("more than half of all episodes failed in transport");
    }
    out.report = compute_metrics(out.trajectories, out.unscored);
    return out;
}

} // namespace clonelab
