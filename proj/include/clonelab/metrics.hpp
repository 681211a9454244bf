#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "clonelab/arith.hpp"
#include "clonelab/errors.hpp"
#include "clonelab/trajectory.hpp"

#include "json.hpp"

namespace clonelab {

struct MetricsReport {
    std::int64_t scored = 0;
    std::int64_t unscored = 0;
    double accuracy = 0.0;
    double mean_reward = 0.0;
    double avg_generated_tokens = 0.0;    // root plus clones, per trajectory
    double avg_total_budget_tokens = 0.0; // prompts, contexts, and generations
    double avg_clones = 0.0;
    std::vector<std::pair<std::int64_t, double>> accuracy_at_budget;
    std::map<std::string, std::int64_t> status_counts;
    double latency_proxy = 0.0; // self-consistency: generated tokens / k

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["scored"] = scored;
        j["unscored"] = unscored;
        j["accuracy"] = accuracy;
        j["mean_reward"] = mean_reward;
        j["avg_generated_tokens"] = avg_generated_tokens;
        j["avg_total_budget_tokens"] = avg_total_budget_tokens;
        j["avg_clones"] = avg_clones;
        j["latency_proxy"] = latency_proxy;
        j["status_counts"] = status_counts;
        auto curve = nlohmann::ordered_json::array();
        for (const auto& [budget, acc] : accuracy_at_budget) {
            curve.push_back(nlohmann::ordered_json::array({budget, acc}));
        }
        j["accuracy_at_budget"] = std::move(curve);
        return j;
    }

    // Plot-ready CSV of the accuracy/budget frontier.
    std::string curve_csv() const {
        std::string out = "budget_tokens,accuracy\n";
        for (const auto& [budget, acc] : accuracy_at_budget) {
            out += std::to_string(budget) + "," + std::to_string(acc) + "\n";
        }
        return out;
    }
};

// Aggregates scored trajectories. A trajectory counts toward the budget
// curve only when it is correct and its generated tokens fit the budget.
inline MetricsReport compute_metrics(const std::vector<Trajectory>& trajs, std::int64_t unscored = 0) {
    if (trajs.empty()) throw ConfigError("no scored trajectories to aggregate");
    MetricsReport r;
    r.scored = static_cast<std::int64_t>(trajs.size());
    r.unscored = unscored;

    std::vector<std::pair<std::int64_t, bool>> tokens_correct;
    for (const Trajectory& t : trajs) {
        const bool correct = t.correct.value_or(false);
        r.accuracy += correct ? 1.0 : 0.0;
        r.mean_reward += t.reward.value_or(0.0);
        const std::int64_t gen = t.total_generated_tokens();
        r.avg_generated_tokens += static_cast<double>(gen);
        r.avg_total_budget_tokens += static_cast<double>(t.total_context_tokens());
        r.avg_clones += static_cast<double>(t.clone_generated_tokens().size());
        ++r.status_counts[std::string(to_string(t.root().status))];
        tokens_correct.emplace_back(gen, correct);
    }
    const double n = static_cast<double>(trajs.size());
    r.accuracy /= n;
    r.mean_reward /= n;
    r.avg_generated_tokens /= n;
    r.avg_total_budget_tokens /= n;
    r.avg_clones /= n;

    std::vector<std::int64_t> budgets;
    for (const auto& [gen, correct] : tokens_correct) budgets.push_back(gen);
    std::sort(budgets.begin(), budgets.end());
    budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
    for (std::int64_t b : budgets) {
        std::int64_t hits = 0;
        for (const auto& [gen, correct] : tokens_correct) {
            if (correct && gen <= b) ++hits;
        }
        r.accuracy_at_budget.emplace_back(b, static_cast<double>(hits) / n);
    }
    return r;
}

// Majority vote over normalized answers; ties go to the earliest-sampled
// answer among the tied ones.
inline std::string majority_vote(const std::vector<std::string>& answers) {
    if (answers.empty()) return {};
    std::vector<std::string> keys;
    std::vector<int> counts;
    std::vector<std::string> first_raw;
    for (const std::string& raw : answers) {
        std::string key = normalize_answer(raw);
        if (key.empty()) key = std::string(trim(raw));
        bool found = false;
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (keys[i] == key) {
                ++counts[i];
                found = true;
                break;
            }
        }
        if (!found) {
            keys.push_back(std::move(key));
            counts.push_back(1);
            first_raw.push_back(raw);
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < keys.size(); ++i) {
        if (counts[i] > counts[best]) best = i; // strict: ties keep the earlier key
    }
    return first_raw[best];
}

} // namespace clonelab
