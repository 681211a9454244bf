#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "clonelab/credit.hpp"
#include "clonelab/trajectory.hpp"

#include "json.hpp"

namespace clonelab {

// Trainer-side hyperparameters. The exporter is not a trainer; these ride
// along in the batch header as pass-through metadata.
struct TrainerMeta {
    double clip_ratio = 0.1;
    double kl_penalty = 5e-4;
    int minibatch_size = 8;
    std::string loss_aggregation = "token mean";
    int trajectories_per_batch = 128;
    int groups_per_batch = 32;
};

inline nlohmann::ordered_json export_header(GateKind gate, double alpha, int group_size,
                                            const TrainerMeta& meta = {}) {
    nlohmann::ordered_json j;
    j["schema"] = "clonelab.trainer_batch.v1";
    j["gate"] = to_string(gate);
    j["gate_alpha"] = alpha;
    j["group_size"] = group_size;
    j["clip_ratio"] = meta.clip_ratio;
    j["kl_penalty"] = meta.kl_penalty;
    j["minibatch_size"] = meta.minibatch_size;
    j["loss_aggregation"] = meta.loss_aggregation;
    j["trajectories_per_batch"] = meta.trajectories_per_batch;
    j["groups_per_batch"] = meta.groups_per_batch;
    return j;
}

inline nlohmann::ordered_json ledger_record_json(const Trajectory& traj, double advantage,
                                                 const LedgerEntry& entry) {
    nlohmann::ordered_json j;
    j["trajectory_id"] = traj.trajectory_id;
    j["rollout_id"] = entry.rollout_id;
    j["role"] = to_string(entry.role);
    j["gate"] = entry.gate_weight;
    j["group_advantage"] = advantage;
    j["excluded"] = entry.excluded;
    j["token_weights"] = entry.token_weights;
    for (const Rollout& r : traj.rollouts) {
        if (r.rollout_id != entry.rollout_id) continue;
        auto segs = nlohmann::ordered_json::array();
        for (const Segment& s : r.segments) {
            segs.push_back(nlohmann::ordered_json{
                {"origin", to_string(s.origin)}, {"text", s.text}, {"token_count", s.token_count}});
        }
        j["segments"] = std::move(segs);
    }
    return j;
}

struct ExportStats {
    int groups = 0;
    int skipped_tasks = 0;
    int rollouts = 0;
};

// Emits one ledger record per rollout for every complete group of
// `group_size` trajectories sharing a task. Incomplete groups are skipped and
// counted, never padded.
inline ExportStats export_batch_records(const std::vector<Trajectory>& trajs, int group_size, GateKind gate,
                                        double alpha, std::ostream& out) {
    ExportStats stats;
    std::vector<std::string> task_order;
    std::map<std::string, std::vector<const Trajectory*>> by_task;
    for (const Trajectory& t : trajs) {
        auto [it, inserted] = by_task.try_emplace(t.task_id);
        if (inserted) task_order.push_back(t.task_id);
        it->second.push_back(&t);
    }
    for (const std::string& task : task_order) {
        const auto& group = by_task[task];
        if (static_cast<int>(group.size()) != group_size) {
            ++stats.skipped_tasks;
            continue;
        }
        std::vector<double> rewards;
        bool usable = true;
        for (const Trajectory* t : group) {
            if (!t->reward) {
                usable = false;
                break;
            }
            rewards.push_back(*t->reward);
        }
        if (!usable) {
            ++stats.skipped_tasks;
            continue;
        }
        const std::vector<double> advantages = grpo_advantages(rewards);
        ++stats.groups;
        for (std::size_t i = 0; i < group.size(); ++i) {
            AdvantageLedger ledger = per_token_weights(*group[i], advantages[i], gate, alpha);
            for (const LedgerEntry& entry : ledger.per_rollout) {
                out << ledger_record_json(*group[i], advantages[i], entry).dump() << '\n';
                ++stats.rollouts;
            }
        }
    }
    return stats;
}

} // namespace clonelab
