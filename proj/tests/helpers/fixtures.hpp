#pragma once

// Hand-built trajectory fixtures for credit/export tests.

#include <cstdint>
#include <string>
#include <vector>

#include "clonelab/trajectory.hpp"

namespace fixtures {

struct CloneSpec {
    std::int64_t generated_tokens = 0;
    bool parseable = true;
    bool truncated = false;
    std::string content = "42";
    clonelab::RolloutStatus status = clonelab::RolloutStatus::Completed;
};

inline clonelab::Trajectory synthetic_trajectory(std::int64_t root_tokens,
                                                 const std::vector<CloneSpec>& clones,
                                                 const std::string& final_answer, int repaired_calls = 0) {
    using namespace clonelab;
    Trajectory t;
    t.trajectory_id = "fixture#0";
    t.task_id = "fixture";
    t.seed = 1;

    Rollout root;
    root.rollout_id = 0;
    root.role = Role::Root;
    root.segments.push_back({Origin::System, "system", 2});
    root.segments.push_back({Origin::User, "task", 1});
    root.segments.push_back({Origin::Generated, "Final answer: " + final_answer, root_tokens});
    root.status = RolloutStatus::Completed;
    t.rollouts.push_back(std::move(root));

    int id = 1;
    for (const CloneSpec& spec : clones) {
        Rollout clone;
        clone.rollout_id = id;
        clone.role = Role::Clone;
        clone.parent_call = ParentCall{0, id - 1};
        clone.segments.push_back({Origin::System, "clone system", 2});
        clone.segments.push_back({Origin::User, "sub-task", 1});
        clone.segments.push_back({Origin::Generated, "clone output", spec.generated_tokens});
        clone.status = spec.status;
        CloneReturn ret;
        ret.clone_index = id - 1;
        ret.content = spec.content;
        ret.parseable = spec.parseable;
        ret.truncated = spec.truncated;
        clone.clone_return = ret;
        t.spawn_tree[0].push_back(id);
        t.rollouts.push_back(std::move(clone));
        ++id;
    }
    t.final_answer = final_answer;
    t.repaired_calls = repaired_calls;
    return t;
}

} // namespace fixtures
