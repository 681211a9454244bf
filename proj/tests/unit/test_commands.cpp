#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "clonelab/commands.hpp"

#include "../helpers/fixtures.hpp"

using namespace clonelab;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string tmp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "clonelab_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

RunConfig small_run(const std::string& dir, const std::string& policy, int workers = 1) {
    GenConfig gen;
    gen.seed = 7;
    cmd_gen_dataset(gen, 6, dir + "/dataset.jsonl");
    RunConfig cfg;
    cfg.dataset = dir + "/dataset.jsonl";
    cfg.policy = policy;
    cfg.group_size = 2;
    cfg.seed = 5;
    cfg.out_dir = dir + "/out";
    cfg.workers = workers;
    return cfg;
}

} // namespace

TEST_CASE("gen-dataset: deterministic bytes, stable manifest hash") {
    const std::string dir = tmp_dir("gen");
    GenConfig cfg;
    cfg.seed = 7;

    GenDatasetResult a = cmd_gen_dataset(cfg, 50, dir + "/a.jsonl");
    GenDatasetResult b = cmd_gen_dataset(cfg, 50, dir + "/b.jsonl");
    CHECK(slurp(a.dataset_path) == slurp(b.dataset_path));
    CHECK(a.content_hash == b.content_hash);

    auto lines = 0;
    std::ifstream in(a.dataset_path);
    std::string line;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 50);

    auto manifest = nlohmann::json::parse(slurp(a.manifest_path));
    CHECK(manifest["count"] == 50);
    CHECK(manifest["config"]["seed"] == 7);
    CHECK(manifest["content_hash"] == a.content_hash);

    GenDatasetResult empty = cmd_gen_dataset(cfg, 0, dir + "/empty.jsonl");
    CHECK(slurp(empty.dataset_path).empty());
    auto empty_manifest = nlohmann::json::parse(slurp(empty.manifest_path));
    CHECK(empty_manifest["count"] == 0);
}

TEST_CASE("run-eval: perfect delegator aces the dataset") {
    const std::string dir = tmp_dir("run_perfect");
    RunEvalResult res = cmd_run_eval(small_run(dir, "perfect-delegator"));
    CHECK(res.report.accuracy == 1.0);
    CHECK(res.report.mean_reward == 1.0);
    CHECK(res.report.avg_clones >= 1.0);
    CHECK(res.report.scored == 12); // 6 tasks x group of 2
    CHECK(std::filesystem::exists(res.trajectories_path));
    CHECK(std::filesystem::exists(res.metrics_path));
    CHECK(std::filesystem::exists(res.curve_path));
    CHECK(std::filesystem::exists(res.manifest_path));

    // Budget curve ends at the headline accuracy.
    REQUIRE_FALSE(res.report.accuracy_at_budget.empty());
    CHECK(res.report.accuracy_at_budget.back().second == res.report.accuracy);
    double prev = -1.0;
    for (const auto& [budget, acc] : res.report.accuracy_at_budget) {
        CHECK(acc >= prev);
        prev = acc;
    }
}

TEST_CASE("run-eval: wrong-answer script scores zero with no clones") {
    const std::string dir = tmp_dir("run_wrong");
    RunEvalResult res = cmd_run_eval(small_run(dir, "direct-answerer-wrong"));
    CHECK(res.report.accuracy == 0.0);
    CHECK(res.report.avg_clones == 0.0);
}

TEST_CASE("run-eval: byte-identical output for any worker-pool size") {
    const std::string dir1 = tmp_dir("run_w1");
    const std::string dir8 = tmp_dir("run_w8");
    RunEvalResult r1 = cmd_run_eval(small_run(dir1, "perfect-delegator", 1));
    RunEvalResult r8 = cmd_run_eval(small_run(dir8, "perfect-delegator", 8));
    CHECK(slurp(r1.trajectories_path) == slurp(r8.trajectories_path));
}

TEST_CASE("lazy clones lose reward against the delegator on the same tasks") {
    const std::string dir_p = tmp_dir("duel_perfect");
    const std::string dir_l = tmp_dir("duel_lazy");
    RunEvalResult perfect = cmd_run_eval(small_run(dir_p, "perfect-delegator"));
    RunEvalResult lazy = cmd_run_eval(small_run(dir_l, "lazy-clone"));
    CHECK(perfect.report.accuracy == 1.0);
    CHECK(lazy.report.accuracy == 0.0);
    CHECK(perfect.report.mean_reward > lazy.report.mean_reward);
}

TEST_CASE("majority vote: strict majority, ties to the first sample") {
    CHECK(majority_vote({"5", "5", "3", "5", "2", "5", "3", "5"}) == "5");
    CHECK(majority_vote({"1", "2"}) == "1");
    CHECK(majority_vote({" 42 ", "42", "7"}) == " 42 "); // normalized keys merge
    CHECK(majority_vote({}).empty());
}

TEST_CASE("self-consistency: deterministic correct scripts vote to 1.0") {
    const std::string dir = tmp_dir("selfcons");
    RunConfig cfg = small_run(dir, "direct-answerer");
    RunEvalResult res = cmd_self_consistency(cfg, 3);
    CHECK(res.report.accuracy == 1.0);
    // Identical samples: the latency proxy equals one sample's tokens.
    CHECK(res.report.latency_proxy > 0.0);
    CHECK_THAT(res.report.latency_proxy,
               Catch::Matchers::WithinRel(res.report.avg_generated_tokens, 1e-9));
}

TEST_CASE("export-batch: advantages, gates, and reconciliation") {
    const std::string dir = tmp_dir("export");

    // Synthetic file: one task with rewards {1, 0}, one incomplete task.
    std::vector<Trajectory> trajs;
    for (int m = 0; m < 2; ++m) {
        Trajectory t = fixtures::synthetic_trajectory(
            10, {{5, true, false, "ok"}, {7, false, true, "cut", RolloutStatus::TruncatedByTokenLimit}},
            m == 0 ? "42" : "41");
        t.task_id = "task-a";
        t.trajectory_id = "task-a#" + std::to_string(m);
        t.reward = m == 0 ? 1.0 : 0.0;
        trajs.push_back(std::move(t));
    }
    Trajectory orphan = fixtures::synthetic_trajectory(10, {}, "42");
    orphan.task_id = "task-b";
    orphan.trajectory_id = "task-b#0";
    orphan.reward = 1.0;
    trajs.push_back(std::move(orphan));

    RunConfig header_cfg;
    header_cfg.group_size = 2;
    const std::string traj_path = dir + "/trajectories.jsonl";
    write_trajectory_file(traj_path, trajectory_file_header(header_cfg), trajs);

    ExportResult res = cmd_export_batch(traj_path, dir + "/batch.jsonl", GateKind::Hard);
    CHECK(res.stats.groups == 1);
    CHECK(res.stats.skipped_tasks == 1);
    CHECK(res.stats.rollouts == 6); // 2 trajectories x 3 rollouts

    std::ifstream in(res.out_path);
    std::string line;
    REQUIRE(std::getline(in, line));
    auto header = nlohmann::json::parse(line);
    CHECK(header["schema"] == "clonelab.trainer_batch.v1");
    CHECK(header["gate"] == "hard");
    CHECK(header["clip_ratio"] == 0.1);
    CHECK(header["kl_penalty"] == 5e-4);
    CHECK(header["minibatch_size"] == 8);
    CHECK(header["loss_aggregation"] == "token mean");
    CHECK(header["trajectories_per_batch"] == 128);
    CHECK(header["groups_per_batch"] == 32);

    // Reconcile every exported weight against a recomputation.
    TrajectoryFile file = read_trajectory_file(traj_path);
    std::vector<double> rewards{1.0, 0.0};
    std::vector<double> advantages = grpo_advantages(rewards);
    std::size_t record_idx = 0;
    while (std::getline(in, line)) {
        auto record = nlohmann::json::parse(line);
        const std::size_t traj_idx = record_idx / 3;
        const std::size_t roll_idx = record_idx % 3;
        AdvantageLedger ledger =
            per_token_weights(file.trajectories[traj_idx], advantages[traj_idx], GateKind::Hard);
        const LedgerEntry& entry = ledger.per_rollout[roll_idx];
        CHECK(record["rollout_id"] == entry.rollout_id);
        CHECK(record["gate"] == entry.gate_weight);
        CHECK(record["group_advantage"] == advantages[traj_idx]);
        REQUIRE(record["token_weights"].size() == entry.token_weights.size());
        for (std::size_t i = 0; i < entry.token_weights.size(); ++i) {
            CHECK(record["token_weights"][i].get<double>() == entry.token_weights[i]);
        }
        // Hard-gated clone: the truncated one exports all-zero weights.
        if (entry.role == Role::Clone && entry.gate_weight == 0.0) {
            for (const auto& w : record["token_weights"]) CHECK(w.get<double>() == 0.0);
            CHECK(record["excluded"] == true);
        }
        ++record_idx;
    }
    CHECK(record_idx == 6);
}

TEST_CASE("metrics command rejects mismatched or missing inputs") {
    const std::string dir = tmp_dir("metrics");
    RunConfig cfg = small_run(dir, "perfect-delegator");
    RunEvalResult res = cmd_run_eval(cfg);

    MetricsReport merged = cmd_metrics({res.trajectories_path}, dir + "/curve.csv");
    CHECK(merged.accuracy == res.report.accuracy);
    CHECK(merged.scored == res.report.scored);
    CHECK(std::filesystem::exists(dir + "/curve.csv"));

    CHECK_THROWS_AS(cmd_metrics({}), ConfigError);

    // Same data under a different gate header: metadata mismatch.
    TrajectoryFile file = read_trajectory_file(res.trajectories_path);
    RunConfig other = cfg;
    other.gate = "soft";
    const std::string other_path = dir + "/other.jsonl";
    write_trajectory_file(other_path, trajectory_file_header(other), file.trajectories);
    CHECK_THROWS_AS(cmd_metrics({res.trajectories_path, other_path}), ConfigError);

    // A non-trajectory file is a schema mismatch.
    cmd_detail::write_text(dir + "/junk.jsonl", "{\"schema\": \"something-else\"}\n");
    CHECK_THROWS_AS(cmd_metrics({dir + "/junk.jsonl"}), ConfigError);
}

TEST_CASE("gradlab report: deterministic and all checks pass") {
    nlohmann::ordered_json a = cmd_gradlab();
    nlohmann::ordered_json b = cmd_gradlab();
    CHECK(a.dump() == b.dump());
    CHECK(a["all_checks_pass"] == true);
    REQUIRE(a["envs"].size() == 5);

    nlohmann::ordered_json one = cmd_gradlab({"constant_reward"});
    REQUIRE(one["envs"].size() == 1);
    CHECK(one["envs"][0]["checks"]["constant_reward_zero_grad"] == true);

    CHECK_THROWS_AS(cmd_gradlab({"nonexistent"}), ConfigError);
}

TEST_CASE("run config: file loading, overrides, validation") {
    const std::string dir = tmp_dir("config");
    cmd_detail::write_text(dir + "/cfg.json",
                           R"({"policy": "lazy-clone", "group_size": 3,
                               "budgets": {"generation_limit": 256},
                               "reward": {"rt_factor": 0.5}})");
    RunConfig cfg = RunConfig::from_file(dir + "/cfg.json");
    CHECK(cfg.policy == "lazy-clone");
    CHECK(cfg.group_size == 3);
    CHECK(cfg.budgets.generation_limit == 256);
    CHECK(cfg.reward.rt_factor == 0.5);
    CHECK(cfg.budgets.prompt_limit == 1024); // untouched default

    RunConfig bad = cfg;
    bad.group_size = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    RunConfig bad2 = cfg;
    bad2.gate = "imaginary";
    CHECK_THROWS_AS(bad2.validate(), ConfigError);
    RunConfig bad3 = cfg;
    bad3.episodes_per_task = 4; // not a multiple of 3
    CHECK_THROWS_AS(bad3.validate(), ConfigError);
}
