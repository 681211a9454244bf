#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clonelab/arith.hpp"
#include "clonelab/config.hpp"
#include "clonelab/evalrun.hpp"
#include "clonelab/export.hpp"
#include "clonelab/gradlab.hpp"
#include "clonelab/metrics.hpp"

#include "json.hpp"

namespace clonelab {

inline constexpr std::string_view kTrajectorySchema = "clonelab.trajectory.v1";

namespace cmd_detail {

inline void write_text(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write: " + path);
    out << content;
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace cmd_detail

// ---------------------------------------------------------------------------
// gen-dataset

struct GenDatasetResult {
    std::string dataset_path;
    std::string manifest_path;
    std::uint64_t count = 0;
    std::string content_hash;
};

inline GenDatasetResult cmd_gen_dataset(const GenConfig& cfg, std::uint64_t count, const std::string& out_path) {
    cfg.validate();
    std::string body;
    for (std::uint64_t i = 0; i < count; ++i) {
        body += dataset_record_json(generate_problem(cfg, i)).dump();
        body += '\n';
    }
    cmd_detail::write_text(out_path, body);

    GenDatasetResult res;
    res.dataset_path = out_path;
    res.count = count;
    char hash_hex[17];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(body)));
    res.content_hash = hash_hex;

    std::string ops;
    for (Op op : cfg.allowed_ops) {
        if (!ops.empty()) ops += ',';
        switch (op) {
            case Op::Add: ops += "add"; break;
            case Op::Sub: ops += "sub"; break;
            case Op::Mul: ops += "mul"; break;
            case Op::Div: ops += "div"; break;
        }
    }
    nlohmann::ordered_json manifest;
    manifest["schema"] = "clonelab.dataset_manifest.v1";
    manifest["count"] = count;
    manifest["content_hash"] = res.content_hash;
    manifest["config"] = nlohmann::ordered_json{{"max_ops", cfg.max_ops},
                                                {"operand_max", cfg.operand_max},
                                                {"intermediate_max", cfg.intermediate_max},
                                                {"allowed_ops", ops},
                                                {"seed", cfg.seed}};
    res.manifest_path = out_path + ".manifest.json";
    cmd_detail::write_text(res.manifest_path, manifest.dump(2) + "\n");
    return res;
}

// ---------------------------------------------------------------------------
// trajectory files: one header line, then one trajectory per line

inline nlohmann::ordered_json trajectory_file_header(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["schema"] = std::string(kTrajectorySchema);
    j["run_seed"] = cfg.seed;
    j["policy"] = cfg.policy;
    j["gate"] = cfg.gate;
    j["counter"] = cfg.counter;
    j["group_size"] = cfg.group_size;
    return j;
}

inline void write_trajectory_file(const std::string& path, const nlohmann::ordered_json& header,
                                  const std::vector<Trajectory>& trajs) {
    std::string body = header.dump();
    body += '\n';
    for (const Trajectory& t : trajs) {
        body += to_json(t).dump();
        body += '\n';
    }
    cmd_detail::write_text(path, body);
}

struct TrajectoryFile {
    nlohmann::json header;
    std::vector<Trajectory> trajectories;
};

inline TrajectoryFile read_trajectory_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open trajectory file: " + path);
    TrajectoryFile out;
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("trajectory file is empty: " + path);
    out.header = nlohmann::json::parse(line);
    if (out.header.value("schema", "") != kTrajectorySchema) {
        throw ConfigError("schema-version mismatch in " + path);
    }
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        out.trajectories.push_back(trajectory_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// run-eval and self-consistency

struct RunEvalResult {
    std::string trajectories_path;
    std::string metrics_path;
    std::string curve_path;
    std::string manifest_path;
    MetricsReport report;
};

inline RunEvalResult cmd_run_eval(const RunConfig& cfg) {
    EvalOutcome outcome = run_eval_batch(cfg);
    RunEvalResult res;
    res.report = outcome.report;
    res.trajectories_path = cfg.out_dir + "/trajectories.jsonl";
    res.metrics_path = cfg.out_dir + "/metrics.json";
    res.curve_path = cfg.out_dir + "/accuracy_at_budget.csv";
    res.manifest_path = cfg.out_dir + "/manifest.json";

    write_trajectory_file(res.trajectories_path, trajectory_file_header(cfg), outcome.trajectories);
    cmd_detail::write_text(res.metrics_path, outcome.report.to_json().dump(2) + "\n");
    cmd_detail::write_text(res.curve_path, outcome.report.curve_csv());

    nlohmann::ordered_json manifest;
    manifest["schema"] = "clonelab.run_manifest.v1";
    manifest["config"] = cfg.to_json();
    manifest["tasks"] = outcome.report.scored / cfg.resolved_episodes_per_task();
    manifest["episodes"] = outcome.report.scored + outcome.report.unscored;
    manifest["unscored"] = outcome.report.unscored;
    cmd_detail::write_text(res.manifest_path, manifest.dump(2) + "\n");
    return res;
}

// k independent no-tool samples per task, majority-voted. The latency proxy
// divides generated tokens by k since the samples run in parallel.
inline RunEvalResult cmd_self_consistency(const RunConfig& base_cfg, int k = 8) {
    if (k < 1) throw ConfigError("self-consistency needs k >= 1");
    RunConfig cfg = base_cfg;
    cfg.group_size = std::max(2, k);
    cfg.episodes_per_task = cfg.group_size;
    cfg.validate();

    EvalOutcome outcome = run_eval_batch(cfg, /*tools_enabled=*/false);

    // Regroup per task, vote over the first k members.
    std::map<std::string, std::vector<const Trajectory*>> by_task;
    std::vector<std::string> task_order;
    for (const Trajectory& t : outcome.trajectories) {
        auto [it, inserted] = by_task.try_emplace(t.task_id);
        if (inserted) task_order.push_back(t.task_id);
        it->second.push_back(&t);
    }
    const std::vector<TaskSpec> tasks = load_tasks(cfg);
    std::int64_t correct_votes = 0;
    double generated = 0.0;
    std::int64_t voted = 0;
    for (const TaskSpec& task : tasks) {
        auto it = by_task.find(task.task_id);
        if (it == by_task.end()) continue;
        std::vector<std::string> answers;
        double task_tokens = 0.0;
        for (const Trajectory* t : it->second) {
            if (static_cast<int>(answers.size()) == k) break;
            answers.push_back(t->final_answer.value_or(""));
            task_tokens += static_cast<double>(t->total_generated_tokens());
        }
        if (answers.empty()) continue;
        ++voted;
        if (task.checker()(majority_vote(answers))) ++correct_votes;
        generated += task_tokens / static_cast<double>(k);
    }
    MetricsReport report = outcome.report;
    report.accuracy = voted > 0 ? static_cast<double>(correct_votes) / static_cast<double>(voted) : 0.0;
    report.latency_proxy = voted > 0 ? generated / static_cast<double>(voted) : 0.0;

    RunEvalResult res;
    res.report = report;
    res.trajectories_path = cfg.out_dir + "/self_consistency_trajectories.jsonl";
    res.metrics_path = cfg.out_dir + "/self_consistency_metrics.json";
    write_trajectory_file(res.trajectories_path, trajectory_file_header(cfg), outcome.trajectories);
    nlohmann::ordered_json mj = report.to_json();
    mj["k"] = k;
    cmd_detail::write_text(res.metrics_path, mj.dump(2) + "\n");
    return res;
}

// ---------------------------------------------------------------------------
// export-batch

struct ExportResult {
    std::string out_path;
    ExportStats stats;
};

inline ExportResult cmd_export_batch(const std::string& traj_path, const std::string& out_path,
                                     GateKind gate, double alpha = 1.0, int group_size = 0) {
    TrajectoryFile file = read_trajectory_file(traj_path);
    const int g = group_size > 0 ? group_size : file.header.value("group_size", 4);
    std::ostringstream body;
    body << export_header(gate, alpha, g).dump() << '\n';
    ExportStats stats = export_batch_records(file.trajectories, g, gate, alpha, body);
    cmd_detail::write_text(out_path, body.str());
    return ExportResult{out_path, stats};
}

// ---------------------------------------------------------------------------
// gradlab report

namespace cmd_detail {

inline nlohmann::ordered_json grad_json(const GradTable& g) {
    auto rows = nlohmann::ordered_json::array();
    for (int s = 0; s < g.rows; ++s) {
        auto row = nlohmann::ordered_json::array();
        for (int a = 0; a < g.cols; ++a) row.push_back(g.at(s, a));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::ordered_json estimator_entry(const gradlab::EstimatorSpec& spec, const gradlab::MicroEnv& env,
                                              const ToyPolicy& policy, const GradTable& exact) {
    GradTable mean = gradlab::estimator_expectation(spec, env, policy);
    GradTable bias = mean;
    bias.add_scaled(exact, -1.0);
    nlohmann::ordered_json j;
    j["max_abs_bias"] = bias.max_abs_diff(GradTable(bias.rows, bias.cols));
    j["bias_norm"] = bias.norm();
    j["variance"] = gradlab::estimator_variance(spec, env, policy);
    return j;
}

} // namespace cmd_detail

// Machine-readable verification report over the shipped micro-envs. The
// tolerances here mirror the acceptance suite.
inline nlohmann::ordered_json cmd_gradlab(const std::vector<std::string>& env_names = {}) {
    using namespace gradlab;
    std::vector<MicroEnv> envs;
    if (env_names.empty()) {
        envs = shipped_envs();
    } else {
        for (const std::string& name : env_names) envs.push_back(env_by_name(name));
    }

    nlohmann::ordered_json report;
    report["schema"] = "clonelab.gradlab.v1";
    auto env_array = nlohmann::ordered_json::array();
    bool all_pass = true;
    for (const MicroEnv& env : envs) {
        nlohmann::ordered_json ej;
        ej["name"] = env.name;

        ToyPolicy uniform = env.uniform_policy();
        ToyPolicy randomized = env.uniform_policy();
        {
            Rng rng(23);
            for (double& x : randomized.theta) x = rng.real01() * 2.0 - 1.0;
        }

        const auto trajs = enumerate_trajectories(env, uniform);
        double prob_sum = 0.0;
        for (const auto& t : trajs) prob_sum += t.prob;
        ej["trajectories"] = trajs.size();
        ej["prob_sum_abs_error"] = std::abs(prob_sum - 1.0);

        const GradTable exact_uniform = exact_grad_J(env, uniform);
        const GradTable exact_random = exact_grad_J(env, randomized);
        ej["exact_grad_uniform"] = cmd_detail::grad_json(exact_uniform);
        ej["exact_J_uniform"] = exact_J(env, uniform);

        const bool degenerate_grad = env.name == "constant_reward";
        if (!degenerate_grad) {
            ej["finite_diff_max_rel_err"] = finite_diff_check(env, randomized);
        } else {
            ej["finite_diff_max_rel_err"] = nullptr;
        }

        nlohmann::ordered_json est;
        const EstimatorSpec plain{EstimatorSpec::Kind::PlainReinforce};
        const EstimatorSpec constant{EstimatorSpec::Kind::ConstantBaseline, 0.37};
        const EstimatorSpec diff{EstimatorSpec::Kind::DifferenceReward};
        const EstimatorSpec coma{EstimatorSpec::Kind::ComaCounterfactual};
        const EstimatorSpec gated{EstimatorSpec::Kind::GatedGrpo};
        const EstimatorSpec ungated{EstimatorSpec::Kind::UngatedGrpo};
        est["plain_reinforce"] = cmd_detail::estimator_entry(plain, env, randomized, exact_random);
        est["constant_baseline"] = cmd_detail::estimator_entry(constant, env, randomized, exact_random);
        est["difference_reward"] = cmd_detail::estimator_entry(diff, env, randomized, exact_random);
        est["coma_counterfactual"] = cmd_detail::estimator_entry(coma, env, randomized, exact_random);
        est["ungated_grpo"] = cmd_detail::estimator_entry(ungated, env, uniform, exact_uniform);
        est["gated_grpo"] = cmd_detail::estimator_entry(gated, env, uniform, exact_uniform);
        ej["estimators"] = est;

        nlohmann::ordered_json checks;
        checks["prob_sum_within_1e-10"] = std::abs(prob_sum - 1.0) < 1e-10;
        checks["plain_unbiased_1e-10"] = est["plain_reinforce"]["max_abs_bias"].get<double>() < 1e-10;
        checks["constant_baseline_unbiased_1e-10"] =
            est["constant_baseline"]["max_abs_bias"].get<double>() < 1e-10;
        checks["difference_reward_unbiased_1e-10"] =
            est["difference_reward"]["max_abs_bias"].get<double>() < 1e-10;
        checks["coma_unbiased_1e-10"] = est["coma_counterfactual"]["max_abs_bias"].get<double>() < 1e-10;
        {
            // Mean-reward baseline vs plain, both at the uniform policy.
            const EstimatorSpec mean_baseline{EstimatorSpec::Kind::ConstantBaseline, exact_J(env, uniform)};
            const double var_baselined = estimator_variance(mean_baseline, env, uniform);
            const double var_plain = estimator_variance(plain, env, uniform);
            checks["baseline_variance_not_worse"] = var_baselined <= var_plain + 1e-12;
        }
        if (!degenerate_grad) {
            checks["finite_diff_below_1e-5"] = ej["finite_diff_max_rel_err"].get<double>() < 1e-5;
        }
        if (env.name == "pathological_clone") {
            checks["gated_bias_above_1e-3"] = est["gated_grpo"]["bias_norm"].get<double>() > 1e-3;
            checks["gated_variance_below_ungated"] = est["gated_grpo"]["variance"].get<double>() <
                                                     est["ungated_grpo"]["variance"].get<double>();
        }
        if (env.name == "one_step") {
            checks["closed_form_grad_1e-9"] = std::abs(exact_uniform.at(0, 0) - 0.25) < 1e-9 &&
                                              std::abs(exact_uniform.at(0, 1) + 0.25) < 1e-9;
        }
        if (env.name == "constant_reward") {
            double max_abs = 0.0;
            for (double v : exact_uniform.v) max_abs = std::max(max_abs, std::abs(v));
            checks["constant_reward_zero_grad"] = max_abs < 1e-12;
        }
        for (const auto& [key, value] : checks.items()) {
            if (!value.get<bool>()) all_pass = false;
        }
        ej["checks"] = std::move(checks);
        env_array.push_back(std::move(ej));
    }
    report["envs"] = std::move(env_array);
    report["all_checks_pass"] = all_pass;
    return report;
}

// ---------------------------------------------------------------------------
// metrics over existing trajectory files

inline MetricsReport cmd_metrics(const std::vector<std::string>& traj_paths, const std::string& csv_out = {}) {
    if (traj_paths.empty()) throw ConfigError("no trajectory files given");
    std::vector<Trajectory> all;
    nlohmann::json first_header;
    for (const std::string& path : traj_paths) {
        TrajectoryFile file = read_trajectory_file(path);
        if (first_header.is_null()) {
            first_header = file.header;
        } else {
            for (const char* key : {"schema", "gate", "counter"}) {
                if (file.header.value(key, "") != first_header.value(key, "")) {
                    throw ConfigError(std::string("metadata mismatch across trajectory files: ") + key);
                }
            }
        }
        for (Trajectory& t : file.trajectories) all.push_back(std::move(t));
    }
    MetricsReport report = compute_metrics(all);
    if (!csv_out.empty()) cmd_detail::write_text(csv_out, report.curve_csv());
    return report;
}

} // namespace clonelab
