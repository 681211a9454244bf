// Command-line front end: dataset generation, episode batches, baselines,
// trainer export, metrics aggregation, and the gradient verification report.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "clonelab/commands.hpp"

using namespace clonelab;

namespace {

struct RunFlags {
    std::string config_path;
    RunConfig cfg;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file; flags below override it");
        cmd->add_option("--dataset", cfg.dataset, "dataset JSONL path");
        cmd->add_option("--dataset-kind", cfg.dataset_kind, "arith | hops");
        cmd->add_option("--context-store", cfg.context_store, "keyed-document JSONL for context expansion");
        cmd->add_option("--policy", cfg.policy,
                        "perfect-delegator | direct-answerer | direct-answerer-wrong | lazy-clone | "
                        "verbose-clone | five-prefix | two-hop | full-context | remote");
        cmd->add_option("--gate", cfg.gate, "none | hard | soft | use");
        cmd->add_option("--gate-alpha", cfg.gate_alpha, "soft gate temperature");
        cmd->add_option("--counter", cfg.counter, "byte | whitespace | remote");
        cmd->add_option("--prompt-limit", cfg.budgets.prompt_limit, "prompt token limit");
        cmd->add_option("--generation-limit", cfg.budgets.generation_limit, "per-rollout generation limit");
        cmd->add_option("--max-tool-turns", cfg.budgets.max_tool_turns, "root tool-turn budget");
        cmd->add_option("--max-clone-depth", cfg.budgets.max_clone_depth, "delegation depth budget");
        cmd->add_option("--max-parallel-clones", cfg.budgets.max_parallel_clones_per_turn,
                        "clone fan-out per turn");
        cmd->add_option("--group-size", cfg.group_size, "episodes per advantage group");
        cmd->add_option("--episodes-per-task", cfg.episodes_per_task, "0 means one group");
        cmd->add_option("--seed", cfg.seed, "run seed");
        cmd->add_option("--out", cfg.out_dir, "output directory");
        cmd->add_option("--workers", cfg.workers, "episode worker threads");
        cmd->add_flag("--forced-spawn", cfg.forced_spawn, "reject one direct answer before any spawn");
        cmd->add_option("--max-tasks", cfg.max_tasks, "cap on dataset tasks (0 = all)");
        cmd->add_option("--remote-base-url", cfg.remote_base_url,
                        "chat-completions base URL (or CLONELAB_BASE_URL)");
        cmd->add_option("--remote-model", cfg.remote_model, "remote model name");
        cmd->add_option("--temperature", cfg.temperature, "remote sampling temperature");
        cmd->add_option("--top-p", cfg.top_p, "remote nucleus cutoff");
    }

    // Config file first, explicit flags on top.
    RunConfig resolve(CLI::App* cmd) {
        if (config_path.empty()) return cfg;
        RunConfig base = RunConfig::from_file(config_path);
        auto take = [&](const std::string& flag, auto member) {
            if (cmd->count(flag) > 0) base.*member = cfg.*member;
        };
        take("--dataset", &RunConfig::dataset);
        take("--dataset-kind", &RunConfig::dataset_kind);
        take("--context-store", &RunConfig::context_store);
        take("--policy", &RunConfig::policy);
        take("--gate", &RunConfig::gate);
        take("--gate-alpha", &RunConfig::gate_alpha);
        take("--counter", &RunConfig::counter);
        take("--group-size", &RunConfig::group_size);
        take("--episodes-per-task", &RunConfig::episodes_per_task);
        take("--seed", &RunConfig::seed);
        take("--out", &RunConfig::out_dir);
        take("--workers", &RunConfig::workers);
        take("--max-tasks", &RunConfig::max_tasks);
        take("--remote-base-url", &RunConfig::remote_base_url);
        take("--remote-model", &RunConfig::remote_model);
        take("--temperature", &RunConfig::temperature);
        take("--top-p", &RunConfig::top_p);
        if (cmd->count("--forced-spawn") > 0) base.forced_spawn = cfg.forced_spawn;
        if (cmd->count("--prompt-limit") > 0) base.budgets.prompt_limit = cfg.budgets.prompt_limit;
        if (cmd->count("--generation-limit") > 0) base.budgets.generation_limit = cfg.budgets.generation_limit;
        if (cmd->count("--max-tool-turns") > 0) base.budgets.max_tool_turns = cfg.budgets.max_tool_turns;
        if (cmd->count("--max-clone-depth") > 0) base.budgets.max_clone_depth = cfg.budgets.max_clone_depth;
        if (cmd->count("--max-parallel-clones") > 0) {
            base.budgets.max_parallel_clones_per_turn = cfg.budgets.max_parallel_clones_per_turn;
        }
        return base;
    }
};

void print_report(const MetricsReport& report) {
    std::cout << report.to_json().dump(2) << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"clone-delegation rollout harness and credit-assignment toolkit"};
    app.require_subcommand(1);

    // gen-dataset
    auto* gen = app.add_subcommand("gen-dataset", "generate a synthetic hard-arithmetic dataset");
    GenConfig gen_cfg;
    std::uint64_t gen_count = 1000;
    std::string gen_out = "dataset.jsonl";
    std::string gen_ops = "add,sub,mul,div";
    gen->add_option("--count", gen_count, "number of problems");
    gen->add_option("--out", gen_out, "output JSONL path");
    gen->add_option("--seed", gen_cfg.seed, "generator seed");
    gen->add_option("--max-ops", gen_cfg.max_ops, "operation-count ceiling");
    gen->add_option("--operand-max", gen_cfg.operand_max, "leaf magnitude ceiling");
    gen->add_option("--ops", gen_ops, "comma list of add,sub,mul,div");

    // run-eval
    auto* run = app.add_subcommand("run-eval", "run grouped episodes over a dataset and score them");
    RunFlags run_flags;
    run_flags.attach(run);

    // self-consistency
    auto* sc = app.add_subcommand("self-consistency", "k-sample majority-vote baseline without tools");
    RunFlags sc_flags;
    int sc_k = 8;
    sc_flags.attach(sc);
    sc->add_option("-k,--samples", sc_k, "samples per task");

    // export-batch
    auto* exp = app.add_subcommand("export-batch", "resolve trajectories into a trainer batch file");
    std::string exp_in, exp_out = "batch.jsonl", exp_gate = "hard";
    double exp_alpha = 1.0;
    int exp_group = 0;
    exp->add_option("--trajectories", exp_in, "trajectory JSONL from run-eval")->required();
    exp->add_option("--out", exp_out, "output batch path");
    exp->add_option("--gate", exp_gate, "none | hard | soft | use");
    exp->add_option("--alpha", exp_alpha, "soft gate temperature");
    exp->add_option("--group-size", exp_group, "override header group size");

    // gradlab
    auto* lab = app.add_subcommand("gradlab", "policy-gradient verification by exact enumeration");
    std::vector<std::string> lab_envs;
    std::string lab_out;
    lab->add_option("--env", lab_envs, "micro-env names (default: all)");
    lab->add_option("--out", lab_out, "write the JSON report here instead of stdout");

    // metrics
    auto* met = app.add_subcommand("metrics", "aggregate metrics over trajectory files");
    std::vector<std::string> met_files;
    std::string met_csv;
    met->add_option("files", met_files, "trajectory JSONL files")->required();
    met->add_option("--csv", met_csv, "write the accuracy/budget curve CSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            gen_cfg.allowed_ops.clear();
            std::stringstream ss(gen_ops);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                if (tok == "add") gen_cfg.allowed_ops.push_back(Op::Add);
                else if (tok == "sub") gen_cfg.allowed_ops.push_back(Op::Sub);
                else if (tok == "mul") gen_cfg.allowed_ops.push_back(Op::Mul);
                else if (tok == "div") gen_cfg.allowed_ops.push_back(Op::Div);
                else throw ConfigError("unknown op: " + tok);
            }
            GenDatasetResult res = cmd_gen_dataset(gen_cfg, gen_count, gen_out);
            std::cout << "wrote " << res.count << " problems to " << res.dataset_path << "\n"
                      << "manifest " << res.manifest_path << " (hash " << res.content_hash << ")\n";
        } else if (run->parsed()) {
            RunEvalResult res = cmd_run_eval(run_flags.resolve(run));
            std::cout << "trajectories: " << res.trajectories_path << "\n";
            print_report(res.report);
        } else if (sc->parsed()) {
            RunEvalResult res = cmd_self_consistency(sc_flags.resolve(sc), sc_k);
            std::cout << "trajectories: " << res.trajectories_path << "\n";
            print_report(res.report);
        } else if (exp->parsed()) {
            ExportResult res = cmd_export_batch(exp_in, exp_out, enum_from_string<GateKind>(exp_gate),
                                                exp_alpha, exp_group);
            std::cout << "wrote " << res.stats.rollouts << " rollout records (" << res.stats.groups
                      << " groups, " << res.stats.skipped_tasks << " incomplete tasks skipped) to "
                      << res.out_path << "\n";
        } else if (lab->parsed()) {
            nlohmann::ordered_json report = cmd_gradlab(lab_envs);
            if (lab_out.empty()) {
                std::cout << report.dump(2) << "\n";
            } else {
                cmd_detail::write_text(lab_out, report.dump(2) + "\n");
                std::cout << "report: " << lab_out << " (all_checks_pass="
                          << (report["all_checks_pass"].get<bool>() ? "true" : "false") << ")\n";
            }
        } else if (met->parsed()) {
            print_report(cmd_metrics(met_files, met_csv));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
