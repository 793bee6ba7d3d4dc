#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "ppofilm/trainer.hpp"

namespace {

using ppofilm::config::RunConfig;

struct CommonFlags {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
    std::string mode;
    int n_env = 0;
    std::string environment;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Config file (key = value sections)");
        cmd->add_option("--seed", seed, "Run seed")->each([this](const std::string&) {
            seed_set = true;
        });
        cmd->add_option("--out", out_dir, "Output directory");
        cmd->add_option("--mode", mode, "Collection mode: regular | eoe | eoe_pt");
        cmd->add_option("--n-env", n_env, "Number of parallel environments");
        cmd->add_option("--env", environment, "Environment: shkadov | pendulum");
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config_path.empty()) cfg = ppofilm::config::load_config(config_path);
        if (seed_set) cfg.seed = seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!mode.empty()) cfg.mode = mode;
        if (n_env > 0) cfg.n_env = n_env;
        if (!environment.empty()) cfg.environment = environment;
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PPO training stack with bootstrapped parallel collection on a "
                 "falling-film control environment"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_flags, eval_flags, bench_flags;

    auto* gen = app.add_subcommand("gen-states",
                                   "Generate initial-state snapshots for the film env");
    int gen_count = 100;
    gen->add_option("--count", gen_count, "Number of snapshots")->check(CLI::PositiveNumber);
    gen_flags.attach(gen);

    auto* train = app.add_subcommand("train", "Run a training experiment");
    train_flags.attach(train);
    std::string run_id;
    long total_transitions = 0;
    train->add_option("--run-id", run_id, "Run identifier used in output names");
    train->add_option("--transitions", total_transitions, "Total transition budget");

    auto* eval = app.add_subcommand("eval", "Deterministic rollout of a checkpoint");
    eval_flags.attach(eval);
    std::string checkpoint;
    std::vector<int> snap_times = {0, 100, 200, 300, 400};
    eval->add_option("--checkpoint", checkpoint, "PPOB checkpoint file")->required();
    eval->add_option("--snap-times", snap_times,
                     "Action counts at which to dump field snapshots");

    auto* bench = app.add_subcommand("bench-speedup",
                                     "Fixed-budget walltime benchmark per n_env");
    bench_flags.attach(bench);
    std::vector<int> env_counts = {1, 2, 4, 8};
    long budget = 20000;
    bench->add_option("--envs", env_counts, "Environment counts to benchmark");
    bench->add_option("--budget", budget, "Transition budget per run");

    auto* aggregate = app.add_subcommand("aggregate",
                                         "Mean/min/max curves across training logs");
    std::vector<std::string> log_files;
    std::string aggregate_out = "aggregate.csv";
    aggregate->add_option("logs", log_files, "Training log files")->required();
    aggregate->add_option("--out", aggregate_out, "Output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            const auto cfg = gen_flags.resolve();
            const auto files = ppofilm::train::cmd_gen_states(cfg, gen_count);
            std::printf("wrote %zu snapshots to %s\n", files.size(),
                        cfg.init_state_dir.c_str());
            for (const auto& f : files) std::printf("  %s\n", f.string().c_str());
        } else if (train->parsed()) {
            auto cfg = train_flags.resolve();
            if (!run_id.empty()) cfg.run_id = run_id;
            if (total_transitions > 0) cfg.total_transitions = total_transitions;
            const auto rows = ppofilm::train::cmd_train(cfg);
            if (!rows.empty())
                std::printf("run %s: %d updates, %ld transitions, final score %.6g\n",
                            cfg.run_id.c_str(), rows.back().update_index,
                            rows.back().transitions, rows.back().score_mean);
        } else if (eval->parsed()) {
            const auto cfg = eval_flags.resolve();
            ppofilm::train::EvalOptions options;
            options.checkpoint = checkpoint;
            options.snapshot_actions = snap_times;
            const auto result = ppofilm::train::cmd_eval(cfg, options);
            std::printf("episode: %ld steps, mean per-step reward %.6g\n", result.steps,
                        result.episode_score);
            for (const auto& f : result.field_files)
                std::printf("  %s\n", f.string().c_str());
        } else if (bench->parsed()) {
            const auto cfg = bench_flags.resolve();
            const auto rows = ppofilm::train::cmd_bench_speedup(cfg, env_counts, budget);
            std::printf("%8s %12s %10s %10s\n", "n_env", "walltime_s", "speedup",
                        "perfect");
            for (const auto& r : rows)
                std::printf("%8d %12.3f %10.2f %10.2f\n", r.n_env, r.walltime_s,
                            r.speedup, r.perfect);
        } else if (aggregate->parsed()) {
            std::vector<std::filesystem::path> paths(log_files.begin(), log_files.end());
            const auto rows = ppofilm::train::aggregate_logs(paths);
            ppofilm::train::write_aggregate(aggregate_out, rows);
            std::printf("wrote %zu aggregated rows to %s\n", rows.size(),
                        aggregate_out.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
