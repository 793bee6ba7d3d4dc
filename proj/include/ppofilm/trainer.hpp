#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ppofilm/config.hpp"

namespace ppofilm::train {

struct TrainingLogRow {
    std::string run_id;
    int update_index = 0;
    long transitions = 0;
    double walltime_s = 0.0;
    std::uint64_t policy_version = 0;
    double score_mean = 0.0, score_min = 0.0, score_max = 0.0;
    double policy_loss = 0.0, value_loss = 0.0;
    double mean_value_estimate = 0.0, entropy = 0.0;
    double offpolicy_fraction = 0.0;
    double env_time_s = 0.0, train_time_s = 0.0, other_time_s = 0.0;
};

inline constexpr const char* kLogSchema = "# trainlog v1";

std::vector<TrainingLogRow> read_log(const std::filesystem::path& path);

// Environment factory for the configured environment kind.
collect::EnvFactory make_env_factory(const config::RunConfig& config);

// Runs the full training loop: collection, updates, CSV log, checkpoints.
// Returns the written log rows. The log goes to out_dir/<run_id>_train.csv,
// checkpoints to out_dir/<run_id>_ckpt_*.ppob.
std::vector<TrainingLogRow> cmd_train(const config::RunConfig& config);

// Writes `count` initial-state snapshots into the configured directory and
// returns their paths.
std::vector<std::filesystem::path> cmd_gen_states(const config::RunConfig& config,
                                                  int count);

struct EvalOptions {
    std::filesystem::path checkpoint;
    std::vector<int> snapshot_actions;  // action indices at which to dump fields
    std::filesystem::path out_dir;
};

struct EvalResult {
    double episode_score = 0.0;  // mean per-step reward
    long steps = 0;
    std::vector<std::filesystem::path> field_files;
};

// Deterministic rollout (actions = policy mean) of one episode, dumping
// h-field snapshots at the requested action counts and a per-step reward
// trace.
EvalResult cmd_eval(const config::RunConfig& config, const EvalOptions& options);

struct SpeedupRow {
    int n_env = 0;
    double walltime_s = 0.0;
    double speedup = 0.0;  // walltime(first) / walltime(this)
    double perfect = 0.0;  // n_env / first n_env
};

// Fixed-transition-budget training runs per environment count.
std::vector<SpeedupRow> cmd_bench_speedup(const config::RunConfig& config,
                                          const std::vector<int>& env_counts,
                                          long budget);

struct AggregateRow {
    int update_index = 0;
    long transitions = 0;
    double score_mean = 0.0, score_min = 0.0, score_max = 0.0;
    double policy_loss_mean = 0.0, policy_loss_min = 0.0, policy_loss_max = 0.0;
    double value_loss_mean = 0.0, value_loss_min = 0.0, value_loss_max = 0.0;
};

// Mean/min/max of the score and loss curves across runs with identical
// update grids. Throws on mismatched grids.
std::vector<AggregateRow> aggregate_logs(
    const std::vector<std::filesystem::path>& log_paths);
void write_aggregate(const std::filesystem::path& out,
                     const std::vector<AggregateRow>& rows);

}  // namespace ppofilm::train
