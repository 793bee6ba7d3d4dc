#include "ppofilm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace ppofilm::train {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kAgentInitPurpose = 0xA6E7;
constexpr std::uint64_t kUpdatePurpose = 0x0b9d;
constexpr std::uint64_t kGenStatesPurpose = 0x6e5;
constexpr std::uint64_t kEvalPurpose = 0xE7A1;

const char* const kColumns[] = {
    "run_id", "update_index", "transitions", "walltime_s", "policy_version",
    "score_mean", "score_min", "score_max", "policy_loss", "value_loss",
    "mean_value_estimate", "entropy", "offpolicy_fraction", "env_time_s",
    "train_time_s", "other_time_s",
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_header(std::ostream& os) {
    os << kLogSchema << '\n';
    for (std::size_t i = 0; i < std::size(kColumns); ++i)
        os << (i ? "," : "") << kColumns[i];
    os << '\n';
}

void write_row(std::ostream& os, const TrainingLogRow& r) {
    os << r.run_id << ',' << r.update_index << ',' << r.transitions << ','
       << fmt(r.walltime_s) << ',' << r.policy_version << ',' << fmt(r.score_mean)
       << ',' << fmt(r.score_min) << ',' << fmt(r.score_max) << ','
       << fmt(r.policy_loss) << ',' << fmt(r.value_loss) << ','
       << fmt(r.mean_value_estimate) << ',' << fmt(r.entropy) << ','
       << fmt(r.offpolicy_fraction) << ',' << fmt(r.env_time_s) << ','
       << fmt(r.train_time_s) << ',' << fmt(r.other_time_s) << '\n';
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    return fields;
}

}  // namespace

std::vector<TrainingLogRow> read_log(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open log " + path.string());
    std::string line;
    if (!std::getline(f, line) || line != kLogSchema)
        throw std::runtime_error(path.string() + ": unknown log schema");
    if (!std::getline(f, line)) throw std::runtime_error(path.string() + ": no header");
    const auto header = split_csv(line);

    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* name : kColumns)
        if (!col.count(name))
            throw std::runtime_error(path.string() + ": missing column " + name);

    std::vector<TrainingLogRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto v = split_csv(line);
        if (v.size() != header.size())
            throw std::runtime_error(path.string() + ": ragged row");
        TrainingLogRow r;
        r.run_id = v[col["run_id"]];
        r.update_index = std::stoi(v[col["update_index"]]);
        r.transitions = std::stol(v[col["transitions"]]);
        r.walltime_s = std::stod(v[col["walltime_s"]]);
        r.policy_version = std::stoull(v[col["policy_version"]]);
        r.score_mean = std::stod(v[col["score_mean"]]);
        r.score_min = std::stod(v[col["score_min"]]);
        r.score_max = std::stod(v[col["score_max"]]);
        r.policy_loss = std::stod(v[col["policy_loss"]]);
        r.value_loss = std::stod(v[col["value_loss"]]);
        r.mean_value_estimate = std::stod(v[col["mean_value_estimate"]]);
        r.entropy = std::stod(v[col["entropy"]]);
        r.offpolicy_fraction = std::stod(v[col["offpolicy_fraction"]]);
        r.env_time_s = std::stod(v[col["env_time_s"]]);
        r.train_time_s = std::stod(v[col["train_time_s"]]);
        r.other_time_s = std::stod(v[col["other_time_s"]]);
        rows.push_back(std::move(r));
    }
    return rows;
}

collect::EnvFactory make_env_factory(const config::RunConfig& config) {
    if (config.environment == "shkadov") {
        const auto env_config = config.shkadov_env_config();
        return [env_config](int) {
            return std::make_unique<env::ShkadovEnv>(env_config);
        };
    }
    if (config.environment == "pendulum") {
        return [](int) { return std::make_unique<env::PendulumEnv>(); };
    }
    throw std::invalid_argument("unknown environment '" + config.environment + "'");
}

std::vector<TrainingLogRow> cmd_train(const config::RunConfig& config) {
    config.validate();
    fs::create_directories(config.out_dir);

    const auto factory = make_env_factory(config);
    const auto probe = factory(0);
    const int obs_dim = probe->observation_dim();
    const int action_dim = probe->action_dim();

    Rng init_rng = Rng::stream(config.seed, kAgentInitPurpose);
    auto agent = policy::Agent::create(obs_dim, action_dim, config.ppo, init_rng);
    Rng update_rng = Rng::stream(config.seed, kUpdatePurpose);

    const auto plan = collect::plan_segments(config.n_env, config.n_update,
                                             config.episode_len(), config.collect_mode());
    collect::ParallelCollector collector(factory, plan, config.seed);

    const fs::path log_path = fs::path(config.out_dir) / (config.run_id + "_train.csv");
    std::ofstream log(log_path, std::ios::binary);
    if (!log) throw std::runtime_error("cannot open " + log_path.string());
    write_header(log);

    // Resolved configuration alongside the log, for reproducibility.
    config::save_config(fs::path(config.out_dir) / (config.run_id + "_config.txt"),
                        config);

    std::vector<TrainingLogRow> rows;
    double last_score_mean = std::numeric_limits<double>::quiet_NaN();
    double last_score_min = last_score_mean, last_score_max = last_score_mean;

    auto checkpoint_path = [&](const std::string& tag) {
        return fs::path(config.out_dir) / (config.run_id + "_ckpt_" + tag + ".ppob");
    };

    collect::run_collection_loop(
        collector, agent, config.ppo, config.total_transitions, update_rng,
        [&](const collect::UpdateRecord& rec) {
            if (!rec.episode_scores.empty()) {
                double sum = 0.0;
                double lo = rec.episode_scores.front(), hi = lo;
                for (double s : rec.episode_scores) {
                    sum += s;
                    lo = std::min(lo, s);
                    hi = std::max(hi, s);
                }
                last_score_mean = sum / static_cast<double>(rec.episode_scores.size());
                last_score_min = lo;
                last_score_max = hi;
            }
            TrainingLogRow row;
            row.run_id = config.run_id;
            row.update_index = rec.update_index;
            row.transitions = rec.transitions_total;
            row.walltime_s = rec.walltime_s;
            row.policy_version = rec.policy_version;
            row.score_mean = last_score_mean;
            row.score_min = last_score_min;
            row.score_max = last_score_max;
            row.policy_loss = rec.metrics.policy_loss;
            row.value_loss = rec.metrics.value_loss;
            row.mean_value_estimate = rec.metrics.mean_value_estimate;
            row.entropy = rec.metrics.mean_entropy;
            row.offpolicy_fraction = rec.on_policy.fraction;
            row.env_time_s = rec.env_time_s;
            row.train_time_s = rec.train_time_s;
            row.other_time_s = rec.other_time_s;
            write_row(log, row);
            log.flush();
            rows.push_back(std::move(row));

            if (config.checkpoint_every > 0 &&
                rec.update_index % config.checkpoint_every == 0) {
                char tag[16];
                std::snprintf(tag, sizeof(tag), "%06d", rec.update_index);
                policy::save_checkpoint(checkpoint_path(tag), agent);
            }
        });

    policy::save_checkpoint(checkpoint_path("final"), agent);
    return rows;
}

std::vector<fs::path> cmd_gen_states(const config::RunConfig& config, int count) {
    if (count < 1) throw std::invalid_argument("gen-states: count must be >= 1");
    auto env_config = config.shkadov_env_config();
    Rng rng = Rng::stream(config.seed, kGenStatesPurpose);
    return env::generate_initial_states(env_config, count, rng,
                                        config.init_state_dir);
}

EvalResult cmd_eval(const config::RunConfig& config, const EvalOptions& options) {
    auto agent = policy::load_checkpoint(options.checkpoint);

    const auto factory = make_env_factory(config);
    auto environment = factory(0);
    if (agent.actor.spec.input_dim != environment->observation_dim() ||
        agent.actor.spec.branches[0].head_width != environment->action_dim())
        throw std::runtime_error(
            "checkpoint dimensions do not match the configured environment");

    environment->set_stream(Rng::stream(config.seed, kEvalPurpose));
    const fs::path out_dir = options.out_dir.empty() ? fs::path(config.out_dir)
                                                     : options.out_dir;
    fs::create_directories(out_dir);

    auto* film = dynamic_cast<env::ShkadovEnv*>(environment.get());
    EvalResult result;

    auto dump_field = [&](int action_index) {
        if (film == nullptr) return;
        if (std::find(options.snapshot_actions.begin(), options.snapshot_actions.end(),
                      action_index) == options.snapshot_actions.end())
            return;
        char name[32];
        std::snprintf(name, sizeof(name), "field_%04d.dat", action_index);
        const fs::path path = out_dir / name;
        shkadov::write_snapshot(path, film->film_state(), film->config().solver);
        result.field_files.push_back(path);
    };

    const fs::path rewards_path = out_dir / "eval_rewards.csv";
    std::ofstream rewards(rewards_path, std::ios::binary);
    rewards << "action_index,reward\n";

    neural::ForwardTape tape;
    auto obs = environment->reset();
    dump_field(0);
    double total_reward = 0.0;
    for (int a = 1; a <= environment->max_steps(); ++a) {
        const auto normalized = agent.normalizer.normalized(obs);
        const auto out = policy::evaluate_policy(agent.actor, normalized, tape);
        const auto step = environment->step(out.mean);  // deterministic policy
        total_reward += step.reward;
        result.steps += 1;
        rewards << a << ',' << fmt(step.reward) << '\n';
        obs = step.observation;
        dump_field(a);
        if (step.done_reason != env::DoneReason::Running) break;
    }
    result.episode_score =
        result.steps > 0 ? total_reward / static_cast<double>(result.steps) : 0.0;
    return result;
}

std::vector<SpeedupRow> cmd_bench_speedup(const config::RunConfig& config,
                                          const std::vector<int>& env_counts,
                                          long budget) {
    if (env_counts.empty())
        throw std::invalid_argument("bench-speedup: need at least one env count");
    std::vector<SpeedupRow> rows;
    const auto factory = make_env_factory(config);
    for (const int n_env : env_counts) {
        config::RunConfig run = config;
        run.n_env = n_env;
        const auto plan = collect::plan_segments(n_env, run.n_update,
                                                 run.episode_len(), run.collect_mode());
        const auto probe = factory(0);
        Rng init_rng = Rng::stream(run.seed, kAgentInitPurpose);
        auto agent = policy::Agent::create(probe->observation_dim(),
                                           probe->action_dim(), run.ppo, init_rng);
        Rng update_rng = Rng::stream(run.seed, kUpdatePurpose);
        collect::ParallelCollector collector(factory, plan, run.seed);

        const auto t0 = std::chrono::steady_clock::now();
        collect::run_collection_loop(collector, agent, run.ppo, budget, update_rng,
                                     nullptr);
        const auto t1 = std::chrono::steady_clock::now();

        SpeedupRow row;
        row.n_env = n_env;
        row.walltime_s = std::chrono::duration<double>(t1 - t0).count();
        rows.push_back(row);
    }
    for (auto& row : rows) {
        row.speedup = rows.front().walltime_s / row.walltime_s;
        row.perfect = static_cast<double>(row.n_env) /
                      static_cast<double>(rows.front().n_env);
    }
    return rows;
}

std::vector<AggregateRow> aggregate_logs(const std::vector<fs::path>& log_paths) {
    if (log_paths.empty()) throw std::invalid_argument("aggregate: no logs given");
    std::vector<std::vector<TrainingLogRow>> logs;
    for (const auto& path : log_paths) logs.push_back(read_log(path));

    const auto& first = logs.front();
    for (const auto& log : logs) {
        if (log.size() != first.size())
            throw std::runtime_error("aggregate: logs have different update counts");
        for (std::size_t i = 0; i < log.size(); ++i)
            if (log[i].update_index != first[i].update_index ||
                log[i].transitions != first[i].transitions)
                throw std::runtime_error("aggregate: mismatched update grids");
    }

    std::vector<AggregateRow> rows(first.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        AggregateRow& row = rows[i];
        row.update_index = first[i].update_index;
        row.transitions = first[i].transitions;
        row.score_min = row.policy_loss_min = row.value_loss_min =
            std::numeric_limits<double>::infinity();
        row.score_max = row.policy_loss_max = row.value_loss_max =
            -std::numeric_limits<double>::infinity();
        for (const auto& log : logs) {
            const auto& r = log[i];
            row.score_mean += r.score_mean;
            row.score_min = std::min(row.score_min, r.score_mean);
            row.score_max = std::max(row.score_max, r.score_mean);
            row.policy_loss_mean += r.policy_loss;
            row.policy_loss_min = std::min(row.policy_loss_min, r.policy_loss);
            row.policy_loss_max = std::max(row.policy_loss_max, r.policy_loss);
            row.value_loss_mean += r.value_loss;
            row.value_loss_min = std::min(row.value_loss_min, r.value_loss);
            row.value_loss_max = std::max(row.value_loss_max, r.value_loss);
        }
        const double n = static_cast<double>(logs.size());
        row.score_mean /= n;
        row.policy_loss_mean /= n;
        row.value_loss_mean /= n;
    }
    return rows;
}

void write_aggregate(const fs::path& out, const std::vector<AggregateRow>& rows) {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + out.string() + " for writing");
    f << "# aggregate v1\n"
      << "update_index,transitions,score_mean,score_min,score_max,"
         "policy_loss_mean,policy_loss_min,policy_loss_max,"
         "value_loss_mean,value_loss_min,value_loss_max\n";
    for (const auto& r : rows) {
        f << r.update_index << ',' << r.transitions << ',' << fmt(r.score_mean) << ','
          << fmt(r.score_min) << ',' << fmt(r.score_max) << ','
          << fmt(r.policy_loss_mean) << ',' << fmt(r.policy_loss_min) << ','
          << fmt(r.policy_loss_max) << ',' << fmt(r.value_loss_mean) << ','
          << fmt(r.value_loss_min) << ',' << fmt(r.value_loss_max) << '\n';
    }
}

}  // namespace ppofilm::train
