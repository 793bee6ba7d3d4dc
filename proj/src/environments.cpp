#include "ppofilm/environments.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ppofilm::env {

namespace fs = std::filesystem;

void ShkadovEnvConfig::finalize() {
    solver.grid = shkadov::Grid::covering(domain_length(), solver.grid.dx > 0.0
                                                               ? solver.grid.dx
                                                               : 0.5);
    solver.validate();
    if (n_jets < 1) throw std::invalid_argument("n_jets must be >= 1");
    if (jet_width <= 0.0 || amplitude < 0.0)
        throw std::invalid_argument("invalid jet geometry");
    if (n_jets > 1 && jet_spacing <= jet_width)
        throw std::invalid_argument("jet supports overlap: spacing <= width");
    if (l_obs <= 0.0 || l_rwd <= 0.0)
        throw std::invalid_argument("observation/reward lengths must be positive");
    if (dt_int < 0.0 || dt_const < 0.0 || dt_act() <= 0.0)
        throw std::invalid_argument("invalid action timing");
    const double steps = dt_act() / solver.dt;
    if (std::abs(steps - std::lround(steps)) > 1e-9)
        throw std::invalid_argument("dt_act must be an integer multiple of solver dt");
    if (actions_per_episode < 1)
        throw std::invalid_argument("actions_per_episode must be >= 1");

    const double L = domain_length();
    for (int j = 0; j < n_jets; ++j) {
        const double xj = x0 + j * jet_spacing;
        if (xj - l_obs < 0.0 || xj + l_rwd > L)
            throw std::invalid_argument(
                "observation/reward region of jet " + std::to_string(j) +
                " falls outside the domain");
        if (xj - 0.5 * jet_width < 0.0 || xj + 0.5 * jet_width > L)
            throw std::invalid_argument("jet " + std::to_string(j) +
                                        " support falls outside the domain");
    }
}

std::vector<double> jet_forcing(std::span<const double> u, const shkadov::Grid& grid,
                                const ShkadovEnvConfig& config) {
    if (static_cast<int>(u.size()) != config.n_jets)
        throw std::invalid_argument("jet_forcing: action dimension mismatch");
    std::vector<double> f(grid.n, 0.0);
    const double w = config.jet_width;
    for (int j = 0; j < config.n_jets; ++j) {
        const double xj = config.x0 + j * config.jet_spacing;
        const double xl = xj - 0.5 * w;
        const double xr = xj + 0.5 * w;
        const int i_begin = std::max(0, static_cast<int>(std::ceil(xl / grid.dx)));
        const int i_end = std::min(grid.n - 1, static_cast<int>(std::floor(xr / grid.dx)));
        const double scale = 4.0 * config.amplitude * u[j] / (w * w);
        for (int i = i_begin; i <= i_end; ++i) {
            const double x = grid.x_of(i);
            f[i] += scale * (x - xl) * (xr - x);
        }
    }
    return f;
}

std::vector<double> interpolate_action(const ActionSchedule& schedule, double t,
                                       const ShkadovEnvConfig& config) {
    double alpha = 1.0;
    if (config.dt_int > 0.0)
        alpha = std::clamp((t - schedule.t_start) / config.dt_int, 0.0, 1.0);
    std::vector<double> u(schedule.u_new.size());
    for (size_t j = 0; j < u.size(); ++j)
        u[j] = (1.0 - alpha) * schedule.u_prev[j] + alpha * schedule.u_new[j];
    return u;
}

ShkadovEnv::ShkadovEnv(ShkadovEnvConfig config) : config_(std::move(config)) {
    config_.finalize();
    const auto& grid = config_.solver.grid;
    state_ = shkadov::FilmState::flat(grid);
    u_prev_.assign(config_.n_jets, 0.0);

    const double steps = config_.dt_act() / config_.solver.dt;
    steps_per_action_ = static_cast<int>(std::lround(steps));

    // Observation region of jet j: grid points in [x_j - l_obs, x_j);
    // reward region: (x_j, x_j + l_rwd].
    const int count_obs = static_cast<int>(std::lround(config_.l_obs / grid.dx));
    const int count_rwd = static_cast<int>(std::lround(config_.l_rwd / grid.dx));
    for (int j = 0; j < config_.n_jets; ++j) {
        const double xj = config_.x0 + j * config_.jet_spacing;
        const int i_jet = static_cast<int>(std::lround(xj / grid.dx));
        for (int k = i_jet - count_obs; k < i_jet; ++k) obs_index_.push_back(k);
        for (int k = i_jet + 1; k <= i_jet + count_rwd; ++k) rwd_index_.push_back(k);
    }
    for (int k : obs_index_)
        if (k < 0 || k >= grid.n)
            throw std::invalid_argument("observation region outside the grid");
    for (int k : rwd_index_)
        if (k < 0 || k >= grid.n)
            throw std::invalid_argument("reward region outside the grid");

    if (config_.init_state_dir.empty())
        throw std::invalid_argument("init_state_dir is required");
    for (const auto& entry : fs::directory_iterator(config_.init_state_dir))
        if (entry.is_regular_file()) snapshots_.push_back(entry.path());
    std::sort(snapshots_.begin(), snapshots_.end());
    if (snapshots_.empty())
        throw std::invalid_argument("no initial-state snapshots in " +
                                    config_.init_state_dir);
    for (const auto& path : snapshots_) {
        const auto snap = shkadov::read_snapshot_header(path);
        if (snap.n != grid.n || std::abs(snap.dx - grid.dx) > 1e-12 ||
            std::abs(snap.delta - config_.solver.delta) > 1e-12)
            throw std::invalid_argument("snapshot " + path.string() +
                                        " does not match the environment grid");
    }
}

int ShkadovEnv::observation_dim() const {
    return static_cast<int>(obs_index_.size());
}

std::vector<double> ShkadovEnv::observe(const shkadov::FilmState& state) const {
    std::vector<double> obs(obs_index_.size());
    for (size_t i = 0; i < obs_index_.size(); ++i) obs[i] = state.h[obs_index_[i]];
    return obs;
}

double ShkadovEnv::compute_reward(const shkadov::FilmState& state) const {
    double sum = 0.0;
    for (int k : rwd_index_) {
        const double d = state.h[k] - 1.0;
        sum += d * d;
    }
    return -sum / (config_.l_rwd * config_.n_jets);
}

std::vector<double> ShkadovEnv::reset() {
    const auto& path = snapshots_[rng_.below(snapshots_.size())];
    const auto snap = shkadov::read_snapshot(path);
    state_.h = snap.h;
    state_.q = snap.q;
    std::fill(state_.rhs_h_prev.begin(), state_.rhs_h_prev.end(), 0.0);
    std::fill(state_.rhs_q_prev.begin(), state_.rhs_q_prev.end(), 0.0);
    state_.has_history = false;
    state_.t = 0.0;
    state_.step_count = 0;
    std::fill(u_prev_.begin(), u_prev_.end(), 0.0);
    action_count_ = 0;
    episode_open_ = true;
    return observe(state_);
}

StepResult ShkadovEnv::step(std::span<const double> action) {
    if (!episode_open_)
        throw std::logic_error("step called on a finished episode; reset first");
    if (static_cast<int>(action.size()) != config_.n_jets)
        throw std::invalid_argument("action dimension mismatch");

    ActionSchedule schedule;
    schedule.u_prev = u_prev_;
    schedule.u_new.assign(action.begin(), action.end());
    for (double& v : schedule.u_new) v = std::clamp(v, -1.0, 1.0);
    schedule.t_start = state_.t;

    static thread_local std::vector<double> h_backup;
    for (int k = 0; k < steps_per_action_; ++k) {
        const auto u_t = interpolate_action(schedule, state_.t, config_);
        const auto forcing = jet_forcing(u_t, config_.solver.grid, config_);
        h_backup = state_.h;
        try {
            shkadov::ab2_step(state_, forcing, config_.solver, rng_, ws_);
        } catch (const shkadov::DivergenceError&) {
            // Absorbing failure: report from the last valid state.
            state_.h = h_backup;
            episode_open_ = false;
            StepResult result;
            result.observation = observe(state_);
            result.reward = compute_reward(state_);
            result.done_reason = DoneReason::Terminal;
            return result;
        }
    }

    u_prev_ = schedule.u_new;
    action_count_ += 1;

    StepResult result;
    result.observation = observe(state_);
    result.reward = compute_reward(state_);
    if (action_count_ >= config_.actions_per_episode) {
        result.done_reason = DoneReason::TimeOut;
        episode_open_ = false;
    } else {
        result.done_reason = DoneReason::Running;
    }
    return result;
}

std::vector<fs::path> generate_initial_states(const ShkadovEnvConfig& raw_config,
                                              int count, Rng& rng,
                                              const fs::path& out_dir) {
    if (count < 1) throw std::invalid_argument("count must be >= 1");
    ShkadovEnvConfig config = raw_config;
    config.init_state_dir.clear();
    config.finalize();

    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    const std::vector<double> no_forcing(config.solver.grid.n, 0.0);
    constexpr int kMaxRetries = 8;

    for (int sample = 0; sample < count; ++sample) {
        bool done = false;
        for (int attempt = 0; attempt < kMaxRetries && !done; ++attempt) {
            const double t_init = rng.uniform(200.0, 220.0);
            const long n_steps = static_cast<long>(t_init / config.solver.dt);
            auto state = shkadov::FilmState::flat(config.solver.grid);
            shkadov::RhsWorkspace ws;
            try {
                for (long s = 0; s < n_steps; ++s)
                    shkadov::ab2_step(state, no_forcing, config.solver, rng, ws);
            } catch (const shkadov::DivergenceError&) {
                continue;  // retry with the next draw from the stream
            }
            char name[32];
            std::snprintf(name, sizeof(name), "init_%04d.dat", sample);
            const fs::path path = out_dir / name;
            shkadov::write_snapshot(path, state, config.solver);
            written.push_back(path);
            done = true;
        }
        if (!done)
            throw std::runtime_error("initial-state generation kept diverging (sample " +
                                     std::to_string(sample) + ")");
    }
    return written;
}

// --- PendulumEnv -----------------------------------------------------------

namespace {
double wrap_angle(double a) {
    const double two_pi = 2.0 * std::numbers::pi;
    a = std::fmod(a + std::numbers::pi, two_pi);
    if (a < 0.0) a += two_pi;
    return a - std::numbers::pi;
}
}  // namespace

std::vector<double> PendulumEnv::observation() const {
    return {std::cos(theta_), std::sin(theta_), theta_dot_};
}

std::vector<double> PendulumEnv::reset() {
    theta_ = rng_.uniform(-std::numbers::pi, std::numbers::pi);
    theta_dot_ = rng_.uniform(-1.0, 1.0);
    step_count_ = 0;
    episode_open_ = true;
    return observation();
}

StepResult PendulumEnv::step(std::span<const double> action) {
    if (!episode_open_)
        throw std::logic_error("step called on a finished episode; reset first");
    if (action.size() != 1) throw std::invalid_argument("pendulum expects 1 action");

    const double torque = std::clamp(action[0], -1.0, 1.0) * kMaxTorque;
    const double angle = wrap_angle(theta_);
    const double cost =
        angle * angle + 0.1 * theta_dot_ * theta_dot_ + 0.001 * torque * torque;

    // Semi-implicit update: velocity first, then position with the new
    // velocity.
    theta_dot_ += (3.0 * kGravity / (2.0 * kLength) * std::sin(theta_) +
                   3.0 / (kMass * kLength * kLength) * torque) *
                  kDt;
    theta_dot_ = std::clamp(theta_dot_, -kMaxSpeed, kMaxSpeed);
    theta_ += theta_dot_ * kDt;
    step_count_ += 1;

    StepResult result;
    result.observation = observation();
    result.reward = -cost;
    if (step_count_ >= kMaxSteps) {
        result.done_reason = DoneReason::TimeOut;
        episode_open_ = false;
    } else {
        result.done_reason = DoneReason::Running;
    }
    return result;
}

}  // namespace ppofilm::env
