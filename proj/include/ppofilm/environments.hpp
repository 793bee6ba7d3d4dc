#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ppofilm/rng.hpp"
#include "ppofilm/shkadov.hpp"

namespace ppofilm::env {

enum class DoneReason { Running, TimeOut, Terminal };

struct StepResult {
    std::vector<double> observation;
    double reward = 0.0;
    DoneReason done_reason = DoneReason::Running;
};

// Episode-level control interface. Instances own their random stream
// (injected through set_stream) and carry no global state, so they can be
// moved freely between threads.
class Environment {
public:
    virtual ~Environment() = default;

    virtual int observation_dim() const = 0;
    virtual int action_dim() const = 0;
    virtual int max_steps() const = 0;  // actions per episode before time-out

    virtual void set_stream(Rng rng) = 0;
    virtual std::vector<double> reset() = 0;
    // Actions are expected in [-1, 1]^d (clipped by the caller); the
    // environment maps them to its physical range.
    virtual StepResult step(std::span<const double> action) = 0;
};

// --- Shkadov film control ----------------------------------------------

struct ShkadovEnvConfig {
    int n_jets = 1;
    double x0 = 150.0;          // first jet position
    double jet_spacing = 10.0;  // distance between consecutive jets
    double base_length = 150.0; // L0; domain length is L0 + (n_jets + 2) * spacing
    double jet_width = 4.0;     // x_r - x_l
    double amplitude = 5.0;     // A
    double l_obs = 10.0;        // observation region length, upstream of each jet
    double l_rwd = 10.0;        // reward region length, downstream of each jet
    double dt_int = 0.01;       // action interpolation ramp
    double dt_const = 0.04;     // action hold
    int actions_per_episode = 400;
    shkadov::SolverConfig solver;  // grid filled in by finalize()
    std::string init_state_dir;

    double domain_length() const { return base_length + (n_jets + 2) * jet_spacing; }
    double dt_act() const { return dt_int + dt_const; }

    // Builds the grid from the domain length and solver dx, then checks all
    // config invariants. Throws std::invalid_argument on violations.
    void finalize();
};

// Per-point flow-rate injection: parabolic profile of height A*u_j inside
// each jet support, zero outside. u components in [-1, 1].
std::vector<double> jet_forcing(std::span<const double> u, const shkadov::Grid& grid,
                                const ShkadovEnvConfig& config);

struct ActionSchedule {
    std::vector<double> u_prev;
    std::vector<double> u_new;
    double t_start = 0.0;
};

// Saturated linear ramp: u = (1-a) u_prev + a u_new with
// a = min((t - t_start)/dt_int, 1).
std::vector<double> interpolate_action(const ActionSchedule& schedule, double t,
                                       const ShkadovEnvConfig& config);

class ShkadovEnv final : public Environment {
public:
    // Throws std::invalid_argument on invalid configuration (overlapping
    // jets, regions outside the domain, missing or mismatched snapshots).
    explicit ShkadovEnv(ShkadovEnvConfig config);

    int observation_dim() const override;
    int action_dim() const override { return config_.n_jets; }
    int max_steps() const override { return config_.actions_per_episode; }

    void set_stream(Rng rng) override { rng_ = rng; }
    std::vector<double> reset() override;
    StepResult step(std::span<const double> action) override;

    // Raw heights in the observation regions of the given state.
    std::vector<double> observe(const shkadov::FilmState& state) const;
    double compute_reward(const shkadov::FilmState& state) const;

    const ShkadovEnvConfig& config() const { return config_; }
    const shkadov::FilmState& film_state() const { return state_; }

private:
    ShkadovEnvConfig config_;
    shkadov::FilmState state_;
    shkadov::RhsWorkspace ws_;
    Rng rng_;
    std::vector<double> u_prev_;
    std::vector<std::filesystem::path> snapshots_;
    std::vector<int> obs_index_, rwd_index_;  // grid indices, jet-major
    int steps_per_action_ = 0;
    int action_count_ = 0;
    bool episode_open_ = false;
};

// Writes `count` snapshot files (flat film integrated without control to a
// random t_init in [200, 220]) into out_dir. A diverging sample is retried
// with a fresh seed, a bounded number of times. Returns the file paths.
std::vector<std::filesystem::path> generate_initial_states(
    const ShkadovEnvConfig& config, int count, Rng& rng,
    const std::filesystem::path& out_dir);

// --- Pendulum benchmark --------------------------------------------------

// Rigid-pendulum swing-up: observation (cos th, sin th, th_dot), torque in
// [-1, 1] scaled internally, quadratic cost reward, 200-step time-out and
// no terminal states.
class PendulumEnv final : public Environment {
public:
    PendulumEnv() = default;

    int observation_dim() const override { return 3; }
    int action_dim() const override { return 1; }
    int max_steps() const override { return kMaxSteps; }

    void set_stream(Rng rng) override { rng_ = rng; }
    std::vector<double> reset() override;
    StepResult step(std::span<const double> action) override;

    static constexpr int kMaxSteps = 200;
    static constexpr double kMaxTorque = 2.0;
    static constexpr double kMaxSpeed = 8.0;
    static constexpr double kDt = 0.05;
    static constexpr double kGravity = 10.0;
    static constexpr double kMass = 1.0;
    static constexpr double kLength = 1.0;

private:
    std::vector<double> observation() const;

    Rng rng_;
    double theta_ = 0.0;
    double theta_dot_ = 0.0;
    int step_count_ = 0;
    bool episode_open_ = false;
};

}  // namespace ppofilm::env
