#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ppofilm/collector.hpp"
#include "ppofilm/environments.hpp"
#include "ppofilm/policy.hpp"

namespace ppofilm::config {

// The resolved run configuration. Every field has a default; the config
// file only overrides. Unknown keys or sections are hard errors.
struct RunConfig {
    // [run]
    std::string run_id = "run";
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    long total_transitions = 200000;
    int checkpoint_every = 10;  // updates; 0 disables periodic checkpoints
    std::string environment = "shkadov";  // shkadov | pendulum

    // [collector]
    int n_env = 8;
    int n_update = 8;
    std::string mode = "eoe_pt";  // regular | eoe | eoe_pt

    // [ppo]
    policy::PpoConfig ppo;

    // [solver]
    double delta = 0.1;
    double dt = 0.005;
    double eps = 5e-4;
    double dx = 0.5;

    // [env] (Shkadov)
    int n_jets = 1;
    double x0 = 150.0;
    double jet_spacing = 10.0;
    double base_length = 150.0;
    double jet_width = 4.0;
    double amplitude = 5.0;
    double l_obs = 10.0;
    double l_rwd = 10.0;
    double dt_int = 0.01;
    double dt_const = 0.04;
    int actions_per_episode = 400;
    std::string init_state_dir = "init_states";

    env::ShkadovEnvConfig shkadov_env_config() const;
    collect::CollectMode collect_mode() const { return collect::parse_mode(mode); }
    int episode_len() const;  // T of the selected environment
    void validate() const;
};

// Parses the flat `key = value` format with [section] headers. Lines that
// are empty or start with '#' are skipped.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical serialization: fixed section and key order, full double
// precision. parse(serialize(c)) == c, and a second serialize is
// byte-identical.
std::string serialize_config(const RunConfig& config);
void save_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace ppofilm::config
