#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ppofilm/neural.hpp"
#include "ppofilm/rng.hpp"
#include "ppofilm/rollout.hpp"

namespace ppofilm::policy {

struct PpoConfig {
    double clip = 0.2;          // epsilon
    double entropy_coef = 0.01; // beta
    double gamma = 0.99;
    double gae_lambda = 0.99;
    int epochs = 4;
    int minibatch_size = 256;
    double lr_actor = 5e-4;
    double lr_critic = 2e-3;
    double grad_clip = 0.1;

    void validate() const;
};

// Standard deviations below this floor are treated as constants (no
// gradient) to keep log-densities bounded.
inline constexpr double kStdFloor = 1e-4;

// Diagonal Gaussian over actions: mean in [-1,1]^d (tanh head), std in
// (0,1)^d (sigmoid head, floored).
struct PolicyOutput {
    std::vector<double> mean;
    std::vector<double> std_dev;
};

// Evaluates the actor; the tape can be reused for backward.
PolicyOutput evaluate_policy(const neural::NetworkParams& actor,
                             std::span<const double> observation,
                             neural::ForwardTape& tape);

double critic_value(const neural::NetworkParams& critic,
                    std::span<const double> observation, neural::ForwardTape& tape);

struct ActionSample {
    std::vector<double> raw;  // pre-clip Gaussian draw; clamp before acting
    double log_prob = 0.0;
};

// Draws from N(mean, diag(std^2)). The log-probability is the density at
// the raw (pre-clip) sample, so recomputing it later from the stored action
// reproduces it exactly.
ActionSample sample_action(const PolicyOutput& out, Rng& rng);

double log_prob(const PolicyOutput& out, std::span<const double> raw_action);

// d log_prob / d mean and / d std at the given action.
void log_prob_gradients(const PolicyOutput& out, std::span<const double> raw_action,
                        std::span<double> g_mean, std::span<double> g_std);

// Sum over dimensions of 0.5*ln(2*pi*e) + ln std.
double entropy(const PolicyOutput& out);

struct LossResult {
    double loss = 0.0;
    std::vector<double> grad;  // over params.flat
};

// Clipped-surrogate actor loss with entropy bonus over the given flat
// indices of an assembled buffer:
//   loss = -mean(min(ratio*A, g(eps,A))) - beta * mean(entropy)
// Throws on non-finite ratios, naming the offending sample.
LossResult ppo_actor_loss(const rollout::RolloutBuffer& buffer,
                          std::span<const std::size_t> indices,
                          const neural::NetworkParams& actor, const PpoConfig& config);

// Mean squared error of the critic against buffer.targets.
LossResult critic_loss(const rollout::RolloutBuffer& buffer,
                       std::span<const std::size_t> indices,
                       const neural::NetworkParams& critic);

// Actor, critic, their optimizer states, the observation normalizer, and
// the policy version counter, as persisted in checkpoints.
struct Agent {
    neural::NetworkParams actor;
    neural::NetworkParams critic;
    neural::AdamState actor_adam;
    neural::AdamState critic_adam;
    rollout::RunningNormalizer normalizer;
    std::uint64_t policy_version = 0;

    static Agent create(int obs_dim, int action_dim, const PpoConfig& config, Rng& rng);
};

struct UpdateMetrics {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double mean_entropy = 0.0;
    double mean_value_estimate = 0.0;
    std::size_t transitions = 0;
};

// Runs `epochs` passes of minibatch optimization on actor and critic with
// separate Adam states, clipping gradients per step, and increments the
// policy version exactly once. In strict mode a buffer containing
// transitions from another policy version raises OnPolicyViolation.
UpdateMetrics update(const rollout::RolloutBuffer& buffer, Agent& agent,
                     const PpoConfig& config, Rng& rng, bool allow_off_policy);

// --- checkpoints ("PPOB" v1, binary little-endian) -----------------------

void save_checkpoint(const std::filesystem::path& path, const Agent& agent);
Agent load_checkpoint(const std::filesystem::path& path);

}  // namespace ppofilm::policy
