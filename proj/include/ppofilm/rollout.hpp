#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "ppofilm/environments.hpp"

namespace ppofilm::rollout {

using env::DoneReason;

class OnPolicyViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Transition {
    std::vector<double> observation;  // normalized
    std::vector<double> raw_action;   // pre-clip Gaussian sample
    double log_prob = 0.0;
    double reward = 0.0;
    double value = 0.0;  // critic estimate at the observation
    DoneReason done_reason = DoneReason::Running;
    std::uint64_t policy_version = 0;
    int env_id = 0;
    int step_index_in_episode = 0;
};

// How a stored group of transitions ends, which decides the bootstrap term
// of the return recursion.
enum class TailKind {
    TrueTerminal,       // absorbing failure: never bootstrapped
    TimeOutBootstrap,   // episode hit its step cap: bootstrapped when EOE is on
    PartialBootstrap,   // segment cut mid-episode: always bootstrapped
};

// A contiguous run of transitions from one environment within one episode.
struct TransitionGroup {
    int env_id = 0;
    std::uint64_t episode_id = 0;
    std::vector<Transition> transitions;
    TailKind tail = TailKind::PartialBootstrap;
    double tail_value = 0.0;
    bool has_tail_value = false;
    bool closed = false;
};

class RolloutBuffer {
public:
    explicit RolloutBuffer(bool strict_on_policy = false)
        : strict_on_policy_(strict_on_policy) {}

    // Appends to the open group of the transition's env_id, starting a new
    // group if none is open. Throws on non-contiguous step indices and, in
    // strict mode, on policy-version mixture within a group.
    void append(Transition transition);

    // Closes the open group of env_id with the given tail.
    void close_group(int env_id, TailKind tail, double tail_value, bool has_value);

    void add_group(TransitionGroup group) { groups_.push_back(std::move(group)); }

    const std::vector<TransitionGroup>& groups() const { return groups_; }
    std::size_t size() const;
    bool empty() const { return size() == 0; }
    void clear();

    // Flattened view in group order; valid until the buffer is modified.
    const Transition& at(std::size_t flat_index) const;

    // Assembled per-transition value targets and normalized advantages, in
    // flattened order. Only valid after gae_advantages/assemble ran.
    std::vector<double> targets;
    std::vector<double> advantages;
    bool assembled = false;

    // One transition per line, for oracle tests and debugging.
    void dump(std::ostream& os) const;

private:
    TransitionGroup* open_group(int env_id);

    std::vector<TransitionGroup> groups_;
    bool strict_on_policy_ = false;
    mutable std::vector<std::pair<std::uint32_t, std::uint32_t>> flat_cache_;
    mutable std::size_t flat_cache_size_ = 0;
};

// Backward recursion of discounted return targets:
//   y_T = r_T + gamma * b * v_tail,   y_t = r_t + gamma * y_{t+1}
// with b = 0 for TrueTerminal, 1 for PartialBootstrap, and eoe_bootstrap
// for TimeOutBootstrap. Throws if a bootstrapped group lacks a tail value.
std::vector<double> assemble_targets(const RolloutBuffer& buffer, double gamma,
                                     bool eoe_bootstrap);

// Generalized advantage estimation with the same tail convention:
//   delta_t = r_t + gamma * v_{t+1} - v_t,  A_t = delta_t + gamma*lambda*A_{t+1}
// Writes y = A + v into buffer.targets and the per-rollout-normalized
// advantages into buffer.advantages.
void gae_advantages(RolloutBuffer& buffer, double gamma, double lambda,
                    bool eoe_bootstrap);

// Per-component running statistics in parallel-merge form.
class RunningNormalizer {
public:
    RunningNormalizer() = default;
    explicit RunningNormalizer(int dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

    int dim() const { return static_cast<int>(mean_.size()); }
    double count() const { return count_; }

    void observe(std::span<const double> x);
    void merge(const RunningNormalizer& other);

    // (x - mean) / sqrt(var + 1e-8); identity before any data was observed.
    void normalize(std::span<const double> x, std::span<double> out) const;
    std::vector<double> normalized(std::span<const double> x) const;

    double variance(int i) const { return count_ > 0.0 ? m2_[i] / count_ : 0.0; }
    double mean(int i) const { return mean_[i]; }

    std::span<const double> mean_raw() const { return mean_; }
    std::span<const double> m2_raw() const { return m2_; }
    static RunningNormalizer from_raw(std::vector<double> mean, std::vector<double> m2,
                                      double count);

private:
    std::vector<double> mean_, m2_;
    double count_ = 0.0;
};

// Statistics update plus normalization in one call; set update to keep the
// spec-level single-operation form.
std::vector<double> normalize_observation(RunningNormalizer& normalizer,
                                          std::span<const double> obs, bool update);

}  // namespace ppofilm::rollout
