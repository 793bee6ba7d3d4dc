#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ppofilm/environments.hpp"
#include "ppofilm/policy.hpp"
#include "ppofilm/rng.hpp"
#include "ppofilm/rollout.hpp"

namespace ppofilm::collect {

enum class CollectMode {
    Regular,  // whole-episode buffers, no bootstrapping of time-outs
    EoeOnly,  // whole-episode buffers, time-out tails bootstrapped
    EoePt,    // fixed-length segments: time-out + partial bootstrapping
};

const char* to_string(CollectMode mode);
CollectMode parse_mode(const std::string& name);  // regular | eoe | eoe_pt

inline bool eoe_enabled(CollectMode mode) { return mode != CollectMode::Regular; }
inline bool strict_on_policy(CollectMode mode) { return mode == CollectMode::EoePt; }

struct SegmentPlan {
    CollectMode mode = CollectMode::EoePt;
    int n_env = 1;
    int n_update = 8;     // full episodes' worth of transitions per update
    int episode_len = 1;  // T
    int steps_per_env = 0;  // per segment; EoePt only

    long transitions_per_update() const {
        return static_cast<long>(n_update) * episode_len;
    }
};

// EoePt requires n_env to divide n_update*T exactly so every update sees
// the same number of transitions; violations are configuration errors.
SegmentPlan plan_segments(int n_env, int n_update, int episode_len, CollectMode mode);

struct OnPolicyReport {
    std::size_t transitions = 0;
    std::size_t off_policy = 0;
    double fraction = 0.0;
};

OnPolicyReport verify_on_policy(const rollout::RolloutBuffer& buffer,
                                std::uint64_t current_version);

using EnvFactory = std::function<std::unique_ptr<env::Environment>(int env_id)>;

// Synchronous parallel transition collection. One persistent environment
// per worker; workers receive an immutable agent snapshot at the start of
// each collection phase and hand their transition groups back at the end
// (hard barrier). Randomness is keyed by env id (EoePt) or by global
// episode index (Regular/EoeOnly), never by thread, so the parallel layout
// cannot change the sampled trajectories.
class ParallelCollector {
public:
    ParallelCollector(const EnvFactory& factory, SegmentPlan plan, std::uint64_t seed);

    struct CollectResult {
        rollout::RolloutBuffer buffer;
        rollout::RunningNormalizer stats_delta;  // observations seen this phase
        std::vector<double> episode_scores;  // mean per-step reward, completed episodes
        long new_transitions = 0;            // unrolled during this call
    };

    // Gathers exactly one update's worth of transitions (one segment in
    // EoePt mode; n_update whole episodes otherwise, running full waves of
    // n_env episodes and queueing the surplus).
    CollectResult collect_update(const policy::Agent& agent);

    const SegmentPlan& plan() const { return plan_; }

private:
    struct EpisodeRecord {
        rollout::TransitionGroup group;
        double score = 0.0;  // mean per-step reward
    };

    struct WorkerState {
        std::unique_ptr<env::Environment> environment;
        Rng policy_stream;
        bool episode_open = false;
        std::vector<double> pending_obs;  // raw observation to act on next
        int episode_step = 0;
        std::uint64_t episode_counter = 0;
        double episode_reward = 0.0;
        long episode_length = 0;
    };

    CollectResult collect_segment(const policy::Agent& agent);
    CollectResult collect_episode_wave(const policy::Agent& agent);

    // Unrolls one worker for `budget` steps (EoePt), or until the episode
    // ends when whole_episode is set. Appends finished/cut groups and the
    // scores of completed episodes.
    void unroll(WorkerState& worker, int env_id, const policy::Agent& agent,
                long budget, bool whole_episode,
                std::vector<rollout::TransitionGroup>& groups,
                rollout::RunningNormalizer& stats, std::vector<double>& scores);

    // Runs fn(env_id) for all env ids on min(n_env, hardware) threads.
    void parallel_for_envs(int count, const std::function<void(int)>& fn);

    SegmentPlan plan_;
    std::uint64_t seed_ = 0;
    std::vector<WorkerState> workers_;
    std::uint64_t next_episode_slot_ = 0;          // Regular/EoeOnly global counter
    std::deque<EpisodeRecord> pending_episodes_;   // collected but not yet consumed
};

struct UpdateRecord {
    int update_index = 0;
    long transitions_total = 0;
    double walltime_s = 0.0;
    std::uint64_t policy_version = 0;  // version performing this update
    OnPolicyReport on_policy;
    policy::UpdateMetrics metrics;
    std::vector<double> episode_scores;
    double env_time_s = 0.0;
    double train_time_s = 0.0;
    double other_time_s = 0.0;
};

// Alternates collection and agent updates until total_transitions have been
// gathered (a final partial update is dropped). Invokes on_update after
// every agent update with the per-update record.
void run_collection_loop(ParallelCollector& collector, policy::Agent& agent,
                         const policy::PpoConfig& ppo, long total_transitions,
                         Rng& update_rng,
                         const std::function<void(const UpdateRecord&)>& on_update);

}  // namespace ppofilm::collect
