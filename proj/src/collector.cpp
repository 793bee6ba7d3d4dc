#include "ppofilm/collector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace ppofilm::collect {

namespace {
// Stream purposes, mixed into the seed so environment dynamics and action
// sampling never share a stream.
constexpr std::uint64_t kEnvPurpose = 0x9a1f;
constexpr std::uint64_t kPolicyPurpose = 0x52e7;

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}
}  // namespace

const char* to_string(CollectMode mode) {
    switch (mode) {
        case CollectMode::Regular: return "regular";
        case CollectMode::EoeOnly: return "eoe";
        case CollectMode::EoePt: return "eoe_pt";
    }
    return "?";
}

CollectMode parse_mode(const std::string& name) {
    if (name == "regular") return CollectMode::Regular;
    if (name == "eoe") return CollectMode::EoeOnly;
    if (name == "eoe_pt") return CollectMode::EoePt;
    throw std::invalid_argument("unknown collection mode '" + name +
                                "' (expected regular, eoe, or eoe_pt)");
}

SegmentPlan plan_segments(int n_env, int n_update, int episode_len, CollectMode mode) {
    if (n_env < 1 || n_update < 1 || episode_len < 1)
        throw std::invalid_argument("plan_segments: counts must be >= 1");
    SegmentPlan plan;
    plan.mode = mode;
    plan.n_env = n_env;
    plan.n_update = n_update;
    plan.episode_len = episode_len;
    if (mode == CollectMode::EoePt) {
        const long total = static_cast<long>(n_update) * episode_len;
        if (total % n_env != 0)
            throw std::invalid_argument(
                "eoe_pt requires n_env to divide n_update*T exactly (" +
                std::to_string(total) + " % " + std::to_string(n_env) + " != 0)");
        plan.steps_per_env = static_cast<int>(total / n_env);
    }
    return plan;
}

OnPolicyReport verify_on_policy(const rollout::RolloutBuffer& buffer,
                                std::uint64_t current_version) {
    OnPolicyReport report;
    for (const auto& group : buffer.groups())
        for (const auto& t : group.transitions) {
            report.transitions += 1;
            if (t.policy_version != current_version) report.off_policy += 1;
        }
    report.fraction = report.transitions == 0
                          ? 0.0
                          : static_cast<double>(report.off_policy) /
                                static_cast<double>(report.transitions);
    return report;
}

ParallelCollector::ParallelCollector(const EnvFactory& factory, SegmentPlan plan,
                                     std::uint64_t seed)
    : plan_(plan), seed_(seed) {
    workers_.resize(plan_.n_env);
    for (int e = 0; e < plan_.n_env; ++e) {
        workers_[e].environment = factory(e);
        if (!workers_[e].environment)
            throw std::invalid_argument("environment factory returned null");
        // EoePt streams persist for the whole run; the wave modes re-key
        // both streams per episode slot instead.
        workers_[e].environment->set_stream(Rng::stream(seed_, kEnvPurpose, e));
        workers_[e].policy_stream = Rng::stream(seed_, kPolicyPurpose, e);
    }
}

void ParallelCollector::parallel_for_envs(int count,
                                          const std::function<void(int)>& fn) {
    if (count <= 1) {
        for (int e = 0; e < count; ++e) fn(e);
        return;
    }
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    const int n_threads = std::max(1, std::min(count, hw > 0 ? hw : 2));
    if (n_threads == 1) {
        for (int e = 0; e < count; ++e) fn(e);
        return;
    }
    std::vector<std::thread> threads;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    threads.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) {
        threads.emplace_back([&, t]() {
            try {
                for (int e = t; e < count; e += n_threads) fn(e);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& th : threads) th.join();
    if (failure) std::rethrow_exception(failure);
}

void ParallelCollector::unroll(WorkerState& worker, int env_id,
                               const policy::Agent& agent, long budget,
                               bool whole_episode,
                               std::vector<rollout::TransitionGroup>& groups,
                               rollout::RunningNormalizer& stats,
                               std::vector<double>& scores) {
    neural::ForwardTape actor_tape, critic_tape;
    rollout::TransitionGroup* group = nullptr;

    auto open_group = [&]() {
        groups.emplace_back();
        group = &groups.back();
        group->env_id = env_id;
        group->episode_id = worker.episode_counter;
    };

    auto bootstrap_value = [&](std::span<const double> raw_obs) {
        const auto normalized = agent.normalizer.normalized(raw_obs);
        return policy::critic_value(agent.critic, normalized, critic_tape);
    };

    for (long s = 0; s < budget; ++s) {
        if (!worker.episode_open) {
            worker.pending_obs = worker.environment->reset();
            stats.observe(worker.pending_obs);
            worker.episode_open = true;
            worker.episode_step = 0;
            worker.episode_counter += 1;
            worker.episode_reward = 0.0;
            worker.episode_length = 0;
        }
        if (group == nullptr) open_group();

        const auto obs_norm = agent.normalizer.normalized(worker.pending_obs);
        const auto policy_out = policy::evaluate_policy(agent.actor, obs_norm, actor_tape);
        auto sample = policy::sample_action(policy_out, worker.policy_stream);
        const double value = policy::critic_value(agent.critic, obs_norm, critic_tape);

        std::vector<double> action(sample.raw.size());
        for (std::size_t d = 0; d < action.size(); ++d)
            action[d] = std::clamp(sample.raw[d], -1.0, 1.0);
        const auto step = worker.environment->step(action);
        stats.observe(step.observation);

        rollout::Transition t;
        t.observation = obs_norm;
        t.raw_action = std::move(sample.raw);
        t.log_prob = sample.log_prob;
        t.reward = step.reward;
        t.value = value;
        t.done_reason = step.done_reason;
        t.policy_version = agent.policy_version;
        t.env_id = env_id;
        t.step_index_in_episode = worker.episode_step;
        group->transitions.push_back(std::move(t));

        worker.episode_reward += step.reward;
        worker.episode_length += 1;
        worker.episode_step += 1;

        if (step.done_reason == env::DoneReason::Terminal) {
            group->tail = rollout::TailKind::TrueTerminal;
            group->has_tail_value = false;
            group->closed = true;
            group = nullptr;
            scores.push_back(worker.episode_reward /
                             static_cast<double>(worker.episode_length));
            worker.episode_open = false;
            if (whole_episode) return;
        } else if (step.done_reason == env::DoneReason::TimeOut) {
            group->tail = rollout::TailKind::TimeOutBootstrap;
            group->tail_value = bootstrap_value(step.observation);
            group->has_tail_value = true;
            group->closed = true;
            group = nullptr;
            scores.push_back(worker.episode_reward /
                             static_cast<double>(worker.episode_length));
            worker.episode_open = false;
            if (whole_episode) return;
        } else {
            worker.pending_obs = step.observation;
            if (s == budget - 1) {
                // Segment cut mid-episode; the episode continues next
                // segment under the updated policy.
                group->tail = rollout::TailKind::PartialBootstrap;
                group->tail_value = bootstrap_value(step.observation);
                group->has_tail_value = true;
                group->closed = true;
                group = nullptr;
            }
        }
    }
}

ParallelCollector::CollectResult ParallelCollector::collect_segment(
    const policy::Agent& agent) {
    const int n_env = plan_.n_env;
    std::vector<std::vector<rollout::TransitionGroup>> groups(n_env);
    std::vector<rollout::RunningNormalizer> stats(n_env);
    std::vector<std::vector<double>> scores(n_env);

    parallel_for_envs(n_env, [&](int e) {
        unroll(workers_[e], e, agent, plan_.steps_per_env, /*whole_episode=*/false,
               groups[e], stats[e], scores[e]);
    });

    CollectResult result;
    result.buffer = rollout::RolloutBuffer(strict_on_policy(plan_.mode));
    for (int e = 0; e < n_env; ++e) {
        for (auto& g : groups[e]) {
            result.new_transitions += static_cast<long>(g.transitions.size());
            result.buffer.add_group(std::move(g));
        }
        result.stats_delta.merge(stats[e]);
        result.episode_scores.insert(result.episode_scores.end(), scores[e].begin(),
                                     scores[e].end());
    }
    return result;
}

ParallelCollector::CollectResult ParallelCollector::collect_episode_wave(
    const policy::Agent& agent) {
    CollectResult result;
    result.buffer = rollout::RolloutBuffer(strict_on_policy(plan_.mode));

    while (pending_episodes_.size() < static_cast<std::size_t>(plan_.n_update)) {
        // Full wave: every environment unrolls one complete episode, keyed
        // by its global episode slot.
        const int n_env = plan_.n_env;
        const std::uint64_t base_slot = next_episode_slot_;
        std::vector<std::vector<rollout::TransitionGroup>> groups(n_env);
        std::vector<rollout::RunningNormalizer> stats(n_env);
        std::vector<std::vector<double>> scores(n_env);

        parallel_for_envs(n_env, [&](int e) {
            const std::uint64_t slot = base_slot + static_cast<std::uint64_t>(e);
            auto& worker = workers_[e];
            worker.environment->set_stream(Rng::stream(seed_, kEnvPurpose, slot));
            worker.policy_stream = Rng::stream(seed_, kPolicyPurpose, slot);
            worker.episode_open = false;
            unroll(worker, e, agent, std::numeric_limits<long>::max(),
                   /*whole_episode=*/true, groups[e], stats[e], scores[e]);
        });

        for (int e = 0; e < n_env; ++e) {
            EpisodeRecord record;
            record.group = std::move(groups[e].front());
            record.score = scores[e].front();
            pending_episodes_.push_back(std::move(record));
            result.stats_delta.merge(stats[e]);
            result.new_transitions +=
                static_cast<long>(pending_episodes_.back().group.transitions.size());
        }
        next_episode_slot_ = base_slot + static_cast<std::uint64_t>(n_env);
    }

    for (int k = 0; k < plan_.n_update; ++k) {
        auto record = std::move(pending_episodes_.front());
        pending_episodes_.pop_front();
        result.episode_scores.push_back(record.score);
        result.buffer.add_group(std::move(record.group));
    }
    return result;
}

ParallelCollector::CollectResult ParallelCollector::collect_update(
    const policy::Agent& agent) {
    if (plan_.mode == CollectMode::EoePt) return collect_segment(agent);
    return collect_episode_wave(agent);
}

void run_collection_loop(ParallelCollector& collector, policy::Agent& agent,
                         const policy::PpoConfig& ppo, long total_transitions,
                         Rng& update_rng,
                         const std::function<void(const UpdateRecord&)>& on_update) {
    const auto& plan = collector.plan();
    const long per_update = plan.transitions_per_update();
    const long n_updates = total_transitions / per_update;

    const double t_start = now_seconds();
    double t_prev = t_start;
    long transitions_total = 0;

    for (long u = 1; u <= n_updates; ++u) {
        const double t0 = now_seconds();
        auto collected = collector.collect_update(agent);
        const double t1 = now_seconds();

        agent.normalizer.merge(collected.stats_delta);
        rollout::gae_advantages(collected.buffer, ppo.gamma, ppo.gae_lambda,
                                eoe_enabled(plan.mode));

        UpdateRecord record;
        record.update_index = static_cast<int>(u);
        record.policy_version = agent.policy_version;
        record.on_policy = verify_on_policy(collected.buffer, agent.policy_version);
        if (plan.mode == CollectMode::EoePt && record.on_policy.off_policy != 0)
            throw rollout::OnPolicyViolation(
                "eoe_pt produced an off-policy buffer; this is a bug");

        record.metrics = policy::update(collected.buffer, agent, ppo, update_rng,
                                        /*allow_off_policy=*/plan.mode !=
                                            CollectMode::EoePt);
        const double t2 = now_seconds();

        transitions_total += static_cast<long>(collected.buffer.size());
        record.transitions_total = transitions_total;
        record.walltime_s = t2 - t_start;
        record.env_time_s = t1 - t0;
        record.train_time_s = t2 - t1;
        record.other_time_s = (t2 - t_prev) - record.env_time_s - record.train_time_s;
        record.episode_scores = std::move(collected.episode_scores);
        t_prev = t2;

        if (on_update) on_update(record);
    }
}

}  // namespace ppofilm::collect
