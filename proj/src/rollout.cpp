#include "ppofilm/rollout.hpp"

#include <cmath>
#include <ostream>

namespace ppofilm::rollout {

TransitionGroup* RolloutBuffer::open_group(int env_id) {
    for (auto it = groups_.rbegin(); it != groups_.rend(); ++it)
        if (it->env_id == env_id && !it->closed) return &*it;
    return nullptr;
}

void RolloutBuffer::append(Transition transition) {
    TransitionGroup* group = open_group(transition.env_id);
    if (group == nullptr) {
        TransitionGroup fresh;
        fresh.env_id = transition.env_id;
        groups_.push_back(std::move(fresh));
        group = &groups_.back();
    }
    if (!group->transitions.empty()) {
        const auto& last = group->transitions.back();
        if (transition.step_index_in_episode != last.step_index_in_episode + 1)
            throw std::logic_error("append: non-contiguous step index in group");
        if (strict_on_policy_ && transition.policy_version != last.policy_version)
            throw OnPolicyViolation("append: policy version mixture within a group");
    }
    group->transitions.push_back(std::move(transition));
    flat_cache_size_ = 0;
}

void RolloutBuffer::close_group(int env_id, TailKind tail, double tail_value,
                                bool has_value) {
    TransitionGroup* group = open_group(env_id);
    if (group == nullptr || group->transitions.empty())
        throw std::logic_error("close_group: no open group for env");
    group->tail = tail;
    group->tail_value = tail_value;
    group->has_tail_value = has_value;
    group->closed = true;
}

std::size_t RolloutBuffer::size() const {
    std::size_t n = 0;
    for (const auto& g : groups_) n += g.transitions.size();
    return n;
}

void RolloutBuffer::clear() {
    groups_.clear();
    targets.clear();
    advantages.clear();
    assembled = false;
    flat_cache_size_ = 0;
}

const Transition& RolloutBuffer::at(std::size_t flat_index) const {
    if (flat_cache_size_ != size()) {
        flat_cache_.clear();
        for (std::uint32_t g = 0; g < groups_.size(); ++g)
            for (std::uint32_t k = 0; k < groups_[g].transitions.size(); ++k)
                flat_cache_.emplace_back(g, k);
        flat_cache_size_ = flat_cache_.size();
    }
    const auto [g, k] = flat_cache_.at(flat_index);
    return groups_[g].transitions[k];
}

void RolloutBuffer::dump(std::ostream& os) const {
    for (const auto& g : groups_) {
        for (const auto& t : g.transitions) {
            os << "env=" << t.env_id << " ep=" << g.episode_id
               << " step=" << t.step_index_in_episode << " done=";
            switch (t.done_reason) {
                case DoneReason::Running: os << "running"; break;
                case DoneReason::TimeOut: os << "timeout"; break;
                case DoneReason::Terminal: os << "terminal"; break;
            }
            os << " r=" << t.reward << " v=" << t.value << " lp=" << t.log_prob
               << " ver=" << t.policy_version << '\n';
        }
    }
}

namespace {

double bootstrap_factor(const TransitionGroup& group, bool eoe_bootstrap) {
    switch (group.tail) {
        case TailKind::TrueTerminal: return 0.0;
        case TailKind::PartialBootstrap: return 1.0;
        case TailKind::TimeOutBootstrap: return eoe_bootstrap ? 1.0 : 0.0;
    }
    return 0.0;
}

double tail_value_checked(const TransitionGroup& group, double b) {
    if (b == 0.0) return 0.0;
    if (!group.has_tail_value)
        throw std::logic_error("bootstrapped group is missing its tail value");
    return group.tail_value;
}

}  // namespace

std::vector<double> assemble_targets(const RolloutBuffer& buffer, double gamma,
                                     bool eoe_bootstrap) {
    std::vector<double> y;
    y.resize(buffer.size());
    std::size_t offset = 0;
    for (const auto& group : buffer.groups()) {
        const std::size_t n = group.transitions.size();
        if (n == 0) continue;
        const double b = bootstrap_factor(group, eoe_bootstrap);
        const double v_tail = tail_value_checked(group, b);
        // y[T] = r[T] + gamma*b*v_tail, then y[t] = r[t] + gamma*y[t+1].
        double acc = group.transitions[n - 1].reward + gamma * b * v_tail;
        y[offset + n - 1] = acc;
        for (std::size_t k = n - 1; k-- > 0;) {
            acc = group.transitions[k].reward + gamma * acc;
            y[offset + k] = acc;
        }
        offset += n;
    }
    return y;
}

void gae_advantages(RolloutBuffer& buffer, double gamma, double lambda,
                    bool eoe_bootstrap) {
    const std::size_t total = buffer.size();
    buffer.targets.resize(total);
    buffer.advantages.resize(total);

    std::size_t offset = 0;
    for (const auto& group : buffer.groups()) {
        const std::size_t n = group.transitions.size();
        if (n == 0) continue;
        const double b = bootstrap_factor(group, eoe_bootstrap);
        double v_next = b * tail_value_checked(group, b);
        double adv = 0.0;
        for (std::size_t k = n; k-- > 0;) {
            const auto& t = group.transitions[k];
            const double delta = t.reward + gamma * v_next - t.value;
            adv = delta + gamma * lambda * adv;
            buffer.advantages[offset + k] = adv;
            buffer.targets[offset + k] = adv + t.value;
            v_next = t.value;
        }
        offset += n;
    }

    // Per-rollout normalization to zero mean and unit standard deviation.
    if (total > 0) {
        double mean = 0.0;
        for (double a : buffer.advantages) mean += a;
        mean /= static_cast<double>(total);
        double var = 0.0;
        for (double a : buffer.advantages) var += (a - mean) * (a - mean);
        var /= static_cast<double>(total);
        const double denom = std::max(std::sqrt(var), 1e-8);
        for (double& a : buffer.advantages) a = (a - mean) / denom;
    }
    buffer.assembled = true;
}

void RunningNormalizer::observe(std::span<const double> x) {
    if (static_cast<int>(x.size()) != dim())
        throw std::invalid_argument("normalizer: dimension mismatch");
    count_ += 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double delta = x[i] - mean_[i];
        mean_[i] += delta / count_;
        m2_[i] += delta * (x[i] - mean_[i]);
    }
}

void RunningNormalizer::merge(const RunningNormalizer& other) {
    if (other.count_ == 0.0) return;
    if (count_ == 0.0) {
        *this = other;
        return;
    }
    if (other.dim() != dim())
        throw std::invalid_argument("normalizer merge: dimension mismatch");
    const double n = count_ + other.count_;
    for (int i = 0; i < dim(); ++i) {
        const double delta = other.mean_[i] - mean_[i];
        mean_[i] += delta * other.count_ / n;
        m2_[i] += other.m2_[i] + delta * delta * count_ * other.count_ / n;
    }
    count_ = n;
}

void RunningNormalizer::normalize(std::span<const double> x,
                                  std::span<double> out) const {
    if (static_cast<int>(x.size()) != dim() || out.size() != x.size())
        throw std::invalid_argument("normalizer: dimension mismatch");
    if (count_ == 0.0) {
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i];
        return;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double var = m2_[i] / count_;
        out[i] = (x[i] - mean_[i]) / std::sqrt(var + 1e-8);
    }
}

std::vector<double> RunningNormalizer::normalized(std::span<const double> x) const {
    std::vector<double> out(x.size());
    normalize(x, out);
    return out;
}

RunningNormalizer RunningNormalizer::from_raw(std::vector<double> mean,
                                              std::vector<double> m2, double count) {
    RunningNormalizer n;
    n.mean_ = std::move(mean);
    n.m2_ = std::move(m2);
    n.count_ = count;
    if (n.mean_.size() != n.m2_.size())
        throw std::invalid_argument("normalizer raw state: size mismatch");
    return n;
}

std::vector<double> normalize_observation(RunningNormalizer& normalizer,
                                          std::span<const double> obs, bool update) {
    if (update) normalizer.observe(obs);
    return normalizer.normalized(obs);
}

}  // namespace ppofilm::rollout
