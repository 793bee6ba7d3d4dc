#include "ppofilm/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace ppofilm::policy {

namespace {
constexpr double kLogSqrt2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)
}

void PpoConfig::validate() const {
    if (!(clip > 0.0 && clip < 1.0)) throw std::invalid_argument("clip must be in (0,1)");
    if (!(gamma > 0.0 && gamma <= 1.0))
        throw std::invalid_argument("gamma must be in (0,1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0))
        throw std::invalid_argument("gae_lambda must be in [0,1]");
    if (entropy_coef < 0.0) throw std::invalid_argument("entropy_coef must be >= 0");
    if (epochs < 1 || minibatch_size < 1)
        throw std::invalid_argument("epochs and minibatch_size must be >= 1");
    if (lr_actor <= 0.0 || lr_critic <= 0.0 || grad_clip <= 0.0)
        throw std::invalid_argument("learning rates and grad_clip must be positive");
}

PolicyOutput evaluate_policy(const neural::NetworkParams& actor,
                             std::span<const double> observation,
                             neural::ForwardTape& tape) {
    neural::forward(actor, observation, tape);
    const auto mean = neural::head_output(actor, tape, 0);
    const auto std_dev = neural::head_output(actor, tape, 1);
    PolicyOutput out;
    out.mean.assign(mean.begin(), mean.end());
    out.std_dev.resize(std_dev.size());
    for (std::size_t d = 0; d < std_dev.size(); ++d)
        out.std_dev[d] = std::max(std_dev[d], kStdFloor);
    return out;
}

double critic_value(const neural::NetworkParams& critic,
                    std::span<const double> observation, neural::ForwardTape& tape) {
    neural::forward(critic, observation, tape);
    return neural::head_output(critic, tape, 0)[0];
}

ActionSample sample_action(const PolicyOutput& out, Rng& rng) {
    ActionSample s;
    s.raw.resize(out.mean.size());
    for (std::size_t d = 0; d < s.raw.size(); ++d)
        s.raw[d] = out.mean[d] + out.std_dev[d] * rng.normal();
    s.log_prob = log_prob(out, s.raw);
    return s;
}

double log_prob(const PolicyOutput& out, std::span<const double> raw_action) {
    if (raw_action.size() != out.mean.size())
        throw std::invalid_argument("log_prob: dimension mismatch");
    double lp = 0.0;
    for (std::size_t d = 0; d < raw_action.size(); ++d) {
        const double z = (raw_action[d] - out.mean[d]) / out.std_dev[d];
        lp += -0.5 * z * z - std::log(out.std_dev[d]) - kLogSqrt2Pi;
    }
    return lp;
}

void log_prob_gradients(const PolicyOutput& out, std::span<const double> raw_action,
                        std::span<double> g_mean, std::span<double> g_std) {
    for (std::size_t d = 0; d < raw_action.size(); ++d) {
        const double sigma = out.std_dev[d];
        const double diff = raw_action[d] - out.mean[d];
        g_mean[d] = diff / (sigma * sigma);
        g_std[d] = (diff * diff - sigma * sigma) / (sigma * sigma * sigma);
    }
}

double entropy(const PolicyOutput& out) {
    double h = 0.0;
    for (double sigma : out.std_dev)
        h += 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e) + std::log(sigma);
    return h;
}

LossResult ppo_actor_loss(const rollout::RolloutBuffer& buffer,
                          std::span<const std::size_t> indices,
                          const neural::NetworkParams& actor, const PpoConfig& config) {
    if (!buffer.assembled)
        throw std::logic_error("ppo_actor_loss: buffer targets not assembled");
    LossResult result;
    result.grad.assign(actor.size(), 0.0);
    if (indices.empty()) return result;

    const double inv_batch = 1.0 / static_cast<double>(indices.size());
    const int d = static_cast<int>(actor.spec.branches[0].head_width);

    static thread_local neural::ForwardTape tape;
    std::vector<std::vector<double>> head_grads(2);
    std::vector<double> g_mean(d), g_std(d);

    for (const std::size_t idx : indices) {
        const auto& t = buffer.at(idx);
        const double advantage = buffer.advantages[idx];

        const PolicyOutput out = evaluate_policy(actor, t.observation, tape);
        const double lp = log_prob(out, t.raw_action);
        const double ratio = std::exp(lp - t.log_prob);
        if (!std::isfinite(ratio))
            throw std::runtime_error("non-finite policy ratio at buffer index " +
                                     std::to_string(idx));

        const double g_clip =
            advantage >= 0.0 ? (1.0 + config.clip) * advantage
                             : (1.0 - config.clip) * advantage;
        const double surrogate = std::min(ratio * advantage, g_clip);
        const double ent = entropy(out);
        result.loss += (-surrogate - config.entropy_coef * ent) * inv_batch;

        // Gradient through the ratio only on the unclipped branch.
        const double dloss_dlp =
            ratio * advantage <= g_clip ? -ratio * advantage * inv_batch : 0.0;

        log_prob_gradients(out, t.raw_action, g_mean, g_std);
        head_grads[0].assign(d, 0.0);
        head_grads[1].assign(d, 0.0);
        const auto sigmoid_out = neural::head_output(actor, tape, 1);
        for (int k = 0; k < d; ++k) {
            head_grads[0][k] = dloss_dlp * g_mean[k];
            double g_sigma = dloss_dlp * g_std[k] -
                             config.entropy_coef * inv_batch / out.std_dev[k];
            // The floor turns std into a constant: no gradient through it.
            if (sigmoid_out[k] < kStdFloor) g_sigma = 0.0;
            head_grads[1][k] = g_sigma;
        }
        neural::backward(actor, tape, head_grads, result.grad);
    }
    return result;
}

LossResult critic_loss(const rollout::RolloutBuffer& buffer,
                       std::span<const std::size_t> indices,
                       const neural::NetworkParams& critic) {
    if (!buffer.assembled)
        throw std::logic_error("critic_loss: buffer targets not assembled");
    LossResult result;
    result.grad.assign(critic.size(), 0.0);
    if (indices.empty()) return result;

    const double inv_batch = 1.0 / static_cast<double>(indices.size());
    static thread_local neural::ForwardTape tape;
    std::vector<std::vector<double>> head_grads(1);

    for (const std::size_t idx : indices) {
        const auto& t = buffer.at(idx);
        const double v = critic_value(critic, t.observation, tape);
        const double err = v - buffer.targets[idx];
        result.loss += err * err * inv_batch;
        head_grads[0] = {2.0 * err * inv_batch};
        neural::backward(critic, tape, head_grads, result.grad);
    }
    return result;
}

Agent Agent::create(int obs_dim, int action_dim, const PpoConfig& config, Rng& rng) {
    config.validate();
    Agent agent;
    agent.actor = neural::orthogonal_init(neural::NetworkSpec::actor(obs_dim, action_dim), rng);
    agent.critic = neural::orthogonal_init(neural::NetworkSpec::critic(obs_dim), rng);
    agent.actor_adam = neural::AdamState::for_params(agent.actor, config.lr_actor);
    agent.critic_adam = neural::AdamState::for_params(agent.critic, config.lr_critic);
    agent.normalizer = rollout::RunningNormalizer(obs_dim);
    return agent;
}

UpdateMetrics update(const rollout::RolloutBuffer& buffer, Agent& agent,
                     const PpoConfig& config, Rng& rng, bool allow_off_policy) {
    if (!buffer.assembled)
        throw std::logic_error("update: buffer targets not assembled");
    const std::size_t total = buffer.size();
    if (total == 0) throw std::logic_error("update: empty buffer");

    if (!allow_off_policy) {
        for (std::size_t i = 0; i < total; ++i)
            if (buffer.at(i).policy_version != agent.policy_version)
                throw rollout::OnPolicyViolation(
                    "update: buffer contains transitions from policy version " +
                    std::to_string(buffer.at(i).policy_version) + " but current is " +
                    std::to_string(agent.policy_version));
    }

    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;

    UpdateMetrics metrics;
    metrics.transitions = total;
    for (std::size_t i = 0; i < total; ++i)
        metrics.mean_value_estimate += buffer.at(i).value;
    metrics.mean_value_estimate /= static_cast<double>(total);

    long steps = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // Fisher-Yates with the injected stream.
        for (std::size_t i = total - 1; i > 0; --i)
            std::swap(order[i], order[rng.below(i + 1)]);

        for (std::size_t begin = 0; begin < total;
             begin += static_cast<std::size_t>(config.minibatch_size)) {
            const std::size_t end =
                std::min(total, begin + static_cast<std::size_t>(config.minibatch_size));
            const std::span<const std::size_t> batch(order.data() + begin, end - begin);

            auto actor_result = ppo_actor_loss(buffer, batch, agent.actor, config);
            neural::clip_gradients_global(actor_result.grad, config.grad_clip);
            neural::adam_step(agent.actor, actor_result.grad, agent.actor_adam);

            auto critic_result = critic_loss(buffer, batch, agent.critic);
            neural::clip_gradients_global(critic_result.grad, config.grad_clip);
            neural::adam_step(agent.critic, critic_result.grad, agent.critic_adam);

            metrics.policy_loss += actor_result.loss;
            metrics.value_loss += critic_result.loss;
            steps += 1;
        }
    }
    if (steps > 0) {
        metrics.policy_loss /= static_cast<double>(steps);
        metrics.value_loss /= static_cast<double>(steps);
    }

    // Entropy of the updated policy over the buffer observations.
    {
        static thread_local neural::ForwardTape tape;
        for (std::size_t i = 0; i < total; ++i)
            metrics.mean_entropy += entropy(evaluate_policy(agent.actor, buffer.at(i).observation, tape));
        metrics.mean_entropy /= static_cast<double>(total);
    }

    agent.policy_version += 1;
    return metrics;
}

// --- checkpoints -----------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'P', 'P', 'O', 'B'};
constexpr std::uint32_t kVersion = 1;

void write_adam(std::ostream& os, const neural::AdamState& s) {
    neural::io::write_array(os, s.m);
    neural::io::write_array(os, s.v);
    neural::io::write_u64(os, static_cast<std::uint64_t>(s.t));
    neural::io::write_f64(os, s.lr);
    neural::io::write_f64(os, s.beta1);
    neural::io::write_f64(os, s.beta2);
    neural::io::write_f64(os, s.eps);
}

neural::AdamState read_adam(std::istream& is) {
    neural::AdamState s;
    s.m = neural::io::read_array(is);
    s.v = neural::io::read_array(is);
    s.t = static_cast<long>(neural::io::read_u64(is));
    s.lr = neural::io::read_f64(is);
    s.beta1 = neural::io::read_f64(is);
    s.beta2 = neural::io::read_f64(is);
    s.eps = neural::io::read_f64(is);
    return s;
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Agent& agent) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof kMagic);
    neural::io::write_u32(os, kVersion);
    neural::io::write_spec(os, agent.actor.spec);
    neural::io::write_spec(os, agent.critic.spec);
    neural::io::write_array(os, agent.actor.flat);
    neural::io::write_array(os, agent.critic.flat);
    write_adam(os, agent.actor_adam);
    write_adam(os, agent.critic_adam);
    neural::io::write_f64(os, agent.normalizer.count());
    neural::io::write_array(os, agent.normalizer.mean_raw());
    neural::io::write_array(os, agent.normalizer.m2_raw());
    neural::io::write_u64(os, agent.policy_version);
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

Agent load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    char magic[4];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error(path.string() + " is not a PPOB checkpoint");
    const auto version = neural::io::read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " +
                                 std::to_string(version));
    Agent agent;
    const auto actor_spec = neural::io::read_spec(is);
    const auto critic_spec = neural::io::read_spec(is);
    agent.actor = neural::NetworkParams::zeros(actor_spec);
    agent.critic = neural::NetworkParams::zeros(critic_spec);
    auto actor_flat = neural::io::read_array(is);
    auto critic_flat = neural::io::read_array(is);
    if (actor_flat.size() != agent.actor.size() ||
        critic_flat.size() != agent.critic.size())
        throw std::runtime_error("checkpoint parameter arrays do not match the spec");
    agent.actor.flat = std::move(actor_flat);
    agent.critic.flat = std::move(critic_flat);
    agent.actor_adam = read_adam(is);
    agent.critic_adam = read_adam(is);
    const double count = neural::io::read_f64(is);
    auto mean = neural::io::read_array(is);
    auto m2 = neural::io::read_array(is);
    agent.normalizer = rollout::RunningNormalizer::from_raw(std::move(mean),
                                                            std::move(m2), count);
    agent.policy_version = neural::io::read_u64(is);
    return agent;
}

}  // namespace ppofilm::policy
