#include "ppofilm/neural.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace ppofilm::neural {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

void NetworkSpec::validate() const {
    if (input_dim < 1) throw std::invalid_argument("input_dim must be >= 1");
    if (branches.empty()) throw std::invalid_argument("at least one branch required");
    for (const auto& l : trunk)
        if (l.width < 1) throw std::invalid_argument("trunk layer width must be >= 1");
    for (const auto& b : branches) {
        for (const auto& l : b.hidden)
            if (l.width < 1) throw std::invalid_argument("branch layer width must be >= 1");
        if (b.head_width < 1) throw std::invalid_argument("head width must be >= 1");
    }
}

NetworkSpec NetworkSpec::actor(int obs_dim, int action_dim) {
    NetworkSpec spec;
    spec.input_dim = obs_dim;
    spec.trunk = {{64, Activation::Relu}};
    BranchSpec mean;
    mean.hidden = {{64, Activation::Relu}};
    mean.head_width = action_dim;
    mean.head_act = Activation::Tanh;
    mean.head_gain = 0.01;  // near-zero initial mean
    BranchSpec std_dev;
    std_dev.hidden = {{64, Activation::Relu}};
    std_dev.head_width = action_dim;
    std_dev.head_act = Activation::Sigmoid;
    spec.branches = {mean, std_dev};
    return spec;
}

NetworkSpec NetworkSpec::critic(int obs_dim) {
    NetworkSpec spec;
    spec.input_dim = obs_dim;
    spec.trunk = {{64, Activation::Relu}, {64, Activation::Relu}};
    BranchSpec head;
    head.head_width = 1;
    head.head_act = Activation::Linear;
    spec.branches = {head};
    return spec;
}

NetworkParams NetworkParams::zeros(const NetworkSpec& spec) {
    spec.validate();
    NetworkParams p;
    p.spec = spec;

    std::size_t offset = 0;
    auto add_layer = [&](int in, int out, Activation act, double gain) {
        LayerRef ref;
        ref.in = in;
        ref.out = out;
        ref.act = act;
        ref.init_gain = gain;
        ref.w = offset;
        offset += static_cast<std::size_t>(in) * out;
        ref.b = offset;
        offset += out;
        p.layers.push_back(ref);
        return out;
    };

    int dim = spec.input_dim;
    for (const auto& l : spec.trunk) dim = add_layer(dim, l.width, l.act, 1.0);
    p.trunk_layer_count = static_cast<int>(p.layers.size());

    for (const auto& b : spec.branches) {
        const int begin = static_cast<int>(p.layers.size());
        int bdim = dim;
        for (const auto& l : b.hidden) bdim = add_layer(bdim, l.width, l.act, 1.0);
        add_layer(bdim, b.head_width, b.head_act, b.head_gain);
        p.branch_layers.emplace_back(begin, static_cast<int>(p.layers.size()));
    }

    p.flat.assign(offset, 0.0);
    return p;
}

namespace {

// Thin Q factor (m x k, m >= k, orthonormal columns, R diagonal positive)
// of a Gaussian draw, via Householder reflections.
std::vector<double> random_orthogonal(int m, int k, Rng& rng) {
    std::vector<double> a(static_cast<std::size_t>(m) * k);
    for (double& x : a) x = rng.normal();

    std::vector<std::vector<double>> vs(k);
    std::vector<double> tau(k, 0.0), diag(k, 0.0);

    for (int j = 0; j < k; ++j) {
        double norm2 = 0.0;
        for (int i = j; i < m; ++i) norm2 += a[i * k + j] * a[i * k + j];
        const double norm = std::sqrt(norm2);
        const double alpha = a[j * k + j] >= 0.0 ? -norm : norm;

        auto& v = vs[j];
        v.assign(m, 0.0);
        for (int i = j; i < m; ++i) v[i] = a[i * k + j];
        v[j] -= alpha;
        double vnorm2 = 0.0;
        for (int i = j; i < m; ++i) vnorm2 += v[i] * v[i];
        if (vnorm2 > 0.0) {
            tau[j] = 2.0 / vnorm2;
            for (int c = j; c < k; ++c) {
                double s = 0.0;
                for (int i = j; i < m; ++i) s += v[i] * a[i * k + c];
                s *= tau[j];
                for (int i = j; i < m; ++i) a[i * k + c] -= s * v[i];
            }
        }
        diag[j] = a[j * k + j];
    }

    // Q = H_0 ... H_{k-1} [I_k; 0]
    std::vector<double> q(static_cast<std::size_t>(m) * k, 0.0);
    for (int c = 0; c < k; ++c) q[c * k + c] = 1.0;
    for (int j = k - 1; j >= 0; --j) {
        if (tau[j] == 0.0) continue;
        const auto& v = vs[j];
        for (int c = 0; c < k; ++c) {
            double s = 0.0;
            for (int i = j; i < m; ++i) s += v[i] * q[i * k + c];
            s *= tau[j];
            for (int i = j; i < m; ++i) q[i * k + c] -= s * v[i];
        }
    }
    // Fix signs so the factorization is the canonical (Haar) one.
    for (int c = 0; c < k; ++c)
        if (diag[c] < 0.0)
            for (int i = 0; i < m; ++i) q[i * k + c] = -q[i * k + c];
    return q;
}

inline double activate(Activation act, double z) {
    switch (act) {
        case Activation::Relu: return z > 0.0 ? z : 0.0;
        case Activation::Tanh: return std::tanh(z);
        case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case Activation::Linear: return z;
    }
    return z;
}

// Derivative expressed through the activation output.
inline double activate_grad(Activation act, double y) {
    switch (act) {
        case Activation::Relu: return y > 0.0 ? 1.0 : 0.0;
        case Activation::Tanh: return 1.0 - y * y;
        case Activation::Sigmoid: return y * (1.0 - y);
        case Activation::Linear: return 1.0;
    }
    return 1.0;
}

}  // namespace

NetworkParams orthogonal_init(const NetworkSpec& spec, Rng& rng) {
    NetworkParams p = NetworkParams::zeros(spec);
    for (const auto& layer : p.layers) {
        const int out = layer.out, in = layer.in;
        double* w = p.flat.data() + layer.w;
        if (out <= in) {
            // W = gain * Q^T with Q (in x out): rows of W orthonormal.
            const auto q = random_orthogonal(in, out, rng);
            for (int o = 0; o < out; ++o)
                for (int i = 0; i < in; ++i) w[o * in + i] = layer.init_gain * q[i * out + o];
        } else {
            const auto q = random_orthogonal(out, in, rng);
            for (int o = 0; o < out; ++o)
                for (int i = 0; i < in; ++i) w[o * in + i] = layer.init_gain * q[o * in + i];
        }
    }
    return p;
}

void forward(const NetworkParams& params, std::span<const double> input,
             ForwardTape& tape) {
    if (static_cast<int>(input.size()) != params.spec.input_dim)
        throw std::invalid_argument("forward: input dimension mismatch");

    tape.input.assign(input.begin(), input.end());
    tape.y.resize(params.layers.size());

    auto run_layer = [&](std::size_t li, const std::vector<double>& x) {
        const auto& ref = params.layers[li];
        auto& y = tape.y[li];
        y.resize(ref.out);
        const double* w = params.flat.data() + ref.w;
        const double* b = params.flat.data() + ref.b;
        for (int o = 0; o < ref.out; ++o) {
            double z = b[o];
            const double* row = w + static_cast<std::size_t>(o) * ref.in;
            for (int i = 0; i < ref.in; ++i) z += row[i] * x[i];
            y[o] = activate(ref.act, z);
        }
    };

    const std::vector<double>* x = &tape.input;
    for (int li = 0; li < params.trunk_layer_count; ++li) {
        run_layer(li, *x);
        x = &tape.y[li];
    }
    const std::vector<double>* trunk_out = x;
    for (const auto& [begin, end] : params.branch_layers) {
        x = trunk_out;
        for (int li = begin; li < end; ++li) {
            run_layer(li, *x);
            x = &tape.y[li];
        }
    }
}

std::span<const double> head_output(const NetworkParams& params,
                                    const ForwardTape& tape, int branch) {
    const int head = params.branch_layers.at(branch).second - 1;
    return tape.y[head];
}

void backward(const NetworkParams& params, const ForwardTape& tape,
              const std::vector<std::vector<double>>& head_gradients,
              std::span<double> grad) {
    if (head_gradients.size() != params.branch_layers.size())
        throw std::invalid_argument("backward: one gradient per head required");
    if (grad.size() != params.flat.size())
        throw std::invalid_argument("backward: gradient buffer size mismatch");
    if (tape.y.size() != params.layers.size() || tape.y.empty())
        throw std::invalid_argument("backward: stale or missing tape");

    static thread_local std::vector<double> delta, delta_prev;

    const int trunk_dim = params.trunk_layer_count > 0
                              ? params.layers[params.trunk_layer_count - 1].out
                              : params.spec.input_dim;
    std::vector<double> trunk_grad(trunk_dim, 0.0);

    auto layer_input = [&](int li, int branch_begin) -> const std::vector<double>& {
        if (li == 0) return tape.input;
        if (li == branch_begin && params.trunk_layer_count > 0 &&
            li >= params.trunk_layer_count)
            return tape.y[params.trunk_layer_count - 1];
        if (li == branch_begin && params.trunk_layer_count == 0) return tape.input;
        return tape.y[li - 1];
    };

    auto back_layer = [&](int li, int branch_begin, std::vector<double>& g_out,
                          std::vector<double>& g_in) {
        const auto& ref = params.layers[li];
        const auto& y = tape.y[li];
        const auto& x = layer_input(li, branch_begin);
        const double* w = params.flat.data() + ref.w;
        double* gw = grad.data() + ref.w;
        double* gb = grad.data() + ref.b;
        g_in.assign(ref.in, 0.0);
        for (int o = 0; o < ref.out; ++o) {
            const double dz = g_out[o] * activate_grad(ref.act, y[o]);
            if (dz == 0.0) continue;
            const double* row = w + static_cast<std::size_t>(o) * ref.in;
            double* grow = gw + static_cast<std::size_t>(o) * ref.in;
            for (int i = 0; i < ref.in; ++i) {
                grow[i] += dz * x[i];
                g_in[i] += dz * row[i];
            }
            gb[o] += dz;
        }
    };

    // Branches first, accumulating into the trunk-output gradient.
    for (std::size_t br = 0; br < params.branch_layers.size(); ++br) {
        const auto [begin, end] = params.branch_layers[br];
        delta = head_gradients[br];
        if (static_cast<int>(delta.size()) != params.layers[end - 1].out)
            throw std::invalid_argument("backward: head gradient dimension mismatch");
        for (int li = end - 1; li >= begin; --li) {
            back_layer(li, begin, delta, delta_prev);
            delta.swap(delta_prev);
        }
        for (int i = 0; i < trunk_dim; ++i) trunk_grad[i] += delta[i];
    }

    delta = trunk_grad;
    for (int li = params.trunk_layer_count - 1; li >= 0; --li) {
        back_layer(li, 0, delta, delta_prev);
        delta.swap(delta_prev);
    }
}

AdamState AdamState::for_params(const NetworkParams& params, double lr) {
    AdamState s;
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
    s.lr = lr;
    return s;
}

void adam_step(NetworkParams& params, std::span<const double> grad, AdamState& state) {
    if (grad.size() != params.size() || state.m.size() != params.size())
        throw std::invalid_argument("adam_step: size mismatch");
    for (double g : grad)
        if (!std::isfinite(g))
            throw std::runtime_error("adam_step: non-finite gradient, update rejected");

    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params.flat[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

double clip_gradients_global(std::span<double> grad, double max_norm) {
    if (max_norm <= 0.0) throw std::invalid_argument("max_norm must be positive");
    double norm2 = 0.0;
    for (double g : grad) norm2 += g * g;
    const double norm = std::sqrt(norm2);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (double& g : grad) g *= scale;
    }
    return norm;
}

namespace io {

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_array(std::ostream& os, std::span<const double> v) {
    write_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}
std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw std::runtime_error("truncated checkpoint");
    return v;
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw std::runtime_error("truncated checkpoint");
    return v;
}
double read_f64(std::istream& is) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw std::runtime_error("truncated checkpoint");
    return v;
}
std::vector<double> read_array(std::istream& is) {
    const auto n = read_u64(is);
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("truncated checkpoint");
    return v;
}

void write_spec(std::ostream& os, const NetworkSpec& spec) {
    write_u32(os, static_cast<std::uint32_t>(spec.input_dim));
    write_u32(os, static_cast<std::uint32_t>(spec.trunk.size()));
    for (const auto& l : spec.trunk) {
        write_u32(os, static_cast<std::uint32_t>(l.width));
        write_u32(os, static_cast<std::uint32_t>(l.act));
    }
    write_u32(os, static_cast<std::uint32_t>(spec.branches.size()));
    for (const auto& b : spec.branches) {
        write_u32(os, static_cast<std::uint32_t>(b.hidden.size()));
        for (const auto& l : b.hidden) {
            write_u32(os, static_cast<std::uint32_t>(l.width));
            write_u32(os, static_cast<std::uint32_t>(l.act));
        }
        write_u32(os, static_cast<std::uint32_t>(b.head_width));
        write_u32(os, static_cast<std::uint32_t>(b.head_act));
        write_f64(os, b.head_gain);
    }
}

NetworkSpec read_spec(std::istream& is) {
    NetworkSpec spec;
    spec.input_dim = static_cast<int>(read_u32(is));
    spec.trunk.resize(read_u32(is));
    for (auto& l : spec.trunk) {
        l.width = static_cast<int>(read_u32(is));
        l.act = static_cast<Activation>(read_u32(is));
    }
    spec.branches.resize(read_u32(is));
    for (auto& b : spec.branches) {
        b.hidden.resize(read_u32(is));
        for (auto& l : b.hidden) {
            l.width = static_cast<int>(read_u32(is));
            l.act = static_cast<Activation>(read_u32(is));
        }
        b.head_width = static_cast<int>(read_u32(is));
        b.head_act = static_cast<Activation>(read_u32(is));
        b.head_gain = read_f64(is);
    }
    spec.validate();
    return spec;
}

}  // namespace io

}  // namespace ppofilm::neural
