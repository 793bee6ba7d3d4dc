#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "ppofilm/rng.hpp"

namespace ppofilm::neural {

enum class Activation : std::uint8_t { Relu, Tanh, Sigmoid, Linear };

struct LayerSpec {
    int width = 0;
    Activation act = Activation::Relu;
};

// One branch: optional hidden layers followed by a head layer. head_gain
// scales the orthogonal initialization of the head weights.
struct BranchSpec {
    std::vector<LayerSpec> hidden;
    int head_width = 0;
    Activation head_act = Activation::Linear;
    double head_gain = 1.0;
};

// Dense trunk-and-branches network. The trunk may be empty (branches then
// read the input directly); a plain feedforward net is a single branch.
struct NetworkSpec {
    int input_dim = 0;
    std::vector<LayerSpec> trunk;
    std::vector<BranchSpec> branches;

    void validate() const;
    bool operator==(const NetworkSpec&) const = default;

    // Actor of the default agent: trunk [64 relu], one 64-relu branch with a
    // tanh head (mean, near-zero init) and one with a sigmoid head (std).
    static NetworkSpec actor(int obs_dim, int action_dim);
    // Critic: [64, 64] relu with a scalar linear head.
    static NetworkSpec critic(int obs_dim);
};

// Parameters stored as one flat array (weights row-major, then biases, per
// layer; trunk layers first, then each branch in order).
struct NetworkParams {
    struct LayerRef {
        int in = 0, out = 0;
        std::size_t w = 0, b = 0;  // offsets into flat
        Activation act = Activation::Linear;
        double init_gain = 1.0;
    };

    NetworkSpec spec;
    std::vector<LayerRef> layers;
    std::vector<std::pair<int, int>> branch_layers;  // [begin, end) per branch
    int trunk_layer_count = 0;
    std::vector<double> flat;

    static NetworkParams zeros(const NetworkSpec& spec);
    std::size_t size() const { return flat.size(); }
};

// Orthogonal initialization (Householder QR of a Gaussian draw): rows are
// orthonormal when out <= in, columns otherwise, scaled by the layer's
// init gain. Biases are zero.
NetworkParams orthogonal_init(const NetworkSpec& spec, Rng& rng);

// Post-activation outputs of every layer, in layer order. Kept alive
// between forward and backward; reusable across calls.
struct ForwardTape {
    std::vector<double> input;
    std::vector<std::vector<double>> y;
};

// Evaluates the network; head outputs are readable through head_output().
void forward(const NetworkParams& params, std::span<const double> input,
             ForwardTape& tape);

std::span<const double> head_output(const NetworkParams& params,
                                    const ForwardTape& tape, int branch);

// Reverse-mode gradients of a scalar loss whose per-head output gradients
// are supplied. Accumulates (adds) into grad, which must have params.size()
// entries. The tape must come from a forward call on the same params.
void backward(const NetworkParams& params, const ForwardTape& tape,
              const std::vector<std::vector<double>>& head_gradients,
              std::span<double> grad);

struct AdamState {
    std::vector<double> m, v;
    long t = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_params(const NetworkParams& params, double lr);
};

// Standard Adam with bias correction; rejects non-finite gradients without
// touching the state.
void adam_step(NetworkParams& params, std::span<const double> grad, AdamState& state);

// Scales grad by max_norm/N when its global L2 norm N exceeds max_norm.
// Returns the norm before clipping.
double clip_gradients_global(std::span<double> grad, double max_norm);

// Binary little-endian primitives shared by the checkpoint format.
namespace io {
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_array(std::ostream& os, std::span<const double> v);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::vector<double> read_array(std::istream& is);
void write_spec(std::ostream& os, const NetworkSpec& spec);
NetworkSpec read_spec(std::istream& is);
}  // namespace io

}  // namespace ppofilm::neural
