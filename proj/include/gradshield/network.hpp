#pragma once

#include <functional>
#include <string>

#include "gradshield/interval.hpp"
#include "gradshield/tape.hpp"
#include "gradshield/tensor.hpp"

namespace gradshield {

// Scalar reduction of the logits whose input gradient is regularized.
// SumLogSoftmax is the default convention; TrueClassLogit keeps the scalar
// compatible with monotone interval propagation and is required on the
// certified path.
enum class OutputMode { SumLogSoftmax, TrueClassLogit };

std::string to_string(OutputMode m);
std::string to_string(Activation a);
OutputMode output_mode_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

struct Layer {
    Tensor weight;  // (out × in)
    Tensor bias;    // (out)
};

// Dense MLP: zhat_k = W_k z_{k-1} + b_k, z_k = σ(zhat_k); activation between
// layers but not after the last; logits are zhat_K.
struct Network {
    std::vector<Layer> layers;
    Activation activation = Activation::ReLU;
    OutputMode output_mode = OutputMode::SumLogSoftmax;
    std::uint64_t init_seed = 0;

    std::size_t depth() const { return layers.size(); }
    std::size_t input_width() const;
    std::size_t output_width() const;
    std::size_t parameter_count() const;
    void validate() const;

    // Seeded init: weights and biases uniform in ±1/√fan_in.
    static Network make_mlp(const std::vector<std::size_t>& widths, Activation act,
                            OutputMode mode, std::uint64_t seed);
};

struct ForwardCache {
    std::vector<Tensor> zhat;  // pre-activations per layer
    std::vector<Tensor> z;     // post-activations per layer (z.back() == logits)
    const Tensor& output() const { return zhat.back(); }
};

ForwardCache forward(const Network& net, const Tensor& x);

double scalar_output_value(const Network& net, const Tensor& x, std::size_t label);

// d0 = ∇_x of the scalar output, by the explicit backward recursion
// d_{k-1} = W_kᵀ d_k ⊙ σ′(zhat_{k-1}).
Tensor input_gradient(const Network& net, const Tensor& x, std::size_t label);

// Checkpoint: directory with a JSON manifest plus one raw little-endian
// float64 array file per tensor.
void save_checkpoint(const Network& net, const std::string& dir);
Network load_checkpoint(const std::string& dir);

void write_f64_array(const std::string& path, const Tensor& t);
Tensor read_f64_array(const std::string& path, const std::vector<std::size_t>& shape);

// ---- Tape bindings -------------------------------------------------------

// Network parameters registered as leaves on a tape. All objective losses
// are built through this so that one reverse pass yields ∂loss/∂θ, including
// for losses containing input-gradient terms.
struct TapeNet {
    Tape* tape = nullptr;
    const Network* net = nullptr;
    std::vector<Var> weight;
    std::vector<Var> bias;
    // Optional |W| values computed once per batch (θ is fixed within one);
    // interval passes use them instead of re-taking abs per example.
    const std::vector<Tensor>* abs_weight_cache = nullptr;
};

TapeNet bind_network(Tape& tape, const Network& net, bool params_require_grad = true);

struct TapeForward {
    std::vector<Var> zhat;
    Var logits;
};

TapeForward tape_forward(const TapeNet& tn, Var x);
Var tape_scalar_output(const TapeNet& tn, const TapeForward& fwd, std::size_t label);

// Records the backward recursion as forward nodes and returns d0, itself
// differentiable with respect to the parameters.
Var tape_input_gradient(const TapeNet& tn, const TapeForward& fwd, std::size_t label);

struct ParamGrads {
    std::vector<Tensor> weight;
    std::vector<Tensor> bias;

    static ParamGrads zeros_like(const Network& net);
    void axpy(double a, const ParamGrads& other);
    double sq_norm() const;
};

// Runs the reverse pass for `loss` and collects ∂loss/∂θ per layer.
ParamGrads parameter_gradients(const TapeNet& tn, Var loss);

// ---- Finite differences --------------------------------------------------

struct DiffProblem {
    std::function<double(const Network&)> value;
    std::function<ParamGrads(const Network&)> gradient;
};

struct FdReport {
    double max_rel_err = 0.0;
    std::size_t worst_layer = 0;
    bool worst_is_bias = false;
    std::size_t worst_index = 0;
    bool pass = false;
};

// Central differences with step ±h on every parameter; relative error uses
// max(|analytic|, |numeric|, 1e-6) as denominator.
FdReport finite_difference_check(const DiffProblem& problem, const Network& net, double tolerance,
                                 double h = 1e-5);

}  // namespace gradshield
