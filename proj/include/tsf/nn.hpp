#ifndef TSF_NN_HPP
#define TSF_NN_HPP

#include "tsf/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace tsf {

/// Named parameter collection; iteration order is the registration order and
/// is part of the determinism contract (optimizer state and checkpoints index
/// into it).
using NamedParams = std::vector<std::pair<std::string, Param>>;

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from a seeded generator.
Tensor init_uniform_fanin(Shape shape, int fan_in, Rng& rng);

/// y = x W^T + b for rank-2 x [N x in]; weight [out x in], bias [out].
struct Linear {
    Param weight;
    Param bias;

    Linear() = default;
    Linear(int in, int out, Rng& rng);
    static Linear zeros(int in, int out);

    int in_features() const { return weight->shape()[1]; }
    int out_features() const { return weight->shape()[0]; }
    Var apply(Tape& t, Var x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps);

/// Per-last-axis standardization with learnable affine; gamma/beta are [d].
struct LayerNorm {
    Param gamma;
    Param beta;
    double eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(int d);

    Var apply(Tape& t, Var x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

/// Cross-correlation (no kernel flip) over [B x C x L] with zero padding.
struct Conv1d {
    Param kernels; // [out x in x k]
    Param bias;    // [out]
    int stride = 1;
    int padding = 0;

    Conv1d() = default;
    Conv1d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng);

    Var apply(Tape& t, Var x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

/// Standard gated cell: f,i,o = sigmoid(affine), g = tanh(affine),
/// c' = f.c + i.g, h' = o.tanh(c'). Gate order in the packed matrices is
/// i, f, g, o.
struct LstmCell {
    Param w_ih; // [4U x in]
    Param w_hh; // [4U x U]
    Param bias; // [4U]
    int units = 0;

    LstmCell() = default;
    LstmCell(int input_dim, int units, Rng& rng);

    // x_t [1 x in], h/c [1 x U] -> (h', c')
    std::pair<Var, Var> step(Tape& t, Var x_t, Var h, Var c) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

enum class Activation { relu, gelu };

struct FeedForward {
    Linear fc1;
    Linear fc2;
    Activation act = Activation::gelu;

    FeedForward() = default;
    FeedForward(int d_model, int d_ff, Activation act, Rng& rng);

    Var apply(Tape& t, Var x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

/// Sinusoidal encoding, [L x d_model], d_model even; deterministic, values in [-1,1].
Tensor positional_encoding(int length, int d_model);

/**
 * Bias-corrected ADAM over a named parameter collection.
 */
struct AdamState {
    int step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 1e-3;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    AdamState() = default;
    AdamState(double lr, const NamedParams& params);
};

/// One update step; reads each parameter's accumulated grad and leaves it
/// untouched (callers zero grads between steps). Throws NumericError naming
/// the parameter on a non-finite gradient.
void adam_step(NamedParams& params, AdamState& state);

void zero_grads(NamedParams& params);

std::int64_t parameter_count(const NamedParams& params);

} // namespace tsf

#endif // TSF_NN_HPP
