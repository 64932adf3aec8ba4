#include "tsf/nn.hpp"

#include <cmath>

namespace tsf {

Tensor init_uniform_fanin(Shape shape, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(int in, int out, Rng& rng) {
    weight = make_param(init_uniform_fanin({out, in}, in, rng));
    bias = make_param(init_uniform_fanin({out}, in, rng));
    weight->set_requires_grad(true);
    bias->set_requires_grad(true);
}

Linear Linear::zeros(int in, int out) {
    Linear l;
    l.weight = make_param(Tensor::zeros({out, in}));
    l.bias = make_param(Tensor::zeros({out}));
    l.weight->set_requires_grad(true);
    l.bias->set_requires_grad(true);
    return l;
}

Var Linear::apply(Tape& t, Var x) const {
    if (t.shape(x).size() != 2 || t.shape(x)[1] != weight->shape()[1]) {
        throw ShapeError("Linear: input " + shape_str(t.shape(x)) + " does not match weight " +
                         shape_str(weight->shape()));
    }
    Var w = t.leaf(weight);
    Var b = t.leaf(bias);
    Var y = t.matmul(x, t.transpose(w));
    return t.add(y, t.reshape(b, {1, weight->shape()[0]}));
}

void Linear::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
    const Shape& xs = t.shape(x);
    if (xs.size() != 2) throw ShapeError("layer_norm: expected rank-2 input, got " + shape_str(xs));
    const int d = xs[1];
    if (shape_numel(t.shape(gamma)) != d || shape_numel(t.shape(beta)) != d) {
        throw ShapeError("layer_norm: gamma/beta do not match last dimension " + std::to_string(d));
    }
    Var mean = t.reduce_mean(x, 1);
    Var centered = t.sub(x, mean);
    Var var = t.reduce_mean(t.mul(centered, centered), 1);
    Var denom = t.sqrt(t.add_scalar(var, eps));
    Var norm = t.div(centered, denom);
    Var g = t.reshape(gamma, {1, d});
    Var b = t.reshape(beta, {1, d});
    return t.add(t.mul(norm, g), b);
}

LayerNorm::LayerNorm(int d) {
    gamma = make_param(Tensor::ones({d}));
    beta = make_param(Tensor::zeros({d}));
    gamma->set_requires_grad(true);
    beta->set_requires_grad(true);
}

Var LayerNorm::apply(Tape& t, Var x) const {
    return layer_norm(t, x, t.leaf(gamma), t.leaf(beta), eps);
}

void LayerNorm::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

// ---------------------------------------------------------------------------
// Conv1d
// ---------------------------------------------------------------------------

Conv1d::Conv1d(int in_channels, int out_channels, int kernel, int stride_, int padding_, Rng& rng)
    : stride(stride_), padding(padding_) {
    const int fan_in = in_channels * kernel;
    kernels = make_param(init_uniform_fanin({out_channels, in_channels, kernel}, fan_in, rng));
    bias = make_param(init_uniform_fanin({out_channels}, fan_in, rng));
    kernels->set_requires_grad(true);
    bias->set_requires_grad(true);
}

Var Conv1d::apply(Tape& t, Var x) const {
    Var k = t.leaf(kernels);
    Var y = t.conv1d(x, k, stride, padding);
    Var b = t.reshape(t.leaf(bias), {1, kernels->shape()[0], 1});
    return t.add(y, b);
}

void Conv1d::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".kernels", kernels);
    out.emplace_back(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------
// LstmCell
// ---------------------------------------------------------------------------

LstmCell::LstmCell(int input_dim, int units_, Rng& rng) : units(units_) {
    w_ih = make_param(init_uniform_fanin({4 * units, input_dim}, input_dim, rng));
    w_hh = make_param(init_uniform_fanin({4 * units, units}, units, rng));
    bias = make_param(init_uniform_fanin({4 * units}, units, rng));
    w_ih->set_requires_grad(true);
    w_hh->set_requires_grad(true);
    bias->set_requires_grad(true);
}

std::pair<Var, Var> LstmCell::step(Tape& t, Var x_t, Var h, Var c) const {
    if (t.shape(x_t).size() != 2 || t.shape(x_t)[1] != w_ih->shape()[1]) {
        throw ShapeError("LstmCell: input " + shape_str(t.shape(x_t)) + " does not match w_ih " +
                         shape_str(w_ih->shape()));
    }
    if (t.shape(h) != Shape{1, units} || t.shape(c) != Shape{1, units}) {
        throw ShapeError("LstmCell: state shape mismatch");
    }
    Var pre = t.add(t.add(t.matmul(x_t, t.transpose(t.leaf(w_ih))),
                          t.matmul(h, t.transpose(t.leaf(w_hh)))),
                    t.reshape(t.leaf(bias), {1, 4 * units}));
    Var ig = t.sigmoid(t.slice_cols(pre, 0, units));
    Var fg = t.sigmoid(t.slice_cols(pre, units, units));
    Var gg = t.tanh(t.slice_cols(pre, 2 * units, units));
    Var og = t.sigmoid(t.slice_cols(pre, 3 * units, units));
    Var c_next = t.add(t.mul(fg, c), t.mul(ig, gg));
    Var h_next = t.mul(og, t.tanh(c_next));
    return {h_next, c_next};
}

void LstmCell::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".w_ih", w_ih);
    out.emplace_back(prefix + ".w_hh", w_hh);
    out.emplace_back(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------
// FeedForward
// ---------------------------------------------------------------------------

FeedForward::FeedForward(int d_model, int d_ff, Activation act_, Rng& rng)
    : fc1(d_model, d_ff, rng), fc2(d_ff, d_model, rng), act(act_) {}

Var FeedForward::apply(Tape& t, Var x) const {
    Var h = fc1.apply(t, x);
    h = act == Activation::relu ? t.relu(h) : t.gelu(h);
    return fc2.apply(t, h);
}

void FeedForward::collect(const std::string& prefix, NamedParams& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

// ---------------------------------------------------------------------------
// Positional encoding
// ---------------------------------------------------------------------------

Tensor positional_encoding(int length, int d_model) {
    if (d_model % 2 != 0) throw ShapeError("positional_encoding: d_model must be even");
    if (length < 1) throw ShapeError("positional_encoding: length must be positive");
    Tensor pe({length, d_model});
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; i < d_model / 2; ++i) {
            const double rate = std::pow(10000.0, 2.0 * i / static_cast<double>(d_model));
            const double angle = static_cast<double>(pos) / rate;
            pe.data()[static_cast<std::size_t>(pos) * d_model + 2 * i] = std::sin(angle);
            pe.data()[static_cast<std::size_t>(pos) * d_model + 2 * i + 1] = std::cos(angle);
        }
    }
    return pe;
}

// ---------------------------------------------------------------------------
// ADAM
// ---------------------------------------------------------------------------

AdamState::AdamState(double lr, const NamedParams& params) : learning_rate(lr) {
    first_moment.reserve(params.size());
    second_moment.reserve(params.size());
    for (const auto& [name, p] : params) {
        (void)name;
        first_moment.emplace_back(p->data().size(), 0.0);
        second_moment.emplace_back(p->data().size(), 0.0);
    }
}

void adam_step(NamedParams& params, AdamState& state) {
    if (state.first_moment.size() != params.size()) {
        throw ShapeError("adam_step: state does not match parameter collection");
    }
    state.step_count += 1;
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double bc1 = 1.0 - std::pow(b1, state.step_count);
    const double bc2 = 1.0 - std::pow(b2, state.step_count);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& [name, p] = params[pi];
        auto& m = state.first_moment[pi];
        auto& v = state.second_moment[pi];
        if (m.size() != p->data().size()) {
            throw ShapeError("adam_step: moment shape mismatch for " + name);
        }
        const auto& g = p->grad(); // allocates zeros when no grad was accumulated
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw NumericError("adam_step: non-finite gradient in parameter " + name);
            }
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p->data()[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

void zero_grads(NamedParams& params) {
    for (auto& [name, p] : params) {
        (void)name;
        p->zero_grad();
    }
}

std::int64_t parameter_count(const NamedParams& params) {
    std::int64_t n = 0;
    for (const auto& [name, p] : params) {
        (void)name;
        n += p->size();
    }
    return n;
}

} // namespace tsf
