#ifndef TSF_TENSOR_HPP
#define TSF_TENSOR_HPP

#include "tsf/common.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace tsf {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/**
 * Dense n-dimensional array of 64-bit reals, row-major.
 *
 * Tensors are immutable after construction except for gradient accumulation;
 * the tape writes into grad() during backward().
 */
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double v);
    // Uniform in [lo, hi) from a caller-owned generator.
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    int dim(int axis) const;

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }
    double& at(const std::vector<int>& idx);
    double at(const std::vector<int>& idx) const;

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool v) {
        requires_grad_ = v;
        return *this;
    }

    bool has_grad() const { return !grad_.empty(); }
    // Same-shape gradient buffer, zero-initialized on first access.
    std::vector<double>& grad();
    const std::vector<double>& grad() const { return grad_; }
    void zero_grad();

    bool all_finite() const;

private:
    Shape shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
    bool requires_grad_ = false;
};

using Param = std::shared_ptr<Tensor>;

Param make_param(Tensor t);

class Tape;

/// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

enum class OpKind : std::uint8_t {
    leaf,
    constant,
    add,
    sub,
    mul,
    div,
    neg,
    exp,
    log,
    sqrt,
    scale,
    add_scalar,
    relu,
    gelu,
    sigmoid,
    tanh,
    matmul,
    transpose,
    reshape,
    slice_rows,
    slice_cols,
    concat_rows,
    concat_cols,
    pick_rows,
    scatter_rows,
    roll_rows,
    cumsum_rows,
    softmax,
    reduce_sum,
    reduce_mean,
    reduce_max,
    conv1d,
    custom,
};

/// Extension point for operations with hand-written forward/backward
/// (the reversible stack uses this).
class CustomOp {
public:
    virtual ~CustomOp() = default;
    virtual Shape output_shape(const Tape& tape, const std::vector<int>& inputs) const = 0;
    // Fill `out` (already sized) from the current values of `inputs`.
    virtual void forward(Tape& tape, const std::vector<int>& inputs,
                         std::vector<double>& out) = 0;
    // Propagate `out_grad` into the inputs (and any extra leaves the op owns)
    // via Tape::accumulate_grad.
    virtual void backward(Tape& tape, const std::vector<int>& inputs,
                          const std::vector<double>& out_grad) = 0;
};

/**
 * Recorded computation graph for reverse-mode differentiation.
 *
 * Nodes are appended in execution order, so the list is always topologically
 * sorted. Forward kernels are deterministic with a fixed left-to-right
 * summation order; replay() recomputes every node and reproduces the recorded
 * values bit-for-bit.
 *
 * A tape and its tensors are confined to one thread; independent tapes may
 * run concurrently.
 */
class Tape {
public:
    Tape() = default;
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- graph construction -------------------------------------------------
    Var leaf(const Param& t);
    Var constant(Tensor t);
    Var constant_scalar(double v);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var neg(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var sqrt(Var a);
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);

    Var relu(Var a);
    Var gelu(Var a);
    Var sigmoid(Var a);
    Var tanh(Var a);

    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var reshape(Var a, Shape shape);
    Var slice_rows(Var a, int start, int len);
    Var slice_cols(Var a, int start, int len);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var pick_rows(Var a, std::vector<int> idx);
    // Replace base rows at idx with the rows of `rows` (idx must be unique).
    Var scatter_rows(Var base, Var rows, std::vector<int> idx);
    // out[t] = in[(t + shift) mod L], rows of a rank-2 tensor.
    Var roll_rows(Var a, int shift);
    Var cumsum_rows(Var a);
    Var repeat_row(Var a, int times);

    Var softmax(Var a, int axis);
    Var reduce_sum(Var a, int axis);
    Var reduce_mean(Var a, int axis);
    Var reduce_max(Var a, int axis);
    Var sum_all(Var a);
    Var mean_all(Var a);

    // x: [B x C x L], kernels: [O x C x k]; cross-correlation, zero padding.
    Var conv1d(Var x, Var kernels, int stride, int padding);

    Var custom(std::shared_ptr<CustomOp> op, const std::vector<Var>& inputs);

    // --- inspection ----------------------------------------------------------
    const Shape& shape(Var v) const;
    const std::vector<double>& value(Var v) const;
    double scalar_value(Var v) const;
    // Argmax indices recorded by the most recent forward of a reduce_max node
    // (first occurrence wins on ties).
    const std::vector<int>& argmax(Var v) const;
    std::size_t node_count() const { return nodes_.size(); }
    bool all_finite(Var v) const;

    // --- autodiff ------------------------------------------------------------
    // Accumulates dLoss/dLeaf into each requires_grad leaf tensor's grad field.
    // Repeated calls accumulate unless the grads are zeroed.
    void backward(Var loss) { backward_impl(loss, true); }
    // Variant that keeps gradients on the tape without flushing them into the
    // bound tensors; read them back with grad_of().
    void backward_no_flush(Var loss) { backward_impl(loss, false); }
    const std::vector<double>& grad_of(Var v) const;

    // Used by CustomOp::backward.
    void accumulate_grad(int node_id, const std::vector<double>& g);
    const std::vector<double>& node_value(int node_id) const;

    // --- replay --------------------------------------------------------------
    // Recomputes every node from the recorded leaves/constants in order.
    void replay();

    // --- memory accounting (thread-local, for the reversible-memory test) ----
    static std::int64_t live_bytes();
    static std::int64_t peak_bytes();
    static void reset_peak();

private:
    struct Node {
        OpKind op = OpKind::leaf;
        std::vector<int> inputs;
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool wants_grad = false; // subtree contains a requires_grad leaf
        // attributes
        int axis = -1;
        int i0 = 0, i1 = 0; // slice start/len, conv stride/pad, roll shift
        double scalar = 0.0;
        std::vector<int> indices; // pick/scatter rows, argmax record
        Param bound;              // leaf only
        std::shared_ptr<CustomOp> custom;
    };

    int push_node(Node n);
    Var wrap(int id) { return Var{this, id}; }
    Node& node_at(Var v);
    const Node& node_at(Var v) const;
    void check_same_tape(Var v) const;
    void compute_forward(Node& n);
    void compute_backward(Node& n);
    void backward_impl(Var loss, bool flush);
    void track_alloc(std::int64_t bytes);

    std::vector<Node> nodes_;
    std::int64_t tracked_bytes_ = 0;
};

// Operator sugar for graph building.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator-(Var a) { return a.tape->neg(a); }

/**
 * Central-difference gradient check.
 *
 * Builds f on a fresh tape, takes the analytic gradient of its scalar output
 * with respect to every input component, and compares against
 * (f(x+eps) - f(x-eps)) / (2 eps). Returns the max over components of
 * |analytic - numeric| / max(1, |numeric|).
 */
using TensorFn = std::function<Var(Tape&, const std::vector<Var>&)>;

double grad_check(const TensorFn& f, const std::vector<Tensor>& inputs, double eps = 1e-5);

inline double grad_check1(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                          double eps = 1e-5) {
    return grad_check([&f](Tape& t, const std::vector<Var>& xs) { return f(t, xs[0]); },
                      {x}, eps);
}

} // namespace tsf

#endif // TSF_TENSOR_HPP
