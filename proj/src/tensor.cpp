#include "tsf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tsf {

namespace {

constexpr double kGeluCubic = 0.044715;
constexpr double kGeluScale = 0.7978845608028653558798921198687; // sqrt(2/pi)

thread_local std::int64_t g_live_bytes = 0;
thread_local std::int64_t g_peak_bytes = 0;

std::vector<std::int64_t> strides_of(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
        st[static_cast<std::size_t>(i)] =
            st[static_cast<std::size_t>(i) + 1] * s[static_cast<std::size_t>(i) + 1];
    }
    return st;
}

} // namespace

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int d : shape_) {
        if (d <= 0) throw ShapeError("Tensor: dimensions must be positive, got " + shape_str(shape_));
    }
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (int d : shape_) {
        if (d <= 0) throw ShapeError("Tensor: dimensions must be positive, got " + shape_str(shape_));
    }
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
        throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }
Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = rng.uniform(lo, hi);
    return t;
}

int Tensor::dim(int axis) const {
    if (axis < 0 || axis >= rank()) throw ShapeError("Tensor::dim: axis out of range");
    return shape_[static_cast<std::size_t>(axis)];
}

namespace {

std::int64_t flat_offset(const Shape& shape, const std::vector<int>& idx) {
    if (idx.size() != shape.size()) throw ShapeError("Tensor::at: rank mismatch");
    const auto st = strides_of(shape);
    std::int64_t off = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= shape[i]) throw ShapeError("Tensor::at: index out of range");
        off += idx[i] * st[i];
    }
    return off;
}

} // namespace

double& Tensor::at(const std::vector<int>& idx) {
    return data_[static_cast<std::size_t>(flat_offset(shape_, idx))];
}

double Tensor::at(const std::vector<int>& idx) const {
    return data_[static_cast<std::size_t>(flat_offset(shape_, idx))];
}

std::vector<double>& Tensor::grad() {
    if (grad_.empty()) grad_.assign(data_.size(), 0.0);
    return grad_;
}

void Tensor::zero_grad() {
    if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Param make_param(Tensor t) { return std::make_shared<Tensor>(std::move(t)); }

// ---------------------------------------------------------------------------
// Tape: construction helpers
// ---------------------------------------------------------------------------

Tape::~Tape() {
    g_live_bytes -= tracked_bytes_;
}

void Tape::track_alloc(std::int64_t bytes) {
    tracked_bytes_ += bytes;
    g_live_bytes += bytes;
    g_peak_bytes = std::max(g_peak_bytes, g_live_bytes);
}

std::int64_t Tape::live_bytes() { return g_live_bytes; }
std::int64_t Tape::peak_bytes() { return g_peak_bytes; }
void Tape::reset_peak() { g_peak_bytes = g_live_bytes; }

int Tape::push_node(Node n) {
    track_alloc(static_cast<std::int64_t>(n.value.size() * sizeof(double)));
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tape::Node& Tape::node_at(Var v) {
    check_same_tape(v);
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node_at(Var v) const {
    check_same_tape(v);
    return nodes_[static_cast<std::size_t>(v.id)];
}

void Tape::check_same_tape(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
        throw NumericError("Var does not belong to this tape");
    }
}

Var Tape::leaf(const Param& t) {
    if (!t) throw NumericError("leaf: null tensor");
    Node n;
    n.op = OpKind::leaf;
    n.shape = t->shape();
    n.value = t->data();
    n.bound = t;
    n.wants_grad = t->requires_grad();
    return wrap(push_node(std::move(n)));
}

Var Tape::constant(Tensor t) {
    Node n;
    n.op = OpKind::constant;
    n.shape = t.shape();
    n.value = std::move(t.data());
    n.wants_grad = false;
    return wrap(push_node(std::move(n)));
}

Var Tape::constant_scalar(double v) { return constant(Tensor::scalar(v)); }

const Shape& Tape::shape(Var v) const { return node_at(v).shape; }
const std::vector<double>& Tape::value(Var v) const { return node_at(v).value; }

double Tape::scalar_value(Var v) const {
    const Node& n = node_at(v);
    if (n.value.size() != 1) throw ShapeError("scalar_value: node is not scalar");
    return n.value[0];
}

const std::vector<int>& Tape::argmax(Var v) const {
    const Node& n = node_at(v);
    if (n.op != OpKind::reduce_max) throw NumericError("argmax: node is not a reduce_max");
    return n.indices;
}

bool Tape::all_finite(Var v) const {
    for (double x : node_at(v).value) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

const std::vector<double>& Tape::grad_of(Var v) const {
    static const std::vector<double> kEmpty;
    const Node& n = node_at(v);
    return n.grad.empty() ? kEmpty : n.grad;
}

void Tape::accumulate_grad(int node_id, const std::vector<double>& g) {
    Node& n = nodes_[static_cast<std::size_t>(node_id)];
    if (g.size() != n.value.size()) throw ShapeError("accumulate_grad: size mismatch");
    if (n.grad.empty()) {
        n.grad.assign(n.value.size(), 0.0);
        track_alloc(static_cast<std::int64_t>(n.grad.size() * sizeof(double)));
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

const std::vector<double>& Tape::node_value(int node_id) const {
    return nodes_[static_cast<std::size_t>(node_id)].value;
}

// ---------------------------------------------------------------------------
// Op builders
// ---------------------------------------------------------------------------

namespace {

bool broadcast_ok(const Shape& a, const Shape& b, Shape& out) {
    if (a.size() != b.size()) return false;
    out.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) {
            out[i] = a[i];
        } else if (a[i] == 1) {
            out[i] = b[i];
        } else if (b[i] == 1) {
            out[i] = a[i];
        } else {
            return false;
        }
    }
    return true;
}

} // namespace

Var Tape::add(Var a, Var b) {
    const Node& na = node_at(a);
    const Node& nb = node_at(b);
    Node n;
    if (!broadcast_ok(na.shape, nb.shape, n.shape)) {
        throw ShapeError("add: incompatible shapes " + shape_str(na.shape) + " and " + shape_str(nb.shape));
    }
    n.op = OpKind::add;
    n.inputs = {a.id, b.id};
    n.wants_grad = na.wants_grad || nb.wants_grad;
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::sub(Var a, Var b) {
    const Node& na = node_at(a);
    const Node& nb = node_at(b);
    Node n;
    if (!broadcast_ok(na.shape, nb.shape, n.shape)) {
        throw ShapeError("sub: incompatible shapes " + shape_str(na.shape) + " and " + shape_str(nb.shape));
    }
    n.op = OpKind::sub;
    n.inputs = {a.id, b.id};
    n.wants_grad = na.wants_grad || nb.wants_grad;
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::mul(Var a, Var b) {
    const Node& na = node_at(a);
    const Node& nb = node_at(b);
    Node n;
    if (!broadcast_ok(na.shape, nb.shape, n.shape)) {
        throw ShapeError("mul: incompatible shapes " + shape_str(na.shape) + " and " + shape_str(nb.shape));
    }
    n.op = OpKind::mul;
    n.inputs = {a.id, b.id};
    n.wants_grad = na.wants_grad || nb.wants_grad;
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::div(Var a, Var b) {
    const Node& na = node_at(a);
    const Node& nb = node_at(b);
    Node n;
    if (!broadcast_ok(na.shape, nb.shape, n.shape)) {
        throw ShapeError("div: incompatible shapes " + shape_str(na.shape) + " and " + shape_str(nb.shape));
    }
    for (double d : nb.value) {
        if (d == 0.0) throw NumericError("div: division by zero");
    }
    n.op = OpKind::div;
    n.inputs = {a.id, b.id};
    n.wants_grad = na.wants_grad || nb.wants_grad;
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::neg(Var a) {
    const Node& na = node_at(a);
    Node n;
    n.op = OpKind::neg;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::exp(Var a) {
    const Node& na = node_at(a);
    Node n;
    n.op = OpKind::exp;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    for (double v : n.value) {
        if (!std::isfinite(v)) throw NumericError("exp: overflow to non-finite value");
    }
    return wrap(push_node(std::move(n)));
}

Var Tape::log(Var a) {
    const Node& na = node_at(a);
    for (double v : na.value) {
        if (v <= 0.0) throw NumericError("log: non-positive argument");
    }
    Node n;
    n.op = OpKind::log;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::sqrt(Var a) {
    const Node& na = node_at(a);
    for (double v : na.value) {
        if (v < 0.0) throw NumericError("sqrt: negative argument");
    }
    Node n;
    n.op = OpKind::sqrt;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::scale(Var a, double c) {
    const Node& na = node_at(a);
    Node n;
    n.op = OpKind::scale;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.scalar = c;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::add_scalar(Var a, double c) {
    const Node& na = node_at(a);
    Node n;
    n.op = OpKind::add_scalar;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.scalar = c;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::relu(Var a) {
    const Node& na = node_at(a);
    Node n;
    n.op = OpKind::relu;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::gelu(Var a) {
    const Node& na = node_at(a);
    Node n;
    n.op = OpKind::gelu;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::sigmoid(Var a) {
    const Node& na = node_at(a);
    Node n;
    n.op = OpKind::sigmoid;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::tanh(Var a) {
    const Node& na = node_at(a);
    Node n;
    n.op = OpKind::tanh;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::matmul(Var a, Var b) {
    const Node& na = node_at(a);
    const Node& nb = node_at(b);
    if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(na.shape) + " and " +
                         shape_str(nb.shape));
    }
    Node n;
    n.op = OpKind::matmul;
    n.inputs = {a.id, b.id};
    n.shape = {na.shape[0], nb.shape[1]};
    n.wants_grad = na.wants_grad || nb.wants_grad;
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::transpose(Var a) {
    const Node& na = node_at(a);
    if (na.shape.size() != 2) throw ShapeError("transpose: expected rank-2, got " + shape_str(na.shape));
    Node n;
    n.op = OpKind::transpose;
    n.inputs = {a.id};
    n.shape = {na.shape[1], na.shape[0]};
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::reshape(Var a, Shape shape) {
    const Node& na = node_at(a);
    if (shape_numel(shape) != shape_numel(na.shape)) {
        throw ShapeError("reshape: cannot reshape " + shape_str(na.shape) + " to " + shape_str(shape));
    }
    Node n;
    n.op = OpKind::reshape;
    n.inputs = {a.id};
    n.shape = std::move(shape);
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::slice_rows(Var a, int start, int len) {
    const Node& na = node_at(a);
    if (na.shape.size() != 2) throw ShapeError("slice_rows: expected rank-2, got " + shape_str(na.shape));
    if (start < 0 || len <= 0 || start + len > na.shape[0]) {
        throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of " + shape_str(na.shape));
    }
    Node n;
    n.op = OpKind::slice_rows;
    n.inputs = {a.id};
    n.shape = {len, na.shape[1]};
    n.i0 = start;
    n.i1 = len;
    n.wants_grad = na.wants_grad;
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::slice_cols(Var a, int start, int len) {
    const Node& na = node_at(a);
    if (na.shape.size() != 2) throw ShapeError("slice_cols: expected rank-2, got " + shape_str(na.shape));
    if (start < 0 || len <= 0 || start + len > na.shape[1]) {
        throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of " + shape_str(na.shape));
    }
    Node n;
    n.op = OpKind::slice_cols;
    n.inputs = {a.id};
    n.shape = {na.shape[0], len};
    n.i0 = start;
    n.i1 = len;
    n.wants_grad = na.wants_grad;
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    Node n;
    n.op = OpKind::concat_rows;
    int rows = 0;
    int cols = -1;
    for (Var p : parts) {
        const Node& np = node_at(p);
        if (np.shape.size() != 2) throw ShapeError("concat_rows: expected rank-2 parts");
        if (cols < 0) cols = np.shape[1];
        if (np.shape[1] != cols) throw ShapeError("concat_rows: column mismatch");
        rows += np.shape[0];
        n.inputs.push_back(p.id);
        n.wants_grad = n.wants_grad || np.wants_grad;
    }
    n.shape = {rows, cols};
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    Node n;
    n.op = OpKind::concat_cols;
    int rows = -1;
    int cols = 0;
    for (Var p : parts) {
        const Node& np = node_at(p);
        if (np.shape.size() != 2) throw ShapeError("concat_cols: expected rank-2 parts");
        if (rows < 0) rows = np.shape[0];
        if (np.shape[0] != rows) throw ShapeError("concat_cols: row mismatch");
        cols += np.shape[1];
        n.inputs.push_back(p.id);
        n.wants_grad = n.wants_grad || np.wants_grad;
    }
    n.shape = {rows, cols};
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::pick_rows(Var a, std::vector<int> idx) {
    const Node& na = node_at(a);
    if (na.shape.size() != 2) throw ShapeError("pick_rows: expected rank-2, got " + shape_str(na.shape));
    if (idx.empty()) throw ShapeError("pick_rows: empty index list");
    for (int i : idx) {
        if (i < 0 || i >= na.shape[0]) throw ShapeError("pick_rows: index out of range");
    }
    Node n;
    n.op = OpKind::pick_rows;
    n.inputs = {a.id};
    n.shape = {static_cast<int>(idx.size()), na.shape[1]};
    n.indices = std::move(idx);
    n.wants_grad = na.wants_grad;
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::scatter_rows(Var base, Var rows, std::vector<int> idx) {
    const Node& nb = node_at(base);
    const Node& nr = node_at(rows);
    if (nb.shape.size() != 2 || nr.shape.size() != 2 || nb.shape[1] != nr.shape[1]) {
        throw ShapeError("scatter_rows: incompatible shapes " + shape_str(nb.shape) + " and " +
                         shape_str(nr.shape));
    }
    if (static_cast<int>(idx.size()) != nr.shape[0]) {
        throw ShapeError("scatter_rows: index count does not match row count");
    }
    std::vector<int> sorted = idx;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i] < 0 || sorted[i] >= nb.shape[0]) throw ShapeError("scatter_rows: index out of range");
        if (i > 0 && sorted[i] == sorted[i - 1]) throw ShapeError("scatter_rows: duplicate index");
    }
    Node n;
    n.op = OpKind::scatter_rows;
    n.inputs = {base.id, rows.id};
    n.shape = nb.shape;
    n.indices = std::move(idx);
    n.wants_grad = nb.wants_grad || nr.wants_grad;
    n.value.resize(nb.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::roll_rows(Var a, int shift) {
    const Node& na = node_at(a);
    if (na.shape.size() != 2) throw ShapeError("roll_rows: expected rank-2, got " + shape_str(na.shape));
    const int L = na.shape[0];
    Node n;
    n.op = OpKind::roll_rows;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.i0 = ((shift % L) + L) % L;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::cumsum_rows(Var a) {
    const Node& na = node_at(a);
    if (na.shape.size() != 2) throw ShapeError("cumsum_rows: expected rank-2, got " + shape_str(na.shape));
    Node n;
    n.op = OpKind::cumsum_rows;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::repeat_row(Var a, int times) {
    const Node& na = node_at(a);
    if (na.shape.size() != 2 || na.shape[0] != 1) {
        throw ShapeError("repeat_row: expected [1xd], got " + shape_str(na.shape));
    }
    return pick_rows(a, std::vector<int>(static_cast<std::size_t>(times), 0));
}

Var Tape::softmax(Var a, int axis) {
    const Node& na = node_at(a);
    if (axis < 0 || axis >= static_cast<int>(na.shape.size())) {
        throw ShapeError("softmax: axis out of range for " + shape_str(na.shape));
    }
    Node n;
    n.op = OpKind::softmax;
    n.inputs = {a.id};
    n.shape = na.shape;
    n.axis = axis;
    n.wants_grad = na.wants_grad;
    n.value.resize(na.value.size());
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

namespace {

Shape reduced_shape(const Shape& s, int axis) {
    Shape out = s;
    out[static_cast<std::size_t>(axis)] = 1;
    return out;
}

} // namespace

Var Tape::reduce_sum(Var a, int axis) {
    const Node& na = node_at(a);
    if (axis < 0 || axis >= static_cast<int>(na.shape.size())) {
        throw ShapeError("reduce_sum: axis out of range for " + shape_str(na.shape));
    }
    if (na.shape[static_cast<std::size_t>(axis)] == 0) throw ShapeError("reduce_sum: empty axis");
    Node n;
    n.op = OpKind::reduce_sum;
    n.inputs = {a.id};
    n.shape = reduced_shape(na.shape, axis);
    n.axis = axis;
    n.wants_grad = na.wants_grad;
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::reduce_mean(Var a, int axis) {
    const Node& na = node_at(a);
    if (axis < 0 || axis >= static_cast<int>(na.shape.size())) {
        throw ShapeError("reduce_mean: axis out of range for " + shape_str(na.shape));
    }
    if (na.shape[static_cast<std::size_t>(axis)] == 0) throw ShapeError("reduce_mean: empty axis");
    Node n;
    n.op = OpKind::reduce_mean;
    n.inputs = {a.id};
    n.shape = reduced_shape(na.shape, axis);
    n.axis = axis;
    n.wants_grad = na.wants_grad;
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::reduce_max(Var a, int axis) {
    const Node& na = node_at(a);
    if (axis < 0 || axis >= static_cast<int>(na.shape.size())) {
        throw ShapeError("reduce_max: axis out of range for " + shape_str(na.shape));
    }
    if (na.shape[static_cast<std::size_t>(axis)] == 0) throw ShapeError("reduce_max: empty axis");
    Node n;
    n.op = OpKind::reduce_max;
    n.inputs = {a.id};
    n.shape = reduced_shape(na.shape, axis);
    n.axis = axis;
    n.wants_grad = na.wants_grad;
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::sum_all(Var a) {
    const Node& na = node_at(a);
    Var flat = reshape(a, {static_cast<int>(na.value.size())});
    return reduce_sum(flat, 0);
}

Var Tape::mean_all(Var a) {
    const Node& na = node_at(a);
    const auto count = static_cast<double>(na.value.size());
    return scale(sum_all(a), 1.0 / count);
}

Var Tape::conv1d(Var x, Var kernels, int stride, int padding) {
    const Node& nx = node_at(x);
    const Node& nk = node_at(kernels);
    if (nx.shape.size() != 3 || nk.shape.size() != 3) {
        throw ShapeError("conv1d: expected x [BxCxL] and kernels [OxCxk], got " +
                         shape_str(nx.shape) + " and " + shape_str(nk.shape));
    }
    if (nx.shape[1] != nk.shape[1]) {
        throw ShapeError("conv1d: channel mismatch " + shape_str(nx.shape) + " vs " + shape_str(nk.shape));
    }
    if (stride < 1 || padding < 0) throw ShapeError("conv1d: invalid stride/padding");
    const int L = nx.shape[2];
    const int kw = nk.shape[2];
    if (kw > L + 2 * padding) throw ShapeError("conv1d: kernel wider than padded input");
    const int lout = (L + 2 * padding - kw) / stride + 1;
    if (lout < 1) throw ShapeError("conv1d: empty output");
    Node n;
    n.op = OpKind::conv1d;
    n.inputs = {x.id, kernels.id};
    n.shape = {nx.shape[0], nk.shape[0], lout};
    n.i0 = stride;
    n.i1 = padding;
    n.wants_grad = nx.wants_grad || nk.wants_grad;
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

Var Tape::custom(std::shared_ptr<CustomOp> op, const std::vector<Var>& inputs) {
    Node n;
    n.op = OpKind::custom;
    for (Var v : inputs) {
        const Node& ni = node_at(v);
        n.inputs.push_back(v.id);
        n.wants_grad = n.wants_grad || ni.wants_grad;
    }
    n.custom = std::move(op);
    n.shape = n.custom->output_shape(*this, n.inputs);
    n.value.resize(static_cast<std::size_t>(shape_numel(n.shape)));
    compute_forward(n);
    return wrap(push_node(std::move(n)));
}

// ---------------------------------------------------------------------------
// Forward kernels
// ---------------------------------------------------------------------------

namespace {

// Deterministic dense c += a (ta?) * b (tb?) with fixed accumulation order.
void gemm(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<std::ptrdiff_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double aip = a[static_cast<std::ptrdiff_t>(i) * k + p];
            if (aip == 0.0) continue;
            const double* brow = b + static_cast<std::ptrdiff_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    // c[m x n] += a[m x k] * b^T where b is [n x k]
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::ptrdiff_t>(i) * k;
        double* crow = c + static_cast<std::ptrdiff_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::ptrdiff_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    // c[m x n] += a^T * b where a is [k x m], b is [k x n]
    for (int p = 0; p < k; ++p) {
        const double* arow = a + static_cast<std::ptrdiff_t>(p) * m;
        const double* brow = b + static_cast<std::ptrdiff_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double aval = arow[i];
            if (aval == 0.0) continue;
            double* crow = c + static_cast<std::ptrdiff_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += aval * brow[j];
        }
    }
}

} // namespace

void Tape::compute_forward(Node& n) {
    auto in = [this](std::size_t i, const Node& node) -> const std::vector<double>& {
        return nodes_[static_cast<std::size_t>(node.inputs[i])].value;
    };
    auto in_shape = [this](std::size_t i, const Node& node) -> const Shape& {
        return nodes_[static_cast<std::size_t>(node.inputs[i])].shape;
    };

    switch (n.op) {
    case OpKind::leaf:
        n.value = n.bound->data();
        break;
    case OpKind::constant:
        break;
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
    case OpKind::div: {
        const auto& av = in(0, n);
        const auto& bv = in(1, n);
        const Shape& as = in_shape(0, n);
        const Shape& bs = in_shape(1, n);
        const std::size_t total = n.value.size();
        if (as == bs) {
            switch (n.op) {
            case OpKind::add:
                for (std::size_t i = 0; i < total; ++i) n.value[i] = av[i] + bv[i];
                break;
            case OpKind::sub:
                for (std::size_t i = 0; i < total; ++i) n.value[i] = av[i] - bv[i];
                break;
            case OpKind::mul:
                for (std::size_t i = 0; i < total; ++i) n.value[i] = av[i] * bv[i];
                break;
            default:
                for (std::size_t i = 0; i < total; ++i) n.value[i] = av[i] / bv[i];
                break;
            }
        } else {
            const auto ost = strides_of(n.shape);
            const auto ast = strides_of(as);
            const auto bst = strides_of(bs);
            const std::size_t rank = n.shape.size();
            for (std::size_t lin = 0; lin < total; ++lin) {
                std::int64_t rem = static_cast<std::int64_t>(lin);
                std::int64_t ao = 0, bo = 0;
                for (std::size_t d = 0; d < rank; ++d) {
                    const std::int64_t coord = rem / ost[d];
                    rem %= ost[d];
                    ao += (as[d] == 1 ? 0 : coord) * ast[d];
                    bo += (bs[d] == 1 ? 0 : coord) * bst[d];
                }
                const double x = av[static_cast<std::size_t>(ao)];
                const double y = bv[static_cast<std::size_t>(bo)];
                switch (n.op) {
                case OpKind::add: n.value[lin] = x + y; break;
                case OpKind::sub: n.value[lin] = x - y; break;
                case OpKind::mul: n.value[lin] = x * y; break;
                default: n.value[lin] = x / y; break;
                }
            }
        }
        break;
    }
    case OpKind::neg: {
        const auto& av = in(0, n);
        for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = -av[i];
        break;
    }
    case OpKind::exp: {
        const auto& av = in(0, n);
        for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = std::exp(av[i]);
        break;
    }
    case OpKind::log: {
        const auto& av = in(0, n);
        for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = std::log(av[i]);
        break;
    }
    case OpKind::sqrt: {
        const auto& av = in(0, n);
        for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = std::sqrt(av[i]);
        break;
    }
    case OpKind::scale: {
        const auto& av = in(0, n);
        for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = n.scalar * av[i];
        break;
    }
    case OpKind::add_scalar: {
        const auto& av = in(0, n);
        for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = av[i] + n.scalar;
        break;
    }
    case OpKind::relu: {
        const auto& av = in(0, n);
        for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = av[i] > 0.0 ? av[i] : 0.0;
        break;
    }
    case OpKind::gelu: {
        const auto& av = in(0, n);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double x = av[i];
            const double u = kGeluScale * (x + kGeluCubic * x * x * x);
            n.value[i] = 0.5 * x * (1.0 + std::tanh(u));
        }
        break;
    }
    case OpKind::sigmoid: {
        const auto& av = in(0, n);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double x = av[i];
            // branch keeps exp argument non-positive
            n.value[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                  : std::exp(x) / (1.0 + std::exp(x));
        }
        break;
    }
    case OpKind::tanh: {
        const auto& av = in(0, n);
        for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = std::tanh(av[i]);
        break;
    }
    case OpKind::matmul: {
        const auto& av = in(0, n);
        const auto& bv = in(1, n);
        const Shape& as = in_shape(0, n);
        const Shape& bs = in_shape(1, n);
        std::fill(n.value.begin(), n.value.end(), 0.0);
        gemm(av.data(), bv.data(), n.value.data(), as[0], as[1], bs[1]);
        break;
    }
    case OpKind::transpose: {
        const auto& av = in(0, n);
        const Shape& as = in_shape(0, n);
        const int r = as[0], c = as[1];
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                n.value[static_cast<std::size_t>(j) * r + i] = av[static_cast<std::size_t>(i) * c + j];
            }
        }
        break;
    }
    case OpKind::reshape: {
        n.value = in(0, n);
        break;
    }
    case OpKind::slice_rows: {
        const auto& av = in(0, n);
        const int cols = n.shape[1];
        std::memcpy(n.value.data(), av.data() + static_cast<std::ptrdiff_t>(n.i0) * cols,
                    n.value.size() * sizeof(double));
        break;
    }
    case OpKind::slice_cols: {
        const auto& av = in(0, n);
        const Shape& as = in_shape(0, n);
        const int rows = as[0], cols = as[1];
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < n.i1; ++j) {
                n.value[static_cast<std::size_t>(i) * n.i1 + j] =
                    av[static_cast<std::size_t>(i) * cols + n.i0 + j];
            }
        }
        break;
    }
    case OpKind::concat_rows: {
        std::size_t off = 0;
        for (std::size_t p = 0; p < n.inputs.size(); ++p) {
            const auto& pv = in(p, n);
            std::memcpy(n.value.data() + off, pv.data(), pv.size() * sizeof(double));
            off += pv.size();
        }
        break;
    }
    case OpKind::concat_cols: {
        const int rows = n.shape[0];
        const int out_cols = n.shape[1];
        int col_off = 0;
        for (std::size_t p = 0; p < n.inputs.size(); ++p) {
            const auto& pv = in(p, n);
            const int pc = in_shape(p, n)[1];
            for (int i = 0; i < rows; ++i) {
                std::memcpy(n.value.data() + static_cast<std::ptrdiff_t>(i) * out_cols + col_off,
                            pv.data() + static_cast<std::ptrdiff_t>(i) * pc,
                            static_cast<std::size_t>(pc) * sizeof(double));
            }
            col_off += pc;
        }
        break;
    }
    case OpKind::pick_rows: {
        const auto& av = in(0, n);
        const int cols = n.shape[1];
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
            std::memcpy(n.value.data() + r * static_cast<std::size_t>(cols),
                        av.data() + static_cast<std::ptrdiff_t>(n.indices[r]) * cols,
                        static_cast<std::size_t>(cols) * sizeof(double));
        }
        break;
    }
    case OpKind::scatter_rows: {
        const auto& base = in(0, n);
        const auto& rows = in(1, n);
        const int cols = n.shape[1];
        n.value = base;
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
            std::memcpy(n.value.data() + static_cast<std::ptrdiff_t>(n.indices[r]) * cols,
                        rows.data() + r * static_cast<std::size_t>(cols),
                        static_cast<std::size_t>(cols) * sizeof(double));
        }
        break;
    }
    case OpKind::roll_rows: {
        const auto& av = in(0, n);
        const int L = n.shape[0];
        const int cols = n.shape[1];
        for (int t = 0; t < L; ++t) {
            const int src = (t + n.i0) % L;
            std::memcpy(n.value.data() + static_cast<std::ptrdiff_t>(t) * cols,
                        av.data() + static_cast<std::ptrdiff_t>(src) * cols,
                        static_cast<std::size_t>(cols) * sizeof(double));
        }
        break;
    }
    case OpKind::cumsum_rows: {
        const auto& av = in(0, n);
        const int L = n.shape[0];
        const int cols = n.shape[1];
        for (int j = 0; j < cols; ++j) n.value[static_cast<std::size_t>(j)] = av[static_cast<std::size_t>(j)];
        for (int t = 1; t < L; ++t) {
            for (int j = 0; j < cols; ++j) {
                n.value[static_cast<std::size_t>(t) * cols + j] =
                    n.value[static_cast<std::size_t>(t - 1) * cols + j] +
                    av[static_cast<std::size_t>(t) * cols + j];
            }
        }
        break;
    }
    case OpKind::softmax: {
        const auto& av = in(0, n);
        const Shape& s = n.shape;
        const int axis = n.axis;
        const int len = s[static_cast<std::size_t>(axis)];
        std::int64_t outer = 1, inner = 1;
        for (int d = 0; d < axis; ++d) outer *= s[static_cast<std::size_t>(d)];
        for (int d = axis + 1; d < static_cast<int>(s.size()); ++d) inner *= s[static_cast<std::size_t>(d)];
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t ii = 0; ii < inner; ++ii) {
                const std::int64_t base = o * len * inner + ii;
                double mx = av[static_cast<std::size_t>(base)];
                for (int j = 1; j < len; ++j) {
                    mx = std::max(mx, av[static_cast<std::size_t>(base + j * inner)]);
                }
                double denom = 0.0;
                for (int j = 0; j < len; ++j) {
                    const double e = std::exp(av[static_cast<std::size_t>(base + j * inner)] - mx);
                    n.value[static_cast<std::size_t>(base + j * inner)] = e;
                    denom += e;
                }
                for (int j = 0; j < len; ++j) {
                    n.value[static_cast<std::size_t>(base + j * inner)] /= denom;
                }
            }
        }
        break;
    }
    case OpKind::reduce_sum:
    case OpKind::reduce_mean:
    case OpKind::reduce_max: {
        const auto& av = in(0, n);
        const Shape& as = in_shape(0, n);
        const int axis = n.axis;
        const int len = as[static_cast<std::size_t>(axis)];
        std::int64_t outer = 1, inner = 1;
        for (int d = 0; d < axis; ++d) outer *= as[static_cast<std::size_t>(d)];
        for (int d = axis + 1; d < static_cast<int>(as.size()); ++d) inner *= as[static_cast<std::size_t>(d)];
        if (n.op == OpKind::reduce_max) n.indices.assign(n.value.size(), 0);
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t ii = 0; ii < inner; ++ii) {
                const std::int64_t base = o * len * inner + ii;
                const std::int64_t out_pos = o * inner + ii;
                if (n.op == OpKind::reduce_max) {
                    double best = av[static_cast<std::size_t>(base)];
                    int best_j = 0;
                    for (int j = 1; j < len; ++j) {
                        const double v = av[static_cast<std::size_t>(base + j * inner)];
                        if (v > best) { // strict: first occurrence wins ties
                            best = v;
                            best_j = j;
                        }
                    }
                    n.value[static_cast<std::size_t>(out_pos)] = best;
                    n.indices[static_cast<std::size_t>(out_pos)] = best_j;
                } else {
                    double acc = 0.0;
                    for (int j = 0; j < len; ++j) acc += av[static_cast<std::size_t>(base + j * inner)];
                    if (n.op == OpKind::reduce_mean) acc /= static_cast<double>(len);
                    n.value[static_cast<std::size_t>(out_pos)] = acc;
                }
            }
        }
        break;
    }
    case OpKind::conv1d: {
        const auto& xv = in(0, n);
        const auto& kv = in(1, n);
        const Shape& xs = in_shape(0, n);
        const Shape& ks = in_shape(1, n);
        const int B = xs[0], C = xs[1], L = xs[2];
        const int O = ks[0], kw = ks[2];
        const int lout = n.shape[2];
        const int stride = n.i0, pad = n.i1;
        for (int b = 0; b < B; ++b) {
            for (int o = 0; o < O; ++o) {
                for (int t = 0; t < lout; ++t) {
                    double acc = 0.0;
                    for (int c = 0; c < C; ++c) {
                        const double* xrow = xv.data() + (static_cast<std::ptrdiff_t>(b) * C + c) * L;
                        const double* krow = kv.data() + (static_cast<std::ptrdiff_t>(o) * C + c) * kw;
                        for (int u = 0; u < kw; ++u) {
                            const int pos = t * stride - pad + u;
                            if (pos >= 0 && pos < L) acc += xrow[pos] * krow[u];
                        }
                    }
                    n.value[(static_cast<std::size_t>(b) * O + o) * lout + t] = acc;
                }
            }
        }
        break;
    }
    case OpKind::custom:
        n.custom->forward(*this, n.inputs, n.value);
        break;
    }
}

// ---------------------------------------------------------------------------
// Backward kernels
// ---------------------------------------------------------------------------

void Tape::compute_backward(Node& n) {
    auto wants = [this](int id) { return nodes_[static_cast<std::size_t>(id)].wants_grad; };
    auto gbuf = [this](int id) -> std::vector<double>& {
        Node& t = nodes_[static_cast<std::size_t>(id)];
        if (t.grad.empty()) {
            t.grad.assign(t.value.size(), 0.0);
            track_alloc(static_cast<std::int64_t>(t.grad.size() * sizeof(double)));
        }
        return t.grad;
    };
    auto val = [this](int id) -> const std::vector<double>& {
        return nodes_[static_cast<std::size_t>(id)].value;
    };
    auto shp = [this](int id) -> const Shape& { return nodes_[static_cast<std::size_t>(id)].shape; };

    const std::vector<double>& g = n.grad;

    switch (n.op) {
    case OpKind::leaf:
    case OpKind::constant:
        break;
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
    case OpKind::div: {
        const int ia = n.inputs[0];
        const int ib = n.inputs[1];
        const Shape& as = shp(ia);
        const Shape& bs = shp(ib);
        const auto& av = val(ia);
        const auto& bv = val(ib);
        const bool wa = wants(ia);
        const bool wb = wants(ib);
        std::vector<double>* da = wa ? &gbuf(ia) : nullptr;
        std::vector<double>* db = wb ? &gbuf(ib) : nullptr;
        const std::size_t total = g.size();
        const auto ost = strides_of(n.shape);
        const auto ast = strides_of(as);
        const auto bst = strides_of(bs);
        const std::size_t rank = n.shape.size();
        const bool same = (as == bs);
        for (std::size_t lin = 0; lin < total; ++lin) {
            std::size_t ao = lin, bo = lin;
            if (!same) {
                std::int64_t rem = static_cast<std::int64_t>(lin);
                std::int64_t aoff = 0, boff = 0;
                for (std::size_t d = 0; d < rank; ++d) {
                    const std::int64_t coord = rem / ost[d];
                    rem %= ost[d];
                    aoff += (as[d] == 1 ? 0 : coord) * ast[d];
                    boff += (bs[d] == 1 ? 0 : coord) * bst[d];
                }
                ao = static_cast<std::size_t>(aoff);
                bo = static_cast<std::size_t>(boff);
            }
            const double gv = g[lin];
            switch (n.op) {
            case OpKind::add:
                if (da) (*da)[ao] += gv;
                if (db) (*db)[bo] += gv;
                break;
            case OpKind::sub:
                if (da) (*da)[ao] += gv;
                if (db) (*db)[bo] -= gv;
                break;
            case OpKind::mul:
                if (da) (*da)[ao] += gv * bv[bo];
                if (db) (*db)[bo] += gv * av[ao];
                break;
            default: { // div
                const double bvv = bv[bo];
                if (da) (*da)[ao] += gv / bvv;
                if (db) (*db)[bo] -= gv * av[ao] / (bvv * bvv);
                break;
            }
            }
        }
        break;
    }
    case OpKind::neg: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] -= g[i];
        break;
    }
    case OpKind::exp: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * n.value[i];
        break;
    }
    case OpKind::log: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        const auto& av = val(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / av[i];
        break;
    }
    case OpKind::sqrt: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * 0.5 / n.value[i];
        break;
    }
    case OpKind::scale: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += n.scalar * g[i];
        break;
    }
    case OpKind::add_scalar: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        break;
    }
    case OpKind::relu: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        const auto& av = val(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (av[i] > 0.0) da[i] += g[i]; // relu'(0) = 0
        }
        break;
    }
    case OpKind::gelu: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        const auto& av = val(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = av[i];
            const double u = kGeluScale * (x + kGeluCubic * x * x * x);
            const double t = std::tanh(u);
            const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
            da[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
        }
        break;
    }
    case OpKind::sigmoid: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = n.value[i];
            da[i] += g[i] * y * (1.0 - y);
        }
        break;
    }
    case OpKind::tanh: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = n.value[i];
            da[i] += g[i] * (1.0 - y * y);
        }
        break;
    }
    case OpKind::matmul: {
        const int ia = n.inputs[0];
        const int ib = n.inputs[1];
        const Shape& as = shp(ia);
        const Shape& bs = shp(ib);
        const int m = as[0], k = as[1], nn = bs[1];
        if (wants(ia)) {
            // dA = G * B^T
            gemm_nt(g.data(), val(ib).data(), gbuf(ia).data(), m, nn, k);
        }
        if (wants(ib)) {
            // dB[k x n] = A^T * G with A viewed as [m x k]
            gemm_tn(val(ia).data(), g.data(), gbuf(ib).data(), k, m, nn);
        }
        break;
    }
    case OpKind::transpose: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        const int r = n.shape[0], c = n.shape[1]; // output dims
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                da[static_cast<std::size_t>(j) * r + i] += g[static_cast<std::size_t>(i) * c + j];
            }
        }
        break;
    }
    case OpKind::reshape: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        break;
    }
    case OpKind::slice_rows: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        const int cols = n.shape[1];
        for (std::size_t i = 0; i < g.size(); ++i) {
            da[static_cast<std::size_t>(n.i0) * cols + i] += g[i];
        }
        break;
    }
    case OpKind::slice_cols: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        const Shape& as = shp(n.inputs[0]);
        const int rows = as[0], cols = as[1];
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < n.i1; ++j) {
                da[static_cast<std::size_t>(i) * cols + n.i0 + j] +=
                    g[static_cast<std::size_t>(i) * n.i1 + j];
            }
        }
        break;
    }
    case OpKind::concat_rows: {
        std::size_t off = 0;
        for (std::size_t p = 0; p < n.inputs.size(); ++p) {
            const std::size_t sz = val(n.inputs[p]).size();
            if (wants(n.inputs[p])) {
                auto& dp = gbuf(n.inputs[p]);
                for (std::size_t i = 0; i < sz; ++i) dp[i] += g[off + i];
            }
            off += sz;
        }
        break;
    }
    case OpKind::concat_cols: {
        const int rows = n.shape[0];
        const int out_cols = n.shape[1];
        int col_off = 0;
        for (std::size_t p = 0; p < n.inputs.size(); ++p) {
            const int pc = shp(n.inputs[p])[1];
            if (wants(n.inputs[p])) {
                auto& dp = gbuf(n.inputs[p]);
                for (int i = 0; i < rows; ++i) {
                    for (int j = 0; j < pc; ++j) {
                        dp[static_cast<std::size_t>(i) * pc + j] +=
                            g[static_cast<std::size_t>(i) * out_cols + col_off + j];
                    }
                }
            }
            col_off += pc;
        }
        break;
    }
    case OpKind::pick_rows: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        const int cols = n.shape[1];
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
            const std::size_t src = static_cast<std::size_t>(n.indices[r]) * cols;
            const std::size_t dst = r * static_cast<std::size_t>(cols);
            for (int j = 0; j < cols; ++j) da[src + j] += g[dst + j];
        }
        break;
    }
    case OpKind::scatter_rows: {
        const int cols = n.shape[1];
        if (wants(n.inputs[0])) {
            auto& dbase = gbuf(n.inputs[0]);
            std::vector<bool> replaced(static_cast<std::size_t>(n.shape[0]), false);
            for (int idx : n.indices) replaced[static_cast<std::size_t>(idx)] = true;
            for (int r = 0; r < n.shape[0]; ++r) {
                if (replaced[static_cast<std::size_t>(r)]) continue;
                for (int j = 0; j < cols; ++j) {
                    dbase[static_cast<std::size_t>(r) * cols + j] += g[static_cast<std::size_t>(r) * cols + j];
                }
            }
        }
        if (wants(n.inputs[1])) {
            auto& drows = gbuf(n.inputs[1]);
            for (std::size_t r = 0; r < n.indices.size(); ++r) {
                for (int j = 0; j < cols; ++j) {
                    drows[r * static_cast<std::size_t>(cols) + j] +=
                        g[static_cast<std::size_t>(n.indices[r]) * cols + j];
                }
            }
        }
        break;
    }
    case OpKind::roll_rows: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        const int L = n.shape[0];
        const int cols = n.shape[1];
        for (int t = 0; t < L; ++t) {
            const int src = (t + n.i0) % L;
            for (int j = 0; j < cols; ++j) {
                da[static_cast<std::size_t>(src) * cols + j] += g[static_cast<std::size_t>(t) * cols + j];
            }
        }
        break;
    }
    case OpKind::cumsum_rows: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        const int L = n.shape[0];
        const int cols = n.shape[1];
        std::vector<double> suffix(static_cast<std::size_t>(cols), 0.0);
        for (int t = L - 1; t >= 0; --t) {
            for (int j = 0; j < cols; ++j) {
                suffix[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(t) * cols + j];
                da[static_cast<std::size_t>(t) * cols + j] += suffix[static_cast<std::size_t>(j)];
            }
        }
        break;
    }
    case OpKind::softmax: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        const Shape& s = n.shape;
        const int axis = n.axis;
        const int len = s[static_cast<std::size_t>(axis)];
        std::int64_t outer = 1, inner = 1;
        for (int d = 0; d < axis; ++d) outer *= s[static_cast<std::size_t>(d)];
        for (int d = axis + 1; d < static_cast<int>(s.size()); ++d) inner *= s[static_cast<std::size_t>(d)];
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t ii = 0; ii < inner; ++ii) {
                const std::int64_t base = o * len * inner + ii;
                double dot = 0.0;
                for (int j = 0; j < len; ++j) {
                    const std::size_t p = static_cast<std::size_t>(base + j * inner);
                    dot += n.value[p] * g[p];
                }
                for (int j = 0; j < len; ++j) {
                    const std::size_t p = static_cast<std::size_t>(base + j * inner);
                    da[p] += n.value[p] * (g[p] - dot);
                }
            }
        }
        break;
    }
    case OpKind::reduce_sum:
    case OpKind::reduce_mean:
    case OpKind::reduce_max: {
        if (!wants(n.inputs[0])) break;
        auto& da = gbuf(n.inputs[0]);
        const Shape& as = shp(n.inputs[0]);
        const int axis = n.axis;
        const int len = as[static_cast<std::size_t>(axis)];
        std::int64_t outer = 1, inner = 1;
        for (int d = 0; d < axis; ++d) outer *= as[static_cast<std::size_t>(d)];
        for (int d = axis + 1; d < static_cast<int>(as.size()); ++d) inner *= as[static_cast<std::size_t>(d)];
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t ii = 0; ii < inner; ++ii) {
                const std::int64_t base = o * len * inner + ii;
                const std::int64_t out_pos = o * inner + ii;
                const double gv = g[static_cast<std::size_t>(out_pos)];
                if (n.op == OpKind::reduce_sum) {
                    for (int j = 0; j < len; ++j) da[static_cast<std::size_t>(base + j * inner)] += gv;
                } else if (n.op == OpKind::reduce_mean) {
                    const double gm = gv / static_cast<double>(len);
                    for (int j = 0; j < len; ++j) da[static_cast<std::size_t>(base + j * inner)] += gm;
                } else {
                    const int j = n.indices[static_cast<std::size_t>(out_pos)];
                    da[static_cast<std::size_t>(base + j * inner)] += gv;
                }
            }
        }
        break;
    }
    case OpKind::conv1d: {
        const int ix = n.inputs[0];
        const int ik = n.inputs[1];
        const Shape& xs = shp(ix);
        const Shape& ks = shp(ik);
        const int B = xs[0], C = xs[1], L = xs[2];
        const int O = ks[0], kw = ks[2];
        const int lout = n.shape[2];
        const int stride = n.i0, pad = n.i1;
        const auto& xv = val(ix);
        const auto& kv = val(ik);
        std::vector<double>* dx = wants(ix) ? &gbuf(ix) : nullptr;
        std::vector<double>* dk = wants(ik) ? &gbuf(ik) : nullptr;
        for (int b = 0; b < B; ++b) {
            for (int o = 0; o < O; ++o) {
                for (int t = 0; t < lout; ++t) {
                    const double gv = g[(static_cast<std::size_t>(b) * O + o) * lout + t];
                    if (gv == 0.0) continue;
                    for (int c = 0; c < C; ++c) {
                        for (int u = 0; u < kw; ++u) {
                            const int pos = t * stride - pad + u;
                            if (pos < 0 || pos >= L) continue;
                            const std::size_t xoff = (static_cast<std::size_t>(b) * C + c) * L + pos;
                            const std::size_t koff = (static_cast<std::size_t>(o) * C + c) * kw + u;
                            if (dx) (*dx)[xoff] += gv * kv[koff];
                            if (dk) (*dk)[koff] += gv * xv[xoff];
                        }
                    }
                }
            }
        }
        break;
    }
    case OpKind::custom:
        n.custom->backward(*this, n.inputs, n.grad);
        break;
    }
}

void Tape::backward_impl(Var loss, bool flush) {
    const Node& ln = node_at(loss);
    if (ln.value.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(ln.shape));
    }
    // fresh pass: clear any gradient state left by a previous backward
    for (auto& n : nodes_) {
        if (!n.grad.empty()) {
            track_alloc(-static_cast<std::int64_t>(n.grad.size() * sizeof(double)));
            n.grad.clear();
            n.grad.shrink_to_fit();
        }
    }
    {
        Node& l = nodes_[static_cast<std::size_t>(loss.id)];
        l.grad.assign(1, 1.0);
        track_alloc(static_cast<std::int64_t>(sizeof(double)));
    }
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad.empty() || !n.wants_grad) continue;
        compute_backward(n);
    }
    if (flush) {
        for (auto& n : nodes_) {
            if (n.op == OpKind::leaf && n.bound && n.bound->requires_grad() && !n.grad.empty()) {
                auto& dst = n.bound->grad();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
            }
        }
    }
}

void Tape::replay() {
    for (auto& n : nodes_) {
        if (n.op == OpKind::constant) continue;
        compute_forward(n);
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

double grad_check(const TensorFn& f, const std::vector<Tensor>& inputs, double eps) {
    if (eps <= 0.0) throw NumericError("grad_check: eps must be positive");

    auto eval = [&f](const std::vector<Tensor>& xs) {
        Tape tape;
        std::vector<Var> vars;
        vars.reserve(xs.size());
        std::vector<Param> params;
        for (const auto& x : xs) {
            params.push_back(make_param(x));
            vars.push_back(tape.leaf(params.back()));
        }
        Var out = f(tape, vars);
        if (tape.value(out).size() != 1) {
            throw ShapeError("grad_check: function output must be scalar");
        }
        return tape.scalar_value(out);
    };

    // analytic gradients
    std::vector<Param> params;
    std::vector<Var> vars;
    Tape tape;
    for (const auto& x : inputs) {
        Param p = make_param(x);
        p->set_requires_grad(true);
        p->zero_grad();
        params.push_back(p);
        vars.push_back(tape.leaf(p));
    }
    Var out = f(tape, vars);
    if (tape.value(out).size() != 1) {
        throw ShapeError("grad_check: function output must be scalar");
    }
    tape.backward(out);

    double max_rel = 0.0;
    std::vector<Tensor> work = inputs;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        const std::size_t count = work[t].data().size();
        for (std::size_t i = 0; i < count; ++i) {
            const double orig = work[t].data()[i];
            work[t].data()[i] = orig + eps;
            const double fp = eval(work);
            work[t].data()[i] = orig - eps;
            const double fm = eval(work);
            work[t].data()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic = params[t]->has_grad() ? params[t]->grad()[i] : 0.0;
            const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace tsf
