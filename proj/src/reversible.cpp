#include "tsf/reversible.hpp"

#include <cmath>
#include <cstring>

namespace tsf {

namespace {

constexpr double kDriftLimit = 1e-6;

void check_shape_preserved(const Shape& in, const Shape& out, const char* which) {
    if (in != out) {
        throw ShapeError(std::string("reversible: sublayer ") + which + " changed shape from " +
                         shape_str(in) + " to " + shape_str(out));
    }
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// One block of the activation-free backward: reconstruct (x1, x2) from
// (y1, y2), then replay the block once on a scratch tape for the VJP.
struct BlockBackward {
    Tensor x1, x2, dx1, dx2;
};

BlockBackward rev_block_backward(const RevBlock& block, const Tensor& y1, const Tensor& y2,
                                 const std::vector<double>& gy1, const std::vector<double>& gy2) {
    // reconstruction (scratch tapes die at scope exit)
    Tensor x2 = y2;
    {
        Tensor g_out = eval_sublayer(*block.g, y1);
        for (std::size_t i = 0; i < x2.data().size(); ++i) x2.data()[i] -= g_out.data()[i];
    }
    Tensor x1 = y1;
    {
        Tensor f_out = eval_sublayer(*block.f, x2);
        for (std::size_t i = 0; i < x1.data().size(); ++i) x1.data()[i] -= f_out.data()[i];
    }

    BlockBackward out;
    {
        // replay the block from the reconstructed inputs and pull gradients
        // through with a weighted pseudo-loss
        Tape tape;
        Param px1 = make_param(x1);
        Param px2 = make_param(x2);
        px1->set_requires_grad(true);
        px2->set_requires_grad(true);
        Var vx1 = tape.leaf(px1);
        Var vx2 = tape.leaf(px2);
        Var vy1 = tape.add(vx1, block.f->apply(tape, vx2));
        Var vy2 = tape.add(vx2, block.g->apply(tape, vy1));

        const double drift = std::max(max_abs_diff(tape.value(vy1), y1.data()),
                                      max_abs_diff(tape.value(vy2), y2.data()));
        if (drift > kDriftLimit) {
            throw NumericError("rev_backward: reconstruction drift " + std::to_string(drift) +
                               " exceeds 1e-6");
        }

        Var loss = tape.add(tape.sum_all(tape.mul(vy1, tape.constant(Tensor(y1.shape(), gy1)))),
                            tape.sum_all(tape.mul(vy2, tape.constant(Tensor(y2.shape(), gy2)))));
        // flushes parameter grads straight into the sublayer tensors
        tape.backward(loss);

        out.dx1 = Tensor(x1.shape(), px1->grad());
        out.dx2 = Tensor(x2.shape(), px2->grad());
    }
    out.x1 = std::move(x1);
    out.x2 = std::move(x2);
    return out;
}

class RevStackOp : public CustomOp {
public:
    explicit RevStackOp(std::vector<RevBlock> blocks) : blocks_(std::move(blocks)) {}

    Shape output_shape(const Tape&, const std::vector<int>&) const override {
        return {shape_[0] * 2, shape_[1]};
    }

    void set_input_shape(Shape s) { shape_ = std::move(s); }

    void forward(Tape& tape, const std::vector<int>& inputs, std::vector<double>& out) override {
        Tensor x1(shape_, tape.node_value(inputs[0]));
        Tensor x2(shape_, tape.node_value(inputs[1]));
        for (const auto& block : blocks_) {
            auto next = rev_forward_values(block, x1, x2);
            x1 = std::move(next.first);
            x2 = std::move(next.second);
        }
        y1_ = x1.data();
        y2_ = x2.data();
        std::memcpy(out.data(), y1_.data(), y1_.size() * sizeof(double));
        std::memcpy(out.data() + y1_.size(), y2_.data(), y2_.size() * sizeof(double));
    }

    void backward(Tape& tape, const std::vector<int>& inputs,
                  const std::vector<double>& out_grad) override {
        const std::size_t half = y1_.size();
        Tensor y1(shape_, y1_);
        Tensor y2(shape_, y2_);
        std::vector<double> gy1(out_grad.begin(), out_grad.begin() + static_cast<std::ptrdiff_t>(half));
        std::vector<double> gy2(out_grad.begin() + static_cast<std::ptrdiff_t>(half), out_grad.end());
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
            BlockBackward bb = rev_block_backward(*it, y1, y2, gy1, gy2);
            y1 = std::move(bb.x1);
            y2 = std::move(bb.x2);
            gy1 = std::move(bb.dx1.data());
            gy2 = std::move(bb.dx2.data());
        }
        tape.accumulate_grad(inputs[0], gy1);
        tape.accumulate_grad(inputs[1], gy2);
    }

private:
    std::vector<RevBlock> blocks_;
    Shape shape_;
    std::vector<double> y1_, y2_;
};

} // namespace

Tensor eval_sublayer(const Sublayer& s, const Tensor& x) {
    Tape tape;
    Var vx = tape.constant(x);
    Var out = s.apply(tape, vx);
    return Tensor(tape.shape(out), tape.value(out));
}

std::pair<Var, Var> rev_forward(Tape& t, const RevBlock& block, Var x1, Var x2) {
    if (t.shape(x1) != t.shape(x2)) throw ShapeError("rev_forward: x1 and x2 must share a shape");
    Var f_out = block.f->apply(t, x2);
    check_shape_preserved(t.shape(x2), t.shape(f_out), "F");
    Var y1 = t.add(x1, f_out);
    Var g_out = block.g->apply(t, y1);
    check_shape_preserved(t.shape(y1), t.shape(g_out), "G");
    Var y2 = t.add(x2, g_out);
    return {y1, y2};
}

std::pair<Tensor, Tensor> rev_forward_values(const RevBlock& block, const Tensor& x1,
                                             const Tensor& x2) {
    Tape tape;
    auto [y1, y2] = rev_forward(tape, block, tape.constant(x1), tape.constant(x2));
    return {Tensor(tape.shape(y1), tape.value(y1)), Tensor(tape.shape(y2), tape.value(y2))};
}

std::pair<Tensor, Tensor> rev_inverse_values(const RevBlock& block, const Tensor& y1,
                                             const Tensor& y2) {
    if (y1.shape() != y2.shape()) throw ShapeError("rev_inverse: y1 and y2 must share a shape");
    Tensor g_out = eval_sublayer(*block.g, y1);
    check_shape_preserved(y1.shape(), g_out.shape(), "G");
    Tensor x2 = y2;
    for (std::size_t i = 0; i < x2.data().size(); ++i) x2.data()[i] -= g_out.data()[i];
    Tensor f_out = eval_sublayer(*block.f, x2);
    check_shape_preserved(x2.shape(), f_out.shape(), "F");
    Tensor x1 = y1;
    for (std::size_t i = 0; i < x1.data().size(); ++i) x1.data()[i] -= f_out.data()[i];
    return {x1, x2};
}

std::pair<Var, Var> RevStack::apply(Tape& t, Var x1, Var x2) const {
    if (t.shape(x1) != t.shape(x2) || t.shape(x1).size() != 2) {
        throw ShapeError("RevStack: x1 and x2 must be matching rank-2 tensors");
    }
    auto op = std::make_shared<RevStackOp>(blocks);
    op->set_input_shape(t.shape(x1));
    Var packed = t.custom(op, {x1, x2});
    const int rows = t.shape(x1)[0];
    Var y1 = t.slice_rows(packed, 0, rows);
    Var y2 = t.slice_rows(packed, rows, rows);
    return {y1, y2};
}

std::pair<Var, Var> RevStack::apply_stored(Tape& t, Var x1, Var x2) const {
    for (const auto& block : blocks) {
        auto [y1, y2] = rev_forward(t, block, x1, x2);
        x1 = y1;
        x2 = y2;
    }
    return {x1, x2};
}

std::pair<Tensor, Tensor> RevStack::forward_values(const Tensor& x1, const Tensor& x2) const {
    Tensor a = x1, b = x2;
    for (const auto& block : blocks) {
        auto next = rev_forward_values(block, a, b);
        a = std::move(next.first);
        b = std::move(next.second);
    }
    return {a, b};
}

std::pair<Tensor, Tensor> RevStack::inverse_values(const Tensor& y1, const Tensor& y2) const {
    Tensor a = y1, b = y2;
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
        auto prev = rev_inverse_values(*it, a, b);
        a = std::move(prev.first);
        b = std::move(prev.second);
    }
    return {a, b};
}

void RevStack::collect(const std::string& prefix, NamedParams& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].f->collect(prefix + ".block" + std::to_string(i) + ".f", out);
        blocks[i].g->collect(prefix + ".block" + std::to_string(i) + ".g", out);
    }
}

RevBackwardResult rev_backward(const RevStack& stack, const Tensor& y1, const Tensor& y2,
                               const Tensor& grad_y1, const Tensor& grad_y2) {
    if (y1.shape() != y2.shape() || grad_y1.shape() != y1.shape() || grad_y2.shape() != y1.shape()) {
        throw ShapeError("rev_backward: outputs and gradients must share one shape");
    }
    Tensor cy1 = y1, cy2 = y2;
    std::vector<double> gy1 = grad_y1.data();
    std::vector<double> gy2 = grad_y2.data();
    for (auto it = stack.blocks.rbegin(); it != stack.blocks.rend(); ++it) {
        BlockBackward bb = rev_block_backward(*it, cy1, cy2, gy1, gy2);
        cy1 = std::move(bb.x1);
        cy2 = std::move(bb.x2);
        gy1 = std::move(bb.dx1.data());
        gy2 = std::move(bb.dx2.data());
    }
    RevBackwardResult res;
    res.grad_x1 = Tensor(y1.shape(), std::move(gy1));
    res.grad_x2 = Tensor(y2.shape(), std::move(gy2));
    return res;
}

} // namespace tsf
