#ifndef TSF_REVERSIBLE_HPP
#define TSF_REVERSIBLE_HPP

#include "tsf/nn.hpp"

#include <memory>

namespace tsf {

/// Shape-preserving sublayer usable inside a reversible block. apply() builds
/// graph ops on whatever tape it is given, so the same object serves the
/// stored-activation path, the reconstruction pass and the per-block
/// vector-Jacobian pass.
class Sublayer {
public:
    virtual ~Sublayer() = default;
    virtual Var apply(Tape& t, Var x) const = 0;
    virtual void collect(const std::string& prefix, NamedParams& out) const = 0;
};

/// y1 = x1 + F(x2); y2 = x2 + G(y1). F and G must preserve shape.
struct RevBlock {
    std::shared_ptr<Sublayer> f;
    std::shared_ptr<Sublayer> g;
};

/// Evaluate a sublayer on plain values through a scratch tape.
Tensor eval_sublayer(const Sublayer& s, const Tensor& x);

/// On-tape forward (stores activations like any other graph op).
std::pair<Var, Var> rev_forward(Tape& t, const RevBlock& block, Var x1, Var x2);

/// Value-level forward / exact algebraic inverse of one block.
std::pair<Tensor, Tensor> rev_forward_values(const RevBlock& block, const Tensor& x1,
                                             const Tensor& x2);
std::pair<Tensor, Tensor> rev_inverse_values(const RevBlock& block, const Tensor& y1,
                                             const Tensor& y2);

struct RevStack {
    std::vector<RevBlock> blocks;

    /// Memory-efficient path: one custom tape node; the backward pass
    /// reconstructs inputs block-by-block instead of storing activations,
    /// keeping at most one block's subgraph alive at a time. Parameter
    /// gradients accumulate directly into the sublayer parameters.
    std::pair<Var, Var> apply(Tape& t, Var x1, Var x2) const;

    /// Ordinary stored-activation path (the oracle the memory-efficient path
    /// is checked against).
    std::pair<Var, Var> apply_stored(Tape& t, Var x1, Var x2) const;

    std::pair<Tensor, Tensor> forward_values(const Tensor& x1, const Tensor& x2) const;
    std::pair<Tensor, Tensor> inverse_values(const Tensor& y1, const Tensor& y2) const;

    void collect(const std::string& prefix, NamedParams& out) const;
};

struct RevBackwardResult {
    Tensor grad_x1;
    Tensor grad_x2;
};

/// Activation-free backward over a whole stack: reconstructs (x1, x2) from
/// the outputs, replays each block once for its vector-Jacobian products, and
/// accumulates parameter gradients into the sublayers' tensors. Throws
/// NumericError if the reconstruction drifts beyond 1e-6 from the supplied
/// outputs.
RevBackwardResult rev_backward(const RevStack& stack, const Tensor& y1, const Tensor& y2,
                               const Tensor& grad_y1, const Tensor& grad_y2);

} // namespace tsf

#endif // TSF_REVERSIBLE_HPP
