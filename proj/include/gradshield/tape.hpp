#pragma once

#include "gradshield/tensor.hpp"

namespace gradshield {

// Handle to a value on a Tape. Valid for the lifetime of the owning tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Tape-based reverse-mode differentiation over tensor ops.
//
// Values are computed eagerly as nodes are recorded; backward() replays the
// chain rule in reverse node order. Second-order use (differentiating a
// scalar function of an input gradient with respect to parameters) works by
// recording the network's backward pass itself as forward nodes, so the
// generic reverse pass only ever needs first-order rules. Consequences of
// that convention, fixed here once:
//   - relu_step (the recorded σ′ values) propagates no gradient: ReLU's
//     second derivative is taken as zero everywhere.
//   - d|v|/dv at v = 0 is taken as 0, and d‖v‖₂/dv at v = 0 as 0.
//   - emin/emax route the gradient to the attaining operand, second operand
//     on ties.
//
// A tape is single-threaded; replaying the same construction is
// deterministic and bit-identical.
class Tape {
public:
    enum class Op {
        Leaf,
        Add,
        Sub,
        Mul,
        Scale,
        MatVec,
        MatVecT,
        Abs,
        Relu,
        ReluStep,
        Min2,
        Max2,
        Sum,
        SumSq,
        Norm2,
        LogSumExp,
        Pick,
        Softmax,
        Sigmoid,
    };

    Var leaf(Tensor v, bool requires_grad);
    // Zero-copy leaf over caller-owned storage; the tensor must outlive the
    // tape. Used to bind network parameters without copying them per tape.
    Var leaf_ref(const Tensor& v, bool requires_grad);
    Var constant(Tensor v) { return leaf(std::move(v), false); }
    Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var matvec(Var w, Var x);
    Var matvec_t(Var w, Var d);
    Var abs(Var a);
    // Abs node whose value is supplied by the caller (e.g. cached once per
    // batch); the VJP still routes through `a`. `value` must outlive the tape.
    Var abs_cached(Var a, const Tensor& value);
    Var relu(Var a);
    Var relu_step(Var a);
    Var emin(Var a, Var b);
    Var emax(Var a, Var b);
    Var sum(Var a);
    Var sumsq(Var a);
    Var norm2(Var a);
    Var logsumexp(Var a);
    Var pick(Var a, std::size_t index);
    Var softmax(Var a);
    Var sigmoid(Var a);

    const Tensor& val(Var v) const { return value_of(v.id); }
    double scalar(Var v) const;

    // Reverse pass seeded with d(seed)/d(seed) = 1. May be called repeatedly;
    // each call recomputes all adjoints from scratch.
    void backward(Var seed);

    // Adjoint of v from the most recent backward(); nullptr when no gradient
    // reached v (treat as zero).
    const Tensor* grad_ptr(Var v) const;
    Tensor grad(Var v) const;

    // acc += scale * grad(v); no-op when the adjoint is zero.
    void add_grad_to(Var v, Tensor& acc, double scale = 1.0) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        double cval = 0.0;
        std::size_t index = 0;
        Tensor val;
        const Tensor* external = nullptr;  // set for leaf_ref nodes
        bool requires_grad = false;
    };

    const Node& node(int id) const;
    const Tensor& value_of(int id) const {
        const Node& n = node(id);
        return n.external ? *n.external : n.val;
    }
    Var push(Node n);
    Var unary(Op op, Var a, Tensor val);
    Var binary(Op op, Var a, Var b, Tensor val);
    void accumulate(int id, const Tensor& g);
    void accumulate_move(int id, Tensor&& g);
    // adj[id] += g ⊗ x (outer product), building the slot in place.
    void accumulate_outer(int id, const Tensor& g, const Tensor& x);

    std::vector<Node> nodes_;
    std::vector<Tensor> adj_;
};

}  // namespace gradshield
