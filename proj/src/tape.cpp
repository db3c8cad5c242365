#include "gradshield/tape.hpp"

#include <algorithm>
#include <cmath>

namespace gradshield {

namespace {

Tensor softmax_values(const Tensor& z) {
    Tensor s(z.shape());
    double zmax = z[0];
    for (std::size_t i = 1; i < z.size(); ++i) zmax = std::max(zmax, z[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        s[i] = std::exp(z[i] - zmax);
        total += s[i];
    }
    for (std::size_t i = 0; i < z.size(); ++i) s[i] /= total;
    return s;
}

double logsumexp_value(const Tensor& z) {
    double zmax = z[0];
    for (std::size_t i = 1; i < z.size(); ++i) zmax = std::max(zmax, z[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) total += std::exp(z[i] - zmax);
    return zmax + std::log(total);
}

}  // namespace

const Tape::Node& Tape::node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
        throw DimensionError("tape: invalid node handle");
    return nodes_[static_cast<std::size_t>(id)];
}

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::unary(Op op, Var a, Tensor val) {
    Node n;
    n.op = op;
    n.a = a.id;
    n.val = std::move(val);
    n.requires_grad = node(a.id).requires_grad;
    return push(std::move(n));
}

Var Tape::binary(Op op, Var a, Var b, Tensor val) {
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.val = std::move(val);
    n.requires_grad = node(a.id).requires_grad || node(b.id).requires_grad;
    return push(std::move(n));
}

Var Tape::leaf(Tensor v, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.val = std::move(v);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

Var Tape::leaf_ref(const Tensor& v, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.external = &v;
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) { return binary(Op::Add, a, b, gradshield::add(val(a), val(b))); }
Var Tape::sub(Var a, Var b) { return binary(Op::Sub, a, b, gradshield::sub(val(a), val(b))); }
Var Tape::mul(Var a, Var b) { return binary(Op::Mul, a, b, hadamard(val(a), val(b))); }

Var Tape::scale(Var a, double c) {
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.cval = c;
    n.val = gradshield::scale(val(a), c);
    n.requires_grad = node(a.id).requires_grad;
    return push(std::move(n));
}

Var Tape::matvec(Var w, Var x) {
    return binary(Op::MatVec, w, x, gradshield::matvec(val(w), val(x)));
}

Var Tape::matvec_t(Var w, Var d) {
    return binary(Op::MatVecT, w, d, gradshield::matvec_t(val(w), val(d)));
}

namespace {
Tensor apply_relu(const Tensor& t) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] > 0.0 ? t[i] : 0.0;
    return out;
}

Tensor apply_step(const Tensor& t) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] > 0.0 ? 1.0 : 0.0;
    return out;
}
}  // namespace

Var Tape::abs(Var a) { return unary(Op::Abs, a, gradshield::abs(val(a))); }

Var Tape::abs_cached(Var a, const Tensor& value) {
    Node n;
    n.op = Op::Abs;
    n.a = a.id;
    n.external = &value;
    n.requires_grad = node(a.id).requires_grad;
    return push(std::move(n));
}
Var Tape::relu(Var a) { return unary(Op::Relu, a, apply_relu(val(a))); }
Var Tape::relu_step(Var a) { return unary(Op::ReluStep, a, apply_step(val(a))); }
Var Tape::emin(Var a, Var b) { return binary(Op::Min2, a, b, gradshield::emin(val(a), val(b))); }
Var Tape::emax(Var a, Var b) { return binary(Op::Max2, a, b, gradshield::emax(val(a), val(b))); }

Var Tape::sum(Var a) { return unary(Op::Sum, a, Tensor::scalar(gradshield::sum(val(a)))); }
Var Tape::sumsq(Var a) { return unary(Op::SumSq, a, Tensor::scalar(gradshield::sumsq(val(a)))); }
Var Tape::norm2(Var a) { return unary(Op::Norm2, a, Tensor::scalar(gradshield::norm2(val(a)))); }

Var Tape::logsumexp(Var a) {
    return unary(Op::LogSumExp, a, Tensor::scalar(logsumexp_value(val(a))));
}

Var Tape::pick(Var a, std::size_t index) {
    if (index >= val(a).size()) throw DimensionError("pick: index out of range");
    Node n;
    n.op = Op::Pick;
    n.a = a.id;
    n.index = index;
    n.val = Tensor::scalar(val(a)[index]);
    n.requires_grad = node(a.id).requires_grad;
    return push(std::move(n));
}

Var Tape::softmax(Var a) { return unary(Op::Softmax, a, softmax_values(val(a))); }

Var Tape::sigmoid(Var a) {
    const Tensor& v = val(a);
    Tensor out(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-v[i]));
    return unary(Op::Sigmoid, a, std::move(out));
}

double Tape::scalar(Var v) const {
    const Tensor& t = val(v);
    if (!t.is_scalar()) throw DimensionError("scalar(): value is not a scalar");
    return t[0];
}

void Tape::accumulate(int id, const Tensor& g) {
    Tensor& slot = adj_[static_cast<std::size_t>(id)];
    if (slot.size() == 0) {
        slot = g;
    } else {
        for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
    }
}

void Tape::accumulate_move(int id, Tensor&& g) {
    Tensor& slot = adj_[static_cast<std::size_t>(id)];
    if (slot.size() == 0) {
        slot = std::move(g);
    } else {
        for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
    }
}

void Tape::accumulate_outer(int id, const Tensor& g, const Tensor& x) {
    Tensor& slot = adj_[static_cast<std::size_t>(id)];
    const std::size_t rows = g.size(), cols = x.size();
    if (slot.size() == 0) slot = Tensor::zeros({rows, cols});
    double* out = slot.data();
    for (std::size_t i = 0; i < rows; ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        double* row = out + i * cols;
        const double* xp = x.data();
        for (std::size_t j = 0; j < cols; ++j) row[j] += gi * xp[j];
    }
}

void Tape::backward(Var seed) {
    const Node& top = node(seed.id);
    if (!top.val.is_scalar()) throw DimensionError("backward: seed must be a scalar");
    adj_.assign(nodes_.size(), Tensor());
    adj_[static_cast<std::size_t>(seed.id)] = Tensor::scalar(1.0);

    for (int id = seed.id; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad) continue;
        const Tensor& g = adj_[static_cast<std::size_t>(id)];
        if (g.size() == 0) continue;
        const bool need_a = n.a >= 0 && node(n.a).requires_grad;
        const bool need_b = n.b >= 0 && node(n.b).requires_grad;
        const Tensor* va = n.a >= 0 ? &value_of(n.a) : nullptr;
        const Tensor* vb = n.b >= 0 ? &value_of(n.b) : nullptr;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add:
                if (need_a) accumulate(n.a, g);
                if (need_b) accumulate(n.b, g);
                break;
            case Op::Sub:
                if (need_a) accumulate(n.a, g);
                if (need_b) accumulate(n.b, gradshield::scale(g, -1.0));
                break;
            case Op::Mul:
                if (need_a) accumulate_move(n.a, hadamard(g, *vb));
                if (need_b) accumulate_move(n.b, hadamard(g, *va));
                break;
            case Op::Scale:
                if (need_a) accumulate_move(n.a, gradshield::scale(g, n.cval));
                break;
            case Op::MatVec: {
                // y = W x:  dW += g xᵀ,  dx += Wᵀ g.
                if (need_a) accumulate_outer(n.a, g, *vb);
                if (need_b) accumulate_move(n.b, gradshield::matvec_t(*va, g));
                break;
            }
            case Op::MatVecT: {
                // y = Wᵀ d:  dW += d gᵀ,  dd += W g.
                if (need_a) accumulate_outer(n.a, *vb, g);
                if (need_b) accumulate_move(n.b, gradshield::matvec(*va, g));
                break;
            }
            case Op::Abs: {
                if (need_a) {
                    const Tensor& a = *va;
                    Tensor ga(a.shape());
                    for (std::size_t i = 0; i < a.size(); ++i)
                        ga[i] = a[i] > 0.0 ? g[i] : (a[i] < 0.0 ? -g[i] : 0.0);
                    accumulate_move(n.a, std::move(ga));
                }
                break;
            }
            case Op::Relu: {
                if (need_a) {
                    const Tensor& a = *va;
                    Tensor ga(a.shape());
                    for (std::size_t i = 0; i < a.size(); ++i) ga[i] = a[i] > 0.0 ? g[i] : 0.0;
                    accumulate_move(n.a, std::move(ga));
                }
                break;
            }
            case Op::ReluStep:
                // σ″ taken as zero: the step values block gradient flow.
                break;
            case Op::Min2:
            case Op::Max2: {
                const Tensor& a = *va;
                const Tensor& b = *vb;
                Tensor ga(a.shape()), gb(a.shape());
                for (std::size_t i = 0; i < a.size(); ++i) {
                    const bool take_a = n.op == Op::Min2 ? a[i] < b[i] : a[i] > b[i];
                    ga[i] = take_a ? g[i] : 0.0;
                    gb[i] = take_a ? 0.0 : g[i];
                }
                if (need_a) accumulate_move(n.a, std::move(ga));
                if (need_b) accumulate_move(n.b, std::move(gb));
                break;
            }
            case Op::Sum: {
                if (need_a) accumulate_move(n.a, Tensor::full(va->shape(), g[0]));
                break;
            }
            case Op::SumSq: {
                if (need_a) accumulate_move(n.a, gradshield::scale(*va, 2.0 * g[0]));
                break;
            }
            case Op::Norm2: {
                if (need_a && n.val[0] > 0.0)
                    accumulate_move(n.a, gradshield::scale(*va, g[0] / n.val[0]));
                break;
            }
            case Op::LogSumExp: {
                if (need_a) accumulate_move(n.a, gradshield::scale(softmax_values(*va), g[0]));
                break;
            }
            case Op::Pick: {
                if (need_a) {
                    Tensor ga = Tensor::zeros(va->shape());
                    ga[n.index] = g[0];
                    accumulate_move(n.a, std::move(ga));
                }
                break;
            }
            case Op::Softmax: {
                if (need_a) {
                    const Tensor& s = n.val;
                    const double sg = gradshield::dot(s, g);
                    Tensor ga(s.shape());
                    for (std::size_t i = 0; i < s.size(); ++i) ga[i] = s[i] * (g[i] - sg);
                    accumulate(n.a, ga);
                }
                break;
            }
            case Op::Sigmoid: {
                if (need_a) {
                    const Tensor& s = n.val;
                    Tensor ga(s.shape());
                    for (std::size_t i = 0; i < s.size(); ++i) ga[i] = g[i] * s[i] * (1.0 - s[i]);
                    accumulate(n.a, ga);
                }
                break;
            }
        }
    }
}

const Tensor* Tape::grad_ptr(Var v) const {
    if (adj_.empty()) throw DimensionError("grad: backward() has not run on this tape");
    node(v.id);
    const Tensor& t = adj_[static_cast<std::size_t>(v.id)];
    return t.size() == 0 ? nullptr : &t;
}

Tensor Tape::grad(Var v) const {
    const Tensor* g = grad_ptr(v);
    if (g) return *g;
    return Tensor::zeros(val(v).shape());
}

void Tape::add_grad_to(Var v, Tensor& acc, double s) const {
    const Tensor* g = grad_ptr(v);
    if (!g) return;
    check_same_shape(*g, acc, "add_grad_to");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += s * (*g)[i];
}

}  // namespace gradshield
