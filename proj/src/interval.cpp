#include "gradshield/interval.hpp"

#include <algorithm>
#include <cmath>

namespace gradshield {

double apply_unary(UnaryFn f, double v) {
    switch (f) {
        case UnaryFn::ReLU: return v > 0.0 ? v : 0.0;
        case UnaryFn::ReLUStep: return v > 0.0 ? 1.0 : 0.0;
    }
    throw std::runtime_error("unknown activation id");
}

Tensor apply_unary(UnaryFn f, const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply_unary(f, a[i]);
    return out;
}

IntervalTensor::IntervalTensor(Tensor lo, Tensor hi) : lower(std::move(lo)), upper(std::move(hi)) {
    validate("interval");
}

bool IntervalTensor::is_degenerate() const {
    for (std::size_t i = 0; i < lower.size(); ++i)
        if (lower[i] != upper[i]) return false;
    return true;
}

Tensor IntervalTensor::midpoint() const {
    Tensor m(lower.shape());
    for (std::size_t i = 0; i < lower.size(); ++i) m[i] = (upper[i] + lower[i]) / 2.0;
    return m;
}

Tensor IntervalTensor::radius() const {
    Tensor r(lower.shape());
    for (std::size_t i = 0; i < lower.size(); ++i) r[i] = (upper[i] - lower[i]) / 2.0;
    return r;
}

bool IntervalTensor::contains(const Tensor& t) const {
    if (!t.same_shape(lower)) return false;
    for (std::size_t i = 0; i < t.size(); ++i)
        if (t[i] < lower[i] || t[i] > upper[i]) return false;
    return true;
}

bool IntervalTensor::contains_with_slack(const Tensor& t, double rel) const {
    if (!t.same_shape(lower)) return false;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double slack =
            rel * std::max({1.0, std::fabs(lower[i]), std::fabs(upper[i]), std::fabs(t[i])});
        if (t[i] < lower[i] - slack || t[i] > upper[i] + slack) return false;
    }
    return true;
}

void IntervalTensor::validate(const char* where) const {
    check_same_shape(lower, upper, where);
    for (std::size_t i = 0; i < lower.size(); ++i)
        if (!(lower[i] <= upper[i]))
            throw DimensionError(std::string(where) + ": lower > upper at element " +
                                 std::to_string(i));
}

IntervalTensor interval_add(const IntervalTensor& a, const IntervalTensor& b) {
    check_same_shape(a.lower, b.lower, "interval_add");
    return IntervalTensor(add(a.lower, b.lower), add(a.upper, b.upper));
}

IntervalTensor interval_hadamard(const IntervalTensor& a, const IntervalTensor& b) {
    check_same_shape(a.lower, b.lower, "interval_hadamard");
    Tensor lo(a.lower.shape()), hi(a.lower.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double p1 = a.lower[i] * b.lower[i];
        const double p2 = a.lower[i] * b.upper[i];
        const double p3 = a.upper[i] * b.lower[i];
        const double p4 = a.upper[i] * b.upper[i];
        lo[i] = std::min(std::min(p1, p2), std::min(p3, p4));
        hi[i] = std::max(std::max(p1, p2), std::max(p3, p4));
    }
    return IntervalTensor(std::move(lo), std::move(hi));
}

IntervalTensor interval_matmul(const IntervalTensor& a, const IntervalTensor& b) {
    if (a.lower.rank() != 2 || b.lower.rank() != 2)
        throw DimensionError("interval_matmul: operands must be 2-D");
    if (a.lower.cols() != b.lower.rows())
        throw DimensionError("interval_matmul: inner dimensions disagree");
    const Tensor a_mu = a.midpoint();
    const Tensor a_r = a.radius();
    const Tensor b_mu = b.midpoint();
    const Tensor b_r = b.radius();
    const Tensor core = matmul(a_mu, b_mu);
    const Tensor t1 = matmul(abs(a_mu), b_r);
    const Tensor t2 = matmul(a_r, abs(b_mu));
    const Tensor t3 = matmul(a_r, b_r);
    Tensor lo(core.shape()), hi(core.shape());
    for (std::size_t i = 0; i < core.size(); ++i) {
        const double spread = t1[i] + t2[i] + t3[i];
        lo[i] = core[i] - t1[i] - t2[i] - t3[i];
        hi[i] = core[i] + spread;
    }
    return IntervalTensor(std::move(lo), std::move(hi));
}

IntervalTensor interval_monotone_activation(const IntervalTensor& z, UnaryFn f) {
    return IntervalTensor(apply_unary(f, z.lower), apply_unary(f, z.upper));
}

}  // namespace gradshield
