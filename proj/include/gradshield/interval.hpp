#pragma once

#include "gradshield/tensor.hpp"

namespace gradshield {

enum class Activation { ReLU };
// Derivative of ReLU as a step function; monotone, so it propagates through
// intervals with the same endpoint rule as the activation itself.
enum class UnaryFn { ReLU, ReLUStep };

double apply_unary(UnaryFn f, double v);
Tensor apply_unary(UnaryFn f, const Tensor& a);

// Element-wise interval over a tensor: lower[i] <= upper[i] everywhere.
// Degenerate intervals (lower == upper) behave bit-for-bit like the dense
// tensor under every operation below.
struct IntervalTensor {
    Tensor lower;
    Tensor upper;

    IntervalTensor() = default;
    IntervalTensor(Tensor lo, Tensor hi);

    static IntervalTensor degenerate(const Tensor& t) { return IntervalTensor(t, t); }

    const std::vector<std::size_t>& shape() const { return lower.shape(); }
    std::size_t size() const { return lower.size(); }
    bool is_degenerate() const;
    Tensor width() const { return sub(upper, lower); }
    Tensor midpoint() const;
    Tensor radius() const;

    bool contains(const Tensor& t) const;
    // Containment up to floating-point slack: endpoints are computed in
    // round-to-nearest (no directed rounding), so an exactly-attained bound
    // can land an ulp inside the true value. `rel` scales with the endpoint
    // magnitudes.
    bool contains_with_slack(const Tensor& t, double rel = 1e-12) const;
    void validate(const char* where) const;
};

IntervalTensor interval_add(const IntervalTensor& a, const IntervalTensor& b);

// Per element, min/max over the four endpoint products.
IntervalTensor interval_hadamard(const IntervalTensor& a, const IntervalTensor& b);

// Rump's midpoint-radius bound for the product of two interval matrices:
//   C_L = AμBμ − |Aμ|Br − Ar|Bμ| − ArBr,   C_U = AμBμ + |Aμ|Br + Ar|Bμ| + ArBr.
// Sound: every A'B' with A' ∈ A, B' ∈ B lies inside [C_L, C_U].
IntervalTensor interval_matmul(const IntervalTensor& a, const IntervalTensor& b);

// [σ(lower), σ(upper)] — sound for monotone non-decreasing σ.
IntervalTensor interval_monotone_activation(const IntervalTensor& z, UnaryFn f);

}  // namespace gradshield
