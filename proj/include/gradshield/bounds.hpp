#pragma once

#include <optional>

#include "gradshield/network.hpp"

namespace gradshield {

// B^m_ε(x): perturbations of x on masked coordinates only, each by at most
// ε·m_i. Induced interval is [x − εm, x + εm].
struct MaskedBall {
    Tensor center;
    Tensor mask;  // entries in [0,1]; 1 = fully irrelevant, 0 = fully relevant
    double epsilon = 0.0;

    MaskedBall(Tensor x, Tensor m, double eps);
    IntervalTensor interval() const;
};

struct LayerBounds {
    std::vector<IntervalTensor> zhat;  // pre-activation bounds per layer
    IntervalTensor output;             // == zhat.back()
};

// Sound per-layer bounds: the output interval contains f(x') for every x'
// in the ball.
LayerBounds forward_interval(const Network& net, const MaskedBall& ball);

// Certified input-gradient interval: ∇f(x') ∈ [eta_lower, eta_upper] for all
// x' in the ball. Requires true-class-logit output mode.
struct GradientInterval {
    Tensor eta_lower;
    Tensor eta_upper;
    Tensor width() const { return sub(eta_upper, eta_lower); }
};

GradientInterval gradient_interval(const Network& net, const MaskedBall& ball, std::size_t label);

// η*: per element the interval endpoint farthest from g; |η* − g| dominates
// |η' − g| for every η' in the interval.
Tensor worst_case_gradient(const GradientInterval& gi, const Tensor& g);

enum class FragilityRegion { Masked, Core };

struct FragilityExample {
    Tensor x;
    std::optional<Tensor> mask;
    std::size_t label = 0;
};

// κ for one example: mean certified gradient-interval width over the selected
// region's entries, with the ball taken over that region's features. Empty
// region yields 0 (with a warning).
double certified_fragility_one(const Network& net, const FragilityExample& ex, double epsilon,
                               FragilityRegion region);

// Dataset κ: unweighted mean over examples that carry masks; maskless
// examples are skipped.
double certified_fragility(const Network& net, const std::vector<FragilityExample>& examples,
                           double epsilon, FragilityRegion region);

}  // namespace gradshield
