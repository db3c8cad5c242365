#include "gradshield/bounds.hpp"

#include <cmath>
#include <iostream>

namespace gradshield {

MaskedBall::MaskedBall(Tensor x, Tensor m, double eps)
    : center(std::move(x)), mask(std::move(m)), epsilon(eps) {
    check_same_shape(center, mask, "masked ball");
    if (!(epsilon >= 0.0)) throw DimensionError("masked ball: epsilon must be non-negative");
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (!(mask[i] >= 0.0 && mask[i] <= 1.0))
            throw DimensionError("masked ball: mask entries must lie in [0,1]");
}

IntervalTensor MaskedBall::interval() const {
    Tensor lo(center.shape()), hi(center.shape());
    for (std::size_t i = 0; i < center.size(); ++i) {
        const double r = epsilon * mask[i];
        lo[i] = center[i] - r;
        hi[i] = center[i] + r;
    }
    return IntervalTensor(std::move(lo), std::move(hi));
}

namespace {

Tensor as_column(const Tensor& v) { return Tensor({v.size(), 1}, v.storage()); }
Tensor as_vector(const Tensor& m) { return Tensor({m.size()}, m.storage()); }

IntervalTensor column_interval(const IntervalTensor& v) {
    return IntervalTensor(as_column(v.lower), as_column(v.upper));
}

IntervalTensor vector_interval(const IntervalTensor& v) {
    return IntervalTensor(as_vector(v.lower), as_vector(v.upper));
}

// W · [vL, vU] + b as a Rump product with a zero-radius left factor.
IntervalTensor affine_interval(const Tensor& w, const Tensor& b, const IntervalTensor& v) {
    IntervalTensor prod =
        interval_matmul(IntervalTensor::degenerate(w), column_interval(v));
    return interval_add(vector_interval(prod), IntervalTensor::degenerate(b));
}

}  // namespace

LayerBounds forward_interval(const Network& net, const MaskedBall& ball) {
    net.validate();
    if (ball.center.size() != net.input_width())
        throw DimensionError("forward_interval: input width mismatch");
    LayerBounds bounds;
    IntervalTensor z = ball.interval();
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        IntervalTensor zh = affine_interval(net.layers[k].weight, net.layers[k].bias, z);
        if (k + 1 < net.layers.size()) z = interval_monotone_activation(zh, UnaryFn::ReLU);
        bounds.zhat.push_back(std::move(zh));
    }
    bounds.output = bounds.zhat.back();
    return bounds;
}

GradientInterval gradient_interval(const Network& net, const MaskedBall& ball, std::size_t label) {
    if (net.output_mode != OutputMode::TrueClassLogit)
        throw DimensionError(
            "gradient_interval: output mode must be true-class-logit for interval propagation");
    if (label >= net.output_width())
        throw DimensionError("gradient_interval: label out of range");
    const LayerBounds bounds = forward_interval(net, ball);

    Tensor seed = Tensor::zeros({net.output_width()});
    seed[label] = 1.0;
    IntervalTensor d = IntervalTensor::degenerate(seed);
    for (std::size_t k = net.layers.size(); k-- > 0;) {
        const Tensor wt = transpose(net.layers[k].weight);
        IntervalTensor u = vector_interval(
            interval_matmul(IntervalTensor::degenerate(wt), column_interval(d)));
        if (k == 0) {
            d = std::move(u);
            break;
        }
        IntervalTensor sp = interval_monotone_activation(bounds.zhat[k - 1], UnaryFn::ReLUStep);
        d = interval_hadamard(u, sp);
    }
    return GradientInterval{std::move(d.lower), std::move(d.upper)};
}

Tensor worst_case_gradient(const GradientInterval& gi, const Tensor& g) {
    check_same_shape(gi.eta_lower, g, "worst_case_gradient");
    Tensor eta(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double dlo = std::fabs(g[i] - gi.eta_lower[i]);
        const double dhi = std::fabs(g[i] - gi.eta_upper[i]);
        eta[i] = dlo > dhi ? gi.eta_lower[i] : gi.eta_upper[i];
    }
    return eta;
}

namespace {

Tensor region_weights(const Tensor& mask, FragilityRegion region) {
    Tensor w(mask.shape());
    for (std::size_t i = 0; i < mask.size(); ++i)
        w[i] = region == FragilityRegion::Masked ? mask[i] : 1.0 - mask[i];
    return w;
}

}  // namespace

double certified_fragility_one(const Network& net, const FragilityExample& ex, double epsilon,
                               FragilityRegion region) {
    if (!ex.mask) throw DimensionError("certified_fragility: example has no mask");
    const Tensor weights = region_weights(*ex.mask, region);
    std::size_t entries = 0;
    for (std::size_t i = 0; i < weights.size(); ++i)
        if (weights[i] > 0.0) ++entries;
    if (entries == 0) {
        std::cerr << "warning: certified_fragility over empty region, reporting 0\n";
        return 0.0;
    }
    const MaskedBall ball(ex.x, weights, epsilon);
    const GradientInterval gi = gradient_interval(net, ball, ex.label);
    const Tensor width = gi.width();
    double total = 0.0;
    for (std::size_t i = 0; i < width.size(); ++i)
        if (weights[i] > 0.0) total += width[i];
    return total / static_cast<double>(entries);
}

double certified_fragility(const Network& net, const std::vector<FragilityExample>& examples,
                           double epsilon, FragilityRegion region) {
    std::vector<const FragilityExample*> with_mask;
    for (const FragilityExample& ex : examples)
        if (ex.mask) with_mask.push_back(&ex);
    if (with_mask.empty()) {
        std::cerr << "warning: certified_fragility with no masked examples, reporting 0\n";
        return 0.0;
    }
    std::vector<double> per_example(with_mask.size(), 0.0);
#pragma omp parallel for schedule(dynamic) num_threads(worker_count())
    for (long long i = 0; i < static_cast<long long>(with_mask.size()); ++i)
        per_example[static_cast<std::size_t>(i)] =
            certified_fragility_one(net, *with_mask[static_cast<std::size_t>(i)], epsilon, region);
    double total = 0.0;  // ordered reduction, independent of thread count
    for (double v : per_example) total += v;
    return total / static_cast<double>(per_example.size());
}

}  // namespace gradshield
