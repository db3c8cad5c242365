#include <doctest.h>

#include "gradshield/interval.hpp"
#include "gradshield/rng.hpp"

using namespace gradshield;

namespace {

IntervalTensor random_interval_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Tensor lo({r, c}), hi({r, c});
    for (std::size_t i = 0; i < lo.size(); ++i) {
        const double a = rng.uniform(-3.0, 3.0);
        const double b = rng.uniform(-3.0, 3.0);
        lo[i] = std::min(a, b);
        hi[i] = std::max(a, b);
    }
    return IntervalTensor(std::move(lo), std::move(hi));
}

Tensor member(const IntervalTensor& box, Rng& rng) {
    Tensor t(box.lower.shape());
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = rng.uniform(box.lower[i], box.upper[i]);
    return t;
}

// Endpoint selection by bitmask: bit i picks upper for element i.
Tensor vertex(const IntervalTensor& box, unsigned bits) {
    Tensor t(box.lower.shape());
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = (bits >> i) & 1u ? box.upper[i] : box.lower[i];
    return t;
}

}  // namespace

TEST_CASE("interval invariants") {
    CHECK_THROWS_AS(IntervalTensor(Tensor::vector({1.0}), Tensor::vector({0.0})), DimensionError);
    CHECK_THROWS_AS(interval_add(IntervalTensor::degenerate(Tensor::vector({1.0})),
                                 IntervalTensor::degenerate(Tensor::vector({1.0, 2.0}))),
                    DimensionError);
}

TEST_CASE("interval matmul: scalar scaling of an interval") {
    IntervalTensor a = IntervalTensor::degenerate(Tensor::matrix(1, 1, {2.0}));
    IntervalTensor b(Tensor::matrix(1, 1, {-1.0}), Tensor::matrix(1, 1, {3.0}));
    IntervalTensor c = interval_matmul(a, b);
    CHECK(c.lower[0] == -2.0);
    CHECK(c.upper[0] == 6.0);
}

TEST_CASE("interval matmul: degenerate operands give the exact product bit-for-bit") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a({3, 4}), b({4, 2});
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-5.0, 5.0);
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-5.0, 5.0);
        IntervalTensor c =
            interval_matmul(IntervalTensor::degenerate(a), IntervalTensor::degenerate(b));
        Tensor exact = matmul(a, b);
        for (std::size_t i = 0; i < exact.size(); ++i) {
            REQUIRE(c.lower[i] == exact[i]);
            REQUIRE(c.upper[i] == exact[i]);
        }
    }
}

TEST_CASE("interval matmul soundness: exhaustive 2x2 vertex enumeration, 500 pairs") {
    Rng rng(500);
    long long violations = 0;
    for (int trial = 0; trial < 500; ++trial) {
        IntervalTensor a = random_interval_matrix(2, 2, rng);
        IntervalTensor b = random_interval_matrix(2, 2, rng);
        IntervalTensor c = interval_matmul(a, b);
        // Bilinear in the entries, so extremes over the box are attained at
        // vertices: check all 2^4 × 2^4 endpoint combinations.
        for (unsigned va = 0; va < 16; ++va) {
            Tensor am = vertex(a, va);
            for (unsigned vb = 0; vb < 16; ++vb) {
                Tensor prod = matmul(am, vertex(b, vb));
                if (!c.contains_with_slack(prod)) ++violations;
            }
        }
    }
    CHECK(violations == 0);
}

TEST_CASE("interval add: endpoint sums and sampled containment") {
    IntervalTensor a(Tensor::vector({0.0}), Tensor::vector({1.0}));
    IntervalTensor b(Tensor::vector({2.0}), Tensor::vector({3.0}));
    IntervalTensor c = interval_add(a, b);
    CHECK(c.lower[0] == 2.0);
    CHECK(c.upper[0] == 4.0);

    Rng rng(33);
    for (int trial = 0; trial < 200; ++trial) {
        IntervalTensor p = random_interval_matrix(3, 3, rng);
        IntervalTensor q = random_interval_matrix(3, 3, rng);
        IntervalTensor s = interval_add(p, q);
        for (int draws = 0; draws < 20; ++draws)
            CHECK(s.contains_with_slack(add(member(p, rng), member(q, rng))));
    }
}

TEST_CASE("interval hadamard: endpoint products and sampled containment") {
    IntervalTensor a(Tensor::vector({-1.0}), Tensor::vector({2.0}));
    IntervalTensor b = IntervalTensor::degenerate(Tensor::vector({3.0}));
    IntervalTensor c = interval_hadamard(a, b);
    CHECK(c.lower[0] == -3.0);
    CHECK(c.upper[0] == 6.0);

    IntervalTensor sym(Tensor::vector({-1.0}), Tensor::vector({1.0}));
    IntervalTensor cc = interval_hadamard(sym, sym);
    CHECK(cc.lower[0] == -1.0);
    CHECK(cc.upper[0] == 1.0);

    Rng rng(44);
    for (int trial = 0; trial < 200; ++trial) {
        IntervalTensor p = random_interval_matrix(2, 5, rng);
        IntervalTensor q = random_interval_matrix(2, 5, rng);
        IntervalTensor s = interval_hadamard(p, q);
        for (int draws = 0; draws < 20; ++draws)
            CHECK(s.contains_with_slack(hadamard(member(p, rng), member(q, rng))));
    }
}

TEST_CASE("monotone activation intervals") {
    IntervalTensor z(Tensor::vector({-2.0}), Tensor::vector({3.0}));
    IntervalTensor relu = interval_monotone_activation(z, UnaryFn::ReLU);
    CHECK(relu.lower[0] == 0.0);
    CHECK(relu.upper[0] == 3.0);
    IntervalTensor step = interval_monotone_activation(z, UnaryFn::ReLUStep);
    CHECK(step.lower[0] == 0.0);
    CHECK(step.upper[0] == 1.0);
    IntervalTensor pos(Tensor::vector({1.0}), Tensor::vector({5.0}));
    IntervalTensor step_pos = interval_monotone_activation(pos, UnaryFn::ReLUStep);
    CHECK(step_pos.lower[0] == 1.0);
    CHECK(step_pos.upper[0] == 1.0);
}

TEST_CASE("monotone widening: widening inputs never shrinks outputs") {
    Rng rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        IntervalTensor a = random_interval_matrix(2, 2, rng);
        IntervalTensor b = random_interval_matrix(2, 2, rng);
        Tensor pad = Tensor::full({2, 2}, rng.uniform(0.0, 0.5));
        IntervalTensor wide_a(sub(a.lower, pad), add(a.upper, pad));
        IntervalTensor narrow = interval_matmul(a, b);
        IntervalTensor wide = interval_matmul(wide_a, b);
        for (std::size_t i = 0; i < narrow.size(); ++i) {
            CHECK(wide.lower[i] <= narrow.lower[i]);
            CHECK(wide.upper[i] >= narrow.upper[i]);
        }
    }
}
