#include <doctest.h>

#include "gradshield/rng.hpp"
#include "gradshield/tensor.hpp"

using namespace gradshield;

namespace {
Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t({r, c});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

Tensor random_vector(std::size_t n, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t({n});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}
}  // namespace

TEST_CASE("tensor shape bookkeeping") {
    Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.at(1, 2) == 6.0);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), DimensionError);
}

TEST_CASE("elementwise ops check shapes eagerly") {
    Tensor a = Tensor::vector({1, 2});
    Tensor b = Tensor::vector({1, 2, 3});
    CHECK_THROWS_AS(add(a, b), DimensionError);
    CHECK_THROWS_AS(hadamard(a, b), DimensionError);
    CHECK_THROWS_AS(matmul(Tensor::matrix(2, 2, {1, 2, 3, 4}), Tensor::matrix(3, 1, {1, 2, 3})),
                    DimensionError);
}

TEST_CASE("parallel matmul is bit-identical to the serial reference") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.uniform_index(40);
        const std::size_t k = 1 + rng.uniform_index(40);
        const std::size_t n = 1 + rng.uniform_index(40);
        Tensor a = random_matrix(m, k, rng);
        Tensor b = random_matrix(k, n, rng);
        Tensor fast = matmul(a, b);
        Tensor slow = ref::matmul(a, b);
        REQUIRE(fast.same_shape(slow));
        for (std::size_t i = 0; i < fast.size(); ++i) REQUIRE(fast[i] == slow[i]);
    }
}

TEST_CASE("matvec kernels agree with the serial reference") {
    Rng rng(11);
    Tensor w = random_matrix(33, 21, rng);
    Tensor x = random_vector(21, rng);
    Tensor d = random_vector(33, rng);
    Tensor y1 = matvec(w, x), y2 = ref::matvec(w, x);
    Tensor t1 = matvec_t(w, d), t2 = ref::matvec_t(w, d);
    for (std::size_t i = 0; i < y1.size(); ++i) REQUIRE(y1[i] == y2[i]);
    for (std::size_t i = 0; i < t1.size(); ++i) REQUIRE(t1[i] == t2[i]);

    // matvec through the 2-D kernel as a column product.
    Tensor xcol({x.size(), 1}, x.storage());
    Tensor prod = matmul(w, xcol);
    for (std::size_t i = 0; i < y1.size(); ++i) REQUIRE(y1[i] == prod[i]);
}

TEST_CASE("transpose round trip") {
    Rng rng(3);
    Tensor a = random_matrix(5, 9, rng);
    Tensor tt = transpose(transpose(a));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == tt[i]);
}

TEST_CASE("reductions") {
    Tensor a = Tensor::vector({3.0, -4.0});
    CHECK(sum(a) == -1.0);
    CHECK(sumsq(a) == 25.0);
    CHECK(norm2(a) == 5.0);
    CHECK(max_abs(a) == 4.0);
    CHECK(dot(a, Tensor::vector({2.0, 1.0})) == 2.0);
}
