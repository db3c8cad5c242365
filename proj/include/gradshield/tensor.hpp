#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace gradshield {

// Thrown when operand shapes do not compose. Shape errors are programmer
// errors and are checked eagerly at every op boundary.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Worker count used by the OpenMP kernels and batch loops. Defaults to the
// hardware thread count, capped by the GRADSHIELD_THREADS environment
// variable when set.
int worker_count();

// Dense row-major tensor of 64-bit floats. Rank 0 is a scalar (size 1),
// rank 1 a vector, rank 2 a matrix. Values are immutable by convention once
// an operation has produced them; all kernels return fresh tensors.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);
    static Tensor vector(std::vector<double> v);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool is_scalar() const { return data_.size() == 1 && shape_.size() <= 1; }

    std::size_t rows() const;
    std::size_t cols() const;

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

// Elementwise kernels.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor abs(const Tensor& a);
Tensor emin(const Tensor& a, const Tensor& b);
Tensor emax(const Tensor& a, const Tensor& b);

// Reductions.
double sum(const Tensor& a);
double sumsq(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);
double max_abs(const Tensor& a);

// matmul(A, B): (m×k)·(k×n), OpenMP-parallel over output rows. Each output
// element is owned by exactly one thread and accumulated in increasing k,
// so results are bit-identical to the serial reference for any thread count.
Tensor matmul(const Tensor& a, const Tensor& b);

// y = W·x for W (m×n), x length n.
Tensor matvec(const Tensor& w, const Tensor& x);

// y = Wᵀ·d for W (m×n), d length m.
Tensor matvec_t(const Tensor& w, const Tensor& d);

Tensor transpose(const Tensor& a);

// Serial reference kernels, kept for testing and benchmarking against the
// OpenMP versions.
namespace ref {
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matvec(const Tensor& w, const Tensor& x);
Tensor matvec_t(const Tensor& w, const Tensor& d);
}  // namespace ref

}  // namespace gradshield
