#include "gradshield/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gradshield {

int worker_count() {
    static int cached = [] {
        int n = 1;
#ifdef _OPENMP
        n = omp_get_max_threads();
#endif
        if (const char* env = std::getenv("GRADSHIELD_THREADS")) {
            int cap = std::atoi(env);
            if (cap > 0 && cap < n) n = cap;
        }
        return n;
    }();
    return cached;
}

namespace {
std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size())
        throw DimensionError("tensor: shape does not match data length");
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
}

Tensor Tensor::vector(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw DimensionError("rows(): tensor is not 2-D");
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw DimensionError("cols(): tensor is not 2-D");
    return shape_[1];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) throw DimensionError(std::string(op) + ": shape mismatch");
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "hadamard");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    return out;
}

Tensor abs(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::fabs(a[i]);
    return out;
}

Tensor emin(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "emin");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] < b[i] ? a[i] : b[i];
    return out;
}

Tensor emax(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "emax");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > b[i] ? a[i] : b[i];
    return out;
}

double sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return s;
}

double sumsq(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
    return s;
}

double dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(const Tensor& a) { return std::sqrt(sumsq(a)); }

double max_abs(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::fabs(a[i]));
    return s;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul: operands must be 2-D");
    if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions disagree");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c({m, n});
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
#pragma omp parallel for schedule(static) num_threads(worker_count())
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        double* crow = cp + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ap[i * k + kk];
            const double* brow = bp + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matvec(const Tensor& w, const Tensor& x) {
    if (w.rank() != 2 || x.rank() != 1) throw DimensionError("matvec: want 2-D · 1-D");
    if (w.cols() != x.size()) throw DimensionError("matvec: inner dimensions disagree");
    const std::size_t m = w.rows(), n = w.cols();
    Tensor y({m});
    const double* wp = w.data();
    const double* xp = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = wp + i * n;
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += row[j] * xp[j];
        y[i] = s;
    }
    return y;
}

Tensor matvec_t(const Tensor& w, const Tensor& d) {
    if (w.rank() != 2 || d.rank() != 1) throw DimensionError("matvec_t: want 2-D · 1-D");
    if (w.rows() != d.size()) throw DimensionError("matvec_t: inner dimensions disagree");
    const std::size_t m = w.rows(), n = w.cols();
    Tensor y({n});
    const double* wp = w.data();
    double* yp = y.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double di = d[i];
        const double* row = wp + i * n;
        for (std::size_t j = 0; j < n; ++j) yp[j] += di * row[j];
    }
    return y;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose: tensor is not 2-D");
    Tensor t({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
    return t;
}

namespace ref {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw DimensionError("ref::matmul: operands must be 2-D");
    if (a.cols() != b.rows()) throw DimensionError("ref::matmul: inner dimensions disagree");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a.at(i, kk);
            for (std::size_t j = 0; j < n; ++j) c.at(i, j) += av * b.at(kk, j);
        }
    return c;
}

Tensor matvec(const Tensor& w, const Tensor& x) {
    if (w.cols() != x.size()) throw DimensionError("ref::matvec: inner dimensions disagree");
    Tensor y({w.rows()});
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) s += w.at(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

Tensor matvec_t(const Tensor& w, const Tensor& d) {
    if (w.rows() != d.size()) throw DimensionError("ref::matvec_t: inner dimensions disagree");
    Tensor y({w.cols()});
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) y[j] += d[i] * w.at(i, j);
    return y;
}

}  // namespace ref

}  // namespace gradshield
