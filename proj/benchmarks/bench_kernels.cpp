// Compares the OpenMP kernels against the serial reference implementations
// and reports the batch-gradient throughput at a few sizes.

#include <chrono>
#include <cstdio>

#include "gradshield/interval.hpp"
#include "gradshield/objectives.hpp"
#include "gradshield/rng.hpp"

using namespace gradshield;

namespace {

double seconds(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Tensor t({r, c});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

template <typename F>
double time_best_of(int reps, F&& f) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, seconds(t0));
    }
    return best;
}

void bench_matmul(std::size_t n) {
    Rng rng(n);
    Tensor a = random_matrix(n, n, rng);
    Tensor b = random_matrix(n, n, rng);
    volatile double sink = 0.0;
    const double serial = time_best_of(3, [&] { sink += ref::matmul(a, b)[0]; });
    const double parallel = time_best_of(3, [&] { sink += matmul(a, b)[0]; });
    const double gflop = 2.0 * static_cast<double>(n) * n * n / 1e9;
    std::printf("matmul %4zu^2      serial %8.4fs (%6.2f GF/s)   omp %8.4fs (%6.2f GF/s)   x%.2f\n",
                n, serial, gflop / serial, parallel, gflop / parallel, serial / parallel);
}

void bench_interval_matmul(std::size_t n) {
    Rng rng(n + 1);
    Tensor lo = random_matrix(n, n, rng);
    Tensor width = random_matrix(n, n, rng);
    for (std::size_t i = 0; i < width.size(); ++i) width[i] = std::abs(width[i]);
    IntervalTensor a(lo, add(lo, width));
    IntervalTensor b = a;
    volatile double sink = 0.0;
    const double parallel = time_best_of(3, [&] { sink += interval_matmul(a, b).lower[0]; });
    std::printf("interval matmul %4zu^2 (Rump, 4 products)           omp %8.4fs\n", n, parallel);
}

void bench_batch_gradients(ObjectiveVariant variant, const char* name) {
    Network net = Network::make_mlp({784, 512, 10}, Activation::ReLU, OutputMode::TrueClassLogit, 3);
    Rng rng(9);
    std::vector<BatchExample> batch;
    for (int i = 0; i < 32; ++i) {
        BatchExample ex;
        ex.x = Tensor({784});
        for (std::size_t j = 0; j < 784; ++j) ex.x[j] = rng.uniform(0.0, 1.0);
        ex.label = rng.uniform_index(10);
        Tensor m = Tensor::zeros({784});
        for (int p = 0; p < 16; ++p) m[rng.uniform_index(784)] = 1.0;
        ex.mask = std::move(m);
        batch.push_back(std::move(ex));
    }
    ObjectiveSpec spec;
    spec.variant = variant;
    spec.lambda = 0.1;
    spec.epsilon = 1.0;
    spec.samples = 4;
    spec.pgd_iters = 4;
    const auto t0 = std::chrono::steady_clock::now();
    BatchLoss loss = batch_gradients(spec, net, batch, 1);
    const double dt = seconds(t0);
    std::printf("batch_gradients %-9s 32 examples  %8.4fs  (%6.1f ex/s)  loss %.4f\n", name, dt,
                32.0 / dt, loss.total);
}

}  // namespace

int main() {
    std::printf("workers: %d\n", worker_count());
    bench_matmul(256);
    bench_matmul(512);
    bench_interval_matmul(256);
    bench_batch_gradients(ObjectiveVariant::Erm, "erm");
    bench_batch_gradients(ObjectiveVariant::R3, "r3");
    bench_batch_gradients(ObjectiveVariant::RandR4, "rand_r4");
    bench_batch_gradients(ObjectiveVariant::AdvR4, "adv_r4");
    bench_batch_gradients(ObjectiveVariant::CertR4, "cert_r4");
    bench_batch_gradients(ObjectiveVariant::IbpEx, "ibp_ex");
    return 0;
}
