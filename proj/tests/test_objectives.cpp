#include <doctest.h>

#include <cmath>

#include "gradshield/objectives.hpp"
#include "gradshield/rng.hpp"

using namespace gradshield;

namespace {

Tensor random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t({n});
    for (std::size_t i = 0; i < n; ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

Network linear_net() {
    // Two outputs so cross-entropy style scalars exist; row 0 is (3, -2).
    Network net;
    net.layers.push_back({Tensor::matrix(2, 2, {3.0, -2.0, 1.0, 0.5}), Tensor::vector({1.0, 0.0})});
    net.output_mode = OutputMode::TrueClassLogit;
    return net;
}

Network tiny_relu_net(std::uint64_t seed) {
    return Network::make_mlp({4, 6, 3}, Activation::ReLU, OutputMode::TrueClassLogit, seed);
}

double eval_reg(const Network& net, const ObjectiveSpec& spec, const Tensor& x, const Tensor& m,
                std::size_t y, RegForm form, PassCounter* counter = nullptr,
                std::uint64_t nonce = 1) {
    Tape t;
    TapeNet tn = bind_network(t, net);
    switch (spec.variant) {
        case ObjectiveVariant::RandR4: {
            std::vector<BatchExample> one{BatchExample{x, y, m, 0}};
            FrozenDraws d = make_frozen_draws(spec, net, one, nonce);
            return t.scalar(reg_rand_r4(tn, x, m, y, d.offsets[0], form, counter));
        }
        case ObjectiveVariant::AdvR4: {
            ObjectiveSpec s = spec;
            s.reg_form = form;
            return t.scalar(reg_adv_r4(tn, x, m, y, s, std::nullopt, counter));
        }
        case ObjectiveVariant::CertR4:
            return t.scalar(reg_cert_r4(tn, x, m, y, spec.epsilon, form, counter));
        default: throw std::runtime_error("eval_reg: unsupported variant");
    }
}

std::vector<BatchExample> random_batch(std::size_t n, std::size_t dim, std::size_t classes,
                                       Rng& rng, bool with_masks = true) {
    std::vector<BatchExample> batch;
    for (std::size_t i = 0; i < n; ++i) {
        BatchExample ex;
        ex.x = random_vec(dim, rng, 0.0, 1.0);
        ex.label = rng.uniform_index(classes);
        if (with_masks) {
            Tensor m = Tensor::zeros({dim});
            m[rng.uniform_index(dim)] = 1.0;
            m[rng.uniform_index(dim)] = 1.0;
            ex.mask = std::move(m);
        }
        batch.push_back(std::move(ex));
    }
    return batch;
}

}  // namespace

TEST_CASE("reg_r3: zero mask gives zero, missing mask contributes zero") {
    Network net = tiny_relu_net(1);
    Tape t;
    TapeNet tn = bind_network(t, net);
    Tensor x = Tensor::full({4}, 0.3);
    CHECK(t.scalar(reg_r3(tn, x, Tensor::zeros({4}), 0)) == 0.0);
    CHECK(t.scalar(reg_r3(tn, x, std::nullopt, 0)) == 0.0);
}

TEST_CASE("reg_r3 on a linear model is the squared masked weight row") {
    Network net = linear_net();
    Tape t;
    TapeNet tn = bind_network(t, net);
    Var reg = reg_r3(tn, Tensor::vector({0.2, 0.9}), Tensor::vector({0.0, 1.0}), 0);
    CHECK(t.scalar(reg) == doctest::Approx(4.0));  // (-2)² with m = (0,1)
}

TEST_CASE("reg_r3 gradient matches finite differences on a relu net") {
    Network net = tiny_relu_net(2);
    Rng rng(3);
    Tensor x = random_vec(4, rng);
    Tensor m = Tensor::vector({1.0, 0.0, 1.0, 0.0});
    DiffProblem problem;
    problem.value = [&](const Network& n) {
        return sumsq(hadamard(m, input_gradient(n, x, 1)));
    };
    problem.gradient = [&](const Network& n) {
        Tape t;
        TapeNet tn = bind_network(t, n);
        return parameter_gradients(tn, reg_r3(tn, x, m, 1));
    };
    CHECK(finite_difference_check(problem, net, 1e-5).pass);
}

TEST_CASE("reg_smooth_r3 equals reg_r3 exactly on a linear model") {
    Network net = linear_net();
    Tensor x = Tensor::vector({0.4, -0.3});
    Tensor m = Tensor::vector({1.0, 1.0});
    ObjectiveSpec spec;
    spec.variant = ObjectiveVariant::SmoothR3;
    spec.samples = 5;
    spec.noise_sigma = 0.7;
    spec.seed = 17;
    std::vector<BatchExample> one{BatchExample{x, 0, m, 0}};
    FrozenDraws draws = make_frozen_draws(spec, net, one, 1);

    Tape t;
    TapeNet tn = bind_network(t, net);
    const double smooth = t.scalar(reg_smooth_r3(tn, x, m, 0, draws.offsets[0]));
    const double r3 = t.scalar(reg_r3(tn, x, m, 0));
    CHECK(smooth == doctest::Approx(r3).epsilon(1e-12));
}

TEST_CASE("reg_smooth_r3 approaches reg_r3 as sigma vanishes") {
    Network net = tiny_relu_net(4);
    Rng rng(5);
    Tensor x = random_vec(4, rng);
    Tensor m = Tensor::vector({1.0, 1.0, 0.0, 0.0});
    ObjectiveSpec spec;
    spec.variant = ObjectiveVariant::SmoothR3;
    spec.samples = 4;
    spec.noise_sigma = 1e-7;
    spec.seed = 6;
    std::vector<BatchExample> one{BatchExample{x, 0, m, 0}};
    FrozenDraws draws = make_frozen_draws(spec, net, one, 2);
    Tape t;
    TapeNet tn = bind_network(t, net);
    const double smooth = t.scalar(reg_smooth_r3(tn, x, m, 0, draws.offsets[0]));
    const double r3 = t.scalar(reg_r3(tn, x, m, 0));
    CHECK(smooth == doctest::Approx(r3).epsilon(1e-9));
}

TEST_CASE("reg_smooth_r3 equals a hand-unrolled sample average") {
    Network net = tiny_relu_net(7);
    Rng rng(8);
    Tensor x = random_vec(4, rng);
    Tensor m = Tensor::vector({0.0, 1.0, 1.0, 0.0});
    ObjectiveSpec spec;
    spec.variant = ObjectiveVariant::SmoothR3;
    spec.samples = 6;
    spec.noise_sigma = 0.2;
    spec.seed = 9;
    std::vector<BatchExample> one{BatchExample{x, 2, m, 0}};
    FrozenDraws draws = make_frozen_draws(spec, net, one, 3);

    Tensor mean_grad = Tensor::zeros({4});
    for (const Tensor& nu : draws.offsets[0])
        mean_grad = add(mean_grad, input_gradient(net, add(x, nu), 2));
    mean_grad = scale(mean_grad, 1.0 / 6.0);
    const double expected = sumsq(hadamard(m, mean_grad));

    Tape t;
    TapeNet tn = bind_network(t, net);
    CHECK(t.scalar(reg_smooth_r3(tn, x, m, 2, draws.offsets[0])) ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("linear-model collapse: deviation forms are exactly zero, masked-norm forms exact") {
    Network net = linear_net();
    Tensor x = Tensor::vector({0.3, 0.8});
    Tensor m = Tensor::vector({0.0, 1.0});
    const double masked_row_norm = 2.0;  // ‖m ⊙ (3,-2)‖

    for (ObjectiveVariant v :
         {ObjectiveVariant::RandR4, ObjectiveVariant::AdvR4, ObjectiveVariant::CertR4}) {
        ObjectiveSpec spec;
        spec.variant = v;
        spec.epsilon = 0.7;
        spec.samples = 4;
        spec.pgd_iters = 3;
        spec.seed = 11;
        CHECK(eval_reg(net, spec, x, m, 0, RegForm::MaxDeviation) == 0.0);
        CHECK(eval_reg(net, spec, x, m, 0, RegForm::MaxMaskedNorm) ==
              doctest::Approx(masked_row_norm).epsilon(1e-15));
        CHECK(eval_reg(net, spec, x, m, 0, RegForm::DeviationPlusCenter) ==
              doctest::Approx(masked_row_norm).epsilon(1e-15));
    }
}

TEST_CASE("rand_r4 at epsilon 0 collapses; larger k never decreases the estimate") {
    Network net = tiny_relu_net(12);
    Rng rng(13);
    Tensor x = random_vec(4, rng);
    Tensor m = Tensor::vector({1.0, 1.0, 0.0, 0.0});
    ObjectiveSpec spec;
    spec.variant = ObjectiveVariant::RandR4;
    spec.epsilon = 0.4;
    spec.seed = 14;

    spec.samples = 8;
    const double small_k = eval_reg(net, spec, x, m, 0, RegForm::MaxDeviation, nullptr, 7);
    spec.samples = 512;
    const double large_k = eval_reg(net, spec, x, m, 0, RegForm::MaxDeviation, nullptr, 7);
    // The first 8 draws of the same generator are a prefix of the 512.
    CHECK(large_k >= small_k);
}

TEST_CASE("adv_r4 at epsilon 0: deviation vanishes, masked-norm equals the centre norm") {
    Network net = tiny_relu_net(15);
    Rng rng(16);
    Tensor x = random_vec(4, rng);
    Tensor m = Tensor::vector({1.0, 0.0, 1.0, 0.0});
    ObjectiveSpec spec;
    spec.variant = ObjectiveVariant::AdvR4;
    spec.epsilon = 0.0;
    spec.pgd_iters = 4;
    spec.pgd_step = 0.1;
    CHECK(eval_reg(net, spec, x, m, 1, RegForm::MaxDeviation) == 0.0);
    const double centre = norm2(hadamard(m, input_gradient(net, x, 1)));
    CHECK(eval_reg(net, spec, x, m, 1, RegForm::MaxMaskedNorm) ==
          doctest::Approx(centre).epsilon(1e-12));
}

TEST_CASE("sandwich: rand and adv never exceed cert; grid search never exceeds cert") {
    Rng rng(18);
    int adv_wins = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Network net =
            Network::make_mlp({8, 10, 3}, Activation::ReLU, OutputMode::TrueClassLogit,
                              1000 + static_cast<std::uint64_t>(trial));
        Tensor x = random_vec(8, rng, 0.0, 1.0);
        // Six masked coordinates: high enough that blind sampling thins out.
        Tensor m = Tensor::full({8}, 1.0);
        m[trial % 8] = 0.0;
        m[(trial + 3) % 8] = 0.0;
        const std::size_t y = rng.uniform_index(3);

        ObjectiveSpec spec;
        spec.variant = ObjectiveVariant::RandR4;
        spec.epsilon = 0.3;
        spec.samples = 8;
        spec.seed = 19;
        const double rand_v =
            eval_reg(net, spec, x, m, y, RegForm::MaxDeviation, nullptr, trial);
        spec.variant = ObjectiveVariant::AdvR4;
        spec.pgd_iters = 8;  // equal sample budget k with rand
        spec.pgd_step = 0.15;
        const double adv_v = eval_reg(net, spec, x, m, y, RegForm::MaxDeviation);
        spec.variant = ObjectiveVariant::CertR4;
        const double cert_v = eval_reg(net, spec, x, m, y, RegForm::MaxDeviation);

        CHECK(rand_v <= cert_v + 1e-12);
        CHECK(adv_v <= cert_v + 1e-12);
        if (adv_v >= rand_v - 1e-12) ++adv_wins;

        // Dense grid over the two masked coordinates lower-bounds the true
        // inner max, which cert upper-bounds.
        const Tensor g = input_gradient(net, x, y);
        double grid_max = 0.0;
        std::size_t d1 = 0, d2 = 0;
        for (std::size_t j = 0; j < 8; ++j)
            if (m[j] > 0.0) {
                d1 = d2;
                d2 = j;
            }
        for (int a = 0; a <= 20; ++a)
            for (int b = 0; b <= 20; ++b) {
                Tensor xp = x;
                xp[d1] += spec.epsilon * (2.0 * a / 20.0 - 1.0);
                xp[d2] += spec.epsilon * (2.0 * b / 20.0 - 1.0);
                grid_max = std::max(grid_max, norm2(hadamard(m, sub(g, input_gradient(net, xp, y)))));
            }
        CHECK(grid_max <= cert_v + 1e-12);
    }
    // First-order search should usually beat blind sampling at equal budget.
    CHECK(adv_wins >= 90);
}

TEST_CASE("grid search on a 1-hidden-unit net stays below the cert bound (10^4 points)") {
    Network net;
    net.layers.push_back({Tensor::matrix(1, 2, {1.2, -0.7}), Tensor::vector({0.1})});
    net.layers.push_back({Tensor::matrix(1, 1, {0.9}), Tensor::vector({-0.2})});
    net.output_mode = OutputMode::TrueClassLogit;
    Tensor x = Tensor::vector({0.6, 0.4});
    Tensor m = Tensor::vector({1.0, 1.0});
    const double eps = 0.8;

    ObjectiveSpec spec;
    spec.variant = ObjectiveVariant::CertR4;
    spec.epsilon = eps;
    const double cert_v = eval_reg(net, spec, x, m, 0, RegForm::MaxDeviation);

    const Tensor g = input_gradient(net, x, 0);
    double grid_max = 0.0;
    for (int a = 0; a < 100; ++a)
        for (int b = 0; b < 100; ++b) {
            Tensor xp = x;
            xp[0] += eps * (2.0 * a / 99.0 - 1.0);
            xp[1] += eps * (2.0 * b / 99.0 - 1.0);
            grid_max = std::max(grid_max, norm2(hadamard(m, sub(g, input_gradient(net, xp, 0)))));
        }
    CHECK(grid_max <= cert_v + 1e-12);
    CHECK(cert_v > 0.0);
}

TEST_CASE("rand with a huge sample budget stays within the certified bound") {
    Network net = tiny_relu_net(20);
    Rng rng(21);
    Tensor x = random_vec(4, rng, 0.0, 1.0);
    Tensor m = Tensor::vector({1.0, 0.0, 0.0, 1.0});
    ObjectiveSpec spec;
    spec.variant = ObjectiveVariant::RandR4;
    spec.epsilon = 0.5;
    spec.samples = 10000;
    spec.seed = 22;
    const double rand_v = eval_reg(net, spec, x, m, 0, RegForm::MaxDeviation, nullptr, 5);
    spec.variant = ObjectiveVariant::CertR4;
    const double cert_v = eval_reg(net, spec, x, m, 0, RegForm::MaxDeviation);
    CHECK(rand_v <= cert_v);
}

TEST_CASE("cert_r4 gradient matches finite differences") {
    Network net = tiny_relu_net(23);
    Rng rng(24);
    Tensor x = random_vec(4, rng, 0.0, 1.0);
    Tensor m = Tensor::vector({1.0, 1.0, 0.0, 0.0});
    for (RegForm form :
         {RegForm::MaxDeviation, RegForm::MaxMaskedNorm, RegForm::DeviationPlusCenter}) {
        DiffProblem problem;
        problem.value = [&](const Network& n) {
            Tape t;
            TapeNet tn = bind_network(t, n);
            return t.scalar(reg_cert_r4(tn, x, m, 1, 0.3, form));
        };
        problem.gradient = [&](const Network& n) {
            Tape t;
            TapeNet tn = bind_network(t, n);
            return parameter_gradients(tn, reg_cert_r4(tn, x, m, 1, 0.3, form));
        };
        CHECK(finite_difference_check(problem, net, 1e-4).pass);
    }
}

TEST_CASE("ibp_ex: epsilon 0 equals plain cross-entropy") {
    Network net = tiny_relu_net(25);
    Rng rng(26);
    Tensor x = random_vec(4, rng, 0.0, 1.0);
    Tensor m = Tensor::vector({1.0, 0.0, 1.0, 0.0});
    Tape t;
    TapeNet tn = bind_network(t, net);
    TapeForward fwd = tape_forward(tn, t.constant(x));
    const double plain = t.scalar(tape_cross_entropy(tn, fwd, 2));
    const double worst = t.scalar(loss_ibp_ex(tn, x, 2, m, 0.0));
    CHECK(worst == doctest::Approx(plain).epsilon(1e-12));
    // Missing mask falls back to plain cross-entropy.
    CHECK(t.scalar(loss_ibp_ex(tn, x, 2, std::nullopt, 0.5)) ==
          doctest::Approx(plain).epsilon(1e-12));
}

TEST_CASE("ibp_ex on a linear model shrinks each margin by eps(|W_cj| + |W_yj|)") {
    Network net;
    net.layers.push_back({Tensor::matrix(3, 3, {1.0, -2.0, 0.5, 0.3, 1.5, -1.0, 2.0, 0.2, 0.1}),
                          Tensor::vector({0.1, 0.2, 0.3})});
    net.output_mode = OutputMode::TrueClassLogit;
    Tensor x = Tensor::vector({0.5, 0.6, 0.7});
    const std::size_t y = 1, j = 2;
    Tensor m = Tensor::zeros({3});
    m[j] = 1.0;
    const double eps = 0.25;

    // Inspect the worst-case logits through the interval forward directly.
    MaskedBall ball(x, m, eps);
    LayerBounds bounds = forward_interval(net, ball);
    Tensor centre = add(matvec(net.layers[0].weight, x), net.layers[0].bias);
    Tensor worst_logits(centre.shape());
    for (std::size_t c = 0; c < 3; ++c)
        worst_logits[c] = c == y ? bounds.output.lower[c] : bounds.output.upper[c];
    for (std::size_t c = 0; c < 3; ++c) {
        if (c == y) continue;
        const double margin_centre = centre[y] - centre[c];
        const double margin_worst = worst_logits[y] - worst_logits[c];
        const double shrink = eps * (std::fabs(net.layers[0].weight.at(c, j)) +
                                     std::fabs(net.layers[0].weight.at(y, j)));
        CHECK(margin_centre - margin_worst == doctest::Approx(shrink).epsilon(1e-12));
    }

    // And the op itself equals the cross-entropy of those worst-case logits.
    Tape t;
    TapeNet tn = bind_network(t, net);
    const double op_value = t.scalar(loss_ibp_ex(tn, x, y, m, eps));
    double zmax = worst_logits[0];
    for (std::size_t c = 1; c < 3; ++c) zmax = std::max(zmax, worst_logits[c]);
    double lse = 0.0;
    for (std::size_t c = 0; c < 3; ++c) lse += std::exp(worst_logits[c] - zmax);
    CHECK(op_value == doctest::Approx(zmax + std::log(lse) - worst_logits[y]).epsilon(1e-12));
}

TEST_CASE("ibp_ex worst-case CE dominates sampled cross-entropies") {
    Network net = tiny_relu_net(27);
    Rng rng(28);
    Tensor x = random_vec(4, rng, 0.0, 1.0);
    Tensor m = Tensor::vector({1.0, 1.0, 0.0, 0.0});
    const double eps = 0.4;
    Tape t;
    TapeNet tn = bind_network(t, net);
    const double worst = t.scalar(loss_ibp_ex(tn, x, 1, m, eps));
    MaskedBall ball(x, m, eps);
    Rng sample_rng(29);
    for (int s = 0; s < 10000; ++s) {
        Tensor xp = x;
        for (std::size_t i = 0; i < 4; ++i)
            xp[i] += sample_rng.uniform(-eps * m[i], eps * m[i]);
        ForwardCache cache = forward(net, xp);
        double zmax = cache.output()[0];
        for (std::size_t c = 1; c < 3; ++c) zmax = std::max(zmax, cache.output()[c]);
        double lse = 0.0;
        for (std::size_t c = 0; c < 3; ++c) lse += std::exp(cache.output()[c] - zmax);
        const double ce = zmax + std::log(lse) - cache.output()[1];
        CHECK(ce <= worst + 1e-9);
    }
}

TEST_CASE("total_loss with lambda = beta = 0 is exactly mean cross-entropy") {
    Network net = tiny_relu_net(30);
    Rng rng(31);
    std::vector<BatchExample> batch = random_batch(6, 4, 3, rng);
    ObjectiveSpec spec;
    spec.variant = ObjectiveVariant::CertR4;
    spec.lambda = 0.0;
    spec.beta = 0.0;
    spec.epsilon = 0.2;
    Tape t;
    TapeNet tn = bind_network(t, net);
    const double loss = t.scalar(total_loss(spec, tn, batch, 0));
    double ce = 0.0;
    Tape t2;
    TapeNet tn2 = bind_network(t2, net);
    for (const BatchExample& ex : batch) {
        TapeForward fwd = tape_forward(tn2, t2.constant(ex.x));
        ce += t2.scalar(tape_cross_entropy(tn2, fwd, ex.label));
    }
    CHECK(loss == doctest::Approx(ce / 6.0).epsilon(1e-12));
}

TEST_CASE("total_loss weight decay really decays") {
    Network net = tiny_relu_net(32);
    Rng rng(33);
    std::vector<BatchExample> batch = random_batch(3, 4, 3, rng, false);
    ObjectiveSpec spec;
    spec.beta = 0.1;
    Tape t;
    TapeNet tn = bind_network(t, net);
    const double with_wd = t.scalar(total_loss(spec, tn, batch, 0));
    Network shrunk = net;
    for (Layer& l : shrunk.layers) {
        l.weight = scale(l.weight, 0.5);
        l.bias = scale(l.bias, 0.5);
    }
    Tape t2;
    TapeNet tn2 = bind_network(t2, shrunk);
    const double shrunk_wd = t2.scalar(total_loss(spec, tn2, batch, 0));
    double sq = 0.0, sq_small = 0.0;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        sq += sumsq(net.layers[k].weight) + sumsq(net.layers[k].bias);
        sq_small += sumsq(shrunk.layers[k].weight) + sumsq(shrunk.layers[k].bias);
    }
    // The wd components differ by exactly β(‖θ‖² − ‖θ'‖²) modulo the ce change.
    CHECK(sq_small < sq);
    CHECK(with_wd > 0.0);
    CHECK(shrunk_wd > 0.0);
}

TEST_CASE("total_loss parameter gradients match finite differences for every variant") {
    Rng rng(34);
    std::vector<BatchExample> batch = random_batch(3, 4, 3, rng);
    for (ObjectiveVariant v :
         {ObjectiveVariant::Erm, ObjectiveVariant::R3, ObjectiveVariant::SmoothR3,
          ObjectiveVariant::IbpEx, ObjectiveVariant::IbpExR3, ObjectiveVariant::RandR4,
          ObjectiveVariant::AdvR4, ObjectiveVariant::CertR4}) {
        Network net = tiny_relu_net(40 + static_cast<std::uint64_t>(v));
        ObjectiveSpec spec;
        spec.variant = v;
        spec.lambda = 0.5;
        spec.lambda_r3 = 0.25;
        spec.beta = 0.01;
        spec.epsilon = 0.3;
        spec.samples = 3;
        spec.pgd_iters = 3;
        spec.seed = 35;
        FrozenDraws draws = make_frozen_draws(spec, net, batch, 11);
        DiffProblem problem;
        problem.value = [&](const Network& n) {
            Tape t;
            TapeNet tn = bind_network(t, n);
            return t.scalar(total_loss(spec, tn, batch, 11, nullptr, &draws));
        };
        problem.gradient = [&](const Network& n) {
            Tape t;
            TapeNet tn = bind_network(t, n);
            return parameter_gradients(tn, total_loss(spec, tn, batch, 11, nullptr, &draws));
        };
        FdReport report = finite_difference_check(problem, net, 1e-4);
        INFO("variant ", to_string(v), " max rel err ", report.max_rel_err);
        CHECK(report.pass);
    }
}

TEST_CASE("batch_gradients agrees with the single-tape total_loss") {
    Rng rng(36);
    std::vector<BatchExample> batch = random_batch(5, 4, 3, rng);
    batch[1].mask.reset();  // mixed mask availability
    for (ObjectiveVariant v : {ObjectiveVariant::R3, ObjectiveVariant::RandR4,
                               ObjectiveVariant::CertR4, ObjectiveVariant::IbpExR3}) {
        Network net = tiny_relu_net(50 + static_cast<std::uint64_t>(v));
        ObjectiveSpec spec;
        spec.variant = v;
        spec.lambda = 0.7;
        spec.lambda_r3 = 0.2;
        spec.beta = 0.05;
        spec.epsilon = 0.25;
        spec.samples = 3;
        spec.pgd_iters = 2;
        spec.seed = 37;

        BatchLoss fast = batch_gradients(spec, net, batch, 99);

        Tape t;
        TapeNet tn = bind_network(t, net);
        Var loss = total_loss(spec, tn, batch, 99);
        const double slow = t.scalar(loss);
        ParamGrads slow_grads = parameter_gradients(tn, loss);

        CHECK(fast.total == doctest::Approx(slow).epsilon(1e-12));
        for (std::size_t k = 0; k < slow_grads.weight.size(); ++k)
            for (std::size_t i = 0; i < slow_grads.weight[k].size(); ++i)
                CHECK(fast.grads.weight[k][i] ==
                      doctest::Approx(slow_grads.weight[k][i]).epsilon(1e-10));
    }
}

TEST_CASE("pass counters match the method multiplicities exactly (k, 2k, 2)") {
    Rng rng(38);
    std::vector<BatchExample> batch = random_batch(4, 4, 3, rng);
    const long long n = 4;

    ObjectiveSpec spec;
    spec.epsilon = 0.2;
    spec.samples = 5;
    spec.pgd_iters = 3;
    spec.lambda = 1.0;
    spec.seed = 39;

    spec.variant = ObjectiveVariant::RandR4;
    BatchLoss rand_loss = batch_gradients(spec, tiny_relu_net(60), batch, 1);
    CHECK(rand_loss.passes.forward == n * spec.samples);
    CHECK(rand_loss.passes.backward == n * spec.samples);

    spec.variant = ObjectiveVariant::AdvR4;
    BatchLoss adv_loss = batch_gradients(spec, tiny_relu_net(61), batch, 1);
    CHECK(adv_loss.passes.forward == n * 2 * spec.pgd_iters);
    CHECK(adv_loss.passes.backward == n * 2 * spec.pgd_iters);

    spec.variant = ObjectiveVariant::CertR4;
    BatchLoss cert_loss = batch_gradients(spec, tiny_relu_net(62), batch, 1);
    CHECK(cert_loss.passes.forward == n * 2);
    CHECK(cert_loss.passes.backward == n * 2);

    spec.variant = ObjectiveVariant::Erm;
    BatchLoss erm_loss = batch_gradients(spec, tiny_relu_net(63), batch, 1);
    CHECK(erm_loss.passes.forward == 0);
    CHECK(erm_loss.passes.backward == 0);
}

TEST_CASE("objective spec json round trip and validation") {
    ObjectiveSpec spec;
    spec.variant = ObjectiveVariant::AdvR4;
    spec.lambda = 0.8;
    spec.epsilon = 1.0;
    spec.pgd_step = 0.25;
    spec.seed = 123;
    ObjectiveSpec back = ObjectiveSpec::from_json(spec.to_json());
    CHECK(back.variant == ObjectiveVariant::AdvR4);
    CHECK(back.lambda == 0.8);
    CHECK(back.pgd_step == 0.25);
    CHECK(back.seed == 123);

    ObjectiveSpec bad;
    bad.lambda = -1.0;
    CHECK_THROWS(bad.validate());
    ObjectiveSpec bad2;
    bad2.samples = 0;
    CHECK_THROWS(bad2.validate());
}
