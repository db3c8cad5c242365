#include <doctest.h>

#include "gradshield/train.hpp"

using namespace gradshield;

namespace {

// Two-feature, two-class toy task: class = argmax coordinate.
Dataset toy_dataset(std::size_t n, std::uint64_t seed, int n_groups = 2) {
    Dataset data;
    data.rows = 1;
    data.cols = 4;
    data.n_groups = n_groups;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        AnnotatedExample ex;
        ex.x = Tensor({4});
        for (std::size_t j = 0; j < 4; ++j) ex.x[j] = rng.uniform(0.0, 1.0);
        ex.label = ex.x[0] > ex.x[1] ? 0 : 1;
        ex.group = static_cast<int>(i % static_cast<std::size_t>(n_groups));
        Tensor m = Tensor::zeros({4});
        m[2] = 1.0;
        m[3] = 1.0;
        ex.mask = std::move(m);
        data.examples.push_back(std::move(ex));
    }
    return data;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Network net = Network::make_mlp({3, 2}, Activation::ReLU, OutputMode::SumLogSoftmax, 1);
    Network before = net;
    AdamState state = AdamState::zeros_like(net);
    ParamGrads zero = ParamGrads::zeros_like(net);
    adam_step(net, zero, state, 0.1, 0.9, 0.999, 1e-8);
    for (std::size_t i = 0; i < net.layers[0].weight.size(); ++i)
        CHECK(net.layers[0].weight[i] == before.layers[0].weight[i]);
}

TEST_CASE("adam: first step with constant gradient moves by about lr") {
    Network net = Network::make_mlp({3, 2}, Activation::ReLU, OutputMode::SumLogSoftmax, 2);
    Network before = net;
    AdamState state = AdamState::zeros_like(net);
    ParamGrads g = ParamGrads::zeros_like(net);
    for (std::size_t i = 0; i < g.weight[0].size(); ++i) g.weight[0][i] = 0.37;
    adam_step(net, g, state, 0.01, 0.9, 0.999, 1e-8);
    for (std::size_t i = 0; i < net.layers[0].weight.size(); ++i) {
        const double step = before.layers[0].weight[i] - net.layers[0].weight[i];
        CHECK(step == doctest::Approx(0.01).epsilon(1e-4));
    }
}

TEST_CASE("adam: 100 steps on a convex quadratic strictly decrease the loss after warmup") {
    // Minimize (w - 3)² elementwise through the ParamGrads plumbing.
    Network net;
    net.layers.push_back({Tensor::matrix(1, 1, {0.0}), Tensor::vector({0.0})});
    AdamState state = AdamState::zeros_like(net);
    double prev = 1e300;
    for (int step = 0; step < 100; ++step) {
        const double w = net.layers[0].weight[0];
        const double loss = (w - 3.0) * (w - 3.0);
        if (step > 10) CHECK(loss < prev);
        prev = loss;
        ParamGrads g = ParamGrads::zeros_like(net);
        g.weight[0][0] = 2.0 * (w - 3.0);
        adam_step(net, g, state, 0.05, 0.9, 0.999, 1e-8);
    }
    CHECK(net.layers[0].weight[0] == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("train: lr 0 with lambda = beta = 0 leaves the network at its seeded init") {
    Dataset data = toy_dataset(64, 3);
    TrainConfig cfg;
    cfg.objective.variant = ObjectiveVariant::Erm;
    cfg.learning_rate = 0.0;
    cfg.batch_size = 16;
    cfg.epochs = 2;
    cfg.seed = 4;
    cfg.widths = {4, 6, 2};
    TrainResult result = train(cfg, data);
    Network init = Network::make_mlp(cfg.widths, Activation::ReLU, cfg.output_mode, cfg.seed);
    for (std::size_t k = 0; k < init.depth(); ++k)
        for (std::size_t i = 0; i < init.layers[k].weight.size(); ++i)
            CHECK(result.net.layers[k].weight[i] == init.layers[k].weight[i]);
}

TEST_CASE("train: same seed gives identical checkpoints, different seeds differ") {
    Dataset data = toy_dataset(64, 5);
    TrainConfig cfg;
    cfg.objective.variant = ObjectiveVariant::R3;
    cfg.objective.lambda = 0.1;
    cfg.batch_size = 16;
    cfg.epochs = 2;
    cfg.seed = 6;
    cfg.widths = {4, 6, 2};
    TrainResult a = train(cfg, data);
    TrainResult b = train(cfg, data);
    bool identical = true;
    for (std::size_t k = 0; k < a.net.depth(); ++k)
        for (std::size_t i = 0; i < a.net.layers[k].weight.size(); ++i)
            if (a.net.layers[k].weight[i] != b.net.layers[k].weight[i]) identical = false;
    CHECK(identical);

    cfg.seed = 7;
    TrainResult c = train(cfg, data);
    bool all_same = true;
    for (std::size_t k = 0; k < a.net.depth(); ++k)
        for (std::size_t i = 0; i < a.net.layers[k].weight.size(); ++i)
            if (a.net.layers[k].weight[i] != c.net.layers[k].weight[i]) all_same = false;
    CHECK_FALSE(all_same);
}

TEST_CASE("train: learns the toy task and the log is well-formed") {
    Dataset data = toy_dataset(256, 8);
    TrainConfig cfg;
    cfg.objective.variant = ObjectiveVariant::Erm;
    cfg.learning_rate = 5e-3;
    cfg.batch_size = 32;
    cfg.epochs = 12;
    cfg.seed = 9;
    cfg.widths = {4, 16, 2};
    TrainResult result = train(cfg, data);
    CHECK(result.log.size() == 12);
    CHECK(result.log.back().train_acc > 0.9);
    const std::string csv = train_log_csv(result.log);
    CHECK(csv.find("epoch,ce_loss,reg_loss,wd_loss,train_acc") == 0);
}

TEST_CASE("evaluate: perfect and constant classifiers") {
    Dataset data = toy_dataset(100, 10);
    // Handcrafted perfect net: logits = (x0, x1).
    Network perfect;
    perfect.layers.push_back(
        {Tensor::matrix(2, 4, {1, 0, 0, 0, 0, 1, 0, 0}), Tensor::zeros({2})});
    EvalReport report = evaluate(perfect, data, 0.0);
    CHECK(report.avg_acc == doctest::Approx(1.0));
    CHECK(report.wg_acc == doctest::Approx(1.0));
    CHECK(report.wg_acc <= report.avg_acc);

    // Constant classifier: always class 0.
    Network constant;
    constant.layers.push_back({Tensor::zeros({2, 4}), Tensor::vector({1.0, 0.0})});
    EvalReport creport = evaluate(constant, data, 0.0);
    CHECK(creport.avg_acc < 1.0);
    CHECK(creport.wg_acc <= creport.avg_acc);
}

TEST_CASE("evaluate: kappa is zero for a linear model and epsilon zero") {
    Dataset data = toy_dataset(50, 11);
    Network linear;
    linear.layers.push_back({Tensor::matrix(2, 4, {1, 2, 3, 4, 4, 3, 2, 1}), Tensor::zeros({2})});
    EvalReport at_eps = evaluate(linear, data, 0.5);
    CHECK(at_eps.kappa_masked == 0.0);
    CHECK(at_eps.kappa_core == 0.0);

    Network relu_net = Network::make_mlp({4, 8, 2}, Activation::ReLU, OutputMode::SumLogSoftmax, 12);
    EvalReport zero_eps = evaluate(relu_net, data, 0.0);
    CHECK(zero_eps.kappa_masked == 0.0);
}

TEST_CASE("evaluate: missing group is an error") {
    Dataset data = toy_dataset(10, 13, 2);
    data.n_groups = 5;  // groups 2..4 have no examples
    Network net = Network::make_mlp({4, 8, 2}, Activation::ReLU, OutputMode::SumLogSoftmax, 14);
    CHECK_THROWS(evaluate(net, data, 0.0));
}

TEST_CASE("train: divergence aborts with the offending term named") {
    Dataset data = toy_dataset(32, 15);
    TrainConfig cfg;
    cfg.objective.variant = ObjectiveVariant::Erm;
    cfg.learning_rate = 1e60;  // drive the parameters to overflow
    cfg.batch_size = 8;
    cfg.epochs = 50;
    cfg.seed = 16;
    cfg.widths = {4, 6, 2};
    try {
        train(cfg, data);
        WARN("training survived an absurd learning rate");
    } catch (const TrainDivergence& err) {
        CHECK(std::string(err.what()).find("cross_entropy") != std::string::npos);
    }
}

TEST_CASE("train config json round trip") {
    TrainConfig cfg;
    cfg.objective.variant = ObjectiveVariant::CertR4;
    cfg.objective.lambda = 0.3;
    cfg.objective.epsilon = 1.0;
    cfg.widths = {784, 512, 10};
    cfg.output_mode = OutputMode::TrueClassLogit;
    cfg.epochs = 7;
    cfg.bundle_dir = "somewhere";
    TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.objective.variant == ObjectiveVariant::CertR4);
    CHECK(back.epochs == 7);
    CHECK(back.output_mode == OutputMode::TrueClassLogit);
    CHECK(back.widths == std::vector<std::size_t>{784, 512, 10});
    CHECK(back.bundle_dir == "somewhere");
}
