#include "gradshield/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "gradshield/bounds.hpp"

namespace gradshield {

using nlohmann::json;

void TrainConfig::validate() const {
    objective.validate();
    if (!(learning_rate >= 0.0)) throw std::runtime_error("train: learning rate must be >= 0");
    if (batch_size == 0) throw std::runtime_error("train: batch size must be positive");
    if (epochs <= 0) throw std::runtime_error("train: epochs must be positive");
    if (widths.size() < 2) throw std::runtime_error("train: need at least two layer widths");
}

std::string TrainConfig::to_json() const {
    json j;
    j["objective"] = json::parse(objective.to_json());
    j["learning_rate"] = learning_rate;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["adam_eps"] = adam_eps;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["seed"] = seed;
    j["widths"] = widths;
    j["output_mode"] = to_string(output_mode);
    j["bundle_dir"] = bundle_dir;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    TrainConfig cfg;
    if (j.contains("objective")) cfg.objective = ObjectiveSpec::from_json(j["objective"].dump());
    cfg.learning_rate = j.value("learning_rate", 1e-3);
    cfg.adam_beta1 = j.value("adam_beta1", 0.9);
    cfg.adam_beta2 = j.value("adam_beta2", 0.999);
    cfg.adam_eps = j.value("adam_eps", 1e-8);
    cfg.batch_size = j.value("batch_size", std::size_t{256});
    cfg.epochs = j.value("epochs", 20);
    cfg.seed = j.value("seed", 0ULL);
    if (j.contains("widths")) cfg.widths = j["widths"].get<std::vector<std::size_t>>();
    cfg.output_mode = output_mode_from_string(j.value("output_mode", "sum_log_softmax"));
    cfg.bundle_dir = j.value("bundle_dir", "");
    cfg.validate();
    return cfg;
}

AdamState AdamState::zeros_like(const Network& net) {
    AdamState s;
    for (const Layer& l : net.layers) {
        s.m_weight.push_back(Tensor::zeros(l.weight.shape()));
        s.v_weight.push_back(Tensor::zeros(l.weight.shape()));
        s.m_bias.push_back(Tensor::zeros(l.bias.shape()));
        s.v_bias.push_back(Tensor::zeros(l.bias.shape()));
    }
    return s;
}

namespace {

void adam_update_tensor(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, double lr,
                        double beta1, double beta2, double eps, double bc1, double bc2) {
    check_same_shape(param, grad, "adam_step");
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        param[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

}  // namespace

void adam_step(Network& net, const ParamGrads& grads, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        adam_update_tensor(net.layers[k].weight, grads.weight[k], state.m_weight[k],
                           state.v_weight[k], lr, beta1, beta2, eps, bc1, bc2);
        adam_update_tensor(net.layers[k].bias, grads.bias[k], state.m_bias[k], state.v_bias[k], lr,
                           beta1, beta2, eps, bc1, bc2);
    }
}

namespace {

const char* nonfinite_term(const BatchLoss& loss) {
    if (!std::isfinite(loss.ce)) return "cross_entropy";
    if (!std::isfinite(loss.reg)) return "regularizer";
    if (!std::isfinite(loss.reg2)) return "r3_term";
    if (!std::isfinite(loss.wd)) return "weight_decay";
    if (!std::isfinite(loss.total)) return "total";
    return nullptr;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& dataset) {
    cfg.validate();
    if (dataset.size() == 0) throw std::runtime_error("train: empty dataset");
    if (cfg.widths.front() != dataset.width())
        throw DimensionError("train: first layer width must equal data dimensionality");

    const auto started = std::chrono::steady_clock::now();
    TrainResult result;
    result.net = Network::make_mlp(cfg.widths, Activation::ReLU, cfg.output_mode, cfg.seed);
    AdamState adam = AdamState::zeros_like(result.net);

    const std::size_t n = dataset.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix64(cfg.seed, 0x5fff, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double ce_sum = 0.0, reg_sum = 0.0, wd_last = 0.0;
        long long correct = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batches) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            std::vector<BatchExample> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const AnnotatedExample& ex = dataset.examples[order[i]];
                batch.push_back(BatchExample{ex.x, ex.label, ex.mask, ex.group});
            }
            const std::uint64_t nonce =
                mix64(static_cast<std::uint64_t>(epoch), 0xba7c, start / cfg.batch_size);
            BatchLoss loss = batch_gradients(cfg.objective, result.net, batch, nonce);
            if (const char* term = nonfinite_term(loss))
                throw TrainDivergence(std::string("training diverged: objective term '") + term +
                                      "' became non-finite at epoch " + std::to_string(epoch));
            adam_step(result.net, loss.grads, adam, cfg.learning_rate, cfg.adam_beta1,
                      cfg.adam_beta2, cfg.adam_eps);
            result.passes += loss.passes;
            ce_sum += loss.ce;
            reg_sum += loss.reg;
            wd_last = loss.wd;

            // Training accuracy measured on the pre-update forward pass.
            Tensor stacked({batch.size(), dataset.width()});
            for (std::size_t i = 0; i < batch.size(); ++i)
                std::copy(batch[i].x.data(), batch[i].x.data() + dataset.width(),
                          stacked.data() + i * dataset.width());
            Tensor logits = batched_logits(result.net, stacked);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                std::size_t best = 0;
                for (std::size_t c = 1; c < logits.cols(); ++c)
                    if (logits.at(i, c) > logits.at(i, best)) best = c;
                if (best == batch[i].label) ++correct;
            }
        }
        LogRow row;
        row.epoch = epoch;
        row.ce = ce_sum / static_cast<double>(batches);
        row.reg = reg_sum / static_cast<double>(batches);
        row.wd = wd_last;
        row.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        result.log.push_back(row);
    }
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

namespace {
std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace

std::string train_log_csv(const std::vector<LogRow>& log) {
    std::string out = "epoch,ce_loss,reg_loss,wd_loss,train_acc\n";
    for (const LogRow& row : log) {
        out += std::to_string(row.epoch) + "," + fmt_double(row.ce) + "," + fmt_double(row.reg) +
               "," + fmt_double(row.wd) + "," + fmt_double(row.train_acc) + "\n";
    }
    return out;
}

Tensor batched_logits(const Network& net, const Tensor& inputs) {
    net.validate();
    if (inputs.rank() != 2 || inputs.cols() != net.input_width())
        throw DimensionError("batched_logits: input width mismatch");
    Tensor z = inputs;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        Tensor zh = matmul(z, transpose(net.layers[k].weight));
        const Tensor& b = net.layers[k].bias;
        for (std::size_t i = 0; i < zh.rows(); ++i)
            for (std::size_t j = 0; j < zh.cols(); ++j) zh.at(i, j) += b[j];
        if (k + 1 < net.layers.size())
            z = apply_unary(UnaryFn::ReLU, zh);
        else
            z = std::move(zh);
    }
    return z;
}

std::vector<std::size_t> predict(const Network& net, const Dataset& dataset) {
    const std::size_t n = dataset.size(), d = dataset.width();
    Tensor stacked({n, d});
    for (std::size_t i = 0; i < n; ++i)
        std::copy(dataset.examples[i].x.data(), dataset.examples[i].x.data() + d,
                  stacked.data() + i * d);
    Tensor logits = batched_logits(net, stacked);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        labels[i] = best;
    }
    return labels;
}

std::string EvalReport::to_json() const {
    json j;
    json groups = json::object();
    for (const auto& [g, acc] : per_group_accuracy) groups[std::to_string(g)] = acc;
    j["per_group_accuracy"] = groups;
    j["avg_acc"] = avg_acc;
    j["wg_acc"] = wg_acc;
    j["kappa_masked"] = kappa_masked;
    j["kappa_core"] = kappa_core;
    j["kappa_ratio_masked_over_core"] = kappa_ratio;
    j["kappa_ratio_core_over_masked"] = kappa_ratio_core_over_masked;
    j["kappa_examples"] = kappa_examples;
    j["forward_count"] = forward_count;
    j["backward_count"] = backward_count;
    j["wall_time"] = wall_time;
    if (!config_echo.empty()) j["config"] = json::parse(config_echo, nullptr, false);
    return j.dump(2);
}

std::string EvalReport::csv_header() {
    return "objective,avg_acc,wg_acc,kappa_ratio,kappa_masked\n";
}

std::string EvalReport::to_csv_row(const std::string& objective) const {
    return objective + "," + fmt_double(avg_acc) + "," + fmt_double(wg_acc) + "," +
           fmt_double(kappa_ratio) + "," + fmt_double(kappa_masked) + "\n";
}

EvalReport evaluate(const Network& net, const Dataset& dataset, double epsilon,
                    std::size_t kappa_max_examples, std::uint64_t kappa_seed) {
    const auto started = std::chrono::steady_clock::now();
    if (dataset.size() == 0) throw std::runtime_error("evaluate: empty dataset");
    EvalReport report;

    const std::vector<std::size_t> predicted = predict(net, dataset);
    std::map<int, std::pair<long long, long long>> tally;  // group → (correct, total)
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto& [good, total] = tally[dataset.examples[i].group];
        total += 1;
        if (predicted[i] == dataset.examples[i].label) good += 1;
    }
    for (int g = 0; g < dataset.n_groups; ++g)
        if (!tally.count(g))
            throw std::runtime_error("evaluate: group " + std::to_string(g) +
                                     " has no examples in the dataset");
    double acc_sum = 0.0, acc_min = 1.0;
    for (const auto& [g, counts] : tally) {
        const double acc =
            static_cast<double>(counts.first) / static_cast<double>(counts.second);
        report.per_group_accuracy[g] = acc;
        acc_sum += acc;
        acc_min = std::min(acc_min, acc);
    }
    report.avg_acc = acc_sum / static_cast<double>(tally.size());
    report.wg_acc = acc_min;

    // κ on a true-class-logit view of the same weights.
    Network logit_view = net;
    logit_view.output_mode = OutputMode::TrueClassLogit;
    std::vector<FragilityExample> masked;
    for (const AnnotatedExample& ex : dataset.examples)
        if (ex.mask) masked.push_back(FragilityExample{ex.x, ex.mask, ex.label});
    if (!masked.empty() && kappa_max_examples > 0 && masked.size() > kappa_max_examples) {
        Rng rng(mix64(kappa_seed, 0xcafe));
        rng.shuffle(masked);
        masked.resize(kappa_max_examples);
    }
    if (!masked.empty()) {
        report.kappa_masked =
            certified_fragility(logit_view, masked, epsilon, FragilityRegion::Masked);
        report.kappa_core = certified_fragility(logit_view, masked, epsilon, FragilityRegion::Core);
        report.kappa_ratio =
            report.kappa_core > 0.0 ? report.kappa_masked / report.kappa_core : 0.0;
        report.kappa_ratio_core_over_masked =
            report.kappa_masked > 0.0 ? report.kappa_core / report.kappa_masked : 0.0;
        report.kappa_examples = masked.size();
    }
    report.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace gradshield
