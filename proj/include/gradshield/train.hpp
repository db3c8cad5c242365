#pragma once

#include <map>

#include "gradshield/data.hpp"
#include "gradshield/objectives.hpp"

namespace gradshield {

class TrainDivergence : public std::runtime_error {
public:
    explicit TrainDivergence(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
    ObjectiveSpec objective;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 256;
    int epochs = 20;
    std::uint64_t seed = 0;
    std::vector<std::size_t> widths = {784, 512, 10};
    OutputMode output_mode = OutputMode::SumLogSoftmax;
    std::string bundle_dir;

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

// First/second-moment state per parameter tensor, plus the step counter.
struct AdamState {
    std::vector<Tensor> m_weight, v_weight, m_bias, v_bias;
    long long step = 0;

    static AdamState zeros_like(const Network& net);
};

// Standard Adam update with bias correction; deterministic.
void adam_step(Network& net, const ParamGrads& grads, AdamState& state, double lr, double beta1,
               double beta2, double eps);

struct LogRow {
    int epoch = 0;
    double ce = 0.0;
    double reg = 0.0;
    double wd = 0.0;
    double train_acc = 0.0;
};

struct TrainResult {
    Network net;
    std::vector<LogRow> log;
    PassCounter passes;
    double wall_seconds = 0.0;
};

TrainResult train(const TrainConfig& cfg, const Dataset& dataset);

std::string train_log_csv(const std::vector<LogRow>& log);

// Batched forward over stacked inputs (N×D) via the matmul kernels; returns
// logits (N×C).
Tensor batched_logits(const Network& net, const Tensor& inputs);

std::vector<std::size_t> predict(const Network& net, const Dataset& dataset);

struct EvalReport {
    std::map<int, double> per_group_accuracy;
    double avg_acc = 0.0;  // macro mean over groups
    double wg_acc = 0.0;   // min over groups
    double kappa_masked = 0.0;
    double kappa_core = 0.0;
    double kappa_ratio = 0.0;             // κ_m / κ_{1−m}
    double kappa_ratio_core_over_masked = 0.0;
    std::size_t kappa_examples = 0;
    long long forward_count = 0;
    long long backward_count = 0;
    double wall_time = 0.0;
    std::string config_echo;

    std::string to_json() const;
    // objective, avg_acc, wg_acc, kappa_ratio, kappa_masked
    std::string to_csv_row(const std::string& objective) const;
    static std::string csv_header();
};

// Group accuracies plus certified fragility (κ over masked and core regions,
// true-class-logit view of the checkpoint). kappa_max_examples caps the κ
// subsample (0 = all mask-bearing examples); the subsample is seeded.
EvalReport evaluate(const Network& net, const Dataset& dataset, double epsilon,
                    std::size_t kappa_max_examples = 1000, std::uint64_t kappa_seed = 0);

}  // namespace gradshield
