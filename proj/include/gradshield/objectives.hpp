#pragma once

#include <optional>

#include "gradshield/bounds.hpp"
#include "gradshield/network.hpp"

namespace gradshield {

enum class ObjectiveVariant { Erm, R3, SmoothR3, IbpEx, IbpExR3, RandR4, AdvR4, CertR4 };

// max_deviation / max_masked_norm are the two pure inner-maximization
// quantities; deviation_plus_center (the default) adds the centre-point
// masked gradient norm to the max deviation, which upper-bounds the
// masked-norm integrand by the triangle inequality.
enum class RegForm { MaxMaskedNorm, MaxDeviation, DeviationPlusCenter };

std::string to_string(ObjectiveVariant v);
std::string to_string(RegForm f);
ObjectiveVariant objective_variant_from_string(const std::string& s);
RegForm reg_form_from_string(const std::string& s);

struct ObjectiveSpec {
    ObjectiveVariant variant = ObjectiveVariant::Erm;
    double lambda = 0.0;      // MLX regularizer coefficient
    double lambda_r3 = 0.0;   // R³ coefficient for the ibp_ex_r3 combination
    double beta = 0.0;        // weight decay
    double epsilon = 0.0;     // masked-ball radius, input units
    int samples = 8;          // k for rand_r4 / smooth_r3
    int pgd_iters = 10;       // k for adv_r4
    double pgd_step = 0.0;    // α; 0 selects the default ε/4
    double noise_sigma = 0.0; // σ for smooth_r3; 0 selects the default ε/2
    RegForm reg_form = RegForm::DeviationPlusCenter;
    std::uint64_t seed = 0;

    double resolved_pgd_step() const { return pgd_step > 0.0 ? pgd_step : epsilon / 4.0; }
    double resolved_noise_sigma() const { return noise_sigma > 0.0 ? noise_sigma : epsilon / 2.0; }
    void validate() const;

    std::string to_json() const;
    static ObjectiveSpec from_json(const std::string& text);
};

// Forward/backward pass counters, attributed to the inner-maximization work
// of each regularizer (centre-point passes shared with the "right answer"
// term are not attributed): rand +1f/+1b per sample, adv +2f/+2b per PGD
// iteration, cert +2f/+2b per bound propagation, ibp_ex +2f per interval
// forward, r3 +1f/+1b, smooth +1f/+1b per sample. One unit is one standard
// network pass.
struct PassCounter {
    long long forward = 0;
    long long backward = 0;
    void operator+=(const PassCounter& o) {
        forward += o.forward;
        backward += o.backward;
    }
};

// Per-example cross-entropy on the tape: logsumexp(z) − z_y.
Var tape_cross_entropy(const TapeNet& tn, const TapeForward& fwd, std::size_t label);

// ‖m ⊙ ∇_x f(x)‖₂²; missing mask contributes 0.
Var reg_r3(const TapeNet& tn, const Tensor& x, const std::optional<Tensor>& m, std::size_t label,
           PassCounter* counter = nullptr);

// ‖m ⊙ (1/k)Σ_i ∇_x f(x + ν_i)‖₂² with the ν_i supplied by the caller.
Var reg_smooth_r3(const TapeNet& tn, const Tensor& x, const std::optional<Tensor>& m,
                  std::size_t label, const std::vector<Tensor>& noise_draws,
                  PassCounter* counter = nullptr);

// Running max over sampled ball points of the masked gradient quantity;
// gradient flows through the attaining sample only.
Var reg_rand_r4(const TapeNet& tn, const Tensor& x, const std::optional<Tensor>& m,
                std::size_t label, const std::vector<Tensor>& ball_draws, RegForm form,
                PassCounter* counter = nullptr);

// PGD ascent on the masked gradient deviation, projected onto B^m_ε(x).
// Runs against frozen parameters; the returned point is treated as a
// constant by the loss.
Tensor pgd_attack(const Network& net, const Tensor& x, const Tensor& m, std::size_t label,
                  double epsilon, double step, int iters, RegForm form,
                  PassCounter* counter = nullptr);

Var reg_adv_r4(const TapeNet& tn, const Tensor& x, const std::optional<Tensor>& m,
               std::size_t label, const ObjectiveSpec& spec,
               const std::optional<Tensor>& frozen_adv_point = std::nullopt,
               PassCounter* counter = nullptr);

// Certified upper bound via differentiable interval propagation through the
// forward and backward passes.
Var reg_cert_r4(const TapeNet& tn, const Tensor& x, const std::optional<Tensor>& m,
                std::size_t label, double epsilon, RegForm form, PassCounter* counter = nullptr);

// Cross-entropy of the worst-case logit vector (true-class lower bound,
// other-class upper bounds); plain cross-entropy when the mask is missing.
Var loss_ibp_ex(const TapeNet& tn, const Tensor& x, std::size_t label,
                const std::optional<Tensor>& m, double epsilon, PassCounter* counter = nullptr);

struct BatchExample {
    Tensor x;
    std::size_t label = 0;
    std::optional<Tensor> mask;
    int group = 0;
};

// Pre-drawn randomness / attack points so a loss can be re-evaluated as a
// pure function of θ (finite differences, determinism tests).
struct FrozenDraws {
    std::vector<std::vector<Tensor>> offsets;     // per example: noise or ball draws
    std::vector<std::optional<Tensor>> adv_points;  // per example: fixed PGD result
};

FrozenDraws make_frozen_draws(const ObjectiveSpec& spec, const Network& net,
                              const std::vector<BatchExample>& batch, std::uint64_t nonce,
                              PassCounter* counter = nullptr);

// Mean cross-entropy + λ·(variant regularizer, averaged over mask-bearing
// examples) + β‖θ‖₂², as a single scalar on one tape. `nonce` seeds the
// per-batch randomness; passing `frozen` makes the loss a deterministic
// function of θ alone.
Var total_loss(const ObjectiveSpec& spec, const TapeNet& tn,
               const std::vector<BatchExample>& batch, std::uint64_t nonce,
               PassCounter* counter = nullptr, const FrozenDraws* frozen = nullptr);

struct BatchLoss {
    double total = 0.0;
    double ce = 0.0;    // mean cross-entropy
    double reg = 0.0;   // mean regularizer over mask-bearing examples
    double reg2 = 0.0;  // mean secondary (R³) term for ibp_ex_r3
    double wd = 0.0;    // β‖θ‖²
    ParamGrads grads;
    PassCounter passes;
};

// Training-loop path: same loss as total_loss, evaluated with per-example
// tapes fanned out over worker threads and reduced in fixed chunk order.
BatchLoss batch_gradients(const ObjectiveSpec& spec, const Network& net,
                          const std::vector<BatchExample>& batch, std::uint64_t nonce);

}  // namespace gradshield
