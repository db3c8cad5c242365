#include "gradshield/objectives.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "gradshield/rng.hpp"

namespace gradshield {

using nlohmann::json;

std::string to_string(ObjectiveVariant v) {
    switch (v) {
        case ObjectiveVariant::Erm: return "erm";
        case ObjectiveVariant::R3: return "r3";
        case ObjectiveVariant::SmoothR3: return "smooth_r3";
        case ObjectiveVariant::IbpEx: return "ibp_ex";
        case ObjectiveVariant::IbpExR3: return "ibp_ex_r3";
        case ObjectiveVariant::RandR4: return "rand_r4";
        case ObjectiveVariant::AdvR4: return "adv_r4";
        case ObjectiveVariant::CertR4: return "cert_r4";
    }
    return "?";
}

std::string to_string(RegForm f) {
    switch (f) {
        case RegForm::MaxMaskedNorm: return "max_masked_norm";
        case RegForm::MaxDeviation: return "max_deviation";
        case RegForm::DeviationPlusCenter: return "deviation_plus_center";
    }
    return "?";
}

ObjectiveVariant objective_variant_from_string(const std::string& s) {
    for (ObjectiveVariant v :
         {ObjectiveVariant::Erm, ObjectiveVariant::R3, ObjectiveVariant::SmoothR3,
          ObjectiveVariant::IbpEx, ObjectiveVariant::IbpExR3, ObjectiveVariant::RandR4,
          ObjectiveVariant::AdvR4, ObjectiveVariant::CertR4})
        if (to_string(v) == s) return v;
    throw std::runtime_error("unknown objective variant: " + s);
}

RegForm reg_form_from_string(const std::string& s) {
    for (RegForm f : {RegForm::MaxMaskedNorm, RegForm::MaxDeviation, RegForm::DeviationPlusCenter})
        if (to_string(f) == s) return f;
    throw std::runtime_error("unknown reg form: " + s);
}

void ObjectiveSpec::validate() const {
    if (lambda < 0.0 || lambda_r3 < 0.0) throw std::runtime_error("objective: lambda must be >= 0");
    if (beta < 0.0) throw std::runtime_error("objective: beta must be >= 0");
    if (epsilon < 0.0) throw std::runtime_error("objective: epsilon must be >= 0");
    if (samples < 1) throw std::runtime_error("objective: sample count k must be >= 1");
    if (pgd_iters < 1) throw std::runtime_error("objective: pgd iteration count must be >= 1");
    if (variant == ObjectiveVariant::AdvR4 && epsilon > 0.0 && !(resolved_pgd_step() > 0.0))
        throw std::runtime_error("objective: pgd step alpha must be > 0");
    if (variant == ObjectiveVariant::SmoothR3 && epsilon > 0.0 && !(resolved_noise_sigma() > 0.0))
        throw std::runtime_error("objective: smooth noise sigma must be > 0");
}

std::string ObjectiveSpec::to_json() const {
    json j;
    j["variant"] = to_string(variant);
    j["lambda"] = lambda;
    j["lambda_r3"] = lambda_r3;
    j["beta"] = beta;
    j["epsilon"] = epsilon;
    j["samples"] = samples;
    j["pgd_iters"] = pgd_iters;
    j["pgd_step"] = pgd_step;
    j["noise_sigma"] = noise_sigma;
    j["reg_form"] = to_string(reg_form);
    j["seed"] = seed;
    return j.dump();
}

ObjectiveSpec ObjectiveSpec::from_json(const std::string& text) {
    json j = json::parse(text);
    ObjectiveSpec s;
    s.variant = objective_variant_from_string(j.value("variant", "erm"));
    s.lambda = j.value("lambda", 0.0);
    s.lambda_r3 = j.value("lambda_r3", 0.0);
    s.beta = j.value("beta", 0.0);
    s.epsilon = j.value("epsilon", 0.0);
    s.samples = j.value("samples", 8);
    s.pgd_iters = j.value("pgd_iters", 10);
    s.pgd_step = j.value("pgd_step", 0.0);
    s.noise_sigma = j.value("noise_sigma", 0.0);
    s.reg_form = reg_form_from_string(j.value("reg_form", "deviation_plus_center"));
    s.seed = j.value("seed", 0ULL);
    s.validate();
    return s;
}

namespace {

void count(PassCounter* c, long long f, long long b) {
    if (!c) return;
    c->forward += f;
    c->backward += b;
}

Tensor perturbed(const Tensor& x, const Tensor& offset) { return add(x, offset); }

Var masked_norm(Tape& t, Var v, const Tensor& m) {
    return t.norm2(t.mul(t.constant(m), v));
}

Var masked_sumsq(Tape& t, Var v, const Tensor& m) {
    return t.sumsq(t.mul(t.constant(m), v));
}

// Differentiable interval forward pass: per-layer pre-activation bounds as
// tape nodes, with W and |W| carrying gradients.
struct TapeIntervalForward {
    std::vector<Var> zhat_lo, zhat_hi;
    std::vector<Var> abs_weight;
};

TapeIntervalForward tape_forward_interval(const TapeNet& tn, const Tensor& x_lo,
                                          const Tensor& x_hi) {
    Tape& t = *tn.tape;
    TapeIntervalForward out;
    Var lo = t.constant(x_lo);
    Var hi = t.constant(x_hi);
    const std::size_t depth = tn.weight.size();
    for (std::size_t k = 0; k < depth; ++k) {
        Var absw = tn.abs_weight_cache ? t.abs_cached(tn.weight[k], (*tn.abs_weight_cache)[k])
                                       : t.abs(tn.weight[k]);
        out.abs_weight.push_back(absw);
        Var mu = t.scale(t.add(lo, hi), 0.5);
        Var r = t.scale(t.sub(hi, lo), 0.5);
        Var core = t.add(t.matvec(tn.weight[k], mu), tn.bias[k]);
        Var spread = t.matvec(absw, r);
        Var zl = t.sub(core, spread);
        Var zh = t.add(core, spread);
        out.zhat_lo.push_back(zl);
        out.zhat_hi.push_back(zh);
        if (k + 1 < depth) {
            lo = t.relu(zl);
            hi = t.relu(zh);
        }
    }
    return out;
}

struct TapeInterval {
    Var lo, hi;
};

TapeInterval tape_interval_hadamard(Tape& t, TapeInterval a, TapeInterval b) {
    Var p1 = t.mul(a.lo, b.lo);
    Var p2 = t.mul(a.lo, b.hi);
    Var p3 = t.mul(a.hi, b.lo);
    Var p4 = t.mul(a.hi, b.hi);
    return {t.emin(t.emin(p1, p2), t.emin(p3, p4)), t.emax(t.emax(p1, p2), t.emax(p3, p4))};
}

// Differentiable certified gradient interval [ηL, ηU].
TapeInterval tape_gradient_interval(const TapeNet& tn, const TapeIntervalForward& fwd,
                                    std::size_t label) {
    Tape& t = *tn.tape;
    if (tn.net->output_mode != OutputMode::TrueClassLogit)
        throw DimensionError(
            "cert regularizer: output mode must be true-class-logit for interval propagation");
    const std::size_t out_width = tn.net->output_width();
    if (label >= out_width) throw DimensionError("cert regularizer: label out of range");
    Tensor seed = Tensor::zeros({out_width});
    seed[label] = 1.0;
    Var seed_var = t.constant(std::move(seed));
    TapeInterval d{seed_var, seed_var};
    for (std::size_t k = tn.weight.size(); k-- > 0;) {
        Var dmu = t.scale(t.add(d.lo, d.hi), 0.5);
        Var dr = t.scale(t.sub(d.hi, d.lo), 0.5);
        Var core = t.matvec_t(tn.weight[k], dmu);
        Var spread = t.matvec_t(fwd.abs_weight[k], dr);
        TapeInterval u{t.sub(core, spread), t.add(core, spread)};
        if (k == 0) return u;
        TapeInterval sp{t.relu_step(fwd.zhat_lo[k - 1]), t.relu_step(fwd.zhat_hi[k - 1])};
        d = tape_interval_hadamard(t, u, sp);
    }
    return d;
}

Tensor ball_lower(const Tensor& x, const Tensor& m, double eps) {
    Tensor lo(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) lo[i] = x[i] - eps * m[i];
    return lo;
}

Tensor ball_upper(const Tensor& x, const Tensor& m, double eps) {
    Tensor hi(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) hi[i] = x[i] + eps * m[i];
    return hi;
}

}  // namespace

Var tape_cross_entropy(const TapeNet& tn, const TapeForward& fwd, std::size_t label) {
    Tape& t = *tn.tape;
    if (label >= t.val(fwd.logits).size())
        throw DimensionError("cross_entropy: label out of range");
    return t.sub(t.logsumexp(fwd.logits), t.pick(fwd.logits, label));
}

Var reg_r3(const TapeNet& tn, const Tensor& x, const std::optional<Tensor>& m, std::size_t label,
           PassCounter* counter) {
    Tape& t = *tn.tape;
    if (!m) return t.constant_scalar(0.0);
    TapeForward fwd = tape_forward(tn, t.constant(x));
    Var d0 = tape_input_gradient(tn, fwd, label);
    count(counter, 1, 1);
    return masked_sumsq(t, d0, *m);
}

Var reg_smooth_r3(const TapeNet& tn, const Tensor& x, const std::optional<Tensor>& m,
                  std::size_t label, const std::vector<Tensor>& noise_draws,
                  PassCounter* counter) {
    Tape& t = *tn.tape;
    if (!m) return t.constant_scalar(0.0);
    if (noise_draws.empty()) throw DimensionError("smooth_r3: need at least one noise draw");
    Var acc{-1};
    for (const Tensor& nu : noise_draws) {
        TapeForward fwd = tape_forward(tn, t.constant(perturbed(x, nu)));
        Var d0 = tape_input_gradient(tn, fwd, label);
        count(counter, 1, 1);
        acc = acc.valid() ? t.add(acc, d0) : d0;
    }
    Var mean = t.scale(acc, 1.0 / static_cast<double>(noise_draws.size()));
    return masked_sumsq(t, mean, *m);
}

Var reg_rand_r4(const TapeNet& tn, const Tensor& x, const std::optional<Tensor>& m,
                std::size_t label, const std::vector<Tensor>& ball_draws, RegForm form,
                PassCounter* counter) {
    Tape& t = *tn.tape;
    if (!m) return t.constant_scalar(0.0);
    if (ball_draws.empty()) throw DimensionError("rand_r4: need at least one ball draw");
    TapeForward center_fwd = tape_forward(tn, t.constant(x));
    Var g_center = tape_input_gradient(tn, center_fwd, label);

    // r_0: 0 for the deviation recurrence, the centre sample for masked-norm.
    Var running = form == RegForm::MaxMaskedNorm ? masked_norm(t, g_center, *m)
                                                 : t.constant_scalar(0.0);
    for (const Tensor& xi : ball_draws) {
        TapeForward fwd = tape_forward(tn, t.constant(perturbed(x, xi)));
        Var g_i = tape_input_gradient(tn, fwd, label);
        count(counter, 1, 1);
        Var term = form == RegForm::MaxMaskedNorm ? masked_norm(t, g_i, *m)
                                                  : masked_norm(t, t.sub(g_center, g_i), *m);
        running = t.emax(running, term);
    }
    if (form == RegForm::DeviationPlusCenter)
        running = t.add(running, masked_norm(t, g_center, *m));
    return running;
}

namespace {

// Input gradient with a smoothed σ′ (sigmoid of the scaled pre-activation)
// for the attack's backward pass. A ReLU scalar has a piecewise-constant
// input gradient, so the exact deviation objective offers no ascent
// direction; the smoothed surrogate does. The objective value itself is
// always evaluated with the real activation.
constexpr double kAttackSmoothing = 5.0;

Var smoothed_input_gradient(const TapeNet& tn, const TapeForward& fwd, std::size_t label) {
    Tape& t = *tn.tape;
    const std::size_t out_width = t.val(fwd.logits).size();
    Var d{-1};
    if (tn.net->output_mode == OutputMode::TrueClassLogit) {
        if (label >= out_width) throw DimensionError("input gradient: label out of range");
        Tensor seed = Tensor::zeros({out_width});
        seed[label] = 1.0;
        d = t.constant(std::move(seed));
    } else {
        Var sm = t.softmax(fwd.logits);
        Var ones = t.constant(Tensor::full({out_width}, 1.0));
        d = t.sub(ones, t.scale(sm, static_cast<double>(out_width)));
    }
    for (std::size_t k = tn.weight.size(); k-- > 1;) {
        Var u = t.matvec_t(tn.weight[k], d);
        d = t.mul(u, t.sigmoid(t.scale(fwd.zhat[k - 1], kAttackSmoothing)));
    }
    return t.matvec_t(tn.weight[0], d);
}

}  // namespace

Tensor pgd_attack(const Network& net, const Tensor& x, const Tensor& m, std::size_t label,
                  double epsilon, double step, int iters, RegForm form, PassCounter* counter) {
    const Tensor lo = ball_lower(x, m, epsilon);
    const Tensor hi = ball_upper(x, m, epsilon);
    Tensor g_center;
    if (form != RegForm::MaxMaskedNorm) g_center = input_gradient(net, x, label);
    Tensor x_adv = x;
    Tensor best_point = x;
    double best_value = -1.0;
    for (int it = 0; it < iters; ++it) {
        Tape t;
        TapeNet tn = bind_network(t, net, /*params_require_grad=*/false);
        Var x_leaf = t.leaf(x_adv, /*requires_grad=*/true);
        TapeForward fwd = tape_forward(tn, x_leaf);
        // Exact objective at this iterate (for best-point tracking) and the
        // smoothed surrogate (for the ascent direction) share the forward.
        Var g_true = tape_input_gradient(tn, fwd, label);
        Var exact = form == RegForm::MaxMaskedNorm
                        ? masked_norm(t, g_true, m)
                        : masked_norm(t, t.sub(t.constant(g_center), g_true), m);
        if (t.scalar(exact) > best_value) {
            best_value = t.scalar(exact);
            best_point = x_adv;
        }
        Var g_adv = smoothed_input_gradient(tn, fwd, label);
        Var objective = form == RegForm::MaxMaskedNorm
                            ? masked_norm(t, g_adv, m)
                            : masked_norm(t, t.sub(t.constant(g_center), g_adv), m);
        t.backward(objective);
        count(counter, 2, 2);
        Tensor ascent = t.grad(x_leaf);
        // sgn(0) := +1. The deviation objective starts at its global minimum
        // (the centre) with a zero subgradient; a deterministic kick lets the
        // ascent leave it, and the projection keeps the iterate feasible.
        for (std::size_t i = 0; i < x_adv.size(); ++i) {
            const double s = ascent[i] < 0.0 ? -1.0 : 1.0;
            double v = x_adv[i] + step * s;
            x_adv[i] = std::clamp(v, lo[i], hi[i]);
        }
    }
    // Best visited iterate; a feasible point, so the regularizer it induces
    // still lower-bounds the true inner maximum.
    return best_point;
}

Var reg_adv_r4(const TapeNet& tn, const Tensor& x, const std::optional<Tensor>& m,
               std::size_t label, const ObjectiveSpec& spec,
               const std::optional<Tensor>& frozen_adv_point, PassCounter* counter) {
    Tape& t = *tn.tape;
    if (!m) return t.constant_scalar(0.0);
    Tensor x_adv = frozen_adv_point
                       ? *frozen_adv_point
                       : pgd_attack(*tn.net, x, *m, label, spec.epsilon, spec.resolved_pgd_step(),
                                    spec.pgd_iters, spec.reg_form, counter);
    TapeForward center_fwd = tape_forward(tn, t.constant(x));
    Var g_center = tape_input_gradient(tn, center_fwd, label);
    TapeForward adv_fwd = tape_forward(tn, t.constant(x_adv));
    Var g_adv = tape_input_gradient(tn, adv_fwd, label);
    switch (spec.reg_form) {
        case RegForm::MaxMaskedNorm: return masked_norm(t, g_adv, *m);
        case RegForm::MaxDeviation: return masked_norm(t, t.sub(g_center, g_adv), *m);
        case RegForm::DeviationPlusCenter:
            return t.add(masked_norm(t, t.sub(g_center, g_adv), *m),
                         masked_norm(t, g_center, *m));
    }
    throw DimensionError("adv_r4: unknown reg form");
}

Var reg_cert_r4(const TapeNet& tn, const Tensor& x, const std::optional<Tensor>& m,
                std::size_t label, double epsilon, RegForm form, PassCounter* counter) {
    Tape& t = *tn.tape;
    if (!m) return t.constant_scalar(0.0);
    TapeIntervalForward fwd =
        tape_forward_interval(tn, ball_lower(x, *m, epsilon), ball_upper(x, *m, epsilon));
    TapeInterval eta = tape_gradient_interval(tn, fwd, label);
    count(counter, 2, 2);
    if (form == RegForm::MaxMaskedNorm)
        return masked_norm(t, t.emax(t.abs(eta.lo), t.abs(eta.hi)), *m);

    TapeForward center_fwd = tape_forward(tn, t.constant(x));
    Var g_center = tape_input_gradient(tn, center_fwd, label);
    // |η* − g| per element equals max(|g − ηL|, |g − ηU|).
    Var dev = t.emax(t.abs(t.sub(g_center, eta.lo)), t.abs(t.sub(g_center, eta.hi)));
    Var reg = masked_norm(t, dev, *m);
    if (form == RegForm::DeviationPlusCenter)
        reg = t.add(reg, masked_norm(t, g_center, *m));
    return reg;
}

Var loss_ibp_ex(const TapeNet& tn, const Tensor& x, std::size_t label,
                const std::optional<Tensor>& m, double epsilon, PassCounter* counter) {
    Tape& t = *tn.tape;
    if (label >= tn.net->output_width()) throw DimensionError("ibp_ex: label out of range");
    if (!m) {
        TapeForward fwd = tape_forward(tn, t.constant(x));
        return tape_cross_entropy(tn, fwd, label);
    }
    TapeIntervalForward fwd =
        tape_forward_interval(tn, ball_lower(x, *m, epsilon), ball_upper(x, *m, epsilon));
    count(counter, 2, 0);
    Var z_lo = fwd.zhat_lo.back();
    Var z_hi = fwd.zhat_hi.back();
    Tensor onehot = Tensor::zeros({tn.net->output_width()});
    onehot[label] = 1.0;
    Var pick_true = t.constant(std::move(onehot));
    // Worst case: lower bound for the true class, upper bound elsewhere.
    Var worst = t.add(z_hi, t.mul(pick_true, t.sub(z_lo, z_hi)));
    return t.sub(t.logsumexp(worst), t.pick(worst, label));
}

namespace {

// Randomness / attack point for one example; `draw_seed` fully determines
// the result, so both loss paths agree bit-for-bit.
void example_draws(const ObjectiveSpec& spec, const Network& net, const BatchExample& ex,
                   std::uint64_t draw_seed, std::vector<Tensor>& offsets,
                   std::optional<Tensor>& adv_point, PassCounter* counter) {
    if (!ex.mask) return;
    Rng rng(draw_seed);
    if (spec.variant == ObjectiveVariant::SmoothR3) {
        const double sigma = spec.resolved_noise_sigma();
        for (int s = 0; s < spec.samples; ++s) {
            Tensor nu(ex.x.shape());
            for (std::size_t j = 0; j < nu.size(); ++j) nu[j] = rng.normal(0.0, sigma);
            offsets.push_back(std::move(nu));
        }
    } else if (spec.variant == ObjectiveVariant::RandR4) {
        for (int s = 0; s < spec.samples; ++s) {
            Tensor xi(ex.x.shape());
            for (std::size_t j = 0; j < xi.size(); ++j)
                xi[j] = spec.epsilon * (*ex.mask)[j] * (2.0 * rng.uniform() - 1.0);
            offsets.push_back(std::move(xi));
        }
    } else if (spec.variant == ObjectiveVariant::AdvR4) {
        adv_point = pgd_attack(net, ex.x, *ex.mask, ex.label, spec.epsilon,
                               spec.resolved_pgd_step(), spec.pgd_iters, spec.reg_form, counter);
    }
}

}  // namespace

FrozenDraws make_frozen_draws(const ObjectiveSpec& spec, const Network& net,
                              const std::vector<BatchExample>& batch, std::uint64_t nonce,
                              PassCounter* counter) {
    FrozenDraws draws;
    draws.offsets.resize(batch.size());
    draws.adv_points.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        example_draws(spec, net, batch[i], mix64(spec.seed, nonce, i), draws.offsets[i],
                      draws.adv_points[i], counter);
    return draws;
}

namespace {

// Per-example regularizer dispatch; `draws` must already hold this example's
// randomness where the variant needs any.
Var example_regularizer(const ObjectiveSpec& spec, const TapeNet& tn, const BatchExample& ex,
                        const std::vector<Tensor>& offsets,
                        const std::optional<Tensor>& adv_point, PassCounter* counter) {
    switch (spec.variant) {
        case ObjectiveVariant::Erm: return tn.tape->constant_scalar(0.0);
        case ObjectiveVariant::R3: return reg_r3(tn, ex.x, ex.mask, ex.label, counter);
        case ObjectiveVariant::SmoothR3:
            return reg_smooth_r3(tn, ex.x, ex.mask, ex.label, offsets, counter);
        case ObjectiveVariant::RandR4:
            return reg_rand_r4(tn, ex.x, ex.mask, ex.label, offsets, spec.reg_form, counter);
        case ObjectiveVariant::AdvR4:
            return reg_adv_r4(tn, ex.x, ex.mask, ex.label, spec, adv_point, counter);
        case ObjectiveVariant::CertR4:
            return reg_cert_r4(tn, ex.x, ex.mask, ex.label, spec.epsilon, spec.reg_form, counter);
        case ObjectiveVariant::IbpEx:
        case ObjectiveVariant::IbpExR3:
            return loss_ibp_ex(tn, ex.x, ex.label, ex.mask, spec.epsilon, counter);
    }
    throw DimensionError("unknown objective variant");
}

}  // namespace

Var total_loss(const ObjectiveSpec& spec, const TapeNet& tn,
               const std::vector<BatchExample>& batch, std::uint64_t nonce, PassCounter* counter,
               const FrozenDraws* frozen) {
    spec.validate();
    Tape& t = *tn.tape;
    if (batch.empty()) throw DimensionError("total_loss: empty batch");

    FrozenDraws local;
    if (!frozen && (spec.variant == ObjectiveVariant::SmoothR3 ||
                    spec.variant == ObjectiveVariant::RandR4 ||
                    spec.variant == ObjectiveVariant::AdvR4)) {
        local = make_frozen_draws(spec, *tn.net, batch, nonce,
                                  spec.variant == ObjectiveVariant::AdvR4 ? counter : nullptr);
        frozen = &local;
    }

    std::size_t n_masked = 0;
    for (const BatchExample& ex : batch)
        if (ex.mask) ++n_masked;

    Var ce_sum{-1};
    Var reg_sum{-1};
    Var r3_sum{-1};
    static const std::vector<Tensor> no_offsets;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const BatchExample& ex = batch[i];
        TapeForward fwd = tape_forward(tn, t.constant(ex.x));
        Var ce = tape_cross_entropy(tn, fwd, ex.label);
        ce_sum = ce_sum.valid() ? t.add(ce_sum, ce) : ce;
        if (!ex.mask) continue;
        const std::vector<Tensor>& offsets = frozen ? frozen->offsets[i] : no_offsets;
        const std::optional<Tensor> adv =
            frozen && frozen->adv_points.size() == batch.size() ? frozen->adv_points[i]
                                                                : std::nullopt;
        Var reg = example_regularizer(spec, tn, ex, offsets, adv,
                                      spec.variant == ObjectiveVariant::AdvR4 && adv ? nullptr
                                                                                     : counter);
        reg_sum = reg_sum.valid() ? t.add(reg_sum, reg) : reg;
        if (spec.variant == ObjectiveVariant::IbpExR3) {
            Var r3 = reg_r3(tn, ex.x, ex.mask, ex.label, counter);
            r3_sum = r3_sum.valid() ? t.add(r3_sum, r3) : r3;
        }
    }

    Var loss = t.scale(ce_sum, 1.0 / static_cast<double>(batch.size()));
    if (reg_sum.valid() && spec.lambda > 0.0)
        loss = t.add(loss, t.scale(reg_sum, spec.lambda / static_cast<double>(n_masked)));
    if (r3_sum.valid() && spec.lambda_r3 > 0.0)
        loss = t.add(loss, t.scale(r3_sum, spec.lambda_r3 / static_cast<double>(n_masked)));
    if (spec.beta > 0.0) {
        Var wd{-1};
        for (std::size_t k = 0; k < tn.weight.size(); ++k) {
            Var term = t.add(t.sumsq(tn.weight[k]), t.sumsq(tn.bias[k]));
            wd = wd.valid() ? t.add(wd, term) : term;
        }
        loss = t.add(loss, t.scale(wd, spec.beta));
    }
    return loss;
}

BatchLoss batch_gradients(const ObjectiveSpec& spec, const Network& net,
                          const std::vector<BatchExample>& batch, std::uint64_t nonce) {
    spec.validate();
    if (batch.empty()) throw DimensionError("batch_gradients: empty batch");
    const std::size_t n = batch.size();
    std::size_t n_masked = 0;
    for (const BatchExample& ex : batch)
        if (ex.mask) ++n_masked;
    const double reg_coeff =
        n_masked > 0 && spec.lambda > 0.0 ? spec.lambda / static_cast<double>(n_masked) : 0.0;
    const double r3_coeff =
        n_masked > 0 && spec.lambda_r3 > 0.0 ? spec.lambda_r3 / static_cast<double>(n_masked) : 0.0;
    const double ce_coeff = 1.0 / static_cast<double>(n);

    std::vector<Tensor> abs_weights;
    if (spec.variant == ObjectiveVariant::CertR4 || spec.variant == ObjectiveVariant::IbpEx ||
        spec.variant == ObjectiveVariant::IbpExR3)
        for (const Layer& l : net.layers) abs_weights.push_back(abs(l.weight));

    const int chunks = std::max(1, std::min<int>(worker_count(), static_cast<int>(n)));
    std::vector<ParamGrads> chunk_grads;
    std::vector<double> chunk_ce(static_cast<std::size_t>(chunks), 0.0);
    std::vector<double> chunk_reg(static_cast<std::size_t>(chunks), 0.0);
    std::vector<double> chunk_reg2(static_cast<std::size_t>(chunks), 0.0);
    std::vector<PassCounter> chunk_passes(static_cast<std::size_t>(chunks));
    chunk_grads.reserve(static_cast<std::size_t>(chunks));
    for (int c = 0; c < chunks; ++c) chunk_grads.push_back(ParamGrads::zeros_like(net));

#pragma omp parallel for schedule(static, 1) num_threads(worker_count())
    for (int c = 0; c < chunks; ++c) {
        const std::size_t uc = static_cast<std::size_t>(c);
        const std::size_t begin = n * uc / static_cast<std::size_t>(chunks);
        const std::size_t end = n * (uc + 1) / static_cast<std::size_t>(chunks);
        for (std::size_t i = begin; i < end; ++i) {
            const BatchExample& ex = batch[i];
            PassCounter* counter = &chunk_passes[uc];
            Tape t;
            TapeNet tn = bind_network(t, net);
            if (!abs_weights.empty()) tn.abs_weight_cache = &abs_weights;
            TapeForward fwd = tape_forward(tn, t.constant(ex.x));
            Var ce = tape_cross_entropy(tn, fwd, ex.label);
            Var loss = t.scale(ce, ce_coeff);
            if (ex.mask) {
                std::vector<Tensor> offsets;
                std::optional<Tensor> adv;
                example_draws(spec, net, ex, mix64(spec.seed, nonce, i), offsets, adv, counter);
                Var reg = example_regularizer(spec, tn, ex, offsets, adv,
                                              spec.variant == ObjectiveVariant::AdvR4 ? nullptr
                                                                                      : counter);
                chunk_reg[uc] += t.scalar(reg);
                if (reg_coeff > 0.0) loss = t.add(loss, t.scale(reg, reg_coeff));
                if (spec.variant == ObjectiveVariant::IbpExR3) {
                    Var r3 = reg_r3(tn, ex.x, ex.mask, ex.label, counter);
                    chunk_reg2[uc] += t.scalar(r3);
                    if (r3_coeff > 0.0) loss = t.add(loss, t.scale(r3, r3_coeff));
                }
            }
            chunk_ce[uc] += t.scalar(ce);
            t.backward(loss);
            for (std::size_t k = 0; k < tn.weight.size(); ++k) {
                t.add_grad_to(tn.weight[k], chunk_grads[uc].weight[k]);
                t.add_grad_to(tn.bias[k], chunk_grads[uc].bias[k]);
            }
        }
    }

    BatchLoss out;
    out.grads = ParamGrads::zeros_like(net);
    for (int c = 0; c < chunks; ++c) {
        out.grads.axpy(1.0, chunk_grads[static_cast<std::size_t>(c)]);
        out.ce += chunk_ce[static_cast<std::size_t>(c)];
        out.reg += chunk_reg[static_cast<std::size_t>(c)];
        out.reg2 += chunk_reg2[static_cast<std::size_t>(c)];
        out.passes += chunk_passes[static_cast<std::size_t>(c)];
    }
    out.ce /= static_cast<double>(n);
    out.reg = n_masked > 0 ? out.reg / static_cast<double>(n_masked) : 0.0;
    out.reg2 = n_masked > 0 ? out.reg2 / static_cast<double>(n_masked) : 0.0;

    // Weight decay handled analytically: value β‖θ‖², gradient 2βθ.
    if (spec.beta > 0.0) {
        double sq = 0.0;
        for (std::size_t k = 0; k < net.layers.size(); ++k) {
            sq += sumsq(net.layers[k].weight) + sumsq(net.layers[k].bias);
            for (std::size_t i = 0; i < net.layers[k].weight.size(); ++i)
                out.grads.weight[k][i] += 2.0 * spec.beta * net.layers[k].weight[i];
            for (std::size_t i = 0; i < net.layers[k].bias.size(); ++i)
                out.grads.bias[k][i] += 2.0 * spec.beta * net.layers[k].bias[i];
        }
        out.wd = spec.beta * sq;
    }
    out.total = out.ce + spec.lambda * out.reg + spec.lambda_r3 * out.reg2 + out.wd;
    return out;
}

}  // namespace gradshield
