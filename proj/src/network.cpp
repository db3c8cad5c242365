#include "gradshield/network.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "gradshield/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "raw float64 array files are little-endian");

namespace gradshield {

using nlohmann::json;

std::string to_string(OutputMode m) {
    return m == OutputMode::SumLogSoftmax ? "sum_log_softmax" : "true_class_logit";
}

std::string to_string(Activation) { return "relu"; }

OutputMode output_mode_from_string(const std::string& s) {
    if (s == "sum_log_softmax") return OutputMode::SumLogSoftmax;
    if (s == "true_class_logit") return OutputMode::TrueClassLogit;
    throw std::runtime_error("unknown output mode: " + s);
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::ReLU;
    throw std::runtime_error("unknown activation: " + s);
}

std::size_t Network::input_width() const { return layers.front().weight.cols(); }
std::size_t Network::output_width() const { return layers.back().weight.rows(); }

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

void Network::validate() const {
    if (layers.empty()) throw DimensionError("network: no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const Layer& l = layers[k];
        if (l.weight.rank() != 2 || l.bias.rank() != 1)
            throw DimensionError("network: layer " + std::to_string(k) + " has bad ranks");
        if (l.weight.rows() != l.bias.size())
            throw DimensionError("network: layer " + std::to_string(k) + " bias width mismatch");
        if (k > 0 && layers[k - 1].weight.rows() != l.weight.cols())
            throw DimensionError("network: layers " + std::to_string(k - 1) + "→" +
                                 std::to_string(k) + " do not compose");
    }
}

Network Network::make_mlp(const std::vector<std::size_t>& widths, Activation act, OutputMode mode,
                          std::uint64_t seed) {
    if (widths.size() < 2) throw DimensionError("make_mlp: need at least input and output widths");
    Network net;
    net.activation = act;
    net.output_mode = mode;
    net.init_seed = seed;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
        Rng rng(mix64(seed, 0x11e7, k));
        const std::size_t fan_in = widths[k];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Layer l;
        l.weight = Tensor({widths[k + 1], widths[k]});
        for (std::size_t i = 0; i < l.weight.size(); ++i) l.weight[i] = rng.uniform(-bound, bound);
        l.bias = Tensor({widths[k + 1]});
        for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] = rng.uniform(-bound, bound);
        net.layers.push_back(std::move(l));
    }
    net.validate();
    return net;
}

ForwardCache forward(const Network& net, const Tensor& x) {
    if (x.rank() != 1 || x.size() != net.input_width())
        throw DimensionError("forward: input width mismatch");
    ForwardCache cache;
    Tensor z = x;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        Tensor zh = add(matvec(net.layers[k].weight, z), net.layers[k].bias);
        if (k + 1 < net.layers.size())
            z = apply_unary(UnaryFn::ReLU, zh);
        else
            z = zh;
        cache.zhat.push_back(std::move(zh));
        cache.z.push_back(z);
    }
    return cache;
}

namespace {

Tensor softmax_dense(const Tensor& z) {
    Tensor s(z.shape());
    double zmax = z[0];
    for (std::size_t i = 1; i < z.size(); ++i) zmax = std::max(zmax, z[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        s[i] = std::exp(z[i] - zmax);
        total += s[i];
    }
    for (std::size_t i = 0; i < z.size(); ++i) s[i] /= total;
    return s;
}

double logsumexp_dense(const Tensor& z) {
    double zmax = z[0];
    for (std::size_t i = 1; i < z.size(); ++i) zmax = std::max(zmax, z[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) total += std::exp(z[i] - zmax);
    return zmax + std::log(total);
}

Tensor output_seed(const Network& net, const Tensor& logits, std::size_t label) {
    if (net.output_mode == OutputMode::TrueClassLogit) {
        if (label >= logits.size())
            throw DimensionError("scalar output: label out of range for true-class-logit mode");
        Tensor d = Tensor::zeros(logits.shape());
        d[label] = 1.0;
        return d;
    }
    // d/dz Σ_j log softmax_j(z) = 1 − C·softmax(z).
    Tensor s = softmax_dense(logits);
    Tensor d(logits.shape());
    const double c = static_cast<double>(logits.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = 1.0 - c * s[i];
    return d;
}

}  // namespace

double scalar_output_value(const Network& net, const Tensor& x, std::size_t label) {
    ForwardCache cache = forward(net, x);
    const Tensor& logits = cache.output();
    if (net.output_mode == OutputMode::TrueClassLogit) {
        if (label >= logits.size())
            throw DimensionError("scalar output: label out of range for true-class-logit mode");
        return logits[label];
    }
    return sum(logits) - static_cast<double>(logits.size()) * logsumexp_dense(logits);
}

Tensor input_gradient(const Network& net, const Tensor& x, std::size_t label) {
    ForwardCache cache = forward(net, x);
    Tensor d = output_seed(net, cache.output(), label);
    for (std::size_t k = net.layers.size(); k-- > 1;) {
        Tensor u = matvec_t(net.layers[k].weight, d);
        d = hadamard(u, apply_unary(UnaryFn::ReLUStep, cache.zhat[k - 1]));
    }
    return matvec_t(net.layers[0].weight, d);
}

// ---- Checkpoint IO ---------------------------------------------------------

void write_f64_array(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed: " + path);
}

Tensor read_f64_array(const std::string& path, const std::vector<std::size_t>& shape) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("missing array file: " + path);
    Tensor t(shape);
    const std::streamsize want = static_cast<std::streamsize>(t.size() * sizeof(double));
    if (in.tellg() != want)
        throw std::runtime_error("array file size does not match manifest shape: " + path);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(t.data()), want);
    if (!in) throw std::runtime_error("read failed: " + path);
    return t;
}

void save_checkpoint(const Network& net, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json manifest;
    manifest["activation"] = to_string(net.activation);
    manifest["output_mode"] = to_string(net.output_mode);
    manifest["seed"] = net.init_seed;
    json layers = json::array();
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        const Layer& l = net.layers[k];
        json jl;
        jl["rows"] = l.weight.rows();
        jl["cols"] = l.weight.cols();
        jl["weight_file"] = "layer" + std::to_string(k) + "_w.f64";
        jl["bias_file"] = "layer" + std::to_string(k) + "_b.f64";
        layers.push_back(jl);
        write_f64_array(dir + "/" + jl["weight_file"].get<std::string>(), l.weight);
        write_f64_array(dir + "/" + jl["bias_file"].get<std::string>(), l.bias);
    }
    manifest["layers"] = layers;
    std::ofstream out(dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
}

Network load_checkpoint(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw std::runtime_error("missing checkpoint manifest: " + dir + "/manifest.json");
    json manifest = json::parse(in);
    Network net;
    net.activation = activation_from_string(manifest.at("activation").get<std::string>());
    net.output_mode = output_mode_from_string(manifest.at("output_mode").get<std::string>());
    net.init_seed = manifest.value("seed", 0ULL);
    for (const json& jl : manifest.at("layers")) {
        const std::size_t rows = jl.at("rows").get<std::size_t>();
        const std::size_t cols = jl.at("cols").get<std::size_t>();
        Layer l;
        l.weight = read_f64_array(dir + "/" + jl.at("weight_file").get<std::string>(), {rows, cols});
        l.bias = read_f64_array(dir + "/" + jl.at("bias_file").get<std::string>(), {rows});
        net.layers.push_back(std::move(l));
    }
    net.validate();
    return net;
}

// ---- Tape bindings ---------------------------------------------------------

TapeNet bind_network(Tape& tape, const Network& net, bool params_require_grad) {
    net.validate();
    TapeNet tn;
    tn.tape = &tape;
    tn.net = &net;
    for (const Layer& l : net.layers) {
        tn.weight.push_back(tape.leaf_ref(l.weight, params_require_grad));
        tn.bias.push_back(tape.leaf_ref(l.bias, params_require_grad));
    }
    return tn;
}

TapeForward tape_forward(const TapeNet& tn, Var x) {
    Tape& t = *tn.tape;
    if (t.val(x).size() != tn.net->input_width())
        throw DimensionError("tape_forward: input width mismatch");
    TapeForward fwd;
    Var z = x;
    const std::size_t depth = tn.weight.size();
    for (std::size_t k = 0; k < depth; ++k) {
        Var zh = t.add(t.matvec(tn.weight[k], z), tn.bias[k]);
        fwd.zhat.push_back(zh);
        z = k + 1 < depth ? t.relu(zh) : zh;
    }
    fwd.logits = z;
    return fwd;
}

Var tape_scalar_output(const TapeNet& tn, const TapeForward& fwd, std::size_t label) {
    Tape& t = *tn.tape;
    if (tn.net->output_mode == OutputMode::TrueClassLogit) {
        if (label >= t.val(fwd.logits).size())
            throw DimensionError("scalar output: label out of range for true-class-logit mode");
        return t.pick(fwd.logits, label);
    }
    const double c = static_cast<double>(t.val(fwd.logits).size());
    return t.sub(t.sum(fwd.logits), t.scale(t.logsumexp(fwd.logits), c));
}

Var tape_input_gradient(const TapeNet& tn, const TapeForward& fwd, std::size_t label) {
    Tape& t = *tn.tape;
    const std::size_t out_width = t.val(fwd.logits).size();
    Var d{-1};
    if (tn.net->output_mode == OutputMode::TrueClassLogit) {
        if (label >= out_width)
            throw DimensionError("input gradient: label out of range for true-class-logit mode");
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
        d = t.mul(u, t.relu_step(fwd.zhat[k - 1]));
    }
    return t.matvec_t(tn.weight[0], d);
}

ParamGrads ParamGrads::zeros_like(const Network& net) {
    ParamGrads g;
    for (const Layer& l : net.layers) {
        g.weight.push_back(Tensor::zeros(l.weight.shape()));
        g.bias.push_back(Tensor::zeros(l.bias.shape()));
    }
    return g;
}

void ParamGrads::axpy(double a, const ParamGrads& other) {
    for (std::size_t k = 0; k < weight.size(); ++k) {
        for (std::size_t i = 0; i < weight[k].size(); ++i) weight[k][i] += a * other.weight[k][i];
        for (std::size_t i = 0; i < bias[k].size(); ++i) bias[k][i] += a * other.bias[k][i];
    }
}

double ParamGrads::sq_norm() const {
    double s = 0.0;
    for (const Tensor& t : weight) s += sumsq(t);
    for (const Tensor& t : bias) s += sumsq(t);
    return s;
}

ParamGrads parameter_gradients(const TapeNet& tn, Var loss) {
    tn.tape->backward(loss);
    ParamGrads g = ParamGrads::zeros_like(*tn.net);
    for (std::size_t k = 0; k < tn.weight.size(); ++k) {
        tn.tape->add_grad_to(tn.weight[k], g.weight[k]);
        tn.tape->add_grad_to(tn.bias[k], g.bias[k]);
    }
    return g;
}

// ---- Finite differences ----------------------------------------------------

namespace {
double rel_err(double a, double f) {
    const double denom = std::max({std::fabs(a), std::fabs(f), 1e-6});
    return std::fabs(a - f) / denom;
}
}  // namespace

FdReport finite_difference_check(const DiffProblem& problem, const Network& net, double tolerance,
                                 double h) {
    FdReport report;
    const ParamGrads analytic = problem.gradient(net);
    Network probe = net;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        for (int which = 0; which < 2; ++which) {
            Tensor& param = which == 0 ? probe.layers[k].weight : probe.layers[k].bias;
            const Tensor& grad = which == 0 ? analytic.weight[k] : analytic.bias[k];
            for (std::size_t i = 0; i < param.size(); ++i) {
                const double keep = param[i];
                param[i] = keep + h;
                const double up = problem.value(probe);
                param[i] = keep - h;
                const double down = problem.value(probe);
                param[i] = keep;
                const double numeric = (up - down) / (2.0 * h);
                const double err = rel_err(grad[i], numeric);
                if (err > report.max_rel_err) {
                    report.max_rel_err = err;
                    report.worst_layer = k;
                    report.worst_is_bias = which == 1;
                    report.worst_index = i;
                }
            }
        }
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

}  // namespace gradshield
