#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gradshield/bounds.hpp"
#include "gradshield/data.hpp"
#include "gradshield/train.hpp"

using namespace gradshield;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open file: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& text) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << text;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json parse_config_file(const std::string& path) {
    json j = json::parse(slurp(path), nullptr, false);
    if (j.is_discarded()) throw UsageError("config is not valid JSON: " + path);
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    const json& body = j.contains("train") ? j.at("train") : j;
    return TrainConfig::from_json(body.dump());
}

Dataset load_bundle_checked(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "manifest.json"))
        throw UsageError("missing dataset bundle: " + dir);
    return read_bundle(dir);
}

// ---- gen-decoy ---------------------------------------------------------------

struct GenDecoyArgs {
    std::string mnist_dir;
    std::string out;
    std::size_t patch_size = 4;
    std::uint64_t seed = 0;
    double mask_keep_ratio = 1.0;
    std::string corrupt_kind = "none";
    double corrupt_ratio = 0.0;
};

void run_gen_decoy(const GenDecoyArgs& args) {
    const std::string train_images = args.mnist_dir + "/train-images-idx3-ubyte";
    const std::string train_labels = args.mnist_dir + "/train-labels-idx1-ubyte";
    const std::string test_images = args.mnist_dir + "/t10k-images-idx3-ubyte";
    const std::string test_labels = args.mnist_dir + "/t10k-labels-idx1-ubyte";
    for (const std::string& p : {train_images, train_labels, test_images, test_labels})
        if (!fs::exists(p)) throw UsageError("missing IDX file: " + p);

    RawDataset train_raw = load_idx(train_images, train_labels);
    RawDataset test_raw = load_idx(test_images, test_labels);

    DecoyConfig cfg;
    cfg.patch_size = args.patch_size;
    cfg.seed = args.seed;

    Rng train_rng(mix64(args.seed, 0x7a1));
    Dataset train = inject_decoy(train_raw, cfg, Split::Train, train_rng);
    Rng test_rng(mix64(args.seed, 0x7e5));
    Dataset test = inject_decoy(test_raw, cfg, Split::Test, test_rng);

    if (args.mask_keep_ratio < 1.0) {
        Rng sub_rng(mix64(args.seed, 0x5ab));
        train = subsample_masks(std::move(train), args.mask_keep_ratio, sub_rng);
    }
    if (args.corrupt_kind != "none" && args.corrupt_ratio > 0.0) {
        Rng corrupt_rng(mix64(args.seed, 0xc0b));
        train = corrupt_masks(std::move(train), corrupt_kind_from_string(args.corrupt_kind),
                              args.corrupt_ratio, corrupt_rng);
    }
    write_bundle(train, args.out + "/train");
    write_bundle(test, args.out + "/test");
    std::cout << "wrote " << train.size() << " train examples (" << train.masked_count()
              << " masks) and " << test.size() << " test examples under " << args.out << "\n";
}

// ---- train ---------------------------------------------------------------------

void run_train(const TrainConfig& cfg, const std::string& out_dir) {
    Dataset data = load_bundle_checked(cfg.bundle_dir);
    TrainResult result = train(cfg, data);
    save_checkpoint(result.net, out_dir + "/checkpoint");
    spit(out_dir + "/train_log.csv", train_log_csv(result.log));
    json meta;
    meta["config"] = json::parse(cfg.to_json());
    meta["forward_count"] = result.passes.forward;
    meta["backward_count"] = result.passes.backward;
    meta["wall_seconds"] = result.wall_seconds;
    spit(out_dir + "/train_meta.json", meta.dump(2) + "\n");
    std::cout << "checkpoint written to " << out_dir << "/checkpoint (final train acc "
              << fmt(result.log.back().train_acc) << ")\n";
}

// ---- eval ----------------------------------------------------------------------

void run_eval(const std::string& checkpoint, const std::string& bundle, double epsilon,
              const std::string& out_dir, const std::string& objective_name,
              std::size_t kappa_max) {
    if (!fs::exists(fs::path(checkpoint) / "manifest.json"))
        throw UsageError("missing checkpoint: " + checkpoint);
    Network net = load_checkpoint(checkpoint);
    Dataset data = load_bundle_checked(bundle);
    EvalReport report = evaluate(net, data, epsilon, kappa_max);
    spit(out_dir + "/report.json", report.to_json() + "\n");
    spit(out_dir + "/report.csv", EvalReport::csv_header() + report.to_csv_row(objective_name));
    std::cout << "avg_acc " << fmt(report.avg_acc) << " wg_acc " << fmt(report.wg_acc)
              << " kappa_ratio " << fmt(report.kappa_ratio) << "\n";
}

// ---- certify -------------------------------------------------------------------

void run_certify(const std::string& checkpoint, const std::string& bundle, double epsilon,
                 const std::string& out_dir, std::size_t max_examples) {
    if (!fs::exists(fs::path(checkpoint) / "manifest.json"))
        throw UsageError("missing checkpoint: " + checkpoint);
    Network net = load_checkpoint(checkpoint);
    net.output_mode = OutputMode::TrueClassLogit;
    Dataset data = load_bundle_checked(bundle);

    std::string csv = "example_id,kappa_masked,kappa_core,delta_star\n";
    double sum_masked = 0.0, sum_core = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const AnnotatedExample& ex = data.examples[i];
        if (!ex.mask) continue;
        if (max_examples > 0 && counted >= max_examples) break;
        FragilityExample fx{ex.x, ex.mask, ex.label};
        const double km = certified_fragility_one(net, fx, epsilon, FragilityRegion::Masked);
        const double kc = certified_fragility_one(net, fx, epsilon, FragilityRegion::Core);
        // δ*: largest |η*| entry over the masked region.
        MaskedBall ball(ex.x, *ex.mask, epsilon);
        GradientInterval gi = gradient_interval(net, ball, ex.label);
        Tensor eta = worst_case_gradient(gi, input_gradient(net, ex.x, ex.label));
        double delta_star = 0.0;
        for (std::size_t p = 0; p < eta.size(); ++p)
            if ((*ex.mask)[p] > 0.0) delta_star = std::max(delta_star, std::fabs(eta[p]));
        csv += std::to_string(i) + "," + fmt(km) + "," + fmt(kc) + "," + fmt(delta_star) + "\n";
        sum_masked += km;
        sum_core += kc;
        ++counted;
    }
    if (counted == 0) throw UsageError("certify: bundle has no mask-bearing examples: " + bundle);
    spit(out_dir + "/certify.csv", csv);
    json summary;
    summary["examples"] = counted;
    summary["epsilon"] = epsilon;
    summary["kappa_masked_mean"] = sum_masked / static_cast<double>(counted);
    summary["kappa_core_mean"] = sum_core / static_cast<double>(counted);
    summary["kappa_ratio_masked_over_core"] =
        sum_core > 0.0 ? sum_masked / sum_core : 0.0;
    summary["kappa_ratio_core_over_masked"] =
        sum_masked > 0.0 ? sum_core / sum_masked : 0.0;
    spit(out_dir + "/certify_summary.json", summary.dump(2) + "\n");
    std::cout << "certified " << counted << " examples; kappa_masked mean "
              << fmt(sum_masked / static_cast<double>(counted)) << "\n";
}

// ---- ablate --------------------------------------------------------------------

struct AblateCell {
    std::string objective;
    double mask_ratio = 1.0;
    double data_ratio = 1.0;
    double weight_decay = -1.0;  // -1 → keep config value
    std::string corrupt_kind = "none";
    double corrupt_ratio = 0.0;
    int layers = -1;  // -1 → keep config widths

    std::string coord() const {
        return objective + "|m=" + std::to_string(mask_ratio) + "|d=" + std::to_string(data_ratio) +
               "|wd=" + std::to_string(weight_decay) + "|ck=" + corrupt_kind +
               "|cr=" + std::to_string(corrupt_ratio) + "|L=" + std::to_string(layers);
    }
};

void run_ablate(const json& config, const std::string& out_dir) {
    if (!config.contains("ablate")) throw UsageError("ablate: config needs an \"ablate\" object");
    const json& ab = config.at("ablate");
    TrainConfig base = train_config_from_json(config);
    Dataset full_train = load_bundle_checked(base.bundle_dir);
    const std::string default_test =
        (fs::path(base.bundle_dir).parent_path() / "test").string();
    const std::string test_bundle = ab.value("test_bundle", default_test);
    Dataset test = load_bundle_checked(test_bundle);

    std::vector<std::string> objectives =
        ab.value("objectives", std::vector<std::string>{to_string(base.objective.variant)});
    std::vector<double> mask_ratios = ab.value("mask_ratios", std::vector<double>{1.0});
    std::vector<double> data_ratios = ab.value("data_ratios", std::vector<double>{1.0});
    std::vector<double> weight_decays = ab.value("weight_decays", std::vector<double>{-1.0});
    std::vector<std::string> corrupt_kinds =
        ab.value("corrupt_kinds", std::vector<std::string>{"none"});
    std::vector<double> corrupt_ratios = ab.value("corrupt_ratios", std::vector<double>{0.0});
    std::vector<int> layer_counts = ab.value("layer_counts", std::vector<int>{-1});
    const bool scale_wd = ab.value("scale_wd_with_mask_ratio", true);
    for (const auto& grid : {mask_ratios, data_ratios, weight_decays, corrupt_ratios})
        if (grid.empty()) throw UsageError("ablate: grids must be non-empty where requested");
    if (objectives.empty() || corrupt_kinds.empty() || layer_counts.empty())
        throw UsageError("ablate: grids must be non-empty where requested");

    std::vector<AblateCell> cells;
    for (const std::string& obj : objectives)
        for (double mr : mask_ratios)
            for (double dr : data_ratios)
                for (double wd : weight_decays)
                    for (const std::string& ck : corrupt_kinds)
                        for (double cr : corrupt_ratios)
                            for (int lc : layer_counts) {
                                if (ck == "none" && cr > 0.0) continue;
                                if (ck != "none" && cr == 0.0) continue;
                                cells.push_back(
                                    AblateCell{obj, mr, dr, wd, ck, cr, lc});
                            }

    std::string csv =
        "objective,mask_ratio,data_ratio,weight_decay,corrupt_kind,corrupt_ratio,layers,seed,"
        "status,train_acc,avg_acc,wg_acc,kappa_masked,kappa_ratio\n";
    for (std::size_t cell_idx = 0; cell_idx < cells.size(); ++cell_idx) {
        const AblateCell& cell = cells[cell_idx];
        TrainConfig cfg = base;
        cfg.objective.variant = objective_variant_from_string(cell.objective);
        if (cfg.objective.variant == ObjectiveVariant::CertR4)
            cfg.output_mode = OutputMode::TrueClassLogit;
        if (cell.weight_decay >= 0.0) cfg.objective.beta = cell.weight_decay;
        if (scale_wd) cfg.objective.beta *= cell.mask_ratio;
        if (cell.layers > 0) {
            const std::size_t hidden = base.widths.size() > 2 ? base.widths[1] : 512;
            cfg.widths = {base.widths.front()};
            for (int l = 0; l < cell.layers; ++l) cfg.widths.push_back(hidden);
            cfg.widths.push_back(base.widths.back());
        }
        const std::uint64_t cell_seed = mix64(base.seed, std::hash<std::string>{}(cell.coord()));
        cfg.seed = cell_seed;
        cfg.objective.seed = cell_seed;

        std::string status = "ok";
        double train_acc = 0.0, avg = 0.0, wg = 0.0, km = 0.0, kr = 0.0;
        try {
            Dataset cell_data = full_train;
            if (cell.data_ratio < 1.0) {
                Rng rng(mix64(cell_seed, 0xda7a));
                std::vector<std::size_t> order(cell_data.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                rng.shuffle(order);
                const std::size_t keep = static_cast<std::size_t>(
                    cell.data_ratio * static_cast<double>(cell_data.size()));
                Dataset subset;
                subset.rows = cell_data.rows;
                subset.cols = cell_data.cols;
                subset.n_groups = cell_data.n_groups;
                subset.provenance = cell_data.provenance + " | data_ratio subset";
                for (std::size_t i = 0; i < keep; ++i)
                    subset.examples.push_back(cell_data.examples[order[i]]);
                cell_data = std::move(subset);
            }
            if (cell.mask_ratio < 1.0) {
                Rng rng(mix64(cell_seed, 0x3a5c));
                cell_data = subsample_masks(std::move(cell_data), cell.mask_ratio, rng);
            }
            if (cell.corrupt_kind != "none") {
                Rng rng(mix64(cell_seed, 0xc0bb));
                cell_data = corrupt_masks(std::move(cell_data),
                                          corrupt_kind_from_string(cell.corrupt_kind),
                                          cell.corrupt_ratio, rng);
            }
            TrainResult result = train(cfg, cell_data);
            train_acc = result.log.back().train_acc;
            EvalReport report = evaluate(result.net, test, cfg.objective.epsilon, 500, cell_seed);
            avg = report.avg_acc;
            wg = report.wg_acc;
            km = report.kappa_masked;
            kr = report.kappa_ratio;

            const std::string cell_dir = out_dir + "/cells/" + std::to_string(cell_idx);
            spit(cell_dir + "/report.json", report.to_json() + "\n");
        } catch (const std::exception& err) {
            status = std::string("failed: ") + err.what();
        }
        csv += cell.objective + "," + fmt(cell.mask_ratio) + "," + fmt(cell.data_ratio) + "," +
               fmt(cell.weight_decay) + "," + cell.corrupt_kind + "," + fmt(cell.corrupt_ratio) +
               "," + std::to_string(cell.layers) + "," + std::to_string(cell_seed) + "," + status +
               "," + fmt(train_acc) + "," + fmt(avg) + "," + fmt(wg) + "," + fmt(km) + "," +
               fmt(kr) + "\n";
        std::cout << "cell " << cell.coord() << " → " << status << " wg=" << fmt(wg) << "\n";
    }
    spit(out_dir + "/ablate.csv", csv);
}

// ---- gradcheck -----------------------------------------------------------------

int run_gradcheck(std::uint64_t seed, double tolerance, bool corrupt) {
    Rng rng(seed);
    std::vector<BatchExample> batch;
    for (int i = 0; i < 3; ++i) {
        BatchExample ex;
        ex.x = Tensor({5});
        for (std::size_t j = 0; j < 5; ++j) ex.x[j] = rng.uniform(0.0, 1.0);
        ex.label = rng.uniform_index(3);
        Tensor m = Tensor::zeros({5});
        m[i] = 1.0;
        m[(i + 2) % 5] = 1.0;
        ex.mask = std::move(m);
        batch.push_back(std::move(ex));
    }

    bool all_pass = true;
    for (ObjectiveVariant v :
         {ObjectiveVariant::Erm, ObjectiveVariant::R3, ObjectiveVariant::SmoothR3,
          ObjectiveVariant::IbpEx, ObjectiveVariant::IbpExR3, ObjectiveVariant::RandR4,
          ObjectiveVariant::AdvR4, ObjectiveVariant::CertR4}) {
        Network net = Network::make_mlp({5, 7, 3}, Activation::ReLU, OutputMode::TrueClassLogit,
                                        mix64(seed, static_cast<std::uint64_t>(v)));
        ObjectiveSpec spec;
        spec.variant = v;
        spec.lambda = 0.6;
        spec.lambda_r3 = 0.3;
        spec.beta = 0.01;
        spec.epsilon = 0.3;
        spec.samples = 3;
        spec.pgd_iters = 3;
        spec.seed = seed;
        FrozenDraws draws = make_frozen_draws(spec, net, batch, 17);
        DiffProblem problem;
        problem.value = [&](const Network& n) {
            Tape t;
            TapeNet tn = bind_network(t, n);
            return t.scalar(total_loss(spec, tn, batch, 17, nullptr, &draws));
        };
        problem.gradient = [&](const Network& n) {
            Tape t;
            TapeNet tn = bind_network(t, n);
            ParamGrads g = parameter_gradients(tn, total_loss(spec, tn, batch, 17, nullptr, &draws));
            if (corrupt) g.weight[0][0] += 1e-3;
            return g;
        };
        FdReport report = finite_difference_check(problem, net, tolerance);
        std::cout << to_string(v) << ": max_rel_err " << fmt(report.max_rel_err) << " at layer "
                  << report.worst_layer << (report.worst_is_bias ? " bias[" : " weight[")
                  << report.worst_index << "] → " << (report.pass ? "pass" : "FAIL") << "\n";
        all_pass = all_pass && report.pass;
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"explanation-constrained training with certified input-gradient bounds"};
    app.require_subcommand(1);

    auto* gen_digits = app.add_subcommand(
        "gen-digits", "write a seeded synthetic digit corpus in IDX format");
    std::string gd_out = "digits";
    std::size_t gd_train = 10000, gd_test = 10000;
    std::uint64_t gd_seed = 0;
    gen_digits->add_option("--out", gd_out, "output directory");
    gen_digits->add_option("--train-count", gd_train, "train examples");
    gen_digits->add_option("--test-count", gd_test, "test examples");
    gen_digits->add_option("--seed", gd_seed, "generator seed");

    auto* gen_decoy = app.add_subcommand("gen-decoy", "build decoy train/test bundles from IDX");
    GenDecoyArgs gd;
    gen_decoy->add_option("--mnist-dir", gd.mnist_dir, "directory with the 4 IDX files")
        ->required();
    gen_decoy->add_option("--out", gd.out, "output directory")->required();
    gen_decoy->add_option("--patch-size", gd.patch_size, "decoy patch side in pixels");
    gen_decoy->add_option("--seed", gd.seed, "seed");
    gen_decoy->add_option("--mask-keep-ratio", gd.mask_keep_ratio, "fraction of masks kept");
    gen_decoy->add_option("--corrupt-kind", gd.corrupt_kind,
                          "none|misposition|shift|shrink|dilation");
    gen_decoy->add_option("--corrupt-ratio", gd.corrupt_ratio, "fraction of masks corrupted");

    auto* train_cmd = app.add_subcommand("train", "train a checkpoint from a run config");
    std::string tr_config, tr_out = "run", tr_bundle, tr_objective;
    std::int64_t tr_epochs = -1, tr_seed = -1;
    train_cmd->add_option("--config", tr_config, "run config JSON")->required();
    train_cmd->add_option("--out", tr_out, "output directory");
    train_cmd->add_option("--bundle", tr_bundle, "override bundle dir");
    train_cmd->add_option("--objective", tr_objective, "override objective variant");
    train_cmd->add_option("--epochs", tr_epochs, "override epochs");
    train_cmd->add_option("--seed", tr_seed, "override seed");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a bundle");
    std::string ev_checkpoint, ev_bundle, ev_out = "eval", ev_name = "model";
    double ev_eps = 1.0;
    std::size_t ev_kappa_max = 1000;
    eval_cmd->add_option("--checkpoint", ev_checkpoint)->required();
    eval_cmd->add_option("--bundle", ev_bundle)->required();
    eval_cmd->add_option("--epsilon", ev_eps, "ball radius for kappa");
    eval_cmd->add_option("--out", ev_out);
    eval_cmd->add_option("--objective-name", ev_name, "label for the CSV row");
    eval_cmd->add_option("--kappa-max", ev_kappa_max, "kappa subsample cap (0 = all)");

    auto* certify_cmd = app.add_subcommand("certify", "per-example certified fragility report");
    std::string ce_checkpoint, ce_bundle, ce_out = "certify";
    double ce_eps = 1.0;
    std::size_t ce_max = 0;
    certify_cmd->add_option("--checkpoint", ce_checkpoint)->required();
    certify_cmd->add_option("--bundle", ce_bundle)->required();
    certify_cmd->add_option("--epsilon", ce_eps);
    certify_cmd->add_option("--out", ce_out);
    certify_cmd->add_option("--max-examples", ce_max, "cap (0 = all mask-bearing)");

    auto* ablate_cmd = app.add_subcommand("ablate", "run a config-driven sweep grid");
    std::string ab_config, ab_out = "ablate";
    ablate_cmd->add_option("--config", ab_config)->required();
    ablate_cmd->add_option("--out", ab_out);

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference audit of every objective");
    std::uint64_t gc_seed = 1;
    double gc_tol = 1e-4;
    bool gc_corrupt = false;
    gradcheck_cmd->add_option("--seed", gc_seed);
    gradcheck_cmd->add_option("--tolerance", gc_tol);
    gradcheck_cmd->add_flag("--corrupt-gradient", gc_corrupt,
                            "test hook: perturb one analytic gradient");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (gen_digits->parsed()) {
            RawDataset train_raw = synth_digits(gd_train, mix64(gd_seed, 0x7121));
            RawDataset test_raw = synth_digits(gd_test, mix64(gd_seed, 0x7e57));
            fs::create_directories(gd_out);
            write_idx_images(gd_out + "/train-images-idx3-ubyte", train_raw.images, 28, 28);
            write_idx_labels(gd_out + "/train-labels-idx1-ubyte", train_raw.labels);
            write_idx_images(gd_out + "/t10k-images-idx3-ubyte", test_raw.images, 28, 28);
            write_idx_labels(gd_out + "/t10k-labels-idx1-ubyte", test_raw.labels);
            std::cout << "wrote " << gd_train << "+" << gd_test << " IDX digits to " << gd_out
                      << "\n";
        } else if (gen_decoy->parsed()) {
            run_gen_decoy(gd);
        } else if (train_cmd->parsed()) {
            TrainConfig cfg = train_config_from_json(parse_config_file(tr_config));
            if (!tr_bundle.empty()) cfg.bundle_dir = tr_bundle;
            if (!tr_objective.empty())
                cfg.objective.variant = objective_variant_from_string(tr_objective);
            if (tr_epochs > 0) cfg.epochs = static_cast<int>(tr_epochs);
            if (tr_seed >= 0) {
                cfg.seed = static_cast<std::uint64_t>(tr_seed);
                cfg.objective.seed = cfg.seed;
            }
            if (cfg.objective.variant == ObjectiveVariant::CertR4)
                cfg.output_mode = OutputMode::TrueClassLogit;
            run_train(cfg, tr_out);
        } else if (eval_cmd->parsed()) {
            run_eval(ev_checkpoint, ev_bundle, ev_eps, ev_out, ev_name, ev_kappa_max);
        } else if (certify_cmd->parsed()) {
            run_certify(ce_checkpoint, ce_bundle, ce_eps, ce_out, ce_max);
        } else if (ablate_cmd->parsed()) {
            run_ablate(parse_config_file(ab_config), ab_out);
        } else if (gradcheck_cmd->parsed()) {
            return run_gradcheck(gc_seed, gc_tol, gc_corrupt);
        }
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const FormatError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
