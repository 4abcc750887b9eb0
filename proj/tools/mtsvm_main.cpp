// Command-line front end: generate / train / predict / evaluate / study.
// Configuration comes from one JSON file per command plus a few override
// flags; all randomness is seeded from the config, never from the system.
// Exit codes: 0 success, 2 invalid input or config, 3 numerical
// non-convergence or failed study assertions.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtsvm/experiments.hpp"
#include "mtsvm/textio.hpp"

using nlohmann::json;

namespace {

struct CliError : std::runtime_error {
    int code;
    CliError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CliError(2, "cannot open config file: " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw CliError(2, path + ": " + e.what());
    }
}

const json& require_key(const json& j, const std::string& key) {
    if (!j.contains(key)) throw CliError(2, "config: missing key: " + key);
    return j.at(key);
}

double require_double(const json& j, const std::string& key) {
    const json& v = require_key(j, key);
    if (!v.is_number()) throw CliError(2, "config: invalid value for key: " + key);
    return v.get<double>();
}

long require_long(const json& j, const std::string& key) {
    const json& v = require_key(j, key);
    if (!v.is_number_integer()) throw CliError(2, "config: invalid value for key: " + key);
    return v.get<long>();
}

std::string require_string(const json& j, const std::string& key) {
    const json& v = require_key(j, key);
    if (!v.is_string()) throw CliError(2, "config: invalid value for key: " + key);
    return v.get<std::string>();
}

double get_double(const json& j, const std::string& key, double fallback) {
    return j.contains(key) ? require_double(j, key) : fallback;
}

long get_long(const json& j, const std::string& key, long fallback) {
    return j.contains(key) ? require_long(j, key) : fallback;
}

Eigen::VectorXd vector_from(const json& v, const std::string& key) {
    if (!v.is_array() || v.empty()) throw CliError(2, "config: invalid value for key: " + key);
    Eigen::VectorXd out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw CliError(2, "config: invalid value for key: " + key);
        out[static_cast<long>(i)] = v[i].get<double>();
    }
    return out;
}

mtsvm::GeneratorSpec generator_from_json(const json& j) {
    mtsvm::GeneratorSpec gen;
    const std::string kind = require_string(j, "kind");
    gen.dim = static_cast<int>(require_long(j, "dim"));
    if (kind == "flip-noise-threshold") {
        gen.kind = mtsvm::GeneratorKind::FlipNoiseThreshold;
        gen.lo = get_double(j, "lo", -1.0);
        gen.hi = get_double(j, "hi", 1.0);
        gen.threshold = require_double(j, "threshold");
        gen.flip_prob = require_double(j, "flip_prob");
    } else if (kind == "smooth-logistic") {
        gen.kind = mtsvm::GeneratorKind::SmoothLogistic;
        gen.lo = get_double(j, "lo", -1.0);
        gen.hi = get_double(j, "hi", 1.0);
        gen.slope = require_double(j, "slope");
        gen.offset = require_double(j, "offset");
    } else if (kind == "gaussian-mixture") {
        gen.kind = mtsvm::GeneratorKind::GaussianMixture;
        gen.pos_weight = require_double(j, "pos_weight");
        gen.mu_pos = vector_from(require_key(j, "mu_pos"), "mu_pos");
        gen.mu_neg = vector_from(require_key(j, "mu_neg"), "mu_neg");
        gen.noise_sigma = require_double(j, "noise_sigma");
    } else {
        throw CliError(2, "config: invalid value for key: kind (got '" + kind + "')");
    }
    return gen;
}

mtsvm::SamplingSpec spec_from_json(const json& j) {
    mtsvm::SamplingSpec spec;
    spec.task_probs = vector_from(require_key(j, "task_probs"), "task_probs");
    const json& tasks = require_key(j, "tasks");
    if (!tasks.is_array() || tasks.empty()) throw CliError(2, "config: invalid value for key: tasks");
    for (const auto& t : tasks) spec.per_task.push_back(generator_from_json(t));
    spec.seed = static_cast<std::uint64_t>(get_long(j, "seed", 0));
    return spec;
}

// Library validation errors (which name the offending field) map to exit 2.
int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const CliError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

int cmd_generate(const std::string& config_path, long seed_override, const std::string& out_override) {
    const json cfg = load_json(config_path);
    mtsvm::SamplingSpec spec = spec_from_json(require_key(cfg, "spec"));
    if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
    const long n = require_long(cfg, "n");
    std::string out = out_override.empty() ? require_string(cfg, "out") : out_override;

    const mtsvm::TaskDataset ds = mtsvm::sample_dataset(spec, n);
    mtsvm::save_csv(ds, out);
    std::cerr << "wrote " << out << "\n";
    std::cout << "RESULT n=" << ds.n() << " tasks=" << ds.task_count << " redraws=" << ds.redraws
              << " counts=";
    for (std::size_t t = 0; t < ds.weights.counts.size(); ++t)
        std::cout << (t ? ";" : "") << ds.weights.counts[t];
    std::cout << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_override) {
    const json cfg = load_json(config_path);
    const std::string data_path = require_string(cfg, "data");
    const std::string model_out =
        out_override.empty() ? require_string(cfg, "model_out") : out_override;

    const double lambda1 = require_double(cfg, "lambda1");
    const double lambda2 = require_double(cfg, "lambda2");
    if (!(lambda1 > 0.0)) throw CliError(2, "config: invalid value for key: lambda1 (must be > 0)");
    if (!(lambda2 > 0.0)) throw CliError(2, "config: invalid value for key: lambda2 (must be > 0)");
    mtsvm::GaussianKernel kernel{get_double(cfg, "sigma", 1.0)};
    if (!(kernel.sigma > 0.0)) throw CliError(2, "config: invalid value for key: sigma (must be > 0)");
    mtsvm::TrainOptions opt;
    opt.tol = get_double(cfg, "tol", 1e-6);
    opt.max_passes = get_long(cfg, "max_passes", 10000);
    opt.shuffle_seed = static_cast<std::uint64_t>(get_long(cfg, "shuffle_seed", 1));

    const mtsvm::TaskDataset ds = mtsvm::load_csv(data_path);
    if (ds.n() == 0) throw CliError(2, data_path + ": no training rows");
    const auto reg = mtsvm::Regularization::from_lambda(lambda1, lambda2);
    const mtsvm::TrainedModel model = mtsvm::train(ds, reg, kernel, opt);
    mtsvm::save_model(model, model_out);

    const Eigen::MatrixXd inner = mtsvm::task_inner_products(model);
    for (int t = 1; t <= model.task_count; ++t) {
        const double norm = std::sqrt(std::max(0.0, inner(t - 1, t - 1)));
        const double bound = static_cast<double>(model.weights.total) /
                             std::sqrt(reg.rho1 * static_cast<double>(model.weights.counts[t - 1]));
        std::cerr << "task " << t << ": |f|_K=" << norm << " bound=" << bound << "\n";
    }
    std::cout << "RESULT objective=" << mtsvm::fmt17(model.dual_objective)
              << " kkt=" << mtsvm::fmt17(model.kkt_residual) << " passes=" << model.dual.passes
              << " support=" << model.support_count() << " converged=" << (model.converged ? 1 : 0)
              << "\n";
    if (!model.converged) {
        std::cerr << "error: training did not converge within max_passes (model written anyway)\n";
        return 3;
    }
    return 0;
}

int cmd_predict(const std::string& config_path, const std::string& out_override) {
    const json cfg = load_json(config_path);
    const mtsvm::TrainedModel model = mtsvm::load_model(require_string(cfg, "model"));
    const mtsvm::TaskDataset ds = mtsvm::load_csv(require_string(cfg, "data"));
    const std::string out_path = out_override.empty() ? require_string(cfg, "out") : out_override;

    if (ds.n() > 0 && ds.dim() != model.dim)
        throw CliError(2, "dataset dimension " + std::to_string(ds.dim()) +
                              " does not match model dimension " + std::to_string(model.dim));
    for (long i = 0; i < ds.n(); ++i)
        if (ds.task[i] < 1 || ds.task[i] > model.task_count)
            throw CliError(2, "row " + std::to_string(i + 1) + ": unknown task id " +
                                  std::to_string(ds.task[i]));

    Eigen::VectorXd scores = Eigen::VectorXd::Zero(ds.n());
    for (int t = 1; t <= model.task_count && ds.n() > 0; ++t) {
        const auto rows = ds.rows_for_task(t);
        if (rows.empty()) continue;
        Eigen::MatrixXd xs(static_cast<long>(rows.size()), ds.dim());
        for (std::size_t r = 0; r < rows.size(); ++r)
            xs.row(static_cast<long>(r)) = ds.x.row(rows[r]);
        const Eigen::VectorXd s = mtsvm::predict_scores(model, xs, t);
        for (std::size_t r = 0; r < rows.size(); ++r) scores[rows[r]] = s[static_cast<long>(r)];
    }

    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw CliError(2, "cannot open for writing: " + out_path);
    out << "task,score,label\n";
    long correct = 0;
    for (long i = 0; i < ds.n(); ++i) {
        const int label = scores[i] >= 0.0 ? 1 : -1;
        correct += label == ds.y[i];
        out << ds.task[i] << ',' << mtsvm::fmt17(scores[i]) << ',' << label << "\n";
    }
    if (!out) throw CliError(2, "write failed: " + out_path);
    std::cout << "RESULT rows=" << ds.n();
    if (ds.n() > 0)
        std::cout << " accuracy="
                  << mtsvm::fmt17(static_cast<double>(correct) / static_cast<double>(ds.n()));
    std::cout << "\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path, long seed_override) {
    const json cfg = load_json(config_path);
    const mtsvm::TrainedModel model = mtsvm::load_model(require_string(cfg, "model"));
    mtsvm::SamplingSpec spec = spec_from_json(require_key(cfg, "spec"));
    const long n_mc = get_long(cfg, "n_mc", 200000);
    std::uint64_t seed = static_cast<std::uint64_t>(get_long(cfg, "seed", 0));
    if (seed_override >= 0) seed = static_cast<std::uint64_t>(seed_override);
    if (model.task_count != spec.task_count())
        throw CliError(2, "model has " + std::to_string(model.task_count) +
                              " tasks but spec declares " + std::to_string(spec.task_count()));

    const auto scorers = mtsvm::model_scorers(model);
    double u_star = 0.0;
    std::vector<double> bayes;
    for (long t = 0; t < spec.task_count(); ++t) {
        bayes.push_back(mtsvm::bayes_risk(spec.per_task[static_cast<std::size_t>(t)]));
        u_star += spec.task_probs[t] * bayes.back();
    }

    double u_value = 0.0;
    double u_var = 0.0;
    std::vector<std::array<double, 2>> per_task;
    for (long t = 0; t < spec.task_count(); ++t) {
        const auto est = mtsvm::misclassification_error(
            scorers[static_cast<std::size_t>(t)], spec.per_task[static_cast<std::size_t>(t)],
            n_mc, mtsvm::mix64(seed, static_cast<std::uint64_t>(t + 1)));
        per_task.push_back({est.value, est.stderr_});
        u_value += spec.task_probs[t] * est.value;
        u_var += spec.task_probs[t] * spec.task_probs[t] * est.stderr_ * est.stderr_;
    }
    const double u_stderr = std::sqrt(u_var);
    const auto e_est = mtsvm::hinge_risk(scorers, spec, n_mc, mtsvm::mix64(seed, 101));
    const double e_star = 2.0 * u_star;
    const double excess_u = u_value - u_star;
    const double excess_e = e_est.value - e_star;
    const double combined = std::sqrt(u_stderr * u_stderr + e_est.stderr_ * e_est.stderr_);
    const bool bridge = excess_u <= excess_e + 3.0 * combined;

    for (long t = 0; t < spec.task_count(); ++t)
        std::cerr << "task " << (t + 1) << ": risk=" << per_task[static_cast<std::size_t>(t)][0]
                  << " (stderr " << per_task[static_cast<std::size_t>(t)][1] << ") bayes="
                  << bayes[static_cast<std::size_t>(t)] << " excess="
                  << per_task[static_cast<std::size_t>(t)][0] - bayes[static_cast<std::size_t>(t)]
                  << "\n";
    std::cerr << "U=" << u_value << " U*=" << u_star << " excess_u=" << excess_u << "\n";
    std::cerr << "E=" << e_est.value << " E*=" << e_star << " excess_e=" << excess_e << "\n";
    std::cerr << "bridge: excess_u <= excess_e + 3*stderr is " << (bridge ? "satisfied" : "VIOLATED")
              << "\n";

    if (cfg.contains("csv_out")) {
        const std::string csv_path = require_string(cfg, "csv_out");
        std::ofstream out(csv_path, std::ios::binary);
        if (!out) throw CliError(2, "cannot open for writing: " + csv_path);
        out << "task,risk,stderr,bayes,excess\n";
        for (long t = 0; t < spec.task_count(); ++t)
            out << (t + 1) << ',' << mtsvm::fmt17(per_task[static_cast<std::size_t>(t)][0]) << ','
                << mtsvm::fmt17(per_task[static_cast<std::size_t>(t)][1]) << ','
                << mtsvm::fmt17(bayes[static_cast<std::size_t>(t)]) << ','
                << mtsvm::fmt17(per_task[static_cast<std::size_t>(t)][0] -
                                bayes[static_cast<std::size_t>(t)])
                << "\n";
    }

    std::cout << "RESULT U=" << mtsvm::fmt17(u_value) << " Ustar=" << mtsvm::fmt17(u_star)
              << " excess_u=" << mtsvm::fmt17(excess_u) << " excess_e=" << mtsvm::fmt17(excess_e)
              << " stderr_u=" << mtsvm::fmt17(u_stderr) << " stderr_e=" << mtsvm::fmt17(e_est.stderr_)
              << " bridge=" << (bridge ? 1 : 0) << "\n";
    return 0;
}

int cmd_study(const std::string& name, const std::string& config_path, long seed_override,
              const std::string& out_override, int jobs) {
    mtsvm::StudyKind kind;
    try {
        kind = mtsvm::study_from_name(name);
    } catch (const std::invalid_argument& e) {
        throw CliError(2, e.what());
    }
    const json cfg_json = load_json(config_path);

    mtsvm::StudyConfig cfg;
    cfg.spec = spec_from_json(require_key(cfg_json, "spec"));
    if (seed_override >= 0) cfg.spec.seed = static_cast<std::uint64_t>(seed_override);
    for (const auto& n : require_key(cfg_json, "n_grid")) {
        if (!n.is_number_integer()) throw CliError(2, "config: invalid value for key: n_grid");
        cfg.n_grid.push_back(n.get<long>());
    }
    if (cfg_json.contains("seeds")) {
        for (const auto& s : cfg_json.at("seeds")) {
            if (!s.is_number_integer()) throw CliError(2, "config: invalid value for key: seeds");
            cfg.seeds.push_back(s.get<std::uint64_t>());
        }
    } else {
        const long count = require_long(cfg_json, "seed_count");
        const long base = get_long(cfg_json, "seed_base", 1);
        for (long s = 0; s < count; ++s)
            cfg.seeds.push_back(static_cast<std::uint64_t>(base + s));
    }
    cfg.reg = mtsvm::Regularization::from_lambda(require_double(cfg_json, "lambda1"),
                                                 require_double(cfg_json, "lambda2"));
    cfg.kernel.sigma = require_double(cfg_json, "sigma");
    cfg.n_mc = get_long(cfg_json, "n_mc", 200000);
    cfg.train.tol = get_double(cfg_json, "tol", 1e-6);
    cfg.train.max_passes = get_long(cfg_json, "max_passes", 10000);
    cfg.train.shuffle_seed = static_cast<std::uint64_t>(get_long(cfg_json, "shuffle_seed", 1));
    if (cfg_json.contains("thresholds")) {
        const json& th = cfg_json.at("thresholds");
        cfg.thresholds.final_excess = get_double(th, "final_excess", cfg.thresholds.final_excess);
        cfg.thresholds.inversion_tol = get_double(th, "inversion_tol", cfg.thresholds.inversion_tol);
        cfg.thresholds.min_agreement = get_double(th, "min_agreement", cfg.thresholds.min_agreement);
        cfg.thresholds.final_disagreement =
            get_double(th, "final_disagreement", cfg.thresholds.final_disagreement);
        cfg.thresholds.dev_slope_lo = get_double(th, "dev_slope_lo", cfg.thresholds.dev_slope_lo);
        cfg.thresholds.dev_slope_hi = get_double(th, "dev_slope_hi", cfg.thresholds.dev_slope_hi);
        cfg.thresholds.freq_slope_max =
            get_double(th, "freq_slope_max", cfg.thresholds.freq_slope_max);
        cfg.thresholds.envelope_factor =
            get_double(th, "envelope_factor", cfg.thresholds.envelope_factor);
    }
    cfg.jobs = jobs;

    try {
        cfg.validate_strict(kind);
    } catch (const std::invalid_argument& e) {
        throw CliError(2, std::string("config: ") + e.what());
    }

    const std::string out_path =
        out_override.empty() ? require_string(cfg_json, "report_out") : out_override;
    const std::string format = cfg_json.contains("format") ? require_string(cfg_json, "format")
                                                           : std::string("csv");
    mtsvm::ReportFormat rf;
    if (format == "csv")
        rf = mtsvm::ReportFormat::Csv;
    else if (format == "text")
        rf = mtsvm::ReportFormat::Text;
    else
        throw CliError(2, "config: invalid value for key: format (use csv or text)");

    std::cerr << "running " << mtsvm::study_name(kind) << " study: "
              << cfg.n_grid.size() * cfg.seeds.size() << " records, jobs=" << cfg.jobs << "\n";
    const mtsvm::StudyReport report = mtsvm::run_study(kind, cfg);
    mtsvm::emit_report(report, out_path, rf);

    for (const auto& a : report.assertions)
        std::cerr << "assertion " << (a.pass ? "PASS" : "FAIL") << ' ' << a.name << ' ' << a.detail
                  << "\n";
    std::cout << "RESULT study=" << report.study << " records=" << report.records.size()
              << " hash=" << report.config_hash << " pass=" << (report.passed() ? 1 : 0) << "\n";
    return report.passed() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-task kernel SVM: training, evaluation, and study harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    long seed_override = -1;
    std::string study_name_arg;
    int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

    auto* gen = app.add_subcommand("generate", "sample a synthetic dataset to CSV");
    gen->add_option("--config", config_path, "JSON config with keys n, out, spec")->required();
    gen->add_option("--seed", seed_override, "override spec.seed");
    gen->add_option("--out", out_override, "override the output path");

    auto* train = app.add_subcommand("train", "train a model on a dataset CSV");
    train->add_option("--config", config_path,
                      "JSON config with keys data, model_out, lambda1, lambda2, sigma")
        ->required();
    train->add_option("--out", out_override, "override the model output path");

    auto* predict = app.add_subcommand("predict", "score a dataset with a saved model");
    predict->add_option("--config", config_path, "JSON config with keys model, data, out")
        ->required();
    predict->add_option("--out", out_override, "override the output path");

    auto* evaluate = app.add_subcommand("evaluate", "estimate risks of a model against a spec");
    evaluate->add_option("--config", config_path,
                         "JSON config with keys model, spec, n_mc, seed [, csv_out]")
        ->required();
    evaluate->add_option("--seed", seed_override, "override the Monte-Carlo seed");

    auto* study = app.add_subcommand("study", "run a scripted study and emit its report");
    study->add_option("name", study_name_arg,
                      "one of: convergence, interaction, frequency, equivalence")
        ->required();
    study->add_option("--config", config_path, "JSON study config")->required();
    study->add_option("--out", out_override, "override the report path");
    study->add_option("--seed", seed_override, "override spec.seed");
    study->add_option("--jobs", jobs, "worker pool size for (N, seed) records");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    return guarded([&]() -> int {
        if (gen->parsed()) return cmd_generate(config_path, seed_override, out_override);
        if (train->parsed()) return cmd_train(config_path, out_override);
        if (predict->parsed()) return cmd_predict(config_path, out_override);
        if (evaluate->parsed()) return cmd_evaluate(config_path, seed_override);
        if (study->parsed())
            return cmd_study(study_name_arg, config_path, seed_override, out_override, jobs);
        return 2;
    });
}
