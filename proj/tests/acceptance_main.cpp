// Acceptance suite: runs every release criterion at its pinned tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "mtsvm/experiments.hpp"
#include "mtsvm/numerics.hpp"
#include "mtsvm/textio.hpp"
#include "oracles.hpp"

using namespace mtsvm;
namespace fs = std::filesystem;

namespace {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

using ModelRegistry = std::vector<std::pair<TrainedModel, TaskDataset>>;

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point start = clock::now();
    return std::chrono::duration<double>(clock::now() - start).count();
}

fs::path scratch_dir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "mtsvm_acceptance";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

GeneratorSpec flip_gen(double threshold, double q) {
    GeneratorSpec gen;
    gen.kind = GeneratorKind::FlipNoiseThreshold;
    gen.dim = 1;
    gen.lo = -1.0;
    gen.hi = 1.0;
    gen.threshold = threshold;
    gen.flip_prob = q;
    return gen;
}

// The two related 1-D flip-noise tasks used by criteria 7-9.
SamplingSpec reference_spec() {
    SamplingSpec spec;
    spec.task_probs.resize(2);
    spec.task_probs << 0.6, 0.4;
    spec.per_task = {flip_gen(0.0, 0.1), flip_gen(0.1, 0.1)};
    spec.seed = 20240601;
    return spec;
}

StudyConfig reference_config() {
    StudyConfig cfg;
    cfg.spec = reference_spec();
    cfg.n_grid = {100, 400, 1600, 6400};
    cfg.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    cfg.reg = Regularization::from_lambda(1.0, 1.0);
    cfg.kernel.sigma = 0.3;
    cfg.n_mc = 200000;
    cfg.train.tol = 1e-4;
    cfg.train.max_passes = 40000;
    cfg.jobs = 2;
    return cfg;
}

GeneratorSpec random_generator(Rng& rng, int dim, int kind_pick) {
    GeneratorSpec gen;
    gen.dim = dim;
    switch (kind_pick % 3) {
        case 0:
            gen.kind = GeneratorKind::FlipNoiseThreshold;
            gen.lo = -1.0;
            gen.hi = 1.0;
            gen.threshold = rng.uniform(-0.4, 0.4);
            gen.flip_prob = rng.uniform(0.05, 0.25);
            break;
        case 1:
            gen.kind = GeneratorKind::SmoothLogistic;
            gen.lo = -2.0;
            gen.hi = 2.0;
            gen.slope = rng.uniform(0.5, 3.0);
            gen.offset = rng.uniform(-0.5, 0.5);
            break;
        default:
            gen.kind = GeneratorKind::GaussianMixture;
            gen.pos_weight = rng.uniform(0.35, 0.65);
            gen.mu_pos = Eigen::VectorXd::Constant(dim, rng.uniform(0.4, 1.0));
            gen.mu_neg = Eigen::VectorXd::Constant(dim, rng.uniform(-1.0, -0.4));
            gen.noise_sigma = rng.uniform(0.6, 1.2);
            break;
    }
    return gen;
}

SamplingSpec random_spec(Rng& rng, int t_count, int dim, std::uint64_t seed) {
    SamplingSpec spec;
    Eigen::VectorXd p(t_count);
    for (int t = 0; t < t_count; ++t) p[t] = rng.uniform(0.5, 1.5);
    spec.task_probs = p / p.sum();
    for (int t = 0; t < t_count; ++t)
        spec.per_task.push_back(random_generator(rng, dim, static_cast<int>(rng.engine()() % 3)));
    spec.seed = seed;
    return spec;
}

// ---------------------------------------------------------------------------

CriterionResult criterion1_qp_oracle(ModelRegistry& registry) {
    CriterionResult res{1, "QP-oracle equivalence", true, "", 0.0};
    const double t0 = now_seconds();
    Rng rng(0xACCE01);
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        const int t_count = 1 + static_cast<int>(rng.engine()() % 3);
        const long n = std::max<long>(t_count, 2 + static_cast<long>(rng.engine()() % 7));
        const int dim = 1 + static_cast<int>(rng.engine()() % 2);
        auto ds = testing::random_instance(rng, n, t_count, dim);
        const double l1 = rng.uniform(0.1, 10.0);
        const double l2 = rng.uniform(0.1, 10.0);
        const GaussianKernel kernel{rng.uniform(0.4, 1.6)};

        TrainOptions opt;
        opt.tol = 1e-8;
        opt.max_passes = 100000;
        auto model = train(ds, Regularization::from_lambda(l1, l2), kernel, opt);

        const Eigen::MatrixXd g = testing::naive_coupled_gram(ds, l1, l2, kernel.sigma);
        const Eigen::VectorXd oracle = testing::projected_gradient_dual(g, ds.y.cast<double>());
        const double oracle_obj = testing::dual_objective_of(g, ds.y.cast<double>(), oracle);
        worst = std::max(worst, std::abs(model.dual_objective - oracle_obj));
        registry.emplace_back(std::move(model), std::move(ds));
    }
    res.seconds = now_seconds() - t0;
    res.pass = worst <= 1e-6 && res.seconds <= 60.0;
    res.detail = "worst objective gap " + fmt17(worst) + " over 50 instances";
    return res;
}

CriterionResult criterion2_shared_identity(ModelRegistry& registry) {
    CriterionResult res{2, "shared-component identity", true, "", 0.0};
    const double t0 = now_seconds();
    Rng rng(0xACCE02);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const int t_count = 1 + static_cast<int>(rng.engine()() % 3);
        const int dim = 1 + static_cast<int>(rng.engine()() % 2);
        const long n = 24 + static_cast<long>(rng.engine()() % 37);
        const auto spec = random_spec(rng, t_count, dim, 0xACCE02ull + rep);
        auto ds = sample_dataset(spec, n);
        const auto reg =
            Regularization::from_lambda(rng.uniform(0.1, 10.0), rng.uniform(0.1, 10.0));
        const GaussianKernel kernel{rng.uniform(0.4, 1.5)};
        auto model = train(ds, reg, kernel);

        Eigen::MatrixXd probes(100, dim);
        for (long k = 0; k < dim; ++k) {
            const double lo = ds.x.col(k).minCoeff();
            const double hi = ds.x.col(k).maxCoeff();
            for (long p = 0; p < 100; ++p) probes(p, k) = rng.uniform(lo, hi);
        }
        const KernelExpansion f0 = shared_component(model);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(100);
        for (int t = 1; t <= t_count; ++t)
            rhs += static_cast<double>(ds.weights.counts[t - 1]) / static_cast<double>(n) *
                   predict_scores(model, probes, t);
        rhs *= reg.lambda1 / (reg.lambda1 + reg.lambda2);
        worst = std::max(worst, (f0.eval(probes) - rhs).cwiseAbs().maxCoeff());
        registry.emplace_back(std::move(model), std::move(ds));
    }
    res.seconds = now_seconds() - t0;
    res.pass = worst <= 1e-8 && res.seconds <= 60.0;
    res.detail = "worst probe residual " + fmt17(worst) + " over 20 models";
    return res;
}

CriterionResult criterion5_bridge(ModelRegistry& registry) {
    CriterionResult res{5, "bridge inequality", true, "", 0.0};
    const double t0 = now_seconds();
    Rng rng(0xACCE05);
    long records = 0;
    long violations = 0;
    double tightest = std::numeric_limits<double>::infinity();
    for (int kind = 0; kind < 3; ++kind) {
        SamplingSpec spec;
        spec.task_probs.resize(2);
        spec.task_probs << 0.55, 0.45;
        spec.per_task = {random_generator(rng, 1, kind), random_generator(rng, 1, kind)};
        spec.seed = 0xACCE05ull + static_cast<std::uint64_t>(kind);
        for (long n : {120L, 260L}) {
            auto ds = sample_dataset(spec, n);
            TrainOptions opt;
            opt.tol = 1e-5;
            opt.max_passes = 40000;
            auto model =
                train(ds, Regularization::from_lambda(1.0, 1.0), GaussianKernel{0.4}, opt);

            double u_star = 0.0;
            for (long t = 0; t < 2; ++t)
                u_star +=
                    spec.task_probs[t] * bayes_risk(spec.per_task[static_cast<std::size_t>(t)]);
            const auto scorers = model_scorers(model);
            const auto u = average_misclassification(
                scorers, spec, 200000,
                mix64(0xACCE05, static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(n), 1));
            const auto e = hinge_risk(
                scorers, spec, 200000,
                mix64(0xACCE05, static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(n), 2));
            const double excess_u = u.value - u_star;
            const double excess_e = e.value - 2.0 * u_star;
            const double slack = excess_e +
                                 3.0 * std::sqrt(u.stderr_ * u.stderr_ + e.stderr_ * e.stderr_) -
                                 excess_u;
            ++records;
            if (slack < 0.0) ++violations;
            tightest = std::min(tightest, slack);
            registry.emplace_back(std::move(model), std::move(ds));
        }
    }
    res.seconds = now_seconds() - t0;
    res.pass = violations == 0;
    res.detail = "violations " + std::to_string(violations) + "/" + std::to_string(records) +
                 ", smallest slack " + fmt17(tightest);
    return res;
}

CriterionResult criterion3_objective_equivalence(const ModelRegistry& registry) {
    CriterionResult res{3, "objective-form equivalence", true, "", 0.0};
    const double t0 = now_seconds();
    double worst = 0.0;
    for (const auto& [model, ds] : registry) {
        const double a = primal_objective_lambda(model, ds);
        const double b = primal_objective_rho(model, ds);
        worst = std::max(worst, std::abs(a - b) / std::max(1.0, a));
    }
    res.seconds = now_seconds() - t0;
    res.pass = worst <= 1e-6;
    res.detail = "worst relative gap " + fmt17(worst) + " over " +
                 std::to_string(registry.size()) + " models";
    return res;
}

CriterionResult criterion4_solution_bounds(const ModelRegistry& registry) {
    CriterionResult res{4, "trained-solution bounds", true, "", 0.0};
    const double t0 = now_seconds();
    long violations = 0;
    double worst_norm_slack = std::numeric_limits<double>::infinity();
    double worst_hinge_slack = std::numeric_limits<double>::infinity();
    for (const auto& [model, ds] : registry) {
        const Eigen::MatrixXd inner = task_inner_products(model);
        const double n_total = static_cast<double>(model.weights.total);
        for (int t = 1; t <= model.task_count; ++t) {
            const double m_t = static_cast<double>(model.weights.counts[t - 1]);
            const double norm = std::sqrt(std::max(0.0, inner(t - 1, t - 1)));
            const double norm_slack = n_total / std::sqrt(model.reg.rho1 * m_t) - norm;
            const auto rows = ds.rows_for_task(t);
            double hinge = 0.0;
            for (int r : rows) {
                const double u =
                    static_cast<double>(ds.y[r]) * predict_score(model, ds.x.row(r), t);
                hinge += std::max(0.0, 1.0 - u);
            }
            const double hinge_slack = n_total - hinge;
            worst_norm_slack = std::min(worst_norm_slack, norm_slack);
            worst_hinge_slack = std::min(worst_hinge_slack, hinge_slack);
            violations += (norm_slack < 0.0 ? 1 : 0) + (hinge_slack < 0.0 ? 1 : 0);
        }
    }
    res.seconds = now_seconds() - t0;
    res.pass = violations == 0;
    res.detail = "violations " + std::to_string(violations) + "; smallest slacks norm=" +
                 fmt17(worst_norm_slack) + " hinge=" + fmt17(worst_hinge_slack);
    return res;
}

CriterionResult criterion6_finite_oracle() {
    CriterionResult res{6, "finite-support minimizer oracle", true, "", 0.0};
    const double t0 = now_seconds();
    Rng rng(0xACCE06);
    double worst = 0.0;
    bool ok = true;
    std::string note;
    for (int rep = 0; rep < 10 && ok; ++rep) {
        const long t_count = 1 + static_cast<long>(rng.engine()() % 2);
        const long n = 2 + static_cast<long>(rng.engine()() % 11);  // up to 12 points
        Eigen::MatrixXd eta(t_count, n);
        for (long t = 0; t < t_count; ++t)
            for (long i = 0; i < n; ++i) eta(t, i) = rng.uniform01();
        Eigen::VectorXd w(n);
        for (long i = 0; i < n; ++i) w[i] = rng.uniform(0.05, 1.0);
        w /= w.sum();
        Eigen::VectorXd p(t_count);
        for (long t = 0; t < t_count; ++t) p[t] = rng.uniform(0.3, 1.0);
        p /= p.sum();
        try {
            const auto out = finite_support_minimizer(eta, w, p);
            worst = std::max(worst, std::abs(out.min_risk - out.bayes_risk));
        } catch (const std::exception& e) {
            ok = false;
            note = e.what();
        }
    }
    res.seconds = now_seconds() - t0;
    res.pass = ok && worst <= 1e-12 && res.seconds <= 10.0;
    res.detail = ok ? "worst enumeration-vs-bayes gap " + fmt17(worst) + " over 10 tables"
                    : "oracle consistency failure: " + note;
    return res;
}

std::string describe(const StudyReport& report) {
    std::ostringstream ss;
    bool first = true;
    for (const auto& a : report.assertions) {
        ss << (first ? "" : "; ") << a.name << (a.pass ? " ok" : " FAILED") << " (" << a.detail
           << ")";
        first = false;
    }
    return ss.str();
}

CriterionResult study_criterion(int id, const std::string& name, const StudyReport& report,
                                double seconds, double budget_seconds) {
    return CriterionResult{id, name, report.passed() && seconds <= budget_seconds,
                           describe(report), seconds};
}

int count_failures(const std::vector<CriterionResult>& results) {
    int failures = 0;
    for (const auto& r : results) failures += r.pass ? 0 : 1;
    return failures;
}

}  // namespace

int main() {
    std::vector<CriterionResult> results;
    ModelRegistry registry;

    results.push_back(criterion1_qp_oracle(registry));
    results.push_back(criterion2_shared_identity(registry));
    results.push_back(criterion5_bridge(registry));  // also registers models for 3 and 4
    results.push_back(criterion3_objective_equivalence(registry));
    results.push_back(criterion4_solution_bounds(registry));
    results.push_back(criterion6_finite_oracle());

    // Criteria 7-9: the reference two-task study at full scale.
    StudyConfig conv_cfg = reference_config();
    StudyConfig freq_cfg = reference_config();
    freq_cfg.seeds.clear();
    for (std::uint64_t s = 1; s <= 50; ++s) freq_cfg.seeds.push_back(s);
    StudyConfig inter_cfg = reference_config();

    double t0 = now_seconds();
    const StudyReport conv = convergence_study(conv_cfg);
    const double conv_seconds = now_seconds() - t0;
    results.push_back(study_criterion(7, "desk-scale convergence", conv, conv_seconds, 900.0));
    std::fflush(stdout);

    t0 = now_seconds();
    const StudyReport freq = frequency_study(freq_cfg);
    const double freq_seconds = now_seconds() - t0;
    results.push_back(study_criterion(8, "frequency scaling", freq, freq_seconds, 600.0));

    t0 = now_seconds();
    const StudyReport inter = interaction_study(inter_cfg);
    const double inter_seconds = now_seconds() - t0;
    results.push_back(study_criterion(9, "interaction vanishing", inter, inter_seconds, 1200.0));

    // Criterion 10: identical configs reproduce the report files byte for byte.
    {
        const double t10 = now_seconds();
        bool identical = true;
        std::string which;
        const struct {
            const char* tag;
            const StudyConfig* cfg;
            const StudyReport* first;
            StudyReport (*run)(const StudyConfig&);
        } reruns[] = {
            {"convergence", &conv_cfg, &conv, convergence_study},
            {"frequency", &freq_cfg, &freq, frequency_study},
            {"interaction", &inter_cfg, &inter, interaction_study},
        };
        for (const auto& r : reruns) {
            const fs::path a_csv = scratch_dir() / (std::string(r.tag) + "_a.csv");
            const fs::path b_csv = scratch_dir() / (std::string(r.tag) + "_b.csv");
            const fs::path a_txt = scratch_dir() / (std::string(r.tag) + "_a.txt");
            const fs::path b_txt = scratch_dir() / (std::string(r.tag) + "_b.txt");
            emit_report(*r.first, a_csv.string(), ReportFormat::Csv);
            emit_report(*r.first, a_txt.string(), ReportFormat::Text);
            const StudyReport again = r.run(*r.cfg);
            emit_report(again, b_csv.string(), ReportFormat::Csv);
            emit_report(again, b_txt.string(), ReportFormat::Text);
            if (slurp(a_csv) != slurp(b_csv) || slurp(a_txt) != slurp(b_txt)) {
                identical = false;
                which += std::string(which.empty() ? "" : ", ") + r.tag;
            }
        }
        results.push_back(CriterionResult{10, "report determinism", identical,
                                          identical
                                              ? "criteria 7-9 reports reproduced byte-for-byte"
                                              : "mismatch in: " + which,
                                          now_seconds() - t10});
    }

    std::printf("\n");
    for (const auto& r : results)
        std::printf("criterion %2d %s (%7.1fs) %s: %s\n", r.id, r.pass ? "PASS" : "FAIL",
                    r.seconds, r.name.c_str(), r.detail.c_str());
    const int failures = count_failures(results);
    std::printf("acceptance: %d/%zu criteria passed\n",
                static_cast<int>(results.size()) - failures, results.size());
    return failures == 0 ? 0 : 1;
}
