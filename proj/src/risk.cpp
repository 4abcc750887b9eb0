#include "mtsvm/risk.hpp"

#include <cmath>

namespace mtsvm {

namespace {

constexpr long kBatch = 16384;
constexpr std::uint64_t kMisclassStream = 0x6d697363;  // per-op stream tags
constexpr std::uint64_t kHingeStream = 0x68696e67;
constexpr std::uint64_t kDisagreeStream = 0x64697361;

struct Accumulator {
    double sum = 0.0;
    double sum_sq = 0.0;
    long count = 0;

    void add(const Eigen::ArrayXd& values) {
        sum += values.sum();
        sum_sq += values.square().sum();
        count += values.size();
    }

    RiskEstimate estimate() const {
        RiskEstimate est;
        est.method = RiskMethod::MonteCarlo;
        est.n_mc = count;
        est.value = sum / static_cast<double>(count);
        const double var = std::max(0.0, sum_sq / static_cast<double>(count) - est.value * est.value);
        est.stderr_ = std::sqrt(var / static_cast<double>(count));
        return est;
    }
};

void check_n_mc(long n_mc) {
    if (n_mc < 1000) throw std::invalid_argument("n_mc must be >= 1000");
}

// Runs `body(X, rng)` over fixed-size batches with per-batch seeds derived
// from (seed, stream, batch index); reproducible regardless of how batches
// would be assigned to workers.
template <typename Body>
void mc_batches(const GeneratorSpec& gen, long n_mc, std::uint64_t seed, std::uint64_t stream,
                const Body& body) {
    long done = 0;
    for (long batch = 0; done < n_mc; ++batch) {
        const long len = std::min(kBatch, n_mc - done);
        Rng rng(mix64(seed, stream, static_cast<std::uint64_t>(batch)));
        const Eigen::MatrixXd xs = sample_x(gen, len, rng);
        body(xs, rng);
        done += len;
    }
}

}  // namespace

std::vector<TaskScorer> model_scorers(const TrainedModel& m) {
    std::vector<TaskScorer> scorers;
    scorers.reserve(static_cast<std::size_t>(m.task_count));
    for (int t = 1; t <= m.task_count; ++t)
        scorers.push_back([&m, t](const Eigen::MatrixXd& xs) { return predict_scores(m, xs, t); });
    return scorers;
}

TaskScorer bayes_scorer(const GeneratorSpec& gen) {
    return [gen](const Eigen::MatrixXd& xs) {
        return bayes_label(gen, xs).cast<double>().eval();
    };
}

RiskEstimate misclassification_error(const TaskScorer& classifier, const GeneratorSpec& gen,
                                     long n_mc, std::uint64_t seed) {
    check_n_mc(n_mc);
    gen.validate();
    Accumulator acc;
    mc_batches(gen, n_mc, seed, kMisclassStream, [&](const Eigen::MatrixXd& xs, Rng&) {
        const Eigen::ArrayXd eta = positive_prob(gen, xs).array();
        const Eigen::ArrayXd scores = classifier(xs).array();
        acc.add((scores >= 0.0).select(1.0 - eta, eta));
    });
    return acc.estimate();
}

RiskEstimate average_misclassification(const std::vector<TaskScorer>& classifiers,
                                       const SamplingSpec& spec, long n_mc, std::uint64_t seed) {
    spec.validate();
    if (static_cast<long>(classifiers.size()) != spec.task_count())
        throw std::invalid_argument("one classifier per task required");
    RiskEstimate est;
    est.method = RiskMethod::MonteCarlo;
    est.n_mc = n_mc;
    double var = 0.0;
    for (long t = 0; t < spec.task_count(); ++t) {
        const RiskEstimate r = misclassification_error(
            classifiers[static_cast<std::size_t>(t)], spec.per_task[static_cast<std::size_t>(t)],
            n_mc, mix64(seed, static_cast<std::uint64_t>(t + 1)));
        est.value += spec.task_probs[t] * r.value;
        var += spec.task_probs[t] * spec.task_probs[t] * r.stderr_ * r.stderr_;
    }
    est.stderr_ = std::sqrt(var);
    return est;
}

RiskEstimate hinge_risk(const std::vector<TaskScorer>& functions, const SamplingSpec& spec,
                        long n_mc, std::uint64_t seed) {
    spec.validate();
    check_n_mc(n_mc);
    if (static_cast<long>(functions.size()) != spec.task_count())
        throw std::invalid_argument("one function per task required");
    RiskEstimate est;
    est.method = RiskMethod::MonteCarlo;
    est.n_mc = n_mc;
    double var = 0.0;
    for (long t = 0; t < spec.task_count(); ++t) {
        const GeneratorSpec& gen = spec.per_task[static_cast<std::size_t>(t)];
        Accumulator acc;
        mc_batches(gen, n_mc, mix64(seed, static_cast<std::uint64_t>(t + 1)), kHingeStream,
                   [&](const Eigen::MatrixXd& xs, Rng& rng) {
                       const Eigen::ArrayXd eta = positive_prob(gen, xs).array();
                       Eigen::ArrayXd y(xs.rows());
                       for (long i = 0; i < xs.rows(); ++i)
                           y[i] = rng.uniform01() < eta[i] ? 1.0 : -1.0;
                       const Eigen::ArrayXd scores =
                           functions[static_cast<std::size_t>(t)](xs).array();
                       acc.add((1.0 - y * scores).max(0.0));
                   });
        const RiskEstimate r = acc.estimate();
        est.value += spec.task_probs[t] * r.value;
        var += spec.task_probs[t] * spec.task_probs[t] * r.stderr_ * r.stderr_;
    }
    est.stderr_ = std::sqrt(var);
    return est;
}

double empirical_hinge(const std::vector<TaskScorer>& functions, const TaskDataset& ds) {
    ds.validate();
    if (static_cast<long>(functions.size()) != ds.task_count)
        throw std::invalid_argument("one function per task required");
    if (ds.n() == 0) throw std::invalid_argument("empirical_hinge: empty dataset");
    double total = 0.0;
    for (int t = 1; t <= ds.task_count; ++t) {
        const auto rows = ds.rows_for_task(t);
        if (rows.empty()) continue;
        Eigen::MatrixXd xs(static_cast<long>(rows.size()), ds.dim());
        Eigen::ArrayXd y(static_cast<long>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            xs.row(static_cast<long>(r)) = ds.x.row(rows[r]);
            y[static_cast<long>(r)] = static_cast<double>(ds.y[rows[r]]);
        }
        const Eigen::ArrayXd scores = functions[static_cast<std::size_t>(t - 1)](xs).array();
        total += (1.0 - y * scores).max(0.0).sum();
    }
    return total / static_cast<double>(ds.n());
}

RiskEstimate disagreement_rate(const TaskScorer& a, const TaskScorer& b, const GeneratorSpec& gen,
                               long n_mc, std::uint64_t seed) {
    check_n_mc(n_mc);
    gen.validate();
    Accumulator acc;
    mc_batches(gen, n_mc, seed, kDisagreeStream, [&](const Eigen::MatrixXd& xs, Rng&) {
        const Eigen::ArrayXd sa = a(xs).array();
        const Eigen::ArrayXd sb = b(xs).array();
        acc.add(((sa >= 0.0) != (sb >= 0.0)).cast<double>());
    });
    return acc.estimate();
}

double frequency_error(const Eigen::MatrixXd& task_inner, const Eigen::VectorXd& task_probs,
                       const TaskWeights& weights, const Regularization& reg) {
    const long t_count = task_inner.rows();
    if (task_inner.cols() != t_count || task_probs.size() != t_count ||
        weights.task_count() != t_count)
        throw std::invalid_argument("frequency_error: inconsistent task counts");
    weights.validate();
    reg.validate();

    const double n_total = static_cast<double>(weights.total);
    Eigen::VectorXd w(t_count);
    for (long t = 0; t < t_count; ++t)
        w[t] = static_cast<double>(weights.counts[static_cast<std::size_t>(t)]) / n_total;
    const Eigen::VectorXd diff = task_probs - w;

    double first = 0.0;
    for (long t = 0; t < t_count; ++t) first += diff[t] * task_inner(t, t);
    first *= -reg.rho1 / n_total;

    const double mixed_sq = diff.dot(task_inner * diff);
    const Eigen::VectorXd kw = task_inner * w;
    const double wkw = w.dot(kw);
    double dev_sum = 0.0;
    for (long t = 0; t < t_count; ++t)
        dev_sum += std::sqrt(std::max(0.0, task_inner(t, t) - 2.0 * kw[t] + wkw));
    const double second = reg.rho2 / n_total * std::sqrt(std::max(0.0, mixed_sq)) * dev_sum;
    return first + second;
}

ErrorDecomposition excess_decomposition(const TrainedModel& m, const SamplingSpec& spec,
                                        const TaskDataset& ds, const DecompositionOptions& opt) {
    spec.validate();
    ds.validate();
    if (m.task_count != spec.task_count() || m.task_count != ds.task_count)
        throw std::invalid_argument("excess_decomposition: task counts disagree");
    if (opt.surrogate_factor < 1)
        throw std::invalid_argument("excess_decomposition: surrogate_factor must be >= 1");

    const auto scorers = model_scorers(m);
    double u_star = 0.0;
    for (long t = 0; t < spec.task_count(); ++t)
        u_star += spec.task_probs[t] * bayes_risk(spec.per_task[static_cast<std::size_t>(t)]);
    const double e_star = 2.0 * u_star;

    const RiskEstimate u = average_misclassification(scorers, spec, opt.n_mc, mix64(opt.seed, 11));
    const RiskEstimate e = hinge_risk(scorers, spec, opt.n_mc, mix64(opt.seed, 12));
    const double e_z = empirical_hinge(scorers, ds);

    // Surrogate for the population regularized minimizer: an independent,
    // larger sample with the penalty scaled so rho/N is preserved.
    SamplingSpec surrogate_spec = spec;
    surrogate_spec.seed = mix64(opt.seed, 13);
    const long n_surrogate = opt.surrogate_factor * ds.n();
    const double scale = static_cast<double>(n_surrogate) / static_cast<double>(ds.n());
    const Regularization reg_surrogate =
        Regularization::from_rho(m.reg.rho1 * scale, m.reg.rho2 * scale);
    const TaskDataset ds_surrogate = sample_dataset(surrogate_spec, n_surrogate);
    const TrainedModel m_surrogate = train(ds_surrogate, reg_surrogate, m.kernel, opt.train);
    const auto scorers_surrogate = model_scorers(m_surrogate);

    const RiskEstimate e_surrogate =
        hinge_risk(scorers_surrogate, spec, opt.n_mc, mix64(opt.seed, 14));
    const double e_z_surrogate = empirical_hinge(scorers_surrogate, ds);

    const Eigen::MatrixXd inner = task_inner_products(m);
    const Eigen::MatrixXd inner_surrogate = task_inner_products(m_surrogate);

    ErrorDecomposition dec;
    dec.n_mc = opt.n_mc;
    dec.avg_bayes_risk = u_star;
    dec.excess_u = u.value - u_star;
    dec.excess_e = e.value - e_star;
    dec.stderr_u = u.stderr_;
    dec.stderr_e = e.stderr_;
    dec.sample_error_s = (e.value - e_z) + (e_z_surrogate - e_surrogate.value);
    dec.frequency_error_f = frequency_error(inner, spec.task_probs, ds.weights, m.reg);
    dec.freq_error_surrogate =
        frequency_error(inner_surrogate, spec.task_probs, ds.weights, m.reg);

    const double n_total = static_cast<double>(ds.n());
    const Eigen::VectorXd p = spec.task_probs;
    double reg_value = 0.0;
    const Eigen::VectorXd kp = inner_surrogate * p;
    const double pkp = p.dot(kp);
    for (long t = 0; t < spec.task_count(); ++t) {
        reg_value += m.reg.rho1 / n_total * p[t] * inner_surrogate(t, t);
        reg_value +=
            m.reg.rho2 / n_total * std::max(0.0, inner_surrogate(t, t) - 2.0 * kp[t] + pkp);
    }
    dec.reg_error_d_surrogate = (e_surrogate.value - e_star) + reg_value;
    return dec;
}

FiniteSupportResult finite_support_minimizer(const Eigen::MatrixXd& eta,
                                             const Eigen::VectorXd& point_weights,
                                             const Eigen::VectorXd& task_probs) {
    const long t_count = eta.rows();
    const long n = eta.cols();
    if (n < 1 || t_count < 1) throw std::invalid_argument("finite_support_minimizer: empty input");
    if (n > 12)
        throw std::domain_error("finite_support_minimizer: enumeration limited to 12 points");
    if (point_weights.size() != n || task_probs.size() != t_count)
        throw std::invalid_argument("finite_support_minimizer: inconsistent sizes");
    for (long i = 0; i < n; ++i)
        if (!(point_weights[i] >= 0.0))
            throw std::invalid_argument("finite_support_minimizer: negative point weight");
    if (std::abs(point_weights.sum() - 1.0) > 1e-9 || std::abs(task_probs.sum() - 1.0) > 1e-9)
        throw std::invalid_argument("finite_support_minimizer: weights must sum to 1");
    for (long t = 0; t < t_count; ++t)
        for (long i = 0; i < n; ++i)
            if (!(eta(t, i) >= 0.0 && eta(t, i) <= 1.0))
                throw std::invalid_argument("finite_support_minimizer: eta outside [0, 1]");

    // Hinge risk of a +-1 assignment: each point contributes
    // 2 * w * (eta if -1 else 1 - eta).
    FiniteSupportResult res;
    res.labels.resize(t_count, n);
    for (long t = 0; t < t_count; ++t) {
        double best = std::numeric_limits<double>::infinity();
        unsigned best_mask = 0;
        for (unsigned mask = 0; mask < (1u << n); ++mask) {
            double value = 0.0;
            for (long i = 0; i < n; ++i) {
                const bool positive = (mask >> i) & 1u;
                value += 2.0 * point_weights[i] * (positive ? 1.0 - eta(t, i) : eta(t, i));
            }
            if (value < best) {
                best = value;
                best_mask = mask;
            }
        }
        double bayes_value = 0.0;
        for (long i = 0; i < n; ++i) {
            const bool positive = eta(t, i) >= 0.5;
            bayes_value += 2.0 * point_weights[i] * (positive ? 1.0 - eta(t, i) : eta(t, i));
            const bool enum_positive = (best_mask >> i) & 1u;
            if (enum_positive != positive && std::abs(eta(t, i) - 0.5) > 1e-15)
                throw std::logic_error(
                    "finite_support_minimizer: enumerated minimizer deviates from the Bayes rule "
                    "off the tie set");
            res.labels(t, i) = enum_positive ? 1 : -1;
        }
        if (std::abs(best - bayes_value) > 1e-12)
            throw std::logic_error(
                "finite_support_minimizer: enumerated minimum differs from the Bayes value");
        res.min_risk += task_probs[t] * best;
        res.bayes_risk += task_probs[t] * bayes_value;
    }
    return res;
}

}  // namespace mtsvm
