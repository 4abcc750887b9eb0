#include "mtsvm/data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mtsvm/numerics.hpp"
#include "mtsvm/textio.hpp"

namespace mtsvm {

namespace {

constexpr std::uint64_t kTaskStream = 1;
constexpr std::uint64_t kPayloadStream = 2;

void check_dim(const GeneratorSpec& gen, Eigen::Index got) {
    if (got != gen.dim) throw std::invalid_argument("feature dimension does not match generator");
}

// Signed distance statistic whose sign decides the mixture label; eta is a
// logistic function of it.
double mixture_logit(const GeneratorSpec& gen, const Eigen::VectorXd& x) {
    const double s2 = 2.0 * gen.noise_sigma * gen.noise_sigma;
    const double g = ((x - gen.mu_pos).squaredNorm() - (x - gen.mu_neg).squaredNorm()) / s2;
    return g + std::log((1.0 - gen.pos_weight) / gen.pos_weight);
}

}  // namespace

std::vector<int> TaskDataset::rows_for_task(int t) const {
    std::vector<int> rows;
    for (Eigen::Index i = 0; i < task.size(); ++i)
        if (task[i] == t) rows.push_back(static_cast<int>(i));
    return rows;
}

void TaskDataset::validate() const {
    if (n() == 0) return;  // degenerate carrier, allowed for file round-trips
    if (y.size() != n() || task.size() != n()) throw std::invalid_argument("ragged dataset");
    std::vector<long> counts(static_cast<std::size_t>(task_count), 0);
    for (Eigen::Index i = 0; i < n(); ++i) {
        if (y[i] != 1 && y[i] != -1) throw std::invalid_argument("label outside {-1, +1}");
        if (task[i] < 1 || task[i] > task_count) throw std::invalid_argument("task id out of range");
        ++counts[task[i] - 1];
    }
    weights.validate();
    if (weights.total != n() || weights.counts != counts)
        throw std::invalid_argument("task weights do not match samples");
}

void GeneratorSpec::validate() const {
    if (dim < 1) throw std::invalid_argument("generator dim must be >= 1");
    switch (kind) {
        case GeneratorKind::FlipNoiseThreshold:
            if (!(lo < hi)) throw std::invalid_argument("flip-noise: lo < hi required");
            if (!(flip_prob >= 0.0 && flip_prob < 0.5))
                throw std::invalid_argument("flip-noise: flip_prob must lie in [0, 1/2)");
            break;
        case GeneratorKind::SmoothLogistic:
            if (!(lo < hi)) throw std::invalid_argument("smooth-logistic: lo < hi required");
            if (!std::isfinite(slope) || !std::isfinite(offset))
                throw std::invalid_argument("smooth-logistic: non-finite parameters");
            break;
        case GeneratorKind::GaussianMixture:
            if (mu_pos.size() != dim || mu_neg.size() != dim)
                throw std::invalid_argument("gaussian-mixture: means must have length dim");
            if (!(pos_weight > 0.0 && pos_weight < 1.0))
                throw std::invalid_argument("gaussian-mixture: pos_weight must lie in (0, 1)");
            if (!(noise_sigma > 0.0))
                throw std::invalid_argument("gaussian-mixture: noise_sigma must be > 0");
            break;
    }
}

void SamplingSpec::validate() const {
    const long t = task_count();
    if (t < 1) throw std::invalid_argument("task_probs/per_task: at least one task required");
    if (task_probs.size() != t)
        throw std::invalid_argument("task_probs: one probability per task required");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < task_probs.size(); ++i) {
        if (!(task_probs[i] > 0.0)) throw std::invalid_argument("task_probs: every p(t) must be > 0");
        sum += task_probs[i];
    }
    if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("task_probs: must sum to 1");
    for (const auto& g : per_task) {
        g.validate();
        if (g.dim != per_task[0].dim)
            throw std::invalid_argument("per_task: generators must share a dimension");
    }
}

double positive_prob(const GeneratorSpec& gen, const Eigen::VectorXd& x) {
    check_dim(gen, x.size());
    switch (gen.kind) {
        case GeneratorKind::FlipNoiseThreshold:
            // x on the threshold counts as the positive side
            return x[0] >= gen.threshold ? 1.0 - gen.flip_prob : gen.flip_prob;
        case GeneratorKind::SmoothLogistic:
            return 1.0 / (1.0 + std::exp(-(gen.slope * x[0] + gen.offset)));
        case GeneratorKind::GaussianMixture:
            return 1.0 / (1.0 + std::exp(mixture_logit(gen, x)));
    }
    throw std::logic_error("unreachable generator kind");
}

Eigen::VectorXd positive_prob(const GeneratorSpec& gen, const Eigen::MatrixXd& xs) {
    check_dim(gen, xs.cols());
    Eigen::VectorXd out(xs.rows());
    switch (gen.kind) {
        case GeneratorKind::FlipNoiseThreshold:
            for (Eigen::Index i = 0; i < xs.rows(); ++i)
                out[i] = xs(i, 0) >= gen.threshold ? 1.0 - gen.flip_prob : gen.flip_prob;
            return out;
        case GeneratorKind::SmoothLogistic:
            out = (1.0 + (-(gen.slope * xs.col(0).array() + gen.offset)).exp()).inverse();
            return out;
        case GeneratorKind::GaussianMixture: {
            const double s2 = 2.0 * gen.noise_sigma * gen.noise_sigma;
            const double bias = std::log((1.0 - gen.pos_weight) / gen.pos_weight);
            Eigen::ArrayXd g =
                ((xs.rowwise() - gen.mu_pos.transpose()).rowwise().squaredNorm().array() -
                 (xs.rowwise() - gen.mu_neg.transpose()).rowwise().squaredNorm().array()) /
                    s2 +
                bias;
            out = (1.0 + g.exp()).inverse();
            return out;
        }
    }
    throw std::logic_error("unreachable generator kind");
}

int bayes_label(const GeneratorSpec& gen, const Eigen::VectorXd& x) {
    return positive_prob(gen, x) >= 0.5 ? 1 : -1;
}

Eigen::VectorXi bayes_label(const GeneratorSpec& gen, const Eigen::MatrixXd& xs) {
    const Eigen::VectorXd eta = positive_prob(gen, xs);
    Eigen::VectorXi out(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) out[i] = eta[i] >= 0.5 ? 1 : -1;
    return out;
}

double bayes_risk(const GeneratorSpec& gen, double quad_tol) {
    gen.validate();
    switch (gen.kind) {
        case GeneratorKind::FlipNoiseThreshold:
            return gen.flip_prob;
        case GeneratorKind::SmoothLogistic: {
            // eta depends on x[0] only; the marginal of x[0] is uniform.
            auto integrand = [&](double v) {
                return 1.0 / (1.0 + std::exp(std::abs(gen.slope * v + gen.offset)));
            };
            double total;
            const double crossing = gen.slope != 0.0 ? -gen.offset / gen.slope : gen.lo;
            if (gen.slope != 0.0 && crossing > gen.lo && crossing < gen.hi)
                total = adaptive_simpson(integrand, gen.lo, crossing, quad_tol) +
                        adaptive_simpson(integrand, crossing, gen.hi, quad_tol);
            else
                total = adaptive_simpson(integrand, gen.lo, gen.hi, quad_tol);
            return total / (gen.hi - gen.lo);
        }
        case GeneratorKind::GaussianMixture: {
            // Equal isotropic covariances: everything reduces to the unit
            // projection onto mu_pos - mu_neg.
            const Eigen::VectorXd diff = gen.mu_pos - gen.mu_neg;
            const double sep = diff.norm();
            if (sep == 0.0) return std::min(gen.pos_weight, 1.0 - gen.pos_weight);
            const double zp = gen.mu_pos.dot(diff) / sep;
            const double zn = gen.mu_neg.dot(diff) / sep;
            const double s = gen.noise_sigma;
            const double wp = gen.pos_weight;
            auto integrand = [&](double z) {
                return std::min(wp * normal_pdf(z, zp, s), (1.0 - wp) * normal_pdf(z, zn, s));
            };
            const double a = std::min(zp, zn) - 10.0 * s;
            const double b = std::max(zp, zn) + 10.0 * s;
            const double crossing =
                0.5 * (zp + zn) + s * s * std::log((1.0 - wp) / wp) / (zp - zn);
            if (crossing > a && crossing < b)
                return adaptive_simpson(integrand, a, crossing, quad_tol) +
                       adaptive_simpson(integrand, crossing, b, quad_tol);
            return adaptive_simpson(integrand, a, b, quad_tol);
        }
    }
    throw std::logic_error("unreachable generator kind");
}

// Engine usage, in order:
//   flip-noise / smooth-logistic: dim uniforms on [lo, hi] for x
//   gaussian-mixture: 1 uniform for the class, then dim normals for x
Eigen::VectorXd sample_x(const GeneratorSpec& gen, Rng& rng) {
    Eigen::VectorXd x(gen.dim);
    if (gen.kind == GeneratorKind::GaussianMixture) {
        const bool pos = rng.uniform01() < gen.pos_weight;
        const Eigen::VectorXd& mu = pos ? gen.mu_pos : gen.mu_neg;
        for (int k = 0; k < gen.dim; ++k) x[k] = mu[k] + gen.noise_sigma * rng.normal();
    } else {
        for (int k = 0; k < gen.dim; ++k) x[k] = rng.uniform(gen.lo, gen.hi);
    }
    return x;
}

Eigen::MatrixXd sample_x(const GeneratorSpec& gen, long count, Rng& rng) {
    Eigen::MatrixXd xs(count, gen.dim);
    for (long i = 0; i < count; ++i) xs.row(i) = sample_x(gen, rng).transpose();
    return xs;
}

// Engine usage, in order:
//   flip-noise / smooth-logistic: dim uniforms for x, then 1 uniform u;
//     y = +1 iff u < positive_prob(x)
//   gaussian-mixture: 1 uniform for the class (= label), then dim normals
TaskedSample sample_xy(const GeneratorSpec& gen, Rng& rng) {
    TaskedSample s;
    if (gen.kind == GeneratorKind::GaussianMixture) {
        const bool pos = rng.uniform01() < gen.pos_weight;
        const Eigen::VectorXd& mu = pos ? gen.mu_pos : gen.mu_neg;
        s.x.resize(gen.dim);
        for (int k = 0; k < gen.dim; ++k) s.x[k] = mu[k] + gen.noise_sigma * rng.normal();
        s.label = pos ? 1 : -1;
    } else {
        s.x = sample_x(gen, rng);
        s.label = rng.uniform01() < positive_prob(gen, s.x) ? 1 : -1;
    }
    return s;
}

TaskDataset sample_dataset(const SamplingSpec& spec, long n) {
    spec.validate();
    const long t_count = spec.task_count();
    if (n < t_count) throw std::invalid_argument("sample_dataset: n must be >= task count");
    const int d = spec.per_task[0].dim;

    for (int attempt = 0; attempt < 100; ++attempt) {
        Rng task_rng(mix64(spec.seed, static_cast<std::uint64_t>(attempt), kTaskStream));
        std::vector<int> ids(static_cast<std::size_t>(n));
        std::vector<long> counts(static_cast<std::size_t>(t_count), 0);
        for (long i = 0; i < n; ++i) {
            const int k = task_rng.discrete(spec.task_probs);
            ids[static_cast<std::size_t>(i)] = k + 1;
            ++counts[static_cast<std::size_t>(k)];
        }
        bool empty_task = false;
        for (long c : counts) empty_task |= c == 0;
        if (empty_task) continue;

        Rng payload_rng(mix64(spec.seed, static_cast<std::uint64_t>(attempt), kPayloadStream));
        TaskDataset ds;
        ds.x.resize(n, d);
        ds.y.resize(n);
        ds.task.resize(n);
        for (long i = 0; i < n; ++i) {
            const int t = ids[static_cast<std::size_t>(i)];
            TaskedSample s = sample_xy(spec.per_task[static_cast<std::size_t>(t - 1)], payload_rng);
            ds.x.row(i) = s.x.transpose();
            ds.y[i] = s.label;
            ds.task[i] = t;
        }
        ds.task_count = static_cast<int>(t_count);
        ds.weights.counts = counts;
        ds.weights.total = n;
        ds.redraws = attempt;
        return ds;
    }
    throw std::runtime_error(
        "degenerate sampling: a task received zero samples in 100 consecutive attempts");
}

void save_csv(const TaskDataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "task,label";
    for (long k = 1; k <= ds.dim(); ++k) out << ",f" << k;
    out << "\n";
    for (long i = 0; i < ds.n(); ++i) {
        out << ds.task[i] << ',' << ds.y[i];
        for (long k = 0; k < ds.dim(); ++k) out << ',' << fmt17(ds.x(i, k));
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

TaskDataset load_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string header;
    if (!std::getline(in, header) || header.empty())
        throw std::invalid_argument("empty dataset file: " + path);

    const auto cols = split(header, ',');
    if (cols.size() < 3 || cols[0] != "task" || cols[1] != "label")
        throw std::runtime_error(path + ": line 1: header must be task,label,f1,...");
    const long d = static_cast<long>(cols.size()) - 2;
    for (long k = 0; k < d; ++k) {
        if (cols[static_cast<std::size_t>(k + 2)] != "f" + std::to_string(k + 1))
            throw std::runtime_error(path + ": line 1: feature columns must be f1..f" +
                                     std::to_string(d));
    }

    std::vector<double> feats;
    std::vector<int> labels;
    std::vector<int> tasks;
    std::string line;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() && in.eof()) break;
        const auto fields = split(line, ',');
        const std::string where = path + ": line " + std::to_string(lineno);
        if (static_cast<long>(fields.size()) != d + 2)
            throw std::runtime_error(where + ": expected " + std::to_string(d + 2) + " columns");
        long task_id = 0;
        long label = 0;
        if (!try_parse_long(fields[0], task_id) || task_id < 1)
            throw std::runtime_error(where + ": bad task id");
        if (!try_parse_long(fields[1], label) || (label != 1 && label != -1))
            throw std::runtime_error(where + ": label must be -1 or 1");
        for (long k = 0; k < d; ++k) {
            double v = 0.0;
            if (!try_parse_double(fields[static_cast<std::size_t>(k + 2)], v))
                throw std::runtime_error(where + ": non-numeric feature f" + std::to_string(k + 1));
            feats.push_back(v);
        }
        tasks.push_back(static_cast<int>(task_id));
        labels.push_back(static_cast<int>(label));
    }

    const long n = static_cast<long>(tasks.size());
    TaskDataset ds;
    ds.x.resize(n, d);
    ds.y.resize(n);
    ds.task.resize(n);
    int t_count = 0;
    for (long i = 0; i < n; ++i) {
        for (long k = 0; k < d; ++k) ds.x(i, k) = feats[static_cast<std::size_t>(i * d + k)];
        ds.y[i] = labels[static_cast<std::size_t>(i)];
        ds.task[i] = tasks[static_cast<std::size_t>(i)];
        t_count = std::max(t_count, ds.task[i]);
    }
    ds.task_count = t_count;
    ds.weights.counts.assign(static_cast<std::size_t>(t_count), 0);
    ds.weights.total = n;
    for (long i = 0; i < n; ++i) ++ds.weights.counts[static_cast<std::size_t>(ds.task[i] - 1)];
    ds.validate();
    return ds;
}

}  // namespace mtsvm
