#include "mtsvm/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "mtsvm/rng.hpp"
#include "mtsvm/textio.hpp"

namespace mtsvm {

namespace {

constexpr long kPredictChunk = 1024;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// KKT violation of one coordinate given its margin u = y f.
double kkt_violation(double alpha, double u) {
    if (alpha == 0.0) return std::max(0.0, 1.0 - u);
    if (alpha == 1.0) return std::max(0.0, u - 1.0);
    return std::abs(u - 1.0);
}

// Per-support-vector expansion coefficients of f_task.
Eigen::VectorXd task_coefficients(const TrainedModel& m, int task) {
    if (task < 1 || task > m.task_count) throw std::invalid_argument("unknown task id");
    const double n_total = static_cast<double>(m.weights.total);
    Eigen::VectorXd c(m.support_count());
    for (Eigen::Index j = 0; j < c.size(); ++j) {
        double w = 1.0 / m.reg.lambda2;
        if (m.sv_task[j] == task)
            w += n_total / (m.reg.lambda1 * static_cast<double>(m.weights.counts[m.sv_task[j] - 1]));
        c[j] = 0.5 * m.sv_alpha[j] * static_cast<double>(m.sv_y[j]) * w;
    }
    return c;
}

Eigen::VectorXd margins(const TrainedModel& m, const TaskDataset& ds) {
    Eigen::VectorXd u(ds.n());
    for (int t = 1; t <= ds.task_count; ++t) {
        const auto rows = ds.rows_for_task(t);
        if (rows.empty()) continue;
        Eigen::MatrixXd xs(static_cast<long>(rows.size()), ds.dim());
        for (std::size_t r = 0; r < rows.size(); ++r) xs.row(static_cast<long>(r)) = ds.x.row(rows[r]);
        const Eigen::VectorXd s = predict_scores(m, xs, t);
        for (std::size_t r = 0; r < rows.size(); ++r)
            u[rows[r]] = static_cast<double>(ds.y[rows[r]]) * s[static_cast<long>(r)];
    }
    return u;
}

std::string sample_key(int task, int label, const double* x, long d) {
    std::string key;
    key.resize(sizeof(int) * 2 + sizeof(double) * static_cast<std::size_t>(d));
    std::memcpy(key.data(), &task, sizeof(int));
    std::memcpy(key.data() + sizeof(int), &label, sizeof(int));
    std::memcpy(key.data() + 2 * sizeof(int), x, sizeof(double) * static_cast<std::size_t>(d));
    return key;
}

}  // namespace

std::pair<double, double> rho_from_lambda(double lambda1, double lambda2) {
    if (!(lambda1 > 0.0) || !(lambda2 > 0.0))
        throw std::invalid_argument("regularization parameters must be > 0");
    return {lambda1 * lambda2 / (lambda1 + lambda2), lambda1 * lambda1 / (lambda1 + lambda2)};
}

std::pair<double, double> lambda_from_rho(double rho1, double rho2) {
    if (!(rho1 > 0.0) || !(rho2 > 0.0))
        throw std::invalid_argument("regularization parameters must be > 0");
    const double lambda1 = rho1 + rho2;
    return {lambda1, lambda1 * rho1 / rho2};
}

Regularization Regularization::from_lambda(double lambda1, double lambda2) {
    Regularization reg;
    reg.lambda1 = lambda1;
    reg.lambda2 = lambda2;
    std::tie(reg.rho1, reg.rho2) = rho_from_lambda(lambda1, lambda2);
    return reg;
}

Regularization Regularization::from_rho(double rho1, double rho2) {
    const auto [lambda1, lambda2] = lambda_from_rho(rho1, rho2);
    return from_lambda(lambda1, lambda2);
}

void Regularization::validate() const {
    if (!(lambda1 > 0.0) || !(lambda2 > 0.0))
        throw std::invalid_argument("regularization parameters must be > 0");
}

double KernelExpansion::operator()(const Eigen::VectorXd& x) const {
    return eval(x.transpose())[0];
}

Eigen::VectorXd KernelExpansion::eval(const Eigen::MatrixXd& xs) const {
    if (points.rows() == 0) return Eigen::VectorXd::Zero(xs.rows());
    if (xs.cols() != points.cols()) throw std::invalid_argument("dimension mismatch in expansion");
    Eigen::VectorXd out(xs.rows());
    for (long start = 0; start < xs.rows(); start += kPredictChunk) {
        const long len = std::min(kPredictChunk, xs.rows() - start);
        out.segment(start, len).noalias() =
            cross_gram(kernel, xs.middleRows(start, len), points) * coeffs;
    }
    return out;
}

double rkhs_norm_sq(const KernelExpansion& f) {
    if (f.points.rows() == 0) return 0.0;
    const Eigen::MatrixXd k = gram_matrix(f.kernel, f.points);
    return f.coeffs.dot(k * f.coeffs);
}

TrainedModel train(const TaskDataset& ds, const Regularization& reg, const GaussianKernel& kernel,
                   const TrainOptions& opt) {
    ds.validate();
    if (ds.n() < 1) throw std::invalid_argument("train: empty dataset");
    ds.weights.validate_trainable();
    reg.validate();
    kernel.validate();
    if (!(opt.tol > 0.0)) throw std::invalid_argument("train: tol must be > 0");
    if (opt.max_passes < 1) throw std::invalid_argument("train: max_passes must be >= 1");

    const long n = ds.n();
    const MultiTaskKernel mtk{kernel, reg.lambda1, reg.lambda2, ds.weights};
    const Eigen::MatrixXd g = gram_matrix(mtk, ds.x, ds.task);
    const Eigen::VectorXd y = ds.y.cast<double>();

    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd margin = Eigen::VectorXd::Zero(n);  // f_{t_i}(x_i), maintained incrementally
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(opt.shuffle_seed);

    DualSolution dual;
    dual.pass_objectives.reserve(64);
    double objective = 0.0;
    bool converged = false;
    long pass = 0;
    constexpr long kRefreshEvery = 64;  // rebuild margins to shed incremental drift
    auto refresh_margins = [&] { margin.noalias() = 0.5 * (g * alpha.cwiseProduct(y)); };
    while (pass < opt.max_passes) {
        ++pass;
        shuffle_rng.shuffle(order);
        double max_step = 0.0;
        for (int i : order) {
            const double u = y[i] * margin[i];
            const double target = clamp01(alpha[i] + 2.0 * (1.0 - u) / g(i, i));
            const double step = target - alpha[i];
            if (step != 0.0) {
                objective += step * (1.0 - u) - step * step * g(i, i) / 4.0;
                alpha[i] = target;
                margin.noalias() += (0.5 * step * y[i]) * g.col(i);
                max_step = std::max(max_step, std::abs(step));
            }
        }
        dual.pass_objectives.push_back(objective);
        if (pass % kRefreshEvery == 0) refresh_margins();
        double kkt = 0.0;
        for (long i = 0; i < n; ++i) kkt = std::max(kkt, kkt_violation(alpha[i], y[i] * margin[i]));
        if (max_step <= opt.tol && kkt <= opt.tol) {
            // certify against exact margins before declaring convergence
            refresh_margins();
            kkt = 0.0;
            for (long i = 0; i < n; ++i)
                kkt = std::max(kkt, kkt_violation(alpha[i], y[i] * margin[i]));
            if (kkt <= opt.tol) {
                converged = true;
                break;
            }
        }
    }

    // Exact recompute; the incrementally maintained margins only steer the loop.
    refresh_margins();
    double kkt = 0.0;
    for (long i = 0; i < n; ++i) kkt = std::max(kkt, kkt_violation(alpha[i], y[i] * margin[i]));
    dual.alpha = alpha;
    dual.objective = alpha.sum() - 0.5 * alpha.cwiseProduct(y).dot(margin);
    dual.kkt_residual = kkt;
    dual.converged = converged;
    dual.passes = pass;

    TrainedModel m;
    m.kernel = kernel;
    m.reg = reg;
    m.weights = ds.weights;
    m.task_count = ds.task_count;
    m.dim = ds.dim();
    m.converged = converged;
    m.kkt_residual = kkt;
    m.dual_objective = dual.objective;

    const long nsv = (alpha.array() > 0.0).count();
    m.sv_x.resize(nsv, ds.dim());
    m.sv_y.resize(nsv);
    m.sv_task.resize(nsv);
    m.sv_alpha.resize(nsv);
    long k = 0;
    for (long i = 0; i < n; ++i) {
        if (alpha[i] > 0.0) {
            m.sv_x.row(k) = ds.x.row(i);
            m.sv_y[k] = ds.y[i];
            m.sv_task[k] = ds.task[i];
            m.sv_alpha[k] = alpha[i];
            ++k;
        }
    }
    m.dual = std::move(dual);
    return m;
}

TrainedModel make_model(const TaskDataset& ds, const Eigen::VectorXd& alpha,
                        const Regularization& reg, const GaussianKernel& kernel) {
    ds.validate();
    if (ds.n() < 1) throw std::invalid_argument("make_model: empty dataset");
    ds.weights.validate_trainable();
    reg.validate();
    kernel.validate();
    if (alpha.size() != ds.n()) throw std::invalid_argument("make_model: one alpha per sample");
    for (long i = 0; i < alpha.size(); ++i)
        if (!(alpha[i] >= 0.0 && alpha[i] <= 1.0))
            throw std::invalid_argument("make_model: alpha outside [0, 1]");

    TrainedModel m;
    m.kernel = kernel;
    m.reg = reg;
    m.weights = ds.weights;
    m.task_count = ds.task_count;
    m.dim = ds.dim();

    const long nsv = (alpha.array() > 0.0).count();
    m.sv_x.resize(nsv, ds.dim());
    m.sv_y.resize(nsv);
    m.sv_task.resize(nsv);
    m.sv_alpha.resize(nsv);
    long k = 0;
    for (long i = 0; i < ds.n(); ++i) {
        if (alpha[i] > 0.0) {
            m.sv_x.row(k) = ds.x.row(i);
            m.sv_y[k] = ds.y[i];
            m.sv_task[k] = ds.task[i];
            m.sv_alpha[k] = alpha[i];
            ++k;
        }
    }

    const Eigen::VectorXd u = margins(m, ds);
    double kkt = 0.0;
    double quad = 0.0;
    for (long i = 0; i < ds.n(); ++i) {
        kkt = std::max(kkt, kkt_violation(alpha[i], u[i]));
        quad += alpha[i] * u[i];  // u already carries y
    }
    m.dual.alpha = alpha;
    m.dual.objective = alpha.sum() - 0.5 * quad;
    m.dual.kkt_residual = kkt;
    m.dual.converged = true;
    m.kkt_residual = kkt;
    m.dual_objective = m.dual.objective;
    return m;
}

Eigen::VectorXd predict_scores(const TrainedModel& m, const Eigen::MatrixXd& xs, int task) {
    if (task < 1 || task > m.task_count) throw std::invalid_argument("unknown task id");
    if (xs.cols() != m.dim) throw std::invalid_argument("query dimension does not match model");
    KernelExpansion f{m.kernel, m.sv_x, m.support_count() ? task_coefficients(m, task)
                                                          : Eigen::VectorXd()};
    return f.eval(xs);
}

double predict_score(const TrainedModel& m, const Eigen::VectorXd& x, int task) {
    return predict_scores(m, x.transpose(), task)[0];
}

int predict_label(const TrainedModel& m, const Eigen::VectorXd& x, int task) {
    return predict_score(m, x, task) >= 0.0 ? 1 : -1;
}

KernelExpansion shared_component(const TrainedModel& m) {
    Eigen::VectorXd c(m.support_count());
    for (Eigen::Index j = 0; j < c.size(); ++j)
        c[j] = 0.5 * m.sv_alpha[j] * static_cast<double>(m.sv_y[j]) / m.reg.lambda2;
    return KernelExpansion{m.kernel, m.sv_x, std::move(c)};
}

KernelExpansion task_expansion(const TrainedModel& m, int task) {
    return KernelExpansion{m.kernel, m.sv_x, task_coefficients(m, task)};
}

Eigen::MatrixXd task_inner_products(const TrainedModel& m) {
    const int t_count = m.task_count;
    if (m.support_count() == 0) return Eigen::MatrixXd::Zero(t_count, t_count);
    Eigen::MatrixXd c(m.support_count(), t_count);
    for (int t = 1; t <= t_count; ++t) c.col(t - 1) = task_coefficients(m, t);
    const Eigen::MatrixXd k = gram_matrix(m.kernel, m.sv_x);
    return c.transpose() * k * c;
}

namespace {

double hinge_sum(const TrainedModel& m, const TaskDataset& ds) {
    const Eigen::VectorXd u = margins(m, ds);
    return (1.0 - u.array()).max(0.0).sum();
}

}  // namespace

double primal_objective_lambda(const TrainedModel& m, const TaskDataset& ds) {
    const double hinge = hinge_sum(m, ds);
    if (m.support_count() == 0) return hinge;

    const Eigen::MatrixXd k = gram_matrix(m.kernel, m.sv_x);
    Eigen::VectorXd c0(m.support_count());
    for (Eigen::Index j = 0; j < c0.size(); ++j)
        c0[j] = 0.5 * m.sv_alpha[j] * static_cast<double>(m.sv_y[j]) / m.reg.lambda2;

    double reg_value = m.reg.lambda2 * c0.dot(k * c0);
    const double n_total = static_cast<double>(m.weights.total);
    for (int t = 1; t <= m.task_count; ++t) {
        const double m_t = static_cast<double>(m.weights.counts[t - 1]);
        Eigen::VectorXd cg = Eigen::VectorXd::Zero(m.support_count());
        for (Eigen::Index j = 0; j < cg.size(); ++j)
            if (m.sv_task[j] == t)
                cg[j] = 0.5 * m.sv_alpha[j] * static_cast<double>(m.sv_y[j]) * n_total /
                        (m.reg.lambda1 * m_t);
        reg_value += m.reg.lambda1 * (m_t / n_total) * cg.dot(k * cg);
    }
    return hinge + reg_value;
}

double primal_objective_rho(const TrainedModel& m, const TaskDataset& ds) {
    const double hinge = hinge_sum(m, ds);
    if (m.support_count() == 0) return hinge;

    const Eigen::MatrixXd k = gram_matrix(m.kernel, m.sv_x);
    const double n_total = static_cast<double>(m.weights.total);
    Eigen::MatrixXd c(m.support_count(), m.task_count);
    for (int t = 1; t <= m.task_count; ++t) c.col(t - 1) = task_coefficients(m, t);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(m.support_count());
    for (int t = 1; t <= m.task_count; ++t)
        mean += (static_cast<double>(m.weights.counts[t - 1]) / n_total) * c.col(t - 1);

    double reg_value = 0.0;
    for (int t = 1; t <= m.task_count; ++t) {
        const double w_t = static_cast<double>(m.weights.counts[t - 1]) / n_total;
        reg_value += m.reg.rho1 * w_t * c.col(t - 1).dot(k * c.col(t - 1));
        const Eigen::VectorXd dev = c.col(t - 1) - mean;
        reg_value += m.reg.rho2 * w_t * dev.dot(k * dev);
    }
    return hinge + reg_value;
}

double kkt_residual(const TrainedModel& m, const TaskDataset& ds) {
    ds.validate();
    if (ds.n() != m.weights.total)
        throw std::invalid_argument("kkt_residual: dataset size does not match the model");

    // Recover the full alpha vector by matching support vectors to rows;
    // rows without a support entry carry alpha = 0. Duplicated points share
    // their margin, so pairing order among duplicates does not change the
    // residual.
    std::unordered_map<std::string, std::vector<double>> pool;
    for (long j = 0; j < m.support_count(); ++j) {
        Eigen::RowVectorXd row = m.sv_x.row(j);
        pool[sample_key(m.sv_task[j], m.sv_y[j], row.data(), m.dim)].push_back(m.sv_alpha[j]);
    }
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(ds.n());
    long matched = 0;
    for (long i = 0; i < ds.n(); ++i) {
        Eigen::RowVectorXd row = ds.x.row(i);
        auto it = pool.find(sample_key(ds.task[i], ds.y[i], row.data(), ds.dim()));
        if (it != pool.end() && !it->second.empty()) {
            alpha[i] = it->second.back();
            it->second.pop_back();
            ++matched;
        }
    }
    if (matched != m.support_count())
        throw std::invalid_argument("kkt_residual: model was not trained on this dataset");

    const Eigen::VectorXd u = margins(m, ds);
    double kkt = 0.0;
    for (long i = 0; i < ds.n(); ++i) kkt = std::max(kkt, kkt_violation(alpha[i], u[i]));
    return kkt;
}

void save_model(const TrainedModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "mtsvm-model v1\n";
    out << "sigma " << fmt17(m.kernel.sigma) << "\n";
    out << "lambda1 " << fmt17(m.reg.lambda1) << "\n";
    out << "lambda2 " << fmt17(m.reg.lambda2) << "\n";
    out << "tasks " << m.task_count << "\n";
    out << "dim " << m.dim << "\n";
    out << "total " << m.weights.total << "\n";
    out << "counts";
    for (long c : m.weights.counts) out << ' ' << c;
    out << "\n";
    out << "converged " << (m.converged ? 1 : 0) << "\n";
    out << "kkt " << fmt17(m.kkt_residual) << "\n";
    out << "objective " << fmt17(m.dual_objective) << "\n";
    out << "support " << m.support_count() << "\n";
    for (long j = 0; j < m.support_count(); ++j) {
        out << m.sv_task[j] << ' ' << m.sv_y[j] << ' ' << fmt17(m.sv_alpha[j]);
        for (long k = 0; k < m.dim; ++k) out << ' ' << fmt17(m.sv_x(j, k));
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

std::vector<std::string_view> next_fields(std::ifstream& in, std::string& line,
                                          const std::string& path) {
    if (!std::getline(in, line)) throw std::runtime_error(path + ": truncated model file");
    auto fields = split(line, ' ');
    if (fields.empty()) throw std::runtime_error(path + ": malformed model file");
    return fields;
}

double field_double(std::string_view s, const std::string& path) {
    double v = 0.0;
    if (!try_parse_double(s, v)) throw std::runtime_error(path + ": bad number in model file");
    return v;
}

long field_long(std::string_view s, const std::string& path) {
    long v = 0;
    if (!try_parse_long(s, v)) throw std::runtime_error(path + ": bad integer in model file");
    return v;
}

}  // namespace

TrainedModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line) || line.empty())
        throw std::runtime_error(path + ": empty model file");
    if (line.rfind("mtsvm-model", 0) != 0)
        throw std::runtime_error(path + ": not a model file");
    if (line != "mtsvm-model v1")
        throw std::runtime_error(path + ": unsupported model schema version: " + line);

    auto expect = [&](const char* key) {
        auto fields = next_fields(in, line, path);
        if (fields[0] != key)
            throw std::runtime_error(path + ": expected field '" + key + "'");
        return std::vector<std::string_view>(fields.begin() + 1, fields.end());
    };

    TrainedModel m;
    m.kernel.sigma = field_double(expect("sigma").at(0), path);
    const double lambda1 = field_double(expect("lambda1").at(0), path);
    const double lambda2 = field_double(expect("lambda2").at(0), path);
    m.reg = Regularization::from_lambda(lambda1, lambda2);
    m.task_count = static_cast<int>(field_long(expect("tasks").at(0), path));
    m.dim = field_long(expect("dim").at(0), path);
    m.weights.total = field_long(expect("total").at(0), path);
    const auto counts = expect("counts");
    if (static_cast<long>(counts.size()) != m.task_count)
        throw std::runtime_error(path + ": counts arity does not match task count");
    for (auto c : counts) m.weights.counts.push_back(field_long(c, path));
    m.converged = field_long(expect("converged").at(0), path) != 0;
    m.kkt_residual = field_double(expect("kkt").at(0), path);
    m.dual_objective = field_double(expect("objective").at(0), path);
    const long nsv = field_long(expect("support").at(0), path);
    if (nsv < 0) throw std::runtime_error(path + ": negative support count");

    m.sv_x.resize(nsv, m.dim);
    m.sv_y.resize(nsv);
    m.sv_task.resize(nsv);
    m.sv_alpha.resize(nsv);
    for (long j = 0; j < nsv; ++j) {
        auto fields = next_fields(in, line, path);
        if (static_cast<long>(fields.size()) != 3 + m.dim)
            throw std::runtime_error(path + ": malformed support vector line");
        m.sv_task[j] = static_cast<int>(field_long(fields[0], path));
        m.sv_y[j] = static_cast<int>(field_long(fields[1], path));
        m.sv_alpha[j] = field_double(fields[2], path);
        for (long k = 0; k < m.dim; ++k)
            m.sv_x(j, k) = field_double(fields[static_cast<std::size_t>(3 + k)], path);
    }

    m.kernel.validate();
    m.weights.validate_trainable();
    return m;
}

}  // namespace mtsvm
