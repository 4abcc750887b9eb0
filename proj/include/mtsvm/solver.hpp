#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mtsvm/data.hpp"
#include "mtsvm/kernel.hpp"

namespace mtsvm {

// The two equivalent regularizer parameterizations: (lambda1, lambda2) for
// the shared/individual split, (rho1, rho2) for the per-task norm plus
// mean-deviation form, with
//   rho1 = lambda1*lambda2 / (lambda1+lambda2),
//   rho2 = lambda1^2 / (lambda1+lambda2),  and  rho1 + rho2 = lambda1.
std::pair<double, double> rho_from_lambda(double lambda1, double lambda2);
std::pair<double, double> lambda_from_rho(double rho1, double rho2);

struct Regularization {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double rho1 = 0.5;
    double rho2 = 0.5;

    static Regularization from_lambda(double lambda1, double lambda2);
    static Regularization from_rho(double rho1, double rho2);
    void validate() const;
};

struct TrainOptions {
    double tol = 1e-6;       // per-pass coordinate change and KKT residual
    long max_passes = 10000;
    std::uint64_t shuffle_seed = 1;  // coordinate order is reshuffled per pass
};

struct DualSolution {
    Eigen::VectorXd alpha;  // one per training sample, in [0, 1]
    double objective = 0.0;
    double kkt_residual = 0.0;
    bool converged = false;
    long passes = 0;
    std::vector<double> pass_objectives;  // dual value after each pass
};

// Everything needed to evaluate every f_t and the shared component: support
// vectors with their dual coefficients, kernel and regularization
// parameters, and the original per-task counts.
struct TrainedModel {
    GaussianKernel kernel;
    Regularization reg;
    TaskWeights weights;
    int task_count = 0;
    long dim = 0;

    Eigen::MatrixXd sv_x;      // support vectors, alpha > 0 only
    Eigen::VectorXi sv_y;
    Eigen::VectorXi sv_task;
    Eigen::VectorXd sv_alpha;

    bool converged = true;
    double kkt_residual = 0.0;
    double dual_objective = 0.0;

    DualSolution dual;  // full alpha vector; populated by train()

    long support_count() const { return sv_x.rows(); }
};

// Finite kernel expansion sum_j coeffs[j] * K(points[j], .).
struct KernelExpansion {
    GaussianKernel kernel;
    Eigen::MatrixXd points;
    Eigen::VectorXd coeffs;

    double operator()(const Eigen::VectorXd& x) const;
    Eigen::VectorXd eval(const Eigen::MatrixXd& xs) const;
};

double rkhs_norm_sq(const KernelExpansion& f);

// Maximize the dual sum(alpha) - (1/4) alpha' (yy' .* G) alpha over the box
// [0, 1]^n by cyclic exact single-coordinate ascent (shuffled order per
// pass). Terminates once a full pass moves no coordinate by more than tol
// and the KKT residual is within tol; otherwise runs max_passes and returns
// with converged = false.
TrainedModel train(const TaskDataset& ds, const Regularization& reg, const GaussianKernel& kernel,
                   const TrainOptions& opt = {});

// Model with a caller-supplied dual vector (oracle solutions, zero models).
TrainedModel make_model(const TaskDataset& ds, const Eigen::VectorXd& alpha,
                        const Regularization& reg, const GaussianKernel& kernel);

// f_t(x) = (1/2) sum_j alpha_j y_j G((x_j, t_j), (x, t)) over support vectors.
Eigen::VectorXd predict_scores(const TrainedModel& m, const Eigen::MatrixXd& xs, int task);
double predict_score(const TrainedModel& m, const Eigen::VectorXd& x, int task);
int predict_label(const TrainedModel& m, const Eigen::VectorXd& x, int task);  // sgn(0) := +1

// Shared component f0 = (1/(2 lambda2)) sum_j alpha_j y_j K(x_j, .); equals
// (lambda1/(lambda1+lambda2)) sum_t (m_t/N) f_t at every point.
KernelExpansion shared_component(const TrainedModel& m);

// Expansion of f_t over the support vectors.
KernelExpansion task_expansion(const TrainedModel& m, int task);

// T x T matrix of RKHS inner products <f_t, f_s>.
Eigen::MatrixXd task_inner_products(const TrainedModel& m);

// Primal objective in the (lambda1, lambda2) parameterization: hinge sum
// plus lambda1 sum_t (m_t/N) |f_t - f0|^2 + lambda2 |f0|^2.
double primal_objective_lambda(const TrainedModel& m, const TaskDataset& ds);

// Primal objective in the (rho1, rho2) parameterization: hinge sum plus
// rho1 sum_t (m_t/N) |f_t|^2 + rho2 sum_t (m_t/N) |f_t - sum_s (m_s/N) f_s|^2.
// Agrees with primal_objective_lambda to floating point.
double primal_objective_rho(const TrainedModel& m, const TaskDataset& ds);

// Max KKT violation of the model's dual vector on its training set:
//   alpha = 0  ->  max(0, 1 - u),   0 < alpha < 1  ->  |u - 1|,
//   alpha = 1  ->  max(0, u - 1),   with margin u_i = y_i f_{t_i}(x_i).
double kkt_residual(const TrainedModel& m, const TaskDataset& ds);

// Structured text model file, schema version 1; numbers carry 17
// significant digits so reloaded models score bit-identically.
void save_model(const TrainedModel& m, const std::string& path);
TrainedModel load_model(const std::string& path);

}  // namespace mtsvm
