#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "mtsvm/data.hpp"
#include "mtsvm/solver.hpp"

namespace mtsvm {

enum class RiskMethod { Analytic, Quadrature, MonteCarlo };

struct RiskEstimate {
    double value = 0.0;
    double stderr_ = 0.0;  // 0 unless Monte Carlo
    long n_mc = 0;
    RiskMethod method = RiskMethod::Analytic;
};

// Batch evaluation of one task's decision function: rows in, scores out.
using TaskScorer = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

// Scorers bound to a trained model; the model must outlive them.
std::vector<TaskScorer> model_scorers(const TrainedModel& m);

// Scorer of the task's Bayes rule (+-1 valued scores).
TaskScorer bayes_scorer(const GeneratorSpec& gen);

// Misclassification error of sgn(scorer) under the generator, estimated by
// Monte Carlo over the X marginal with the label integrated out analytically
// (the known eta makes the conditional risk exact per draw).
RiskEstimate misclassification_error(const TaskScorer& classifier, const GeneratorSpec& gen,
                                     long n_mc, std::uint64_t seed);

// p(t)-weighted sum of per-task misclassification errors; per-task standard
// errors combine in quadrature.
RiskEstimate average_misclassification(const std::vector<TaskScorer>& classifiers,
                                       const SamplingSpec& spec, long n_mc, std::uint64_t seed);

// p(t)-weighted expected hinge loss, Monte Carlo over (x, y) draws per task.
RiskEstimate hinge_risk(const std::vector<TaskScorer>& functions, const SamplingSpec& spec,
                        long n_mc, std::uint64_t seed);

// Exact (1/N) sum of hinge losses on the dataset.
double empirical_hinge(const std::vector<TaskScorer>& functions, const TaskDataset& ds);

// Monte-Carlo rate of sign disagreement between two scorers over the
// generator's X marginal.
RiskEstimate disagreement_rate(const TaskScorer& a, const TaskScorer& b, const GeneratorSpec& gen,
                               long n_mc, std::uint64_t seed);

// Frequency error driven by the deviations p(t) - m_t/N:
//   -(rho1/N) sum_t (p_t - w_t) |f_t|^2
//   + (rho2/N) |sum_t (p_t - w_t) f_t| * sum_t |f_t - sum_s w_s f_s|
// evaluated from the T x T matrix of RKHS inner products of the model's task
// functions (see task_inner_products).
double frequency_error(const Eigen::MatrixXd& task_inner, const Eigen::VectorXd& task_probs,
                       const TaskWeights& weights, const Regularization& reg);

struct ErrorDecomposition {
    double excess_u = 0.0;  // U(sgn f) - U*
    double excess_e = 0.0;  // E(f) - E*
    double stderr_u = 0.0;
    double stderr_e = 0.0;
    double sample_error_s = 0.0;        // approximate: uses the surrogate
    double frequency_error_f = 0.0;     // approximate: trained f in place of the population minimizer
    double freq_error_surrogate = 0.0;  // approximate: surrogate f in the same role
    double reg_error_d_surrogate = 0.0; // approximate: value at the surrogate, not the infimum
    double avg_bayes_risk = 0.0;        // U*
    long n_mc = 0;
};

struct DecompositionOptions {
    long surrogate_factor = 20;  // surrogate trains on factor * N fresh samples
    long n_mc = 200000;
    std::uint64_t seed = 0;
    TrainOptions train;
};

// Splits the excess hinge risk into sample / regularization / frequency
// parts. The population regularized minimizer is approximated by a model
// trained on an independent surrogate_factor * N sample with the
// regularization rescaled so the effective per-sample penalty matches the
// original N.
ErrorDecomposition excess_decomposition(const TrainedModel& m, const SamplingSpec& spec,
                                        const TaskDataset& ds, const DecompositionOptions& opt);

struct FiniteSupportResult {
    Eigen::MatrixXi labels;  // T x n, the risk-minimizing assignment
    double min_risk = 0.0;   // minimal weighted hinge risk over all assignments
    double bayes_risk = 0.0; // risk of the pointwise sgn(eta - 1/2) rule
};

// Exhaustive minimization of the weighted hinge risk over all +-1 label
// assignments on a finite support (n <= 12): eta is T x n, point_weights is
// the X marginal on the support, task_probs weights tasks. Verifies that the
// minimizer matches the Bayes rule pointwise up to ties.
FiniteSupportResult finite_support_minimizer(const Eigen::MatrixXd& eta,
                                             const Eigen::VectorXd& point_weights,
                                             const Eigen::VectorXd& task_probs);

}  // namespace mtsvm
