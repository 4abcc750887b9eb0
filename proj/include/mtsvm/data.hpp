#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "mtsvm/kernel.hpp"
#include "mtsvm/rng.hpp"

namespace mtsvm {

// One observation: feature vector, +-1 label, 1-based task id.
struct TaskedSample {
    Eigen::VectorXd x;
    int label = 1;
    int task = 1;
};

struct TaskDataset {
    Eigen::MatrixXd x;     // n x d, one row per sample
    Eigen::VectorXi y;     // +-1
    Eigen::VectorXi task;  // 1-based
    int task_count = 0;
    TaskWeights weights;
    int redraws = 0;  // dataset-level resamples forced by an empty task

    long n() const { return x.rows(); }
    long dim() const { return x.cols(); }

    std::vector<int> rows_for_task(int t) const;
    void validate() const;
};

enum class GeneratorKind { FlipNoiseThreshold, SmoothLogistic, GaussianMixture };

// A synthetic task with closed-form positive-class probability
// P(Y = 1 | X = x), hence an exact Bayes rule and Bayes risk.
//
//   flip-noise-threshold: X uniform on [lo, hi]^dim; clean label is the side
//     of `threshold` along the first coordinate (the threshold itself counts
//     as the positive side) and is flipped with probability flip_prob.
//   smooth-logistic: X uniform on [lo, hi]^dim;
//     P(Y = 1 | x) = 1 / (1 + exp(-(slope * x[0] + offset))).
//   gaussian-mixture: Y = +1 with probability pos_weight; X | Y is an
//     isotropic Gaussian at mu_pos / mu_neg with shared noise_sigma.
struct GeneratorSpec {
    GeneratorKind kind = GeneratorKind::FlipNoiseThreshold;
    int dim = 1;

    double lo = -1.0;
    double hi = 1.0;

    double threshold = 0.0;
    double flip_prob = 0.1;

    double slope = 1.0;
    double offset = 0.0;

    double pos_weight = 0.5;
    Eigen::VectorXd mu_pos;
    Eigen::VectorXd mu_neg;
    double noise_sigma = 1.0;

    void validate() const;
};

// Task mixture: task ids are drawn i.i.d. with probabilities task_probs, then
// the task's generator produces (x, y).
struct SamplingSpec {
    Eigen::VectorXd task_probs;
    std::vector<GeneratorSpec> per_task;
    std::uint64_t seed = 0;

    long task_count() const { return static_cast<long>(per_task.size()); }
    void validate() const;
};

// Exact conditional probability P(Y = 1 | X = x).
double positive_prob(const GeneratorSpec& gen, const Eigen::VectorXd& x);
Eigen::VectorXd positive_prob(const GeneratorSpec& gen, const Eigen::MatrixXd& xs);

// sgn(positive_prob - 1/2) with the fixed tie-break sgn(0) := +1.
int bayes_label(const GeneratorSpec& gen, const Eigen::VectorXd& x);
Eigen::VectorXi bayes_label(const GeneratorSpec& gen, const Eigen::MatrixXd& xs);

// The task's Bayes error: flip-noise analytically (= flip_prob), the other
// kinds by adaptive quadrature of E[min(eta, 1 - eta)] reduced to one
// dimension (both kinds depend on x only through a known 1-D statistic).
double bayes_risk(const GeneratorSpec& gen, double quad_tol = 1e-10);

// Marginal draw of X alone and of a full (x, y) pair. Engine usage per
// sample is documented in the implementation and is part of the
// reproducibility contract.
Eigen::VectorXd sample_x(const GeneratorSpec& gen, Rng& rng);
Eigen::MatrixXd sample_x(const GeneratorSpec& gen, long count, Rng& rng);
TaskedSample sample_xy(const GeneratorSpec& gen, Rng& rng);

// Draw n samples: task ids from task_probs (stream mix64(seed, attempt, 1)),
// payloads from the tasks' generators (stream mix64(seed, attempt, 2)).
// Attempts with an empty task are redrawn wholesale, up to 100 times.
TaskDataset sample_dataset(const SamplingSpec& spec, long n);

// Dataset CSV: header `task,label,f1,...,fd`; decimal features with 17
// significant digits, so save -> load round-trips exactly.
void save_csv(const TaskDataset& ds, const std::string& path);
TaskDataset load_csv(const std::string& path);

}  // namespace mtsvm
