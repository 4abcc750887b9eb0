#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace mtsvm {

// Gaussian base kernel K(x, x') = exp(-|x - x'|^2 / (2 sigma^2)).
// K(x, x) = 1, so the RKHS embedding constant sup_x sqrt(K(x, x)) is 1.
struct GaussianKernel {
    double sigma = 1.0;

    void validate() const {
        if (!(sigma > 0.0)) throw std::invalid_argument("kernel sigma must be > 0");
    }
};

// Per-task sample counts m_t and their total N.
struct TaskWeights {
    std::vector<long> counts;  // counts[t-1] = m_t
    long total = 0;            // N

    long task_count() const { return static_cast<long>(counts.size()); }

    void validate() const {
        if (counts.empty() || total <= 0) throw std::invalid_argument("empty task weights");
        long sum = 0;
        for (long c : counts) {
            if (c < 0) throw std::invalid_argument("negative task count");
            sum += c;
        }
        if (sum != total) throw std::invalid_argument("task counts do not sum to total");
    }

    void validate_trainable() const {
        validate();
        for (long c : counts)
            if (c < 1) throw std::invalid_argument("every task needs at least one sample");
    }
};

// Kernel on (point, task) pairs induced by the two-term regularizer:
//   G((x,t), (x',s)) = (1/lambda2 + [t==s] * N / (lambda1 * m_t)) * K(x, x').
// The cross-task part couples every pair of tasks through the shared
// component; the block-diagonal part carries each task's individual one.
struct MultiTaskKernel {
    GaussianKernel base;
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    TaskWeights weights;

    void validate() const {
        base.validate();
        if (!(lambda1 > 0.0)) throw std::invalid_argument("lambda1 must be > 0");
        if (!(lambda2 > 0.0)) throw std::invalid_argument("lambda2 must be > 0");
        weights.validate_trainable();
    }

    // 1-based task ids.
    double coupling(int t, int s) const {
        if (t < 1 || t > weights.task_count() || s < 1 || s > weights.task_count())
            throw std::invalid_argument("unknown task id in kernel evaluation");
        double c = 1.0 / lambda2;
        if (t == s) c += static_cast<double>(weights.total) / (lambda1 * static_cast<double>(weights.counts[t - 1]));
        return c;
    }
};

template <typename DerivedA, typename DerivedB>
double kernel_eval(const GaussianKernel& k, const Eigen::MatrixBase<DerivedA>& x,
                   const Eigen::MatrixBase<DerivedB>& x2) {
    if (x.size() != x2.size() || x.size() < 1)
        throw std::invalid_argument("kernel arguments must share a dimension >= 1");
    const double d2 = (x.derived().template cast<double>() - x2.derived().template cast<double>())
                          .squaredNorm();
    return std::exp(-d2 / (2.0 * k.sigma * k.sigma));
}

template <typename DerivedA, typename DerivedB>
double kernel_eval(const MultiTaskKernel& k, const Eigen::MatrixBase<DerivedA>& x, int t,
                   const Eigen::MatrixBase<DerivedB>& x2, int s) {
    return k.coupling(t, s) * kernel_eval(k.base, x, x2);
}

// Dense Gram matrix of the base kernel; rows of `points` are samples.
// Upper triangle is computed once and mirrored, so the result is exactly
// symmetric and has a unit diagonal.
Eigen::MatrixXd gram_matrix(const GaussianKernel& k, const Eigen::MatrixXd& points);

// Dense Gram matrix of the coupled kernel over (point, task) samples.
Eigen::MatrixXd gram_matrix(const MultiTaskKernel& k, const Eigen::MatrixXd& points,
                            const Eigen::VectorXi& tasks);

// Rectangular base-kernel matrix K(a_i, b_j) for two point sets.
Eigen::MatrixXd cross_gram(const GaussianKernel& k, const Eigen::MatrixXd& a,
                           const Eigen::MatrixXd& b);

}  // namespace mtsvm
