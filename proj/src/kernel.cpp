#include "mtsvm/kernel.hpp"

namespace mtsvm {

Eigen::MatrixXd gram_matrix(const GaussianKernel& k, const Eigen::MatrixXd& points) {
    k.validate();
    const Eigen::Index n = points.rows();
    if (n < 1) throw std::invalid_argument("gram_matrix needs at least one sample");
    const double inv = -1.0 / (2.0 * k.sigma * k.sigma);
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        auto head = points.topRows(j + 1);
        Eigen::VectorXd col =
            ((head.rowwise() - points.row(j)).rowwise().squaredNorm() * inv).array().exp();
        g.col(j).head(j + 1) = col;
        g.row(j).head(j + 1) = col.transpose();
    }
    return g;
}

Eigen::MatrixXd gram_matrix(const MultiTaskKernel& k, const Eigen::MatrixXd& points,
                            const Eigen::VectorXi& tasks) {
    k.validate();
    const Eigen::Index n = points.rows();
    if (n < 1) throw std::invalid_argument("gram_matrix needs at least one sample");
    if (tasks.size() != n) throw std::invalid_argument("one task id per sample required");

    const long t_count = k.weights.task_count();
    const double cross = 1.0 / k.lambda2;
    std::vector<double> same(static_cast<std::size_t>(t_count));
    for (long t = 1; t <= t_count; ++t) same[t - 1] = k.coupling(static_cast<int>(t), static_cast<int>(t));
    for (Eigen::Index i = 0; i < n; ++i)
        if (tasks[i] < 1 || tasks[i] > t_count)
            throw std::invalid_argument("unknown task id in sample list");

    const double inv = -1.0 / (2.0 * k.base.sigma * k.base.sigma);
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        auto head = points.topRows(j + 1);
        Eigen::VectorXd col =
            ((head.rowwise() - points.row(j)).rowwise().squaredNorm() * inv).array().exp();
        for (Eigen::Index i = 0; i <= j; ++i) {
            const double c = tasks[i] == tasks[j] ? same[tasks[i] - 1] : cross;
            const double v = c * col[i];
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

Eigen::MatrixXd cross_gram(const GaussianKernel& k, const Eigen::MatrixXd& a,
                           const Eigen::MatrixXd& b) {
    k.validate();
    if (a.cols() != b.cols()) throw std::invalid_argument("point sets must share a dimension");
    const double inv = -1.0 / (2.0 * k.sigma * k.sigma);
    Eigen::MatrixXd d2 = -2.0 * a * b.transpose();
    d2.colwise() += a.rowwise().squaredNorm();
    d2.rowwise() += b.rowwise().squaredNorm().transpose();
    return (d2 * inv).array().exp();
}

}  // namespace mtsvm
