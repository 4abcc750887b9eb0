#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include "mtsvm/kernel.hpp"
#include "mtsvm/rng.hpp"
#include "oracles.hpp"

using namespace mtsvm;

namespace {

Eigen::VectorXd vec1(double v) {
    Eigen::VectorXd x(1);
    x << v;
    return x;
}

MultiTaskKernel simple_mtk(double lambda1, double lambda2, std::vector<long> counts) {
    long total = 0;
    for (long c : counts) total += c;
    return MultiTaskKernel{GaussianKernel{1.0}, lambda1, lambda2, TaskWeights{counts, total}};
}

}  // namespace

TEST_CASE("gaussian kernel point evaluations") {
    GaussianKernel k{1.0};
    CHECK(kernel_eval(k, vec1(0.7), vec1(0.7)) == 1.0);
    CHECK(kernel_eval(k, vec1(0.0), vec1(1.0)) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(kernel_eval(k, vec1(-1.0), vec1(1.0)) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));

    GaussianKernel wide{2.5};
    Eigen::VectorXd a(3), b(3);
    a << 0.2, -0.4, 1.0;
    b << -0.3, 0.9, 0.1;
    CHECK(kernel_eval(wide, a, b) == kernel_eval(wide, b, a));
    CHECK(kernel_eval(wide, a, b) > 0.0);
    CHECK(kernel_eval(wide, a, b) <= 1.0);

    Eigen::VectorXd c(2);
    c << 0.0, 0.0;
    CHECK_THROWS_AS(kernel_eval(k, a, c), std::invalid_argument);
    CHECK_THROWS_AS((GaussianKernel{0.0}).validate(), std::invalid_argument);
}

TEST_CASE("coupled kernel point evaluations") {
    SUBCASE("single task, unit parameters") {
        auto mtk = simple_mtk(1.0, 1.0, {4});
        CHECK(kernel_eval(mtk, vec1(0.3), 1, vec1(0.3), 1) == doctest::Approx(2.0).epsilon(1e-15));
    }
    SUBCASE("cross-task coupling is the base kernel over lambda2") {
        auto mtk = simple_mtk(3.0, 1.0, {2, 2});
        CHECK(kernel_eval(mtk, vec1(0.5), 1, vec1(0.5), 2) == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("same-task increment") {
        auto mtk = simple_mtk(1.0, 2.0, {5, 5});
        CHECK(kernel_eval(mtk, vec1(0.1), 1, vec1(0.1), 1) == doctest::Approx(2.5).epsilon(1e-15));
    }
    SUBCASE("unknown task ids") {
        auto mtk = simple_mtk(1.0, 1.0, {2, 2});
        CHECK_THROWS_AS(kernel_eval(mtk, vec1(0.0), 3, vec1(0.0), 1), std::invalid_argument);
        CHECK_THROWS_AS(kernel_eval(mtk, vec1(0.0), 0, vec1(0.0), 1), std::invalid_argument);
    }
    SUBCASE("symmetry under simultaneous swap") {
        auto mtk = simple_mtk(0.7, 1.9, {3, 5, 2});
        Rng rng(7);
        for (int rep = 0; rep < 20; ++rep) {
            Eigen::VectorXd a = vec1(rng.uniform(-2, 2)), b = vec1(rng.uniform(-2, 2));
            const int t = 1 + static_cast<int>(rng.engine()() % 3);
            const int s = 1 + static_cast<int>(rng.engine()() % 3);
            CHECK(kernel_eval(mtk, a, t, b, s) == kernel_eval(mtk, b, s, a, t));
        }
    }
}

TEST_CASE("gram matrix structure") {
    SUBCASE("one sample, unit parameters") {
        auto mtk = simple_mtk(1.0, 1.0, {1});
        Eigen::MatrixXd x(1, 1);
        x << 0.4;
        Eigen::VectorXi tasks(1);
        tasks << 1;
        const Eigen::MatrixXd g = gram_matrix(mtk, x, tasks);
        CHECK(g.rows() == 1);
        CHECK(g(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
    }
    SUBCASE("duplicate point, same task: rank-1 with equal entries") {
        auto mtk = simple_mtk(1.0, 1.0, {2});
        Eigen::MatrixXd x(2, 1);
        x << 0.3, 0.3;
        Eigen::VectorXi tasks(2);
        tasks << 1, 1;
        const Eigen::MatrixXd g = gram_matrix(mtk, x, tasks);
        CHECK(g(0, 0) == g(0, 1));
        CHECK(g(0, 0) == g(1, 1));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
        CHECK(eig.eigenvalues()[0] == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("diagonal entries and exact symmetry") {
        Rng rng(11);
        auto ds = testing::random_instance(rng, 24, 3, 2);
        MultiTaskKernel mtk{GaussianKernel{0.8}, 0.9, 1.7, ds.weights};
        const Eigen::MatrixXd g = gram_matrix(mtk, ds.x, ds.task);
        CHECK((g - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
        for (long i = 0; i < ds.n(); ++i) {
            const double expect =
                1.0 / 1.7 + 24.0 / (0.9 * static_cast<double>(ds.weights.counts[ds.task[i] - 1]));
            CHECK(g(i, i) == doctest::Approx(expect).epsilon(1e-15));
        }
        const Eigen::MatrixXd naive = testing::naive_coupled_gram(ds, 0.9, 1.7, 0.8);
        CHECK((g - naive).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("positive semidefinite on random instances") {
        Rng rng(13);
        for (int rep = 0; rep < 25; ++rep) {
            const long n = 2 + static_cast<long>(rng.engine()() % 31);
            const int t_count = 1 + static_cast<int>(rng.engine()() % 4);
            if (n < t_count) continue;
            auto ds = testing::random_instance(rng, n, t_count, 1 + static_cast<int>(rng.engine()() % 3));
            MultiTaskKernel mtk{GaussianKernel{rng.uniform(0.3, 2.0)}, rng.uniform(0.1, 5.0),
                                rng.uniform(0.1, 5.0), ds.weights};
            const Eigen::MatrixXd g = gram_matrix(mtk, ds.x, ds.task);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
            CHECK(eig.eigenvalues().minCoeff() >= -1e-9);
        }
    }
}

TEST_CASE("coupling is monotone in lambda2 and the same-task increment is unchanged") {
    Eigen::MatrixXd x(4, 1);
    x << -0.5, 0.1, 0.4, 0.9;
    Eigen::VectorXi tasks(4);
    tasks << 1, 1, 2, 2;
    TaskWeights w{{2, 2}, 4};
    MultiTaskKernel low{GaussianKernel{1.0}, 1.3, 1.0, w};
    MultiTaskKernel high{GaussianKernel{1.0}, 1.3, 4.0, w};
    const Eigen::MatrixXd g_low = gram_matrix(low, x, tasks);
    const Eigen::MatrixXd g_high = gram_matrix(high, x, tasks);
    for (long i = 0; i < 4; ++i) {
        for (long j = 0; j < 4; ++j) {
            if (tasks[i] != tasks[j]) CHECK(g_high(i, j) < g_low(i, j));
        }
    }
    // delta-term increment = G_same - (1/lambda2) K, identical across lambda2
    const GaussianKernel base{1.0};
    for (long i = 0; i < 4; ++i) {
        const double k_ii = 1.0;
        const double inc_low = g_low(i, i) - k_ii / 1.0;
        const double inc_high = g_high(i, i) - k_ii / 4.0;
        CHECK(inc_low == doctest::Approx(inc_high).epsilon(1e-15));
    }
    (void)base;
}

TEST_CASE("uniform norm of a kernel expansion is bounded by its RKHS norm") {
    Rng rng(17);
    for (int rep = 0; rep < 10; ++rep) {
        const long m = 3 + static_cast<long>(rng.engine()() % 10);
        GaussianKernel k{rng.uniform(0.3, 1.5)};
        Eigen::MatrixXd points(m, 1);
        Eigen::VectorXd coeffs(m);
        for (long j = 0; j < m; ++j) {
            points(j, 0) = rng.uniform(-1.0, 1.0);
            coeffs[j] = rng.uniform(-2.0, 2.0);
        }
        const Eigen::MatrixXd gram = gram_matrix(k, points);
        const double norm = std::sqrt(std::max(0.0, coeffs.dot(gram * coeffs)));
        double sup = 0.0;
        for (int gi = 0; gi <= 2000; ++gi) {
            const double xv = -2.0 + 4.0 * gi / 2000.0;
            double value = 0.0;
            for (long j = 0; j < m; ++j)
                value += coeffs[j] * std::exp(-(xv - points(j, 0)) * (xv - points(j, 0)) /
                                              (2.0 * k.sigma * k.sigma));
            sup = std::max(sup, std::abs(value));
        }
        CHECK(sup <= norm + 1e-12);
    }
}
