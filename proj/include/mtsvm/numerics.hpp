#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mtsvm {

// Adaptive Simpson quadrature on [a, b].
template <typename F>
double adaptive_simpson(const F& f, double a, double b, double tol = 1e-10, int max_depth = 40) {
    auto simpson = [](double fa, double fm, double fb, double h) {
        return h / 6.0 * (fa + 4.0 * fm + fb);
    };
    struct Impl {
        const F& f;
        int max_depth;
        double run(double a, double b, double fa, double fm, double fb, double whole, double tol,
                   int depth) const {
            const double m = 0.5 * (a + b);
            const double lm = 0.5 * (a + m);
            const double rm = 0.5 * (m + b);
            const double flm = f(lm);
            const double frm = f(rm);
            const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if (depth >= max_depth || std::abs(left + right - whole) <= 15.0 * tol)
                return left + right + (left + right - whole) / 15.0;
            return run(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1) +
                   run(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1);
        }
    };
    const double fa = f(a);
    const double fb = f(b);
    const double fm = f(0.5 * (a + b));
    const double whole = simpson(fa, fm, fb, b - a);
    return Impl{f, max_depth}.run(a, b, fa, fm, fb, whole, tol, 0);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / 1.4142135623730950488016887242097); }

inline double normal_pdf(double x, double mu, double sigma) {
    const double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * 2.5066282746310005024157652848110);
}

// Median of a copy; even length averages the middle pair.
inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
};

// Ordinary least squares y = slope * x + intercept with the usual residual
// based slope standard error.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 2) throw std::invalid_argument("fit_line needs >= 2 paired points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - (fit.intercept + fit.slope * x[i]);
        rss += r * r;
    }
    if (n > 2) fit.slope_stderr = std::sqrt(rss / (static_cast<double>(n) - 2.0) / sxx);
    return fit;
}

}  // namespace mtsvm
