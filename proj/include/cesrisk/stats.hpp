#pragma once

// Distribution tails and descriptive statistics used by the regression
// inference tables. The F and t tails both reduce to the regularized
// incomplete beta function, evaluated by the standard continued fraction.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace cesrisk {

inline double log_beta(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

namespace detail {

// Continued fraction for the incomplete beta (modified Lentz).
inline double betacf(double a, double b, double x) {
    constexpr int max_iter = 300;
    constexpr double eps = 3e-16;
    constexpr double fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double ibeta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("ibeta: a, b must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double front = std::exp(a * std::log(x) + b * std::log1p(-x) - log_beta(a, b));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::betacf(a, b, x) / a;
    return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

// Upper tail P(F > f) for an F(df1, df2) statistic.
inline double f_pvalue(double f, int df1, int df2) {
    if (df1 < 1 || df2 < 1) throw std::invalid_argument("f_pvalue: degrees of freedom must be >= 1");
    if (std::isnan(f) || f < 0.0) throw std::invalid_argument("f_pvalue: F must be non-negative");
    if (std::isinf(f)) return 0.0;
    if (f == 0.0) return 1.0;
    const double x = df2 / (df2 + df1 * f);
    return ibeta(0.5 * df2, 0.5 * df1, x);
}

// Two-sided P(|T| > t) for Student's t with df degrees of freedom.
inline double t_two_sided_pvalue(double t, int df) {
    if (df < 1) throw std::invalid_argument("t_two_sided_pvalue: df must be >= 1");
    if (std::isinf(t)) return 0.0;
    if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
    return ibeta(0.5 * df, 0.5, df / (df + t * t));
}

// Upper quantile: t such that P(|T| > t) = alpha. Bisection is plenty here;
// this only feeds confidence-interval columns.
inline double t_critical(double alpha, int df) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("t_critical: alpha in (0,1)");
    double lo = 0.0, hi = 1.0;
    while (t_two_sided_pvalue(hi, df) > alpha) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (t_two_sided_pvalue(mid, df) > alpha)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// Two-sided normal tail, used for the significance stars on estimate/SE ratios.
inline double normal_two_sided_pvalue(double z) {
    return std::erfc(std::fabs(z) / std::sqrt(2.0));
}

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

// n-1 sample standard deviation; NaN for fewer than two values.
inline double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double sample_variance(const std::vector<double>& v) {
    const double sd = sample_sd(v);
    return sd * sd;
}

}  // namespace cesrisk
