#pragma once

// CES production-function family: mean and variance components, their log
// forms, and the analytic risk derivatives.
//
// Mean component      f(x) = exp(lnA + aD*D) * [sum_i alpha_i x_i^r1]^(1/r1)
// Variance component  h(x) = exp(2*(lnB + bD*D)) * [sum_i beta_i x_i^r2]^(1/r2)
//
// The kernel [sum w_i x_i^r]^(1/r) is evaluated in log space throughout:
// a shifted-exponential sum for large |r*ln x| (no overflow for r like -200),
// and an expm1/log1p path near r = 0 that stays accurate down to the
// Cobb-Douglas switch. Below |r| < kCobbDouglasSwitch the multiplicative
// limit form prod x_i^{w_i} is used (valid because the weights sum to one).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "linalg.hpp"

namespace cesrisk {

inline constexpr double kCobbDouglasSwitch = 1e-8;

struct InputPoint {
    Vec values;          // input quantities, all > 0
    double dummy = 0.0;  // 0/1 year indicator
};

struct CesMeanParams {
    double ln_scale = 0.0;    // ln A
    double dummy_coef = 0.0;  // multiplicative log shift for the dummy year
    double r = 0.5;           // substitution exponent, r < 1
    Vec shares;               // alpha, each > 0, summing to one

    double substitution_elasticity() const { return 1.0 / (1.0 - r); }

    // r < 1 is an estimation-side constraint (kept by the fitting transform);
    // evaluation is defined for any finite r, including the linear case r = 1.
    void validate() const {
        if (!std::isfinite(r)) throw std::domain_error("CesMeanParams: r must be finite");
        double sum = 0.0;
        for (double a : shares) {
            if (!(a > 0.0)) throw std::domain_error("CesMeanParams: shares must be positive");
            sum += a;
        }
        if (std::fabs(sum - 1.0) > 1e-8)
            throw std::domain_error("CesMeanParams: shares must sum to one");
    }
};

struct CesVarParams {
    double ln_scale = 0.0;    // ln B
    double dummy_coef = 0.0;
    double r = 0.5;
    Vec weights;              // beta, sign-free, summing to one

    void validate() const {
        if (!std::isfinite(r)) throw std::domain_error("CesVarParams: r must be finite");
        double sum = 0.0;
        for (double b : weights) sum += b;
        if (std::fabs(sum - 1.0) > 1e-8)
            throw std::domain_error("CesVarParams: weights must sum to one");
    }
};

struct ThresholdParams {
    CesMeanParams base;
    Vec thresholds;  // per-input minimum quantities b_i
};

namespace kernel {

// log of [sum_i w_i x_i^r]^(1/r) for weights summing to one.
// Throws std::domain_error when the inner sum is non-positive (possible only
// with negative weights) or when an input is non-positive.
inline double log_kernel(const Vec& w, double r, const Vec& x) {
    const std::size_t n = x.size();
    if (w.size() != n) throw std::invalid_argument("kernel: weight/input size mismatch");
    std::vector<double> lx(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(x[i] > 0.0)) throw std::domain_error("kernel: input " + std::to_string(i) + " must be positive");
        lx[i] = std::log(x[i]);
    }
    if (std::fabs(r) < kCobbDouglasSwitch) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += w[i] * lx[i];
        return s;
    }
    double amax = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) amax = std::max(amax, std::fabs(r * lx[i]));
    if (amax < 0.5) {
        // sum w_i x_i^r = 1 + sum w_i expm1(r ln x_i), accurate through r -> 0
        double e = 0.0;
        for (std::size_t i = 0; i < n; ++i) e += w[i] * std::expm1(r * lx[i]);
        if (!(e > -1.0)) throw std::domain_error("variance kernel non-positive at point");
        return std::log1p(e) / r;
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, r * lx[i]);
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) t += w[i] * std::exp(r * lx[i] - m);
    if (!(t > 0.0)) throw std::domain_error("variance kernel non-positive at point");
    return (m + std::log(t)) / r;
}

// Kernel-share terms q_i = x_i^r / (sum_j w_j x_j^r), so that
// d log_kernel / d x_i = w_i q_i / x_i and d log_kernel / d w_i = q_i / r.
inline std::vector<double> kernel_ratios(const Vec& w, double r, const Vec& x) {
    const std::size_t n = x.size();
    std::vector<double> q(n);
    if (std::fabs(r) < kCobbDouglasSwitch) {
        std::fill(q.begin(), q.end(), 1.0);
        return q;
    }
    std::vector<double> lx(n);
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        lx[i] = std::log(x[i]);
        m = std::max(m, r * lx[i]);
    }
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        q[i] = std::exp(r * lx[i] - m);
        t += w[i] * q[i];
    }
    if (!(t > 0.0)) throw std::domain_error("variance kernel non-positive at point");
    for (std::size_t i = 0; i < n; ++i) q[i] /= t;
    return q;
}

// d log_kernel / d r. Uses a cumulant series below |r| = 1e-4 where the
// closed form cancels catastrophically.
inline double log_kernel_dr(const Vec& w, double r, const Vec& x) {
    const std::size_t n = x.size();
    std::vector<double> lx(n);
    for (std::size_t i = 0; i < n; ++i) lx[i] = std::log(x[i]);
    if (std::fabs(r) < 1e-4) {
        double m1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) m1 += w[i] * lx[i];
        double k2 = 0.0, k3 = 0.0, k4c = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = lx[i] - m1;
            k2 += w[i] * d * d;
            k3 += w[i] * d * d * d;
            k4c += w[i] * d * d * d * d;
        }
        const double k4 = k4c - 3.0 * k2 * k2;
        return 0.5 * k2 + r * k3 / 3.0 + r * r * k4 / 8.0;
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, r * lx[i]);
    double t0 = 0.0, t1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = w[i] * std::exp(r * lx[i] - m);
        t0 += e;
        t1 += e * lx[i];
    }
    if (!(t0 > 0.0)) throw std::domain_error("variance kernel non-positive at point");
    const double lk = (m + std::log(t0)) / r;  // log_kernel
    return (t1 / t0 - lk) / r;
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Mean component
// ---------------------------------------------------------------------------

inline double eval_log_mean(const CesMeanParams& p, const InputPoint& pt) {
    const double v = p.ln_scale + p.dummy_coef * pt.dummy + kernel::log_kernel(p.shares, p.r, pt.values);
    if (!std::isfinite(v))
        throw std::domain_error("eval_log_mean: non-finite result for exponent r=" + std::to_string(p.r));
    return v;
}

inline double eval_mean(const CesMeanParams& p, const InputPoint& pt) {
    const double y = std::exp(eval_log_mean(p, pt));
    if (!std::isfinite(y))
        throw std::domain_error("eval_mean: overflow for exponent r=" + std::to_string(p.r));
    return y;
}

// Marginal product df/dx_i of the deterministic component.
inline double marginal_product(const CesMeanParams& p, const InputPoint& pt, std::size_t i) {
    const double f = eval_mean(p, pt);
    const auto q = kernel::kernel_ratios(p.shares, p.r, pt.values);
    return f * p.shares[i] * q[i] / pt.values[i];
}

// ---------------------------------------------------------------------------
// Risk derivatives of the original (multiplicative-noise) CES
// ---------------------------------------------------------------------------

// dV(y)/dx_i with V(y) = f(x)^2 V(e^eps); always positive for var_eps > 0.
inline double dvar_dinput(const CesMeanParams& p, double var_eps, const InputPoint& pt, std::size_t i) {
    if (var_eps < 0.0) throw std::invalid_argument("dvar_dinput: var_eps must be >= 0");
    if (var_eps == 0.0) return 0.0;
    const double f = eval_mean(p, pt);
    const auto q = kernel::kernel_ratios(p.shares, p.r, pt.values);
    return 2.0 * f * f * p.shares[i] * q[i] / pt.values[i] * var_eps;
}

// V(df/dx_i) = (marginal product)^2 V(e^eps).
inline double var_marginal_product(const CesMeanParams& p, double var_eps, const InputPoint& pt,
                                   std::size_t i) {
    if (var_eps < 0.0) throw std::invalid_argument("var_marginal_product: var_eps must be >= 0");
    if (var_eps == 0.0) return 0.0;
    const double mp = marginal_product(p, pt, i);
    return mp * mp * var_eps;
}

// d V(df/dx_i) / dx_i, obtained by differentiating the variance of the
// marginal product directly:
//   2 A^2 alpha_i^2 (r-1) S^{2/r-3} x_i^{2r-3} [sum_{j!=i} alpha_j x_j^r] V(e^eps)
// Negative whenever r < 1, var_eps > 0 and another input is present.
inline double dvar_mp_dinput(const CesMeanParams& p, double var_eps, const InputPoint& pt,
                             std::size_t i) {
    if (var_eps < 0.0) throw std::invalid_argument("dvar_mp_dinput: var_eps must be >= 0");
    if (var_eps == 0.0) return 0.0;
    if (pt.values.size() < 2) throw std::invalid_argument("dvar_mp_dinput: needs two or more inputs");
    const double vmp = var_marginal_product(p, var_eps, pt, i);
    const auto q = kernel::kernel_ratios(p.shares, p.r, pt.values);
    const double own = p.shares[i] * q[i];  // alpha_i x_i^r / S
    // d/dx_i of [A alpha_i S^{1/r-1} x^{r-1}]^2 v = vmp * 2(r-1)(1 - own)/x_i
    return vmp * 2.0 * (p.r - 1.0) * (1.0 - own) / pt.values[i];
}

// ---------------------------------------------------------------------------
// Variance component of the composite specification
// ---------------------------------------------------------------------------

inline double eval_log_variance(const CesVarParams& p, const InputPoint& pt) {
    const double v = 2.0 * (p.ln_scale + p.dummy_coef * pt.dummy) +
                     kernel::log_kernel(p.weights, p.r, pt.values);
    if (!std::isfinite(v))
        throw std::domain_error("eval_log_variance: non-finite result for exponent r=" + std::to_string(p.r));
    return v;
}

inline double eval_variance(const CesVarParams& p, const InputPoint& pt) {
    const double h = std::exp(eval_log_variance(p, pt));
    if (!std::isfinite(h))
        throw std::domain_error("eval_variance: overflow for exponent r=" + std::to_string(p.r));
    return h;
}

// Analytic partial h_i = dh/dx_i. Sign follows the sign of weights[i].
inline double variance_partial(const CesVarParams& p, const InputPoint& pt, std::size_t i) {
    const double h = eval_variance(p, pt);
    const auto q = kernel::kernel_ratios(p.weights, p.r, pt.values);
    return h * p.weights[i] * q[i] / pt.values[i];
}

// V(dy/dx_i) under the composite model: h_i^2 / (4h). The mean parameters do
// not enter; the argument is kept for interface symmetry with the original-CES
// counterpart.
inline double jp_var_mp(const CesMeanParams& /*mean*/, const CesVarParams& var, const InputPoint& pt,
                        std::size_t i) {
    const double h = eval_variance(var, pt);
    const double hi = variance_partial(var, pt, i);
    return hi * hi / (4.0 * h);
}

// ---------------------------------------------------------------------------
// Threshold variant
// ---------------------------------------------------------------------------

inline double eval_threshold_mean(const ThresholdParams& p, const InputPoint& pt) {
    InputPoint shifted = pt;
    for (std::size_t i = 0; i < pt.values.size(); ++i) {
        shifted.values[i] = pt.values[i] - p.thresholds[i];
        if (!(shifted.values[i] > 0.0))
            throw std::domain_error("input below threshold at index " + std::to_string(i));
    }
    return eval_mean(p.base, shifted);
}

// ---------------------------------------------------------------------------
// Model gradients used by the estimation stages (constrained space)
// ---------------------------------------------------------------------------

struct MeanModelGrad {
    double d_ln_scale = 0.0;
    double d_dummy = 0.0;
    double d_r = 0.0;
    Vec d_shares;
};

// Value and gradient of the log-mean model in one pass.
inline double eval_log_mean_grad(const CesMeanParams& p, const InputPoint& pt, MeanModelGrad& g) {
    const double v = eval_log_mean(p, pt);
    const std::size_t n = pt.values.size();
    g.d_ln_scale = 1.0;
    g.d_dummy = pt.dummy;
    g.d_r = kernel::log_kernel_dr(p.shares, p.r, pt.values);
    g.d_shares.assign(n, 0.0);
    if (std::fabs(p.r) < kCobbDouglasSwitch) {
        for (std::size_t i = 0; i < n; ++i) g.d_shares[i] = std::log(pt.values[i]);
    } else {
        const auto q = kernel::kernel_ratios(p.shares, p.r, pt.values);
        for (std::size_t i = 0; i < n; ++i) g.d_shares[i] = q[i] / p.r;
    }
    return v;
}

struct VarModelGrad {
    double d_ln_scale = 0.0;
    double d_dummy = 0.0;
    double d_r = 0.0;
    Vec d_weights;
};

inline double eval_log_variance_grad(const CesVarParams& p, const InputPoint& pt, VarModelGrad& g) {
    const double v = eval_log_variance(p, pt);
    const std::size_t n = pt.values.size();
    g.d_ln_scale = 2.0;
    g.d_dummy = 2.0 * pt.dummy;
    g.d_r = kernel::log_kernel_dr(p.weights, p.r, pt.values);
    g.d_weights.assign(n, 0.0);
    if (std::fabs(p.r) < kCobbDouglasSwitch) {
        for (std::size_t i = 0; i < n; ++i) g.d_weights[i] = std::log(pt.values[i]);
    } else {
        const auto q = kernel::kernel_ratios(p.weights, p.r, pt.values);
        for (std::size_t i = 0; i < n; ++i) g.d_weights[i] = q[i] / p.r;
    }
    return v;
}

}  // namespace cesrisk
