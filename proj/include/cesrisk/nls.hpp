#pragma once

// Damped Gauss-Newton (Levenberg-style multiplicative damping) least squares,
// iterating in an unconstrained parameterization and reporting estimates,
// covariance and standard errors in the constrained space via the delta
// method. A numerical Jacobian fallback exists for problems that do not
// supply one; the CES fits in this repo always pass analytic Jacobians.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "linalg.hpp"

namespace cesrisk {

struct NlsOptions {
    int max_iterations = 500;
    double ssr_rel_tol = 1e-10;   // relative SSR change on accepted steps
    double grad_tol = 1e-8;       // infinity norm of grad SSR = 2 J'r
    double lambda_init = 1e-3;    // x10 on rejected step, /10 on accepted
    double lambda_max = 1e14;
    double max_step = 10.0;       // per-iteration cap on |step|_inf; keeps flat
                                  // directions from jumping to transform limits
    double fd_step = 1e-6;        // relative step of the numeric fallback
};

// Bijection between the solver's unconstrained space and the reported
// (constrained) parameter space.
struct ParamTransform {
    std::function<Vec(const Vec&)> to_constrained;
    std::function<Vec(const Vec&)> to_unconstrained;
    std::function<Matrix(const Vec&)> jacobian;  // d constrained / d unconstrained at u

    static ParamTransform identity() {
        ParamTransform t;
        t.to_constrained = [](const Vec& u) { return u; };
        t.to_unconstrained = [](const Vec& c) { return c; };
        t.jacobian = [](const Vec& u) { return Matrix::identity(u.size()); };
        return t;
    }
};

struct NlsProblem {
    std::function<Vec(const Vec&)> residual;   // constrained theta -> residual vector
    std::function<Matrix(const Vec&)> jacobian;  // optional: d residual / d theta_c
    ParamTransform transform = ParamTransform::identity();
    Vec initial;                                // constrained space
    std::vector<std::string> param_names;
    NlsOptions options;
};

struct StartRecord {
    Vec start;
    double ssr = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    int iterations = 0;
    std::string error;  // non-empty when the start failed outright
};

struct FitResult {
    Vec estimates;       // constrained space
    Vec std_errors;
    Matrix covariance;   // constrained space
    Vec residuals;
    double ssr = 0.0;
    double sigma2 = 0.0;  // SSR / (n - p), p = free parameter count
    int iterations = 0;
    bool converged = false;
    // set when the covariance needed regularization because a constrained
    // parameter sits at its transform limit (e.g. r at 1); the affected
    // standard errors are effectively unbounded
    bool boundary_degenerate = false;
    double grad_inf_norm = 0.0;  // of grad SSR at the final point
    std::size_t n_obs = 0;
    std::size_t n_free_params = 0;
    std::vector<std::string> param_names;
    Vec ssr_trace;  // SSR after each accepted step, starting at the initial point
    std::vector<StartRecord> start_trace;
};

struct NlsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double sum_sq(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

// Residuals at an unconstrained point; non-finite entries and thrown domain
// errors both surface as nullopt so the damping loop can reject the step.
inline std::optional<Vec> try_residual(const NlsProblem& p, const Vec& u) {
    Vec r;
    try {
        r = p.residual(p.transform.to_constrained(u));
    } catch (const std::domain_error&) {
        return std::nullopt;
    }
    if (!all_finite(r)) return std::nullopt;
    return r;
}

inline Matrix numeric_jacobian_u(const NlsProblem& p, const Vec& u, std::size_t n_res, double rel_step) {
    Matrix j(n_res, u.size());
    Vec up = u;
    for (std::size_t k = 0; k < u.size(); ++k) {
        const double h = rel_step * std::max(1.0, std::fabs(u[k]));
        up[k] = u[k] + h;
        auto rp = try_residual(p, up);
        up[k] = u[k] - h;
        auto rm = try_residual(p, up);
        up[k] = u[k];
        if (!rp || !rm) throw NlsError("numeric Jacobian: residual undefined near the current point");
        for (std::size_t i = 0; i < n_res; ++i) j(i, k) = ((*rp)[i] - (*rm)[i]) / (2.0 * h);
    }
    return j;
}

inline Matrix jacobian_u(const NlsProblem& p, const Vec& u, std::size_t n_res) {
    if (!p.jacobian) return numeric_jacobian_u(p, u, n_res, p.options.fd_step);
    const Vec c = p.transform.to_constrained(u);
    const Matrix jc = p.jacobian(c);
    const Matrix g = p.transform.jacobian(u);
    return matmul(jc, g);
}

}  // namespace detail

inline FitResult solve_nls(const NlsProblem& problem) {
    const NlsOptions& opt = problem.options;
    Vec u = problem.transform.to_unconstrained(problem.initial);
    const std::size_t np = u.size();

    auto r0 = detail::try_residual(problem, u);
    if (!r0) throw NlsError("solve_nls: residual undefined at the initial point");
    Vec r = *r0;
    const std::size_t n = r.size();
    if (n < np + 1) throw NlsError("solve_nls: needs more observations than parameters");

    double ssr = detail::sum_sq(r);
    double lambda = opt.lambda_init;
    bool converged = false;
    int iter = 0;
    double grad_norm = std::numeric_limits<double>::infinity();
    Vec ssr_trace{ssr};

    for (; iter < opt.max_iterations; ++iter) {
        const Matrix j = detail::jacobian_u(problem, u, n);
        Vec g = transpose_times(j, r);  // (1/2) grad SSR
        grad_norm = 2.0 * inf_norm(g);
        if (grad_norm < opt.grad_tol) {
            converged = true;
            break;
        }
        Matrix a = gram(j);
        double max_diag = 1e-12;
        for (std::size_t k = 0; k < np; ++k) max_diag = std::max(max_diag, a(k, k));

        bool accepted = false;
        while (lambda <= opt.lambda_max) {
            Matrix damped = a;
            // the damping floor is relative to the best-scaled direction so a
            // locally dead column cannot produce an astronomical component
            for (std::size_t k = 0; k < np; ++k)
                damped(k, k) += lambda * std::max(a(k, k), 1e-8 * max_diag);
            Vec step;
            try {
                const Matrix l = cholesky(damped);
                Vec neg_g(np);
                for (std::size_t k = 0; k < np; ++k) neg_g[k] = -g[k];
                step = cholesky_solve(l, neg_g);
            } catch (const SingularMatrixError&) {
                lambda *= 10.0;
                continue;
            }
            // per-component cap: keeps flat directions from drowning out the
            // informative ones when a step must be shortened
            for (double& s : step) s = std::clamp(s, -opt.max_step, opt.max_step);
            Vec u_try(np);
            for (std::size_t k = 0; k < np; ++k) u_try[k] = u[k] + step[k];
            auto r_try = detail::try_residual(problem, u_try);
            if (r_try) {
                const double ssr_try = detail::sum_sq(*r_try);
                if (ssr_try < ssr) {
                    const double rel_change = (ssr - ssr_try) / std::max(ssr, 1e-300);
                    // fitted values stationary = asymptotic creep along a
                    // boundary direction; treat as converged
                    double fit_change = 0.0;
                    for (std::size_t k = 0; k < n; ++k)
                        fit_change = std::max(fit_change, std::fabs((*r_try)[k] - r[k]));
                    u = std::move(u_try);
                    r = std::move(*r_try);
                    ssr = ssr_try;
                    ssr_trace.push_back(ssr);
                    lambda = std::max(lambda / 10.0, 1e-12);
                    accepted = true;
                    if (rel_change < opt.ssr_rel_tol ||
                        fit_change < 1e-9 * (1.0 + std::sqrt(ssr / static_cast<double>(n))))
                        converged = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if (!accepted || converged) {
            if (!accepted) {
                // No downhill step at any lambda. Decide whether the quadratic
                // model could still improve the SSR materially; if not we are
                // numerically at an optimum.
                double attainable = std::numeric_limits<double>::infinity();
                try {
                    Matrix damped = a;
                    for (std::size_t k = 0; k < np; ++k)
                        damped(k, k) += 1e-8 * std::max(a(k, k), 1e-12);
                    Vec neg_g(np);
                    for (std::size_t k = 0; k < np; ++k) neg_g[k] = -g[k];
                    const Vec d = cholesky_solve(cholesky(damped), neg_g);
                    attainable = -0.5 * dot(g, d);  // = half g'A^{-1}g
                } catch (const SingularMatrixError&) {
                }
                converged = grad_norm < opt.grad_tol ||
                            attainable <= 10.0 * opt.ssr_rel_tol * std::max(ssr, 1e-300);
            }
            ++iter;
            break;
        }
    }

    // Undamped polish step: exact for linear problems, harmless otherwise
    // (kept only when it does not increase the SSR).
    try {
        const Matrix j = detail::jacobian_u(problem, u, n);
        const Matrix l = cholesky(gram(j));
        Vec g = transpose_times(j, r);
        for (double& v : g) v = -v;
        const Vec step = cholesky_solve(l, g);
        Vec u_try(np);
        for (std::size_t k = 0; k < np; ++k) u_try[k] = u[k] + step[k];
        if (auto r_try = detail::try_residual(problem, u_try)) {
            const double ssr_try = detail::sum_sq(*r_try);
            // near the optimum the comparison sits within rounding noise
            if (ssr_try <= ssr * (1.0 + 1e-12)) {
                u = std::move(u_try);
                r = std::move(*r_try);
                ssr = ssr_try;
                if (ssr < ssr_trace.back()) ssr_trace.push_back(ssr);
            }
        }
    } catch (const SingularMatrixError&) {
        // covariance computation below reports the rank deficiency
    }

    FitResult res;
    res.n_obs = n;
    res.n_free_params = np;
    res.iterations = iter;
    res.ssr = ssr;
    res.residuals = r;
    res.converged = converged;
    res.param_names = problem.param_names;
    res.ssr_trace = std::move(ssr_trace);
    res.sigma2 = ssr / static_cast<double>(n - np);

    // Final gradient and covariance in the reporting space.
    const Matrix j = detail::jacobian_u(problem, u, n);
    res.grad_inf_norm = 2.0 * inf_norm(transpose_times(j, r));
    Matrix cov_u;
    try {
        const Matrix l = cholesky(gram(j));
        cov_u = cholesky_inverse(l);
    } catch (const SingularMatrixError& e) {
        // Distinguish a structurally rank-deficient model from a locally
        // degenerate one (a transform at the edge of the feasible region, or
        // a parameter the model momentarily does not depend on): structural
        // deficiency persists under small parameter perturbations.
        const std::size_t pivot = e.pivot;
        bool structural = true;
        try {
            cholesky(gram(problem.transform.jacobian(u)));
        } catch (const SingularMatrixError&) {
            structural = false;
        }
        int probes_evaluated = 0;
        for (int probe = 0; probe < 2 && structural; ++probe) {
            Vec u_probe = u;
            for (std::size_t k = 0; k < np; ++k)
                u_probe[k] += (((k + probe) % 2) ? 0.05 : -0.05) * (1.0 + std::fabs(u[k]));
            try {
                if (!detail::try_residual(problem, u_probe)) continue;
                const Matrix jp = detail::jacobian_u(problem, u_probe, n);
                ++probes_evaluated;
                cholesky(gram(jp));
                structural = false;  // rank recovers away from this point
            } catch (const SingularMatrixError&) {
            } catch (const std::exception&) {
            }
        }
        if (probes_evaluated == 0) structural = false;  // ambiguous: report, don't refuse
        if (structural) {
            const std::string dir = pivot < problem.param_names.size()
                                        ? problem.param_names[pivot]
                                        : "parameter " + std::to_string(pivot);
            throw NlsError("Jacobian rank-deficient in the direction of " + dir);
        }
        Matrix a = gram(j);
        double scale = 0.0;
        for (std::size_t k = 0; k < np; ++k) scale = std::max(scale, a(k, k));
        double ridge = std::max(scale, 1.0) * 1e-12;
        for (int attempt = 0; attempt < 8; ++attempt, ridge *= 100.0) {
            Matrix damped = a;
            for (std::size_t k = 0; k < np; ++k) damped(k, k) += ridge;
            try {
                cov_u = cholesky_inverse(cholesky(damped));
                res.boundary_degenerate = true;
                break;
            } catch (const SingularMatrixError&) {
            }
        }
        if (!res.boundary_degenerate)
            throw NlsError("Jacobian rank-deficient at the transform boundary");
    }
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t k = 0; k < np; ++k) cov_u(i, k) *= res.sigma2;

    const Matrix g = problem.transform.jacobian(u);  // nc x nu
    res.covariance = matmul(matmul(g, cov_u), [&] {
        Matrix gt(g.cols(), g.rows());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t k = 0; k < g.cols(); ++k) gt(k, i) = g(i, k);
        return gt;
    }());
    res.estimates = problem.transform.to_constrained(u);
    res.std_errors.resize(res.estimates.size());
    for (std::size_t i = 0; i < res.estimates.size(); ++i)
        res.std_errors[i] = std::sqrt(std::max(res.covariance(i, i), 0.0));
    return res;
}

// Runs solve_nls from every start, keeps the lowest-SSR converged result.
// Ties break toward fewer iterations, then grid order. Starts that throw are
// recorded; if every start throws the errors are aggregated.
inline FitResult multi_start(NlsProblem problem, const std::vector<Vec>& starts) {
    if (starts.empty()) throw NlsError("multi_start: empty starting grid");
    std::vector<StartRecord> trace;
    std::optional<FitResult> best;
    auto better = [](const FitResult& a, const FitResult& b) {
        if (a.converged != b.converged) return a.converged;
        if (a.ssr != b.ssr) return a.ssr < b.ssr;
        return a.iterations < b.iterations;
    };
    for (const Vec& s : starts) {
        StartRecord rec;
        rec.start = s;
        problem.initial = s;
        try {
            FitResult fit = solve_nls(problem);
            rec.ssr = fit.ssr;
            rec.converged = fit.converged;
            rec.iterations = fit.iterations;
            if (!best || better(fit, *best)) best = std::move(fit);
        } catch (const std::exception& e) {
            rec.error = e.what();
        }
        trace.push_back(std::move(rec));
    }
    if (!best) {
        std::string msg = "multi_start: all starts failed:";
        for (std::size_t i = 0; i < trace.size(); ++i)
            msg += "\n  start " + std::to_string(i) + ": " + trace[i].error;
        throw NlsError(msg);
    }
    best->start_trace = std::move(trace);
    return *best;
}

}  // namespace cesrisk
