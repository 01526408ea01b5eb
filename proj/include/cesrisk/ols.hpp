#pragma once

// Ordinary least squares via the normal equations, with the full inference
// table (t statistics, p-values, confidence intervals, ANOVA decomposition,
// F test) needed by the auxiliary heteroscedasticity regressions.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "linalg.hpp"
#include "stats.hpp"

namespace cesrisk {

struct OlsResult {
    Vec coefficients;
    Vec std_errors;
    Vec t_stats;
    Vec p_values;
    std::vector<std::pair<double, double>> conf_intervals;  // 95%
    double r_squared = 0.0;
    double adj_r_squared = 0.0;
    double f_stat = 0.0;
    int df_model = 0;
    int df_resid = 0;
    double prob_f = 1.0;
    double ss_model = 0.0;
    double ss_residual = 0.0;
    double ss_total = 0.0;
    double root_mse = 0.0;
    Vec fitted;
    Vec residuals;
    std::size_t n_obs = 0;
    std::vector<std::string> column_names;
};

struct OlsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// X must carry the intercept as its first column.
inline OlsResult solve_ols(const Matrix& x, const Vec& y,
                           std::vector<std::string> column_names = {}) {
    const std::size_t n = x.rows();
    const std::size_t k = x.cols();
    if (y.size() != n) throw OlsError("solve_ols: response length mismatch");
    if (n <= k) throw OlsError("solve_ols: needs more observations than columns");

    Matrix l;
    try {
        l = cholesky(gram(x));
    } catch (const SingularMatrixError& e) {
        const std::string name = e.pivot < column_names.size()
                                     ? column_names[e.pivot]
                                     : "column " + std::to_string(e.pivot);
        throw OlsError("design matrix rank-deficient: collinear " + name);
    }
    OlsResult res;
    res.n_obs = n;
    res.column_names = std::move(column_names);
    res.coefficients = cholesky_solve(l, transpose_times(x, y));

    res.fitted = matvec(x, res.coefficients);
    res.residuals.resize(n);
    double ybar = 0.0;
    for (double v : y) ybar += v;
    ybar /= static_cast<double>(n);
    double ssr = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        res.residuals[i] = y[i] - res.fitted[i];
        ssr += res.residuals[i] * res.residuals[i];
        sst += (y[i] - ybar) * (y[i] - ybar);
    }
    res.ss_residual = ssr;
    res.ss_total = sst;
    res.ss_model = sst - ssr;
    res.df_model = static_cast<int>(k) - 1;
    res.df_resid = static_cast<int>(n - k);

    const double sigma2 = ssr / res.df_resid;
    res.root_mse = std::sqrt(sigma2);
    const Matrix xtx_inv = cholesky_inverse(l);
    res.std_errors.resize(k);
    res.t_stats.resize(k);
    res.p_values.resize(k);
    res.conf_intervals.resize(k);
    const double tcrit = t_critical(0.05, res.df_resid);
    for (std::size_t j = 0; j < k; ++j) {
        res.std_errors[j] = std::sqrt(std::max(sigma2 * xtx_inv(j, j), 0.0));
        if (res.std_errors[j] > 0.0) {
            res.t_stats[j] = res.coefficients[j] / res.std_errors[j];
            res.p_values[j] = t_two_sided_pvalue(res.t_stats[j], res.df_resid);
        } else {
            res.t_stats[j] = res.coefficients[j] == 0.0
                                 ? 0.0
                                 : std::numeric_limits<double>::infinity() * (res.coefficients[j] > 0 ? 1 : -1);
            res.p_values[j] = res.coefficients[j] == 0.0 ? 1.0 : 0.0;
        }
        res.conf_intervals[j] = {res.coefficients[j] - tcrit * res.std_errors[j],
                                 res.coefficients[j] + tcrit * res.std_errors[j]};
    }

    const double n_d = static_cast<double>(n);
    if (sst <= 1e-300) {
        // constant response: nothing to explain
        res.r_squared = 0.0;
        res.adj_r_squared = 0.0;
        res.f_stat = 0.0;
        res.prob_f = 1.0;
    } else if (res.df_model == 0) {
        res.r_squared = 0.0;
        res.adj_r_squared = 0.0;
        res.f_stat = 0.0;
        res.prob_f = 1.0;
    } else {
        res.r_squared = 1.0 - ssr / sst;
        res.adj_r_squared = 1.0 - (1.0 - res.r_squared) * (n_d - 1.0) / res.df_resid;
        if (ssr <= 1e-12 * sst) {
            res.r_squared = 1.0;
            res.f_stat = std::numeric_limits<double>::infinity();
            res.prob_f = 0.0;  // exact fit
        } else {
            res.f_stat = (res.ss_model / res.df_model) / sigma2;
            res.prob_f = f_pvalue(std::max(res.f_stat, 0.0), res.df_model, res.df_resid);
        }
    }
    return res;
}

}  // namespace cesrisk
