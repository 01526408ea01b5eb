#pragma once

// Three-stage feasible estimation of the composite CES specification:
//   stage 1: NLS of log yield on the log CES mean form
//   stage 2: NLS of (squared stage-1 residuals) on the CES variance form,
//            in log space by default, in levels behind an option
//   stage 3: weighted NLS of the mean form with weights h^{-1/2} from stage 2
//
// Shares are kept on the simplex by a softmax transform (positivity and
// sum-to-one), variance weights by a sum-to-one elimination transform that
// permits negative entries; r exponents stay below one via r = 1 - exp(rho).

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "model.hpp"
#include "nls.hpp"
#include "ols.hpp"

namespace cesrisk {

enum class Stage2Space { Log, Level };

struct StageOptions {
    std::vector<double> r_grid = {-2.0, -1.0, -0.5, 0.1, 0.5, 0.9};
    NlsOptions nls;
};

struct ThreeStageOptions {
    StageOptions mean;
    StageOptions variance;
    Stage2Space stage2_space = Stage2Space::Log;
    double squared_residual_floor = 1e-12;
    // additional floor as a fraction of the mean squared residual; compresses
    // the extreme left tail of ln chi-square(1) (see build_variance_problem)
    double squared_residual_rel_floor = 1e-4;
};

namespace layout {

// Constrained layout for mean fits: [lnA, (A_dummy), r1, alpha_1..alpha_K].
// Unconstrained:                    [lnA, (A_dummy), rho, t_1..t_{K-1}].
struct MeanLayout {
    bool has_dummy = true;
    std::size_t n_inputs = 2;

    std::size_t c_dim() const { return 2 + n_inputs + (has_dummy ? 1 : 0); }
    std::size_t u_dim() const { return 1 + n_inputs + (has_dummy ? 1 : 0); }
    std::size_t r_index() const { return has_dummy ? 2 : 1; }

    CesMeanParams unpack(const Vec& c) const {
        CesMeanParams p;
        p.ln_scale = c[0];
        p.dummy_coef = has_dummy ? c[1] : 0.0;
        p.r = c[r_index()];
        p.shares.assign(c.begin() + r_index() + 1, c.end());
        return p;
    }

    Vec pack(const CesMeanParams& p) const {
        Vec c;
        c.push_back(p.ln_scale);
        if (has_dummy) c.push_back(p.dummy_coef);
        c.push_back(p.r);
        c.insert(c.end(), p.shares.begin(), p.shares.end());
        return c;
    }

    std::vector<std::string> names(const std::vector<std::string>& inputs) const {
        std::vector<std::string> n = {"lnA"};
        if (has_dummy) n.push_back("A_dummy");
        n.push_back("r1");
        for (const auto& in : inputs) n.push_back("alpha_" + in);
        return n;
    }

    ParamTransform transform() const {
        const MeanLayout lay = *this;
        ParamTransform t;
        t.to_constrained = [lay](const Vec& u) {
            Vec c(lay.c_dim());
            c[0] = u[0];
            std::size_t ui = 1, ci = 1;
            if (lay.has_dummy) c[ci++] = u[ui++];
            c[ci++] = 1.0 - std::exp(u[ui]);  // r < 1
            ++ui;
            // softmax over K-1 free scores with the last score pinned at zero
            const std::size_t k = lay.n_inputs;
            double m = 0.0;
            for (std::size_t i = 0; i + 1 < k; ++i) m = std::max(m, u[ui + i]);
            double denom = std::exp(-m);
            for (std::size_t i = 0; i + 1 < k; ++i) denom += std::exp(u[ui + i] - m);
            double head = 0.0;
            for (std::size_t i = 0; i + 1 < k; ++i) {
                c[ci + i] = std::exp(u[ui + i] - m) / denom;
                head += c[ci + i];
            }
            c[ci + k - 1] = 1.0 - head;  // exact sum-to-one
            return c;
        };
        t.to_unconstrained = [lay](const Vec& c) {
            const CesMeanParams p = lay.unpack(c);
            Vec u;
            u.push_back(p.ln_scale);
            if (lay.has_dummy) u.push_back(p.dummy_coef);
            if (!(p.r < 1.0)) throw std::domain_error("mean transform: r must be < 1");
            u.push_back(std::log(1.0 - p.r));
            const double last = p.shares.back();
            for (std::size_t i = 0; i + 1 < p.shares.size(); ++i) {
                if (!(p.shares[i] > 0.0) || !(last > 0.0))
                    throw std::domain_error("mean transform: shares must be positive");
                u.push_back(std::log(p.shares[i] / last));
            }
            return u;
        };
        t.jacobian = [lay](const Vec& u) {
            const Vec c = lay.transform().to_constrained(u);
            Matrix g(lay.c_dim(), lay.u_dim());
            g(0, 0) = 1.0;
            std::size_t ui = 1, ci = 1;
            if (lay.has_dummy) {
                g(ci, ui) = 1.0;
                ++ci;
                ++ui;
            }
            g(ci, ui) = c[ci] - 1.0;  // dr/drho = -exp(rho)
            ++ci;
            ++ui;
            const std::size_t k = lay.n_inputs;
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j + 1 < k; ++j) {
                    const double delta = i == j ? 1.0 : 0.0;
                    g(ci + i, ui + j) = c[ci + i] * (delta - c[ci + j]);
                }
            return g;
        };
        return t;
    }
};

// Constrained layout for variance fits: [lnB, (B_dummy), r2, beta_1..beta_K]
// with beta_K = 1 - sum of the others; the free betas are unconstrained.
struct VarLayout {
    bool has_dummy = true;
    std::size_t n_inputs = 2;

    std::size_t c_dim() const { return 2 + n_inputs + (has_dummy ? 1 : 0); }
    std::size_t u_dim() const { return 1 + n_inputs + (has_dummy ? 1 : 0); }
    std::size_t r_index() const { return has_dummy ? 2 : 1; }

    CesVarParams unpack(const Vec& c) const {
        CesVarParams p;
        p.ln_scale = c[0];
        p.dummy_coef = has_dummy ? c[1] : 0.0;
        p.r = c[r_index()];
        p.weights.assign(c.begin() + r_index() + 1, c.end());
        return p;
    }

    Vec pack(const CesVarParams& p) const {
        Vec c;
        c.push_back(p.ln_scale);
        if (has_dummy) c.push_back(p.dummy_coef);
        c.push_back(p.r);
        c.insert(c.end(), p.weights.begin(), p.weights.end());
        return c;
    }

    std::vector<std::string> names(const std::vector<std::string>& inputs) const {
        std::vector<std::string> n = {"lnB"};
        if (has_dummy) n.push_back("B_dummy");
        n.push_back("r2");
        for (const auto& in : inputs) n.push_back("beta_" + in);
        return n;
    }

    ParamTransform transform() const {
        const VarLayout lay = *this;
        ParamTransform t;
        t.to_constrained = [lay](const Vec& u) {
            Vec c(lay.c_dim());
            c[0] = u[0];
            std::size_t ui = 1, ci = 1;
            if (lay.has_dummy) c[ci++] = u[ui++];
            c[ci++] = 1.0 - std::exp(u[ui]);
            ++ui;
            const std::size_t k = lay.n_inputs;
            double head = 0.0;
            for (std::size_t i = 0; i + 1 < k; ++i) {
                c[ci + i] = u[ui + i];
                head += u[ui + i];
            }
            c[ci + k - 1] = 1.0 - head;
            return c;
        };
        t.to_unconstrained = [lay](const Vec& c) {
            const CesVarParams p = lay.unpack(c);
            Vec u;
            u.push_back(p.ln_scale);
            if (lay.has_dummy) u.push_back(p.dummy_coef);
            if (!(p.r < 1.0)) throw std::domain_error("variance transform: r must be < 1");
            u.push_back(std::log(1.0 - p.r));
            for (std::size_t i = 0; i + 1 < p.weights.size(); ++i) u.push_back(p.weights[i]);
            return u;
        };
        t.jacobian = [lay](const Vec& u) {
            const Vec c = lay.transform().to_constrained(u);
            Matrix g(lay.c_dim(), lay.u_dim());
            g(0, 0) = 1.0;
            std::size_t ui = 1, ci = 1;
            if (lay.has_dummy) {
                g(ci, ui) = 1.0;
                ++ci;
                ++ui;
            }
            g(ci, ui) = c[ci] - 1.0;
            ++ci;
            ++ui;
            const std::size_t k = lay.n_inputs;
            for (std::size_t j = 0; j + 1 < k; ++j) {
                g(ci + j, ui + j) = 1.0;
                g(ci + k - 1, ui + j) = -1.0;
            }
            return g;
        };
        return t;
    }
};

}  // namespace layout

namespace detail {

inline Vec mean_kernel_column(const Dataset& data, double r) {
    const std::size_t k = Dataset::input_names().size();
    const Vec equal(k, 1.0 / static_cast<double>(k));
    Vec out(data.size());
    for (std::size_t t = 0; t < data.size(); ++t)
        out[t] = kernel::log_kernel(equal, r, data.point(t).values);
    return out;
}

}  // namespace detail

// NLS problem for the log mean form, optionally weighted (stage 3).
inline NlsProblem build_mean_problem(const Dataset& data, const StageOptions& opts,
                                     const Vec& weights = {}) {
    layout::MeanLayout lay{data.has_dummy(), Dataset::input_names().size()};
    const Vec ly = data.log_yields();
    const bool weighted = !weights.empty();

    NlsProblem prob;
    prob.param_names = lay.names(Dataset::input_names());
    prob.transform = lay.transform();
    prob.options = opts.nls;
    prob.residual = [&data, lay, ly, weights, weighted](const Vec& c) {
        const CesMeanParams p = lay.unpack(c);
        Vec r(data.size());
        for (std::size_t t = 0; t < data.size(); ++t) {
            r[t] = ly[t] - eval_log_mean(p, data.point(t));
            if (weighted) r[t] *= weights[t];
        }
        return r;
    };
    prob.jacobian = [&data, lay, weights, weighted](const Vec& c) {
        const CesMeanParams p = lay.unpack(c);
        Matrix j(data.size(), lay.c_dim());
        MeanModelGrad g;
        for (std::size_t t = 0; t < data.size(); ++t) {
            eval_log_mean_grad(p, data.point(t), g);
            const double w = weighted ? weights[t] : 1.0;
            std::size_t ci = 0;
            j(t, ci++) = -w * g.d_ln_scale;
            if (lay.has_dummy) j(t, ci++) = -w * g.d_dummy;
            j(t, ci++) = -w * g.d_r;
            for (std::size_t i = 0; i < lay.n_inputs; ++i) j(t, ci + i) = -w * g.d_shares[i];
        }
        return j;
    };
    return prob;
}

// Default multi-start grid: each r in the grid, equal shares, intercept from
// the mean of log yield net of the equal-share kernel, zero dummy shift.
inline std::vector<Vec> mean_starting_grid(const Dataset& data, const StageOptions& opts) {
    layout::MeanLayout lay{data.has_dummy(), Dataset::input_names().size()};
    const Vec ly = data.log_yields();
    std::vector<Vec> starts;
    for (double r : opts.r_grid) {
        CesMeanParams p;
        p.r = r;
        p.shares.assign(lay.n_inputs, 1.0 / static_cast<double>(lay.n_inputs));
        const Vec kcol = detail::mean_kernel_column(data, r);
        p.ln_scale = mean(ly) - mean(kcol);
        p.dummy_coef = 0.0;
        starts.push_back(lay.pack(p));
    }
    return starts;
}

inline FitResult stage1_fit(const Dataset& data, const StageOptions& opts = {}) {
    if (data.size() < 6)
        throw std::invalid_argument("stage1_fit: insufficient observations (need at least 6)");
    return multi_start(build_mean_problem(data, opts), mean_starting_grid(data, opts));
}

// Squared residuals against the variance form. Log space regresses
// ln(max(e^2, floor)) on ln h; level space regresses e^2 on h directly.
inline NlsProblem build_variance_problem(const Dataset& data, const Vec& residuals,
                                         const StageOptions& opts, Stage2Space space,
                                         double floor, double rel_floor = 1e-4,
                                         int* clipped = nullptr) {
    if (residuals.size() != data.size())
        throw std::invalid_argument("stage2: residual vector does not match dataset");
    layout::VarLayout lay{data.has_dummy(), Dataset::input_names().size()};

    // A least-squares fit of ln(e^2) is not robust to the extreme left tail
    // of ln chi-square(1): isolated near-zero residuals otherwise reward
    // collapsing the kernel toward zero at single design points. Clipping at
    // a small fraction of the mean squared residual compresses that tail;
    // the absolute floor still guards the all-zero case.
    double msq = 0.0;
    for (double r : residuals) msq += r * r;
    msq /= static_cast<double>(residuals.size());
    const double eff_floor = std::max(floor, rel_floor * msq);

    Vec target(data.size());
    int nclip = 0;
    double z_lo = std::numeric_limits<double>::infinity();
    double z_hi = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < data.size(); ++t) {
        double sq = residuals[t] * residuals[t];
        if (sq < eff_floor) {
            sq = eff_floor;
            ++nclip;
        }
        z_lo = std::min(z_lo, std::log(sq));
        z_hi = std::max(z_hi, std::log(sq));
        target[t] = space == Stage2Space::Log ? std::log(sq) : sq;
    }
    if (clipped) *clipped = nclip;
    // Fitted log variances far outside the observed squared-residual range
    // mean the kernel is collapsing toward zero at a design point to chase a
    // single extreme log chi-square draw; reject such steps via damping.
    const double lv_lo = z_lo - 5.0, lv_hi = z_hi + 5.0;

    NlsProblem prob;
    prob.param_names = lay.names(Dataset::input_names());
    prob.transform = lay.transform();
    prob.options = opts.nls;
    prob.residual = [&data, lay, target, space, lv_lo, lv_hi](const Vec& c) {
        const CesVarParams p = lay.unpack(c);
        Vec r(data.size());
        for (std::size_t t = 0; t < data.size(); ++t) {
            const double lv = eval_log_variance(p, data.point(t));
            if (lv < lv_lo || lv > lv_hi)
                throw std::domain_error("variance model outside the observed residual range");
            r[t] = space == Stage2Space::Log ? target[t] - lv : target[t] - std::exp(lv);
        }
        return r;
    };
    prob.jacobian = [&data, lay, space](const Vec& c) {
        const CesVarParams p = lay.unpack(c);
        Matrix j(data.size(), lay.c_dim());
        VarModelGrad g;
        for (std::size_t t = 0; t < data.size(); ++t) {
            const double lv = eval_log_variance_grad(p, data.point(t), g);
            const double s = space == Stage2Space::Log ? 1.0 : std::exp(lv);
            std::size_t ci = 0;
            j(t, ci++) = -s * g.d_ln_scale;
            if (lay.has_dummy) j(t, ci++) = -s * g.d_dummy;
            j(t, ci++) = -s * g.d_r;
            for (std::size_t i = 0; i < lay.n_inputs; ++i) j(t, ci + i) = -s * g.d_weights[i];
        }
        return j;
    };
    return prob;
}

inline std::vector<Vec> variance_starting_grid(const Dataset& data, const Vec& residuals,
                                               const StageOptions& opts, Stage2Space space,
                                               double floor) {
    layout::VarLayout lay{data.has_dummy(), Dataset::input_names().size()};
    const std::size_t k = lay.n_inputs;
    Vec z(data.size());
    for (std::size_t t = 0; t < data.size(); ++t)
        z[t] = std::log(std::max(residuals[t] * residuals[t], floor));
    const double zbar = mean(z);
    std::vector<Vec> starts;
    for (double r : opts.r_grid) {
        CesVarParams p;
        p.r = r;
        p.weights.assign(k, 1.0 / static_cast<double>(k));
        const Vec kcol = detail::mean_kernel_column(data, r);
        p.ln_scale = 0.5 * (zbar - mean(kcol));
        p.dummy_coef = 0.0;
        starts.push_back(lay.pack(p));
        (void)space;
    }
    // Data-driven start from the multiplicative limit: OLS of ln e^2 on the
    // log inputs gives weight directions directly, since there
    // ln h = 2 lnB + sum_i beta_i ln x_i.
    {
        Matrix x(data.size(), 1 + k + (lay.has_dummy ? 1 : 0));
        for (std::size_t t = 0; t < data.size(); ++t) {
            x(t, 0) = 1.0;
            const InputPoint pt = data.point(t);
            for (std::size_t i = 0; i < k; ++i) x(t, 1 + i) = std::log(pt.values[i]);
            if (lay.has_dummy) x(t, 1 + k) = pt.dummy;
        }
        try {
            const OlsResult ols = solve_ols(x, z);
            double wsum = 0.0;
            for (std::size_t i = 0; i < k; ++i) wsum += ols.coefficients[1 + i];
            if (std::fabs(wsum) > 0.05) {
                CesVarParams p;
                p.r = 1e-3;
                p.weights.resize(k);
                double head = 0.0;
                for (std::size_t i = 0; i + 1 < k; ++i) {
                    p.weights[i] = ols.coefficients[1 + i] / wsum;
                    head += p.weights[i];
                }
                p.weights[k - 1] = 1.0 - head;
                // kernel exponent folded into the scale: ln K^{1/r} ~ wsum * ...
                p.ln_scale = 0.5 * ols.coefficients[0];
                p.dummy_coef = lay.has_dummy ? 0.5 * ols.coefficients[1 + k] : 0.0;
                // the multiplicative limit of the kernel carries unit total
                // weight; rescale the intercept to match the target mean
                Vec kc(data.size());
                for (std::size_t t = 0; t < data.size(); ++t) {
                    const InputPoint pt = data.point(t);
                    double s = 0.0;
                    for (std::size_t i = 0; i < k; ++i) s += p.weights[i] * std::log(pt.values[i]);
                    kc[t] = s;
                }
                p.ln_scale = 0.5 * (zbar - mean(kc));
                starts.push_back(lay.pack(p));
            }
        } catch (const OlsError&) {
            // collinear log inputs: skip the data-driven start
        }
    }
    return starts;
}

inline FitResult stage2_fit(const Dataset& data, const Vec& stage1_residuals,
                            const ThreeStageOptions& opts = {}, int* clipped = nullptr) {
    NlsProblem prob = build_variance_problem(data, stage1_residuals, opts.variance,
                                             opts.stage2_space, opts.squared_residual_floor,
                                             opts.squared_residual_rel_floor, clipped);
    return multi_start(prob, variance_starting_grid(data, stage1_residuals, opts.variance,
                                                    opts.stage2_space, opts.squared_residual_floor));
}

// Weights h^{-1/2} from the fitted stage-2 variance function.
inline Vec stage3_weights(const Dataset& data, const FitResult& stage2) {
    layout::VarLayout lay{data.has_dummy(), Dataset::input_names().size()};
    const CesVarParams p = lay.unpack(stage2.estimates);
    Vec w(data.size());
    std::string bad;
    for (std::size_t t = 0; t < data.size(); ++t) {
        w[t] = std::exp(-0.5 * eval_log_variance(p, data.point(t)));
        if (!std::isfinite(w[t]) || !(w[t] > 0.0)) bad += (bad.empty() ? "" : ", ") + std::to_string(t);
    }
    if (!bad.empty()) throw NlsError("stage3: non-finite weights at observations " + bad);
    return w;
}

inline FitResult stage3_fit(const Dataset& data, const FitResult& stage2,
                            const ThreeStageOptions& opts = {},
                            const FitResult* stage1 = nullptr) {
    const Vec w = stage3_weights(data, stage2);
    NlsProblem prob = build_mean_problem(data, opts.mean, w);
    std::vector<Vec> starts = mean_starting_grid(data, opts.mean);
    if (stage1) starts.push_back(stage1->estimates);
    return multi_start(prob, starts);
}

struct ThreeStageResult {
    FitResult stage1;
    FitResult stage2;
    FitResult stage3;
    Vec weights;                 // h^{-1/2} used at stage 3
    Stage2Space stage2_space = Stage2Space::Log;
    int clipped_count = 0;
    bool variance_unidentified = false;
    std::vector<std::string> warnings;
};

// A stage failure carries the stage tag and whatever completed before it.
struct ThreeStageError : NlsError {
    int failed_stage;
    ThreeStageResult partial;
    ThreeStageError(int stage, ThreeStageResult done, const std::string& what)
        : NlsError("stage " + std::to_string(stage) + " failed: " + what),
          failed_stage(stage),
          partial(std::move(done)) {}
};

inline ThreeStageResult run_three_stage(const Dataset& data, const ThreeStageOptions& opts = {}) {
    ThreeStageResult out;
    out.stage2_space = opts.stage2_space;
    try {
        out.stage1 = stage1_fit(data, opts.mean);
    } catch (const std::exception& e) {
        throw ThreeStageError(1, out, e.what());
    }
    if (!out.stage1.converged) out.warnings.push_back("stage 1 did not converge");

    // Degenerate noise: every squared residual at the floor leaves the
    // variance function unidentified; stage 3 falls back to unit weights.
    int nclip = 0;
    for (double r : out.stage1.residuals)
        if (r * r < opts.squared_residual_floor) ++nclip;
    if (nclip == static_cast<int>(data.size())) {
        out.variance_unidentified = true;
        out.clipped_count = nclip;
        out.warnings.push_back("variance unidentified: all squared residuals at floor");
        layout::VarLayout lay{data.has_dummy(), Dataset::input_names().size()};
        CesVarParams p;
        p.r = 0.5;
        p.weights.assign(lay.n_inputs, 1.0 / static_cast<double>(lay.n_inputs));
        p.ln_scale = 0.5 * std::log(opts.squared_residual_floor);
        out.stage2.estimates = lay.pack(p);
        out.stage2.param_names = lay.names(Dataset::input_names());
        out.stage2.std_errors.assign(out.stage2.estimates.size(),
                                     std::numeric_limits<double>::quiet_NaN());
        out.stage2.converged = false;
        out.weights.assign(data.size(), 1.0);
    } else {
        try {
            out.stage2 = stage2_fit(data, out.stage1.residuals, opts, &out.clipped_count);
        } catch (const std::exception& e) {
            throw ThreeStageError(2, out, e.what());
        }
        if (out.clipped_count > 0)
            out.warnings.push_back(std::to_string(out.clipped_count) +
                                   " squared residuals clipped at floor");
        if (!out.stage2.converged) out.warnings.push_back("stage 2 did not converge");
        if (out.stage2.boundary_degenerate)
            out.warnings.push_back("stage 2 variance exponent at its boundary; affected "
                                   "standard errors are unreliable");
        try {
            out.weights = stage3_weights(data, out.stage2);
        } catch (const std::exception& e) {
            throw ThreeStageError(3, out, e.what());
        }
    }

    try {
        NlsProblem prob = build_mean_problem(data, opts.mean, out.weights);
        std::vector<Vec> starts = mean_starting_grid(data, opts.mean);
        starts.push_back(out.stage1.estimates);
        out.stage3 = multi_start(prob, starts);
    } catch (const std::exception& e) {
        throw ThreeStageError(3, out, e.what());
    }
    if (!out.stage3.converged) out.warnings.push_back("stage 3 did not converge");
    return out;
}

// ---------------------------------------------------------------------------
// Threshold mean fit (single-stage), estimating per-input thresholds jointly.
// Thresholds live in (0, min observed input) via a logistic map.
// ---------------------------------------------------------------------------

inline FitResult fit_threshold_mean(const Dataset& data, const StageOptions& opts = {}) {
    const std::size_t k = Dataset::input_names().size();
    layout::MeanLayout mlay{data.has_dummy(), k};
    Vec caps(k, std::numeric_limits<double>::infinity());
    for (std::size_t t = 0; t < data.size(); ++t)
        for (std::size_t i = 0; i < k; ++i) caps[i] = std::min(caps[i], data.point(t).values[i]);
    for (double& c : caps) c *= 1.0 - 1e-9;

    const std::size_t mc = mlay.c_dim();
    const ParamTransform base = mlay.transform();
    ParamTransform tf;
    tf.to_constrained = [base, mc, caps, k](const Vec& u) {
        Vec head = base.to_constrained(Vec(u.begin(), u.end() - k));
        for (std::size_t i = 0; i < k; ++i)
            head.push_back(caps[i] / (1.0 + std::exp(-u[u.size() - k + i])));
        return head;
    };
    tf.to_unconstrained = [base, mc, caps, k](const Vec& c) {
        Vec u = base.to_unconstrained(Vec(c.begin(), c.begin() + mc));
        for (std::size_t i = 0; i < k; ++i) {
            const double b = c[mc + i];
            if (!(b > 0.0) || !(b < caps[i]))
                throw std::domain_error("threshold transform: b out of (0, min input)");
            u.push_back(std::log(b / (caps[i] - b)));
        }
        return u;
    };
    tf.jacobian = [base, tf, mc, caps, k](const Vec& u) {
        const Vec head_u(u.begin(), u.end() - k);
        const Matrix gh = base.jacobian(head_u);
        const Vec c = tf.to_constrained(u);
        Matrix g(mc + k, gh.cols() + k);
        for (std::size_t i = 0; i < gh.rows(); ++i)
            for (std::size_t j = 0; j < gh.cols(); ++j) g(i, j) = gh(i, j);
        for (std::size_t i = 0; i < k; ++i) {
            const double b = c[mc + i];
            g(mc + i, gh.cols() + i) = b * (1.0 - b / caps[i]);
        }
        return g;
    };

    const Vec ly = data.log_yields();
    NlsProblem prob;
    prob.param_names = mlay.names(Dataset::input_names());
    for (const auto& in : Dataset::input_names()) prob.param_names.push_back("b_" + in);
    prob.transform = tf;
    prob.options = opts.nls;
    prob.residual = [&data, mlay, mc, ly, k](const Vec& c) {
        ThresholdParams p;
        p.base = mlay.unpack(Vec(c.begin(), c.begin() + mc));
        p.thresholds.assign(c.begin() + mc, c.end());
        Vec r(data.size());
        for (std::size_t t = 0; t < data.size(); ++t)
            r[t] = ly[t] - std::log(eval_threshold_mean(p, data.point(t)));
        return r;
    };
    // thresholds shift the inputs, so the analytic mean gradient applies to
    // the shifted point; db enters with the opposite sign of dx
    prob.jacobian = [&data, mlay, mc, k](const Vec& c) {
        ThresholdParams p;
        p.base = mlay.unpack(Vec(c.begin(), c.begin() + mc));
        p.thresholds.assign(c.begin() + mc, c.end());
        Matrix j(data.size(), mc + k);
        MeanModelGrad g;
        for (std::size_t t = 0; t < data.size(); ++t) {
            InputPoint pt = data.point(t);
            for (std::size_t i = 0; i < k; ++i) {
                pt.values[i] -= p.thresholds[i];
                if (!(pt.values[i] > 0.0))
                    throw std::domain_error("input below threshold at index " + std::to_string(i));
            }
            eval_log_mean_grad(p.base, pt, g);
            const auto q = kernel::kernel_ratios(p.base.shares, p.base.r, pt.values);
            std::size_t ci = 0;
            j(t, ci++) = -g.d_ln_scale;
            if (mlay.has_dummy) j(t, ci++) = -g.d_dummy;
            j(t, ci++) = -g.d_r;
            for (std::size_t i = 0; i < k; ++i) j(t, ci + i) = -g.d_shares[i];
            for (std::size_t i = 0; i < k; ++i)
                j(t, mc + i) = p.base.shares[i] * q[i] / pt.values[i];  // -d/db = +d/dx
        }
        return j;
    };

    std::vector<Vec> starts;
    for (const Vec& s : mean_starting_grid(data, opts)) {
        Vec full = s;
        for (std::size_t i = 0; i < k; ++i) full.push_back(0.25 * caps[i]);
        starts.push_back(full);
    }
    return multi_start(prob, starts);
}

}  // namespace cesrisk
