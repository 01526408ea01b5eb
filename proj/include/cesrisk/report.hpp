#pragma once

// Run reports: every number is carried over from a module output, the report
// layer only formats. Text tables mirror the published layout; the JSON
// document is versioned and byte-stable for a given invocation and seed.

#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "diagnostics.hpp"
#include "justpope.hpp"
#include "nls.hpp"
#include "stats.hpp"
#include "synth.hpp"

namespace cesrisk {

// Stars on the estimate/SE ratio against two-sided normal tails:
// * p<0.05, ** p<0.01, *** p<0.001.
inline std::string significance_stars(double estimate, double std_error) {
    if (!(std_error > 0.0) || !std::isfinite(std_error)) return "";
    const double p = normal_two_sided_pvalue(estimate / std_error);
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "";
}

struct EstimateTable {
    std::string title;
    std::vector<std::string> names;
    Vec estimates;
    Vec std_errors;
    double ssr = 0.0;
    double sigma2 = 0.0;
    bool converged = false;
    int iterations = 0;
    std::vector<StartRecord> start_trace;

    static EstimateTable from_fit(std::string title, const FitResult& fit) {
        EstimateTable t;
        t.title = std::move(title);
        t.names = fit.param_names;
        t.estimates = fit.estimates;
        t.std_errors = fit.std_errors;
        t.ssr = fit.ssr;
        t.sigma2 = fit.sigma2;
        t.converged = fit.converged;
        t.iterations = fit.iterations;
        t.start_trace = fit.start_trace;
        return t;
    }
};

struct DiagnosticsBlock {
    std::string title;
    DiagnosticsReport report;
};

struct RunReport {
    std::vector<std::string> argv;
    std::string config_hash;
    std::optional<std::uint64_t> seed;

    std::string data_label;
    std::size_t n_obs = 0;
    std::vector<int> years;
    std::vector<VariableStats> summary;

    std::vector<EstimateTable> tables;
    std::vector<DiagnosticsBlock> diagnostics;
    std::vector<std::pair<std::string, McSummary>> mc_summaries;
    std::vector<std::string> artifacts;
    std::vector<std::string> warnings;
};

// FNV-1a over raw bytes; stable fingerprint for the invocation echo.
inline std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << h;
    return os.str();
}

namespace reportfmt {

inline std::string fixed(double v, int prec = 4) {
    if (std::isnan(v)) return "n/a";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

inline nlohmann::json num(double v) {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

}  // namespace reportfmt

inline void render_text(const RunReport& r, std::ostream& os) {
    using reportfmt::fixed;
    os << "invocation:";
    for (const auto& a : r.argv) os << ' ' << a;
    os << "\n";
    if (!r.config_hash.empty()) os << "config hash: " << r.config_hash << "\n";
    if (r.seed) os << "seed: " << *r.seed << "\n";
    if (!r.data_label.empty()) {
        os << "data: " << r.data_label << " (" << r.n_obs << " observations";
        if (!r.years.empty()) {
            os << ", years";
            for (int y : r.years) os << ' ' << y;
        }
        os << ")\n";
    }
    if (!r.summary.empty()) {
        os << "\nSample summary statistics\n";
        os << std::left << std::setw(12) << "variable" << std::right << std::setw(6) << "n"
           << std::setw(12) << "mean" << std::setw(12) << "sd" << std::setw(12) << "min"
           << std::setw(12) << "max" << "\n";
        for (const auto& s : r.summary)
            os << std::left << std::setw(12) << s.name << std::right << std::setw(6) << s.n
               << std::setw(12) << fixed(s.mean, 2) << std::setw(12) << fixed(s.sd, 2)
               << std::setw(12) << fixed(s.min, 2) << std::setw(12) << fixed(s.max, 2) << "\n";
    }
    for (const auto& t : r.tables) {
        os << "\n" << t.title << "\n";
        os << std::left << std::setw(16) << "parameter" << std::right << std::setw(12) << "estimate"
           << std::setw(5) << "" << std::setw(14) << "std. error" << "\n";
        for (std::size_t i = 0; i < t.names.size(); ++i) {
            const std::string stars = significance_stars(t.estimates[i], t.std_errors[i]);
            os << std::left << std::setw(16) << t.names[i] << std::right << std::setw(12)
               << fixed(t.estimates[i]) << " " << std::left << std::setw(4) << stars << std::right
               << std::setw(14) << ("(" + fixed(t.std_errors[i]) + ")") << "\n";
        }
        os << "SSR " << fixed(t.ssr, 6) << ", " << (t.converged ? "converged" : "NOT converged")
           << " in " << t.iterations << " iterations\n";
    }
    if (!r.tables.empty())
        os << "significance: * p < 0.05, ** p < 0.01, *** p < 0.001 (normal approximation)\n";
    for (const auto& d : r.diagnostics) {
        const auto& o = d.report.ols;
        os << "\n" << d.title << "\n";
        os << "  F(" << o.df_model << ", " << o.df_resid << ") = " << fixed(o.f_stat, 2)
           << "   Prob > F = " << fixed(o.prob_f, 4) << "\n";
        os << "  R-squared = " << fixed(o.r_squared, 4)
           << "   Adj R-squared = " << fixed(o.adj_r_squared, 4)
           << "   Root MSE = " << fixed(o.root_mse, 4) << "\n";
        os << "  SS model " << fixed(o.ss_model, 4) << " (df " << o.df_model << "), residual "
           << fixed(o.ss_residual, 4) << " (df " << o.df_resid << "), total " << fixed(o.ss_total, 4)
           << "\n";
        os << "  " << std::left << std::setw(12) << "term" << std::right << std::setw(12) << "coef"
           << std::setw(12) << "se" << std::setw(9) << "t" << std::setw(10) << "P>|t|"
           << std::setw(22) << "[95% conf. interval]" << "\n";
        for (std::size_t j = 0; j < o.coefficients.size(); ++j)
            os << "  " << std::left << std::setw(12) << o.column_names[j] << std::right
               << std::setw(12) << fixed(o.coefficients[j]) << std::setw(12) << fixed(o.std_errors[j])
               << std::setw(9) << fixed(o.t_stats[j], 2) << std::setw(10) << fixed(o.p_values[j], 3)
               << std::setw(11) << fixed(o.conf_intervals[j].first) << std::setw(11)
               << fixed(o.conf_intervals[j].second) << "\n";
        for (const auto& e : d.report.input_effects)
            os << "  " << e.name << ": "
               << (e.direction > 0 ? "increases" : e.direction < 0 ? "decreases" : "does not move")
               << " the squared residuals" << (e.significant ? " (significant at 5%)" : " (not significant)")
               << "\n";
        os << "  verdict: " << (d.report.heteroscedastic ? "heteroscedastic" : "no heteroscedasticity detected")
           << " at the 5% level\n";
    }
    for (const auto& [label, mc] : r.mc_summaries) {
        os << "\nMonte Carlo (" << label << "): " << mc.successes << "/" << mc.replications
           << " replications succeeded\n";
        os << "  " << std::left << std::setw(16) << "parameter" << std::right << std::setw(10)
           << "truth" << std::setw(11) << "bias" << std::setw(11) << "rmse" << std::setw(12)
           << "emp. se" << std::setw(12) << "mean se" << std::setw(10) << "cover" << "\n";
        for (const auto& p : mc.params)
            os << "  " << std::left << std::setw(16) << p.name << std::right << std::setw(10)
               << fixed(p.truth) << std::setw(11) << fixed(p.bias, 5) << std::setw(11)
               << fixed(p.rmse, 5) << std::setw(12) << fixed(p.empirical_se, 5) << std::setw(12)
               << fixed(p.mean_reported_se, 5) << std::setw(10) << fixed(p.coverage, 3) << "\n";
    }
    if (!r.artifacts.empty()) {
        os << "\nartifacts:\n";
        for (const auto& a : r.artifacts) os << "  " << a << "\n";
    }
    if (!r.warnings.empty()) {
        os << "\nwarnings:\n";
        for (const auto& w : r.warnings) os << "  " << w << "\n";
    }
}

inline nlohmann::json to_json(const RunReport& r) {
    using reportfmt::num;
    nlohmann::json j;
    j["schema_version"] = 1;
    j["invocation"]["argv"] = r.argv;
    j["invocation"]["config_hash"] = r.config_hash;
    if (r.seed) j["invocation"]["seed"] = *r.seed;
    if (!r.data_label.empty()) {
        j["dataset"]["label"] = r.data_label;
        j["dataset"]["n_obs"] = r.n_obs;
        j["dataset"]["years"] = r.years;
    }
    if (!r.summary.empty()) {
        auto& arr = j["dataset"]["summary"];
        for (const auto& s : r.summary)
            arr.push_back({{"variable", s.name},
                           {"n", s.n},
                           {"mean", num(s.mean)},
                           {"sd", num(s.sd)},
                           {"min", num(s.min)},
                           {"max", num(s.max)}});
    }
    for (const auto& t : r.tables) {
        nlohmann::json jt;
        jt["title"] = t.title;
        jt["ssr"] = num(t.ssr);
        jt["sigma2"] = num(t.sigma2);
        jt["converged"] = t.converged;
        jt["iterations"] = t.iterations;
        for (std::size_t i = 0; i < t.names.size(); ++i)
            jt["estimates"].push_back({{"name", t.names[i]},
                                       {"estimate", num(t.estimates[i])},
                                       {"std_error", num(t.std_errors[i])},
                                       {"stars", significance_stars(t.estimates[i], t.std_errors[i])}});
        for (const auto& s : t.start_trace)
            jt["multi_start"].push_back({{"ssr", num(s.ssr)},
                                         {"converged", s.converged},
                                         {"iterations", s.iterations},
                                         {"error", s.error}});
        j["tables"].push_back(jt);
    }
    for (const auto& d : r.diagnostics) {
        const auto& o = d.report.ols;
        nlohmann::json jd;
        jd["title"] = d.title;
        jd["kind"] = d.report.kind;
        jd["f_stat"] = num(o.f_stat);
        jd["df"] = {o.df_model, o.df_resid};
        jd["prob_f"] = num(o.prob_f);
        jd["r_squared"] = num(o.r_squared);
        jd["adj_r_squared"] = num(o.adj_r_squared);
        jd["root_mse"] = num(o.root_mse);
        jd["ss"] = {{"model", num(o.ss_model)}, {"residual", num(o.ss_residual)}, {"total", num(o.ss_total)}};
        jd["verdict"] = d.report.heteroscedastic ? "heteroscedastic" : "homoscedastic";
        for (const auto& e : d.report.input_effects)
            jd["input_effects"].push_back({{"term", e.name},
                                           {"coef", num(e.coefficient)},
                                           {"direction", e.direction},
                                           {"p", num(e.p_value)},
                                           {"significant", e.significant}});
        for (std::size_t k = 0; k < o.coefficients.size(); ++k)
            jd["coefficients"].push_back({{"term", o.column_names[k]},
                                          {"coef", num(o.coefficients[k])},
                                          {"std_error", num(o.std_errors[k])},
                                          {"t", num(o.t_stats[k])},
                                          {"p", num(o.p_values[k])},
                                          {"ci", {num(o.conf_intervals[k].first), num(o.conf_intervals[k].second)}}});
        j["diagnostics"].push_back(jd);
    }
    for (const auto& [label, mc] : r.mc_summaries) {
        nlohmann::json jm;
        jm["estimator"] = label;
        jm["replications"] = mc.replications;
        jm["successes"] = mc.successes;
        jm["failures"] = mc.failures;
        for (const auto& p : mc.params)
            jm["parameters"].push_back({{"name", p.name},
                                        {"truth", num(p.truth)},
                                        {"bias", num(p.bias)},
                                        {"rmse", num(p.rmse)},
                                        {"empirical_se", num(p.empirical_se)},
                                        {"mean_reported_se", num(p.mean_reported_se)},
                                        {"coverage", num(p.coverage)}});
        j["monte_carlo"].push_back(jm);
    }
    j["artifacts"] = r.artifacts;
    j["warnings"] = r.warnings;
    return j;
}

}  // namespace cesrisk
