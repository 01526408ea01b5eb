#pragma once

// Heteroscedasticity diagnostics on squared fitting-space residuals:
// an inputs auxiliary regression (Breusch-Pagan style) and a fitted-values
// regression (White style), plus the point files behind the diagnostic
// scatterplots. No rendering here, only data.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "ols.hpp"

namespace cesrisk {

struct InputEffect {
    std::string name;
    double coefficient = 0.0;
    double p_value = 1.0;
    int direction = 0;  // sign of the slope
    bool significant = false;
};

struct DiagnosticsReport {
    std::string kind;  // "inputs-regression" or "fitted-regression"
    OlsResult ols;
    bool heteroscedastic = false;  // Prob>F < 0.05
    std::vector<InputEffect> input_effects;
};

// Squared residuals on (intercept, inputs).
inline DiagnosticsReport bp_style_test(const Dataset& data, const Vec& residuals) {
    if (residuals.size() != data.size())
        throw std::invalid_argument("bp_style_test: residuals do not match dataset");
    const std::size_t n = data.size();
    Matrix x(n, 3);
    Vec u2(n);
    for (std::size_t t = 0; t < n; ++t) {
        x(t, 0) = 1.0;
        x(t, 1) = data.obs[t].water;
        x(t, 2) = data.obs[t].nitrogen;
        u2[t] = residuals[t] * residuals[t];
    }
    DiagnosticsReport rep;
    rep.kind = "inputs-regression";
    rep.ols = solve_ols(x, u2, {"constant", "water", "nitrogen"});
    rep.heteroscedastic = rep.ols.prob_f < 0.05;
    for (std::size_t j = 1; j < 3; ++j) {
        InputEffect e;
        e.name = rep.ols.column_names[j];
        e.coefficient = rep.ols.coefficients[j];
        e.p_value = rep.ols.p_values[j];
        e.direction = e.coefficient > 0 ? 1 : (e.coefficient < 0 ? -1 : 0);
        e.significant = e.p_value < 0.05;
        rep.input_effects.push_back(e);
    }
    return rep;
}

// Squared residuals on (intercept, fitted, fitted^2).
inline DiagnosticsReport white_style_test(const Dataset& data, const Vec& residuals,
                                          const Vec& fitted) {
    if (residuals.size() != data.size() || fitted.size() != data.size())
        throw std::invalid_argument("white_style_test: vectors do not match dataset");
    const std::size_t n = data.size();
    Matrix x(n, 3);
    Vec u2(n);
    for (std::size_t t = 0; t < n; ++t) {
        x(t, 0) = 1.0;
        x(t, 1) = fitted[t];
        x(t, 2) = fitted[t] * fitted[t];
        u2[t] = residuals[t] * residuals[t];
    }
    DiagnosticsReport rep;
    rep.kind = "fitted-regression";
    rep.ols = solve_ols(x, u2, {"constant", "fitted", "fitted^2"});
    rep.heteroscedastic = rep.ols.prob_f < 0.05;
    for (std::size_t j = 1; j < 3; ++j) {
        InputEffect e;
        e.name = rep.ols.column_names[j];
        e.coefficient = rep.ols.coefficients[j];
        e.p_value = rep.ols.p_values[j];
        e.direction = e.coefficient > 0 ? 1 : (e.coefficient < 0 ? -1 : 0);
        e.significant = e.p_value < 0.05;
        rep.input_effects.push_back(e);
    }
    return rep;
}

struct PlotSeries {
    std::string figure_id;
    std::vector<std::pair<double, double>> points;
};

// Point sets behind the diagnostic figures: yield against each input, squared
// residuals against each input, and residuals (both squared and raw) against
// the fitted values.
inline std::vector<PlotSeries> build_plot_data(const Dataset& data, const Vec& residuals,
                                               const Vec& fitted) {
    if (data.obs.empty()) throw std::invalid_argument("no observations");
    if (residuals.size() != data.size() || fitted.size() != data.size())
        throw std::invalid_argument("plot data: vectors do not match dataset");
    const std::size_t n = data.size();
    auto input_value = [&](std::size_t t, std::size_t i) { return data.point(t).values[i]; };

    std::vector<PlotSeries> out;
    const auto& inputs = Dataset::input_names();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        PlotSeries s{"yield_vs_" + inputs[i], {}};
        for (std::size_t t = 0; t < n; ++t) s.points.emplace_back(input_value(t, i), data.obs[t].yield);
        out.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        PlotSeries s{"sqresid_vs_" + inputs[i], {}};
        for (std::size_t t = 0; t < n; ++t)
            s.points.emplace_back(input_value(t, i), residuals[t] * residuals[t]);
        out.push_back(std::move(s));
    }
    {
        PlotSeries s{"sqresid_vs_fitted", {}};
        for (std::size_t t = 0; t < n; ++t) s.points.emplace_back(fitted[t], residuals[t] * residuals[t]);
        out.push_back(std::move(s));
    }
    {
        PlotSeries s{"resid_vs_fitted", {}};
        for (std::size_t t = 0; t < n; ++t) s.points.emplace_back(fitted[t], residuals[t]);
        out.push_back(std::move(s));
    }
    return out;
}

// Writes one headerless two-column file per figure, named <figure-id>.points.
inline std::vector<std::filesystem::path> emit_plot_data(const Dataset& data, const Vec& residuals,
                                                         const Vec& fitted,
                                                         const std::filesystem::path& dir) {
    const auto series = build_plot_data(data, residuals, fitted);
    std::vector<std::filesystem::path> paths;
    std::filesystem::create_directories(dir);
    for (const auto& s : series) {
        const auto path = dir / (s.figure_id + ".points");
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        for (const auto& [x, y] : s.points)
            out << detail::round_trip(x) << ' ' << detail::round_trip(y) << '\n';
        paths.push_back(path);
    }
    return paths;
}

}  // namespace cesrisk
