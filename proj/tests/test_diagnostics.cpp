#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <cesrisk/diagnostics.hpp>
#include <cesrisk/synth.hpp>

#include "test_util.hpp"

using namespace cesrisk;

namespace {

Dataset grid_data(std::uint64_t seed, std::size_t reps = 4) {
    rng::Engine eng(seed);
    Dataset d;
    d.base_year = 1970;
    for (std::size_t r = 0; r < reps; ++r)
        for (double w : {12.0, 20.0, 28.0, 36.0, 44.0})
            for (double z : {1.0, 80.0, 160.0, 240.0, 320.0}) {
                Observation o;
                o.year = 1970;
                o.water = w;
                o.nitrogen = z;
                o.dummy = 0.0;
                o.yield = 1000.0 + 10.0 * w + z + 50.0 * eng.normal();
                d.obs.push_back(o);
            }
    return d;
}

}  // namespace

TEST_CASE("inputs regression reproduces its own R-squared-based F statistic") {
    const Dataset d = grid_data(1);
    rng::Engine eng(2);
    Vec resid(d.size());
    for (std::size_t t = 0; t < d.size(); ++t)
        resid[t] = (0.5 + 0.01 * d.obs[t].water) * eng.normal();  // heteroscedastic in water

    const DiagnosticsReport rep = bp_style_test(d, resid);
    CHECK(rep.kind == "inputs-regression");
    const auto& o = rep.ols;
    const double f_from_r2 =
        (o.r_squared / o.df_model) / ((1.0 - o.r_squared) / o.df_resid);
    CHECK(std::fabs(o.f_stat - f_from_r2) <= 1e-8 * std::max(1.0, o.f_stat));
    CHECK(rep.heteroscedastic == (o.prob_f < 0.05));
    REQUIRE(rep.input_effects.size() == 2);
    CHECK(rep.input_effects[0].name == "water");
    CHECK(rep.input_effects[1].name == "nitrogen");

    // the tests consume squared residuals only: flipping signs changes nothing
    Vec flipped = resid;
    for (double& v : flipped) v = -v;
    const DiagnosticsReport rep2 = bp_style_test(d, flipped);
    CHECK(rep2.ols.f_stat == rep.ols.f_stat);
    CHECK(rep2.ols.coefficients == rep.ols.coefficients);
}

TEST_CASE("white-style regression flags variance tied to the fitted values") {
    const Dataset d = grid_data(3);
    rng::Engine eng(4);
    Vec fitted(d.size()), resid(d.size());
    for (std::size_t t = 0; t < d.size(); ++t) {
        fitted[t] = 2.0 + 0.1 * d.obs[t].water + 0.002 * d.obs[t].nitrogen;
        resid[t] = 0.1 * fitted[t] * fitted[t] * eng.normal();
    }
    const DiagnosticsReport rep = white_style_test(d, resid, fitted);
    CHECK(rep.kind == "fitted-regression");
    CHECK(rep.ols.column_names[1] == "fitted");
    CHECK(rep.heteroscedastic);

    // constant fitted values leave fitted^2 collinear
    Vec flat(d.size(), 2.5);
    CHECK_THROWS_WITH_AS(white_style_test(d, resid, flat), doctest::Contains("fitted"), OlsError);
}

TEST_CASE("size of the inputs test under a homoscedastic null") {
    const Dataset d = grid_data(5, 4);
    int rejections = 0;
    const int reps = 400;
    for (int rep = 0; rep < reps; ++rep) {
        rng::Engine eng(rng::derive_seed(2024, rep));
        Vec resid(d.size());
        for (double& v : resid) v = 0.4 * eng.normal();
        if (bp_style_test(d, resid).heteroscedastic) ++rejections;
    }
    const double rate = static_cast<double>(rejections) / reps;
    CHECK(rate > 0.02);
    CHECK(rate < 0.09);
}

TEST_CASE("plot data bundle") {
    const Dataset d = grid_data(6, 1);  // 25 observations
    rng::Engine eng(7);
    Vec resid(d.size()), fitted(d.size());
    for (std::size_t t = 0; t < d.size(); ++t) {
        resid[t] = eng.normal();
        fitted[t] = 7.0 + 0.01 * t;
    }

    const auto series = build_plot_data(d, resid, fitted);
    REQUIRE(series.size() == 6);
    CHECK(series[0].figure_id == "yield_vs_water");
    CHECK(series[1].figure_id == "yield_vs_nitrogen");
    CHECK(series[2].figure_id == "sqresid_vs_water");
    CHECK(series[3].figure_id == "sqresid_vs_nitrogen");
    CHECK(series[4].figure_id == "sqresid_vs_fitted");
    CHECK(series[5].figure_id == "resid_vs_fitted");
    for (const auto& s : series) CHECK(s.points.size() == d.size());
    // pass-through values
    CHECK(series[0].points[3].first == d.obs[3].water);
    CHECK(series[0].points[3].second == d.obs[3].yield);
    CHECK(series[4].points[5].first == fitted[5]);
    CHECK(series[4].points[5].second == resid[5] * resid[5]);

    const auto dir = std::filesystem::temp_directory_path() / "cesrisk_plots";
    std::filesystem::remove_all(dir);
    const auto paths = emit_plot_data(d, resid, fitted, dir);
    REQUIRE(paths.size() == 6);
    for (const auto& p : paths) {
        std::ifstream in(p);
        REQUIRE(in.good());
        std::size_t lines = 0;
        std::string line;
        while (std::getline(in, line)) ++lines;
        CHECK(lines == d.size());
    }

    Dataset empty;
    CHECK_THROWS_WITH_AS(build_plot_data(empty, {}, {}), doctest::Contains("no observations"),
                         std::invalid_argument);
}
