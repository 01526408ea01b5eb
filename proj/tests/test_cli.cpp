#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include <cesrisk/cli.hpp>
#include <cesrisk/synth.hpp>

#include "test_util.hpp"

using namespace cesrisk;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int exit_code;
    std::string out;
    std::string err;
};

CliRun run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(std::move(args), out, err);
    return {code, out.str(), err.str()};
}

fs::path work_dir() {
    const auto dir = fs::temp_directory_path() / "cesrisk_cli_test";
    fs::create_directories(dir);
    return dir;
}

fs::path write_synthetic_csv(const std::string& name, std::uint64_t seed, bool two_years = true,
                             int replicates = 3) {
    SyntheticSpec spec;
    spec.mean.ln_scale = 3.5;
    spec.mean.dummy_coef = two_years ? 0.88 : 0.0;
    spec.mean.r = 0.4;
    spec.mean.shares = {0.78, 0.22};
    spec.var.ln_scale = -3.0;
    spec.var.dummy_coef = 0.0;
    spec.var.r = -0.3;
    spec.var.weights = {1.04, -0.04};
    spec.design.water_levels = {12, 19.5, 27, 34.5, 42};
    spec.design.nitrogen_levels = {1, 82, 163, 244, 325};
    spec.design.replicates = replicates;
    if (two_years) spec.design.years = {1970, 1971};
    spec.seed = seed;
    const Dataset d = generate(spec);
    const auto path = work_dir() / name;
    save_dataset(d, path);
    return path;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("describe") {
    const auto csv = write_synthetic_csv("desc.csv", 1);
    const CliRun r = run({"describe", "--data", csv.string()});
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("Sample summary statistics") != std::string::npos);
    CHECK(r.out.find("water") != std::string::npos);

    const CliRun j = run({"describe", "--data", csv.string(), "--format", "json"});
    CHECK(j.exit_code == 0);
    const auto doc = nlohmann::json::parse(j.out);
    CHECK(doc["schema_version"] == 1);
    CHECK(doc["dataset"]["n_obs"] == 150);
    CHECK(doc["dataset"]["summary"].size() == 3);

    const CliRun missing = run({"describe", "--data", (work_dir() / "nope.csv").string()});
    CHECK(missing.exit_code == 2);
    CHECK(missing.err.find("nope.csv") != std::string::npos);
}

TEST_CASE("fit on a tiny file reports insufficient observations") {
    const auto path = work_dir() / "tiny.csv";
    std::ofstream(path) << "year,water,nitrogen,yield\n1970,10,5,100\n1970,12,6,120\n1970,14,7,130\n";
    const CliRun r = run({"fit", "--form", "ces", "--data", path.string()});
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("insufficient observations") != std::string::npos);
}

TEST_CASE("fit emits a mean table with significance stars") {
    const auto csv = write_synthetic_csv("fit.csv", 2);
    const CliRun r = run({"fit", "--form", "ces", "--data", csv.string(), "--format", "json"});
    CHECK(r.exit_code == 0);
    const auto doc = nlohmann::json::parse(r.out);
    REQUIRE(doc["tables"].size() == 1);
    const auto& tab = doc["tables"][0];
    CHECK(tab["converged"] == true);
    REQUIRE(tab["estimates"].size() == 5);
    CHECK(tab["estimates"][0]["name"] == "lnA");
    const double lnA = tab["estimates"][0]["estimate"].get<double>();
    CHECK(lnA == doctest::Approx(3.5).epsilon(0.1));
    CHECK(tab["estimates"][0]["stars"] == "***");
}

TEST_CASE("threshold fit recovers generating thresholds through the CLI") {
    // thresholds (2, 10) with data approaching them from above
    testutil::Rng rng(8);
    Dataset d;
    d.base_year = 1970;
    CesMeanParams base;
    base.ln_scale = 2.0;
    base.r = 0.5;
    base.shares = {0.6, 0.4};
    for (double w : {3.0, 6.0, 12.0, 24.0, 45.0})
        for (double z : {12.0, 30.0, 80.0, 180.0, 330.0})
            for (int rep = 0; rep < 4; ++rep) {
                ThresholdParams tp{base, {2.0, 10.0}};
                const double f = eval_threshold_mean(tp, {{w, z}, 0.0});
                Observation o;
                o.year = 1970;
                o.water = w;
                o.nitrogen = z;
                o.yield = std::exp(std::log(f) + 0.02 * rng.normal());
                d.obs.push_back(o);
            }
    const auto path = work_dir() / "threshold.csv";
    save_dataset(d, path);

    const CliRun r =
        run({"fit", "--form", "ces-threshold", "--data", path.string(), "--format", "json"});
    CHECK(r.exit_code == 0);
    const auto doc = nlohmann::json::parse(r.out);
    const auto& est = doc["tables"][0]["estimates"];
    REQUIRE(est.size() == 6);
    CHECK(est[4]["name"] == "b_water");
    const double b1 = est[4]["estimate"].get<double>(), se1 = est[4]["std_error"].get<double>();
    const double b2 = est[5]["estimate"].get<double>(), se2 = est[5]["std_error"].get<double>();
    CHECK(std::fabs(b1 - 2.0) <= 3.0 * se1);
    CHECK(std::fabs(b2 - 10.0) <= 3.0 * se2);
}

TEST_CASE("fit-jp runs all three stages") {
    const auto csv = write_synthetic_csv("jp.csv", 3);
    const CliRun r = run({"fit-jp", "--data", csv.string(), "--format", "json"});
    CHECK((r.exit_code == 0 || r.exit_code == 3));
    const auto doc = nlohmann::json::parse(r.out);
    REQUIRE(doc["tables"].size() == 3);
    CHECK(doc["tables"][0]["title"].get<std::string>().find("Stage 1") == 0);
    CHECK(doc["tables"][1]["title"].get<std::string>().find("Stage 2") == 0);
    CHECK(doc["tables"][2]["title"].get<std::string>().find("Stage 3") == 0);

    const CliRun lvl =
        run({"fit-jp", "--data", csv.string(), "--stage2-space", "level", "--format", "json"});
    const auto doc2 = nlohmann::json::parse(lvl.out);
    CHECK(doc2["tables"][1]["title"].get<std::string>().find("non-default") != std::string::npos);
}

TEST_CASE("fit-jp on a single-year dataset omits the dummy with a warning") {
    const auto csv = write_synthetic_csv("jp1y.csv", 4, false);
    const CliRun r = run({"fit-jp", "--data", csv.string(), "--format", "json"});
    const auto doc = nlohmann::json::parse(r.out);
    REQUIRE(doc["tables"].size() == 3);
    CHECK(doc["tables"][0]["estimates"].size() == 4);  // lnA, r1, two shares
    bool warned = false;
    for (const auto& w : doc["warnings"])
        warned |= w.get<std::string>().find("dummy coefficient omitted") != std::string::npos;
    CHECK(warned);
}

TEST_CASE("diagnose writes both tests and the plot files") {
    const auto csv = write_synthetic_csv("diag.csv", 5);
    const auto out_dir = work_dir() / "diag_out";
    fs::remove_all(out_dir);
    const CliRun r =
        run({"diagnose", "--data", csv.string(), "--out", out_dir.string(), "--format", "json"});
    CHECK(r.exit_code == 0);
    const auto doc = nlohmann::json::parse(slurp(out_dir / "report.json"));
    REQUIRE(doc["diagnostics"].size() == 2);
    CHECK(doc["diagnostics"][0]["kind"] == "inputs-regression");
    CHECK(doc["diagnostics"][1]["kind"] == "fitted-regression");
    CHECK(doc["artifacts"].size() == 6);
    for (const auto& a : doc["artifacts"]) CHECK(fs::exists(a.get<std::string>()));
    CHECK(fs::exists(out_dir / "sqresid_vs_fitted.points"));
    CHECK(fs::exists(out_dir / "report.txt"));
}

TEST_CASE("diagnose on a homoscedastic file detects nothing") {
    // log-space homoscedastic data: both auxiliary regressions stay quiet
    SyntheticSpec spec;
    spec.mean.ln_scale = 3.5;
    spec.mean.r = 0.4;
    spec.mean.shares = {0.78, 0.22};
    spec.mean_proportional_noise = 0.1;
    spec.design.water_levels = {12, 19.5, 27, 34.5, 42};
    spec.design.nitrogen_levels = {41, 112, 183, 254, 325};
    spec.design.replicates = 4;
    spec.seed = 55;
    const auto path = work_dir() / "homosked.csv";
    save_dataset(generate(spec), path);

    const CliRun r = run({"diagnose", "--data", path.string(), "--out",
                          (work_dir() / "homo_out").string(), "--format", "json"});
    CHECK(r.exit_code == 0);
    const auto doc = nlohmann::json::parse(r.out);
    REQUIRE(doc["diagnostics"].size() == 2);
    CHECK(doc["diagnostics"][0]["verdict"] == "homoscedastic");
    CHECK(doc["diagnostics"][1]["verdict"] == "homoscedastic");
    CHECK(r.out.find("no heteroscedasticity detected") == std::string::npos);  // json output

    const CliRun t = run({"diagnose", "--data", path.string(), "--out",
                          (work_dir() / "homo_out").string()});
    CHECK(t.out.find("no heteroscedasticity detected") != std::string::npos);
}

TEST_CASE("simulate is bit-deterministic for a fixed seed") {
    const auto cfg = work_dir() / "dgp.cfg";
    std::ofstream(cfg) << "lnA = 3.5\nr1 = 0.4\nalpha = 0.78,0.22\n"
                       << "lnB = -3\nr2 = -0.3\nbeta = 1.04,-0.04\n"
                       << "water_levels = 12,27,42\nnitrogen_levels = 1,163,325\n"
                       << "replicates = 3\nyears = 1970,1971\n";
    const auto out_dir = work_dir() / "sim_out";
    fs::remove_all(out_dir);

    const std::vector<std::string> args = {"simulate", "--spec", cfg.string(), "--seed", "7",
                                           "--out",    out_dir.string(), "--format", "json"};
    const CliRun r1 = run(args);
    CHECK(r1.exit_code == 0);
    const std::string report1 = slurp(out_dir / "report.json");
    const std::string data1 = slurp(out_dir / "data.csv");

    const CliRun r2 = run(args);
    CHECK(r2.exit_code == 0);
    CHECK(slurp(out_dir / "report.json") == report1);
    CHECK(slurp(out_dir / "data.csv") == data1);
    CHECK(r1.out == r2.out);

    // a different seed produces different data
    auto args3 = args;
    args3[4] = "8";
    run(args3);
    CHECK(slurp(out_dir / "data.csv") != data1);
}

TEST_CASE("simulate runs the Monte Carlo comparison") {
    const auto cfg = work_dir() / "dgp_mc.cfg";
    std::ofstream(cfg) << "lnA = 3.5\nr1 = 0.4\nalpha = 0.78,0.22\n"
                       << "mean_proportional_noise = 0.1\n"
                       << "water_levels = 12,27,42\nnitrogen_levels = 1,163,325\n"
                       << "replicates = 3\nseed = 11\n";
    const auto out_dir = work_dir() / "mc_out";
    const CliRun r = run({"simulate", "--spec", cfg.string(), "--mc", "8", "--estimator", "both",
                          "--out", out_dir.string(), "--format", "json"});
    CHECK(r.exit_code == 0);
    const auto doc = nlohmann::json::parse(r.out);
    REQUIRE(doc["monte_carlo"].size() == 2);
    CHECK(doc["monte_carlo"][0]["estimator"] == "stage1");
    CHECK(doc["monte_carlo"][1]["estimator"] == "three-stage");
    CHECK(doc["monte_carlo"][0]["replications"] == 8);
}

TEST_CASE("zero-noise pipeline: simulate with lnB=-inf, then fit-jp flags the variance") {
    const auto cfg = work_dir() / "dgp_zero.cfg";
    std::ofstream(cfg) << "lnA = 3.5\na_dummy = 0.88\nr1 = 0.4\nalpha = 0.78,0.22\n"
                       << "lnB = -inf\n"
                       << "water_levels = 12,27,42\nnitrogen_levels = 1,163,325\n"
                       << "replicates = 2\nyears = 1970,1971\nseed = 3\n";
    const auto out_dir = work_dir() / "zero_out";
    const CliRun sim = run({"simulate", "--spec", cfg.string(), "--out", out_dir.string()});
    CHECK(sim.exit_code == 0);

    const CliRun jp =
        run({"fit-jp", "--data", (out_dir / "data.csv").string(), "--format", "json"});
    CHECK(jp.exit_code == 0);
    const auto doc = nlohmann::json::parse(jp.out);  // NaN std errors serialize as null
    bool flagged = false;
    for (const auto& w : doc["warnings"])
        flagged |= w.get<std::string>().find("variance unidentified") != std::string::npos;
    CHECK(flagged);
    // stage 3 falls back to unit weights and reproduces the generating mean
    const auto& s3 = doc["tables"][2]["estimates"];
    CHECK(s3[0]["estimate"].get<double>() == doctest::Approx(3.5).epsilon(1e-6));
    CHECK(s3[3]["estimate"].get<double>() == doctest::Approx(0.78).epsilon(1e-6));
}

TEST_CASE("malformed spec names the offending key") {
    const auto cfg = work_dir() / "bad.cfg";
    std::ofstream(cfg) << "lnA = 1\nwibble = 2\n";
    const CliRun r = run({"simulate", "--spec", cfg.string()});
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("wibble") != std::string::npos);
}

TEST_CASE("unknown flags and missing subcommands are input errors") {
    CHECK(run({"describe"}).exit_code == 2);               // missing --data
    CHECK(run({"frobnicate"}).exit_code == 2);             // unknown subcommand
    CHECK(run({"describe", "--data", "x", "--format", "yaml"}).exit_code == 2);
}
