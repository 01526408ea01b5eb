#pragma once

// Command-line surface. Subcommands: describe, fit, fit-jp, diagnose,
// simulate. Exit codes are a stable contract: 0 success, 2 input/config
// error, 3 numerical non-convergence, 4 internal error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "report.hpp"

namespace cesrisk {

namespace cli_detail {

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ParseError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Common {
    std::string format = "text";
    std::string out_dir;
    std::vector<std::string> argv;
};

inline void emit_report(const RunReport& rep, const Common& c, std::ostream& os) {
    if (c.format == "json")
        os << to_json(rep).dump(2) << "\n";
    else
        render_text(rep, os);
    if (!c.out_dir.empty()) {
        std::filesystem::create_directories(c.out_dir);
        std::ofstream jf(std::filesystem::path(c.out_dir) / "report.json", std::ios::binary);
        jf << to_json(rep).dump(2) << "\n";
        std::ofstream tf(std::filesystem::path(c.out_dir) / "report.txt", std::ios::binary);
        render_text(rep, tf);
    }
}

inline void fill_dataset_block(RunReport& rep, const Dataset& d, const std::string& label) {
    rep.data_label = label;
    rep.n_obs = d.size();
    for (int y : d.years()) rep.years.push_back(y);
    if (!d.has_dummy()) rep.warnings.push_back("single year in data: dummy coefficient omitted");
}

inline int classify(const std::exception& e, std::ostream& err) {
    err << "error: " << e.what() << "\n";
    if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const std::invalid_argument*>(&e) ||
        dynamic_cast<const std::domain_error*>(&e))
        return 2;
    if (dynamic_cast<const NlsError*>(&e) || dynamic_cast<const OlsError*>(&e)) return 3;
    return 4;
}

}  // namespace cli_detail

inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"CES production functions with flexible input-driven output risk"};
    app.require_subcommand(1);

    cli_detail::Common common;
    common.argv = args;

    std::string data_path, spec_path;
    std::string form = "ces";
    std::string stage2_space = "log";
    std::string estimator = "three-stage";
    int mc_reps = 0;
    std::optional<std::uint64_t> seed_flag;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--format", common.format, "text|json")->check(CLI::IsMember({"text", "json"}));
        cmd->add_option("--out", common.out_dir, "directory for report and artifacts");
    };

    CLI::App* c_desc = app.add_subcommand("describe", "summary statistics of a dataset");
    c_desc->add_option("--data", data_path, "CSV dataset")->required();
    add_common(c_desc);

    CLI::App* c_fit = app.add_subcommand("fit", "single NLS fit of a CES mean form");
    c_fit->add_option("--data", data_path)->required();
    c_fit->add_option("--form", form, "ces|ces-threshold")->check(CLI::IsMember({"ces", "ces-threshold"}));
    add_common(c_fit);

    CLI::App* c_jp = app.add_subcommand("fit-jp", "three-stage mean/variance estimation");
    c_jp->add_option("--data", data_path)->required();
    c_jp->add_option("--stage2-space", stage2_space, "log|level")->check(CLI::IsMember({"log", "level"}));
    add_common(c_jp);

    CLI::App* c_diag = app.add_subcommand("diagnose", "heteroscedasticity diagnostics and plot data");
    c_diag->add_option("--data", data_path)->required();
    add_common(c_diag);

    CLI::App* c_sim = app.add_subcommand("simulate", "generate synthetic data / Monte Carlo study");
    c_sim->add_option("--spec", spec_path, "key=value DGP config")->required();
    c_sim->add_option("--seed", seed_flag, "override the config seed");
    c_sim->add_option("--mc", mc_reps, "Monte Carlo replications");
    c_sim->add_option("--estimator", estimator, "stage1|three-stage|both")
        ->check(CLI::IsMember({"stage1", "three-stage", "both"}));
    add_common(c_sim);

    std::vector<char*> argv;
    std::string prog = "cesrisk";
    argv.push_back(prog.data());
    for (auto& a : args) argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help() << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    RunReport rep;
    rep.argv = args;

    try {
        if (app.got_subcommand(c_desc)) {
            rep.config_hash = fnv1a_hex(cli_detail::slurp(data_path));
            const Dataset d = load_dataset(std::filesystem::path(data_path));
            cli_detail::fill_dataset_block(rep, d, data_path);
            rep.summary = describe(d);
            cli_detail::emit_report(rep, common, out);
            return 0;
        }

        if (app.got_subcommand(c_fit)) {
            rep.config_hash = fnv1a_hex(cli_detail::slurp(data_path));
            const Dataset d = load_dataset(std::filesystem::path(data_path));
            cli_detail::fill_dataset_block(rep, d, data_path);
            if (d.size() < 6) throw std::invalid_argument("insufficient observations (need at least 6)");
            FitResult fit = form == "ces-threshold" ? fit_threshold_mean(d) : stage1_fit(d);
            rep.tables.push_back(EstimateTable::from_fit(
                form == "ces-threshold" ? "CES mean fit with input thresholds" : "CES mean fit", fit));
            if (!fit.converged) rep.warnings.push_back("fit did not converge");
            cli_detail::emit_report(rep, common, out);
            return fit.converged ? 0 : 3;
        }

        if (app.got_subcommand(c_jp)) {
            rep.config_hash = fnv1a_hex(cli_detail::slurp(data_path));
            const Dataset d = load_dataset(std::filesystem::path(data_path));
            cli_detail::fill_dataset_block(rep, d, data_path);
            if (d.size() < 6) throw std::invalid_argument("insufficient observations (need at least 6)");
            ThreeStageOptions opts;
            opts.stage2_space = stage2_space == "level" ? Stage2Space::Level : Stage2Space::Log;
            ThreeStageResult r;
            try {
                r = run_three_stage(d, opts);
            } catch (const ThreeStageError& e) {
                // report whatever completed before the failing stage
                if (e.failed_stage > 1)
                    rep.tables.push_back(EstimateTable::from_fit("Stage 1: mean component",
                                                                 e.partial.stage1));
                if (e.failed_stage > 2)
                    rep.tables.push_back(EstimateTable::from_fit("Stage 2: variance component",
                                                                 e.partial.stage2));
                rep.warnings.push_back(e.what());
                err << "error: " << e.what() << "\n";
                cli_detail::emit_report(rep, common, out);
                return 3;
            }
            rep.tables.push_back(EstimateTable::from_fit("Stage 1: mean component", r.stage1));
            rep.tables.push_back(EstimateTable::from_fit(
                std::string("Stage 2: variance component (") +
                    (opts.stage2_space == Stage2Space::Log ? "log" : "level") + " space" +
                    (opts.stage2_space == Stage2Space::Level ? ", non-default" : "") + ")",
                r.stage2));
            rep.tables.push_back(EstimateTable::from_fit("Stage 3: weighted mean component", r.stage3));
            for (const auto& w : r.warnings) rep.warnings.push_back(w);
            cli_detail::emit_report(rep, common, out);
            const bool ok = r.stage1.converged && r.stage3.converged &&
                            (r.variance_unidentified || r.stage2.converged);
            return ok ? 0 : 3;
        }

        if (app.got_subcommand(c_diag)) {
            rep.config_hash = fnv1a_hex(cli_detail::slurp(data_path));
            const Dataset d = load_dataset(std::filesystem::path(data_path));
            cli_detail::fill_dataset_block(rep, d, data_path);
            if (d.size() < 6) throw std::invalid_argument("insufficient observations (need at least 6)");
            const FitResult fit = stage1_fit(d);
            rep.tables.push_back(EstimateTable::from_fit("Stage 1: mean component", fit));
            Vec fitted(d.size());
            const Vec ly = d.log_yields();
            for (std::size_t t = 0; t < d.size(); ++t) fitted[t] = ly[t] - fit.residuals[t];
            rep.diagnostics.push_back(
                {"Squared residuals on inputs", bp_style_test(d, fit.residuals)});
            rep.diagnostics.push_back(
                {"Squared residuals on fitted values", white_style_test(d, fit.residuals, fitted)});
            const std::filesystem::path dir = common.out_dir.empty() ? "." : common.out_dir;
            for (const auto& p : emit_plot_data(d, fit.residuals, fitted, dir))
                rep.artifacts.push_back(p.generic_string());
            cli_detail::emit_report(rep, common, out);
            return fit.converged ? 0 : 3;
        }

        if (app.got_subcommand(c_sim)) {
            rep.config_hash = fnv1a_hex(cli_detail::slurp(spec_path));
            SyntheticSpec spec = load_synthetic_spec(spec_path);
            if (seed_flag) spec.seed = *seed_flag;
            rep.seed = spec.seed;
            int redraws = 0;
            const Dataset d = generate(spec, &redraws);
            if (redraws > 0)
                rep.warnings.push_back(std::to_string(redraws) + " redraws of non-positive yields");
            cli_detail::fill_dataset_block(rep, d, "generated from " + spec_path);
            rep.summary = describe(d);
            const std::filesystem::path dir = common.out_dir.empty() ? "." : common.out_dir;
            std::filesystem::create_directories(dir);
            save_dataset(d, dir / "data.csv");
            rep.artifacts.push_back((dir / "data.csv").generic_string());
            rep.artifacts.push_back((dir / "data.meta").generic_string());
            if (mc_reps > 0) {
                if (estimator == "stage1" || estimator == "both")
                    rep.mc_summaries.emplace_back(
                        "stage1", monte_carlo(spec, EstimatorChoice::Stage1Only, mc_reps));
                if (estimator == "three-stage" || estimator == "both")
                    rep.mc_summaries.emplace_back(
                        "three-stage", monte_carlo(spec, EstimatorChoice::ThreeStage, mc_reps));
            }
            cli_detail::emit_report(rep, common, out);
            return 0;
        }
    } catch (const std::exception& e) {
        return cli_detail::classify(e, err);
    }
    return 4;
}

}  // namespace cesrisk
