#pragma once

// Synthetic data from the composite specification y = f(X) + h^{1/2}(X) eps
// in levels, for oracle tests and Monte Carlo recovery studies. All draws run
// through mt19937_64 plus a hand-rolled Box-Muller so identical seeds give
// bit-identical datasets on any platform; replication seeds derive from the
// master seed through splitmix64.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dataset.hpp"
#include "justpope.hpp"
#include "model.hpp"
#include "stats.hpp"

namespace cesrisk {

// V(e^eps) for standard normal eps, from the lognormal moments e^2 - e^1.
inline double exp_eps_variance_normal() { return std::exp(2.0) - std::exp(1.0); }

namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Replication seed: master seed mixed with the replication index.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(master ^ splitmix64(index + 1));
}

class Engine {
public:
    explicit Engine(std::uint64_t seed) : gen_(seed) {}

    double uniform01() {  // (0, 1]
        return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
    }

    double normal() {  // Box-Muller, cosine branch
        const double u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double uniform_unit_var() {  // mean 0, variance 1
        return (2.0 * uniform01() - 1.0) * std::sqrt(3.0);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace rng

enum class NoiseKind { Normal, Uniform };

struct DesignGrid {
    Vec water_levels;
    Vec nitrogen_levels;  // model space, i.e. post "+1" adjustment, >= 1
    int replicates = 1;
    std::vector<int> years = {1970};

    std::size_t size() const {
        return water_levels.size() * nitrogen_levels.size() * replicates * years.size();
    }
};

struct SyntheticSpec {
    CesMeanParams mean;
    CesVarParams var;
    bool zero_variance = false;  // B scale zero: y = f(X) exactly
    // When positive, h^{1/2}(X) = c * f(X) instead of the CES variance form:
    // the multiplicative special case, not representable with sum-to-one
    // variance weights (h would need to be degree-2 homogeneous).
    double mean_proportional_noise = 0.0;
    DesignGrid design;
    NoiseKind noise = NoiseKind::Normal;
    double year_shock_sd = 0.0;  // optional additive common year shock
    std::uint64_t seed = 0;
    std::string site = "synthetic";
    std::string crop = "synthetic";

    void validate() const {
        mean.validate();
        if (!zero_variance && mean_proportional_noise == 0.0) var.validate();
        if (design.water_levels.empty() || design.nitrogen_levels.empty())
            throw std::invalid_argument("synthetic design: empty input levels");
        if (design.replicates < 1) throw std::invalid_argument("synthetic design: replicates >= 1");
        if (design.years.empty()) throw std::invalid_argument("synthetic design: needs a year");
        for (double w : design.water_levels)
            if (!(w > 0.0)) throw std::invalid_argument("synthetic design: water levels must be positive");
        for (double z : design.nitrogen_levels)
            if (!(z >= 1.0))
                throw std::invalid_argument("synthetic design: nitrogen levels must be >= 1 (model space)");
    }
};

inline Dataset generate(const SyntheticSpec& spec, int* redraw_count = nullptr) {
    spec.validate();
    rng::Engine eng(spec.seed);
    const int base_year = *std::min_element(spec.design.years.begin(), spec.design.years.end());

    std::map<int, double> year_shock;
    for (int y : spec.design.years)
        year_shock[y] = spec.year_shock_sd > 0.0 ? spec.year_shock_sd * eng.normal() : 0.0;

    Dataset d;
    d.site = spec.site;
    d.crop = spec.crop;
    d.base_year = base_year;
    int redraws = 0;
    for (int year : spec.design.years)
        for (int rep = 0; rep < spec.design.replicates; ++rep)
            for (double w : spec.design.water_levels)
                for (double z : spec.design.nitrogen_levels) {
                    Observation o;
                    o.year = year;
                    o.water = w;
                    o.nitrogen = z;
                    o.dummy = year == base_year ? 0.0 : 1.0;
                    const InputPoint pt{{w, z}, o.dummy};
                    const double f = eval_mean(spec.mean, pt);
                    if (spec.zero_variance) {
                        o.yield = f;
                    } else {
                        double sd;
                        try {
                            sd = spec.mean_proportional_noise > 0.0
                                     ? spec.mean_proportional_noise * f
                                     : std::sqrt(eval_variance(spec.var, pt));
                        } catch (const std::domain_error& e) {
                            throw std::domain_error(std::string(e.what()) + " (water=" +
                                                    std::to_string(w) + ", nitrogen=" + std::to_string(z) + ")");
                        }
                        int tries = 0;
                        do {
                            if (tries++ > 100)
                                throw std::runtime_error("DGP produces non-positive output at water=" +
                                                         std::to_string(w) + ", nitrogen=" + std::to_string(z));
                            const double eps = spec.noise == NoiseKind::Normal ? eng.normal()
                                                                               : eng.uniform_unit_var();
                            o.yield = f + sd * eps + year_shock[year];
                        } while (!(o.yield > 0.0) && ++redraws);
                    }
                    d.obs.push_back(o);
                }
    if (redraw_count) *redraw_count = redraws;
    return d;
}

// ---------------------------------------------------------------------------
// Monte Carlo recovery
// ---------------------------------------------------------------------------

enum class EstimatorChoice { Stage1Only, ThreeStage };

struct ParamSummary {
    std::string name;
    double truth = 0.0;
    double bias = 0.0;
    double rmse = 0.0;
    double empirical_se = 0.0;     // sd of estimates across replications
    double mean_reported_se = 0.0;
    double coverage = 0.0;         // nominal 95% intervals covering truth
};

struct McSummary {
    std::vector<ParamSummary> params;
    int replications = 0;
    int successes = 0;
    int failures = 0;
};

inline McSummary monte_carlo(const SyntheticSpec& spec, EstimatorChoice choice, int replications,
                             const ThreeStageOptions& opts = {}) {
    if (replications < 1) throw std::invalid_argument("monte_carlo: replications >= 1");
    spec.validate();

    const bool has_dummy = spec.design.years.size() > 1;
    layout::MeanLayout lay{has_dummy, 2};
    const Vec truth = lay.pack(spec.mean);
    const auto names = lay.names(Dataset::input_names());

    struct RepOutcome {
        bool ok = false;
        Vec est, se;
    };
    std::vector<RepOutcome> outcomes(replications);

    auto run_one = [&](int r) {
        SyntheticSpec s = spec;
        s.seed = rng::derive_seed(spec.seed, static_cast<std::uint64_t>(r));
        try {
            const Dataset data = generate(s);
            FitResult fit;
            if (choice == EstimatorChoice::Stage1Only) {
                fit = stage1_fit(data, opts.mean);
            } else {
                fit = run_three_stage(data, opts).stage3;
            }
            if (!fit.converged) return;
            outcomes[r].ok = true;
            outcomes[r].est = fit.estimates;
            outcomes[r].se = fit.std_errors;
        } catch (const std::exception&) {
            // counted as a failure below
        }
    };

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned n_threads = std::min<unsigned>(hw, 8);
    if (n_threads > 1 && replications > 1) {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < n_threads; ++t)
            pool.emplace_back([&] {
                int r;
                while ((r = next.fetch_add(1)) < replications) run_one(r);
            });
        for (auto& th : pool) th.join();
    } else {
        for (int r = 0; r < replications; ++r) run_one(r);
    }

    McSummary out;
    out.replications = replications;
    for (const auto& o : outcomes) (o.ok ? out.successes : out.failures)++;
    if (out.successes == 0) throw std::runtime_error("monte_carlo: every replication failed");

    constexpr double z975 = 1.959963984540054;
    for (std::size_t p = 0; p < truth.size(); ++p) {
        Vec est, se;
        int covered = 0;
        for (const auto& o : outcomes) {
            if (!o.ok) continue;
            est.push_back(o.est[p]);
            se.push_back(o.se[p]);
            if (std::fabs(o.est[p] - truth[p]) <= z975 * o.se[p]) ++covered;
        }
        ParamSummary s;
        s.name = names[p];
        s.truth = truth[p];
        s.bias = mean(est) - truth[p];
        double mse = 0.0;
        for (double e : est) mse += (e - truth[p]) * (e - truth[p]);
        s.rmse = std::sqrt(mse / static_cast<double>(est.size()));
        s.empirical_se = sample_sd(est);  // NaN with a single success
        s.mean_reported_se = mean(se);
        s.coverage = static_cast<double>(covered) / static_cast<double>(est.size());
        out.params.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Flat key=value config for SyntheticSpec
// ---------------------------------------------------------------------------

namespace detail {

inline Vec parse_double_list(const std::string& s, const std::string& key) {
    Vec out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto comma = s.find(',', pos);
        const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ParseError("config key '" + key + "': bad number '" + tok + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

}  // namespace detail

// Recognized keys: lnA, a_dummy, r1, alpha, lnB, b_dummy, r2, beta,
// water_levels, nitrogen_levels, replicates, years, noise,
// mean_proportional_noise, year_shock_sd, seed, site, crop.
// "lnB=-inf" selects the zero-variance proxy.
inline SyntheticSpec parse_synthetic_spec(std::istream& in) {
    SyntheticSpec spec;
    spec.mean.shares = {0.5, 0.5};
    spec.var.weights = {0.5, 0.5};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line " + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        auto as_double = [&] {
            try {
                return std::stod(val);
            } catch (const std::exception&) {
                throw ParseError("config key '" + key + "': bad number '" + val + "'");
            }
        };
        if (key == "lnA") spec.mean.ln_scale = as_double();
        else if (key == "a_dummy") spec.mean.dummy_coef = as_double();
        else if (key == "r1") spec.mean.r = as_double();
        else if (key == "alpha") spec.mean.shares = detail::parse_double_list(val, key);
        else if (key == "lnB") {
            if (val == "-inf") spec.zero_variance = true;
            else spec.var.ln_scale = as_double();
        } else if (key == "b_dummy") spec.var.dummy_coef = as_double();
        else if (key == "r2") spec.var.r = as_double();
        else if (key == "beta") spec.var.weights = detail::parse_double_list(val, key);
        else if (key == "water_levels") spec.design.water_levels = detail::parse_double_list(val, key);
        else if (key == "nitrogen_levels") spec.design.nitrogen_levels = detail::parse_double_list(val, key);
        else if (key == "replicates") spec.design.replicates = static_cast<int>(as_double());
        else if (key == "years") {
            spec.design.years.clear();
            for (double y : detail::parse_double_list(val, key))
                spec.design.years.push_back(static_cast<int>(y));
        } else if (key == "noise") {
            if (val == "normal") spec.noise = NoiseKind::Normal;
            else if (val == "uniform") spec.noise = NoiseKind::Uniform;
            else throw ParseError("config key 'noise': unknown value '" + val + "'");
        } else if (key == "mean_proportional_noise") spec.mean_proportional_noise = as_double();
        else if (key == "year_shock_sd") spec.year_shock_sd = as_double();
        else if (key == "seed") spec.seed = static_cast<std::uint64_t>(std::stoull(val));
        else if (key == "site") spec.site = val;
        else if (key == "crop") spec.crop = val;
        else throw ParseError("config: unknown key '" + key + "'");
    }
    return spec;
}

inline SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    return parse_synthetic_spec(in);
}

}  // namespace cesrisk
