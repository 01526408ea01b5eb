#pragma once

// Experimental yield panel: (year, water, nitrogen, yield) rows plus derived
// year dummies. Nitrogen is stored with the +1 adjustment applied at load so
// the multiplicative limit of the CES kernel stays defined at zero recorded
// nitrogen; descriptive statistics report the pre-adjustment values.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "model.hpp"
#include "stats.hpp"

namespace cesrisk {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Observation {
    int year = 0;
    double water = 0.0;
    double nitrogen = 0.0;  // post-adjustment
    double yield = 0.0;
    double dummy = 0.0;
};

struct CsvSchema {
    std::string year = "year";
    std::string water = "water";
    std::string nitrogen = "nitrogen";
    std::string yield = "yield";
};

struct Dataset {
    std::vector<Observation> obs;
    std::string site;
    std::string crop;
    int base_year = 0;
    double nitrogen_shift = 1.0;

    std::size_t size() const { return obs.size(); }

    InputPoint point(std::size_t t) const {
        return InputPoint{{obs[t].water, obs[t].nitrogen}, obs[t].dummy};
    }

    static const std::vector<std::string>& input_names() {
        static const std::vector<std::string> names = {"water", "nitrogen"};
        return names;
    }

    Vec log_yields() const {
        Vec v(obs.size());
        for (std::size_t t = 0; t < obs.size(); ++t) v[t] = std::log(obs[t].yield);
        return v;
    }

    Vec yields() const {
        Vec v(obs.size());
        for (std::size_t t = 0; t < obs.size(); ++t) v[t] = obs[t].yield;
        return v;
    }

    Vec dummies() const {
        Vec v(obs.size());
        for (std::size_t t = 0; t < obs.size(); ++t) v[t] = obs[t].dummy;
        return v;
    }

    std::set<int> years() const {
        std::set<int> ys;
        for (const auto& o : obs) ys.insert(o.year);
        return ys;
    }

    bool has_dummy() const { return years().size() > 1; }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        // trim surrounding whitespace
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

inline double parse_number(const std::string& s, std::size_t row, const std::string& col) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError("row " + std::to_string(row) + ", column '" + col +
                         "': not a number: '" + s + "'");
    }
}

inline std::string round_trip(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

}  // namespace detail

inline Dataset load_dataset(std::istream& in, const CsvSchema& schema = {},
                            const std::string& label = "<stream>") {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(label + ": empty file");
    const auto header = detail::split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const std::string& want : {schema.year, schema.water, schema.nitrogen, schema.yield})
        if (!col.count(want)) throw ParseError(label + ": missing column '" + want + "'");

    Dataset d;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() < header.size())
            throw ParseError("row " + std::to_string(row) + ": expected " +
                             std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
        Observation o;
        const double year_v = detail::parse_number(cells[col[schema.year]], row, schema.year);
        o.year = static_cast<int>(year_v);
        o.water = detail::parse_number(cells[col[schema.water]], row, schema.water);
        const double nitrogen_raw = detail::parse_number(cells[col[schema.nitrogen]], row, schema.nitrogen);
        o.yield = detail::parse_number(cells[col[schema.yield]], row, schema.yield);
        if (!(o.water > 0.0))
            throw ParseError("row " + std::to_string(row) + ", column '" + schema.water +
                             "': must be positive");
        if (nitrogen_raw < 0.0)
            throw ParseError("row " + std::to_string(row) + ", column '" + schema.nitrogen +
                             "': must be non-negative");
        if (!(o.yield > 0.0))
            throw ParseError("row " + std::to_string(row) + ", column '" + schema.yield +
                             "': must be positive");
        o.nitrogen = nitrogen_raw + d.nitrogen_shift;
        d.obs.push_back(o);
    }
    if (d.obs.empty()) throw ParseError(label + ": no observations");
    if (d.obs.size() > 1) {
        bool water_varies = false, nitrogen_varies = false;
        for (const auto& o : d.obs) {
            water_varies |= o.water != d.obs.front().water;
            nitrogen_varies |= o.nitrogen != d.obs.front().nitrogen;
        }
        if (!water_varies || !nitrogen_varies)
            throw ParseError(label + ": both inputs must vary across observations");
    }

    d.base_year = d.obs.front().year;
    for (const auto& o : d.obs) d.base_year = std::min(d.base_year, o.year);
    for (auto& o : d.obs) o.dummy = o.year == d.base_year ? 0.0 : 1.0;
    return d;
}

inline Dataset load_dataset(const std::filesystem::path& path, const CsvSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    Dataset d = load_dataset(in, schema, path.string());
    // optional sidecar metadata
    std::filesystem::path side = path;
    side.replace_extension(".meta");
    if (std::ifstream meta(side); meta) {
        std::string line;
        while (std::getline(meta, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            if (key == "site") d.site = val;
            else if (key == "crop") d.crop = val;
        }
    }
    return d;
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& csv_path) {
    std::ofstream out(csv_path);
    if (!out) throw ParseError("cannot write " + csv_path.string());
    out << "year,water,nitrogen,yield\n";
    for (const auto& o : d.obs)
        out << o.year << ',' << detail::round_trip(o.water) << ','
            << detail::round_trip(o.nitrogen - d.nitrogen_shift) << ','
            << detail::round_trip(o.yield) << '\n';
    std::filesystem::path side = csv_path;
    side.replace_extension(".meta");
    std::ofstream meta(side);
    meta << "site=" << d.site << "\ncrop=" << d.crop << "\nbase_year=" << d.base_year
         << "\nnitrogen_shift=" << detail::round_trip(d.nitrogen_shift) << "\n";
}

struct VariableStats {
    std::string name;
    std::size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;  // NaN when undefined (single observation)
    double min = 0.0;
    double max = 0.0;
};

// Table-1-style summary. Nitrogen is reported pre-adjustment.
inline std::vector<VariableStats> describe(const Dataset& d) {
    if (d.obs.empty()) throw std::invalid_argument("describe: empty dataset");
    auto column = [&](auto getter) {
        Vec v(d.obs.size());
        for (std::size_t t = 0; t < d.obs.size(); ++t) v[t] = getter(d.obs[t]);
        return v;
    };
    auto stats = [&](const std::string& name, const Vec& v) {
        VariableStats s;
        s.name = name;
        s.n = v.size();
        s.mean = mean(v);
        s.sd = sample_sd(v);
        s.min = *std::min_element(v.begin(), v.end());
        s.max = *std::max_element(v.begin(), v.end());
        return s;
    };
    return {
        stats("water", column([](const Observation& o) { return o.water; })),
        stats("nitrogen", column([&](const Observation& o) { return o.nitrogen - d.nitrogen_shift; })),
        stats("yield", column([](const Observation& o) { return o.yield; })),
    };
}

}  // namespace cesrisk
