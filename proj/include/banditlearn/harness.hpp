#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "banditlearn/error.hpp"
#include "banditlearn/interval.hpp"
#include "banditlearn/json_util.hpp"
#include "banditlearn/log_io.hpp"
#include "banditlearn/objectives.hpp"
#include "banditlearn/optim.hpp"
#include "banditlearn/parallel.hpp"
#include "banditlearn/policy.hpp"
#include "banditlearn/sim.hpp"

namespace banditlearn::harness {

inline const std::vector<std::string>& baseline_names() {
    static const std::vector<std::string> names{"logging", "uniform", "oracle"};
    return names;
}

inline bool is_known_method(const std::string& m) {
    return objectives::parse_method(m).has_value() ||
           std::find(baseline_names().begin(), baseline_names().end(), m) != baseline_names().end();
}

struct Hyper {
    double alpha = 0.5;
    double lambda = 1.0;
    std::optional<double> clip_m;
};

struct ExperimentSpec {
    sim::SimConfig sim_config;
    std::vector<std::size_t> user_counts{100, 500, 1000, 2000, 5000};
    std::vector<std::string> methods{"likelihood", "ips-likelihood", "cb", "dual", "poem", "snips",
                                     "logging",    "uniform",        "oracle"};
    std::size_t eval_users = 30000;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    Hyper hyper;
    optim::LbfgsConfig optimizer;
    // Off by default: timings would make the results file non-reproducible.
    bool record_wall_time = false;

    void validate() const {
        sim_config.validate();
        optimizer.validate();
        if (user_counts.empty()) throw ValidationError("user_counts must not be empty");
        for (std::size_t i = 0; i < user_counts.size(); ++i) {
            if (user_counts[i] == 0) throw ValidationError("user_counts must be positive");
            if (i > 0 && user_counts[i] <= user_counts[i - 1])
                throw ValidationError("user_counts must be strictly ascending");
        }
        if (methods.empty()) throw ValidationError("methods must not be empty");
        for (const auto& m : methods)
            if (!is_known_method(m)) throw ValidationError("unknown method '" + m + "'");
        if (eval_users < 1) throw ValidationError("eval_users must be at least 1");
        if (seeds.empty()) throw ValidationError("seeds must not be empty");
        objectives::ObjectiveConfig probe{objectives::Method::dual, hyper.alpha, hyper.lambda, hyper.clip_m};
        probe.validate();
    }
};

inline optim::LbfgsConfig lbfgs_config_from_json(const nlohmann::json& o) {
    constexpr std::string_view what = "optimizer config";
    json_util::require_known_keys(o, {"memory", "grad_tol", "max_iters", "wolfe_c1", "wolfe_c2", "max_line_search_steps"},
                                  what);
    optim::LbfgsConfig c;
    json_util::read_optional(o, "memory", c.memory, what);
    json_util::read_optional(o, "grad_tol", c.grad_tol, what);
    json_util::read_optional(o, "max_iters", c.max_iters, what);
    json_util::read_optional(o, "wolfe_c1", c.wolfe_c1, what);
    json_util::read_optional(o, "wolfe_c2", c.wolfe_c2, what);
    json_util::read_optional(o, "max_line_search_steps", c.max_line_search_steps, what);
    c.validate();
    return c;
}

inline ExperimentSpec experiment_spec_from_json(const nlohmann::json& j) {
    constexpr std::string_view what = "experiment spec";
    json_util::require_known_keys(
        j, {"sim_config", "user_counts", "methods", "eval_users", "seeds", "hyper", "optimizer", "record_wall_time"},
        what);
    ExperimentSpec spec;
    if (j.contains("sim_config")) spec.sim_config = sim::sim_config_from_json(j.at("sim_config"));
    json_util::read_optional(j, "user_counts", spec.user_counts, what);
    json_util::read_optional(j, "methods", spec.methods, what);
    json_util::read_optional(j, "eval_users", spec.eval_users, what);
    json_util::read_optional(j, "seeds", spec.seeds, what);
    json_util::read_optional(j, "record_wall_time", spec.record_wall_time, what);
    if (j.contains("hyper")) {
        const auto& h = j.at("hyper");
        json_util::require_known_keys(h, {"alpha", "lambda", "clip_m"}, "hyper");
        json_util::read_optional(h, "alpha", spec.hyper.alpha, "hyper");
        json_util::read_optional(h, "lambda", spec.hyper.lambda, "hyper");
        if (h.contains("clip_m") && !h.at("clip_m").is_null()) {
            if (!h.at("clip_m").is_number()) throw ValidationError("clip_m must be a number or null");
            spec.hyper.clip_m = h.at("clip_m").get<double>();
        }
    }
    if (j.contains("optimizer")) spec.optimizer = lbfgs_config_from_json(j.at("optimizer"));
    spec.validate();
    return spec;
}

struct ResultRow {
    std::string method;
    std::size_t train_users = 0;
    std::uint64_t seed = 0;
    std::optional<double> ctr;  // absent when training failed
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t train_events = 0;
    double wall_time = 0.0;
    std::string note;  // not serialized

    friend bool operator==(const ResultRow& a, const ResultRow& b) {
        return std::tie(a.method, a.train_users, a.seed, a.ctr, a.ci_low, a.ci_high, a.train_events, a.wall_time) ==
               std::tie(b.method, b.train_users, b.seed, b.ctr, b.ci_low, b.ci_high, b.train_events, b.wall_time);
    }
};

/// Environment of one grid seed; shared by every training size under that seed.
inline sim::SimConfig cell_sim_config(const ExperimentSpec& spec, std::uint64_t seed) {
    sim::SimConfig c = spec.sim_config;
    c.seed = rng::derive(spec.sim_config.seed, rng::label("grid-seed"), seed);
    return c;
}

/// Builds the policy for `method` in one cell, training it when needed.
inline std::shared_ptr<const Policy> cell_policy(const std::string& method, const sim::Environment& env,
                                                 const objectives::TrainingSet& data, const ExperimentSpec& spec,
                                                 std::string& note) {
    if (method == "logging") return std::make_shared<PopularityPolicy>(env.n_items());
    if (method == "uniform") return std::make_shared<UniformPolicy>(env.n_items());
    if (method == "oracle") return std::make_shared<sim::OraclePolicy>(env);
    objectives::ObjectiveConfig cfg{*objectives::parse_method(method), spec.hyper.alpha, spec.hyper.lambda,
                                    spec.hyper.clip_m};
    auto fit = objectives::train(data, cfg, spec.optimizer);
    if (!fit.converged) note = fit.diagnostics;
    return fit.policy;
}

/// Trains and A/B-tests every method on every (training size, seed) cell.
/// Within a cell all methods share the training log and the evaluation users.
/// Rows come back sorted by (method, train_users, seed).
inline std::vector<ResultRow> run_experiment(const ExperimentSpec& spec, unsigned threads = 1) {
    spec.validate();
    struct Cell {
        std::size_t train_users;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (auto s : spec.seeds)
        for (auto u : spec.user_counts) cells.push_back({u, s});

    std::vector<std::vector<ResultRow>> per_cell(cells.size());
    parallel_for(cells.size(), threads, [&](std::size_t c) {
        const auto [users, seed] = cells[c];
        const sim::Environment env(cell_sim_config(spec, seed));
        const PopularityPolicy logging(env.n_items());
        const auto data = objectives::TrainingSet::from_log(sim::generate_logs(env, users, logging));
        for (const auto& method : spec.methods) {
            ResultRow row;
            row.method = method;
            row.train_users = users;
            row.seed = seed;
            row.train_events = data.size();
            const auto start = std::chrono::steady_clock::now();
            try {
                const auto policy = cell_policy(method, env, data, spec, row.note);
                const auto ab = sim::ab_test(env, *policy, spec.eval_users);
                row.ctr = ab.ctr;
                row.ci_low = ab.ci_low;
                row.ci_high = ab.ci_high;
            } catch (const std::exception& e) {
                row.note = e.what();
            }
            if (spec.record_wall_time)
                row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            per_cell[c].push_back(std::move(row));
        }
    });

    std::vector<ResultRow> rows;
    for (auto& v : per_cell)
        for (auto& r : v) rows.push_back(std::move(r));
    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        return std::tie(a.method, a.train_users, a.seed) < std::tie(b.method, b.train_users, b.seed);
    });
    return rows;
}

inline constexpr const char* kCsvHeader = "method,train_users,seed,ctr,ci_low,ci_high,train_events,wall_time";

inline void write_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
    out << kCsvHeader << '\n';
    for (const auto& r : rows) {
        out << r.method << ',' << r.train_users << ',' << r.seed << ',';
        if (r.ctr) out << format_double17(*r.ctr) << ',' << format_double17(r.ci_low) << ',' << format_double17(r.ci_high);
        else out << ",,";
        out << ',' << r.train_events << ',' << format_double17(r.wall_time) << '\n';
    }
}

inline std::vector<ResultRow> read_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || line != kCsvHeader) throw ParseError(1, "<header>", "unexpected CSV header");
    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != 8) throw ParseError(line_no, "<row>", "expected 8 columns");
        auto number = [&](const std::string& s, const char* field) {
            try {
                std::size_t used = 0;
                const double v = std::stod(s, &used);
                if (used != s.size()) throw std::invalid_argument(s);
                return v;
            } catch (const std::exception&) {
                throw ParseError(line_no, field, "not a number");
            }
        };
        ResultRow r;
        r.method = cells[0];
        r.train_users = static_cast<std::size_t>(number(cells[1], "train_users"));
        r.seed = std::stoull(cells[2]);
        if (!cells[3].empty()) {
            r.ctr = number(cells[3], "ctr");
            r.ci_low = number(cells[4], "ci_low");
            r.ci_high = number(cells[5], "ci_high");
        }
        r.train_events = static_cast<std::size_t>(number(cells[6], "train_events"));
        r.wall_time = number(cells[7], "wall_time");
        rows.push_back(std::move(r));
    }
    return rows;
}

namespace detail {

inline std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline const char* series_colour(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return palette[i % 10];
}

}  // namespace detail

/// Line chart of mean CTR against training users (log scale) per method, with
/// the mean 95% interval shaded. Output bytes depend only on the rows.
inline void write_svg(const std::vector<ResultRow>& rows, std::ostream& out) {
    if (rows.empty()) throw ValidationError("cannot plot an empty result set");
    struct Point {
        double ctr = 0.0, low = 0.0, high = 0.0;
        int count = 0;
    };
    std::map<std::string, std::map<std::size_t, Point>> series;
    std::vector<std::string> order;
    for (const auto& r : rows) {
        if (!series.count(r.method)) order.push_back(r.method);
        auto& p = series[r.method][r.train_users];
        if (!r.ctr) continue;
        p.ctr += *r.ctr;
        p.low += r.ci_low;
        p.high += r.ci_high;
        ++p.count;
    }
    std::sort(order.begin(), order.end());

    double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
    for (auto& [m, pts] : series)
        for (auto& [users, p] : pts) {
            x_min = std::min(x_min, std::log10(static_cast<double>(users)));
            x_max = std::max(x_max, std::log10(static_cast<double>(users)));
            if (p.count == 0) continue;
            p.ctr /= p.count;
            p.low /= p.count;
            p.high /= p.count;
            y_min = std::min(y_min, p.low);
            y_max = std::max(y_max, p.high);
        }
    if (y_min > y_max) y_min = 0.0, y_max = 1.0;
    if (x_max - x_min < 1e-12) x_min -= 0.5, x_max += 0.5;
    const double pad = std::max(1e-6, 0.05 * (y_max - y_min));
    y_min = std::max(0.0, y_min - pad);
    y_max += pad;

    const double width = 800, height = 500, left = 80, right = 160, top = 40, bottom = 60;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    auto px = [&](std::size_t users) {
        return left + (std::log10(static_cast<double>(users)) - x_min) / (x_max - x_min) * plot_w;
    };
    auto py = [&](double ctr) { return top + (1.0 - (ctr - y_min) / (y_max - y_min)) * plot_h; };
    using detail::fixed;

    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    out << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    out << "  <text x=\"" << left + plot_w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
        << "A/B test CTR by training set size</text>\n";
    out << "  <line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";
    out << "  <line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
        << "\" stroke=\"black\"/>\n";

    std::vector<std::size_t> ticks;
    for (const auto& [m, pts] : series)
        for (const auto& [users, p] : pts) ticks.push_back(users);
    std::sort(ticks.begin(), ticks.end());
    ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
    for (auto users : ticks) {
        out << "  <line x1=\"" << fixed(px(users), 2) << "\" y1=\"" << top + plot_h << "\" x2=\"" << fixed(px(users), 2)
            << "\" y2=\"" << top + plot_h + 5 << "\" stroke=\"black\"/>\n";
        out << "  <text x=\"" << fixed(px(users), 2) << "\" y=\"" << top + plot_h + 20
            << "\" text-anchor=\"middle\" font-size=\"12\">" << users << "</text>\n";
    }
    for (int k = 0; k <= 5; ++k) {
        const double v = y_min + (y_max - y_min) * k / 5.0;
        out << "  <line x1=\"" << left - 5 << "\" y1=\"" << fixed(py(v), 2) << "\" x2=\"" << left << "\" y2=\""
            << fixed(py(v), 2) << "\" stroke=\"black\"/>\n";
        out << "  <text x=\"" << left - 8 << "\" y=\"" << fixed(py(v) + 4, 2)
            << "\" text-anchor=\"end\" font-size=\"12\">" << fixed(v, 4) << "</text>\n";
    }
    out << "  <text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 15
        << "\" text-anchor=\"middle\" font-size=\"14\">training users</text>\n";
    out << "  <text x=\"20\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 20 "
        << top + plot_h / 2 << ")\">click-through rate</text>\n";

    for (std::size_t s = 0; s < order.size(); ++s) {
        const auto& pts = series[order[s]];
        const char* colour = detail::series_colour(s);
        std::string band, line;
        std::vector<std::pair<std::size_t, Point>> valid;
        for (const auto& [users, p] : pts)
            if (p.count > 0) valid.emplace_back(users, p);
        if (!valid.empty()) {
            for (const auto& [users, p] : valid) band += fixed(px(users), 2) + "," + fixed(py(p.high), 2) + " ";
            for (auto it = valid.rbegin(); it != valid.rend(); ++it)
                band += fixed(px(it->first), 2) + "," + fixed(py(it->second.low), 2) + " ";
            for (const auto& [users, p] : valid) line += fixed(px(users), 2) + "," + fixed(py(p.ctr), 2) + " ";
            band.pop_back();
            line.pop_back();
            out << "  <polygon points=\"" << band << "\" fill=\"" << colour << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
            out << "  <polyline points=\"" << line << "\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
        }
        const double ly = top + 10 + 20.0 * static_cast<double>(s);
        out << "  <line x1=\"" << left + plot_w + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + plot_w + 40 << "\" y2=\""
            << ly << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
        out << "  <text x=\"" << left + plot_w + 45 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">" << order[s]
            << "</text>\n";
    }
    out << "</svg>\n";
}

enum class Format { csv, svg };

inline void emit_results(const std::vector<ResultRow>& rows, Format format, const std::filesystem::path& destination) {
    std::ofstream out(destination, std::ios::binary);
    if (!out) throw IoError("cannot open " + destination.string() + " for writing");
    if (format == Format::csv)
        write_csv(rows, out);
    else
        write_svg(rows, out);
    if (!out) throw IoError("failed writing " + destination.string());
}

}  // namespace banditlearn::harness
