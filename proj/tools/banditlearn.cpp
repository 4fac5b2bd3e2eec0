// Command-line front end: simulate logs, train policies, evaluate them and run
// the full method comparison.
//
// Exit codes: 0 success, 1 I/O failure, 2 validation error, 3 optimizer failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "banditlearn/error.hpp"
#include "banditlearn/harness.hpp"
#include "banditlearn/log_io.hpp"
#include "banditlearn/objectives.hpp"
#include "banditlearn/ope.hpp"
#include "banditlearn/policy.hpp"
#include "banditlearn/sim.hpp"

namespace fs = std::filesystem;
using namespace banditlearn;
using nlohmann::json;

namespace {

constexpr int kExitIo = 1;
constexpr int kExitValidation = 2;
constexpr int kExitOptimizer = 3;

struct GlobalOptions {
    std::optional<std::uint64_t> seed;
    std::string config_path;
    std::string out;
    unsigned threads = 1;
};

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void write_json_file(const json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump() << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

sim::SimConfig load_sim_config(const GlobalOptions& g) {
    sim::SimConfig cfg;
    if (!g.config_path.empty()) cfg = sim::sim_config_from_json(read_json_file(g.config_path));
    if (g.seed) cfg.seed = *g.seed;
    return cfg;
}

void require_out(const GlobalOptions& g, const char* what) {
    if (g.out.empty()) throw ValidationError(std::string("--out is required for ") + what);
}

// ---- simulate -------------------------------------------------------------

struct SimulateOptions {
    long long users = -1;
    std::optional<std::size_t> items;
    std::string policy = "popularity";
    std::string logging_policy_out;
};

int cmd_simulate(const GlobalOptions& g, const SimulateOptions& o) {
    if (o.users <= 0) throw ValidationError("--users must be positive");
    require_out(g, "simulate");
    auto cfg = load_sim_config(g);
    if (o.items) cfg.n_items = *o.items;
    cfg.validate();
    const sim::Environment env(cfg);

    std::unique_ptr<Policy> logging;
    if (o.policy == "popularity")
        logging = std::make_unique<PopularityPolicy>(cfg.n_items);
    else if (o.policy == "uniform")
        logging = std::make_unique<UniformPolicy>(cfg.n_items);
    else
        throw ValidationError("unknown logging policy '" + o.policy + "'");

    const auto log = sim::generate_logs(env, static_cast<std::size_t>(o.users), *logging, g.threads);
    write_log(log, fs::path(g.out));
    if (!o.logging_policy_out.empty()) write_json_file(logging->to_json(), o.logging_policy_out);

    const auto bandit = log.num_bandit_events();
    const auto clicks = log.num_clicks();
    std::cout << json{{"users", log.users.size()},
                      {"organic_events", log.num_organic_events()},
                      {"bandit_events", bandit},
                      {"clicks", clicks},
                      {"empirical_ctr", bandit ? static_cast<double>(clicks) / static_cast<double>(bandit) : 0.0}}
                     .dump()
              << '\n';
    return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainOptions {
    std::string log;
    std::string method;
    std::optional<double> alpha, lambda, clip;
};

int cmd_train(const GlobalOptions& g, const TrainOptions& o) {
    objectives::ObjectiveConfig cfg;
    optim::LbfgsConfig opt;
    if (!g.config_path.empty()) {
        auto j = read_json_file(g.config_path);
        json_util::require_known_keys(j, {"method", "alpha", "lambda", "clip_m", "optimizer"}, "train config");
        if (j.contains("optimizer")) {
            opt = harness::lbfgs_config_from_json(j.at("optimizer"));
            j.erase("optimizer");
        }
        cfg = objectives::objective_config_from_json(j);
    }
    if (!o.method.empty()) {
        auto m = objectives::parse_method(o.method);
        if (!m) throw ValidationError("unknown method '" + o.method + "'");
        cfg.method = *m;
    } else if (g.config_path.empty()) {
        throw ValidationError("--method is required");
    }
    if (o.alpha) cfg.alpha = *o.alpha;
    if (o.lambda) cfg.lambda = *o.lambda;
    if (o.clip) cfg.clip_m = *o.clip;
    cfg.validate();
    require_out(g, "train");

    const auto data = objectives::TrainingSet::from_log(read_log(fs::path(o.log)));
    std::cerr << "training " << objectives::method_name(cfg.method) << " on " << data.size() << " bandit events\n";
    const auto fit = objectives::train(data, cfg, opt);

    json policy = fit.policy->to_json();
    if (fit.flagged) policy["flagged"] = true;
    write_json_file(policy, g.out);
    std::cout << json{{"method", objectives::method_name(cfg.method)},
                      {"value", fit.value},
                      {"grad_norm", fit.grad_norm},
                      {"iterations", fit.iterations},
                      {"converged", fit.converged},
                      {"flagged", fit.flagged},
                      {"stop_reason", fit.diagnostics}}
                     .dump()
              << '\n';
    if (fit.flagged) {
        std::cerr << "optimizer failure: " << fit.diagnostics << "; best iterate written\n";
        return kExitOptimizer;
    }
    return 0;
}

// ---- evaluate -------------------------------------------------------------

struct EvaluateOptions {
    std::string policy;
    bool ab = false;
    bool off_policy = false;
    long long users = 30000;
    std::string log;
    std::string estimator = "ips";
    std::size_t bootstrap_reps = 1000;
    std::optional<double> clip;
};

int cmd_evaluate(const GlobalOptions& g, const EvaluateOptions& o) {
    if (o.ab == o.off_policy) throw ValidationError("choose exactly one of --ab and --off-policy");
    const auto policy = policy_from_json(read_json_file(o.policy));
    json report;
    if (o.ab) {
        if (o.users <= 0) throw ValidationError("--users must be positive");
        const sim::Environment env(load_sim_config(g));
        if (policy->num_actions() != env.n_items()) throw ValidationError("policy and environment disagree on n_items");
        const auto r = sim::ab_test(env, *policy, static_cast<std::size_t>(o.users), g.threads);
        report = sim::to_json(r);
        report["users"] = o.users;
    } else {
        const auto estimator = ope::parse_estimator(o.estimator);
        if (!estimator) throw ValidationError("unknown estimator '" + o.estimator + "'");
        if (o.log.empty()) throw ValidationError("--log is required for --off-policy");
        const auto data = objectives::TrainingSet::from_log(read_log(fs::path(o.log)));
        if (*estimator == ope::Estimator::ips)
            report = ope::to_json(ope::ips_estimate(data, *policy, o.clip));
        else
            report = ope::to_json(ope::snips_estimate(data, *policy, o.bootstrap_reps, g.seed.value_or(0), g.threads));
    }
    std::cout << report.dump() << '\n';
    if (!g.out.empty()) write_json_file(report, g.out);
    return 0;
}

// ---- compare --------------------------------------------------------------

struct CompareOptions {
    std::string spec;
};

int cmd_compare(const GlobalOptions& g, const CompareOptions& o) {
    harness::ExperimentSpec spec;
    if (!o.spec.empty()) spec = harness::experiment_spec_from_json(read_json_file(o.spec));
    if (g.seed) spec.sim_config.seed = *g.seed;
    require_out(g, "compare");
    const fs::path dir(g.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    std::cerr << "running " << spec.methods.size() << " methods x " << spec.user_counts.size() << " sizes x "
              << spec.seeds.size() << " seeds\n";
    const auto rows = harness::run_experiment(spec, g.threads);
    std::size_t failures = 0;
    for (const auto& r : rows) {
        if (!r.ctr) ++failures;
        if (!r.note.empty())
            std::cerr << r.method << " users=" << r.train_users << " seed=" << r.seed << ": " << r.note << '\n';
    }
    harness::emit_results(rows, harness::Format::csv, dir / "results.csv");
    harness::emit_results(rows, harness::Format::svg, dir / "results.svg");
    std::cout << json{{"rows", rows.size()},
                      {"failed_rows", failures},
                      {"csv", (dir / "results.csv").string()},
                      {"svg", (dir / "results.svg").string()}}
                     .dump()
              << '\n';
    return failures == rows.size() ? kExitIo : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual learning from logged bandit feedback"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--seed", g.seed, "Random seed (overrides the config file)");
    app.add_option("--config", g.config_path, "JSON file overriding defaults");
    app.add_option("--out", g.out, "Output path");
    app.add_option("--threads", g.threads, "Worker threads, 0 = auto")->check(CLI::NonNegativeNumber);

    SimulateOptions sim_opts;
    auto* simulate = app.add_subcommand("simulate", "Generate a logged interaction file");
    simulate->add_option("--users", sim_opts.users, "Number of users")->required();
    simulate->add_option("--items", sim_opts.items, "Number of items");
    simulate->add_option("--policy", sim_opts.policy, "Logging policy: popularity or uniform");
    simulate->add_option("--logging-policy-out", sim_opts.logging_policy_out, "Also write the logging policy as JSON");

    TrainOptions train_opts;
    auto* train = app.add_subcommand("train", "Fit a policy on a logged interaction file");
    train->add_option("--log", train_opts.log, "Interaction log (JSON lines)")->required();
    train->add_option("--method", train_opts.method, "likelihood, ips-likelihood, cb, dual, poem or snips");
    train->add_option("--alpha", train_opts.alpha, "Dual bandit likelihood weight in [0,1]");
    train->add_option("--lambda", train_opts.lambda, "Variance penalty for poem and snips");
    train->add_option("--clip", train_opts.clip, "Importance-weight clipping constant for poem");

    EvaluateOptions eval_opts;
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a policy by simulated A/B test or off-policy");
    evaluate->add_option("--policy", eval_opts.policy, "Policy JSON")->required();
    evaluate->add_flag("--ab", eval_opts.ab, "Simulated A/B test on fresh users");
    evaluate->add_flag("--off-policy", eval_opts.off_policy, "Estimate from a logged file");
    evaluate->add_option("--users", eval_opts.users, "A/B test users");
    evaluate->add_option("--log", eval_opts.log, "Held-out log for off-policy evaluation");
    evaluate->add_option("--estimator", eval_opts.estimator, "ips or snips");
    evaluate->add_option("--bootstrap-reps", eval_opts.bootstrap_reps, "SNIPS bootstrap replicates");
    evaluate->add_option("--clip", eval_opts.clip, "IPS weight clipping constant");

    CompareOptions cmp_opts;
    auto* compare = app.add_subcommand("compare", "Train and A/B test every method over a grid");
    compare->add_option("--spec", cmp_opts.spec, "Experiment spec JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (*simulate) return cmd_simulate(g, sim_opts);
        if (*train) return cmd_train(g, train_opts);
        if (*evaluate) return cmd_evaluate(g, eval_opts);
        if (*compare) return cmd_compare(g, cmp_opts);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const LookupError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    }
    return kExitValidation;
}
