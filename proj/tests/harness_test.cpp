#include <random>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <gtest/gtest.h>

#include "banditlearn/harness.hpp"
#include "banditlearn/interval.hpp"
#include "test_util.hpp"

namespace banditlearn::harness {
namespace {

std::string csv_of(const std::vector<ResultRow>& rows) {
    std::ostringstream out;
    write_csv(rows, out);
    return out.str();
}

ExperimentSpec small_spec() {
    ExperimentSpec spec;
    spec.user_counts = {30, 60};
    spec.methods = {"likelihood", "cb", "logging", "oracle"};
    spec.seeds = {0, 1};
    spec.eval_users = 300;
    return spec;
}

TEST(ConfidenceInterval, Boundaries) {
    EXPECT_EQ(confidence_interval(0, 100).low, 0.0);
    EXPECT_GT(confidence_interval(0, 100).high, 0.0);
    EXPECT_EQ(confidence_interval(100, 100).high, 1.0);
    EXPECT_LT(confidence_interval(100, 100).low, 1.0);
    EXPECT_THROW(confidence_interval(0, 0), ValidationError);
    EXPECT_THROW(confidence_interval(5, 4), ValidationError);
    EXPECT_THROW(confidence_interval(1, 4, 1.0), ValidationError);
}

TEST(ConfidenceInterval, WilsonReferenceValues) {
    // Reference: statsmodels proportion_confint(50, 5000, method="wilson").
    const auto ci = confidence_interval(50, 5000);
    EXPECT_NEAR(ci.low, 0.007593772813946566, 1e-12);
    EXPECT_NEAR(ci.high, 0.01315857509220942, 1e-12);
    EXPECT_NEAR(normal_critical_value(0.95), 1.959963984540054, 1e-12);
}

TEST(ConfidenceInterval, ContainsPointEstimateAndNarrowsWithLevel) {
    for (std::uint64_t c : {1, 7, 50, 99}) {
        const auto ci = confidence_interval(c, 100);
        const double p = static_cast<double>(c) / 100.0;
        EXPECT_LE(ci.low, p);
        EXPECT_GE(ci.high, p);
        const auto narrow = confidence_interval(c, 100, 0.8);
        EXPECT_GE(narrow.low, ci.low);
        EXPECT_LE(narrow.high, ci.high);
    }
}

TEST(ConfidenceInterval, CoverageAtOnePercent) {
    Rng gen(2024);
    std::binomial_distribution<std::uint64_t> draw(10000, 0.01);
    int covered = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto ci = confidence_interval(draw(gen), 10000);
        covered += ci.low <= 0.01 && 0.01 <= ci.high;
    }
    EXPECT_GE(covered, 930);
    EXPECT_LE(covered, 970);
}

TEST(ExperimentSpec, Validation) {
    ExperimentSpec spec;
    EXPECT_NO_THROW(spec.validate());
    spec.user_counts = {500, 100};
    EXPECT_THROW(spec.validate(), ValidationError);
    spec = {};
    spec.methods = {"likelihood", "magic"};
    EXPECT_THROW(spec.validate(), ValidationError);
    spec = {};
    spec.eval_users = 0;
    EXPECT_THROW(spec.validate(), ValidationError);
}

TEST(ExperimentSpec, FromJson) {
    const auto spec = experiment_spec_from_json(nlohmann::json::parse(R"({
        "user_counts": [10, 20], "methods": ["dual", "oracle"], "eval_users": 50, "seeds": [7],
        "hyper": {"alpha": 0.25, "clip_m": 4}, "optimizer": {"max_iters": 20},
        "sim_config": {"n_items": 5}})"));
    EXPECT_EQ(spec.user_counts, (std::vector<std::size_t>{10, 20}));
    EXPECT_EQ(spec.methods, (std::vector<std::string>{"dual", "oracle"}));
    EXPECT_EQ(spec.eval_users, 50u);
    EXPECT_EQ(spec.seeds, (std::vector<std::uint64_t>{7}));
    EXPECT_EQ(spec.hyper.alpha, 0.25);
    EXPECT_EQ(spec.hyper.clip_m, 4.0);
    EXPECT_EQ(spec.optimizer.max_iters, 20u);
    EXPECT_EQ(spec.sim_config.n_items, 5u);
    EXPECT_THROW(experiment_spec_from_json({{"users", {1}}}), ValidationError);
    EXPECT_THROW(experiment_spec_from_json({{"hyper", {{"gamma", 1}}}}), ValidationError);
    EXPECT_THROW(experiment_spec_from_json({{"optimizer", {{"memory", 0}}}}), ValidationError);
}

TEST(RunExperiment, SingleLoggingCellMatchesTruth) {
    int covered = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ExperimentSpec spec;
        spec.user_counts = {100};
        spec.methods = {"logging"};
        spec.seeds = {seed};
        spec.eval_users = 2000;
        const auto rows = run_experiment(spec);
        ASSERT_EQ(rows.size(), 1u);
        const auto& r = rows.front();
        ASSERT_TRUE(r.ctr);
        EXPECT_EQ(r.train_events, 8000u);
        EXPECT_LE(r.ci_low, *r.ctr);
        EXPECT_LE(*r.ctr, r.ci_high);
        const sim::Environment env(cell_sim_config(spec, seed));
        const double truth = sim::true_ctr(env, PopularityPolicy(env.n_items()), 20000);
        covered += r.ci_low <= truth && truth <= r.ci_high;
    }
    EXPECT_GE(covered, 8);
}

TEST(RunExperiment, OracleDominatesUniformInEveryCell) {
    ExperimentSpec spec;
    spec.user_counts = {50, 100};
    spec.methods = {"uniform", "oracle"};
    spec.seeds = {0, 1, 2};
    spec.eval_users = 2000;
    const auto rows = run_experiment(spec);
    ASSERT_EQ(rows.size(), 12u);
    // Sorted by method: the six oracle rows precede the six uniform rows.
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(rows[i].method, "oracle");
        EXPECT_EQ(rows[i + 6].method, "uniform");
        EXPECT_EQ(rows[i].train_users, rows[i + 6].train_users);
        EXPECT_EQ(rows[i].seed, rows[i + 6].seed);
        EXPECT_GE(*rows[i].ctr, *rows[i + 6].ctr);
    }
}

TEST(RunExperiment, DeterministicAcrossRunsAndThreads) {
    const auto spec = small_spec();
    const auto a = csv_of(run_experiment(spec, 1));
    EXPECT_EQ(a, csv_of(run_experiment(spec, 1)));
    EXPECT_EQ(a, csv_of(run_experiment(spec, 4)));
}

TEST(RunExperiment, RowsSortedAndCardinal) {
    const auto spec = small_spec();
    const auto rows = run_experiment(spec);
    EXPECT_EQ(rows.size(), spec.methods.size() * spec.user_counts.size() * spec.seeds.size());
    for (std::size_t i = 1; i < rows.size(); ++i)
        EXPECT_LE(std::tie(rows[i - 1].method, rows[i - 1].train_users, rows[i - 1].seed),
                  std::tie(rows[i].method, rows[i].train_users, rows[i].seed));
}

TEST(RunExperiment, NonConvergenceIsNotedButKept) {
    ExperimentSpec spec = small_spec();
    spec.methods = {"likelihood", "logging"};
    spec.user_counts = {20};
    spec.seeds = {0};
    spec.optimizer.max_iters = 1;
    const auto rows = run_experiment(spec);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].method, "likelihood");
    EXPECT_TRUE(rows[0].ctr.has_value());
    EXPECT_EQ(rows[0].note, "maximum iterations reached");
    EXPECT_TRUE(rows[1].note.empty());
}

TEST(Csv, OneRowGivesTwoLines) {
    ResultRow r{"cb", 100, 0, 0.01, 0.009, 0.011, 8000, 0.0, ""};
    const auto text = csv_of({r});
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
    EXPECT_EQ(text.substr(0, text.find('\n')), kCsvHeader);
}

TEST(Csv, RoundTrip) {
    std::vector<ResultRow> rows{
        {"cb", 100, 0, 0.1 + 0.2, 1.0 / 3.0, 0.5, 8000, 0.0, ""},
        {"poem", 5000, 4, std::nullopt, 0.0, 0.0, 400000, 12.345678901234567, "failed"},
        {"oracle", 2000, 18446744073709551615ull, 1e-300, 0.0, 1.0, 0, 0.0, ""}};
    std::istringstream in(csv_of(rows));
    EXPECT_EQ(read_csv(in), rows);
}

TEST(Csv, RejectsMalformedInput) {
    std::istringstream bad_header("method,ctr\n");
    EXPECT_THROW(read_csv(bad_header), ParseError);
    std::istringstream short_row(std::string(kCsvHeader) + "\ncb,1,2\n");
    EXPECT_THROW(read_csv(short_row), ParseError);
    std::istringstream bad_number(std::string(kCsvHeader) + "\ncb,1,0,abc,0,0,0,0\n");
    EXPECT_THROW(read_csv(bad_number), ParseError);
}

TEST(Svg, WellFormedAndDeterministic) {
    const auto rows = run_experiment(small_spec());
    std::ostringstream a, b;
    write_svg(rows, a);
    write_svg(rows, b);
    EXPECT_EQ(a.str(), b.str());
    std::istringstream in(a.str());
    boost::property_tree::ptree tree;
    ASSERT_NO_THROW(boost::property_tree::read_xml(in, tree));
    EXPECT_EQ(tree.count("svg"), 1u);
    for (const auto& m : small_spec().methods) EXPECT_NE(a.str().find(">" + m + "<"), std::string::npos) << m;
    std::ostringstream empty;
    EXPECT_THROW(write_svg({}, empty), ValidationError);
}

TEST(Svg, FailedRowsAreSkipped) {
    std::vector<ResultRow> rows{{"cb", 100, 0, std::nullopt, 0, 0, 8000, 0, "x"},
                                {"cb", 500, 0, 0.01, 0.009, 0.011, 40000, 0, ""}};
    std::ostringstream out;
    write_svg(rows, out);
    std::istringstream in(out.str());
    boost::property_tree::ptree tree;
    EXPECT_NO_THROW(boost::property_tree::read_xml(in, tree));
}

TEST(EmitResults, WritesFilesAndReportsIoErrors) {
    testing::TempDir dir("emit");
    const std::vector<ResultRow> rows{{"cb", 100, 0, 0.01, 0.009, 0.011, 8000, 0.0, ""}};
    emit_results(rows, Format::csv, dir / "r.csv");
    emit_results(rows, Format::svg, dir / "r.svg");
    EXPECT_TRUE(std::filesystem::exists(dir / "r.csv"));
    EXPECT_GT(std::filesystem::file_size(dir / "r.svg"), 100u);
    EXPECT_THROW(emit_results(rows, Format::csv, dir / "missing" / "r.csv"), IoError);
}

}  // namespace
}  // namespace banditlearn::harness
