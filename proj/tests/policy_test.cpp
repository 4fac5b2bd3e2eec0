#include <cmath>

#include <gtest/gtest.h>

#include "banditlearn/policy.hpp"
#include "test_util.hpp"

namespace banditlearn {
namespace {

TEST(LinearSoftmax, ZeroThetaIsUniform) {
    LinearSoftmaxPolicy pi(4, std::vector<double>(16, 0.0));
    const auto p = pi.action_probs(std::vector<double>{1, 2, 0, 5});
    for (double v : p) EXPECT_DOUBLE_EQ(v, 0.25);
    const auto lp = pi.log_action_probs(std::vector<double>{1, 2, 0, 5});
    for (double v : lp) EXPECT_NEAR(v, std::log(0.25), 1e-15);
}

TEST(LinearSoftmax, HandComputedTwoActions) {
    LinearSoftmaxPolicy pi(2, {std::log(2.0), 0.0, 0.0, 0.0});
    const auto p = pi.action_probs(std::vector<double>{1, 0});
    EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(LinearSoftmax, ExtremeScoresStayFinite) {
    // scores (1000, 0)
    LinearSoftmaxPolicy pi(2, {1000.0, 0.0, 0.0, 0.0});
    const auto lp = pi.log_action_probs(std::vector<double>{1, 0});
    ASSERT_TRUE(std::isfinite(lp[0]) && std::isfinite(lp[1]));
    EXPECT_NEAR(lp[0], 0.0, 1e-12);
    EXPECT_NEAR(lp[1], -1000.0, 1e-9);
    const auto p = pi.action_probs(std::vector<double>{1, 0});
    EXPECT_EQ(p[0], 1.0);
}

TEST(LinearSoftmax, GreedyIsPointMassWithLowestIdTies) {
    LinearSoftmaxPolicy pi(3, std::vector<double>(9, 0.0), PolicyMode::greedy);
    const auto p = pi.action_probs(std::vector<double>{1, 1, 1});
    EXPECT_EQ(p, (std::vector<double>{1, 0, 0}));
    Rng gen(1);
    for (int i = 0; i < 20; ++i) {
        const auto s = sample_action(pi, std::vector<double>{1, 1, 1}, gen);
        EXPECT_EQ(s.action.id, 0u);
        EXPECT_EQ(s.propensity, 1.0);
    }
}

TEST(Policy, DimensionMismatchThrows) {
    LinearSoftmaxPolicy pi(3, std::vector<double>(9, 0.0));
    EXPECT_THROW(pi.action_probs(std::vector<double>{1, 2}), ValidationError);
    EXPECT_THROW(LinearSoftmaxPolicy(3, std::vector<double>(8, 0.0)), ValidationError);
    PopularityPolicy pop(3);
    EXPECT_THROW(pop.action_probs(std::vector<double>{1, 2}), ValidationError);
}

TEST(Popularity, SmoothedCounts) {
    PopularityPolicy pop(3, 1.0);
    const auto p = pop.action_probs(std::vector<double>{3, 0, 1});
    EXPECT_NEAR(p[0], 4.0 / 7.0, 1e-15);
    EXPECT_NEAR(p[1], 1.0 / 7.0, 1e-15);
    EXPECT_NEAR(p[2], 2.0 / 7.0, 1e-15);
}

TEST(Uniform, PropensityIsOneTenth) {
    UniformPolicy uni(10);
    Rng gen(3);
    const std::vector<double> x(10, 2.0);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_action(uni, x, gen).propensity, 0.1);
}

TEST(SampleAction, FrequenciesMatchDistribution) {
    LinearSoftmaxPolicy pi(2, {std::log(2.0), 0.0, 0.0, 0.0});
    const std::vector<double> x{1, 0};
    Rng gen(99);
    const int draws = 100000;
    int first = 0;
    for (int i = 0; i < draws; ++i) {
        const auto s = sample_action(pi, x, gen);
        first += s.action.id == 0;
        ASSERT_EQ(s.propensity, pi.action_probs(x)[s.action.id]);
    }
    const double p = 2.0 / 3.0;
    const double sigma = std::sqrt(draws * p * (1 - p));
    EXPECT_LE(std::abs(first - draws * p), 3.0 * sigma);
}

// Properties over random parameters and contexts.
TEST(PolicyProperties, ProbabilitiesSumToOneAndLogsAgree) {
    Rng gen(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + gen() % 9;
        const auto theta = testing::random_params(n * n, gen(), 3.0);
        std::vector<double> x(n);
        for (auto& v : x) v = static_cast<double>(gen() % 20);
        LinearSoftmaxPolicy soft(n, theta);
        PopularityPolicy pop(n, 0.5 + rng::uniform01(gen));
        UniformPolicy uni(n);
        CtrModelPolicy ctr(n, theta);
        for (const Policy* p : std::initializer_list<const Policy*>{&soft, &pop, &uni, &ctr}) {
            const auto probs = p->action_probs(x);
            double sum = 0.0;
            for (double v : probs) sum += v;
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
        const auto probs = soft.action_probs(x);
        const auto logs = soft.log_action_probs(x);
        for (std::size_t a = 0; a < n; ++a) {
            EXPECT_GT(probs[a], 0.0);
            EXPECT_NEAR(std::exp(logs[a]), probs[a], 1e-12);
        }
    }
}

TEST(PolicyProperties, GreedyActionInvariantToShiftAndScale) {
    Rng gen(8);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + gen() % 6;
        auto theta = testing::random_params(n * n, gen());
        std::vector<double> x(n);
        for (auto& v : x) v = 1.0 + static_cast<double>(gen() % 10);
        const auto base = LinearSoftmaxPolicy(n, theta, PolicyMode::greedy).action_probs(x);

        auto scaled = theta;
        for (auto& v : scaled) v *= 3.7;
        EXPECT_EQ(LinearSoftmaxPolicy(n, scaled, PolicyMode::greedy).action_probs(x), base);

        // Adding c to every entry of row j shifts all scores by c * x_j.
        auto shifted = theta;
        for (std::size_t a = 0; a < n; ++a) shifted[0 * n + a] += 0.25;
        EXPECT_EQ(LinearSoftmaxPolicy(n, shifted, PolicyMode::greedy).action_probs(x), base);
    }
}

TEST(CtrModel, ChoosesArgmaxPredictedClickProbability) {
    Rng gen(11);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + gen() % 6;
        const auto beta = testing::random_params(n * n, gen());
        CtrModelPolicy ctr(n, beta);
        std::vector<double> x(n);
        for (auto& v : x) v = static_cast<double>(gen() % 10);
        std::size_t best = 0;
        for (std::size_t a = 1; a < n; ++a)
            if (ctr.click_probability(x, a) > ctr.click_probability(x, best)) best = a;
        EXPECT_EQ(ctr.best_action(x), best);
        EXPECT_EQ(ctr.action_probs(x)[best], 1.0);
    }
}

TEST(PolicyJson, RoundTripsEveryKind) {
    const auto theta = testing::random_params(9, 4);
    LinearSoftmaxPolicy soft(3, theta, PolicyMode::greedy);
    CtrModelPolicy ctr(3, theta);
    PopularityPolicy pop(3, 2.0);
    UniformPolicy uni(3);
    const std::vector<double> x{1, 4, 2};
    for (const Policy* p : std::initializer_list<const Policy*>{&soft, &ctr, &pop, &uni}) {
        const auto back = policy_from_json(nlohmann::json::parse(p->to_json().dump()));
        EXPECT_EQ(back->to_json(), p->to_json());
        EXPECT_EQ(back->action_probs(x), p->action_probs(x));
    }
    EXPECT_THROW(policy_from_json({{"kind", "nope"}, {"n_items", 3}}), ValidationError);
    EXPECT_THROW(policy_from_json({{"kind", "linear_softmax"}, {"n_items", 3}, {"theta", {1, 2}}}), ValidationError);
}

}  // namespace
}  // namespace banditlearn
