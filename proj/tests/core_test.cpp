#include <sstream>

#include <gtest/gtest.h>

#include "banditlearn/core.hpp"
#include "banditlearn/log_io.hpp"
#include "banditlearn/policy.hpp"
#include "banditlearn/sim.hpp"

namespace banditlearn {
namespace {

InteractionLog toy_log() {
    InteractionLog log;
    log.n_items = 3;
    UserTimeline u{7, {}};
    u.events.emplace_back(OrganicEvent{7, 0, 1});
    u.events.emplace_back(OrganicEvent{7, 1, 1});
    u.events.emplace_back(OrganicEvent{7, 2, 0});
    BanditEvent b;
    b.user_id = 7;
    b.t = 3;
    b.context = Context({1, 2, 0});
    b.action = Action{2};
    b.propensity = 0.25;
    b.click = 1;
    u.events.emplace_back(b);
    log.users.push_back(u);
    log.users.push_back(UserTimeline{9, {}});
    return log;
}

TEST(Core, ActionOneHot) {
    const auto v = Action{2}.one_hot(4);
    EXPECT_EQ(v, (std::vector<double>{0, 0, 1, 0}));
    EXPECT_THROW(Action{4}.one_hot(4), ValidationError);
}

TEST(ContextFromHistory, NoPriorOrganicEventsIsZero) {
    const auto log = toy_log();
    EXPECT_EQ(context_from_history(log, 7, 0).counts, (std::vector<std::uint32_t>{0, 0, 0}));
    EXPECT_EQ(context_from_history(log, 9, 0).counts, (std::vector<std::uint32_t>{0, 0, 0}));
}

TEST(ContextFromHistory, CountsViewsStrictlyBefore) {
    const auto log = toy_log();
    EXPECT_EQ(context_from_history(log, 7, 3).counts, (std::vector<std::uint32_t>{1, 2, 0}));
    EXPECT_EQ(context_from_history(log, 7, 2).counts, (std::vector<std::uint32_t>{0, 2, 0}));
}

TEST(ContextFromHistory, LookupErrors) {
    const auto log = toy_log();
    EXPECT_THROW(context_from_history(log, 8, 0), LookupError);
    EXPECT_THROW(context_from_history(log, 7, 5), LookupError);
    EXPECT_NO_THROW(context_from_history(log, 7, 4));
}

TEST(ContextFromHistory, ReplayMatchesStoredContextsOnSimulatorOutput) {
    sim::SimConfig cfg;
    cfg.bandit_events_per_user = 20;
    const sim::Environment env(cfg);
    const PopularityPolicy logging(cfg.n_items);
    const auto log = sim::generate_logs(env, 50, logging);
    std::size_t checked = 0;
    for (const auto& u : log.users)
        for (const auto& e : u.events)
            if (const auto* b = std::get_if<BanditEvent>(&e)) {
                ASSERT_EQ(context_from_history(log, u.user_id, b->t), b->context);
                ++checked;
            }
    EXPECT_EQ(checked, 50u * 20u);
}

TEST(LogIo, EmptyLogIsHeaderOnly) {
    InteractionLog log;
    log.n_items = 4;
    std::stringstream ss;
    write_log(log, ss);
    EXPECT_EQ(ss.str(), "{\"n_items\":4,\"format_version\":1}\n");
    const auto back = read_log(ss);
    EXPECT_EQ(back, log);
}

TEST(LogIo, OneOrganicOneBandit) {
    InteractionLog log;
    log.n_items = 3;
    UserTimeline u{0, {}};
    u.events.emplace_back(OrganicEvent{0, 0, 2});
    BanditEvent b;
    b.user_id = 0;
    b.t = 1;
    b.context = Context({0, 0, 1});
    b.action = Action{1};
    b.propensity = 1.0 / 3.0;
    b.click = 0;
    u.events.emplace_back(b);
    log.users.push_back(u);

    std::stringstream ss;
    write_log(log, ss);
    std::string line;
    std::size_t lines = 0;
    std::stringstream copy(ss.str());
    while (std::getline(copy, line)) ++lines;
    EXPECT_EQ(lines, 3u);  // header + 2 data lines
    EXPECT_NE(ss.str().find("\"propensity\":0.33333333333333331"), std::string::npos);
    EXPECT_EQ(read_log(ss), log);
}

TEST(LogIo, RejectsZeroPropensity) {
    std::stringstream ss(
        "{\"n_items\":2,\"format_version\":1}\n"
        "{\"type\":\"bandit\",\"user_id\":0,\"t\":0,\"context\":[0,0],\"action\":0,\"propensity\":0,\"click\":0}\n");
    EXPECT_THROW(read_log(ss), ValidationError);
}

TEST(LogIo, MalformedLineNamesLineAndField) {
    std::stringstream ss(
        "{\"n_items\":2,\"format_version\":1}\n"
        "{\"type\":\"organic\",\"user_id\":0,\"t\":0,\"item\":1}\n"
        "{\"type\":\"organic\",\"user_id\":0,\"t\":1,\"item\":\"x\"}\n");
    try {
        read_log(ss);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_EQ(e.field(), "item");
    }
}

TEST(LogIo, RejectsNonIncreasingTimeAndBadJson) {
    std::stringstream dup(
        "{\"n_items\":2,\"format_version\":1}\n"
        "{\"type\":\"organic\",\"user_id\":0,\"t\":1,\"item\":1}\n"
        "{\"type\":\"organic\",\"user_id\":0,\"t\":1,\"item\":0}\n");
    EXPECT_THROW(read_log(dup), ParseError);
    std::stringstream junk("{\"n_items\":2,\"format_version\":1}\nnot json\n");
    EXPECT_THROW(read_log(junk), ParseError);
    std::stringstream empty("");
    EXPECT_THROW(read_log(empty), ParseError);
}

// Property: write/read is the identity on arbitrary valid logs.
TEST(LogIo, RoundTripRandomLogs) {
    Rng gen(1234);
    for (int trial = 0; trial < 50; ++trial) {
        InteractionLog log;
        log.n_items = 2 + gen() % 6;
        const std::size_t users = gen() % 5;
        for (std::size_t u = 0; u < users; ++u) {
            UserTimeline tl{u * 3 + gen() % 3, {}};
            std::uint64_t t = gen() % 2;
            const std::size_t events = 1 + gen() % 8;  // users without events are not representable
            for (std::size_t e = 0; e < events; ++e, t += 1 + gen() % 3) {
                if (gen() % 2) {
                    tl.events.emplace_back(OrganicEvent{tl.user_id, t, static_cast<std::uint32_t>(gen() % log.n_items)});
                } else {
                    BanditEvent b;
                    b.user_id = tl.user_id;
                    b.t = t;
                    b.context.counts.resize(log.n_items);
                    for (auto& c : b.context.counts) c = gen() % 50;
                    b.action.id = static_cast<std::uint32_t>(gen() % log.n_items);
                    b.propensity = 1.0 - rng::uniform01(gen);  // (0, 1]
                    b.click = gen() % 2;
                    tl.events.emplace_back(b);
                }
            }
            log.users.push_back(tl);
        }
        std::stringstream ss;
        write_log(log, ss);
        ASSERT_EQ(read_log(ss), log) << "trial " << trial;
    }
}

}  // namespace
}  // namespace banditlearn
