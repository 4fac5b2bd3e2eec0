#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "banditlearn/error.hpp"

namespace banditlearn {

/// Per-user organic view counts, one entry per item.
struct Context {
    std::vector<std::uint32_t> counts;

    Context() = default;
    explicit Context(std::size_t n_items) : counts(n_items, 0) {}
    explicit Context(std::vector<std::uint32_t> c) : counts(std::move(c)) {}

    std::size_t size() const noexcept { return counts.size(); }

    std::vector<double> features() const { return {counts.begin(), counts.end()}; }

    friend bool operator==(const Context&, const Context&) = default;
};

struct Action {
    std::uint32_t id = 0;

    std::vector<double> one_hot(std::size_t n_items) const {
        if (id >= n_items) throw ValidationError("action id out of range");
        std::vector<double> v(n_items, 0.0);
        v[id] = 1.0;
        return v;
    }

    friend bool operator==(const Action&, const Action&) = default;
};

struct OrganicEvent {
    std::uint64_t user_id = 0;
    std::uint64_t t = 0;
    std::uint32_t item = 0;

    friend bool operator==(const OrganicEvent&, const OrganicEvent&) = default;
};

struct BanditEvent {
    std::uint64_t user_id = 0;
    std::uint64_t t = 0;
    Context context;
    Action action;
    double propensity = 1.0;
    std::uint8_t click = 0;

    friend bool operator==(const BanditEvent&, const BanditEvent&) = default;
};

using Event = std::variant<OrganicEvent, BanditEvent>;

inline std::uint64_t event_user(const Event& e) {
    return std::visit([](const auto& ev) { return ev.user_id; }, e);
}

inline std::uint64_t event_time(const Event& e) {
    return std::visit([](const auto& ev) { return ev.t; }, e);
}

/// All events of one user, ordered by strictly increasing t.
struct UserTimeline {
    std::uint64_t user_id = 0;
    std::vector<Event> events;

    friend bool operator==(const UserTimeline&, const UserTimeline&) = default;
};

/// Users appear in ascending user_id order.
struct InteractionLog {
    std::size_t n_items = 0;
    std::vector<UserTimeline> users;

    std::size_t num_bandit_events() const {
        std::size_t k = 0;
        for (const auto& u : users)
            for (const auto& e : u.events) k += std::holds_alternative<BanditEvent>(e);
        return k;
    }

    std::size_t num_organic_events() const {
        std::size_t k = 0;
        for (const auto& u : users)
            for (const auto& e : u.events) k += std::holds_alternative<OrganicEvent>(e);
        return k;
    }

    std::size_t num_clicks() const {
        std::size_t k = 0;
        for (const auto& u : users)
            for (const auto& e : u.events)
                if (const auto* b = std::get_if<BanditEvent>(&e)) k += b->click;
        return k;
    }

    const UserTimeline& user(std::uint64_t user_id) const {
        auto it = std::lower_bound(users.begin(), users.end(), user_id,
                                   [](const UserTimeline& u, std::uint64_t id) { return u.user_id < id; });
        if (it == users.end() || it->user_id != user_id)
            throw LookupError("unknown user " + std::to_string(user_id));
        return *it;
    }

    friend bool operator==(const InteractionLog&, const InteractionLog&) = default;
};

/// Counts of the user's organic views with event index strictly below t.
/// Valid t ranges over [0, last event index + 1].
inline Context context_from_history(const InteractionLog& log, std::uint64_t user_id, std::uint64_t t) {
    const UserTimeline& timeline = log.user(user_id);
    const std::uint64_t end = timeline.events.empty() ? 0 : event_time(timeline.events.back()) + 1;
    if (t > end)
        throw LookupError("event index " + std::to_string(t) + " out of range for user " +
                          std::to_string(user_id));
    Context ctx(log.n_items);
    for (const auto& e : timeline.events) {
        if (event_time(e) >= t) break;
        if (const auto* o = std::get_if<OrganicEvent>(&e)) ++ctx.counts.at(o->item);
    }
    return ctx;
}

/// Checks ordering and ranges of a log; throws ValidationError on the first violation.
inline void validate_log(const InteractionLog& log) {
    const std::size_t n = log.n_items;
    for (std::size_t ui = 0; ui < log.users.size(); ++ui) {
        const auto& u = log.users[ui];
        if (ui > 0 && log.users[ui - 1].user_id >= u.user_id)
            throw ValidationError("users not in ascending id order");
        bool first = true;
        std::uint64_t prev = 0;
        for (const auto& e : u.events) {
            if (event_user(e) != u.user_id) throw ValidationError("event filed under wrong user");
            const auto t = event_time(e);
            if (!first && t <= prev)
                throw ValidationError("event index not strictly increasing for user " + std::to_string(u.user_id));
            first = false;
            prev = t;
            if (const auto* o = std::get_if<OrganicEvent>(&e)) {
                if (o->item >= n) throw ValidationError("organic item out of range");
            } else {
                const auto& b = std::get<BanditEvent>(e);
                if (b.action.id >= n) throw ValidationError("action out of range");
                if (b.context.size() != n) throw ValidationError("context length mismatch");
                if (!(b.propensity > 0.0 && b.propensity <= 1.0))
                    throw ValidationError("propensity outside (0,1]");
                if (b.click > 1) throw ValidationError("click must be 0 or 1");
            }
        }
    }
}

}  // namespace banditlearn
