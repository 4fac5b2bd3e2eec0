#pragma once

// Low-rank recommender environment.
//
// Each user has a latent vector w ~ N(0, I_K). Organic views are drawn from
// softmax(Gamma w); a recommendation of item a is clicked with probability
// sigmoid(click_scale * Psi_a . w + click_offset). Psi is a mix of Gamma and
// fresh noise, Psi = rho Gamma + sqrt(1 - rho^2) Z, so organic behaviour is
// informative about, but not identical to, click affinity.
//
// A user's timeline is one organic session of geometric length followed by a
// fixed number of recommendation slots, each preceded by one extra organic view
// with probability 1/2. Each user draws from three independent substreams
// keyed by (env seed, population, user id): one for the latent state and
// organic views, one for action sampling and one for click draws. Organic
// behaviour therefore never depends on the policy being deployed, and two
// policies evaluated on the same population see the same users and the same
// click noise.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "banditlearn/core.hpp"
#include "banditlearn/error.hpp"
#include "banditlearn/interval.hpp"
#include "banditlearn/json_util.hpp"
#include "banditlearn/parallel.hpp"
#include "banditlearn/policy.hpp"
#include "banditlearn/rng.hpp"

namespace banditlearn::sim {

struct SimConfig {
    std::size_t n_items = 10;
    std::size_t latent_dim = 5;
    double organic_len_mean = 20.0;
    std::size_t bandit_events_per_user = 80;
    double click_scale = 2.0;
    // Correlation between an item's organic and click embeddings.
    double embedding_correlation = 0.5;
    // Calibrated by bisection so the popularity logging policy clicks at ~1%
    // on the default environment (see calibrate_click_offset).
    double click_offset = -6.7343;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_items < 2) throw ValidationError("n_items must be at least 2");
        if (latent_dim < 1) throw ValidationError("latent_dim must be at least 1");
        if (!(organic_len_mean > 0.0) || !std::isfinite(organic_len_mean))
            throw ValidationError("organic_len_mean must be positive");
        if (bandit_events_per_user < 1) throw ValidationError("bandit_events_per_user must be at least 1");
        if (!(click_scale >= 0.0) || !std::isfinite(click_scale))
            throw ValidationError("click_scale must be non-negative");
        if (!std::isfinite(click_offset)) throw ValidationError("click_offset must be finite");
        if (!(embedding_correlation >= -1.0 && embedding_correlation <= 1.0))
            throw ValidationError("embedding_correlation must lie in [-1,1]");
    }

    friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

inline nlohmann::json to_json(const SimConfig& c) {
    return {{"n_items", c.n_items},
            {"latent_dim", c.latent_dim},
            {"organic_len_mean", c.organic_len_mean},
            {"bandit_events_per_user", c.bandit_events_per_user},
            {"click_scale", c.click_scale},
            {"click_offset", c.click_offset},
            {"embedding_correlation", c.embedding_correlation},
            {"seed", c.seed}};
}

/// Every key is optional; missing keys keep their defaults.
inline SimConfig sim_config_from_json(const nlohmann::json& j, SimConfig base = {}) {
    constexpr std::string_view what = "sim config";
    json_util::require_known_keys(j,
                                  {"n_items", "latent_dim", "organic_len_mean", "bandit_events_per_user",
                                   "click_scale", "click_offset", "embedding_correlation", "seed"},
                                  what);
    json_util::read_optional(j, "n_items", base.n_items, what);
    json_util::read_optional(j, "latent_dim", base.latent_dim, what);
    json_util::read_optional(j, "organic_len_mean", base.organic_len_mean, what);
    json_util::read_optional(j, "bandit_events_per_user", base.bandit_events_per_user, what);
    json_util::read_optional(j, "click_scale", base.click_scale, what);
    json_util::read_optional(j, "click_offset", base.click_offset, what);
    json_util::read_optional(j, "embedding_correlation", base.embedding_correlation, what);
    json_util::read_optional(j, "seed", base.seed, what);
    base.validate();
    return base;
}

/// Population keys separate training users from evaluation users.
inline constexpr std::uint64_t kTrainingPopulation = rng::label("train");
inline constexpr std::uint64_t kEvaluationPopulation = rng::label("ab-test");
inline constexpr std::uint64_t kMonteCarloPopulation = rng::label("true-ctr");

/// Immutable once built.
class Environment {
public:
    explicit Environment(SimConfig config) : config_(config) {
        config_.validate();
        const std::size_t n = config_.n_items, k = config_.latent_dim;
        auto gen = rng::substream(config_.seed, rng::label("environment"));
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(k)));
        organic_.resize(n * k);
        click_.resize(n * k);
        for (double& v : organic_) v = normal(gen);
        const double rho = config_.embedding_correlation;
        const double rest = std::sqrt(1.0 - rho * rho);
        for (std::size_t i = 0; i < click_.size(); ++i) click_[i] = rho * organic_[i] + rest * normal(gen);
    }

    const SimConfig& config() const noexcept { return config_; }
    std::size_t n_items() const noexcept { return config_.n_items; }
    std::size_t latent_dim() const noexcept { return config_.latent_dim; }

    /// Gamma, n x K row-major.
    std::span<const double> item_organic_embeddings() const noexcept { return organic_; }
    /// Psi, n x K row-major.
    std::span<const double> item_click_embeddings() const noexcept { return click_; }

    /// Psi_a . w for every item.
    void click_affinity(std::span<const double> latent, std::span<double> out) const {
        const std::size_t k = config_.latent_dim;
        for (std::size_t a = 0; a < config_.n_items; ++a) {
            double s = 0.0;
            for (std::size_t d = 0; d < k; ++d) s += click_[a * k + d] * latent[d];
            out[a] = s;
        }
    }

    double click_probability(double affinity) const {
        return 1.0 / (1.0 + std::exp(-(config_.click_scale * affinity + config_.click_offset)));
    }

    /// Cumulative distribution of softmax(Gamma w).
    void organic_cdf(std::span<const double> latent, std::span<double> out) const {
        const std::size_t k = config_.latent_dim, n = config_.n_items;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t d = 0; d < k; ++d) s += organic_[i * k + d] * latent[d];
            out[i] = s;
            m = std::max(m, s);
        }
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += (out[i] = std::exp(out[i] - m));
        double cum = 0.0;
        for (std::size_t i = 0; i < n; ++i) out[i] = (cum += out[i] / total);
        out[n - 1] = 1.0;
    }

private:
    SimConfig config_;
    std::vector<double> organic_;
    std::vector<double> click_;
};

inline Environment init_environment(const SimConfig& config) { return Environment(config); }

/// Greedy on the true click model; needs the user's latent state, so it only
/// acts inside the simulator.
class OraclePolicy final : public Policy {
public:
    using Policy::action_probs;

    explicit OraclePolicy(const Environment& env) : env_(&env) {}

    std::size_t num_actions() const override { return env_->n_items(); }

    void action_probs(std::span<const double>, std::span<double>) const override {
        throw ValidationError("oracle policy can only act inside the simulator");
    }

    void action_probs_for_user(std::span<const double> x, std::span<const double> latent,
                               std::span<double> out) const override {
        detail::check_dims(env_->n_items(), x, out);
        env_->click_affinity(latent, out);
        const auto best = detail::argmax(out);
        std::fill(out.begin(), out.end(), 0.0);
        out[best] = 1.0;
    }

    nlohmann::json to_json() const override { return {{"kind", "oracle"}, {"n_items", env_->n_items()}}; }

private:
    const Environment* env_;
};

namespace detail {

inline std::size_t draw_from_cdf(std::span<const double> cdf, Rng& g) {
    const double u = rng::uniform01(g);
    for (std::size_t i = 0; i < cdf.size(); ++i)
        if (u < cdf[i]) return i;
    return cdf.size() - 1;
}

/// Walks one user's timeline. on_organic(t, item) fires for each organic view;
/// on_slot(t, features, latent) fires at each recommendation slot with the
/// counts accumulated strictly before it.
template <class OnOrganic, class OnSlot>
void walk_user(const Environment& env, std::uint64_t population, std::uint64_t user_id, OnOrganic&& on_organic,
               OnSlot&& on_slot) {
    const auto& cfg = env.config();
    const std::size_t n = cfg.n_items;
    auto gen = rng::substream(cfg.seed ^ population, rng::label("organic"), user_id);

    std::vector<double> latent(cfg.latent_dim);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : latent) v = normal(gen);

    std::vector<double> cdf(n);
    env.organic_cdf(latent, cdf);
    std::vector<double> counts(n, 0.0);
    std::uint64_t t = 0;

    auto view = [&] {
        const auto item = draw_from_cdf(cdf, gen);
        counts[item] += 1.0;
        on_organic(t++, static_cast<std::uint32_t>(item));
    };

    std::geometric_distribution<std::uint32_t> session(1.0 / (cfg.organic_len_mean + 1.0));
    const auto length = session(gen);
    for (std::uint32_t i = 0; i < length; ++i) view();

    for (std::size_t slot = 0; slot < cfg.bandit_events_per_user; ++slot) {
        if (rng::uniform01(gen) < 0.5) view();
        on_slot(t++, std::span<const double>(counts), std::span<const double>(latent));
    }
}

}  // namespace detail

/// One user's timeline with `logging_policy` choosing the recommendations.
inline UserTimeline simulate_user(const Environment& env, const Policy& logging_policy, std::uint64_t user_id,
                                  std::uint64_t population = kTrainingPopulation) {
    const std::size_t n = env.n_items();
    if (logging_policy.num_actions() != n) throw ValidationError("policy and environment disagree on n_items");
    auto action_gen = rng::substream(env.config().seed ^ population, rng::label("action"), user_id);
    auto click_gen = rng::substream(env.config().seed ^ population, rng::label("click"), user_id);

    UserTimeline timeline{user_id, {}};
    std::vector<double> probs(n), affinity(n);
    detail::walk_user(
        env, population, user_id,
        [&](std::uint64_t t, std::uint32_t item) { timeline.events.emplace_back(OrganicEvent{user_id, t, item}); },
        [&](std::uint64_t t, std::span<const double> x, std::span<const double> latent) {
            logging_policy.action_probs_for_user(x, latent, probs);
            const auto [action, propensity] = sample_from(probs, action_gen);
            env.click_affinity(latent, affinity);
            const double p_click = env.click_probability(affinity[action.id]);
            BanditEvent b;
            b.user_id = user_id;
            b.t = t;
            b.context.counts.assign(x.begin(), x.end());
            b.action = action;
            b.propensity = propensity;
            b.click = rng::uniform01(click_gen) < p_click ? 1 : 0;
            timeline.events.emplace_back(std::move(b));
        });
    return timeline;
}

/// Users 0..num_users-1, each simulated from its own substream; the result is
/// identical for any thread count.
inline InteractionLog generate_logs(const Environment& env, std::size_t num_users, const Policy& logging_policy,
                                    unsigned threads = 1, std::uint64_t population = kTrainingPopulation) {
    InteractionLog log;
    log.n_items = env.n_items();
    log.users.resize(num_users);
    parallel_for(num_users, threads, [&](std::size_t u) {
        log.users[u] = simulate_user(env, logging_policy, static_cast<std::uint64_t>(u), population);
    });
    return log;
}

struct CtrEstimate {
    double value;
    double std_error;
};

/// Expected click probability of `policy` over fresh users, averaging the
/// analytic click model over the policy's action distribution at every slot.
/// std_error is the Monte-Carlo error across users.
inline CtrEstimate true_ctr_estimate(const Environment& env, const Policy& policy, std::size_t num_users_mc,
                                     unsigned threads = 1, std::uint64_t population = kMonteCarloPopulation) {
    if (num_users_mc == 0) throw ValidationError("true_ctr needs at least one user");
    const std::size_t n = env.n_items();
    if (policy.num_actions() != n) throw ValidationError("policy and environment disagree on n_items");
    std::vector<double> per_user(num_users_mc);
    parallel_for(num_users_mc, threads, [&](std::size_t u) {
        std::vector<double> probs(n), affinity(n);
        double sum = 0.0;
        detail::walk_user(
            env, population, u, [](std::uint64_t, std::uint32_t) {},
            [&](std::uint64_t, std::span<const double> x, std::span<const double> latent) {
                policy.action_probs_for_user(x, latent, probs);
                env.click_affinity(latent, affinity);
                double expected = 0.0;
                for (std::size_t a = 0; a < n; ++a)
                    if (probs[a] > 0.0) expected += probs[a] * env.click_probability(affinity[a]);
                sum += expected;
            });
        per_user[u] = sum / static_cast<double>(env.config().bandit_events_per_user);
    });
    double mean = 0.0;
    for (double v : per_user) mean += v;
    mean /= static_cast<double>(num_users_mc);
    double ss = 0.0;
    for (double v : per_user) ss += (v - mean) * (v - mean);
    const double m = static_cast<double>(num_users_mc);
    const double se = num_users_mc > 1 ? std::sqrt(ss / (m - 1.0) / m) : 0.0;
    return {mean, se};
}

inline double true_ctr(const Environment& env, const Policy& policy, std::size_t num_users_mc, unsigned threads = 1) {
    return true_ctr_estimate(env, policy, num_users_mc, threads).value;
}

struct AbResult {
    double ctr = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::uint64_t impressions = 0;
    std::uint64_t clicks = 0;
    // Variance inflation from clicks sharing a user; the interval uses
    // impressions / design_effect trials.
    double design_effect = 1.0;
};

inline nlohmann::json to_json(const AbResult& r) {
    return {{"ctr", r.ctr}, {"ci_low", r.ci_low}, {"ci_high", r.ci_high}, {"impressions", r.impressions},
            {"clicks", r.clicks}, {"design_effect", r.design_effect}};
}

/// Deploys `policy` at every slot for `num_users` fresh users and measures the
/// realised click-through rate with a 95% Wilson interval. A user's clicks are
/// correlated through their latent state, so the interval is taken at the
/// effective sample size impressions / design_effect, where the design effect
/// compares the spread of per-user click counts with the binomial spread.
inline AbResult ab_test(const Environment& env, const Policy& policy, std::size_t num_users, unsigned threads = 1,
                        std::uint64_t population = kEvaluationPopulation) {
    if (num_users == 0) throw ValidationError("A/B test needs at least one user");
    const std::size_t n = env.n_items();
    if (policy.num_actions() != n) throw ValidationError("policy and environment disagree on n_items");
    std::vector<std::uint64_t> clicks(num_users);
    parallel_for(num_users, threads, [&](std::size_t u) {
        auto action_gen = rng::substream(env.config().seed ^ population, rng::label("action"), u);
        auto click_gen = rng::substream(env.config().seed ^ population, rng::label("click"), u);
        std::vector<double> probs(n), affinity(n);
        std::uint64_t c = 0;
        detail::walk_user(
            env, population, u, [](std::uint64_t, std::uint32_t) {},
            [&](std::uint64_t, std::span<const double> x, std::span<const double> latent) {
                policy.action_probs_for_user(x, latent, probs);
                const auto chosen = sample_from(probs, action_gen);
                env.click_affinity(latent, affinity);
                c += rng::uniform01(click_gen) < env.click_probability(affinity[chosen.action.id]);
            });
        clicks[u] = c;
    });
    AbResult r;
    for (auto c : clicks) r.clicks += c;
    r.impressions = static_cast<std::uint64_t>(num_users) * env.config().bandit_events_per_user;
    r.ctr = static_cast<double>(r.clicks) / static_cast<double>(r.impressions);
    const double per_user = static_cast<double>(env.config().bandit_events_per_user);
    const double binomial = per_user * r.ctr * (1.0 - r.ctr);
    if (num_users > 1 && binomial > 0.0) {
        const double mean = static_cast<double>(r.clicks) / static_cast<double>(num_users);
        double ss = 0.0;
        for (auto c : clicks) ss += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
        r.design_effect = std::max(1.0, ss / static_cast<double>(num_users - 1) / binomial);
    }
    const auto ci = wilson_interval(r.ctr, static_cast<double>(r.impressions) / r.design_effect, 0.95);
    r.ci_low = ci.low;
    r.ci_high = ci.high;
    return r;
}

/// Bisection on click_offset so the popularity logging policy's true CTR hits
/// `target_ctr` on the environment built from `config`.
inline double calibrate_click_offset(SimConfig config, double target_ctr, std::size_t num_users_mc,
                                     unsigned threads = 1) {
    if (!(target_ctr > 0.0 && target_ctr < 1.0)) throw ValidationError("target CTR must lie in (0,1)");
    double lo = -20.0, hi = 5.0;
    for (int it = 0; it < 60; ++it) {
        config.click_offset = 0.5 * (lo + hi);
        Environment env(config);
        PopularityPolicy logging(config.n_items);
        if (true_ctr(env, logging, num_users_mc, threads) < target_ctr)
            lo = config.click_offset;
        else
            hi = config.click_offset;
    }
    return 0.5 * (lo + hi);
}

}  // namespace banditlearn::sim
