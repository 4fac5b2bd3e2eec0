#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "banditlearn/error.hpp"
#include "banditlearn/objectives.hpp"
#include "banditlearn/parallel.hpp"
#include "banditlearn/policy.hpp"
#include "banditlearn/rng.hpp"

namespace banditlearn::ope {

using objectives::TrainingSet;

enum class Estimator { ips, snips };

inline const char* to_string(Estimator e) { return e == Estimator::ips ? "ips" : "snips"; }

inline std::optional<Estimator> parse_estimator(const std::string& s) {
    if (s == "ips") return Estimator::ips;
    if (s == "snips") return Estimator::snips;
    return std::nullopt;
}

struct OpeReport {
    double estimate = 0.0;
    double std_error = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double effective_sample_size = 0.0;
    double max_weight = 0.0;
    Estimator method = Estimator::ips;
    std::size_t sample_size = 0;
    /// Effective sample size below 1% of the log.
    bool unreliable = false;
};

inline nlohmann::json to_json(const OpeReport& r) {
    return {{"method", to_string(r.method)},
            {"estimate", r.estimate},
            {"std_error", r.std_error},
            {"ci_low", r.ci_low},
            {"ci_high", r.ci_high},
            {"effective_sample_size", r.effective_sample_size},
            {"max_weight", r.max_weight},
            {"sample_size", r.sample_size},
            {"unreliable", r.unreliable}};
}

namespace detail {

/// pi(a_i|x_i) / p0_i for every logged sample, optionally clipped at clip_m.
inline std::vector<double> importance_weights(const TrainingSet& data, const Policy& policy,
                                              std::optional<double> clip_m) {
    if (policy.num_actions() != data.n_items()) throw ValidationError("policy and data disagree on n_items");
    if (clip_m && !(*clip_m > 0.0)) throw ValidationError("clip constant must be positive");
    std::vector<double> weights(data.size()), probs(data.n_items());
    for (std::size_t i = 0; i < data.size(); ++i) {
        policy.action_probs(data.context(i), probs);
        double w = probs[data.action(i)] / data.propensity(i);
        if (clip_m) w = std::min(w, *clip_m);
        weights[i] = w;
    }
    return weights;
}

inline void fill_weight_diagnostics(const std::vector<double>& weights, OpeReport& r) {
    double sum = 0.0, sum_sq = 0.0, max_w = 0.0;
    for (double w : weights) {
        sum += w;
        sum_sq += w * w;
        max_w = std::max(max_w, w);
    }
    r.sample_size = weights.size();
    r.max_weight = max_w;
    r.effective_sample_size = sum_sq > 0.0 ? sum * sum / sum_sq : 0.0;
    r.unreliable = r.effective_sample_size < 0.01 * static_cast<double>(weights.size());
}

/// Linear interpolation between order statistics of sorted data.
inline double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

/// Mean of c_i pi(a_i|x_i) / p0_i with a normal-approximation 95% interval.
inline OpeReport ips_estimate(const TrainingSet& data, const Policy& policy, std::optional<double> clip_m = {}) {
    if (data.empty()) throw ValidationError("off-policy evaluation needs at least one logged event");
    const auto weights = detail::importance_weights(data, policy, clip_m);
    const std::size_t size = data.size();
    double sum = 0.0;
    std::vector<double> u(size);
    for (std::size_t i = 0; i < size; ++i) sum += (u[i] = data.click(i) * weights[i]);
    const double count = static_cast<double>(size);

    OpeReport r;
    r.method = Estimator::ips;
    r.estimate = sum / count;
    if (size > 1) {
        double ss = 0.0;
        for (double v : u) ss += (v - r.estimate) * (v - r.estimate);
        r.std_error = std::sqrt(ss / (count - 1.0)) / std::sqrt(count);
    }
    r.ci_low = r.estimate - 1.96 * r.std_error;
    r.ci_high = r.estimate + 1.96 * r.std_error;
    detail::fill_weight_diagnostics(weights, r);
    return r;
}

/// sum(c_i s_i) / sum(s_i) with a percentile-bootstrap 95% interval. Each
/// replicate resamples from its own substream of `seed`, so the interval does
/// not depend on the thread count.
inline OpeReport snips_estimate(const TrainingSet& data, const Policy& policy, std::size_t bootstrap_reps = 1000,
                                std::uint64_t seed = 0, unsigned threads = 1) {
    if (data.empty()) throw ValidationError("off-policy evaluation needs at least one logged event");
    if (bootstrap_reps < 1) throw ValidationError("bootstrap needs at least one replicate");
    const auto weights = detail::importance_weights(data, policy, std::nullopt);
    const std::size_t size = data.size();
    double sum_s = 0.0, sum_u = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        sum_s += weights[i];
        sum_u += data.click(i) * weights[i];
    }
    if (!(sum_s > 0.0)) throw ValidationError("SNIPS undefined: the policy puts no mass on any logged action");

    OpeReport r;
    r.method = Estimator::snips;
    r.estimate = sum_u / sum_s;
    detail::fill_weight_diagnostics(weights, r);

    std::vector<double> replicates(bootstrap_reps, std::numeric_limits<double>::quiet_NaN());
    parallel_for(bootstrap_reps, threads, [&](std::size_t rep) {
        auto gen = rng::substream(seed, rng::label("bootstrap"), rep);
        std::uniform_int_distribution<std::size_t> pick(0, size - 1);
        double s = 0.0, u = 0.0;
        for (std::size_t k = 0; k < size; ++k) {
            const std::size_t i = pick(gen);
            s += weights[i];
            u += data.click(i) * weights[i];
        }
        if (s > 0.0) replicates[rep] = u / s;
    });
    // Replicates that drew no supported sample have no ratio and are dropped.
    std::erase_if(replicates, [](double v) { return std::isnan(v); });
    if (replicates.empty()) {
        r.ci_low = r.ci_high = r.estimate;
        return r;
    }
    std::sort(replicates.begin(), replicates.end());
    r.ci_low = detail::quantile(replicates, 0.025);
    r.ci_high = detail::quantile(replicates, 0.975);
    double mean = 0.0;
    for (double v : replicates) mean += v;
    mean /= static_cast<double>(replicates.size());
    double ss = 0.0;
    for (double v : replicates) ss += (v - mean) * (v - mean);
    r.std_error = replicates.size() > 1 ? std::sqrt(ss / static_cast<double>(replicates.size() - 1)) : 0.0;
    return r;
}

}  // namespace banditlearn::ope
