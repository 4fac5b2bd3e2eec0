#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "banditlearn/core.hpp"
#include "banditlearn/error.hpp"
#include "banditlearn/rng.hpp"

namespace banditlearn {

enum class PolicyMode { greedy, stochastic };

inline const char* to_string(PolicyMode m) { return m == PolicyMode::greedy ? "greedy" : "stochastic"; }

inline PolicyMode parse_policy_mode(const std::string& s) {
    if (s == "greedy") return PolicyMode::greedy;
    if (s == "stochastic") return PolicyMode::stochastic;
    throw ValidationError("unknown policy mode '" + s + "'");
}

namespace detail {

/// scores[a] = sum_j x[j] * params[j*n + a], i.e. the row vector x^T reshape(params).
inline void linear_scores(std::size_t n, std::span<const double> params, std::span<const double> x,
                          std::span<double> scores) {
    std::fill(scores.begin(), scores.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double xj = x[j];
        if (xj == 0.0) continue;
        const double* row = params.data() + j * n;
        for (std::size_t a = 0; a < n; ++a) scores[a] += xj * row[a];
    }
}

/// Lowest index among maximal entries.
inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < v.size(); ++a)
        if (v[a] > v[best]) best = a;
    return best;
}

inline double log_sum_exp(std::span<const double> v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double z : v) s += std::exp(z - m);
    return m + std::log(s);
}

inline void check_dims(std::size_t n, std::span<const double> x, std::span<const double> out) {
    if (x.size() != n || out.size() != n)
        throw ValidationError("dimension mismatch: policy over " + std::to_string(n) + " actions, context of length " +
                              std::to_string(x.size()));
}

}  // namespace detail

/// A conditional distribution over n actions given an n-dimensional context.
class Policy {
public:
    virtual ~Policy() = default;

    virtual std::size_t num_actions() const = 0;
    virtual void action_probs(std::span<const double> x, std::span<double> out) const = 0;

    virtual void log_action_probs(std::span<const double> x, std::span<double> out) const {
        action_probs(x, out);
        for (double& p : out) p = std::log(p);
    }

    /// Simulator hook: policies that see the user's latent state override this.
    virtual void action_probs_for_user(std::span<const double> x, std::span<const double> /*latent*/,
                                       std::span<double> out) const {
        action_probs(x, out);
    }

    virtual nlohmann::json to_json() const = 0;

    std::vector<double> action_probs(std::span<const double> x) const {
        std::vector<double> out(num_actions());
        action_probs(x, out);
        return out;
    }

    std::vector<double> action_probs(const Context& ctx) const { return action_probs(ctx.features()); }

    std::vector<double> log_action_probs(std::span<const double> x) const {
        std::vector<double> out(num_actions());
        log_action_probs(x, out);
        return out;
    }
};

/// P(a|x) = softmax(x^T theta); theta is n x n, row-major, row j = context feature j.
class LinearSoftmaxPolicy final : public Policy {
public:
    using Policy::action_probs;
    using Policy::log_action_probs;

    LinearSoftmaxPolicy(std::size_t n_items, std::vector<double> theta, PolicyMode mode = PolicyMode::stochastic)
        : n_(n_items), theta_(std::move(theta)), mode_(mode) {
        if (n_ == 0 || theta_.size() != n_ * n_) throw ValidationError("theta must have n*n entries");
        for (double v : theta_)
            if (!std::isfinite(v)) throw ValidationError("theta has non-finite entries");
    }

    std::size_t num_actions() const override { return n_; }
    PolicyMode mode() const noexcept { return mode_; }
    std::span<const double> theta() const noexcept { return theta_; }

    void scores(std::span<const double> x, std::span<double> out) const {
        detail::check_dims(n_, x, out);
        detail::linear_scores(n_, theta_, x, out);
    }

    void action_probs(std::span<const double> x, std::span<double> out) const override {
        scores(x, out);
        if (mode_ == PolicyMode::greedy) {
            const auto best = detail::argmax(out);
            std::fill(out.begin(), out.end(), 0.0);
            out[best] = 1.0;
            return;
        }
        const double m = *std::max_element(out.begin(), out.end());
        double total = 0.0;
        for (double& z : out) total += (z = std::exp(z - m));
        for (double& z : out) z /= total;
    }

    void log_action_probs(std::span<const double> x, std::span<double> out) const override {
        scores(x, out);
        if (mode_ == PolicyMode::greedy) {
            const auto best = detail::argmax(out);
            std::fill(out.begin(), out.end(), -std::numeric_limits<double>::infinity());
            out[best] = 0.0;
            return;
        }
        const double lse = detail::log_sum_exp(out);
        for (double& z : out) z -= lse;
    }

    nlohmann::json to_json() const override {
        return {{"kind", "linear_softmax"}, {"n_items", n_}, {"theta", theta_}, {"mode", to_string(mode_)}};
    }

private:
    std::size_t n_;
    std::vector<double> theta_;
    PolicyMode mode_;
};

/// Logistic click model P(c=1|x,a) = sigmoid((x kron e_a)^T beta), deployed
/// greedily on the predicted click probability.
class CtrModelPolicy final : public Policy {
public:
    using Policy::action_probs;
    using Policy::log_action_probs;

    CtrModelPolicy(std::size_t n_items, std::vector<double> beta) : n_(n_items), beta_(std::move(beta)) {
        if (n_ == 0 || beta_.size() != n_ * n_) throw ValidationError("beta must have n*n entries");
        for (double v : beta_)
            if (!std::isfinite(v)) throw ValidationError("beta has non-finite entries");
    }

    std::size_t num_actions() const override { return n_; }
    std::span<const double> beta() const noexcept { return beta_; }

    double click_probability(std::span<const double> x, std::size_t action) const {
        std::vector<double> z(n_);
        detail::check_dims(n_, x, z);
        detail::linear_scores(n_, beta_, x, z);
        return 1.0 / (1.0 + std::exp(-z.at(action)));
    }

    /// Sigmoid is monotone, so the argmax over raw scores is the argmax over
    /// predicted click probabilities.
    std::size_t best_action(std::span<const double> x) const {
        std::vector<double> z(n_);
        detail::check_dims(n_, x, z);
        detail::linear_scores(n_, beta_, x, z);
        return detail::argmax(z);
    }

    void action_probs(std::span<const double> x, std::span<double> out) const override {
        detail::check_dims(n_, x, out);
        detail::linear_scores(n_, beta_, x, out);
        const auto best = detail::argmax(out);
        std::fill(out.begin(), out.end(), 0.0);
        out[best] = 1.0;
    }

    nlohmann::json to_json() const override {
        return {{"kind", "ctr_model"}, {"n_items", n_}, {"beta", beta_}, {"mode", "greedy"}};
    }

private:
    std::size_t n_;
    std::vector<double> beta_;
};

/// Personalised popularity: P(a|x) proportional to x_a + smoothing.
class PopularityPolicy final : public Policy {
public:
    using Policy::action_probs;
    using Policy::log_action_probs;

    explicit PopularityPolicy(std::size_t n_items, double smoothing = 1.0) : n_(n_items), smoothing_(smoothing) {
        if (n_ == 0) throw ValidationError("popularity policy needs at least one action");
        if (!(smoothing_ > 0.0) || !std::isfinite(smoothing_)) throw ValidationError("smoothing must be positive");
    }

    std::size_t num_actions() const override { return n_; }
    double smoothing() const noexcept { return smoothing_; }

    void action_probs(std::span<const double> x, std::span<double> out) const override {
        detail::check_dims(n_, x, out);
        double total = 0.0;
        for (std::size_t a = 0; a < n_; ++a) {
            if (x[a] < 0.0) throw ValidationError("popularity policy needs non-negative counts");
            total += (out[a] = x[a] + smoothing_);
        }
        for (double& p : out) p /= total;
    }

    nlohmann::json to_json() const override {
        return {{"kind", "popularity"}, {"n_items", n_}, {"smoothing", smoothing_}, {"mode", "stochastic"}};
    }

private:
    std::size_t n_;
    double smoothing_;
};

class UniformPolicy final : public Policy {
public:
    using Policy::action_probs;
    using Policy::log_action_probs;

    explicit UniformPolicy(std::size_t n_items) : n_(n_items) {
        if (n_ == 0) throw ValidationError("uniform policy needs at least one action");
    }

    std::size_t num_actions() const override { return n_; }

    void action_probs(std::span<const double> x, std::span<double> out) const override {
        detail::check_dims(n_, x, out);
        std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(n_));
    }

    nlohmann::json to_json() const override {
        return {{"kind", "uniform"}, {"n_items", n_}, {"mode", "stochastic"}};
    }

private:
    std::size_t n_;
};

struct SampledAction {
    Action action;
    double propensity;
};

/// Inverse-CDF draw from a distribution; the propensity is the probability
/// entry itself, not a recomputation.
inline SampledAction sample_from(std::span<const double> probs, Rng& rng) {
    const double u = rng::uniform01(rng);
    double cum = 0.0;
    std::size_t chosen = probs.size();
    for (std::size_t a = 0; a < probs.size(); ++a) {
        cum += probs[a];
        if (u < cum && probs[a] > 0.0) {
            chosen = a;
            break;
        }
    }
    if (chosen == probs.size()) {
        // Rounding left u above the final cumulative sum.
        for (std::size_t a = probs.size(); a-- > 0;)
            if (probs[a] > 0.0) {
                chosen = a;
                break;
            }
    }
    return {Action{static_cast<std::uint32_t>(chosen)}, probs[chosen]};
}

inline SampledAction sample_action(const Policy& policy, std::span<const double> x, Rng& rng) {
    std::vector<double> probs(policy.num_actions());
    policy.action_probs(x, probs);
    return sample_from(probs, rng);
}

inline std::vector<double> json_number_array(const nlohmann::json& j, const char* name, std::size_t expected) {
    auto it = j.find(name);
    if (it == j.end() || !it->is_array()) throw ValidationError(std::string("policy field '") + name + "' missing");
    if (it->size() != expected)
        throw ValidationError(std::string("policy field '") + name + "' must have " + std::to_string(expected) +
                              " entries");
    std::vector<double> v;
    v.reserve(expected);
    for (const auto& e : *it) {
        if (!e.is_number()) throw ValidationError(std::string("policy field '") + name + "' must be numeric");
        v.push_back(e.get<double>());
    }
    return v;
}

/// Inverse of Policy::to_json for the serializable policy kinds.
inline std::unique_ptr<Policy> policy_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("policy document must be a JSON object");
    auto kind_it = j.find("kind");
    auto n_it = j.find("n_items");
    if (kind_it == j.end() || !kind_it->is_string()) throw ValidationError("policy field 'kind' missing");
    if (n_it == j.end() || !n_it->is_number_unsigned() || n_it->get<std::size_t>() == 0)
        throw ValidationError("policy field 'n_items' missing or invalid");
    const auto kind = kind_it->get<std::string>();
    const auto n = n_it->get<std::size_t>();
    const auto mode = j.contains("mode") ? parse_policy_mode(j.at("mode").get<std::string>()) : PolicyMode::greedy;
    if (kind == "linear_softmax") return std::make_unique<LinearSoftmaxPolicy>(n, json_number_array(j, "theta", n * n), mode);
    if (kind == "ctr_model") return std::make_unique<CtrModelPolicy>(n, json_number_array(j, "beta", n * n));
    if (kind == "popularity") return std::make_unique<PopularityPolicy>(n, j.value("smoothing", 1.0));
    if (kind == "uniform") return std::make_unique<UniformPolicy>(n);
    throw ValidationError("unknown policy kind '" + kind + "'");
}

}  // namespace banditlearn
