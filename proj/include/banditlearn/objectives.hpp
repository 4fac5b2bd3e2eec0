#pragma once

// Training objectives over logged bandit data, all framed as losses to be
// minimised. Parameters are an n x n matrix stored row-major: entry (j, a)
// weighs context feature j for action a. Read as theta it drives the softmax
// policy softmax(x^T theta); read as beta it is the flattened logistic
// click model sigmoid((x kron e_a)^T beta). The two readings share storage,
// which is what lets the dual objective mix them.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "banditlearn/core.hpp"
#include "banditlearn/error.hpp"
#include "banditlearn/json_util.hpp"
#include "banditlearn/optim.hpp"
#include "banditlearn/policy.hpp"

namespace banditlearn::objectives {

/// Logged bandit samples in columnar form.
class TrainingSet {
public:
    TrainingSet() = default;

    TrainingSet(std::size_t n_items, std::vector<double> contexts, std::vector<std::uint32_t> actions,
                std::vector<double> propensities, std::vector<std::uint8_t> clicks)
        : n_(n_items),
          contexts_(std::move(contexts)),
          actions_(std::move(actions)),
          propensities_(std::move(propensities)),
          clicks_(std::move(clicks)) {
        const std::size_t size = actions_.size();
        if (n_ == 0) throw ValidationError("training set needs at least one action");
        if (contexts_.size() != size * n_ || propensities_.size() != size || clicks_.size() != size)
            throw ValidationError("training set columns have inconsistent lengths");
        for (std::size_t i = 0; i < size; ++i) {
            if (actions_[i] >= n_) throw ValidationError("training set action out of range");
            if (!(propensities_[i] > 0.0 && propensities_[i] <= 1.0))
                throw ValidationError("training set propensity outside (0,1]");
            if (clicks_[i] > 1) throw ValidationError("training set click must be 0 or 1");
            if (clicks_[i]) clicked_.push_back(i);
        }
        for (double v : contexts_)
            if (!std::isfinite(v)) throw ValidationError("training set context has non-finite entries");
    }

    /// Bandit events of a log, in log order.
    static TrainingSet from_log(const InteractionLog& log) {
        std::vector<double> x;
        std::vector<std::uint32_t> a;
        std::vector<double> p;
        std::vector<std::uint8_t> c;
        const auto count = log.num_bandit_events();
        x.reserve(count * log.n_items);
        a.reserve(count);
        p.reserve(count);
        c.reserve(count);
        for (const auto& u : log.users)
            for (const auto& e : u.events)
                if (const auto* b = std::get_if<BanditEvent>(&e)) {
                    x.insert(x.end(), b->context.counts.begin(), b->context.counts.end());
                    a.push_back(b->action.id);
                    p.push_back(b->propensity);
                    c.push_back(b->click);
                }
        return TrainingSet(log.n_items, std::move(x), std::move(a), std::move(p), std::move(c));
    }

    std::size_t n_items() const noexcept { return n_; }
    std::size_t size() const noexcept { return actions_.size(); }
    bool empty() const noexcept { return actions_.empty(); }

    std::span<const double> context(std::size_t i) const { return {contexts_.data() + i * n_, n_}; }
    std::uint32_t action(std::size_t i) const { return actions_[i]; }
    double propensity(std::size_t i) const { return propensities_[i]; }
    std::uint8_t click(std::size_t i) const { return clicks_[i]; }
    std::span<const std::size_t> clicked() const noexcept { return clicked_; }

    double mean_click() const {
        return empty() ? 0.0 : static_cast<double>(clicked_.size()) / static_cast<double>(size());
    }

private:
    std::size_t n_ = 0;
    std::vector<double> contexts_;
    std::vector<std::uint32_t> actions_;
    std::vector<double> propensities_;
    std::vector<std::uint8_t> clicks_;
    std::vector<std::size_t> clicked_;
};

enum class Method { likelihood, ips_likelihood, contextual_bandit, dual, poem, snips };

inline constexpr Method kAllMethods[] = {Method::likelihood, Method::ips_likelihood, Method::contextual_bandit,
                                         Method::dual,       Method::poem,           Method::snips};

/// Command-line spelling.
inline const char* method_name(Method m) {
    switch (m) {
        case Method::likelihood: return "likelihood";
        case Method::ips_likelihood: return "ips-likelihood";
        case Method::contextual_bandit: return "cb";
        case Method::dual: return "dual";
        case Method::poem: return "poem";
        case Method::snips: return "snips";
    }
    return "?";
}

inline std::optional<Method> parse_method(const std::string& s) {
    for (Method m : kAllMethods)
        if (s == method_name(m)) return m;
    return std::nullopt;
}

/// Whether the fitted parameters are a click model (beta) rather than a policy (theta).
inline bool fits_click_model(Method m) { return m == Method::likelihood || m == Method::ips_likelihood; }

struct ObjectiveConfig {
    Method method = Method::dual;
    double alpha = 0.5;
    double lambda = 1.0;
    std::optional<double> clip_m;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0,1]");
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be non-negative");
        if (clip_m && !(*clip_m > 0.0)) throw ValidationError("clip constant must be positive");
    }
};

struct LossValue {
    double value = 0.0;
    std::vector<double> gradient;
};

namespace detail {

inline void check_params(std::span<const double> params, const TrainingSet& data) {
    const std::size_t n = data.n_items();
    if (params.size() != n * n)
        throw ValidationError("parameter vector has " + std::to_string(params.size()) + " entries, expected " +
                              std::to_string(n * n));
}

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double logged_score(std::span<const double> params, std::span<const double> x, std::size_t n,
                           std::size_t action) {
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += x[j] * params[j * n + action];
    return z;
}

/// Softmax of x^T theta into probs; returns log pi(action|x).
inline double softmax_at(std::span<const double> theta, std::span<const double> x, std::size_t n,
                         std::size_t action, std::span<double> probs) {
    banditlearn::detail::linear_scores(n, theta, x, probs);
    const double lse = banditlearn::detail::log_sum_exp(probs);
    const double logp = probs[action] - lse;
    for (double& z : probs) z = std::exp(z - lse);
    return logp;
}

/// grad += coef * x kron (e_action - probs): the gradient of coef * log pi(action|x).
inline void add_log_policy_gradient(std::span<double> grad, std::span<const double> x, std::size_t n,
                                    std::size_t action, std::span<const double> probs, double coef,
                                    std::span<double> scratch) {
    for (std::size_t b = 0; b < n; ++b) scratch[b] = -coef * probs[b];
    scratch[action] += coef;
    for (std::size_t j = 0; j < n; ++j) {
        const double xj = x[j];
        if (xj == 0.0) continue;
        double* row = grad.data() + j * n;
        for (std::size_t b = 0; b < n; ++b) row[b] += xj * scratch[b];
    }
}

/// sum_i w_i BCE_i / sum_i w_i; weights null means all ones.
inline double weighted_bce(std::span<const double> beta, const TrainingSet& data, const std::vector<double>* weights,
                           std::span<double> grad) {
    const std::size_t n = data.n_items(), size = data.size();
    std::fill(grad.begin(), grad.end(), 0.0);
    double total_weight = 0.0, value = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double w = weights ? (*weights)[i] : 1.0;
        const auto x = data.context(i);
        const std::size_t a = data.action(i);
        const double z = logged_score(beta, x, n, a);
        const double c = data.click(i);
        value += w * (softplus(z) - c * z);
        total_weight += w;
        const double dz = w * (sigmoid(z) - c);
        for (std::size_t j = 0; j < n; ++j) grad[j * n + a] += x[j] * dz;
    }
    for (double& g : grad) g /= total_weight;
    return value / total_weight;
}

}  // namespace detail

/// Mean binary cross-entropy of the logistic click model.
inline double likelihood_loss(std::span<const double> beta, const TrainingSet& data, std::span<double> grad) {
    detail::check_params(beta, data);
    if (data.empty()) throw ValidationError("likelihood needs at least one sample");
    return detail::weighted_bce(beta, data, nullptr, grad);
}

/// Cross-entropy reweighted by 1/propensity, normalised by the total weight.
inline double ips_likelihood_loss(std::span<const double> beta, const TrainingSet& data, std::span<double> grad) {
    detail::check_params(beta, data);
    if (data.empty()) throw ValidationError("likelihood needs at least one sample");
    std::vector<double> weights(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) weights[i] = 1.0 / data.propensity(i);
    return detail::weighted_bce(beta, data, &weights, grad);
}

/// Negated Jensen bound of the IPS objective:
/// -(1/N) sum_i (c_i / p0_i) log pi_theta(a_i|x_i). Unclicked samples carry zero weight.
inline double cb_loss(std::span<const double> theta, const TrainingSet& data, std::span<double> grad) {
    detail::check_params(theta, data);
    if (data.empty()) throw ValidationError("contextual bandit loss needs at least one sample");
    const std::size_t n = data.n_items();
    std::fill(grad.begin(), grad.end(), 0.0);
    std::vector<double> probs(n), scratch(n);
    const double inv_n = 1.0 / static_cast<double>(data.size());
    double value = 0.0;
    for (std::size_t i : data.clicked()) {
        const auto x = data.context(i);
        const double w = 1.0 / data.propensity(i);
        const double logp = detail::softmax_at(theta, x, n, data.action(i), probs);
        value -= w * logp;
        detail::add_log_policy_gradient(grad, x, n, data.action(i), probs, -w * inv_n, scratch);
    }
    return value * inv_n;
}

/// (1 - alpha) cb_loss + alpha likelihood_loss on shared parameters.
/// The endpoints skip the unused term, so they reproduce it bit-for-bit.
inline double dual_loss(std::span<const double> theta, const TrainingSet& data, double alpha, std::span<double> grad) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0,1]");
    if (alpha == 0.0) return cb_loss(theta, data, grad);
    if (alpha == 1.0) return likelihood_loss(theta, data, grad);
    std::vector<double> lh_grad(grad.size());
    const double cb = cb_loss(theta, data, grad);
    const double lh = likelihood_loss(theta, data, lh_grad);
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = (1.0 - alpha) * grad[k] + alpha * lh_grad[k];
    return (1.0 - alpha) * cb + alpha * lh;
}

/// Variance-penalised IPS: -(R - lambda sqrt(S^2 / N)) with u_i = c_i min(pi/p0, M),
/// R = mean(u) and S^2 the unbiased sample variance of u.
inline double poem_loss(std::span<const double> theta, const TrainingSet& data, double lambda,
                        std::optional<double> clip_m, std::span<double> grad) {
    detail::check_params(theta, data);
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
    if (clip_m && !(*clip_m > 0.0)) throw ValidationError("clip constant must be positive");
    const std::size_t size = data.size(), n = data.n_items();
    if (size == 0) throw ValidationError("POEM needs at least one sample");
    if (size < 2 && lambda > 0.0) throw ValidationError("POEM variance penalty needs at least two samples");
    std::fill(grad.begin(), grad.end(), 0.0);

    // Unclicked samples have u_i = 0 independent of theta; only clicked ones are visited.
    const auto clicked = data.clicked();
    std::vector<double> probs(n), scratch(n);
    std::vector<double> u(clicked.size()), ratio(clicked.size());
    std::vector<std::uint8_t> active(clicked.size());
    std::vector<std::vector<double>> cached_probs(clicked.size());
    double sum_u = 0.0;
    for (std::size_t k = 0; k < clicked.size(); ++k) {
        const std::size_t i = clicked[k];
        const double logp = detail::softmax_at(theta, data.context(i), n, data.action(i), probs);
        ratio[k] = std::exp(logp) / data.propensity(i);
        active[k] = !clip_m || ratio[k] < *clip_m;
        u[k] = active[k] ? ratio[k] : *clip_m;
        sum_u += u[k];
        cached_probs[k] = probs;
    }
    const double count = static_cast<double>(size);
    const double mean = sum_u / count;
    double value = -mean;
    double penalty = 0.0;
    if (lambda > 0.0) {
        double ss = (count - static_cast<double>(clicked.size())) * mean * mean;
        for (double v : u) ss += (v - mean) * (v - mean);
        const double variance = ss / (count - 1.0);
        penalty = std::sqrt(variance / count);
        value += lambda * penalty;
    }
    for (std::size_t k = 0; k < clicked.size(); ++k) {
        if (!active[k]) continue;
        // d value / d u_k; the mean's dependence drops out of d S^2 since sum(u - mean) = 0.
        double coef = -1.0 / count;
        if (lambda > 0.0 && penalty > 0.0) coef += lambda * (u[k] - mean) / ((count - 1.0) * count * penalty);
        const std::size_t i = clicked[k];
        detail::add_log_policy_gradient(grad, data.context(i), n, data.action(i), cached_probs[k], coef * ratio[k],
                                        scratch);
    }
    return value;
}

/// Variance-penalised self-normalised IPS: -(R - lambda sqrt(V / N)) with
/// R = sum(c s) / sum(s), s_i = pi/p0, and V the delta-method variance
/// sample_var(c_i s_i - R s_i) / mean(s)^2.
inline double snips_loss(std::span<const double> theta, const TrainingSet& data, double lambda,
                         std::span<double> grad) {
    detail::check_params(theta, data);
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
    const std::size_t size = data.size(), n = data.n_items();
    if (size == 0) throw ValidationError("SNIPS needs at least one sample");
    if (size < 2 && lambda > 0.0) throw ValidationError("SNIPS variance penalty needs at least two samples");
    std::fill(grad.begin(), grad.end(), 0.0);

    std::vector<double> ratio(size), probs(n * size), scratch(n);
    double sum_s = 0.0, sum_u = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        std::span<double> p(probs.data() + i * n, n);
        const double logp = detail::softmax_at(theta, data.context(i), n, data.action(i), p);
        ratio[i] = std::exp(logp) / data.propensity(i);
        sum_s += ratio[i];
        sum_u += data.click(i) * ratio[i];
    }
    if (!(sum_s > 0.0)) throw ValidationError("SNIPS undefined: importance weights sum to zero");
    const double count = static_cast<double>(size);
    const double estimate = sum_u / sum_s;
    double value = -estimate;

    // dR/ds_i = (c_i - R) / S.
    double q = 0.0, d_dot_s = 0.0, penalty = 0.0, variance = 0.0;
    const double mean_s = sum_s / count;
    if (lambda > 0.0) {
        for (std::size_t i = 0; i < size; ++i) {
            const double d = (data.click(i) - estimate) * ratio[i];
            q += d * d;
            d_dot_s += d * ratio[i];
        }
        variance = q / ((count - 1.0) * mean_s * mean_s);
        penalty = std::sqrt(variance / count);
        value += lambda * penalty;
    }
    for (std::size_t i = 0; i < size; ++i) {
        const double dr = (data.click(i) - estimate) / sum_s;
        double coef = -dr;
        if (lambda > 0.0 && penalty > 0.0) {
            const double d = (data.click(i) - estimate) * ratio[i];
            const double dq = 2.0 * d * (data.click(i) - estimate) - 2.0 * dr * d_dot_s;
            const double dv = dq / ((count - 1.0) * mean_s * mean_s) - 2.0 * variance / (count * mean_s);
            coef += lambda * dv / (2.0 * count * penalty);
        }
        if (coef == 0.0) continue;
        detail::add_log_policy_gradient(grad, data.context(i), n, data.action(i),
                                        std::span<const double>(probs.data() + i * n, n), coef * ratio[i], scratch);
    }
    return value;
}

/// Dispatches on config.method; writes the gradient into grad.
inline double evaluate(std::span<const double> params, const TrainingSet& data, const ObjectiveConfig& config,
                       std::span<double> grad) {
    switch (config.method) {
        case Method::likelihood: return likelihood_loss(params, data, grad);
        case Method::ips_likelihood: return ips_likelihood_loss(params, data, grad);
        case Method::contextual_bandit: return cb_loss(params, data, grad);
        case Method::dual: return dual_loss(params, data, config.alpha, grad);
        case Method::poem: return poem_loss(params, data, config.lambda, config.clip_m, grad);
        case Method::snips: return snips_loss(params, data, config.lambda, grad);
    }
    throw ValidationError("unknown method");
}

inline LossValue evaluate(std::span<const double> params, const TrainingSet& data, const ObjectiveConfig& config) {
    LossValue out;
    out.gradient.resize(params.size());
    out.value = evaluate(params, data, config, out.gradient);
    return out;
}

struct TrainResult {
    Method method = Method::likelihood;
    std::vector<double> params;
    std::shared_ptr<const Policy> policy;
    double value = 0.0;
    double grad_norm = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    // Set when the line search broke down; params hold the best iterate.
    bool flagged = false;
    std::string diagnostics;
};

/// Full-batch L-BFGS from zero parameters. Click-model methods return a
/// CtrModelPolicy, the rest a greedy LinearSoftmaxPolicy.
inline TrainResult train(const TrainingSet& data, const ObjectiveConfig& config,
                         const optim::LbfgsConfig& optimizer_config = {}) {
    config.validate();
    if (data.size() < 2) throw ValidationError("training needs at least two samples");
    const std::size_t n = data.n_items();
    const std::vector<double> start(n * n, 0.0);
    auto oracle = [&](std::span<const double> params, std::span<double> grad) {
        return evaluate(params, data, config, grad);
    };
    const auto fit = optim::minimize(oracle, start, optimizer_config);

    TrainResult result;
    result.method = config.method;
    result.params = fit.x;
    result.value = fit.value;
    result.grad_norm = fit.grad_norm;
    result.iterations = fit.iterations;
    result.converged = fit.converged;
    result.flagged = fit.reason == optim::StopReason::line_search_failure;
    result.diagnostics = optim::to_string(fit.reason);
    if (fits_click_model(config.method))
        result.policy = std::make_shared<CtrModelPolicy>(n, fit.x);
    else
        result.policy = std::make_shared<LinearSoftmaxPolicy>(n, fit.x, PolicyMode::greedy);
    return result;
}

inline nlohmann::json to_json(const ObjectiveConfig& c) {
    nlohmann::json j{{"method", method_name(c.method)}, {"alpha", c.alpha}, {"lambda", c.lambda}};
    if (c.clip_m) j["clip_m"] = *c.clip_m;
    return j;
}

inline ObjectiveConfig objective_config_from_json(const nlohmann::json& j, ObjectiveConfig base = {}) {
    constexpr std::string_view what = "objective config";
    json_util::require_known_keys(j, {"method", "alpha", "lambda", "clip_m"}, what);
    if (j.contains("method")) {
        const auto& m = j.at("method");
        if (!m.is_string()) throw ValidationError("method must be a string");
        auto parsed = parse_method(m.get<std::string>());
        if (!parsed) throw ValidationError("unknown method '" + m.get<std::string>() + "'");
        base.method = *parsed;
    }
    json_util::read_optional(j, "alpha", base.alpha, what);
    json_util::read_optional(j, "lambda", base.lambda, what);
    if (j.contains("clip_m")) {
        if (j.at("clip_m").is_null())
            base.clip_m.reset();
        else if (j.at("clip_m").is_number())
            base.clip_m = j.at("clip_m").get<double>();
        else
            throw ValidationError("clip_m must be a number or null");
    }
    base.validate();
    return base;
}

}  // namespace banditlearn::objectives
