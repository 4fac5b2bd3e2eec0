#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "banditlearn/error.hpp"

namespace banditlearn::optim {

/// Returns f(x) and writes the gradient into grad.
using Oracle = std::function<double(std::span<const double> x, std::span<double> grad)>;
using ValueOracle = std::function<double(std::span<const double> x)>;

struct LbfgsConfig {
    std::size_t memory = 10;
    double grad_tol = 1e-6;  // infinity norm
    std::size_t max_iters = 500;
    double wolfe_c1 = 1e-4;
    double wolfe_c2 = 0.9;
    std::size_t max_line_search_steps = 40;

    void validate() const {
        if (memory < 1) throw ValidationError("L-BFGS memory must be at least 1");
        if (!(wolfe_c1 > 0.0 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1.0))
            throw ValidationError("Wolfe constants must satisfy 0 < c1 < c2 < 1");
        if (!(grad_tol >= 0.0)) throw ValidationError("grad_tol must be non-negative");
        if (max_line_search_steps < 1) throw ValidationError("max_line_search_steps must be at least 1");
    }
};

enum class StepKind { strong_wolfe, backtracking };

struct TraceEntry {
    std::size_t iteration = 0;
    double value = 0.0;
    double grad_norm = 0.0;
    double step = 0.0;
    // Line-search data at the accepted step, kept so callers can re-check the
    // Wolfe conditions independently.
    double value_before = 0.0;
    double slope_before = 0.0;
    double slope_after = 0.0;
    StepKind kind = StepKind::strong_wolfe;
};

enum class StopReason { gradient_tolerance, max_iterations, line_search_failure };

inline const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::gradient_tolerance: return "gradient tolerance reached";
        case StopReason::max_iterations: return "maximum iterations reached";
        case StopReason::line_search_failure: return "line search failure";
    }
    return "?";
}

struct LbfgsResult {
    std::vector<double> x;
    double value = 0.0;
    double grad_norm = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    StopReason reason = StopReason::max_iterations;
    std::vector<TraceEntry> trace;
};

inline void write_trace_csv(const std::vector<TraceEntry>& trace, std::ostream& out) {
    out << "iteration,value,grad_norm,step,kind\n";
    out.precision(17);
    for (const auto& e : trace)
        out << e.iteration << ',' << e.value << ',' << e.grad_norm << ',' << e.step << ','
            << (e.kind == StepKind::strong_wolfe ? "wolfe" : "backtrack") << '\n';
}

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double inf_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Minimiser of the cubic matching (a, fa, da) and (b, fb, db); NaN when the
/// cubic has no real minimiser.
inline double cubic_minimizer(double a, double fa, double da, double b, double fb, double db) {
    const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - da * db;
    if (!(disc >= 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    return b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
}

struct Probe {
    double step = 0.0;
    double value = 0.0;
    double slope = 0.0;
    std::vector<double> x;
    std::vector<double> grad;
};

class LineSearch {
public:
    LineSearch(const Oracle& oracle, const LbfgsConfig& cfg, std::span<const double> x0, double f0, double slope0,
               std::span<const double> dir)
        : oracle_(oracle), cfg_(cfg), x0_(x0), f0_(f0), slope0_(slope0), dir_(dir) {}

    /// Strong-Wolfe search (bracketing then zoom with safeguarded cubic steps).
    bool strong_wolfe(double initial, Probe& out) {
        Probe prev{0.0, f0_, slope0_, {}, {}};
        double step = initial;
        for (std::size_t i = 0; evals_ < cfg_.max_line_search_steps; ++i) {
            Probe cur = evaluate(step);
            if (!std::isfinite(cur.value) || cur.value > f0_ + cfg_.wolfe_c1 * step * slope0_ ||
                (i > 0 && cur.value >= prev.value))
                return zoom(prev, cur, out);
            if (std::abs(cur.slope) <= -cfg_.wolfe_c2 * slope0_) {
                out = std::move(cur);
                return true;
            }
            if (cur.slope >= 0.0) return zoom(cur, prev, out);
            prev = std::move(cur);
            step *= 2.0;
        }
        return false;
    }

    /// Armijo-only halving from `initial`; used once when the Wolfe search breaks down.
    bool backtracking(double initial, Probe& out) {
        double step = initial;
        for (std::size_t i = 0; i < cfg_.max_line_search_steps; ++i, step *= 0.5) {
            Probe cur = evaluate(step);
            if (std::isfinite(cur.value) && all_finite(cur.grad) &&
                cur.value <= f0_ + cfg_.wolfe_c1 * step * slope0_ && cur.value < f0_) {
                out = std::move(cur);
                return true;
            }
        }
        return false;
    }

private:
    Probe evaluate(double step) {
        ++evals_;
        Probe p;
        p.step = step;
        p.x.resize(x0_.size());
        p.grad.resize(x0_.size());
        for (std::size_t i = 0; i < x0_.size(); ++i) p.x[i] = x0_[i] + step * dir_[i];
        p.value = oracle_(p.x, p.grad);
        if (!all_finite(p.grad)) p.value = std::numeric_limits<double>::infinity();
        p.slope = std::isfinite(p.value) ? dot(p.grad, dir_) : std::numeric_limits<double>::quiet_NaN();
        return p;
    }

    bool zoom(Probe lo, Probe hi, Probe& out) {
        while (evals_ < cfg_.max_line_search_steps) {
            const double left = std::min(lo.step, hi.step), right = std::max(lo.step, hi.step);
            const double width = right - left;
            if (width <= 1e-16 * std::max(1.0, right)) return false;
            double step = std::isfinite(hi.value)
                              ? cubic_minimizer(lo.step, lo.value, lo.slope, hi.step, hi.value, hi.slope)
                              : std::numeric_limits<double>::quiet_NaN();
            if (!std::isfinite(step) || step < left + 0.1 * width || step > right - 0.1 * width)
                step = 0.5 * (lo.step + hi.step);
            Probe cur = evaluate(step);
            if (!std::isfinite(cur.value) || cur.value > f0_ + cfg_.wolfe_c1 * step * slope0_ ||
                cur.value >= lo.value) {
                hi = std::move(cur);
            } else {
                if (std::abs(cur.slope) <= -cfg_.wolfe_c2 * slope0_) {
                    out = std::move(cur);
                    return true;
                }
                if (cur.slope * (hi.step - lo.step) >= 0.0) hi = std::move(lo);
                lo = std::move(cur);
            }
        }
        return false;
    }

    const Oracle& oracle_;
    const LbfgsConfig& cfg_;
    std::span<const double> x0_;
    double f0_;
    double slope0_;
    std::span<const double> dir_;
    std::size_t evals_ = 0;
};

}  // namespace detail

/// Limited-memory BFGS with a strong-Wolfe line search. The returned point is
/// the best iterate seen; accepted steps always decrease f, so this is also
/// the last one.
inline LbfgsResult minimize(const Oracle& oracle, std::span<const double> x0, const LbfgsConfig& cfg = {}) {
    cfg.validate();
    const std::size_t dim = x0.size();
    LbfgsResult result;
    std::vector<double> x(x0.begin(), x0.end()), g(dim);
    double f = oracle(x, g);
    if (!std::isfinite(f) || !detail::all_finite(g))
        throw ValidationError("objective is not finite at the starting point");

    struct Pair {
        std::vector<double> s, y;
        double rho;
    };
    std::deque<Pair> memory;
    std::vector<double> dir(dim), alpha(cfg.memory);

    result.x = x;
    result.value = f;
    result.grad_norm = detail::inf_norm(g);
    if (result.grad_norm <= cfg.grad_tol) {
        result.converged = true;
        result.reason = StopReason::gradient_tolerance;
        return result;
    }

    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        // Two-loop recursion: dir = -H g.
        for (std::size_t i = 0; i < dim; ++i) dir[i] = -g[i];
        for (std::size_t k = memory.size(); k-- > 0;) {
            alpha[k] = memory[k].rho * detail::dot(memory[k].s, dir);
            for (std::size_t i = 0; i < dim; ++i) dir[i] -= alpha[k] * memory[k].y[i];
        }
        if (!memory.empty()) {
            const auto& last = memory.back();
            const double gamma = detail::dot(last.s, last.y) / detail::dot(last.y, last.y);
            for (double& d : dir) d *= gamma;
        }
        for (std::size_t k = 0; k < memory.size(); ++k) {
            const double b = memory[k].rho * detail::dot(memory[k].y, dir);
            for (std::size_t i = 0; i < dim; ++i) dir[i] += (alpha[k] - b) * memory[k].s[i];
        }

        double slope = detail::dot(g, dir);
        if (!(slope < 0.0)) {
            memory.clear();
            for (std::size_t i = 0; i < dim; ++i) dir[i] = -g[i];
            slope = detail::dot(g, dir);
        }
        const double initial = memory.empty() ? std::min(1.0, 1.0 / std::sqrt(detail::dot(g, g))) : 1.0;

        detail::LineSearch search(oracle, cfg, x, f, slope, dir);
        detail::Probe accepted;
        StepKind kind = StepKind::strong_wolfe;
        if (!search.strong_wolfe(initial, accepted)) {
            detail::LineSearch fallback(oracle, cfg, x, f, slope, dir);
            kind = StepKind::backtracking;
            if (!fallback.backtracking(initial, accepted)) {
                result.reason = StopReason::line_search_failure;
                result.iterations = iter;
                return result;
            }
        }

        Pair pair{std::vector<double>(dim), std::vector<double>(dim), 0.0};
        for (std::size_t i = 0; i < dim; ++i) {
            pair.s[i] = accepted.x[i] - x[i];
            pair.y[i] = accepted.grad[i] - g[i];
        }
        const double sy = detail::dot(pair.s, pair.y);
        const double scale = std::sqrt(detail::dot(pair.s, pair.s) * detail::dot(pair.y, pair.y));
        if (sy > 1e-10 * scale) {
            pair.rho = 1.0 / sy;
            if (memory.size() == cfg.memory) memory.pop_front();
            memory.push_back(std::move(pair));
        }

        TraceEntry entry;
        entry.iteration = iter + 1;
        entry.value = accepted.value;
        entry.step = accepted.step;
        entry.value_before = f;
        entry.slope_before = slope;
        entry.slope_after = accepted.slope;
        entry.kind = kind;

        x = std::move(accepted.x);
        g = std::move(accepted.grad);
        f = accepted.value;
        entry.grad_norm = detail::inf_norm(g);
        result.trace.push_back(entry);
        result.iterations = iter + 1;

        if (f <= result.value) {
            result.x = x;
            result.value = f;
            result.grad_norm = entry.grad_norm;
        }
        if (entry.grad_norm <= cfg.grad_tol) {
            result.converged = true;
            result.reason = StopReason::gradient_tolerance;
            return result;
        }
    }
    result.reason = StopReason::max_iterations;
    return result;
}

/// Central differences, one coordinate at a time.
inline std::vector<double> finite_difference_gradient(const ValueOracle& f, std::span<const double> x, double step) {
    if (!(step > 0.0)) throw ValidationError("finite-difference step must be positive");
    std::vector<double> probe(x.begin(), x.end()), grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + step;
        const double up = f(probe);
        probe[i] = x[i] - step;
        const double down = f(probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

/// ||a - b||_2 / max(||a||_2, ||b||_2); zero when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(std::max(na, nb));
    return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

}  // namespace banditlearn::optim
