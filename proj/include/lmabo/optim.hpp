#pragma once

// Bound-constrained quasi-Newton minimization (projected L-BFGS).
//
// The search direction comes from the two-loop recursion restricted to the
// variables that are not pinned at an active bound; steps are projected back
// onto the box and accepted by an Armijo backtracking test along the
// projected path.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace lmabo::optim {

struct BoxQnOptions {
    int max_iterations = 200;
    int memory = 10;
    double pg_tolerance = 1e-6;
    double f_rel_tolerance = 1e-11;
    int max_line_search = 30;
};

struct BoxQnResult {
    Eigen::VectorXd x;
    double value = std::numeric_limits<double>::infinity();
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    std::string message;
};

inline Eigen::VectorXd clamp_to_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lower,
                                    const Eigen::VectorXd& upper) {
    return x.cwiseMax(lower).cwiseMin(upper);
}

/// Minimizes fg over [lower, upper]. `fg(x, grad)` returns f(x) and writes the gradient.
template <class F>
BoxQnResult minimize_box(F&& fg, const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
                         const Eigen::VectorXd& upper, const BoxQnOptions& options = {}) {
    const Eigen::Index n = x0.size();
    BoxQnResult result;
    Eigen::VectorXd x = clamp_to_box(x0, lower, upper);
    Eigen::VectorXd g(n);
    double f = fg(x, g);
    result.evaluations = 1;
    if (!std::isfinite(f) || !g.allFinite()) {
        result.x = x;
        result.value = f;
        result.message = "non-finite objective at start";
        return result;
    }

    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;
    Eigen::VectorXd x_new(n), g_new(n), d(n), gf(n);

    auto free_mask = [&](const Eigen::VectorXd& xv, const Eigen::VectorXd& gv) {
        Eigen::Array<bool, Eigen::Dynamic, 1> mask(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const bool at_lower = xv[i] <= lower[i] && gv[i] > 0.0;
            const bool at_upper = xv[i] >= upper[i] && gv[i] < 0.0;
            mask[i] = !(at_lower || at_upper);
        }
        return mask;
    };

    for (int it = 0; it < options.max_iterations; ++it) {
        result.iterations = it + 1;
        const Eigen::VectorXd projected = clamp_to_box(x - g, lower, upper) - x;
        if (projected.lpNorm<Eigen::Infinity>() < options.pg_tolerance) {
            result.converged = true;
            result.message = "projected gradient below tolerance";
            break;
        }

        const auto mask = free_mask(x, g);
        gf = mask.select(g, 0.0);

        // Two-loop recursion on the free subspace.
        d = -gf;
        if (!memory.empty()) {
            std::vector<double> alpha(memory.size());
            Eigen::VectorXd q = gf;
            for (std::size_t k = memory.size(); k-- > 0;) {
                const auto& [s, y] = memory[k];
                const double rho = 1.0 / y.dot(s);
                alpha[k] = rho * s.dot(q);
                q -= alpha[k] * y;
            }
            const auto& [s_last, y_last] = memory.back();
            q *= s_last.dot(y_last) / y_last.squaredNorm();
            for (std::size_t k = 0; k < memory.size(); ++k) {
                const auto& [s, y] = memory[k];
                const double rho = 1.0 / y.dot(s);
                const double beta = rho * y.dot(q);
                q += (alpha[k] - beta) * s;
            }
            d = mask.select(-q, 0.0);
            if (!(d.dot(gf) < 0.0)) {
                d = -gf;
                memory.clear();
            }
        }

        double step = 1.0;
        if (memory.empty()) step = std::min(1.0, 1.0 / std::max(gf.lpNorm<Eigen::Infinity>(), 1e-12));

        bool accepted = false;
        double f_new = f;
        for (int ls = 0; ls < options.max_line_search; ++ls) {
            x_new = clamp_to_box(x + step * d, lower, upper);
            if ((x_new - x).lpNorm<Eigen::Infinity>() == 0.0) break;
            f_new = fg(x_new, g_new);
            ++result.evaluations;
            if (std::isfinite(f_new) && g_new.allFinite() &&
                f_new <= f + 1e-4 * g.dot(x_new - x)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }

        if (!accepted) {
            if (!memory.empty()) {
                memory.clear();
                continue;
            }
            result.converged = true;
            result.message = "line search made no progress";
            break;
        }

        Eigen::VectorXd s = x_new - x;
        Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * y.squaredNorm()) {
            memory.emplace_back(std::move(s), std::move(y));
            if (static_cast<int>(memory.size()) > options.memory) memory.pop_front();
        }

        const double decrease = f - f_new;
        x = x_new;
        g = g_new;
        f = f_new;
        if (decrease <= options.f_rel_tolerance * std::max({std::abs(f), std::abs(f + decrease), 1.0})) {
            result.converged = true;
            result.message = "relative reduction below tolerance";
            break;
        }
    }

    result.x = x;
    result.value = f;
    if (result.message.empty()) result.message = "iteration limit";
    return result;
}

}  // namespace lmabo::optim
