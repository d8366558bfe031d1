#pragma once

// Synthetic minimization benchmarks and user-defined external problems.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lmabo/random.hpp"
#include "lmabo/surrogate.hpp"

namespace lmabo::bench {

using Eigen::VectorXd;

struct Problem {
    std::string name;
    int dim = 0;
    gp::Bounds bounds;
    std::function<double(const VectorXd&)> fn;
    std::optional<double> known_optimum;
    std::optional<VectorXd> optimizer;  // a known minimizer, when one is tabulated
    double noise_std = 0.0;
};

/// The fifteen registry problems at their default dimensions.
const std::vector<Problem>& problem_registry();

/// Registry lookup by name or alias (case-insensitive), including registered user problems.
/// Aliases: "Ackley-4D", "Griewank-2D", "Hartmann-6".
Problem find_problem(const std::string& name);

std::vector<std::string> registry_names();

Problem make_ackley(int dim);
Problem make_griewank(int dim);
Problem make_levy(int dim);
Problem make_dixon_price(int dim);
Problem make_styblinski_tang(int dim);
Problem make_michalewicz(int dim);

/// Closed-form value plus Gaussian noise of problem.noise_std (drawn from rng when given).
double evaluate(const Problem& problem, const VectorXd& x, Rng* rng = nullptr);

/// Loads {name, dim, bounds: [[lo, hi], ...], command, known_optimum?} and returns a problem
/// that runs `command` once per evaluation: the point goes to stdin as a JSON array and a
/// single number is read back from stdout.
Problem load_problem_manifest(const std::string& path);
void register_user_problem(const Problem& problem);
void clear_user_problems();

/// Minimum over every observed value, replaced by the problem's known optimum when it has one.
double empirical_optimum(const std::vector<std::vector<double>>& observed_values, const std::optional<double>& known);

}  // namespace lmabo::bench
