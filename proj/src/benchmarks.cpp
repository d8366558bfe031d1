#include "lmabo/benchmarks.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "lmabo/errors.hpp"

namespace lmabo::bench {

namespace {

constexpr double kPi = std::numbers::pi;

gp::Bounds box(int dim, double lo, double hi) {
    return {VectorXd::Constant(dim, lo), VectorXd::Constant(dim, hi)};
}

gp::Bounds box2(double lo1, double hi1, double lo2, double hi2) {
    gp::Bounds b{VectorXd(2), VectorXd(2)};
    b.lower << lo1, lo2;
    b.upper << hi1, hi2;
    return b;
}

std::string lower_case(const std::string& s) {
    std::string out;
    for (char c : s) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

double beale(const VectorXd& x) {
    const double a = 1.5 - x[0] + x[0] * x[1];
    const double b = 2.25 - x[0] + x[0] * x[1] * x[1];
    const double c = 2.625 - x[0] + x[0] * x[1] * x[1] * x[1];
    return a * a + b * b + c * c;
}

double bukin(const VectorXd& x) {
    return 100.0 * std::sqrt(std::abs(x[1] - 0.01 * x[0] * x[0])) + 0.01 * std::abs(x[0] + 10.0);
}

double cosine8_negated(const VectorXd& x) {
    return -(0.1 * (5.0 * kPi * x.array()).cos().sum() - x.squaredNorm());
}

double drop_wave(const VectorXd& x) {
    const double r2 = x.squaredNorm();
    return -(1.0 + std::cos(12.0 * std::sqrt(r2))) / (0.5 * r2 + 2.0);
}

double egg_holder(const VectorXd& x) {
    const double a = x[1] + 47.0;
    return -a * std::sin(std::sqrt(std::abs(x[0] / 2.0 + a))) - x[0] * std::sin(std::sqrt(std::abs(x[0] - a)));
}

double hartmann6(const VectorXd& x) {
    static constexpr std::array<double, 4> alpha = {1.0, 1.2, 3.0, 3.2};
    static constexpr double a[4][6] = {{10, 3, 17, 3.5, 1.7, 8},
                                       {0.05, 10, 17, 0.1, 8, 14},
                                       {3, 3.5, 1.7, 10, 17, 8},
                                       {17, 8, 0.05, 10, 0.1, 14}};
    static constexpr double p[4][6] = {{1312, 1696, 5569, 124, 8283, 5886},
                                       {2329, 4135, 8307, 3736, 1004, 9991},
                                       {2348, 1451, 3522, 2883, 3047, 6650},
                                       {4047, 8828, 8732, 5743, 1091, 381}};
    double f = 0.0;
    for (int i = 0; i < 4; ++i) {
        double inner = 0.0;
        for (int j = 0; j < 6; ++j) {
            const double d = x[j] - 1e-4 * p[i][j];
            inner += a[i][j] * d * d;
        }
        f -= alpha[i] * std::exp(-inner);
    }
    return f;
}

double holder_table(const VectorXd& x) {
    return -std::abs(std::sin(x[0]) * std::cos(x[1]) * std::exp(std::abs(1.0 - x.norm() / kPi)));
}

double shekel10(const VectorXd& x) {
    static constexpr std::array<double, 10> beta = {1, 2, 2, 4, 4, 6, 3, 7, 5, 5};
    static constexpr double c[4][10] = {{4, 1, 8, 6, 3, 2, 5, 8, 6, 7},
                                        {4, 1, 8, 6, 7, 9, 3, 1, 2, 3.6},
                                        {4, 1, 8, 6, 3, 2, 5, 8, 6, 7},
                                        {4, 1, 8, 6, 7, 9, 3, 1, 2, 3.6}};
    double f = 0.0;
    for (int i = 0; i < 10; ++i) {
        double s = 0.1 * beta[static_cast<std::size_t>(i)];
        for (int j = 0; j < 4; ++j) {
            const double d = x[j] - c[j][i];
            s += d * d;
        }
        f -= 1.0 / s;
    }
    return f;
}

double six_hump_camel(const VectorXd& x) {
    const double x1 = x[0], x2 = x[1];
    return (4.0 - 2.1 * x1 * x1 + x1 * x1 * x1 * x1 / 3.0) * x1 * x1 + x1 * x2 + (-4.0 + 4.0 * x2 * x2) * x2 * x2;
}

Problem make(std::string name, int dim, gp::Bounds bounds, std::function<double(const VectorXd&)> fn,
             std::optional<double> optimum, std::optional<VectorXd> optimizer = std::nullopt) {
    Problem p;
    p.name = std::move(name);
    p.dim = dim;
    p.bounds = std::move(bounds);
    p.fn = std::move(fn);
    p.known_optimum = optimum;
    p.optimizer = std::move(optimizer);
    return p;
}

VectorXd vec2(double a, double b) {
    VectorXd v(2);
    v << a, b;
    return v;
}

std::vector<Problem> build_registry() {
    std::vector<Problem> r;
    r.push_back(make_ackley(50));
    r.push_back(make("Beale", 2, box(2, -4.5, 4.5), beale, 0.0, vec2(3.0, 0.5)));
    r.push_back(make("Bukin", 2, box2(-15.0, -5.0, -3.0, 3.0), bukin, 0.0, vec2(-10.0, 1.0)));
    r.push_back(make("Cosine8", 8, box(8, -1.0, 1.0), cosine8_negated, -0.8, VectorXd::Zero(8)));
    r.push_back(make_dixon_price(15));
    r.push_back(make("DropWave", 2, box(2, -5.12, 5.12), drop_wave, -1.0, VectorXd::Zero(2)));
    r.push_back(make("EggHolder", 2, box(2, -512.0, 512.0), egg_holder, -959.640662720851, vec2(512.0, 404.231805)));
    r.push_back(make_griewank(9));
    VectorXd h6(6);
    h6 << 0.20168951, 0.15001069, 0.47687397, 0.27533243, 0.31165162, 0.65730053;
    r.push_back(make("Hartmann", 6, box(6, 0.0, 1.0), hartmann6, -3.3223680114155147, h6));
    r.push_back(make("HolderTable", 2, box(2, -10.0, 10.0), holder_table, -19.20850256788675,
                     vec2(8.05502347, 9.66459003)));
    r.push_back(make_levy(13));
    r.push_back(make_michalewicz(10));
    r.push_back(make_styblinski_tang(21));
    VectorXd s4(4);
    s4 << 4.00074687, 3.99950949, 4.00074687, 3.99950949;
    r.push_back(make("Shekel", 4, box(4, 0.0, 10.0), shekel10, -10.53644315348353, s4));
    r.push_back(make("SixHumpCamel", 2, box2(-3.0, 3.0, -2.0, 2.0), six_hump_camel, -1.0316284534898774,
                     vec2(0.08984201, -0.71265641)));
    return r;
}

std::mutex& user_mutex() {
    static std::mutex m;
    return m;
}

std::vector<Problem>& user_problems() {
    static std::vector<Problem> v;
    return v;
}

std::string run_command(const std::string& command, const std::string& input) {
    namespace fs = std::filesystem;
    static std::mutex counter_mutex;
    static unsigned long counter = 0;
    unsigned long id;
    {
        std::lock_guard lock(counter_mutex);
        id = counter++;
    }
    const fs::path in = fs::temp_directory_path() /
                        ("lmabo_eval_" + std::to_string(static_cast<long>(::getpid())) + "_" + std::to_string(id) + ".json");
    {
        std::ofstream f(in);
        if (!f) throw IoError("cannot write evaluator input " + in.string());
        f << input;
    }
    const std::string full = "(" + command + ") < '" + in.string() + "'";
    FILE* pipe = ::popen(full.c_str(), "r");
    if (!pipe) {
        fs::remove(in);
        throw EvaluationError("cannot start evaluator: " + command);
    }
    std::string out;
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
    const int status = ::pclose(pipe);
    std::error_code ec;
    fs::remove(in, ec);
    if (status != 0) throw EvaluationError("evaluator exited with status " + std::to_string(status) + ": " + command);
    return out;
}

}  // namespace

Problem make_ackley(int dim) {
    if (dim < 1) throw ArgumentError("Ackley needs dim >= 1");
    auto fn = [](const VectorXd& x) {
        const double n = static_cast<double>(x.size());
        const double a = 20.0, b = 0.2, c = 2.0 * kPi;
        return -a * std::exp(-b * std::sqrt(x.squaredNorm() / n)) - std::exp((c * x.array()).cos().sum() / n) + a +
               std::numbers::e;
    };
    return make("Ackley", dim, box(dim, -32.768, 32.768), fn, 0.0, VectorXd::Zero(dim));
}

Problem make_griewank(int dim) {
    if (dim < 1) throw ArgumentError("Griewank needs dim >= 1");
    auto fn = [](const VectorXd& x) {
        double prod = 1.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) prod *= std::cos(x[i] / std::sqrt(static_cast<double>(i + 1)));
        return x.squaredNorm() / 4000.0 - prod + 1.0;
    };
    return make("Griewank", dim, box(dim, -600.0, 600.0), fn, 0.0, VectorXd::Zero(dim));
}

Problem make_levy(int dim) {
    if (dim < 1) throw ArgumentError("Levy needs dim >= 1");
    auto fn = [](const VectorXd& x) {
        const Eigen::ArrayXd w = 1.0 + (x.array() - 1.0) / 4.0;
        const Eigen::Index d = x.size();
        const double s0 = std::sin(kPi * w[0]);
        double f = s0 * s0;
        for (Eigen::Index i = 0; i + 1 < d; ++i) {
            const double s = std::sin(kPi * w[i] + 1.0);
            f += (w[i] - 1.0) * (w[i] - 1.0) * (1.0 + 10.0 * s * s);
        }
        const double sd = std::sin(2.0 * kPi * w[d - 1]);
        f += (w[d - 1] - 1.0) * (w[d - 1] - 1.0) * (1.0 + sd * sd);
        return f;
    };
    return make("Levy", dim, box(dim, -10.0, 10.0), fn, 0.0, VectorXd::Ones(dim));
}

Problem make_dixon_price(int dim) {
    if (dim < 1) throw ArgumentError("DixonPrice needs dim >= 1");
    auto fn = [](const VectorXd& x) {
        double f = (x[0] - 1.0) * (x[0] - 1.0);
        for (Eigen::Index i = 1; i < x.size(); ++i) {
            const double t = 2.0 * x[i] * x[i] - x[i - 1];
            f += static_cast<double>(i + 1) * t * t;
        }
        return f;
    };
    VectorXd opt(dim);
    for (int i = 0; i < dim; ++i) {
        const double p = std::pow(2.0, i + 1);
        opt[i] = std::pow(2.0, -(p - 2.0) / p);
    }
    return make("DixonPrice", dim, box(dim, -10.0, 10.0), fn, 0.0, opt);
}

Problem make_styblinski_tang(int dim) {
    if (dim < 1) throw ArgumentError("StyblinskiTang needs dim >= 1");
    auto fn = [](const VectorXd& x) {
        const Eigen::ArrayXd a = x.array();
        return 0.5 * (a.pow(4) - 16.0 * a.square() + 5.0 * a).sum();
    };
    // Per-coordinate minimizer of 0.5 (t^4 - 16 t^2 + 5 t): root of 4t^3 - 32t + 5 near -2.9035.
    double t = -2.9;
    for (int k = 0; k < 50; ++k) t -= (4 * t * t * t - 32 * t + 5) / (12 * t * t - 32);
    const double per_dim = 0.5 * (t * t * t * t - 16 * t * t + 5 * t);
    return make("StyblinskiTang", dim, box(dim, -5.0, 5.0), fn, per_dim * dim, VectorXd::Constant(dim, t));
}

Problem make_michalewicz(int dim) {
    if (dim < 1) throw ArgumentError("Michalewicz needs dim >= 1");
    auto term = [](double xi, int i) {
        const double s = std::sin(static_cast<double>(i) * xi * xi / kPi);
        return -std::sin(xi) * std::pow(s, 20);
    };
    auto fn = [term](const VectorXd& x) {
        double f = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) f += term(x[i], static_cast<int>(i + 1));
        return f;
    };
    // Separable: the optimum is the sum of the 1-D minima, each refined by golden-section
    // search around the best point of a fine grid.
    double total = 0.0;
    VectorXd opt(dim);
    for (int i = 1; i <= dim; ++i) {
        const int grid = 200000;
        double best_x = 0.0, best = 0.0;
        for (int k = 0; k <= grid; ++k) {
            const double xk = kPi * k / grid;
            const double v = term(xk, i);
            if (v < best) {
                best = v;
                best_x = xk;
            }
        }
        double lo = std::max(0.0, best_x - kPi / grid), hi = std::min(kPi, best_x + kPi / grid);
        const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
        for (int k = 0; k < 100; ++k) {
            const double m1 = hi - gr * (hi - lo), m2 = lo + gr * (hi - lo);
            if (term(m1, i) < term(m2, i)) hi = m2;
            else lo = m1;
        }
        opt[i - 1] = 0.5 * (lo + hi);
        total += term(opt[i - 1], i);
    }
    return make("Michalewicz", dim, box(dim, 0.0, kPi), fn, total, opt);
}

const std::vector<Problem>& problem_registry() {
    static const std::vector<Problem> registry = build_registry();
    return registry;
}

std::vector<std::string> registry_names() {
    std::vector<std::string> names;
    for (const auto& p : problem_registry()) names.push_back(p.name);
    return names;
}

Problem find_problem(const std::string& name) {
    const std::string key = lower_case(name);
    if (key == "ackley-4d") {
        Problem p = make_ackley(4);
        p.name = "Ackley-4D";
        return p;
    }
    if (key == "griewank-2d") {
        Problem p = make_griewank(2);
        p.name = "Griewank-2D";
        return p;
    }
    if (key == "hartmann-6" || key == "hartmann6") return find_problem("Hartmann");
    for (const auto& p : problem_registry())
        if (lower_case(p.name) == key) return p;
    {
        std::lock_guard lock(user_mutex());
        for (const auto& p : user_problems())
            if (lower_case(p.name) == key) return p;
    }
    throw NotFoundError("unknown problem: " + name);
}

double evaluate(const Problem& problem, const VectorXd& x, Rng* rng) {
    if (x.size() != problem.dim)
        throw ArgumentError(problem.name + ": expected " + std::to_string(problem.dim) + " inputs, got " +
                            std::to_string(x.size()));
    if (!problem.bounds.contains(x, 1e-9)) throw ArgumentError(problem.name + ": point outside the bounds");
    double y = problem.fn(x);
    if (problem.noise_std > 0.0) {
        if (!rng) throw ArgumentError(problem.name + ": noisy evaluation needs an rng");
        y += problem.noise_std * standard_normal(*rng);
    }
    if (!std::isfinite(y)) throw EvaluationError(problem.name + ": non-finite objective value");
    return y;
}

Problem load_problem_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read problem manifest " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("problem manifest " + path + ": " + e.what());
    }
    for (const char* key : {"name", "dim", "bounds", "command"})
        if (!j.contains(key)) throw ConfigError("problem manifest " + path + ": missing field '" + key + "'");
    Problem p;
    p.name = j.at("name").get<std::string>();
    p.dim = j.at("dim").get<int>();
    if (p.dim < 1) throw ConfigError("problem manifest " + path + ": dim must be >= 1");
    const auto& b = j.at("bounds");
    if (!b.is_array() || static_cast<int>(b.size()) != p.dim)
        throw ConfigError("problem manifest " + path + ": bounds must list one [lower, upper] pair per dimension");
    p.bounds = {VectorXd(p.dim), VectorXd(p.dim)};
    for (int i = 0; i < p.dim; ++i) {
        p.bounds.lower[i] = b[static_cast<std::size_t>(i)].at(0).get<double>();
        p.bounds.upper[i] = b[static_cast<std::size_t>(i)].at(1).get<double>();
    }
    try {
        p.bounds.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError("problem manifest " + path + ": " + e.what());
    }
    if (j.contains("known_optimum") && !j.at("known_optimum").is_null())
        p.known_optimum = j.at("known_optimum").get<double>();
    if (j.contains("noise_std")) p.noise_std = j.at("noise_std").get<double>();
    const std::string command = j.at("command").get<std::string>();
    p.fn = [command, name = p.name](const VectorXd& x) {
        nlohmann::json arr = nlohmann::json::array();
        for (Eigen::Index i = 0; i < x.size(); ++i) arr.push_back(x[i]);
        const std::string out = run_command(command, arr.dump());
        std::istringstream is(out);
        double y;
        if (!(is >> y)) throw EvaluationError(name + ": evaluator did not print a number");
        return y;
    };
    return p;
}

void register_user_problem(const Problem& problem) {
    std::lock_guard lock(user_mutex());
    for (auto& p : user_problems()) {
        if (lower_case(p.name) == lower_case(problem.name)) {
            p = problem;
            return;
        }
    }
    user_problems().push_back(problem);
}

void clear_user_problems() {
    std::lock_guard lock(user_mutex());
    user_problems().clear();
}

double empirical_optimum(const std::vector<std::vector<double>>& observed_values, const std::optional<double>& known) {
    if (known) return *known;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& v : observed_values)
        for (double y : v) best = std::min(best, y);
    if (!std::isfinite(best)) throw DataError("empirical optimum: no observations and no known optimum");
    return best;
}

}  // namespace lmabo::bench
