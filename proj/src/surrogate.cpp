#include "lmabo/surrogate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Cholesky>

#include "lmabo/errors.hpp"
#include "lmabo/log.hpp"

namespace lmabo::gp {

namespace {

constexpr double kSqrt5 = 2.23606797749978969641;
constexpr double kLog2Pi = 1.83787706640934548356;

void check_dim(Index a, Index b, const char* what) {
    if (a != b) {
        std::ostringstream os;
        os << what << ": dimension mismatch (" << a << " vs " << b << ")";
        throw ArgumentError(os.str());
    }
}

/// Kernel value as a function of squared scaled distance r2.
inline double kernel_from_r2(KernelFamily family, double outputscale, double r2) {
    if (family == KernelFamily::SquaredExponential) return outputscale * std::exp(-0.5 * r2);
    const double r = std::sqrt(r2);
    return outputscale * (1.0 + kSqrt5 * r + 5.0 / 3.0 * r2) * std::exp(-kSqrt5 * r);
}

/// c(r) such that dk/dlog(l_j) = c(r) * delta_j^2 / l_j^2 and
/// dk/du_j = -c(r) * delta_j / l_j^2.
inline double kernel_radial_factor(KernelFamily family, double outputscale, double r2) {
    if (family == KernelFamily::SquaredExponential) return outputscale * std::exp(-0.5 * r2);
    const double r = std::sqrt(r2);
    return 5.0 / 3.0 * outputscale * (1.0 + kSqrt5 * r) * std::exp(-kSqrt5 * r);
}

struct TrainingFactor {
    MatrixXd chol;
    double jitter = 0.0;
};

double pivot_threshold(double jitter, double scale) { return std::max(3.0 * jitter, 1e-10 * scale); }

/// Cholesky of a training covariance. A level is accepted only when the smallest
/// pivot clears the jitter it added; otherwise an exactly singular matrix would be
/// "repaired" by the jitter alone and silently factorized.
TrainingFactor factorize_training(const MatrixXd& k) {
    const Index n = k.rows();
    const double scale = std::max(k.diagonal().maxCoeff(), 1e-300);
    double last = 0.0;
    for (double jitter : kTrainingJitterLadder) {
        last = jitter;
        MatrixXd kj = k;
        kj.diagonal().array() += jitter;
        Eigen::LLT<MatrixXd> llt(kj);
        if (llt.info() != Eigen::Success) continue;
        MatrixXd l = llt.matrixL();
        const double min_pivot = l.diagonal().array().square().minCoeff();
        if (!std::isfinite(min_pivot) || min_pivot <= pivot_threshold(jitter, scale)) continue;
        if (jitter > 0.0) {
            std::ostringstream os;
            os << "training covariance (n=" << n << ") needed jitter " << jitter;
            log::debug(os.str());
        }
        return {std::move(l), jitter};
    }
    throw NumericalError("training covariance is not positive definite after jitter escalation", last);
}

struct LmlParts {
    double value = 0.0;
    VectorXd gradient;
};

LmlParts lml_unit(const KernelParams& p, const MatrixXd& x, const VectorXd& y, bool with_gradient) {
    const Index n = x.rows();
    const Index d = x.cols();
    MatrixXd ks = kernel_matrix(p, x, x);
    MatrixXd k = ks;
    k.diagonal().array() += p.noise_variance;
    TrainingFactor f = factorize_training(k);
    const auto l = f.chol.triangularView<Eigen::Lower>();
    VectorXd alpha = l.solve(y);
    const double quad = alpha.squaredNorm();
    f.chol.transpose().triangularView<Eigen::Upper>().solveInPlace(alpha);

    LmlParts out;
    out.value = -0.5 * quad - f.chol.diagonal().array().log().sum() - 0.5 * static_cast<double>(n) * kLog2Pi;
    if (!with_gradient) return out;

    MatrixXd inv = MatrixXd::Identity(n, n);
    l.solveInPlace(inv);
    MatrixXd a = alpha * alpha.transpose() - inv.transpose() * inv;

    out.gradient = VectorXd::Zero(d + 2);
    const VectorXd inv_l2 = p.lengthscales.array().square().inverse();
    VectorXd r2_terms(d);
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
            double r2 = 0.0;
            for (Index m = 0; m < d; ++m) {
                const double delta = x(i, m) - x(j, m);
                r2_terms[m] = delta * delta * inv_l2[m];
                r2 += r2_terms[m];
            }
            const double c = kernel_radial_factor(p.family, p.outputscale, r2) * a(i, j);
            // Off-diagonal pairs appear twice in the trace; the 1/2 cancels.
            for (Index m = 0; m < d; ++m) out.gradient[m] += c * r2_terms[m];
        }
    }
    out.gradient[d] = 0.5 * (a.array() * ks.array()).sum();
    out.gradient[d + 1] = 0.5 * p.noise_variance * a.trace();
    return out;
}

double normal_log_density(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
}

}  // namespace

const char* to_string(KernelFamily family) {
    return family == KernelFamily::Matern52 ? "matern52" : "rbf";
}

KernelFamily kernel_family_from_string(const std::string& name) {
    std::string s;
    for (char c : name) {
        if (c != '-' && c != '_' && c != '/' && c != ' ') s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (s == "matern52" || s == "matern") return KernelFamily::Matern52;
    if (s == "rbf" || s == "se" || s == "squaredexponential") return KernelFamily::SquaredExponential;
    throw ArgumentError("unknown kernel family: " + name);
}

bool Bounds::contains(const VectorXd& x, double tol) const {
    if (x.size() != dim()) return false;
    for (Index i = 0; i < dim(); ++i) {
        const double slack = tol * std::max(1.0, upper[i] - lower[i]);
        if (!(x[i] >= lower[i] - slack && x[i] <= upper[i] + slack)) return false;
    }
    return true;
}

void Bounds::validate() const {
    if (lower.size() == 0) throw ArgumentError("bounds must have at least one dimension");
    check_dim(lower.size(), upper.size(), "bounds");
    for (Index i = 0; i < dim(); ++i) {
        if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || !(upper[i] > lower[i]))
            throw ArgumentError("bounds: upper must exceed lower in every dimension");
    }
}

Bounds Bounds::unit(Index dim) { return {VectorXd::Zero(dim), VectorXd::Ones(dim)}; }

void Dataset::validate() const {
    bounds.validate();
    check_dim(points.cols(), bounds.dim(), "dataset points");
    if (points.rows() != values.size()) throw ArgumentError("dataset: points and values differ in length");
    if (!values.allFinite()) throw ArgumentError("dataset: non-finite objective value");
    for (Index i = 0; i < points.rows(); ++i) {
        if (!bounds.contains(points.row(i).transpose(), 1e-9))
            throw ArgumentError("dataset: point " + std::to_string(i) + " lies outside the bounds");
    }
}

void Dataset::append(const VectorXd& x, double y) {
    if (points.rows() == 0 && points.cols() == 0) points.resize(0, x.size());
    check_dim(x.size(), points.cols(), "dataset append");
    points.conservativeResize(points.rows() + 1, Eigen::NoChange);
    points.row(points.rows() - 1) = x.transpose();
    values.conservativeResize(values.size() + 1);
    values[values.size() - 1] = y;
}

void KernelParams::validate() const {
    if (lengthscales.size() == 0) throw ArgumentError("kernel needs at least one lengthscale");
    if (!(lengthscales.array() > 0.0).all() || !lengthscales.allFinite())
        throw ArgumentError("lengthscales must be positive and finite");
    if (!(outputscale > 0.0) || !std::isfinite(outputscale)) throw ArgumentError("outputscale must be positive");
    if (!(noise_variance >= 0.0) || !std::isfinite(noise_variance))
        throw ArgumentError("noise variance must be non-negative");
}

VectorXd KernelParams::to_log() const {
    VectorXd theta(dim() + 2);
    theta.head(dim()) = lengthscales.array().log();
    theta[dim()] = std::log(outputscale);
    theta[dim() + 1] = std::log(noise_variance);
    return theta;
}

KernelParams KernelParams::from_log(const VectorXd& theta, KernelFamily family) {
    if (theta.size() < 3) throw ArgumentError("log-parameter vector too short");
    const Index d = theta.size() - 2;
    KernelParams p;
    p.lengthscales = theta.head(d).array().exp();
    p.outputscale = std::exp(theta[d]);
    p.noise_variance = std::exp(theta[d + 1]);
    p.family = family;
    return p;
}

double kernel_eval(const KernelParams& params, const VectorXd& x, const VectorXd& x2) {
    check_dim(x.size(), x2.size(), "kernel_eval");
    check_dim(x.size(), params.dim(), "kernel_eval");
    if (!(params.lengthscales.array() > 0.0).all()) throw ArgumentError("lengthscales must be positive");
    const double r2 = (x - x2).cwiseQuotient(params.lengthscales).squaredNorm();
    return kernel_from_r2(params.family, params.outputscale, r2);
}

MatrixXd kernel_matrix(const KernelParams& params, const MatrixXd& a, const MatrixXd& b) {
    check_dim(a.cols(), params.dim(), "kernel_matrix");
    check_dim(b.cols(), params.dim(), "kernel_matrix");
    if (!(params.lengthscales.array() > 0.0).all()) throw ArgumentError("lengthscales must be positive");
    const VectorXd inv = params.lengthscales.cwiseInverse();
    const MatrixXd as = a * inv.asDiagonal();
    const MatrixXd bs = b * inv.asDiagonal();
    MatrixXd k(a.rows(), b.rows());
    const Index d = params.dim();
    for (Index j = 0; j < b.rows(); ++j) {
        for (Index i = 0; i < a.rows(); ++i) {
            double r2 = 0.0;
            for (Index m = 0; m < d; ++m) {
                const double delta = as(i, m) - bs(j, m);
                r2 += delta * delta;
            }
            k(i, j) = kernel_from_r2(params.family, params.outputscale, r2);
        }
    }
    return k;
}

MatrixXd InputTransform::to_unit_rows(const MatrixXd& x) const {
    MatrixXd u = x.rowwise() - lower.transpose();
    return u.array().rowwise() / range.transpose().array();
}

InputTransform InputTransform::from_bounds(const Bounds& bounds) {
    bounds.validate();
    return {bounds.lower, bounds.upper - bounds.lower};
}

OutputTransform OutputTransform::fit(const VectorXd& values) {
    OutputTransform t;
    if (values.size() == 0) return t;
    t.mean = values.mean();
    if (values.size() > 1) {
        const double ss = (values.array() - t.mean).square().sum();
        const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
        if (sd > 0.0 && std::isfinite(sd)) t.std = sd;
    }
    return t;
}

GPModel GPModel::build(Dataset dataset, KernelParams params, std::optional<OutputTransform> output,
                       std::optional<VectorXd> noise_diagonal) {
    dataset.validate();
    params.validate();
    if (dataset.size() < 1) throw ArgumentError("GP needs at least one observation");
    check_dim(dataset.dim(), params.dim(), "GP build");

    GPModel m;
    m.input_ = InputTransform::from_bounds(dataset.bounds);
    m.output_ = output ? *output : OutputTransform::fit(dataset.values);
    m.unit_points_ = m.input_.to_unit_rows(dataset.points);
    m.standardized_ = (dataset.values.array() - m.output_.mean) / m.output_.std;
    if (noise_diagonal) {
        if (noise_diagonal->size() != dataset.size()) throw ArgumentError("noise diagonal length mismatch");
        if (!(noise_diagonal->array() >= 0.0).all()) throw ArgumentError("noise diagonal must be non-negative");
        m.noise_diagonal_ = *noise_diagonal;
    } else {
        m.noise_diagonal_ = VectorXd::Constant(dataset.size(), params.noise_variance);
    }
    m.dataset_ = std::move(dataset);
    m.params_ = std::move(params);

    MatrixXd k = kernel_matrix(m.params_, m.unit_points_, m.unit_points_);
    k.diagonal() += m.noise_diagonal_;
    TrainingFactor f = factorize_training(k);
    m.chol_ = std::move(f.chol);
    m.jitter_ = f.jitter;
    m.solve_weights();
    return m;
}

void GPModel::solve_weights() {
    const auto l = chol_.triangularView<Eigen::Lower>();
    weights_ = l.solve(standardized_);
    chol_.transpose().triangularView<Eigen::Upper>().solveInPlace(weights_);
}

PosteriorPrediction GPModel::predict_unit(const MatrixXd& u) const {
    check_dim(u.cols(), dim(), "predict");
    const MatrixXd ks = kernel_matrix(params_, unit_points_, u);  // n x m
    PosteriorPrediction out;
    out.mean = ks.transpose() * weights_;
    const MatrixXd v = chol_.triangularView<Eigen::Lower>().solve(ks);
    out.variance = (params_.outputscale - v.colwise().squaredNorm().array()).cwiseMax(0.0).matrix().transpose();
    return out;
}

PointPosterior GPModel::predict_unit_with_gradient(const VectorXd& u) const {
    check_dim(u.size(), dim(), "predict");
    const Index n = size();
    const Index d = dim();
    const VectorXd inv_l2 = params_.lengthscales.array().square().inverse();
    VectorXd k(n);
    MatrixXd dk(n, d);  // dk_i/du
    for (Index i = 0; i < n; ++i) {
        VectorXd delta = u - unit_points_.row(i).transpose();
        const double r2 = delta.cwiseProduct(delta).dot(inv_l2);
        k[i] = kernel_from_r2(params_.family, params_.outputscale, r2);
        const double c = kernel_radial_factor(params_.family, params_.outputscale, r2);
        dk.row(i) = (-c * delta.cwiseProduct(inv_l2)).transpose();
    }
    PointPosterior out;
    out.mean = k.dot(weights_);
    out.mean_gradient = dk.transpose() * weights_;
    const auto l = chol_.triangularView<Eigen::Lower>();
    VectorXd v = l.solve(k);
    out.variance = std::max(params_.outputscale - v.squaredNorm(), 0.0);
    chol_.transpose().triangularView<Eigen::Upper>().solveInPlace(v);
    out.variance_gradient = -2.0 * dk.transpose() * v;
    return out;
}

MatrixXd GPModel::covariance_unit(const MatrixXd& u) const {
    check_dim(u.cols(), dim(), "covariance");
    const MatrixXd ks = kernel_matrix(params_, unit_points_, u);
    const MatrixXd v = chol_.triangularView<Eigen::Lower>().solve(ks);
    MatrixXd cov = kernel_matrix(params_, u, u);
    cov.noalias() -= v.transpose() * v;
    return 0.5 * (cov + cov.transpose());
}

VectorXd GPModel::cross_covariance_unit(const MatrixXd& u, const VectorXd& x) const {
    check_dim(u.cols(), dim(), "cross covariance");
    check_dim(x.size(), dim(), "cross covariance");
    const auto l = chol_.triangularView<Eigen::Lower>();
    const MatrixXd vu = l.solve(kernel_matrix(params_, unit_points_, u));
    const VectorXd vx = l.solve(kernel_matrix(params_, unit_points_, x.transpose()).col(0));
    return kernel_matrix(params_, u, x.transpose()).col(0) - vu.transpose() * vx;
}

GPModel GPModel::condition_unit(const MatrixXd& u, const VectorXd& values) const {
    if (u.rows() == 0) return *this;
    check_dim(u.cols(), dim(), "condition");
    if (u.rows() != values.size()) throw ArgumentError("condition: points and values differ in length");

    GPModel m = *this;
    const double scale = params_.outputscale + (noise_diagonal_.size() ? noise_diagonal_.maxCoeff() : 0.0);
    for (Index r = 0; r < u.rows(); ++r) {
        const VectorXd x = u.row(r).transpose();
        const Index n = m.size();
        const VectorXd kx = kernel_matrix(m.params_, m.unit_points_, x.transpose()).col(0);
        const VectorXd l = m.chol_.triangularView<Eigen::Lower>().solve(kx);
        const double pivot = params_.outputscale + m.jitter_ - l.squaredNorm();
        if (!(pivot > pivot_threshold(m.jitter_, scale)))
            throw NumericalError("conditioning point duplicates an existing noiseless observation", m.jitter_);

        MatrixXd chol = MatrixXd::Zero(n + 1, n + 1);
        chol.topLeftCorner(n, n) = m.chol_;
        chol.block(n, 0, 1, n) = l.transpose();
        chol(n, n) = std::sqrt(pivot);
        m.chol_ = std::move(chol);

        m.unit_points_.conservativeResize(n + 1, Eigen::NoChange);
        m.unit_points_.row(n) = x.transpose();
        m.standardized_.conservativeResize(n + 1);
        m.standardized_[n] = values[r];
        m.noise_diagonal_.conservativeResize(n + 1);
        m.noise_diagonal_[n] = 0.0;
        m.dataset_.points.conservativeResize(n + 1, Eigen::NoChange);
        m.dataset_.points.row(n) = m.input_.from_unit(x).transpose();
        m.dataset_.values.conservativeResize(n + 1);
        m.dataset_.values[n] = m.output_.destandardize(values[r]);
    }
    m.solve_weights();
    return m;
}

double GPModel::shortest_distance_last() const {
    const Index n = size();
    if (n < 2) return 0.0;
    const auto last = unit_points_.row(n - 1);
    double best = std::numeric_limits<double>::infinity();
    for (Index i = 0; i + 1 < n; ++i) best = std::min(best, (unit_points_.row(i) - last).norm());
    return best;
}

GPModel GPModel::with_dataset(Dataset dataset) const { return build(std::move(dataset), params_); }

LogMarginalLikelihood log_marginal_likelihood(const KernelParams& params, const Dataset& dataset) {
    dataset.validate();
    params.validate();
    if (dataset.size() < 1) throw ArgumentError("log marginal likelihood needs data");
    check_dim(dataset.dim(), params.dim(), "log marginal likelihood");
    const InputTransform in = InputTransform::from_bounds(dataset.bounds);
    const OutputTransform out = OutputTransform::fit(dataset.values);
    const VectorXd y = (dataset.values.array() - out.mean) / out.std;
    LmlParts parts = lml_unit(params, in.to_unit_rows(dataset.points), y, true);
    return {parts.value, std::move(parts.gradient)};
}

double log_prior(const VectorXd& theta, Index dim, bool include_noise, VectorXd* gradient) {
    const double ls_mean = std::numbers::sqrt2 + 0.5 * std::log(static_cast<double>(dim));
    const double ls_sd = std::sqrt(3.0);
    double lp = 0.0;
    if (gradient) *gradient = VectorXd::Zero(theta.size());
    for (Index j = 0; j < dim; ++j) {
        lp += normal_log_density(theta[j], ls_mean, ls_sd);
        if (gradient) (*gradient)[j] = -(theta[j] - ls_mean) / (ls_sd * ls_sd);
    }
    lp += normal_log_density(theta[dim], 0.0, 1.0);
    if (gradient) (*gradient)[dim] = -theta[dim];
    if (include_noise) {
        lp += normal_log_density(theta[dim + 1], -4.0, 1.0);
        if (gradient) (*gradient)[dim + 1] = -(theta[dim + 1] + 4.0);
    }
    return lp;
}

GPModel fit(const Dataset& dataset, const FitConfig& config, FitReport* report) {
    dataset.validate();
    if (dataset.size() < 2) throw ArgumentError("fitting needs at least two observations");
    const Index d = dataset.dim();
    const bool learn_noise = !config.fixed_noise.has_value();
    if (config.fixed_noise && !(*config.fixed_noise >= 0.0)) throw ArgumentError("fixed noise must be >= 0");

    const InputTransform in = InputTransform::from_bounds(dataset.bounds);
    const OutputTransform out = OutputTransform::fit(dataset.values);
    const MatrixXd x = in.to_unit_rows(dataset.points);
    const VectorXd y = (dataset.values.array() - out.mean) / out.std;

    const Index np = learn_noise ? d + 2 : d + 1;
    VectorXd lower(np), upper(np);
    lower.head(d).setConstant(config.min_log_lengthscale);
    upper.head(d).setConstant(config.max_log_lengthscale);
    lower[d] = config.min_log_outputscale;
    upper[d] = config.max_log_outputscale;
    if (learn_noise) {
        lower[d + 1] = config.min_log_noise;
        upper[d + 1] = config.max_log_noise;
    }

    auto to_params = [&](const VectorXd& th) {
        KernelParams p;
        p.family = config.family;
        p.lengthscales = th.head(d).array().exp();
        p.outputscale = std::exp(th[d]);
        p.noise_variance = learn_noise ? std::exp(th[d + 1]) : *config.fixed_noise;
        return p;
    };

    std::string last_error = "no restart produced a finite objective";
    // Negative log posterior and its gradient.
    auto objective = [&](const VectorXd& th, VectorXd& grad) -> double {
        try {
            LmlParts lml = lml_unit(to_params(th), x, y, true);
            VectorXd gp;
            const double lp = log_prior(th, d, learn_noise, &gp);
            grad = -(lml.gradient.head(np) + gp);
            return -(lml.value + lp);
        } catch (const NumericalError& e) {
            last_error = e.what();
            grad = VectorXd::Zero(np);
            return std::numeric_limits<double>::infinity();
        }
    };

    std::vector<VectorXd> starts;
    Rng rng(derive_seed(config.seed, {0x6670ull}));
    const double ls_mean = std::numbers::sqrt2 + 0.5 * std::log(static_cast<double>(d));
    for (int s = 0; s < std::max(config.n_restarts, 1); ++s) {
        VectorXd th(np);
        for (Index j = 0; j < d; ++j) th[j] = ls_mean + std::sqrt(3.0) * standard_normal(rng);
        th[d] = standard_normal(rng);
        if (learn_noise) th[d + 1] = -4.0 + standard_normal(rng);
        starts.push_back(th.cwiseMax(lower).cwiseMin(upper));
    }
    bool warm = false;
    if (config.warm_start && config.warm_start->dim() == d) {
        VectorXd th(np);
        th.head(d) = config.warm_start->lengthscales.array().log();
        th[d] = std::log(config.warm_start->outputscale);
        if (learn_noise) th[d + 1] = std::log(std::max(config.warm_start->noise_variance, 1e-300));
        if (th.allFinite()) {
            starts.insert(starts.begin(), th.cwiseMax(lower).cwiseMin(upper));
            warm = true;
        }
    }

    FitReport rep;
    rep.used_warm_start = warm;
    VectorXd best_theta;
    double best = std::numeric_limits<double>::infinity();
    VectorXd scratch(np);
    for (std::size_t s = 0; s < starts.size(); ++s) {
        const double f0 = objective(starts[s], scratch);
        rep.initial_objectives.push_back(-f0);
        optim::BoxQnResult r;
        if (std::isfinite(f0)) {
            r = optim::minimize_box(objective, starts[s], lower, upper, config.optimizer);
        } else {
            r.x = starts[s];
            r.value = f0;
        }
        rep.final_objectives.push_back(-r.value);
        if (std::isfinite(r.value) && r.value < best) {
            best = r.value;
            best_theta = r.x;
            rep.best_start = static_cast<int>(s);
        }
    }
    if (!std::isfinite(best)) throw FitError("GP hyperparameter fit failed on every restart: " + last_error);
    rep.best_objective = -best;
    if (report) *report = rep;

    Dataset data = dataset;
    return GPModel::build(std::move(data), to_params(best_theta), out);
}

PosteriorPrediction posterior(const GPModel& model, const MatrixXd& points, bool destandardize) {
    check_dim(points.cols(), model.dim(), "posterior");
    MatrixXd clamped = points;
    const Bounds& b = model.dataset().bounds;
    for (Index i = 0; i < points.rows(); ++i) {
        if (!b.contains(points.row(i).transpose(), 1e-9)) {
            log::warn("posterior query outside bounds; clamped");
            clamped.row(i) = b.clamp(points.row(i).transpose()).transpose();
        }
    }
    PosteriorPrediction p = model.predict_unit(model.input_transform().to_unit_rows(clamped));
    if (destandardize) {
        const auto& t = model.output_transform();
        p.mean = (p.mean.array() * t.std + t.mean).matrix();
        p.variance *= t.std * t.std;
    }
    return p;
}

MatrixXd jittered_cholesky(const MatrixXd& covariance, double scale, double* jitter_used) {
    double jitter = 1e-12;
    for (; jitter <= 1.0001e-4; jitter *= 10.0) {
        MatrixXd c = covariance;
        c.diagonal().array() += jitter * scale;
        Eigen::LLT<MatrixXd> llt(c);
        if (llt.info() == Eigen::Success) {
            if (jitter_used) *jitter_used = jitter * scale;
            return llt.matrixL();
        }
    }
    throw NumericalError("predictive covariance is not factorizable after jitter escalation", 1e-4 * scale);
}

MatrixXd sample_joint_unit(const GPModel& model, const MatrixXd& u, int n_samples, Rng& rng) {
    if (u.rows() == 0) throw ArgumentError("sample_joint needs at least one candidate");
    if (n_samples < 1) throw ArgumentError("sample_joint needs n_samples >= 1");
    const PosteriorPrediction pred = model.predict_unit(u);
    const MatrixXd l = jittered_cholesky(model.covariance_unit(u), model.params().outputscale);
    const MatrixXd z = standard_normal_matrix(u.rows(), n_samples, rng);
    MatrixXd f = l.triangularView<Eigen::Lower>() * z;
    f.colwise() += pred.mean;
    return f.transpose();
}

MatrixXd sample_joint(const GPModel& model, const MatrixXd& candidates, int n_samples, Rng& rng) {
    check_dim(candidates.cols(), model.dim(), "sample_joint");
    const MatrixXd u = model.input_transform().to_unit_rows(candidates);
    MatrixXd s = sample_joint_unit(model, u, n_samples, rng);
    const auto& t = model.output_transform();
    return (s.array() * t.std + t.mean).matrix();
}

GPModel condition(const GPModel& model, const MatrixXd& extra_points, const VectorXd& extra_values) {
    if (extra_points.rows() == 0) return model;
    check_dim(extra_points.cols(), model.dim(), "condition");
    const auto& t = model.output_transform();
    const VectorXd z = (extra_values.array() - t.mean) / t.std;
    return model.condition_unit(model.input_transform().to_unit_rows(extra_points), z);
}

}  // namespace lmabo::gp
