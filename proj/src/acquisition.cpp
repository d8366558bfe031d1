#include "lmabo/acquisition.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

#include "lmabo/errors.hpp"
#include "lmabo/log.hpp"
#include "lmabo/normal.hpp"

namespace lmabo::acq {

namespace {

constexpr double kSigmaTiny = 1e-12;
constexpr double kDeterministicVariance = 1e-10;
constexpr double kLog2PiE = 2.83787706640934548356;  // log(2 pi e)

// Purpose tags for derive_seed so every stochastic piece has its own stream.
enum Purpose : std::uint64_t {
    kProbe = 1,
    kTsSet = 2,
    kTsDraw = 3,
    kDiscreteSet = 4,
    kKgFantasy = 5,
    kMesDraw = 6,
    kOptimaSet = 7,
    kOptimaDraw = 8,
};

Index first_argmax(const VectorXd& v) {
    Index best = -1;
    for (Index i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) continue;
        if (best < 0 || v[i] > v[best]) best = i;
    }
    return best;
}

double gaussian_entropy(double variance) {
    return 0.5 * (kLog2PiE + std::log(std::max(variance, gp::kVarianceFloor)));
}

/// Value of an analytic kind at posterior (mu, sigma) on g, with partial derivatives.
double analytic_scalar(Kind kind, double mu, double sigma, double tau, double kappa, double& dmu, double& dsigma) {
    dmu = 0.0;
    dsigma = 0.0;
    switch (kind) {
        case Kind::UCB:
            dmu = 1.0;
            dsigma = kappa;
            return mu + kappa * sigma;
        case Kind::PosMean:
            dmu = 1.0;
            return mu;
        case Kind::PosSTD:
            dsigma = 1.0;
            return sigma;
        default:
            break;
    }

    const double d = mu - tau;
    if (sigma < kSigmaTiny) {
        switch (kind) {
            case Kind::PI:
                return d > 0.0 ? 1.0 : (d == 0.0 ? 0.5 : 0.0);
            case Kind::LogPI:
                return d > 0.0 ? 0.0 : (d == 0.0 ? std::log(0.5) : -std::numeric_limits<double>::infinity());
            case Kind::EI:
                dmu = d > 0.0 ? 1.0 : 0.0;
                return std::max(d, 0.0);
            case Kind::LogEI:
                dmu = d > 0.0 ? 1.0 / d : 0.0;
                return d > 0.0 ? std::log(d) : -std::numeric_limits<double>::infinity();
            default:
                break;
        }
    }

    const double z = d / sigma;
    switch (kind) {
        case Kind::PI: {
            const double phi = normal::pdf(z);
            dmu = phi / sigma;
            dsigma = -z * phi / sigma;
            return normal::cdf(z);
        }
        case Kind::LogPI: {
            const double lc = normal::log_cdf(z);
            const double r = std::exp(normal::log_pdf(z) - lc);
            dmu = r / sigma;
            dsigma = -z * r / sigma;
            return lc;
        }
        case Kind::EI: {
            dmu = normal::cdf(z);
            dsigma = normal::pdf(z);
            if (z > -1.0) return d * dmu + sigma * dsigma;
            return sigma * std::exp(normal::log_h(z));
        }
        case Kind::LogEI: {
            const double lh = normal::log_h(z);
            dmu = std::exp(normal::log_cdf(z) - lh) / sigma;
            dsigma = std::exp(normal::log_pdf(z) - lh) / sigma;
            return std::log(sigma) + lh;
        }
        default:
            throw ArgumentError(std::string("not an analytic acquisition: ") + abbreviation(kind));
    }
}

MatrixXd discrete_set(const AcqContext& ctx) {
    return scrambled_sobol(ctx.mc.discrete_candidates, ctx.gp().dim(), derive_seed(ctx.seed, {kDiscreteSet}));
}

std::vector<OptimumSample> context_optima(const AcqContext& ctx) {
    const MatrixXd set = scrambled_sobol(ctx.mc.ts_candidates, ctx.gp().dim(), derive_seed(ctx.seed, {kOptimaSet}));
    Rng rng(derive_seed(ctx.seed, {kOptimaDraw}));
    return sample_optima(ctx.gp(), set, ctx.mc.pes_samples, rng);
}

VectorXd entropy_reduction(const AcqContext& ctx, const MatrixXd& points, const std::vector<OptimumSample>& samples,
                           bool truncate) {
    const gp::GPModel& model = ctx.gp();
    const double noise = model.params().noise_variance;
    const auto before = predict_g(model, points);
    VectorXd after_sum = VectorXd::Zero(points.rows());
    int used = 0;
    for (const auto& s : samples) {
        gp::GPModel conditioned = [&]() -> gp::GPModel {
            try {
                return model.condition_unit(s.unit_point.transpose(), VectorXd::Constant(1, -s.value));
            } catch (const NumericalError& e) {
                log::debug(std::string("entropy search: skipped optimum sample: ") + e.what());
                return model;
            }
        }();
        if (conditioned.size() == model.size()) continue;
        ++used;
        const auto after = predict_g(conditioned, points);
        for (Index i = 0; i < points.rows(); ++i) {
            const double var = after.variance[i] + noise;
            after_sum[i] += truncate ? truncated_normal_entropy(after.mean[i], var, s.value) : gaussian_entropy(var);
        }
    }
    if (used == 0) throw EvaluationError("entropy search: conditioning failed for every optimum sample");

    VectorXd out(points.rows());
    for (Index i = 0; i < points.rows(); ++i) {
        if (before.variance[i] <= kDeterministicVariance) {
            out[i] = 0.0;
            continue;
        }
        const double reduction = gaussian_entropy(before.variance[i] + noise) - after_sum[i] / used;
        out[i] = std::max(reduction, 0.0);
    }
    return out;
}

Proposal make_proposal(const gp::GPModel& model, const VectorXd& unit, double value) {
    Proposal p;
    p.unit_point = unit.cwiseMax(0.0).cwiseMin(1.0);
    p.point = model.dataset().bounds.clamp(model.input_transform().from_unit(p.unit_point));
    p.value = value;
    return p;
}

Proposal pick_best(const gp::GPModel& model, const MatrixXd& points, const VectorXd& values, const char* what) {
    const Index best = first_argmax(values);
    if (best < 0) throw EvaluationError(std::string(what) + ": no finite acquisition value on the candidate set");
    return make_proposal(model, points.row(best).transpose(), values[best]);
}

}  // namespace

const char* abbreviation(Kind kind) {
    switch (kind) {
        case Kind::PI: return "PI";
        case Kind::LogPI: return "LogPI";
        case Kind::EI: return "EI";
        case Kind::LogEI: return "LogEI";
        case Kind::UCB: return "UCB";
        case Kind::PosMean: return "PosMean";
        case Kind::PosSTD: return "PosSTD";
        case Kind::TS: return "TS";
        case Kind::KG: return "KG";
        case Kind::PES: return "PES";
        case Kind::MES: return "MES";
        case Kind::JES: return "JES";
    }
    return "?";
}

Group group(Kind kind) {
    switch (kind) {
        case Kind::PI:
        case Kind::LogPI:
        case Kind::EI:
        case Kind::LogEI:
        case Kind::PosMean:
            return Group::Exploitative;
        default:
            return Group::Exploratory;
    }
}

const char* to_string(Group g) { return g == Group::Exploitative ? "exploitative" : "exploratory"; }

bool is_analytic(Kind kind) {
    switch (kind) {
        case Kind::TS:
        case Kind::KG:
        case Kind::PES:
        case Kind::MES:
        case Kind::JES:
            return false;
        default:
            return true;
    }
}

std::optional<Kind> kind_from_string(std::string_view token) {
    std::string lower;
    for (char c : token) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    auto match = [](const std::string& s) -> std::optional<Kind> {
        for (Kind k : kPortfolio) {
            std::string a = abbreviation(k);
            for (auto& c : a) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            if (a == s) return k;
        }
        return std::nullopt;
    };
    if (auto k = match(lower)) return k;
    if (lower.size() > 1 && lower[0] == 'q') return match(lower.substr(1));
    return std::nullopt;
}

Kind parse_kind(std::string_view token) {
    if (auto k = kind_from_string(token)) return *k;
    throw ArgumentError("unknown acquisition function: " + std::string(token));
}

void McConfig::validate() const {
    if (kg_fantasies < 1 || mes_samples < 1 || pes_samples < 1 || ts_candidates < 1 || discrete_candidates < 1 ||
        probes < 1 || n_starts < 1)
        throw ArgumentError("acquisition sample counts and candidate-set sizes must be >= 1");
    if (!(mes_epsilon >= 0.0)) throw ArgumentError("MES epsilon must be >= 0");
}

AcqContext AcqContext::make(const gp::GPModel& model, std::uint64_t seed, double kappa, McConfig mc) {
    AcqContext ctx;
    ctx.model = &model;
    ctx.incumbent = -model.standardized_values().minCoeff();
    ctx.kappa = kappa;
    ctx.mc = mc;
    ctx.seed = seed;
    return ctx;
}

void AcqContext::validate() const {
    if (!model) throw ArgumentError("acquisition context has no model");
    if (!(kappa > 0.0)) throw ArgumentError("kappa must be positive");
    if (!std::isfinite(incumbent)) throw ArgumentError("incumbent must be finite");
    mc.validate();
}

gp::PosteriorPrediction predict_g(const gp::GPModel& model, const MatrixXd& unit_points) {
    auto p = model.predict_unit(unit_points);
    p.mean = -p.mean;
    return p;
}

VectorXd eval_improvement(Kind kind, const gp::PosteriorPrediction& prediction, double incumbent) {
    if (kind != Kind::PI && kind != Kind::LogPI && kind != Kind::EI && kind != Kind::LogEI)
        throw ArgumentError(std::string("not an improvement-based acquisition: ") + abbreviation(kind));
    VectorXd out(prediction.mean.size());
    double dmu, dsigma;
    for (Index i = 0; i < out.size(); ++i) {
        const double sigma = std::sqrt(std::max(prediction.variance[i], 0.0));
        out[i] = analytic_scalar(kind, prediction.mean[i], sigma, incumbent, 0.0, dmu, dsigma);
    }
    return out;
}

VectorXd eval_confidence(Kind kind, const gp::PosteriorPrediction& prediction, double kappa) {
    if (kind != Kind::UCB && kind != Kind::PosMean && kind != Kind::PosSTD)
        throw ArgumentError(std::string("not a confidence-based acquisition: ") + abbreviation(kind));
    if (kind == Kind::UCB && !(kappa > 0.0)) throw ArgumentError("UCB needs kappa > 0");
    VectorXd out(prediction.mean.size());
    double dmu, dsigma;
    for (Index i = 0; i < out.size(); ++i) {
        const double sigma = std::sqrt(std::max(prediction.variance[i], 0.0));
        out[i] = analytic_scalar(kind, prediction.mean[i], sigma, 0.0, kappa, dmu, dsigma);
    }
    return out;
}

double eval_analytic(Kind kind, const AcqContext& context, const VectorXd& unit_point, VectorXd* gradient) {
    if (!is_analytic(kind)) throw ArgumentError(std::string("not an analytic acquisition: ") + abbreviation(kind));
    const auto pp = context.gp().predict_unit_with_gradient(unit_point);
    const double mu = -pp.mean;
    const double sigma = std::sqrt(pp.variance);
    double dmu, dsigma;
    const double value = analytic_scalar(kind, mu, sigma, context.incumbent, context.kappa, dmu, dsigma);
    if (gradient) {
        *gradient = -dmu * pp.mean_gradient;
        if (sigma >= kSigmaTiny && dsigma != 0.0) *gradient += dsigma * pp.variance_gradient / (2.0 * sigma);
    }
    return value;
}

Index select_thompson(const gp::GPModel& model, const MatrixXd& unit_candidates, Rng& rng) {
    if (unit_candidates.rows() == 0) throw ArgumentError("Thompson sampling needs candidates");
    const MatrixXd draw = gp::sample_joint_unit(model, unit_candidates, 1, rng);
    return first_argmax(-draw.row(0).transpose());
}

VectorXd kg_fantasy_normals(int n_fantasies, std::uint64_t seed) {
    if (n_fantasies < 1) throw ArgumentError("KG needs at least one fantasy");
    Rng rng(derive_seed(seed, {kKgFantasy}));
    VectorXd e(n_fantasies);
    Index i = 0;
    for (; i + 1 < n_fantasies; i += 2) {
        e[i] = standard_normal(rng);
        e[i + 1] = -e[i];
    }
    if (i < n_fantasies) e[i] = 0.0;
    return e;
}

double eval_kg(const AcqContext& context, const VectorXd& unit_point, const MatrixXd& inner,
               const VectorXd& fantasy_normals) {
    const gp::GPModel& model = context.gp();
    const auto px = predict_g(model, unit_point.transpose());
    const double var_x = px.variance[0];
    if (var_x <= kDeterministicVariance) return 0.0;
    const double sd_x = std::sqrt(var_x);
    const VectorXd mu = predict_g(model, inner).mean;
    const VectorXd slope = model.cross_covariance_unit(inner, unit_point) / sd_x;
    const double base = mu.maxCoeff();
    double total = 0.0;
    for (Index k = 0; k < fantasy_normals.size(); ++k) total += (mu + slope * fantasy_normals[k]).maxCoeff();
    return total / static_cast<double>(fantasy_normals.size()) - base;
}

double eval_kg(const AcqContext& context, const VectorXd& unit_point) {
    return eval_kg(context, unit_point, discrete_set(context),
                   kg_fantasy_normals(context.mc.kg_fantasies, context.seed));
}

VectorXd eval_kg_on(const AcqContext& context, const MatrixXd& points) {
    const gp::GPModel& model = context.gp();
    const VectorXd normals = kg_fantasy_normals(context.mc.kg_fantasies, context.seed);
    const auto pred = predict_g(model, points);
    const MatrixXd cov = model.covariance_unit(points);
    const double base = pred.mean.maxCoeff();
    VectorXd out(points.rows());
    for (Index j = 0; j < points.rows(); ++j) {
        if (pred.variance[j] <= kDeterministicVariance) {
            out[j] = 0.0;
            continue;
        }
        const VectorXd slope = cov.col(j) / std::sqrt(pred.variance[j]);
        double total = 0.0;
        for (Index k = 0; k < normals.size(); ++k) total += (pred.mean + slope * normals[k]).maxCoeff();
        out[j] = total / static_cast<double>(normals.size()) - base;
    }
    return out;
}

std::vector<double> sample_extreme_values(const gp::GPModel& model, const MatrixXd& unit_candidates, int n, Rng& rng,
                                          double incumbent, double epsilon) {
    if (n < 1) throw ArgumentError("need at least one extreme-value sample");
    if (unit_candidates.rows() == 0) throw ArgumentError("extreme-value sampling needs candidates");
    const auto pred = predict_g(model, unit_candidates);
    const Index m = unit_candidates.rows();
    VectorXd sd(m);
    for (Index i = 0; i < m; ++i) sd[i] = std::sqrt(std::max(pred.variance[i], 0.0));
    const double max_mu = pred.mean.maxCoeff();

    // log P(max < y) under independent marginals.
    auto log_cdf_max = [&](double y) {
        double s = 0.0;
        for (Index i = 0; i < m; ++i) {
            if (sd[i] < 1e-10) {
                if (y < pred.mean[i]) return -std::numeric_limits<double>::infinity();
            } else {
                s += normal::log_cdf((y - pred.mean[i]) / sd[i]);
            }
        }
        return s;
    };
    double hi = max_mu;
    for (Index i = 0; i < m; ++i) hi = std::max(hi, pred.mean[i] + 10.0 * sd[i]);
    hi += 1e-12;
    auto quantile = [&](double q) {
        const double target = std::log(q);
        double lo = max_mu - 1.0;
        for (int k = 0; k < 60 && log_cdf_max(lo) >= target; ++k) lo -= 2.0 * (max_mu - lo);
        double up = hi;
        for (int k = 0; k < 200 && up - lo > 1e-12 * (1.0 + std::abs(up)); ++k) {
            const double mid = 0.5 * (lo + up);
            if (log_cdf_max(mid) < target) lo = mid;
            else up = mid;
        }
        return 0.5 * (lo + up);
    };
    const double y25 = quantile(0.25), y50 = quantile(0.5), y75 = quantile(0.75);
    const double denom = std::log(-std::log(0.25)) - std::log(-std::log(0.75));
    const double b = std::max((y75 - y25) / denom, 0.0);
    const double a = y50 + b * std::log(-std::log(0.5));

    std::vector<double> out(static_cast<std::size_t>(n));
    for (auto& y : out) {
        const double u = uniform_open(rng);
        y = std::max(a - b * std::log(-std::log(u)), incumbent + epsilon);
    }
    return out;
}

VectorXd eval_mes(const gp::PosteriorPrediction& prediction, const std::vector<double>& extreme_samples) {
    if (extreme_samples.empty()) throw ArgumentError("MES needs at least one extreme-value sample");
    VectorXd out(prediction.mean.size());
    for (Index i = 0; i < out.size(); ++i) {
        const double sigma = std::sqrt(std::max(prediction.variance[i], 0.0));
        if (sigma < kSigmaTiny) {
            out[i] = 0.0;
            continue;
        }
        double s = 0.0;
        for (double y : extreme_samples) {
            const double gamma = (y - prediction.mean[i]) / sigma;
            const double lc = normal::log_cdf(gamma);
            s += 0.5 * gamma * std::exp(normal::log_pdf(gamma) - lc) - lc;
        }
        out[i] = s / static_cast<double>(extreme_samples.size());
    }
    return out;
}

std::vector<OptimumSample> sample_optima(const gp::GPModel& model, const MatrixXd& unit_candidates, int m, Rng& rng) {
    if (m < 1) throw ArgumentError("need at least one optimum sample");
    const MatrixXd draws = gp::sample_joint_unit(model, unit_candidates, m, rng);
    std::vector<OptimumSample> out;
    out.reserve(static_cast<std::size_t>(m));
    for (Index k = 0; k < draws.rows(); ++k) {
        const VectorXd g = -draws.row(k).transpose();
        const Index best = first_argmax(g);
        out.push_back({unit_candidates.row(best).transpose(), g[best]});
    }
    return out;
}

double truncated_normal_entropy(double mean, double variance, double upper) {
    const double var = std::max(variance, gp::kVarianceFloor);
    const double h = gaussian_entropy(var);
    if (variance <= gp::kVarianceFloor) return h;
    const double beta = (upper - mean) / std::sqrt(var);
    if (std::isinf(beta) && beta > 0.0) return h;
    const double lc = normal::log_cdf(beta);
    return h + lc - 0.5 * beta * std::exp(normal::log_pdf(beta) - lc);
}

VectorXd eval_pes_on(const AcqContext& context, const MatrixXd& points, const std::vector<OptimumSample>& samples) {
    return entropy_reduction(context, points, samples, false);
}

VectorXd eval_jes_on(const AcqContext& context, const MatrixXd& points, const std::vector<OptimumSample>& samples) {
    return entropy_reduction(context, points, samples, true);
}

double eval_pes(const AcqContext& context, const VectorXd& unit_point, const std::vector<OptimumSample>& samples) {
    return eval_pes_on(context, unit_point.transpose(), samples)[0];
}

double eval_jes(const AcqContext& context, const VectorXd& unit_point, const std::vector<OptimumSample>& samples) {
    return eval_jes_on(context, unit_point.transpose(), samples)[0];
}

Proposal optimize_acquisition(Kind kind, const AcqContext& context) {
    context.validate();
    const gp::GPModel& model = context.gp();
    const Index d = model.dim();
    const auto& mc = context.mc;

    switch (kind) {
        case Kind::TS: {
            const MatrixXd set = scrambled_sobol(mc.ts_candidates, d, derive_seed(context.seed, {kTsSet}));
            Rng rng(derive_seed(context.seed, {kTsDraw}));
            const MatrixXd draw = gp::sample_joint_unit(model, set, 1, rng);
            const VectorXd g = -draw.row(0).transpose();
            return pick_best(model, set, g, "TS");
        }
        case Kind::PES: {
            const MatrixXd set = scrambled_sobol(mc.ts_candidates, d, derive_seed(context.seed, {kTsSet}));
            return pick_best(model, set, eval_pes_on(context, set, context_optima(context)), "PES");
        }
        case Kind::JES: {
            const MatrixXd set = discrete_set(context);
            return pick_best(model, set, eval_jes_on(context, set, context_optima(context)), "JES");
        }
        case Kind::KG: {
            const MatrixXd set = discrete_set(context);
            return pick_best(model, set, eval_kg_on(context, set), "KG");
        }
        case Kind::MES: {
            const MatrixXd set = discrete_set(context);
            MatrixXd pool(set.rows() + model.size(), d);
            pool << set, model.unit_points();
            Rng rng(derive_seed(context.seed, {kMesDraw}));
            const auto ys = sample_extreme_values(model, pool, mc.mes_samples, rng, context.incumbent, mc.mes_epsilon);
            return pick_best(model, set, eval_mes(predict_g(model, set), ys), "MES");
        }
        default:
            break;
    }

    // Analytic kinds: best quasi-random probes, then bounded quasi-Newton from each.
    const MatrixXd probes = scrambled_sobol(mc.probes, d, derive_seed(context.seed, {kProbe}));
    const auto pred = predict_g(model, probes);
    const VectorXd values = (kind == Kind::UCB || kind == Kind::PosMean || kind == Kind::PosSTD)
                                ? eval_confidence(kind, pred, context.kappa)
                                : eval_improvement(kind, pred, context.incumbent);
    std::vector<Index> order(static_cast<std::size_t>(probes.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        const bool fa = std::isfinite(values[a]), fb = std::isfinite(values[b]);
        if (fa != fb) return fa;
        return fa && values[a] > values[b];
    });

    const VectorXd lower = VectorXd::Zero(d), upper = VectorXd::Ones(d);
    auto objective = [&](const VectorXd& u, VectorXd& grad) {
        VectorXd g;
        const double v = eval_analytic(kind, context, u, &g);
        grad = -g;
        return -v;
    };

    VectorXd best_u;
    double best_value = -std::numeric_limits<double>::infinity();
    int started = 0;
    for (Index idx : order) {
        if (started >= mc.n_starts) break;
        if (!std::isfinite(values[idx])) break;
        ++started;
        const VectorXd start = probes.row(idx).transpose();
        VectorXd candidate = start;
        double candidate_value = values[idx];
        try {
            const auto r = optim::minimize_box(objective, start, lower, upper, context.optimizer);
            if (std::isfinite(r.value) && -r.value >= candidate_value) {
                candidate = r.x;
                candidate_value = -r.value;
            }
        } catch (const std::exception& e) {
            log::warn(std::string("acquisition refinement failed: ") + e.what());
        }
        if (candidate_value > best_value) {
            best_value = candidate_value;
            best_u = candidate;
        }
    }
    if (best_u.size() == 0)
        throw EvaluationError(std::string(abbreviation(kind)) + ": every optimization start failed");
    return make_proposal(model, best_u, best_value);
}

}  // namespace lmabo::acq
