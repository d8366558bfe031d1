#pragma once

// The twelve-member acquisition portfolio.
//
// Everything here works on g = -f in standardized units over the unit cube, so
// the usual maximization forms apply: the incumbent tau is the largest observed
// standardized g and a point is better when its g is larger.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "lmabo/optim.hpp"
#include "lmabo/random.hpp"
#include "lmabo/surrogate.hpp"

namespace lmabo::acq {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Kind { PI, LogPI, EI, LogEI, UCB, PosMean, PosSTD, TS, KG, PES, MES, JES };
enum class Group { Exploitative, Exploratory };

/// All twelve kinds, in the order they are listed to the language model.
inline constexpr std::array<Kind, 12> kPortfolio = {Kind::PI,     Kind::LogPI, Kind::EI, Kind::LogEI,
                                                    Kind::UCB,    Kind::PosMean, Kind::PosSTD, Kind::TS,
                                                    Kind::KG,     Kind::PES,   Kind::MES, Kind::JES};

const char* abbreviation(Kind kind);
Group group(Kind kind);
const char* to_string(Group g);
bool is_analytic(Kind kind);

/// Case-insensitive abbreviation lookup; an optional leading "q" is accepted.
std::optional<Kind> kind_from_string(std::string_view token);
/// As kind_from_string but throws ArgumentError for unknown tokens.
Kind parse_kind(std::string_view token);

struct McConfig {
    int kg_fantasies = 8;
    int mes_samples = 16;
    int pes_samples = 10;
    int ts_candidates = 1024;        // TS and PES discrete optimization; also optimum sampling
    int discrete_candidates = 512;   // KG / MES / JES evaluation set and KG inner set
    int probes = 512;                // quasi-random probes for the analytic kinds
    int n_starts = 10;
    double mes_epsilon = 1e-6;

    void validate() const;
};

struct AcqContext {
    const gp::GPModel* model = nullptr;
    double incumbent = 0.0;  // tau: best observed standardized g
    double kappa = 2.0;
    McConfig mc;
    std::uint64_t seed = 0;
    optim::BoxQnOptions optimizer{};

    /// Context with tau taken from the model's own observations.
    static AcqContext make(const gp::GPModel& model, std::uint64_t seed, double kappa = 2.0, McConfig mc = {});
    void validate() const;
    const gp::GPModel& gp() const { return *model; }
};

/// Posterior of g = -f (standardized) at normalized points.
gp::PosteriorPrediction predict_g(const gp::GPModel& model, const MatrixXd& unit_points);

/// PI, LogPI, EI or LogEI per query point; prediction is on g.
VectorXd eval_improvement(Kind kind, const gp::PosteriorPrediction& prediction, double incumbent);

/// UCB, PosMean or PosSTD per query point; prediction is on g.
VectorXd eval_confidence(Kind kind, const gp::PosteriorPrediction& prediction, double kappa);

/// Any of the seven analytic kinds at one normalized point, optionally with its input gradient.
double eval_analytic(Kind kind, const AcqContext& context, const VectorXd& unit_point,
                     VectorXd* gradient = nullptr);

/// Index of the maximizer of one joint draw of g over the candidates (ties to the lowest index).
Index select_thompson(const gp::GPModel& model, const MatrixXd& unit_candidates, Rng& rng);

/// Knowledge gradient with the fantasy normals derived from the context seed. The inner
/// set defaults to the context's discrete candidate set.
double eval_kg(const AcqContext& context, const VectorXd& unit_point);
double eval_kg(const AcqContext& context, const VectorXd& unit_point, const MatrixXd& inner,
               const VectorXd& fantasy_normals);
/// KG of every row of `points` with the inner set equal to `points` itself.
VectorXd eval_kg_on(const AcqContext& context, const MatrixXd& points);

/// Antithetic standard-normal fantasies (pairs +e, -e) derived from a seed.
VectorXd kg_fantasy_normals(int n_fantasies, std::uint64_t seed);

/// Gumbel-approximated samples of max g over the candidates, each at least incumbent + epsilon.
std::vector<double> sample_extreme_values(const gp::GPModel& model, const MatrixXd& unit_candidates, int n,
                                          Rng& rng, double incumbent, double epsilon = 1e-6);

VectorXd eval_mes(const gp::PosteriorPrediction& prediction, const std::vector<double>& extreme_samples);

/// A sampled optimizer location (normalized) and its sampled g value from the same draw.
struct OptimumSample {
    VectorXd unit_point;
    double value = 0.0;
};

/// M Thompson draws over the candidates; each contributes its argmax and maximum.
std::vector<OptimumSample> sample_optima(const gp::GPModel& model, const MatrixXd& unit_candidates, int m,
                                         Rng& rng);

/// Entropy reduction from conditioning on each sampled optimum (PES) or, additionally,
/// truncating the predictive at the sampled maximum (JES).
double eval_pes(const AcqContext& context, const VectorXd& unit_point, const std::vector<OptimumSample>& samples);
double eval_jes(const AcqContext& context, const VectorXd& unit_point, const std::vector<OptimumSample>& samples);
VectorXd eval_pes_on(const AcqContext& context, const MatrixXd& points, const std::vector<OptimumSample>& samples);
VectorXd eval_jes_on(const AcqContext& context, const MatrixXd& points, const std::vector<OptimumSample>& samples);

/// Differential entropy of N(mean, variance) truncated to values <= upper.
double truncated_normal_entropy(double mean, double variance, double upper);

struct Proposal {
    VectorXd unit_point;
    VectorXd point;   // original units
    double value = 0.0;
};

/// Maximizes the acquisition; deterministic given the context seed.
Proposal optimize_acquisition(Kind kind, const AcqContext& context);

}  // namespace lmabo::acq
