#pragma once

// Gaussian-process surrogate with ARD kernels.
//
// Inputs are mapped affinely to the unit cube and outputs standardized to zero
// mean / unit variance before anything else happens; lengthscales, outputscale
// and noise all live in those normalized units.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "lmabo/optim.hpp"
#include "lmabo/random.hpp"

namespace lmabo::gp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class KernelFamily { Matern52, SquaredExponential };

const char* to_string(KernelFamily family);
KernelFamily kernel_family_from_string(const std::string& name);

struct Bounds {
    VectorXd lower;
    VectorXd upper;

    Index dim() const { return lower.size(); }
    bool contains(const VectorXd& x, double tol = 1e-12) const;
    VectorXd clamp(const VectorXd& x) const { return x.cwiseMax(lower).cwiseMin(upper); }
    void validate() const;
    static Bounds unit(Index dim);
};

/// Observed data in original (objective) units; one point per row.
struct Dataset {
    MatrixXd points;
    VectorXd values;
    Bounds bounds;

    Index size() const { return points.rows(); }
    Index dim() const { return points.cols(); }
    void validate() const;
    void append(const VectorXd& x, double y);
};

struct KernelParams {
    VectorXd lengthscales;
    double outputscale = 1.0;
    double noise_variance = 0.0;
    KernelFamily family = KernelFamily::Matern52;

    Index dim() const { return lengthscales.size(); }
    void validate() const;

    /// [log lengthscales..., log outputscale, log noise]
    VectorXd to_log() const;
    static KernelParams from_log(const VectorXd& theta, KernelFamily family);
};

/// Covariance between two points given in normalized units.
double kernel_eval(const KernelParams& params, const VectorXd& x, const VectorXd& x2);

/// Cross-covariance matrix K(a_i, b_j) (no noise term); points are rows.
MatrixXd kernel_matrix(const KernelParams& params, const MatrixXd& a, const MatrixXd& b);

struct InputTransform {
    VectorXd lower;
    VectorXd range;

    VectorXd to_unit(const VectorXd& x) const { return (x - lower).cwiseQuotient(range); }
    VectorXd from_unit(const VectorXd& u) const { return lower + u.cwiseProduct(range); }
    MatrixXd to_unit_rows(const MatrixXd& x) const;
    static InputTransform from_bounds(const Bounds& bounds);
};

struct OutputTransform {
    double mean = 0.0;
    double std = 1.0;

    double standardize(double y) const { return (y - mean) / std; }
    double destandardize(double z) const { return z * std + mean; }
    /// Sample mean and (n-1) standard deviation; std is 1 when undefined or zero.
    static OutputTransform fit(const VectorXd& values);
};

struct PosteriorPrediction {
    VectorXd mean;
    VectorXd variance;
};

/// Posterior at a single normalized point together with its input gradient.
struct PointPosterior {
    double mean = 0.0;
    double variance = 0.0;
    VectorXd mean_gradient;
    VectorXd variance_gradient;
};

inline constexpr double kVarianceFloor = 1e-12;

/// Jitter levels tried (in order) on the training covariance before giving up.
inline constexpr double kTrainingJitterLadder[] = {0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4};

class GPModel {
public:
    /// Factorizes the training covariance. Transforms default to the data's own
    /// (bounds to unit cube, standardized values); the per-point noise defaults
    /// to params.noise_variance everywhere.
    static GPModel build(Dataset dataset, KernelParams params,
                         std::optional<OutputTransform> output = std::nullopt,
                         std::optional<VectorXd> noise_diagonal = std::nullopt);

    const Dataset& dataset() const { return dataset_; }
    const KernelParams& params() const { return params_; }
    const InputTransform& input_transform() const { return input_; }
    const OutputTransform& output_transform() const { return output_; }
    const MatrixXd& unit_points() const { return unit_points_; }
    const VectorXd& standardized_values() const { return standardized_; }
    const VectorXd& noise_diagonal() const { return noise_diagonal_; }
    const MatrixXd& cholesky_factor() const { return chol_; }
    double jitter() const { return jitter_; }
    Index dim() const { return dataset_.dim(); }
    Index size() const { return dataset_.size(); }

    /// Posterior of the standardized latent function at normalized points (rows).
    PosteriorPrediction predict_unit(const MatrixXd& unit_points) const;
    PointPosterior predict_unit_with_gradient(const VectorXd& unit_point) const;

    /// Posterior covariance of the standardized latent function over normalized points.
    MatrixXd covariance_unit(const MatrixXd& unit_points) const;
    /// Posterior covariance between normalized points (rows) and one normalized point.
    VectorXd cross_covariance_unit(const MatrixXd& unit_points, const VectorXd& unit_point) const;

    /// Conditions on noiseless observations of the standardized latent function.
    GPModel condition_unit(const MatrixXd& unit_points, const VectorXd& standardized_values) const;

    /// Minimum normalized Euclidean distance from the newest point to all earlier points.
    double shortest_distance_last() const;

    /// Rebuild (same hyperparameters) with a different dataset, re-fitting the transforms.
    GPModel with_dataset(Dataset dataset) const;

private:
    GPModel() = default;
    void solve_weights();

    Dataset dataset_;
    KernelParams params_;
    InputTransform input_;
    OutputTransform output_;
    MatrixXd unit_points_;
    VectorXd standardized_;
    VectorXd noise_diagonal_;
    MatrixXd chol_;
    VectorXd weights_;  // (K + diag(noise) + jitter I)^{-1} y
    double jitter_ = 0.0;
};

struct LogMarginalLikelihood {
    double value = 0.0;
    VectorXd gradient;  // with respect to KernelParams::to_log()
};

/// GP log marginal likelihood of the standardized values with unit-cube inputs.
LogMarginalLikelihood log_marginal_likelihood(const KernelParams& params, const Dataset& dataset);

struct FitConfig {
    int n_restarts = 8;
    std::uint64_t seed = 0;
    KernelFamily family = KernelFamily::Matern52;
    std::optional<KernelParams> warm_start;
    /// Fixes the noise variance instead of learning it.
    std::optional<double> fixed_noise;
    double min_log_noise = -12.0;
    double max_log_noise = 2.0;
    double min_log_lengthscale = -6.0;
    double max_log_lengthscale = 8.0;
    double min_log_outputscale = -6.0;
    double max_log_outputscale = 6.0;
    optim::BoxQnOptions optimizer{};
};

struct FitReport {
    std::vector<double> initial_objectives;  // log posterior at each start (-inf if it failed)
    std::vector<double> final_objectives;
    int best_start = -1;
    double best_objective = 0.0;
    bool used_warm_start = false;
};

/// Log density of the hyperparameter priors over log-parameters, with its gradient.
double log_prior(const VectorXd& theta, Index dim, bool include_noise, VectorXd* gradient = nullptr);

/// MAP fit: best of the restarts of a bounded quasi-Newton ascent on
/// log marginal likelihood + log prior over log-parameters.
GPModel fit(const Dataset& dataset, const FitConfig& config, FitReport* report = nullptr);

/// Posterior at points given in original units (clamped into bounds with a warning).
PosteriorPrediction posterior(const GPModel& model, const MatrixXd& points, bool destandardize);

/// Joint posterior draws of the standardized latent function over normalized candidates,
/// returned as n_samples x candidates.
MatrixXd sample_joint_unit(const GPModel& model, const MatrixXd& unit_candidates, int n_samples,
                           Rng& rng);

/// Joint posterior draws over candidates in original units, in objective units.
MatrixXd sample_joint(const GPModel& model, const MatrixXd& candidates, int n_samples, Rng& rng);

/// Lower Cholesky factor of a covariance plus the smallest jitter from the sampling
/// ladder (scaled by `scale`) that makes it factorizable.
MatrixXd jittered_cholesky(const MatrixXd& covariance, double scale, double* jitter_used = nullptr);

/// Conditions on extra noiseless observations given in original/objective units.
GPModel condition(const GPModel& model, const MatrixXd& extra_points, const VectorXd& extra_values);

}  // namespace lmabo::gp
