#pragma once

// The BO loop: initial design, refit, strategist query, acquisition, evaluation and
// incremental JSON-lines persistence.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lmabo/acquisition.hpp"
#include "lmabo/benchmarks.hpp"
#include "lmabo/llm_bridge.hpp"
#include "lmabo/strategist.hpp"
#include "lmabo/surrogate.hpp"

namespace lmabo::harness {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr const char* kRecordSchema = "lmabo.run/1";

/// 2*dim+1 scrambled Sobol points mapped into the bounds.
MatrixXd initial_design(const gp::Bounds& bounds, std::uint64_t seed);
int default_init_size(int dim);
/// 50 below ten dimensions, 100 otherwise.
int default_budget(int dim);
/// Loop iterations left once n points are evaluated: budget - (n - n_init).
int remaining_budget(int budget, int n_init, int n_evaluated);

/// Snapshot for the strategist; `remaining` follows remaining_budget.
llm::StateSnapshot state_snapshot(const gp::GPModel& model, int budget, int n_init);

struct RunConfig {
    std::string problem;
    std::string strategist;
    std::uint64_t seed = 0;
    std::optional<int> budget;
    std::optional<int> init;
    int fit_restarts = 8;
    gp::KernelFamily kernel = gp::KernelFamily::Matern52;
    double kappa = 2.0;
    acq::McConfig mc;
    strat::StrategistOptions strategist_options;  // run_id and transcript_path are filled in by run()
    std::string output_dir = "runs";

    void validate() const;
    /// "{problem}__{strategist}__seed{n}"
    std::string run_id() const;
    std::string record_path() const;
    std::string transcript_path() const;
};

struct HyperStats {
    std::vector<double> lengthscales;
    double outputscale = 0.0;
    double noise_variance = 0.0;
};

struct IterationRecord {
    int iteration = 0;
    acq::Kind kind = acq::Kind::UCB;
    std::string justification;
    std::vector<double> x;
    double y = 0.0;
    double incumbent = 0.0;
    double shortest_distance = 0.0;  // new point to all earlier ones, normalized inputs
    HyperStats hyper;
    bool fallback_used = false;
    bool transport_failed = false;
    bool gp_recovered = false;    // fit needed an inflated noise floor
    bool acq_fallback = false;    // random point replaced a failed acquisition
    std::vector<double> probabilities;
    std::vector<std::string> warnings;
    std::string strategist_state;
    double wall_ms = 0.0;
};

struct RunHeader {
    std::string schema = kRecordSchema;
    std::string run_id;
    std::string problem;
    std::string strategist;
    std::uint64_t seed = 0;
    int dim = 0;
    int budget = 0;
    int n_init = 0;
    std::vector<double> lower;
    std::vector<double> upper;
    std::optional<double> known_optimum;
    std::vector<std::string> portfolio;
    bool uses_llm = false;
    std::vector<std::vector<double>> init_points;
    std::vector<double> init_values;
};

struct RunRecord {
    RunHeader header;
    std::vector<IterationRecord> iterations;
    std::optional<std::string> abort_reason;

    bool complete() const { return !abort_reason && static_cast<int>(iterations.size()) == header.budget; }
    /// Best observed value after the initial design and after each iteration (size budget+1).
    std::vector<double> incumbents() const;
    int total_evaluations() const { return static_cast<int>(header.init_values.size() + iterations.size()); }
};

std::string header_to_json(const RunHeader& header);
std::string iteration_to_json(const IterationRecord& record);

/// Parses a record file; a torn final line is ignored. Throws IoError or DataError.
RunRecord load_record(const std::string& path);

/// Records equal in everything except wall-clock fields.
bool same_outcome(const RunRecord& a, const RunRecord& b);

/// Executes the run, resuming from an existing record of the same configuration.
/// A complete record is returned as is. Failures inside the loop end the run with
/// abort_reason set instead of throwing; configuration errors throw.
RunRecord run(const RunConfig& config);

/// Runs independent configurations on up to `parallel` threads; results keep input order.
std::vector<RunRecord> run_many(const std::vector<RunConfig>& configs, int parallel);

}  // namespace lmabo::harness
