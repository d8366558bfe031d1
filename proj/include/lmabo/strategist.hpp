#pragma once

// Per-iteration choice of acquisition function.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lmabo/acquisition.hpp"
#include "lmabo/llm_bridge.hpp"
#include "lmabo/surrogate.hpp"

namespace lmabo::strat {

using acq::Kind;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Portfolio = std::vector<Kind>;

Portfolio full_portfolio();
/// EI, LogEI, TS.
Portfolio curated_portfolio();
/// EI, TS, UCB, PosMean.
Portfolio popular_portfolio();

// ---------------------------------------------------------------------------
// Schedules (pure functions of the iteration)

/// Blocks of k iterations alternating a, b, a, ... starting with a; iteration is 1-based.
Kind alternating_select(Kind a, Kind b, int k, int iteration);
/// `explore` for iteration <= ceil(split * budget), `exploit` afterwards.
Kind two_phase_select(Kind explore, Kind exploit, double split, int iteration, int budget);
Kind scripted_select(const Portfolio& sequence, int iteration);
Kind random_select(const Portfolio& subset, Rng& rng);

// ---------------------------------------------------------------------------
// Hedge family

enum class HedgeVariant { GPHedge, NoPastBO, SetupBO };

struct HedgeState {
    VectorXd gains;
    double eta = 1.0;
    double memory = 1.0;
    bool normalize = false;
};

HedgeState make_hedge_state(HedgeVariant variant, Index n_arms, double eta = 1.0);

/// softmax(eta * gains) with the maximum subtracted first.
VectorXd hedge_probabilities(const VectorXd& gains, double eta);

/// gains <- memory * gains + r, with r min-max normalized first when `normalize` is set
/// (a constant reward vector normalizes to 0.5 everywhere).
HedgeState hedge_update(const HedgeState& state, const VectorXd& rewards);

/// Memory used by the adaptive variant: clip(1 - improvement_rate, 0.5, 0.99).
double adaptive_memory(double improvement_rate);

/// Inverse-CDF draw from a probability vector with u in [0, 1).
Index sample_index(const VectorXd& probabilities, double u);

// ---------------------------------------------------------------------------
// Entropy search over portfolios

/// Shannon entropy (nats) of a discrete distribution; zero entries contribute nothing.
double discrete_entropy(const VectorXd& p);

/// Empirical distribution of the minimizer of f over the candidates from n joint draws.
/// The draws come from a fresh stream seeded with `seed`, so two models compared under
/// the same seed share their random numbers.
VectorXd optimum_distribution(const gp::GPModel& model, const MatrixXd& unit_candidates, int n_samples,
                              std::uint64_t seed);

struct EspResult {
    Index chosen = 0;
    std::vector<double> reduction;  // mean entropy reduction per proposal
    std::vector<bool> skipped;      // conditioning failed
    double prior_entropy = 0.0;
};

/// Scores each proposal by the expected drop in entropy of the minimizer distribution
/// after a fantasized observation there; the largest mean reduction wins, ties to the
/// lowest index.
EspResult esp_select(const gp::GPModel& model, const std::vector<VectorXd>& unit_proposals,
                     const MatrixXd& unit_candidates, int n_samples, int n_fantasies, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Runtime interface used by the harness

struct IterationInput {
    int iteration = 1;  // 1-based loop index
    int budget = 1;
    const gp::GPModel* model = nullptr;
    acq::AcqContext acq;
    std::uint64_t seed = 0;  // strategist randomness for this iteration
    llm::StateSnapshot snapshot;
};

struct Decision {
    Kind kind = Kind::UCB;
    std::string justification;
    bool fallback_used = false;
    bool transport_failed = false;
    std::optional<acq::Proposal> proposal;  // already optimized by portfolio strategists
    std::vector<double> probabilities;      // hedge selection distribution (portfolio order)
};

struct Feedback {
    const gp::GPModel* updated_model = nullptr;  // new observation included, hyperparameters unchanged
    double new_value = 0.0;
    bool improved = false;
};

class Strategist {
public:
    virtual ~Strategist() = default;
    virtual std::string label() const = 0;
    virtual const Portfolio& portfolio() const = 0;
    virtual Decision select(const IterationInput& input) = 0;
    virtual void observe(const Feedback&) {}
    virtual bool uses_llm() const { return false; }
    /// The conversation behind an LLM strategist; null for every other kind.
    virtual const llm::ChatSession* chat_session() const { return nullptr; }

    /// Serialized internal state (JSON text, empty when stateless), stored with each
    /// iteration so an interrupted run resumes exactly.
    virtual std::string checkpoint() const { return {}; }
    virtual void restore(const std::string& /*state*/) {}
};

struct EspOptions {
    int candidates = 256;
    int samples = 64;
    int fantasies = 4;
};

struct StrategistOptions {
    double eta = 1.0;
    double two_phase_split = 0.5;
    EspOptions esp;
    Portfolio scripted_sequence;  // for "Scripted" without an inline sequence

    // LLM strategist
    llm::TransportConfig transport;
    std::string backend = "http";  // see llm::make_backend
    std::shared_ptr<llm::ChatBackend> backend_instance;  // overrides `backend` when set
    std::string transcript_path;
    std::string run_id;
    std::string task_context;
};

/// Builds a strategist from its label:
///   static:      any abbreviation (e.g. "EI")
///   random:      "Random-Full" or "Random-<A>-<B>-..."
///   alternating: "Alt-<A>-<B>-<k>"
///   two-phase:   "TwoPhases-<A>-<B>"
///   portfolio:   "GP-Hedge", "No-PASt-BO", "SETUP-BO", "ESP", each optionally "-Curated"
///   scripted:    "Scripted-<A>-<B>-..." or "Scripted" (sequence from options)
///   llm:         "LMABO"
/// Throws NotFoundError for unknown labels.
std::unique_ptr<Strategist> make_strategist(const std::string& label, const StrategistOptions& options = {});

/// Labels of the built-in strategists (static kinds, baselines, curated variants, LMABO).
std::vector<std::string> strategist_labels();

/// Reads one abbreviation per line; blank lines and '#' comments are skipped.
Portfolio load_scripted_sequence(const std::string& path);

}  // namespace lmabo::strat
