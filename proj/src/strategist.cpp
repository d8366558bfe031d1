#include "lmabo/strategist.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lmabo/errors.hpp"
#include "lmabo/log.hpp"

namespace lmabo::strat {

namespace {

enum Purpose : std::uint64_t {
    kRandomPick = 101,
    kHedgeDraw = 102,
    kEspSet = 103,
    kEspDraw = 104,
    kEspFantasy = 105,
};

constexpr double kNoInformationVariance = 1e-10;

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string part;
    std::istringstream in(s);
    while (std::getline(in, part, sep)) out.push_back(part);
    return out;
}

std::string join_kinds(const Portfolio& kinds) {
    std::string out;
    for (Kind k : kinds) out += std::string(out.empty() ? "" : "-") + acq::abbreviation(k);
    return out;
}

Portfolio parse_kinds(const std::vector<std::string>& tokens, std::size_t from, std::size_t to) {
    Portfolio kinds;
    for (std::size_t i = from; i < to; ++i) kinds.push_back(acq::parse_kind(tokens[i]));
    return kinds;
}

struct Nominations {
    std::vector<std::optional<acq::Proposal>> proposals;
    std::vector<Index> ok;  // portfolio indices that produced a proposal
};

Nominations nominate(const Portfolio& portfolio, const acq::AcqContext& context) {
    Nominations n;
    n.proposals.resize(portfolio.size());
    for (std::size_t i = 0; i < portfolio.size(); ++i) {
        try {
            n.proposals[i] = acq::optimize_acquisition(portfolio[i], context);
            n.ok.push_back(static_cast<Index>(i));
        } catch (const std::exception& e) {
            log::warn(std::string(acq::abbreviation(portfolio[i])) + " failed to propose a point this round: " +
                      e.what());
        }
    }
    if (n.ok.empty()) throw DataError("every acquisition function in the portfolio failed to propose a point");
    return n;
}

// ---------------------------------------------------------------------------

class StaticStrategist : public Strategist {
public:
    explicit StaticStrategist(Kind kind) : portfolio_{kind} {}
    std::string label() const override { return acq::abbreviation(portfolio_[0]); }
    const Portfolio& portfolio() const override { return portfolio_; }
    Decision select(const IterationInput&) override {
        Decision d;
        d.kind = portfolio_[0];
        return d;
    }

private:
    Portfolio portfolio_;
};

class RandomStrategist : public Strategist {
public:
    RandomStrategist(std::string label, Portfolio subset) : label_(std::move(label)), subset_(std::move(subset)) {}
    std::string label() const override { return label_; }
    const Portfolio& portfolio() const override { return subset_; }
    Decision select(const IterationInput& input) override {
        Rng rng(derive_seed(input.seed, {kRandomPick}));
        Decision d;
        d.kind = random_select(subset_, rng);
        return d;
    }

private:
    std::string label_;
    Portfolio subset_;
};

class AlternatingStrategist : public Strategist {
public:
    AlternatingStrategist(Kind a, Kind b, int k) : portfolio_{a, b}, k_(k) {}
    std::string label() const override {
        return "Alt-" + join_kinds(portfolio_) + "-" + std::to_string(k_);
    }
    const Portfolio& portfolio() const override { return portfolio_; }
    Decision select(const IterationInput& input) override {
        Decision d;
        d.kind = alternating_select(portfolio_[0], portfolio_[1], k_, input.iteration);
        return d;
    }

private:
    Portfolio portfolio_;
    int k_;
};

class TwoPhaseStrategist : public Strategist {
public:
    TwoPhaseStrategist(Kind explore, Kind exploit, double split) : portfolio_{explore, exploit}, split_(split) {}
    std::string label() const override { return "TwoPhases-" + join_kinds(portfolio_); }
    const Portfolio& portfolio() const override { return portfolio_; }
    Decision select(const IterationInput& input) override {
        Decision d;
        d.kind = two_phase_select(portfolio_[0], portfolio_[1], split_, input.iteration, input.budget);
        return d;
    }

private:
    Portfolio portfolio_;
    double split_;
};

class ScriptedStrategist : public Strategist {
public:
    explicit ScriptedStrategist(Portfolio sequence) : sequence_(std::move(sequence)) {
        for (Kind k : sequence_)
            if (std::find(portfolio_.begin(), portfolio_.end(), k) == portfolio_.end()) portfolio_.push_back(k);
    }
    std::string label() const override { return "Scripted-" + join_kinds(sequence_); }
    const Portfolio& portfolio() const override { return portfolio_; }
    Decision select(const IterationInput& input) override {
        Decision d;
        d.kind = scripted_select(sequence_, input.iteration);
        return d;
    }

private:
    Portfolio sequence_;
    Portfolio portfolio_;
};

class HedgeStrategist : public Strategist {
public:
    HedgeStrategist(std::string label, HedgeVariant variant, Portfolio portfolio, double eta)
        : label_(std::move(label)),
          variant_(variant),
          portfolio_(std::move(portfolio)),
          state_(make_hedge_state(variant, static_cast<Index>(portfolio_.size()), eta)) {}

    std::string label() const override { return label_; }
    const Portfolio& portfolio() const override { return portfolio_; }

    Decision select(const IterationInput& input) override {
        Nominations n = nominate(portfolio_, input.acq);
        VectorXd sub_gains(static_cast<Index>(n.ok.size()));
        for (std::size_t j = 0; j < n.ok.size(); ++j) sub_gains[static_cast<Index>(j)] = state_.gains[n.ok[j]];
        const VectorXd sub_p = hedge_probabilities(sub_gains, state_.eta);
        Rng rng(derive_seed(input.seed, {kHedgeDraw}));
        const Index pick = n.ok[static_cast<std::size_t>(sample_index(sub_p, uniform01(rng)))];

        nominated_.assign(portfolio_.size(), std::nullopt);
        for (Index i : n.ok) nominated_[static_cast<std::size_t>(i)] = n.proposals[static_cast<std::size_t>(i)]->unit_point;

        Decision d;
        d.kind = portfolio_[static_cast<std::size_t>(pick)];
        d.proposal = n.proposals[static_cast<std::size_t>(pick)];
        d.probabilities.assign(portfolio_.size(), 0.0);
        for (std::size_t j = 0; j < n.ok.size(); ++j)
            d.probabilities[static_cast<std::size_t>(n.ok[j])] = sub_p[static_cast<Index>(j)];
        return d;
    }

    void observe(const Feedback& feedback) override {
        if (nominated_.empty() || !feedback.updated_model) return;
        ++rounds_;
        if (feedback.improved) ++improvements_;
        VectorXd rewards = VectorXd::Constant(static_cast<Index>(portfolio_.size()), std::nan(""));
        for (std::size_t i = 0; i < nominated_.size(); ++i) {
            if (!nominated_[i]) continue;
            const auto g = acq::predict_g(*feedback.updated_model, nominated_[i]->transpose());
            rewards[static_cast<Index>(i)] = g.mean[0];
        }
        // Arms without a nomination this round earn the round's worst reward (or nothing).
        double worst = std::numeric_limits<double>::infinity();
        for (Index i = 0; i < rewards.size(); ++i)
            if (std::isfinite(rewards[i])) worst = std::min(worst, rewards[i]);
        for (Index i = 0; i < rewards.size(); ++i)
            if (!std::isfinite(rewards[i])) rewards[i] = state_.normalize ? worst : 0.0;
        if (variant_ == HedgeVariant::SetupBO)
            state_.memory = adaptive_memory(static_cast<double>(improvements_) / static_cast<double>(rounds_));
        state_ = hedge_update(state_, rewards);
        nominated_.clear();
    }

    std::string checkpoint() const override {
        nlohmann::json j;
        j["gains"] = std::vector<double>(state_.gains.data(), state_.gains.data() + state_.gains.size());
        j["memory"] = state_.memory;
        j["rounds"] = rounds_;
        j["improvements"] = improvements_;
        return j.dump();
    }

    void restore(const std::string& state) override {
        const auto j = nlohmann::json::parse(state);
        const auto gains = j.at("gains").get<std::vector<double>>();
        if (gains.size() != portfolio_.size()) throw DataError("hedge checkpoint does not match the portfolio");
        state_.gains = Eigen::Map<const VectorXd>(gains.data(), static_cast<Index>(gains.size()));
        state_.memory = j.at("memory").get<double>();
        rounds_ = j.at("rounds").get<int>();
        improvements_ = j.at("improvements").get<int>();
    }

private:
    std::string label_;
    HedgeVariant variant_;
    Portfolio portfolio_;
    HedgeState state_;
    std::vector<std::optional<VectorXd>> nominated_;
    int rounds_ = 0;
    int improvements_ = 0;
};

class EspStrategist : public Strategist {
public:
    EspStrategist(std::string label, Portfolio portfolio, EspOptions options)
        : label_(std::move(label)), portfolio_(std::move(portfolio)), options_(options) {}

    std::string label() const override { return label_; }
    const Portfolio& portfolio() const override { return portfolio_; }

    Decision select(const IterationInput& input) override {
        const gp::GPModel& model = *input.model;
        Nominations n = nominate(portfolio_, input.acq);
        std::vector<VectorXd> points;
        for (Index i : n.ok) points.push_back(n.proposals[static_cast<std::size_t>(i)]->unit_point);

        const MatrixXd sobol = scrambled_sobol(options_.candidates, model.dim(), derive_seed(input.seed, {kEspSet}));
        MatrixXd candidates(sobol.rows() + static_cast<Index>(points.size()), model.dim());
        candidates.topRows(sobol.rows()) = sobol;
        for (std::size_t j = 0; j < points.size(); ++j)
            candidates.row(sobol.rows() + static_cast<Index>(j)) = points[j].transpose();

        const EspResult r = esp_select(model, points, candidates, options_.samples, options_.fantasies,
                                       derive_seed(input.seed, {kEspDraw}));
        const Index pick = n.ok[static_cast<std::size_t>(r.chosen)];
        Decision d;
        d.kind = portfolio_[static_cast<std::size_t>(pick)];
        d.proposal = n.proposals[static_cast<std::size_t>(pick)];
        return d;
    }

private:
    std::string label_;
    Portfolio portfolio_;
    EspOptions options_;
};

class LlmStrategist : public Strategist {
public:
    explicit LlmStrategist(const StrategistOptions& options)
        : portfolio_(full_portfolio()), context_(options.task_context), transcript_path_(options.transcript_path) {
        std::shared_ptr<llm::ChatBackend> backend = options.backend_instance;
        if (!backend) backend = llm::make_backend(options.backend, options.transport);
        session_ = std::make_unique<llm::ChatSession>(options.run_id, std::move(backend), options.transport,
                                                      options.transcript_path);
    }

    std::string label() const override { return "LMABO"; }
    const Portfolio& portfolio() const override { return portfolio_; }
    bool uses_llm() const override { return true; }
    const llm::ChatSession* chat_session() const override { return session_.get(); }

    Decision select(const IterationInput& input) override {
        if (!started_) {
            llm::start_conversation(*session_, context_);
            started_ = true;
        }
        const llm::Selection sel = llm::llm_select(input.snapshot, *session_, portfolio_);
        Decision d;
        d.kind = sel.decision.kind;
        d.justification = sel.decision.fallback_used && !sel.transport_failed ? sel.decision.raw
                                                                               : sel.decision.justification;
        if (sel.transport_failed) d.justification = sel.error;
        d.fallback_used = sel.decision.fallback_used;
        d.transport_failed = sel.transport_failed;
        return d;
    }

    std::string checkpoint() const override {
        return nlohmann::json{{"started", started_}, {"turns", session_->turns().size()}}.dump();
    }

    void restore(const std::string& state) override {
        const auto j = nlohmann::json::parse(state);
        started_ = j.at("started").get<bool>();
        const auto n = j.at("turns").get<std::size_t>();
        std::vector<llm::Turn> turns;
        if (!transcript_path_.empty() && std::filesystem::exists(transcript_path_))
            turns = llm::load_transcript(transcript_path_);
        if (turns.size() < n) throw DataError("transcript " + transcript_path_ + " is shorter than its checkpoint");
        turns.resize(n);
        session_->restore(std::move(turns));
    }

private:
    Portfolio portfolio_;
    std::string context_;
    std::string transcript_path_;
    std::unique_ptr<llm::ChatSession> session_;
    bool started_ = false;
};

}  // namespace

Portfolio full_portfolio() { return {acq::kPortfolio.begin(), acq::kPortfolio.end()}; }
Portfolio curated_portfolio() { return {Kind::EI, Kind::LogEI, Kind::TS}; }
Portfolio popular_portfolio() { return {Kind::EI, Kind::TS, Kind::UCB, Kind::PosMean}; }

Kind alternating_select(Kind a, Kind b, int k, int iteration) {
    if (k < 1 || iteration < 1) throw ArgumentError("alternation needs k >= 1 and a 1-based iteration");
    return ((iteration - 1) / k) % 2 == 0 ? a : b;
}

Kind two_phase_select(Kind explore, Kind exploit, double split, int iteration, int budget) {
    if (!(split > 0.0 && split < 1.0)) throw ArgumentError("two-phase split must lie in (0, 1)");
    if (iteration < 1 || budget < 1) throw ArgumentError("two-phase needs a 1-based iteration and budget >= 1");
    const int switch_at = static_cast<int>(std::ceil(split * budget));
    return iteration <= switch_at ? explore : exploit;
}

Kind scripted_select(const Portfolio& sequence, int iteration) {
    if (sequence.empty()) throw ArgumentError("scripted sequence is empty");
    if (iteration < 1) throw ArgumentError("iteration is 1-based");
    return sequence[static_cast<std::size_t>(iteration - 1) % sequence.size()];
}

Kind random_select(const Portfolio& subset, Rng& rng) {
    if (subset.empty()) throw ArgumentError("random selection over an empty subset");
    const auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(subset.size()));
    return subset[std::min(i, subset.size() - 1)];
}

HedgeState make_hedge_state(HedgeVariant variant, Index n_arms, double eta) {
    if (n_arms < 1) throw ArgumentError("hedge needs at least one arm");
    if (!(eta > 0.0)) throw ArgumentError("hedge eta must be positive");
    HedgeState s;
    s.gains = VectorXd::Zero(n_arms);
    s.eta = eta;
    switch (variant) {
        case HedgeVariant::GPHedge:
            s.memory = 1.0;
            s.normalize = false;
            break;
        case HedgeVariant::NoPastBO:
            s.memory = 0.9;
            s.normalize = true;
            break;
        case HedgeVariant::SetupBO:
            s.memory = 0.99;
            s.normalize = true;
            break;
    }
    return s;
}

VectorXd hedge_probabilities(const VectorXd& gains, double eta) {
    if (gains.size() == 0) throw ArgumentError("hedge probabilities of an empty gain vector");
    if (!gains.allFinite()) throw ArgumentError("hedge gains must be finite");
    const VectorXd z = eta * gains;
    const VectorXd w = (z.array() - z.maxCoeff()).exp();
    return w / w.sum();
}

HedgeState hedge_update(const HedgeState& state, const VectorXd& rewards) {
    if (rewards.size() != state.gains.size()) throw ArgumentError("reward vector length must match the arms");
    if (!rewards.allFinite()) throw ArgumentError("rewards must be finite");
    VectorXd r = rewards;
    if (state.normalize) {
        const double lo = r.minCoeff(), hi = r.maxCoeff();
        r = hi > lo ? VectorXd((r.array() - lo) / (hi - lo)) : VectorXd::Constant(r.size(), 0.5);
    }
    HedgeState next = state;
    next.gains = state.memory * state.gains + r;
    return next;
}

double adaptive_memory(double improvement_rate) { return std::clamp(1.0 - improvement_rate, 0.5, 0.99); }

Index sample_index(const VectorXd& probabilities, double u) {
    double acc = 0.0;
    for (Index i = 0; i < probabilities.size(); ++i) {
        acc += probabilities[i];
        if (u < acc) return i;
    }
    // u sits above the rounded total: take the last arm with positive mass.
    for (Index i = probabilities.size(); i-- > 0;)
        if (probabilities[i] > 0.0) return i;
    throw ArgumentError("probability vector has no positive entry");
}

double discrete_entropy(const VectorXd& p) {
    double h = 0.0;
    for (Index i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    return h;
}

VectorXd optimum_distribution(const gp::GPModel& model, const MatrixXd& unit_candidates, int n_samples,
                              std::uint64_t seed) {
    if (n_samples < 1) throw ArgumentError("optimum distribution needs at least one sample");
    Rng rng(seed);
    const MatrixXd draws = gp::sample_joint_unit(model, unit_candidates, n_samples, rng);
    VectorXd p = VectorXd::Zero(unit_candidates.rows());
    for (Index s = 0; s < draws.rows(); ++s) {
        Index best = 0;
        for (Index c = 1; c < draws.cols(); ++c)
            if (draws(s, c) < draws(s, best)) best = c;
        p[best] += 1.0;
    }
    return p / static_cast<double>(n_samples);
}

EspResult esp_select(const gp::GPModel& model, const std::vector<VectorXd>& unit_proposals,
                     const MatrixXd& unit_candidates, int n_samples, int n_fantasies, std::uint64_t seed) {
    if (unit_proposals.empty()) throw ArgumentError("ESP needs at least one proposal");
    if (n_fantasies < 1) throw ArgumentError("ESP needs at least one fantasy");
    const std::uint64_t draw_seed = derive_seed(seed, {kEspDraw});
    EspResult r;
    r.prior_entropy = discrete_entropy(optimum_distribution(model, unit_candidates, n_samples, draw_seed));
    r.reduction.assign(unit_proposals.size(), 0.0);
    r.skipped.assign(unit_proposals.size(), false);

    const double var_floor = kNoInformationVariance * model.params().outputscale;
    for (std::size_t i = 0; i < unit_proposals.size(); ++i) {
        const MatrixXd x = unit_proposals[i].transpose();
        const auto pred = model.predict_unit(x);
        if (pred.variance[0] <= var_floor) continue;  // an observation there teaches nothing
        Rng fantasy_rng(derive_seed(seed, {kEspFantasy}));
        double total = 0.0;
        try {
            for (int f = 0; f < n_fantasies; ++f) {
                const double y = pred.mean[0] + std::sqrt(pred.variance[0]) * standard_normal(fantasy_rng);
                const gp::GPModel conditioned = model.condition_unit(x, VectorXd::Constant(1, y));
                total += discrete_entropy(optimum_distribution(conditioned, unit_candidates, n_samples, draw_seed));
            }
        } catch (const std::exception& e) {
            log::warn("ESP skipped a proposal: " + std::string(e.what()));
            r.skipped[i] = true;
            continue;
        }
        r.reduction[i] = r.prior_entropy - total / n_fantasies;
    }

    Index best = -1;
    for (std::size_t i = 0; i < unit_proposals.size(); ++i) {
        if (r.skipped[i]) continue;
        if (best < 0 || r.reduction[i] > r.reduction[static_cast<std::size_t>(best)]) best = static_cast<Index>(i);
    }
    if (best < 0) throw NumericalError("ESP could not score any proposal", 0.0);
    r.chosen = best;
    return r;
}

Portfolio load_scripted_sequence(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read scripted sequence " + path);
    Portfolio seq;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line.erase(0, line.find_first_not_of(" \t\r"));
        line.erase(line.find_last_not_of(" \t\r") + 1);
        if (!line.empty()) seq.push_back(acq::parse_kind(line));
    }
    if (seq.empty()) throw ConfigError("scripted sequence " + path + " is empty");
    return seq;
}

std::unique_ptr<Strategist> make_strategist(const std::string& label, const StrategistOptions& options) {
    if (auto kind = acq::kind_from_string(label); kind && label.find('-') == std::string::npos)
        return std::make_unique<StaticStrategist>(*kind);

    std::string base = label;
    bool curated = false;
    const std::string suffix = "-Curated";
    if (base.size() > suffix.size() && base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
        curated = true;
        base.erase(base.size() - suffix.size());
    }
    const Portfolio hedge_set = curated ? curated_portfolio() : full_portfolio();
    if (base == "GP-Hedge")
        return std::make_unique<HedgeStrategist>(label, HedgeVariant::GPHedge, hedge_set, options.eta);
    if (base == "No-PASt-BO")
        return std::make_unique<HedgeStrategist>(label, HedgeVariant::NoPastBO, hedge_set, options.eta);
    if (base == "SETUP-BO")
        return std::make_unique<HedgeStrategist>(label, HedgeVariant::SetupBO, hedge_set, options.eta);
    if (base == "ESP") return std::make_unique<EspStrategist>(label, hedge_set, options.esp);
    if (curated) throw NotFoundError("unknown strategist: " + label);

    if (label == "LMABO") return std::make_unique<LlmStrategist>(options);

    const auto tokens = split(label, '-');
    try {
        if (tokens[0] == "Random" && tokens.size() >= 2) {
            if (tokens.size() == 2 && tokens[1] == "Full")
                return std::make_unique<RandomStrategist>(label, full_portfolio());
            return std::make_unique<RandomStrategist>(label, parse_kinds(tokens, 1, tokens.size()));
        }
        if (tokens[0] == "Alt" && tokens.size() == 4) {
            const int k = std::stoi(tokens[3]);
            if (k < 1) throw ArgumentError("block length must be >= 1");
            return std::make_unique<AlternatingStrategist>(acq::parse_kind(tokens[1]), acq::parse_kind(tokens[2]), k);
        }
        if (tokens[0] == "TwoPhases" && tokens.size() == 3)
            return std::make_unique<TwoPhaseStrategist>(acq::parse_kind(tokens[1]), acq::parse_kind(tokens[2]),
                                                        options.two_phase_split);
        if (tokens[0] == "Scripted") {
            if (tokens.size() == 1) {
                if (options.scripted_sequence.empty()) throw ArgumentError("scripted strategist without a sequence");
                return std::make_unique<ScriptedStrategist>(options.scripted_sequence);
            }
            return std::make_unique<ScriptedStrategist>(parse_kinds(tokens, 1, tokens.size()));
        }
    } catch (const std::invalid_argument& e) {
        throw NotFoundError("unknown strategist: " + label + " (" + e.what() + ")");
    }
    throw NotFoundError("unknown strategist: " + label);
}

std::vector<std::string> strategist_labels() {
    std::vector<std::string> labels;
    for (Kind k : acq::kPortfolio) labels.emplace_back(acq::abbreviation(k));
    for (const char* l : {"Random-Full", "Random-EI-TS-UCB-PosMean", "Random-EI-LogEI-TS", "Alt-EI-TS-1", "Alt-EI-TS-3",
                          "Alt-EI-TS-5", "TwoPhases-TS-EI", "GP-Hedge", "No-PASt-BO", "SETUP-BO", "ESP",
                          "GP-Hedge-Curated", "No-PASt-BO-Curated", "SETUP-BO-Curated", "ESP-Curated", "LMABO",
                          "Scripted-EI-TS"})
        labels.emplace_back(l);
    return labels;
}

}  // namespace lmabo::strat
