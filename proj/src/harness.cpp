#include "lmabo/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "lmabo/errors.hpp"
#include "lmabo/log.hpp"
#include "lmabo/random.hpp"

namespace lmabo::harness {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

enum Purpose : std::uint64_t {
    kInitDesign = 201,
    kFit = 202,
    kAcquisition = 203,
    kStrategist = 204,
    kNoise = 205,
    kRandomFallback = 206,
};

constexpr double kRecoveryNoiseFloors[] = {1e-6, 1e-4, 1e-2};

std::string sanitize(const std::string& s) {
    std::string out = s;
    for (char& c : out)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
    return out;
}

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

VectorXd to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

HyperStats hyper_stats(const gp::KernelParams& p) {
    return {to_std(p.lengthscales), p.outputscale, p.noise_variance};
}

double evaluate_point(const bench::Problem& problem, const VectorXd& x, std::uint64_t seed, std::uint64_t index) {
    if (problem.noise_std > 0.0) {
        Rng rng(derive_seed(seed, {kNoise, index}));
        return bench::evaluate(problem, x, &rng);
    }
    return bench::evaluate(problem, x);
}

struct FitOutcome {
    gp::GPModel model;
    bool recovered = false;
};

FitOutcome fit_with_recovery(const gp::Dataset& data, const RunConfig& config, int iteration,
                             const std::optional<gp::KernelParams>& warm) {
    gp::FitConfig fc;
    fc.n_restarts = config.fit_restarts;
    fc.seed = derive_seed(config.seed, {kFit, static_cast<std::uint64_t>(iteration)});
    fc.family = config.kernel;
    fc.warm_start = warm;
    try {
        return {gp::fit(data, fc), false};
    } catch (const std::exception& e) {
        log::warn("GP fit failed at iteration " + std::to_string(iteration) + " (" + e.what() +
                  "); refitting with an inflated noise floor");
    }
    fc.warm_start.reset();
    std::string last;
    for (double floor : kRecoveryNoiseFloors) {
        fc.min_log_noise = std::max(fc.min_log_noise, std::log(floor));
        try {
            FitOutcome out{gp::fit(data, fc), true};
            log::warn("GP fit recovered with noise floor " + std::to_string(floor));
            return out;
        } catch (const std::exception& e) {
            last = e.what();
        }
    }
    throw FitError("GP fit failed even with noise floor 1e-2: " + last);
}

double normalized_min_distance(const gp::Bounds& bounds, const MatrixXd& points) {
    const Index n = points.rows();
    if (n < 2) return 0.0;
    const VectorXd range = bounds.upper - bounds.lower;
    const VectorXd last = points.row(n - 1).transpose();
    double best = std::numeric_limits<double>::infinity();
    for (Index i = 0; i + 1 < n; ++i) {
        const VectorXd d = (points.row(i).transpose() - last).cwiseQuotient(range);
        best = std::min(best, d.norm());
    }
    return best;
}

ordered_json hyper_to_json(const HyperStats& h) {
    return {{"lengthscales", h.lengthscales}, {"outputscale", h.outputscale}, {"noise_variance", h.noise_variance}};
}

void append_line(const std::string& path, const std::string& line) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot append to record " + path);
    out << line << '\n';
    out.flush();
    if (!out) throw IoError("write failed for record " + path);
}

void write_record(const std::string& path, const RunRecord& record) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot write record " + tmp);
        out << header_to_json(record.header) << '\n';
        for (const auto& it : record.iterations) out << iteration_to_json(it) << '\n';
        if (!out) throw IoError("write failed for record " + tmp);
    }
    fs::rename(tmp, path);
}

void check_resumable(const RunHeader& existing, const RunHeader& expected, const std::string& path) {
    auto mismatch = [&](const std::string& field) {
        throw ConfigError("existing record " + path + " was written with a different " + field +
                          "; move it away to start over");
    };
    if (existing.schema != expected.schema) mismatch("schema");
    if (existing.problem != expected.problem) mismatch("problem");
    if (existing.strategist != expected.strategist) mismatch("strategist");
    if (existing.seed != expected.seed) mismatch("seed");
    if (existing.dim != expected.dim) mismatch("dimension");
    if (existing.budget != expected.budget) mismatch("budget");
    if (existing.n_init != expected.n_init) mismatch("initial design size");
}

}  // namespace

// ---------------------------------------------------------------------------

MatrixXd initial_design(const gp::Bounds& bounds, std::uint64_t seed) {
    bounds.validate();
    const Index d = bounds.dim();
    const MatrixXd u = scrambled_sobol(2 * d + 1, d, seed);
    MatrixXd x(u.rows(), d);
    for (Index i = 0; i < u.rows(); ++i)
        x.row(i) = (bounds.lower + u.row(i).transpose().cwiseProduct(bounds.upper - bounds.lower)).transpose();
    return x;
}

int default_init_size(int dim) {
    if (dim < 1) throw ArgumentError("dimension must be >= 1");
    return 2 * dim + 1;
}

int default_budget(int dim) {
    if (dim < 1) throw ArgumentError("dimension must be >= 1");
    return dim < 10 ? 50 : 100;
}

int remaining_budget(int budget, int n_init, int n_evaluated) { return budget - (n_evaluated - n_init); }

llm::StateSnapshot state_snapshot(const gp::GPModel& model, int budget, int n_init) {
    return llm::make_snapshot(model, remaining_budget(budget, n_init, static_cast<int>(model.size())));
}

void RunConfig::validate() const {
    if (problem.empty()) throw ConfigError("run config: problem is empty");
    if (strategist.empty()) throw ConfigError("run config: strategist is empty");
    if (budget && *budget < 1) throw ConfigError("run config: budget must be >= 1");
    if (init && *init < 1) throw ConfigError("run config: init size must be >= 1");
    if (fit_restarts < 1) throw ConfigError("run config: fit_restarts must be >= 1");
    if (output_dir.empty()) throw ConfigError("run config: output_dir is empty");
    mc.validate();
}

std::string RunConfig::run_id() const {
    return sanitize(problem) + "__" + sanitize(strategist) + "__seed" + std::to_string(seed);
}

std::string RunConfig::record_path() const { return (fs::path(output_dir) / (run_id() + ".jsonl")).string(); }

std::string RunConfig::transcript_path() const {
    return (fs::path(output_dir) / "transcripts" / (run_id() + ".jsonl")).string();
}

std::vector<double> RunRecord::incumbents() const {
    std::vector<double> out;
    if (header.init_values.empty()) return out;
    double best = *std::min_element(header.init_values.begin(), header.init_values.end());
    out.push_back(best);
    for (const auto& it : iterations) {
        best = std::min(best, it.y);
        out.push_back(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string header_to_json(const RunHeader& h) {
    ordered_json j;
    j["type"] = "header";
    j["schema"] = h.schema;
    j["run_id"] = h.run_id;
    j["problem"] = h.problem;
    j["strategist"] = h.strategist;
    j["seed"] = h.seed;
    j["dim"] = h.dim;
    j["budget"] = h.budget;
    j["n_init"] = h.n_init;
    j["lower"] = h.lower;
    j["upper"] = h.upper;
    j["known_optimum"] = h.known_optimum ? ordered_json(*h.known_optimum) : ordered_json(nullptr);
    j["portfolio"] = h.portfolio;
    j["uses_llm"] = h.uses_llm;
    j["init_points"] = h.init_points;
    j["init_values"] = h.init_values;
    return j.dump();
}

std::string iteration_to_json(const IterationRecord& r) {
    ordered_json j;
    j["type"] = "iteration";
    j["iteration"] = r.iteration;
    j["af"] = acq::abbreviation(r.kind);
    j["justification"] = r.justification;
    j["x"] = r.x;
    j["y"] = r.y;
    j["incumbent"] = r.incumbent;
    j["shortest_distance"] = r.shortest_distance;
    j["hyper"] = hyper_to_json(r.hyper);
    j["fallback"] = r.fallback_used;
    j["transport_failed"] = r.transport_failed;
    j["gp_recovered"] = r.gp_recovered;
    j["acq_fallback"] = r.acq_fallback;
    j["probabilities"] = r.probabilities;
    j["warnings"] = r.warnings;
    j["strategist_state"] = r.strategist_state;
    j["wall_ms"] = r.wall_ms;
    return j.dump();
}

RunRecord load_record(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open record " + path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) lines.push_back(line);
    if (lines.empty()) throw DataError("record " + path + " is empty");

    RunRecord rec;
    bool have_header = false;
    for (std::size_t k = 0; k < lines.size(); ++k) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(lines[k]);
        } catch (const nlohmann::json::exception&) {
            if (k + 1 == lines.size() && have_header) {
                log::warn("ignoring torn final line of " + path);
                break;
            }
            throw DataError("record " + path + ": line " + std::to_string(k + 1) + " is not valid JSON");
        }
        try {
            const std::string type = j.at("type").get<std::string>();
            if (type == "header") {
                if (have_header) throw DataError("record " + path + " has two header lines");
                RunHeader& h = rec.header;
                h.schema = j.at("schema").get<std::string>();
                if (h.schema != kRecordSchema) throw DataError("record " + path + ": unsupported schema " + h.schema);
                h.run_id = j.at("run_id").get<std::string>();
                h.problem = j.at("problem").get<std::string>();
                h.strategist = j.at("strategist").get<std::string>();
                h.seed = j.at("seed").get<std::uint64_t>();
                h.dim = j.at("dim").get<int>();
                h.budget = j.at("budget").get<int>();
                h.n_init = j.at("n_init").get<int>();
                h.lower = j.at("lower").get<std::vector<double>>();
                h.upper = j.at("upper").get<std::vector<double>>();
                if (!j.at("known_optimum").is_null()) h.known_optimum = j.at("known_optimum").get<double>();
                h.portfolio = j.at("portfolio").get<std::vector<std::string>>();
                h.uses_llm = j.at("uses_llm").get<bool>();
                h.init_points = j.at("init_points").get<std::vector<std::vector<double>>>();
                h.init_values = j.at("init_values").get<std::vector<double>>();
                have_header = true;
            } else if (type == "iteration") {
                if (!have_header) throw DataError("record " + path + ": iteration before the header");
                IterationRecord r;
                r.iteration = j.at("iteration").get<int>();
                r.kind = acq::parse_kind(j.at("af").get<std::string>());
                r.justification = j.at("justification").get<std::string>();
                r.x = j.at("x").get<std::vector<double>>();
                r.y = j.at("y").get<double>();
                r.incumbent = j.at("incumbent").get<double>();
                r.shortest_distance = j.at("shortest_distance").get<double>();
                const auto& hy = j.at("hyper");
                r.hyper.lengthscales = hy.at("lengthscales").get<std::vector<double>>();
                r.hyper.outputscale = hy.at("outputscale").get<double>();
                r.hyper.noise_variance = hy.at("noise_variance").get<double>();
                r.fallback_used = j.at("fallback").get<bool>();
                r.transport_failed = j.at("transport_failed").get<bool>();
                r.gp_recovered = j.at("gp_recovered").get<bool>();
                r.acq_fallback = j.at("acq_fallback").get<bool>();
                r.probabilities = j.at("probabilities").get<std::vector<double>>();
                r.warnings = j.at("warnings").get<std::vector<std::string>>();
                r.strategist_state = j.at("strategist_state").get<std::string>();
                r.wall_ms = j.at("wall_ms").get<double>();
                if (r.iteration != static_cast<int>(rec.iterations.size()) + 1)
                    throw DataError("record " + path + ": iteration " + std::to_string(r.iteration) + " out of order");
                rec.iterations.push_back(std::move(r));
            } else if (type == "abort") {
                rec.abort_reason = j.at("reason").get<std::string>();
            } else {
                throw DataError("record " + path + ": unknown line type " + type);
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError("record " + path + ": line " + std::to_string(k + 1) + ": " + e.what());
        } catch (const ArgumentError& e) {
            throw DataError("record " + path + ": line " + std::to_string(k + 1) + ": " + e.what());
        }
    }
    if (!have_header) throw DataError("record " + path + " has no header line");
    return rec;
}

bool same_outcome(const RunRecord& a, const RunRecord& b) {
    if (header_to_json(a.header) != header_to_json(b.header)) return false;
    if (a.abort_reason != b.abort_reason || a.iterations.size() != b.iterations.size()) return false;
    for (std::size_t i = 0; i < a.iterations.size(); ++i) {
        IterationRecord x = a.iterations[i];
        IterationRecord y = b.iterations[i];
        x.wall_ms = y.wall_ms = 0.0;
        if (iteration_to_json(x) != iteration_to_json(y)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Loop

RunRecord run(const RunConfig& config) {
    config.validate();
    const bench::Problem problem = bench::find_problem(config.problem);
    const int dim = problem.dim;
    const int budget = config.budget.value_or(default_budget(dim));
    const int n_init = config.init.value_or(default_init_size(dim));

    strat::StrategistOptions sopts = config.strategist_options;
    sopts.run_id = config.run_id();
    sopts.transcript_path = config.transcript_path();
    auto strategist = strat::make_strategist(config.strategist, sopts);

    RunRecord rec;
    RunHeader& h = rec.header;
    h.run_id = config.run_id();
    h.problem = config.problem;
    h.strategist = config.strategist;
    h.seed = config.seed;
    h.dim = dim;
    h.budget = budget;
    h.n_init = n_init;
    h.lower = to_std(problem.bounds.lower);
    h.upper = to_std(problem.bounds.upper);
    h.known_optimum = problem.known_optimum;
    for (acq::Kind k : strategist->portfolio()) h.portfolio.emplace_back(acq::abbreviation(k));
    h.uses_llm = strategist->uses_llm();

    fs::create_directories(config.output_dir);
    const std::string path = config.record_path();

    if (fs::exists(path)) {
        RunRecord existing = load_record(path);
        check_resumable(existing.header, h, path);
        if (existing.complete()) {
            log::info("record " + path + " is complete; nothing to do");
            return existing;
        }
        rec = std::move(existing);
        rec.abort_reason.reset();
        write_record(path, rec);
        if (!rec.iterations.empty()) strategist->restore(rec.iterations.back().strategist_state);
        log::info("resuming " + h.run_id + " after iteration " + std::to_string(rec.iterations.size()));
    } else {
        // Initial design; with an init override the Sobol sequence is truncated or extended.
        const MatrixXd design = [&] {
            if (n_init == 2 * dim + 1) return initial_design(problem.bounds, derive_seed(config.seed, {kInitDesign}));
            const MatrixXd u = scrambled_sobol(n_init, dim, derive_seed(config.seed, {kInitDesign}));
            MatrixXd x(n_init, dim);
            for (Index i = 0; i < n_init; ++i)
                x.row(i) = (problem.bounds.lower +
                            u.row(i).transpose().cwiseProduct(problem.bounds.upper - problem.bounds.lower))
                               .transpose();
            return x;
        }();
        for (Index i = 0; i < design.rows(); ++i) {
            const VectorXd x = design.row(i).transpose();
            h.init_points.push_back(to_std(x));
            h.init_values.push_back(evaluate_point(problem, x, config.seed, static_cast<std::uint64_t>(i)));
        }
        write_record(path, rec);
    }

    gp::Dataset data;
    data.bounds = problem.bounds;
    data.points.resize(0, dim);
    data.values.resize(0);
    for (std::size_t i = 0; i < h.init_points.size(); ++i) data.append(to_eigen(h.init_points[i]), h.init_values[i]);
    for (const auto& it : rec.iterations) data.append(to_eigen(it.x), it.y);

    std::optional<gp::KernelParams> warm;
    if (!rec.iterations.empty()) {
        const HyperStats& hs = rec.iterations.back().hyper;
        gp::KernelParams p;
        p.lengthscales = to_eigen(hs.lengthscales);
        p.outputscale = hs.outputscale;
        p.noise_variance = hs.noise_variance;
        p.family = config.kernel;
        warm = p;
    }
    double incumbent = rec.incumbents().back();

    for (int t = static_cast<int>(rec.iterations.size()) + 1; t <= budget; ++t) {
        const auto start = std::chrono::steady_clock::now();
        const auto tag = static_cast<std::uint64_t>(t);
        IterationRecord ir;
        ir.iteration = t;
        try {
            log::WarningCapture capture;
            FitOutcome fitted = fit_with_recovery(data, config, t, warm);
            const gp::GPModel& model = fitted.model;
            ir.gp_recovered = fitted.recovered;
            ir.hyper = hyper_stats(model.params());

            strat::IterationInput in;
            in.iteration = t;
            in.budget = budget;
            in.model = &model;
            in.acq = acq::AcqContext::make(model, derive_seed(config.seed, {kAcquisition, tag}), config.kappa, config.mc);
            in.seed = derive_seed(config.seed, {kStrategist, tag});
            in.snapshot = state_snapshot(model, budget, n_init);

            std::optional<acq::Proposal> proposal;
            try {
                strat::Decision d = strategist->select(in);
                ir.kind = d.kind;
                ir.justification = d.justification;
                ir.fallback_used = d.fallback_used;
                ir.transport_failed = d.transport_failed;
                ir.probabilities = d.probabilities;
                proposal = d.proposal ? std::move(d.proposal) : acq::optimize_acquisition(d.kind, in.acq);
            } catch (const ConfigError&) {
                throw;
            } catch (const std::exception& e) {
                log::warn(std::string("acquisition failed at iteration ") + std::to_string(t) + " (" + e.what() +
                          "); evaluating a random point instead");
                ir.acq_fallback = true;
            }
            VectorXd x;
            if (proposal) {
                x = problem.bounds.clamp(proposal->point);
            } else {
                Rng rng(derive_seed(config.seed, {kRandomFallback, tag}));
                const VectorXd u = uniform_points(1, dim, rng).row(0).transpose();
                x = problem.bounds.lower + u.cwiseProduct(problem.bounds.upper - problem.bounds.lower);
            }

            const double y = evaluate_point(problem, x, config.seed, static_cast<std::uint64_t>(n_init + t - 1));
            data.append(x, y);
            const bool improved = y < incumbent;
            incumbent = std::min(incumbent, y);

            std::optional<gp::GPModel> updated;
            try {
                updated = model.with_dataset(data);
            } catch (const std::exception& e) {
                log::warn(std::string("could not condition on the new point for strategist feedback: ") + e.what());
            }
            strategist->observe({updated ? &*updated : nullptr, y, improved});

            ir.x = to_std(x);
            ir.y = y;
            ir.incumbent = incumbent;
            ir.shortest_distance = normalized_min_distance(problem.bounds, data.points);
            ir.strategist_state = strategist->checkpoint();
            ir.warnings = capture.messages();
            warm = model.params();
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            const std::string reason = "iteration " + std::to_string(t) + ": " + e.what();
            log::error("run " + h.run_id + " aborted at " + reason);
            rec.abort_reason = reason;
            append_line(path, ordered_json{{"type", "abort"}, {"reason", reason}}.dump());
            return rec;
        }
        ir.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        append_line(path, iteration_to_json(ir));
        rec.iterations.push_back(std::move(ir));
    }
    return rec;
}

std::vector<RunRecord> run_many(const std::vector<RunConfig>& configs, int parallel) {
    std::vector<RunRecord> out(configs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) {
            try {
                out[i] = run(configs[i]);
            } catch (const std::exception& e) {
                log::error("run " + configs[i].run_id() + " failed: " + e.what());
                out[i].header.run_id = configs[i].run_id();
                out[i].header.problem = configs[i].problem;
                out[i].header.strategist = configs[i].strategist;
                out[i].header.seed = configs[i].seed;
                out[i].abort_reason = e.what();
            }
        }
    };
    const int n = std::max(1, std::min<int>(parallel, static_cast<int>(configs.size())));
    std::vector<std::thread> threads;
    for (int k = 1; k < n; ++k) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    return out;
}

}  // namespace lmabo::harness
