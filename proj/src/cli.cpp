#include "lmabo/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lmabo/analysis.hpp"
#include "lmabo/benchmarks.hpp"
#include "lmabo/errors.hpp"
#include "lmabo/strategist.hpp"

namespace lmabo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void field_error(const std::string& path, const std::string& field, const std::string& what) {
    throw ConfigError(path + ": field '" + field + "': " + what);
}

template <class T>
T get_field(const json& j, const std::string& path, const std::string& field) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        field_error(path, field, "has the wrong type");
    }
}

std::vector<std::string> string_list(const json& root, const char* key, const std::string& path, bool required) {
    if (!root.contains(key)) {
        if (required) field_error(path, key, "is required");
        return {};
    }
    const json& arr = root.at(key);
    if (!arr.is_array()) field_error(path, key, "must be a list");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string f = std::string(key) + "[" + std::to_string(i) + "]";
        if (!arr[i].is_string()) field_error(path, f, "must be a string");
        out.push_back(arr[i].get<std::string>());
        if (out.back().empty()) field_error(path, f, "is empty");
    }
    return out;
}

std::optional<int> positive_int(const json& obj, const char* key, const std::string& path, const std::string& prefix) {
    if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
    const std::string f = prefix + key;
    if (!obj.at(key).is_number_integer()) field_error(path, f, "must be an integer");
    const int v = obj.at(key).get<int>();
    if (v < 1) field_error(path, f, "must be >= 1");
    return v;
}

bool is_llm_label(const std::string& label) { return label == "LMABO"; }

std::string strategist_tag(const std::string& label) {
    for (acq::Kind k : acq::kPortfolio)
        if (label == acq::abbreviation(k)) return "static";
    auto starts = [&](const char* p) { return label.rfind(p, 0) == 0; };
    if (starts("Random-") || starts("Alt-") || starts("TwoPhases-")) return "meta";
    if (starts("GP-Hedge") || starts("No-PASt-BO") || starts("SETUP-BO") || starts("ESP")) return "portfolio";
    if (is_llm_label(label)) return "llm";
    if (starts("Scripted")) return "scripted";
    return "other";
}

std::string cell_name(const harness::RunConfig& c) {
    return "(problem=" + c.problem + ", strategist=" + c.strategist + ", seed=" + std::to_string(c.seed) + ")";
}

std::string fmt_fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

/// Maps library exceptions to exit codes and prints them.
template <class F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return kConfigFailure;
    } catch (const ArgumentError& e) {
        err << "argument error: " << e.what() << '\n';
        return kConfigFailure;
    } catch (const NotFoundError& e) {
        err << "not found: " << e.what() << '\n';
        return kNotFound;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kDataFailure;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kIoFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRunFailures;
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

CampaignManifest parse_manifest(const std::string& json_text, const std::string& path) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    if (!root.is_object()) throw ConfigError(path + ": top level must be an object");
    static const std::set<std::string> known = {"schema",   "problems", "strategists", "seeds",     "user_problems",
                                                "output",   "budget",   "init",        "fit_restarts", "kappa",
                                                "overrides", "transport", "task_context"};
    for (const auto& [key, _] : root.items())
        if (!known.count(key)) field_error(path, key, "unknown field");

    CampaignManifest m;
    m.path = path;
    if (!root.contains("schema")) field_error(path, "schema", "is required");
    const auto schema = get_field<std::string>(root.at("schema"), path, "schema");
    if (schema != kManifestSchema) field_error(path, "schema", "unsupported version " + schema + " (expected " + kManifestSchema + ")");

    m.problems = string_list(root, "problems", path, true);
    m.strategists = string_list(root, "strategists", path, true);
    m.user_problems = string_list(root, "user_problems", path, false);
    if (!root.contains("seeds")) field_error(path, "seeds", "is required");
    const json& seeds = root.at("seeds");
    if (!seeds.is_array()) field_error(path, "seeds", "must be a list");
    std::set<std::uint64_t> seen;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const std::string f = "seeds[" + std::to_string(i) + "]";
        if (!seeds[i].is_number_unsigned()) field_error(path, f, "must be a non-negative integer");
        const auto s = seeds[i].get<std::uint64_t>();
        if (!seen.insert(s).second) field_error(path, f, "duplicate seed " + std::to_string(s));
        m.seeds.push_back(s);
    }
    if (m.problems.empty()) field_error(path, "problems", "is empty");
    if (m.strategists.empty()) field_error(path, "strategists", "is empty");
    if (m.seeds.empty()) field_error(path, "seeds", "is empty");

    if (root.contains("output")) m.output = get_field<std::string>(root.at("output"), path, "output");
    if (m.output.empty()) field_error(path, "output", "is empty");
    m.budget = positive_int(root, "budget", path, "");
    m.init = positive_int(root, "init", path, "");
    if (auto r = positive_int(root, "fit_restarts", path, "")) m.fit_restarts = *r;
    if (root.contains("kappa")) {
        m.kappa = get_field<double>(root.at("kappa"), path, "kappa");
        if (!(m.kappa > 0.0)) field_error(path, "kappa", "must be > 0");
    }
    if (root.contains("task_context")) m.task_context = get_field<std::string>(root.at("task_context"), path, "task_context");

    if (root.contains("overrides")) {
        const json& ov = root.at("overrides");
        if (!ov.is_array()) field_error(path, "overrides", "must be a list");
        for (std::size_t i = 0; i < ov.size(); ++i) {
            const std::string prefix = "overrides[" + std::to_string(i) + "].";
            if (!ov[i].is_object()) field_error(path, "overrides[" + std::to_string(i) + "]", "must be an object");
            CellOverride o;
            for (const auto& [key, value] : ov[i].items()) {
                if (key == "problem")
                    o.problem = get_field<std::string>(value, path, prefix + key);
                else if (key == "strategist")
                    o.strategist = get_field<std::string>(value, path, prefix + key);
                else if (key != "budget" && key != "init")
                    field_error(path, prefix + key, "unknown field");
            }
            o.budget = positive_int(ov[i], "budget", path, prefix);
            o.init = positive_int(ov[i], "init", path, prefix);
            m.overrides.push_back(o);
        }
    }

    if (root.contains("transport")) {
        const json& t = root.at("transport");
        if (!t.is_object()) field_error(path, "transport", "must be an object");
        for (const auto& [key, value] : t.items()) {
            const std::string f = "transport." + key;
            if (key == "endpoint") m.transport.endpoint = get_field<std::string>(value, path, f);
            else if (key == "model") m.transport.model = get_field<std::string>(value, path, f);
            else if (key == "temperature") m.transport.temperature = get_field<double>(value, path, f);
            else if (key == "api_key_env") m.transport.api_key_env = get_field<std::string>(value, path, f);
            else if (key == "endpoint_env") m.transport.endpoint_env = get_field<std::string>(value, path, f);
            else if (key == "max_attempts") m.transport.max_attempts = get_field<int>(value, path, f);
            else if (key == "backoff_initial_s") m.transport.backoff_initial_s = get_field<double>(value, path, f);
            else if (key == "backoff_factor") m.transport.backoff_factor = get_field<double>(value, path, f);
            else if (key == "backoff_max_s") m.transport.backoff_max_s = get_field<double>(value, path, f);
            else if (key == "timeout_s") m.transport.timeout_s = get_field<double>(value, path, f);
            else if (key == "requests_per_minute") m.transport.requests_per_minute = get_field<int>(value, path, f);
            else if (key == "history_window") m.transport.history_window = get_field<int>(value, path, f);
            else if (key == "backend") m.backend = get_field<std::string>(value, path, f);
            else if (key == "api_key") field_error(path, f, "secrets belong in the environment, not the manifest");
            else field_error(path, f, "unknown field");
        }
        try {
            m.transport.validate();
        } catch (const std::exception& e) {
            field_error(path, "transport", e.what());
        }
    }
    return m;
}

CampaignManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read manifest " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    CampaignManifest m = parse_manifest(ss.str(), path);
    // Relative paths inside the manifest are resolved against its directory.
    const fs::path base = fs::path(path).parent_path();
    if (fs::path(m.output).is_relative()) m.output = (base / m.output).lexically_normal().string();
    for (auto& p : m.user_problems)
        if (fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
    if (m.backend.rfind("scripted:", 0) == 0 && fs::path(m.backend.substr(9)).is_relative())
        m.backend = "scripted:" + (base / m.backend.substr(9)).lexically_normal().string();
    return m;
}

std::vector<harness::RunConfig> expand_cells(const CampaignManifest& m) {
    std::vector<harness::RunConfig> cells;
    for (const auto& problem : m.problems)
        for (const auto& strategist : m.strategists)
            for (std::uint64_t seed : m.seeds) {
                harness::RunConfig c;
                c.problem = problem;
                c.strategist = strategist;
                c.seed = seed;
                c.budget = m.budget;
                c.init = m.init;
                for (const auto& o : m.overrides) {
                    if (!o.problem.empty() && o.problem != problem) continue;
                    if (!o.strategist.empty() && o.strategist != strategist) continue;
                    if (o.budget) c.budget = o.budget;
                    if (o.init) c.init = o.init;
                }
                c.fit_restarts = m.fit_restarts;
                c.kappa = m.kappa;
                c.output_dir = m.output;
                c.strategist_options.transport = m.transport;
                c.strategist_options.backend = m.backend;
                c.strategist_options.task_context = m.task_context;
                cells.push_back(std::move(c));
            }
    return cells;
}

void validate_cells(const CampaignManifest& m, const std::vector<harness::RunConfig>& cells) {
    for (const auto& p : m.user_problems) bench::register_user_problem(bench::load_problem_manifest(p));
    bool needs_credentials = false;
    std::set<std::string> run_ids;
    for (const auto& c : cells) {
        try {
            c.validate();
            bench::find_problem(c.problem);
            strat::StrategistOptions probe = c.strategist_options;
            probe.backend = "echo";
            strat::make_strategist(c.strategist, probe);
        } catch (const NotFoundError& e) {
            throw NotFoundError("cell " + cell_name(c) + ": " + e.what());
        } catch (const std::exception& e) {
            throw ConfigError("cell " + cell_name(c) + ": " + e.what());
        }
        if (!run_ids.insert(c.run_id()).second)
            throw ConfigError("cell " + cell_name(c) + " duplicates another cell's record name " + c.run_id());
        if (is_llm_label(c.strategist) && c.strategist_options.backend == "http") needs_credentials = true;
    }
    // Constructing the HTTP client checks the endpoint and API key environment variables.
    if (needs_credentials) llm::HttpBackend probe(m.transport);
}

CellStatus cell_status(const harness::RunConfig& cell) {
    const std::string path = cell.record_path();
    if (!fs::exists(path)) return CellStatus::New;
    try {
        return harness::load_record(path).complete() ? CellStatus::Complete : CellStatus::Partial;
    } catch (const std::exception&) {
        return CellStatus::Partial;
    }
}

const char* to_string(CellStatus status) {
    switch (status) {
        case CellStatus::New: return "new";
        case CellStatus::Partial: return "resume";
        case CellStatus::Complete: return "complete";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Commands

int cmd_run(const std::string& manifest_path, int parallel, bool dry_run, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (parallel < 1) throw ArgumentError("--parallel must be >= 1");
        const CampaignManifest m = load_manifest(manifest_path);
        const auto cells = expand_cells(m);
        validate_cells(m, cells);

        std::vector<harness::RunConfig> pending;
        out << "plan: " << cells.size() << " cells (" << m.problems.size() << " problems x " << m.strategists.size()
            << " strategists x " << m.seeds.size() << " seeds)\n";
        for (const auto& c : cells) {
            const CellStatus s = cell_status(c);
            if (dry_run) out << "  " << c.run_id() << "  " << to_string(s) << '\n';
            if (s != CellStatus::Complete) pending.push_back(c);
        }
        out << "to run: " << pending.size() << '\n';
        if (dry_run) return static_cast<int>(kOk);

        const auto results = harness::run_many(pending, parallel);
        std::vector<std::string> failed;
        for (std::size_t i = 0; i < results.size(); ++i)
            if (!results[i].complete())
                failed.push_back(pending[i].run_id() + ": " + results[i].abort_reason.value_or("incomplete"));
        out << "executed " << results.size() << " runs, " << failed.size() << " failed\n";
        for (const auto& f : failed) err << "failed cell " << f << '\n';
        return static_cast<int>(failed.empty() ? kOk : kRunFailures);
    });
}

int cmd_analyze(const std::string& records_dir, const std::string& reference, const std::string& out_dir,
                std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto records = analysis::load_records(records_dir);
        const analysis::Report report = analysis::analyze(records, reference);
        analysis::emit_report(report, out_dir);
        out << "records: " << records.size() << ", methods: " << report.table.methods.size()
            << ", problems: " << report.table.problems.size() << '\n';
        out << std::left << std::setw(24) << "method" << std::setw(10) << "mean RP" << "mean rank\n";
        for (const auto& s : report.summary)
            out << std::setw(24) << s.method << std::setw(10) << fmt_fixed(s.mean_rp, 3) << fmt_fixed(s.mean_rank, 2)
                << '\n';
        if (report.friedman)
            out << "Friedman p = " << fmt_fixed(report.friedman->p_value, 4) << '\n';
        out << "report written to " << out_dir << '\n';
        return static_cast<int>(kOk);
    });
}

int cmd_transcript(const std::string& run_id, const std::string& runs_dir, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const fs::path path = fs::path(runs_dir) / "transcripts" / (run_id + ".jsonl");
        if (!fs::exists(path)) throw NotFoundError("no transcript for run " + run_id + " under " + runs_dir);
        const auto turns = llm::load_transcript(path.string());
        const auto portfolio = strat::full_portfolio();
        int assistant_seen = 0;
        for (const auto& t : turns) {
            out << "--- turn " << t.index << " [" << t.role << "] " << t.timestamp << '\n';
            if (!t.error.empty()) {
                out << "(failed: " << t.error << ")\n";
            } else {
                out << t.content << '\n';
            }
            if (t.role == "assistant" && assistant_seen++ > 0) {
                const auto d = llm::parse_decision(t.error.empty() ? t.content : std::string(), portfolio);
                out << ">>> decision: " << acq::abbreviation(d.kind) << (d.fallback_used ? " (fallback)" : "") << '\n';
            }
        }
        out << turns.size() << " turns\n";
        return static_cast<int>(kOk);
    });
}

int cmd_list(const std::string& what, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (what == "problems") {
            out << std::left << std::setw(16) << "name" << std::setw(5) << "dim" << std::setw(26) << "bounds"
                << "optimum\n";
            for (const auto& p : bench::problem_registry()) {
                const bool uniform = (p.bounds.lower.array() == p.bounds.lower[0]).all() &&
                                     (p.bounds.upper.array() == p.bounds.upper[0]).all();
                std::ostringstream b;
                if (uniform)
                    b << "[" << p.bounds.lower[0] << ", " << p.bounds.upper[0] << "]^" << p.dim;
                else
                    b << "mixed";
                out << std::setw(16) << p.name << std::setw(5) << p.dim << std::setw(26) << b.str()
                    << (p.known_optimum ? fmt_fixed(*p.known_optimum, 6) : std::string("-")) << '\n';
            }
            return static_cast<int>(kOk);
        }
        if (what == "strategists") {
            out << std::left << std::setw(28) << "label" << "kind\n";
            for (const auto& l : strat::strategist_labels()) out << std::setw(28) << l << strategist_tag(l) << '\n';
            return static_cast<int>(kOk);
        }
        throw ArgumentError("list expects 'problems' or 'strategists', got '" + what + "'");
    });
}

}  // namespace lmabo::cli
