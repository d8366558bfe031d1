#include "lmabo/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include "lmabo/benchmarks.hpp"
#include "lmabo/errors.hpp"
#include "lmabo/log.hpp"
#include "lmabo/normal.hpp"

namespace lmabo::analysis {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

/// Sizes of groups of equal values (only groups larger than one matter for corrections).
std::vector<int> tie_groups(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    std::vector<int> groups;
    for (std::size_t i = 0; i < values.size();) {
        std::size_t j = i;
        while (j < values.size() && values[j] == values[i]) ++j;
        groups.push_back(static_cast<int>(j - i));
        i = j;
    }
    return groups;
}

double tie_sum(const std::vector<double>& values) {
    double s = 0.0;
    for (int t : tie_groups(values)) s += static_cast<double>(t) * t * t - t;
    return s;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

void check_regret_curve(const std::vector<double>& curve) {
    for (std::size_t i = 0; i < curve.size(); ++i) {
        if (!std::isfinite(curve[i])) throw DataError("regret curve has a non-finite value");
        if (curve[i] < -kRegretTolerance)
            throw DataError("negative regret " + fmt(curve[i]) + " at iteration " + std::to_string(i + 1) +
                            ": reference optimum is inconsistent with the observations");
        if (i > 0 && curve[i] > curve[i - 1])
            throw DataError("regret curve increases at iteration " + std::to_string(i + 1));
    }
}

std::vector<double> regret_curve(const std::vector<double>& incumbents, double optimum) {
    std::vector<double> curve;
    curve.reserve(incumbents.size());
    for (double v : incumbents) curve.push_back(v - optimum);
    check_regret_curve(curve);
    for (double& v : curve) v = std::max(v, 0.0);
    return curve;
}

std::vector<double> regret_curve(const harness::RunRecord& record, double optimum) {
    std::vector<double> inc;
    for (const auto& it : record.iterations) inc.push_back(it.incumbent);
    return regret_curve(inc, optimum);
}

double auc(const std::vector<double>& curve) {
    if (curve.empty()) throw ArgumentError("AUC of an empty curve");
    return std::accumulate(curve.begin(), curve.end(), 0.0);
}

void AucTable::validate() const {
    const auto m = static_cast<Index>(methods.size());
    const auto p = static_cast<Index>(problems.size());
    if (m == 0 || p == 0) throw DataError("AUC table is empty");
    if (mean.rows() != m || mean.cols() != p || reps.rows() != m || reps.cols() != p)
        throw DataError("AUC table shape does not match its labels");
    if (!mean.allFinite() || (mean.array() < 0.0).any()) throw DataError("AUC table entries must be finite and >= 0");
}

RelativePerformance relative_performance(const MatrixXd& table) {
    if (table.size() == 0) throw ArgumentError("relative performance of an empty table");
    RelativePerformance out;
    out.rp.resize(table.rows(), table.cols());
    out.guarded.assign(static_cast<std::size_t>(table.cols()), false);
    for (Index j = 0; j < table.cols(); ++j) {
        double best = table.col(j).minCoeff();
        if (best <= 0.0) {
            out.guarded[static_cast<std::size_t>(j)] = true;
            // Every entry is shifted so the best method still scores exactly 1.
            out.rp.col(j) = ((table.col(j).array() + kRpGuard) / (best + kRpGuard)).matrix();
        } else {
            out.rp.col(j) = table.col(j) / best;
        }
    }
    return out;
}

std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && values[order[j]] == values[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) out[order[k]] = r;
        i = j;
    }
    return out;
}

MatrixXd ranks(const MatrixXd& table) {
    if (table.size() == 0) throw ArgumentError("ranks of an empty table");
    MatrixXd out(table.rows(), table.cols());
    for (Index j = 0; j < table.cols(); ++j) {
        const std::vector<double> col(table.col(j).data(), table.col(j).data() + table.rows());
        const auto r = average_ranks(col);
        for (Index i = 0; i < table.rows(); ++i) out(i, j) = r[static_cast<std::size_t>(i)];
    }
    return out;
}

double coefficient_of_variation(const std::vector<double>& values) {
    if (values.empty()) throw ArgumentError("coefficient of variation of no values");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (mean == 0.0) throw DataError("coefficient of variation is undefined for a zero mean");
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / n) / mean;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw ArgumentError("quantile of no values");
    if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("quantile level must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// ---------------------------------------------------------------------------
// Tests

TestResult friedman_test(const MatrixXd& rank_matrix) {
    const Index k = rank_matrix.rows();
    const Index n = rank_matrix.cols();
    if (k < 3 || n < 2) throw ArgumentError("Friedman test needs at least 3 methods and 2 problems");
    if (!rank_matrix.allFinite()) throw ArgumentError("rank matrix has non-finite entries");
    const double kd = static_cast<double>(k);
    const double nd = static_cast<double>(n);
    double ties = 0.0;
    for (Index j = 0; j < n; ++j)
        ties += tie_sum(std::vector<double>(rank_matrix.col(j).data(), rank_matrix.col(j).data() + k));
    const double correction = 1.0 - ties / (nd * kd * (kd * kd - 1.0));
    if (correction <= 1e-12) return {0.0, 1.0};
    const double sum_sq = rank_matrix.rowwise().sum().squaredNorm();
    double stat = (12.0 / (nd * kd * (kd + 1.0)) * sum_sq - 3.0 * nd * (kd + 1.0)) / correction;
    stat = std::max(stat, 0.0);
    const boost::math::chi_squared dist(kd - 1.0);
    return {stat, boost::math::cdf(boost::math::complement(dist, stat))};
}

TestResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ArgumentError("Wilcoxon test needs paired samples of equal length");
    std::vector<double> diff;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (!std::isfinite(d)) throw ArgumentError("Wilcoxon test input has non-finite values");
        if (d != 0.0) diff.push_back(d);
    }
    const std::size_t n = diff.size();
    if (n == 0) return {0.0, 1.0};

    std::vector<double> abs_diff(n);
    for (std::size_t i = 0; i < n; ++i) abs_diff[i] = std::abs(diff[i]);
    const std::vector<double> r = average_ranks(abs_diff);
    double w_plus = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (diff[i] > 0.0) w_plus += r[i];
    const double total = 0.5 * static_cast<double>(n * (n + 1));
    const double w_minus = total - w_plus;
    const double stat = std::min(w_plus, w_minus);

    if (n < 6) {
        // Exact null distribution: every sign assignment of the observed ranks.
        const std::size_t combos = std::size_t{1} << n;
        std::size_t extreme = 0;
        for (std::size_t mask = 0; mask < combos; ++mask) {
            double w = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (mask & (std::size_t{1} << i)) w += r[i];
            if (std::min(w, total - w) <= stat + 1e-9) ++extreme;
        }
        return {stat, std::min(1.0, static_cast<double>(extreme) / static_cast<double>(combos))};
    }

    const double nd = static_cast<double>(n);
    const double mean = nd * (nd + 1.0) / 4.0;
    const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_sum(abs_diff) / 48.0;
    if (var <= 0.0) return {stat, 1.0};
    const double d = std::min(stat - mean + 0.5, 0.0);  // continuity correction toward the mean
    const double z = d / std::sqrt(var);
    return {stat, std::min(1.0, 2.0 * normal::cdf(z))};
}

std::vector<double> holm_bonferroni(const std::vector<double>& p_values) {
    const std::size_t m = p_values.size();
    for (double p : p_values)
        if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("p-values must lie in [0, 1]");
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
    std::vector<double> out(m);
    double running = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double adj = std::min(1.0, static_cast<double>(m - i) * p_values[order[i]]);
        running = std::max(running, adj);
        out[order[i]] = running;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Selection behavior

BehaviorStats behavior_stats(const std::vector<harness::RunRecord>& records) {
    if (records.empty()) throw DataError("no records for behavior statistics");
    BehaviorStats s;
    const auto& names = records.front().header.portfolio;
    for (const auto& r : records)
        if (r.header.portfolio != names)
            throw DataError("records " + records.front().header.run_id + " and " + r.header.run_id +
                            " use different portfolios");
    for (const auto& nm : names) s.portfolio.push_back(acq::parse_kind(nm));
    const auto k = static_cast<Index>(s.portfolio.size());
    auto slot = [&](acq::Kind kind) -> Index {
        const auto it = std::find(s.portfolio.begin(), s.portfolio.end(), kind);
        if (it == s.portfolio.end()) throw DataError(std::string("selection outside the portfolio: ") + acq::abbreviation(kind));
        return static_cast<Index>(it - s.portfolio.begin());
    };

    MatrixXd counts = MatrixXd::Zero(kProgressBins, k);
    s.bin_counts.assign(kProgressBins, 0);
    s.switches = Eigen::MatrixXi::Zero(k, k);
    s.improvement.assign(static_cast<std::size_t>(k), 0);
    s.stagnation.assign(static_cast<std::size_t>(k), 0);

    for (const auto& r : records) {
        const int budget = std::max(1, r.header.budget);
        const auto inc = r.incumbents();
        for (std::size_t i = 0; i < r.iterations.size(); ++i) {
            const auto& it = r.iterations[i];
            const Index a = slot(it.kind);
            const int bin = std::min(kProgressBins - 1, kProgressBins * (it.iteration - 1) / budget);
            counts(bin, a) += 1.0;
            ++s.bin_counts[static_cast<std::size_t>(bin)];
            if (i > 0) {
                const Index from = slot(r.iterations[i - 1].kind);
                if (from != a) ++s.switches(from, a);
            }
            if (inc[i + 1] < inc[i])
                ++s.improvement[static_cast<std::size_t>(a)];
            else
                ++s.stagnation[static_cast<std::size_t>(a)];
            ++s.iterations;
        }
    }
    s.bin_frequency = MatrixXd::Zero(kProgressBins, k);
    for (int b = 0; b < kProgressBins; ++b)
        if (s.bin_counts[static_cast<std::size_t>(b)] > 0)
            s.bin_frequency.row(b) = counts.row(b) / static_cast<double>(s.bin_counts[static_cast<std::size_t>(b)]);
    return s;
}

// ---------------------------------------------------------------------------
// Campaign report

std::vector<harness::RunRecord> load_records(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("records directory " + dir + " does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<harness::RunRecord> out;
    for (const auto& f : files) {
        harness::RunRecord r = harness::load_record(f.string());
        if (!r.complete()) {
            log::warn("skipping incomplete record " + f.string());
            continue;
        }
        out.push_back(std::move(r));
    }
    if (out.empty()) throw DataError("no complete run records under " + dir);
    return out;
}

Report analyze(const std::vector<harness::RunRecord>& records, const std::string& reference) {
    if (records.empty()) throw DataError("no run records to analyze");
    std::map<std::string, std::map<std::string, std::vector<const harness::RunRecord*>>> cells;
    std::set<std::string> method_set;
    std::map<std::string, int> budget;
    for (const auto& r : records) {
        if (!r.complete()) throw DataError("record " + r.header.run_id + " is incomplete");
        const auto [it, inserted] = budget.emplace(r.header.problem, r.header.budget);
        if (!inserted && it->second != r.header.budget)
            throw DataError("problem " + r.header.problem + " has records with budgets " + std::to_string(it->second) +
                            " and " + std::to_string(r.header.budget));
        cells[r.header.problem][r.header.strategist].push_back(&r);
        method_set.insert(r.header.strategist);
    }
    if (!method_set.count(reference)) throw ArgumentError("reference method " + reference + " has no records");

    Report rep;
    rep.reference = reference;
    AucTable& t = rep.table;
    t.methods.assign(method_set.begin(), method_set.end());
    for (const auto& [p, _] : cells) t.problems.push_back(p);
    const auto m = static_cast<Index>(t.methods.size());
    const auto np = static_cast<Index>(t.problems.size());
    t.mean.resize(m, np);
    t.reps.resize(m, np);
    t.per_rep.assign(t.methods.size(), std::vector<std::vector<double>>(t.problems.size()));

    for (Index j = 0; j < np; ++j) {
        const std::string& problem = t.problems[static_cast<std::size_t>(j)];
        const auto& by_method = cells.at(problem);
        std::vector<std::vector<double>> observed;
        std::optional<double> known;
        for (const auto& [_, recs] : by_method)
            for (const auto* r : recs) {
                std::vector<double> v = r->header.init_values;
                for (const auto& it : r->iterations) v.push_back(it.y);
                observed.push_back(std::move(v));
                if (r->header.known_optimum) known = r->header.known_optimum;
            }
        const double opt = bench::empirical_optimum(observed, known);
        rep.optimum[problem] = opt;

        for (Index i = 0; i < m; ++i) {
            const std::string& method = t.methods[static_cast<std::size_t>(i)];
            const auto found = by_method.find(method);
            if (found == by_method.end())
                throw DataError("method " + method + " has no records for problem " + problem);
            auto& aucs = t.per_rep[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            std::vector<double> mean_curve;
            for (const auto* r : found->second) {
                const auto curve = regret_curve(*r, opt);
                aucs.push_back(auc(curve));
                if (mean_curve.empty()) mean_curve.assign(curve.size(), 0.0);
                for (std::size_t q = 0; q < curve.size(); ++q) mean_curve[q] += curve[q];
            }
            for (double& v : mean_curve) v /= static_cast<double>(found->second.size());
            rep.mean_regret[problem][method] = std::move(mean_curve);
            t.mean(i, j) = std::accumulate(aucs.begin(), aucs.end(), 0.0) / static_cast<double>(aucs.size());
            t.reps(i, j) = static_cast<int>(aucs.size());
        }
    }
    t.validate();

    rep.rp = relative_performance(t.mean);
    rep.rank_matrix = ranks(t.mean);
    if (m >= 3 && np >= 2) rep.friedman = friedman_test(rep.rank_matrix);

    const auto ref_index = static_cast<Index>(std::find(t.methods.begin(), t.methods.end(), reference) - t.methods.begin());
    auto row = [&](Index i) {
        std::vector<double> v(static_cast<std::size_t>(np));
        for (Index j = 0; j < np; ++j) v[static_cast<std::size_t>(j)] = t.mean(i, j);
        return v;
    };
    std::vector<double> raw;
    std::vector<Index> compared;
    for (Index i = 0; i < m; ++i) {
        MethodSummary s;
        s.method = t.methods[static_cast<std::size_t>(i)];
        std::vector<double> rp;
        for (Index j = 0; j < np; ++j) rp.push_back(rep.rp.rp(i, j));
        s.mean_rp = std::accumulate(rp.begin(), rp.end(), 0.0) / static_cast<double>(np);
        s.rp_iqr = quantile(rp, 0.75) - quantile(rp, 0.25);
        s.mean_rank = rep.rank_matrix.row(i).mean();
        s.min_rank = rep.rank_matrix.row(i).minCoeff();
        s.max_rank = rep.rank_matrix.row(i).maxCoeff();
        std::vector<double> pooled;
        for (const auto& v : t.per_rep[static_cast<std::size_t>(i)]) pooled.insert(pooled.end(), v.begin(), v.end());
        try {
            s.cv = coefficient_of_variation(pooled);
        } catch (const DataError&) {
            s.cv.reset();
        }
        if (i != ref_index) {
            s.p_raw = wilcoxon_signed_rank(row(i), row(ref_index)).p_value;
            raw.push_back(*s.p_raw);
            compared.push_back(i);
        }
        rep.summary.push_back(std::move(s));
    }
    const auto adjusted = holm_bonferroni(raw);
    for (std::size_t c = 0; c < compared.size(); ++c)
        rep.summary[static_cast<std::size_t>(compared[c])].p_adjusted = adjusted[c];

    std::map<std::string, std::vector<harness::RunRecord>> by_method;
    for (const auto& r : records) by_method[r.header.strategist].push_back(r);
    for (const auto& [method, recs] : by_method) rep.behavior[method] = behavior_stats(recs);
    return rep;
}

std::string table_csv(const Report& r) {
    std::ostringstream out;
    out << "# " << kReportSchema << " table\n";
    out << "method,mean_rp,rp_iqr,mean_rank,min_rank,max_rank,cv_auc,p_adj_vs_" << csv_field(r.reference) << '\n';
    for (const auto& s : r.summary) {
        out << csv_field(s.method) << ',' << fmt(s.mean_rp) << ',' << fmt(s.rp_iqr) << ',' << fmt(s.mean_rank) << ','
            << fmt(s.min_rank) << ',' << fmt(s.max_rank) << ',' << fmt_opt(s.cv) << ',' << fmt_opt(s.p_adjusted) << '\n';
    }
    return out.str();
}

std::string auc_csv(const Report& r) {
    std::ostringstream out;
    out << "# " << kReportSchema << " auc\n";
    out << "problem,method,reps,mean_auc,rp,rank,optimum,guarded\n";
    const auto& t = r.table;
    for (std::size_t j = 0; j < t.problems.size(); ++j)
        for (std::size_t i = 0; i < t.methods.size(); ++i) {
            const auto ii = static_cast<Index>(i);
            const auto jj = static_cast<Index>(j);
            out << csv_field(t.problems[j]) << ',' << csv_field(t.methods[i]) << ',' << t.reps(ii, jj) << ','
                << fmt(t.mean(ii, jj)) << ',' << fmt(r.rp.rp(ii, jj)) << ',' << fmt(r.rank_matrix(ii, jj)) << ','
                << fmt(r.optimum.at(t.problems[j])) << ',' << (r.rp.guarded[j] ? "yes" : "no") << '\n';
        }
    return out.str();
}

std::string behavior_json(const Report& r) {
    ordered_json j;
    j["schema"] = kReportSchema;
    j["bins"] = kProgressBins;
    ordered_json methods = ordered_json::object();
    for (const auto& [method, s] : r.behavior) {
        ordered_json m;
        std::vector<std::string> names;
        for (auto k : s.portfolio) names.emplace_back(acq::abbreviation(k));
        m["portfolio"] = names;
        m["iterations"] = s.iterations;
        std::vector<std::vector<double>> freq(static_cast<std::size_t>(s.bin_frequency.rows()));
        for (Index b = 0; b < s.bin_frequency.rows(); ++b) {
            for (Index c = 0; c < s.bin_frequency.cols(); ++c) freq[static_cast<std::size_t>(b)].push_back(s.bin_frequency(b, c));
        }
        m["bin_frequency"] = freq;
        m["bin_counts"] = s.bin_counts;
        std::vector<std::vector<int>> sw(static_cast<std::size_t>(s.switches.rows()));
        for (Index a = 0; a < s.switches.rows(); ++a)
            for (Index b = 0; b < s.switches.cols(); ++b) sw[static_cast<std::size_t>(a)].push_back(s.switches(a, b));
        m["switches"] = sw;
        m["improvement"] = s.improvement;
        m["stagnation"] = s.stagnation;
        methods[method] = m;
    }
    j["methods"] = methods;
    ordered_json curves = ordered_json::object();
    for (const auto& [problem, per_method] : r.mean_regret) {
        ordered_json p = ordered_json::object();
        for (const auto& [method, curve] : per_method) p[method] = curve;
        curves[problem] = p;
    }
    j["mean_regret"] = curves;
    return j.dump(1) + "\n";
}

std::string summary_text(const Report& r) {
    std::ostringstream out;
    out << "# " << kReportSchema << " summary\n";
    out << "methods: " << r.table.methods.size() << ", problems: " << r.table.problems.size()
        << ", reference: " << r.reference << '\n';
    if (r.friedman)
        out << "Friedman: statistic " << fmt(r.friedman->statistic) << ", p " << fmt(r.friedman->p_value) << '\n';
    else
        out << "Friedman: not computed (needs >= 3 methods and >= 2 problems)\n";
    out << "Wilcoxon signed-rank vs " << r.reference << " on per-problem mean AUC (Holm-adjusted):\n";
    for (const auto& s : r.summary) {
        if (!s.p_adjusted) continue;
        out << "  " << s.method << ": p " << fmt(*s.p_raw) << ", adjusted " << fmt(*s.p_adjusted)
            << (*s.p_adjusted < 0.05 ? " (significant at 0.05)" : "") << '\n';
    }
    for (std::size_t j = 0; j < r.table.problems.size(); ++j)
        if (r.rp.guarded[j]) out << "guarded RP column: " << r.table.problems[j] << " (best AUC is zero)\n";
    return out.str();
}

void emit_report(const Report& report, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create report directory " + dir);
    const fs::path root(dir);
    write_file(root / "table.csv", table_csv(report));
    write_file(root / "auc.csv", auc_csv(report));
    write_file(root / "behavior.json", behavior_json(report));
    write_file(root / "summary.txt", summary_text(report));
}

}  // namespace lmabo::analysis
