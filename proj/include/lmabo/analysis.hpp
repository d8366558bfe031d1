#pragma once

// Regret metrics, rank statistics, hypothesis tests, selection-behavior statistics and
// report files over run records.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lmabo/acquisition.hpp"
#include "lmabo/harness.hpp"

namespace lmabo::analysis {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr const char* kReportSchema = "lmabo.report/1";
inline constexpr double kRegretTolerance = 1e-9;
inline constexpr double kRpGuard = 1e-12;

// ---------------------------------------------------------------------------
// Metrics

/// incumbent_t - optimum for each loop iteration; negatives within 1e-9 are clamped to 0.
/// Throws DataError for larger negatives or a non-monotone result.
std::vector<double> regret_curve(const std::vector<double>& incumbents, double optimum);
std::vector<double> regret_curve(const harness::RunRecord& record, double optimum);

/// Throws DataError unless the curve is non-negative (within 1e-9) and non-increasing.
void check_regret_curve(const std::vector<double>& curve);

/// Unit-width rectangle rule: the sum of the values.
double auc(const std::vector<double>& curve);

/// Methods (rows) x problems (columns).
struct AucTable {
    std::vector<std::string> methods;
    std::vector<std::string> problems;
    MatrixXd mean;                                   // mean AUC over repetitions
    Eigen::MatrixXi reps;                            // repetition counts
    std::vector<std::vector<std::vector<double>>> per_rep;  // [method][problem] -> AUC per repetition

    void validate() const;
};

struct RelativePerformance {
    MatrixXd rp;
    std::vector<bool> guarded;  // column minimum was zero and the 1e-12 guard was used
};

/// Per column: value / column minimum.
RelativePerformance relative_performance(const MatrixXd& table);

/// Per column ascending ranks (1 = smallest) with average ranks for ties.
MatrixXd ranks(const MatrixXd& table);
std::vector<double> average_ranks(const std::vector<double>& values);

/// Population standard deviation over mean. Throws DataError when the mean is zero.
double coefficient_of_variation(const std::vector<double>& values);

/// Linear-interpolation quantile, q in [0, 1].
double quantile(std::vector<double> values, double q);

// ---------------------------------------------------------------------------
// Tests

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Friedman test over a rank matrix with methods as rows and problems as columns,
/// tie-corrected, p from chi-squared with k-1 degrees of freedom.
TestResult friedman_test(const MatrixXd& rank_matrix);

/// Two-sided Wilcoxon signed-rank test of a - b. Zero differences are dropped; with six or
/// more remaining pairs the normal approximation with continuity and tie corrections is
/// used, below that the exact distribution over sign flips. The statistic is min(W+, W-).
TestResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

/// Holm step-down adjustment; results are in the input order.
std::vector<double> holm_bonferroni(const std::vector<double>& p_values);

// ---------------------------------------------------------------------------
// Selection behavior

inline constexpr int kProgressBins = 10;

struct BehaviorStats {
    std::vector<acq::Kind> portfolio;
    MatrixXd bin_frequency;          // bins x portfolio; each non-empty row sums to 1
    std::vector<int> bin_counts;     // selections per bin
    Eigen::MatrixXi switches;        // from x to, diagonal zero
    std::vector<int> improvement;    // selections per kind on iterations that improved the incumbent
    std::vector<int> stagnation;     // ... and on the others
    int iterations = 0;
};

/// Pools iterations of records that share a portfolio (DataError otherwise). Iteration t
/// of T falls in bin floor(10 (t - 1) / T).
BehaviorStats behavior_stats(const std::vector<harness::RunRecord>& records);

// ---------------------------------------------------------------------------
// Campaign report

struct MethodSummary {
    std::string method;
    double mean_rp = 0.0;
    double rp_iqr = 0.0;
    double mean_rank = 0.0;
    double min_rank = 0.0;
    double max_rank = 0.0;
    std::optional<double> cv;          // absent when every AUC is zero
    std::optional<double> p_raw;       // Wilcoxon vs the reference, absent for the reference
    std::optional<double> p_adjusted;  // Holm over all comparisons
};

struct Report {
    std::string reference;
    AucTable table;
    std::map<std::string, double> optimum;  // per problem
    RelativePerformance rp;
    MatrixXd rank_matrix;
    std::vector<MethodSummary> summary;  // in table.methods order
    std::optional<TestResult> friedman;  // needs >= 3 methods and >= 2 problems
    std::map<std::string, BehaviorStats> behavior;
    std::map<std::string, std::map<std::string, std::vector<double>>> mean_regret;  // problem -> method -> curve
};

/// Complete records under `dir` (non-recursive *.jsonl); incomplete ones are skipped with
/// a warning. Throws DataError when none remain.
std::vector<harness::RunRecord> load_records(const std::string& dir);

/// Throws DataError for empty input or mixed budgets within a problem, ArgumentError when
/// the reference method has no records.
Report analyze(const std::vector<harness::RunRecord>& records, const std::string& reference);

/// Writes table.csv, auc.csv, behavior.json and summary.txt into `dir` (created if needed).
/// Throws IoError when the directory cannot be written.
void emit_report(const Report& report, const std::string& dir);

std::string table_csv(const Report& report);
std::string auc_csv(const Report& report);
std::string behavior_json(const Report& report);
std::string summary_text(const Report& report);

}  // namespace lmabo::analysis
