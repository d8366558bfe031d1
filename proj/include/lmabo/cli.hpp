#pragma once

// Campaign manifests and the command implementations behind the lmabo tool.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lmabo/harness.hpp"

namespace lmabo::cli {

inline constexpr const char* kManifestSchema = "lmabo.campaign/1";

enum ExitCode : int {
    kOk = 0,
    kRunFailures = 1,
    kConfigFailure = 2,
    kDataFailure = 3,
    kNotFound = 4,
    kIoFailure = 5,
};

struct CellOverride {
    std::string problem;     // empty matches every problem
    std::string strategist;  // empty matches every strategist
    std::optional<int> budget;
    std::optional<int> init;
};

/// Declarative campaign: problems x strategists x seeds. See docs in README.
struct CampaignManifest {
    std::string path;
    std::vector<std::string> problems;
    std::vector<std::string> strategists;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> user_problems;  // problem manifest files, resolved against the manifest
    std::string output = "runs";
    std::optional<int> budget;
    std::optional<int> init;
    int fit_restarts = 8;
    double kappa = 2.0;
    std::vector<CellOverride> overrides;
    llm::TransportConfig transport;
    std::string backend = "http";
    std::string task_context;
};

/// Parses and validates the schema; errors name the offending field (ConfigError).
CampaignManifest parse_manifest(const std::string& json_text, const std::string& path = "<manifest>");
CampaignManifest load_manifest(const std::string& path);

/// One run configuration per (problem, strategist, seed) in that nesting order.
std::vector<harness::RunConfig> expand_cells(const CampaignManifest& manifest);

/// Registers user problems, then checks every cell's problem and strategist and, when an
/// LLM strategist uses the HTTP backend, that credentials are present. Throws ConfigError
/// or NotFoundError naming the cell; nothing is executed.
void validate_cells(const CampaignManifest& manifest, const std::vector<harness::RunConfig>& cells);

enum class CellStatus { New, Partial, Complete };
CellStatus cell_status(const harness::RunConfig& cell);
const char* to_string(CellStatus status);

int cmd_run(const std::string& manifest_path, int parallel, bool dry_run, std::ostream& out, std::ostream& err);
int cmd_analyze(const std::string& records_dir, const std::string& reference, const std::string& out_dir,
                std::ostream& out, std::ostream& err);
int cmd_transcript(const std::string& run_id, const std::string& runs_dir, std::ostream& out, std::ostream& err);
int cmd_list(const std::string& what, std::ostream& out, std::ostream& err);

}  // namespace lmabo::cli
