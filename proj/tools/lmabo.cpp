#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lmabo/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Adaptive acquisition-function selection for Bayesian optimization"};
    app.require_subcommand(1);

    std::string manifest;
    int parallel = 1;
    bool dry_run = false;
    auto* run = app.add_subcommand("run", "Execute (or resume) every cell of a campaign manifest");
    run->add_option("--manifest,-m", manifest, "Campaign manifest (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--parallel,-j", parallel, "Concurrent runs")->check(CLI::PositiveNumber);
    run->add_flag("--dry-run", dry_run, "Print the plan without running");

    std::string records, reference = "EI", out_dir = "report";
    auto* analyze = app.add_subcommand("analyze", "Aggregate run records into a report");
    analyze->add_option("--records,-r", records, "Directory of run records")->required();
    analyze->add_option("--reference", reference, "Reference method for pairwise tests");
    analyze->add_option("--out,-o", out_dir, "Report directory");

    std::string run_id, runs_dir = "runs";
    auto* transcript = app.add_subcommand("transcript", "Print the conversation of an LLM-driven run");
    transcript->add_option("--run", run_id, "Run id")->required();
    transcript->add_option("--dir", runs_dir, "Campaign output directory");

    std::string what;
    auto* list = app.add_subcommand("list", "List problems or strategists");
    list->add_option("what", what, "problems | strategists")->required()->check(CLI::IsMember({"problems", "strategists"}));

    CLI11_PARSE(app, argc, argv);

    if (*run) return lmabo::cli::cmd_run(manifest, parallel, dry_run, std::cout, std::cerr);
    if (*analyze) return lmabo::cli::cmd_analyze(records, reference, out_dir, std::cout, std::cerr);
    if (*transcript) return lmabo::cli::cmd_transcript(run_id, runs_dir, std::cout, std::cerr);
    return lmabo::cli::cmd_list(what, std::cout, std::cerr);
}
