// Command-line front end for the relapse pipeline:
//   synth -> train -> sweep -> eval -> explain -> report
// Every stage records the config hashes that produced its artifacts and
// refuses inputs from a different configuration.
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "relapse/config.hpp"
#include "relapse/pipeline.hpp"

namespace {

struct CliOptions {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed_synth, seed_split, seed_train;
    std::optional<std::string> variant, task;
    std::optional<double> beta;
    std::string sweep_split = "train";
};

relapse::RunConfig load_config(const CliOptions& opt) {
    std::vector<std::string> overrides = opt.sets;
    if (opt.seed_synth) overrides.push_back("synth.seed=" + std::to_string(*opt.seed_synth));
    if (opt.seed_split)
        overrides.push_back("select.split_seed=" + std::to_string(*opt.seed_split));
    if (opt.seed_train) overrides.push_back("train.seed=" + std::to_string(*opt.seed_train));
    if (opt.variant) overrides.push_back("run.variant=" + *opt.variant);
    if (opt.task) overrides.push_back("run.task=" + *opt.task);
    if (opt.beta) overrides.push_back("run.beta=" + relapse::detail::fmt_double(*opt.beta));
    return relapse::parse_config(opt.config_path, overrides);
}

void add_common(CLI::App* cmd, CliOptions& opt) {
    cmd->add_option("--config", opt.config_path, "Path to the JSON config file")->required();
    cmd->add_option("--set", opt.sets, "Override a config key (section.key=value), repeatable");
    cmd->add_option("--seed-synth", opt.seed_synth, "Override synth.seed");
    cmd->add_option("--seed-split", opt.seed_split, "Override select.split_seed");
    cmd->add_option("--seed-train", opt.seed_train, "Override train.seed");
    cmd->add_option("--variant", opt.variant, "Model variant")
        ->check(CLI::IsMember({"tabular_only", "vision_only", "multimodal"}));
    cmd->add_option("--task", opt.task, "Task")->check(CLI::IsMember({"classify", "regress"}));
    cmd->add_option("--beta", opt.beta, "F_beta weighting for threshold selection");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal relapse-risk pipeline on synthetic cohorts"};
    app.require_subcommand(1);

    CliOptions opt;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
    CLI::App* train = app.add_subcommand("train", "Select, split and train a model variant");
    CLI::App* sweep = app.add_subcommand("sweep", "Select the decision threshold on train");
    CLI::App* eval = app.add_subcommand("eval", "Evaluate on the test split");
    CLI::App* explain =
        app.add_subcommand("explain", "Attribute contributions and occlusion saliency");
    CLI::App* report = app.add_subcommand("report", "Consolidate evaluation tables");
    for (CLI::App* cmd : {synth, train, sweep, eval, explain, report}) add_common(cmd, opt);
    sweep->add_option("--split", opt.sweep_split,
                      "Split used for threshold selection (train only)");

    CLI11_PARSE(app, argc, argv);

    try {
        const relapse::RunConfig cfg = load_config(opt);
        if (synth->parsed()) relapse::run_synth(cfg);
        else if (train->parsed()) relapse::run_train(cfg);
        else if (sweep->parsed()) relapse::run_sweep(cfg, opt.sweep_split);
        else if (eval->parsed()) relapse::run_eval(cfg);
        else if (explain->parsed()) relapse::run_explain(cfg);
        else if (report->parsed()) relapse::run_report(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return EXIT_FAILURE;
    }
    return EXIT_SUCCESS;
}
