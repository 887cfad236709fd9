// fedsim command line: run experiments, sweep the robustness/accuracy ratio,
// and export embeddings from checkpoints.
//
// Exit codes: 0 ok, 1 configuration error, 2 runtime error.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsim/checkpoint.hpp"
#include "fedsim/config.hpp"
#include "fedsim/evaluation.hpp"
#include "fedsim/experiment.hpp"

namespace {

constexpr const char* kPresetPrefix = "preset:";

fedsim::ExperimentConfig load_config(const std::string& source,
                                     const std::vector<std::string>& overrides) {
    std::map<std::string, std::string> raw;
    if (source.rfind(kPresetPrefix, 0) == 0) {
        raw["preset"] = source.substr(std::string(kPresetPrefix).size());
    } else {
        raw = fedsim::parse_config_file(source);
    }
    for (const auto& kv : overrides) fedsim::apply_override(raw, kv);
    return fedsim::resolve_config(std::move(raw));
}

void print_row(const fedsim::MetricRow& row) {
    if (row.evaluated) {
        std::printf("round %4zu  loss %.4f  clean %.4f", row.round, row.mean_loss, row.clean_acc);
        for (const auto& [tok, acc] : row.robust) std::printf("  %s %.4f", tok.c_str(), acc);
        std::printf("  (%.1fs)\n", row.seconds);
    } else {
        std::printf("round %4zu  loss %.4f  (%.1fs)\n", row.round, row.mean_loss, row.seconds);
    }
    std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedsim: deterministic federated adversarial training simulator"};
    app.require_subcommand(1);

    std::string config_source;
    std::vector<std::string> overrides;
    std::string rho_list;
    std::string ckpt_path, out_path;
    bool with_adv = false;
    long long max_samples = 0;

    auto* run = app.add_subcommand("run", "Run one experiment from a config file or preset:<name>");
    run->add_option("config", config_source, "Config file path or preset:<name>")->required();
    run->add_option("--set", overrides, "Override a config key, e.g. --set rounds=10");

    auto* sweep = app.add_subcommand("sweep", "Run a rho sweep (fedbat only)");
    sweep->add_option("config", config_source, "Config file path or preset:<name>")->required();
    sweep->add_option("--rho", rho_list, "Comma-separated rho values, e.g. 0,1,5,10")->required();
    sweep->add_option("--set", overrides, "Override a config key");

    auto* exp = app.add_subcommand("export-embeddings",
                                   "Export per-sample embeddings from a checkpoint as CSV");
    exp->add_option("checkpoint", ckpt_path, "Checkpoint file written by run")->required();
    exp->add_option("out", out_path, "Output CSV path")->required();
    exp->add_flag("--with-adv", with_adv, "Also export adversarial embeddings");
    exp->add_option("--max-samples", max_samples, "Cap on exported samples (0 = all)");
    exp->add_option("--set", overrides, "Override a config key from the checkpoint echo");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            const fedsim::ExperimentConfig cfg = load_config(config_source, overrides);
            const fedsim::RunManifest manifest = fedsim::run_experiment(cfg, print_row);
            const fedsim::RunSummary s = fedsim::summarize_run(manifest);
            std::printf("final (last <=5 evaluated rounds): clean %.4f", s.clean_acc);
            for (const auto& [tok, acc] : s.robust) std::printf("  %s %.4f", tok.c_str(), acc);
            std::printf("\noutputs in %s\n", cfg.output_dir.c_str());
        } else if (sweep->parsed()) {
            const fedsim::ExperimentConfig cfg = load_config(config_source, overrides);
            std::vector<double> rhos;
            for (const auto& tok : fedsim::detail::split_list(rho_list))
                rhos.push_back(fedsim::detail::parse_double("rho", tok));
            fedsim::run_sweep(cfg, rhos, print_row);
            std::printf("sweep.csv in %s\n", cfg.output_dir.c_str());
        } else if (exp->parsed()) {
            const fedsim::Checkpoint ckpt = fedsim::load_checkpoint(ckpt_path);
            std::map<std::string, std::string> raw;
            {
                std::istringstream in(ckpt.config_echo);
                std::string line;
                while (std::getline(in, line)) {
                    line = fedsim::detail::trim(line);
                    if (line.empty()) continue;
                    const auto eq = line.find('=');
                    raw[fedsim::detail::trim(line.substr(0, eq))] =
                        fedsim::detail::trim(line.substr(eq + 1));
                }
            }
            for (const auto& kv : overrides) fedsim::apply_override(raw, kv);
            const fedsim::ExperimentConfig cfg = fedsim::resolve_config(std::move(raw));
            auto [train, test] = fedsim::detail::load_experiment_data(cfg);
            (void)train;
            const fedsim::Dataset subset = fedsim::detail::eval_subset(
                test, static_cast<std::size_t>(max_samples), cfg.seed);
            std::optional<fedsim::AttackConfig> attack;
            if (with_adv) attack = cfg.hp.attack;
            fedsim::export_embeddings(ckpt.net, subset, attack, out_path,
                                      fedsim::derive_key(cfg.seed, fedsim::purpose::kEval));
            std::printf("wrote %zu%s embeddings to %s\n", subset.size(),
                        with_adv ? " clean + adversarial" : "", out_path.c_str());
        }
    } catch (const fedsim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
