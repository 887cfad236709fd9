#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsim/checkpoint.hpp"
#include "fedsim/config.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/evaluation.hpp"
#include "fedsim/federation.hpp"

namespace fedsim {

inline constexpr const char* kCodeVersion = "fedsim 0.1.0";

struct MetricRow {
    std::size_t round = 0;
    std::string variant;
    bool evaluated = false;
    double clean_acc = std::numeric_limits<double>::quiet_NaN();
    std::map<std::string, double> robust;  // eval attack token -> accuracy
    double mean_loss = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0.0;
};

/// Everything a finished run reports: the resolved config echo, one row per
/// executed round (accuracy fields filled on evaluated rounds), wall clock.
struct RunManifest {
    std::vector<std::pair<std::string, std::string>> config_echo;
    std::string code_version = kCodeVersion;
    std::vector<MetricRow> rows;
    double total_seconds = 0.0;

    std::vector<const MetricRow*> evaluated_rows() const {
        std::vector<const MetricRow*> out;
        for (const auto& r : rows)
            if (r.evaluated) out.push_back(&r);
        return out;
    }
};

/// Mean clean/robust accuracy over the last `window` evaluated rounds.
struct RunSummary {
    double clean_acc = 0.0;
    std::map<std::string, double> robust;
    double mean_robust = 0.0;
};

inline RunSummary summarize_run(const RunManifest& manifest, std::size_t window = 5) {
    const auto rows = manifest.evaluated_rows();
    if (rows.empty()) throw MetricError("run has no evaluated rounds");
    const std::size_t n = std::min(window, rows.size());
    RunSummary s;
    for (std::size_t i = rows.size() - n; i < rows.size(); ++i) {
        s.clean_acc += rows[i]->clean_acc;
        for (const auto& [tok, acc] : rows[i]->robust) s.robust[tok] += acc;
    }
    s.clean_acc /= static_cast<double>(n);
    for (auto& [tok, acc] : s.robust) acc /= static_cast<double>(n);
    if (!s.robust.empty()) {
        for (const auto& [tok, acc] : s.robust) s.mean_robust += acc;
        s.mean_robust /= static_cast<double>(s.robust.size());
    }
    return s;
}

namespace detail {

inline std::string resolved_data_dir(const ExperimentConfig& cfg) {
    if (!cfg.data_dir.empty()) return cfg.data_dir;
    if (const char* env = std::getenv("FEDSIM_DATA_DIR")) return env;
    return "";
}

inline std::pair<Dataset, Dataset> load_idx_pair(const std::string& dir) {
    Dataset train = load_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
    Dataset test = load_idx(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
    return {std::move(train), std::move(test)};
}

// Blobs are generated in one call (train + held-out tail per class) so the
// two splits share the same class centers.
inline std::pair<Dataset, Dataset> make_blob_splits(const ExperimentConfig& cfg) {
    const int test_per_class = std::max(1, cfg.blobs_per_class / 4);
    const int total = cfg.blobs_per_class + test_per_class;
    Dataset all = synthesize_blobs(cfg.blobs_classes, total, cfg.blobs_dim, cfg.blobs_spread,
                                   cfg.seed);
    std::vector<std::size_t> train_idx, test_idx;
    for (int c = 0; c < cfg.blobs_classes; ++c) {
        const std::size_t base = static_cast<std::size_t>(c) * static_cast<std::size_t>(total);
        for (int s = 0; s < total; ++s) {
            (s < cfg.blobs_per_class ? train_idx : test_idx)
                .push_back(base + static_cast<std::size_t>(s));
        }
    }
    return {take_indices(all, train_idx), take_indices(all, test_idx)};
}

inline std::pair<Dataset, Dataset> load_experiment_data(const ExperimentConfig& cfg) {
    if (cfg.dataset == "blobs") return make_blob_splits(cfg);
    const std::string dir = resolved_data_dir(cfg);
    if (dir.empty())
        throw IoError("dataset '" + cfg.dataset +
                      "' needs data_dir or the FEDSIM_DATA_DIR environment variable");
    return load_idx_pair(dir + "/" + cfg.dataset);
}

// Fixed deterministic subset used for attack evaluation every round, so
// per-round robust numbers stay comparable.
inline Dataset eval_subset(const Dataset& test, std::size_t max_samples, std::uint64_t seed) {
    if (max_samples == 0 || max_samples >= test.size()) return test;
    std::vector<std::size_t> idx(test.size());
    std::iota(idx.begin(), idx.end(), 0);
    RngStream rng{derive_key(seed, purpose::kEval)};
    for (std::size_t i = 0; i < max_samples; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(test.size() - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(max_samples);
    std::sort(idx.begin(), idx.end());
    return take_indices(test, idx);
}

struct EvalAttack {
    std::string token;
    std::string name;  // fgsm / bim / pgd
    AttackConfig cfg;
};

inline std::vector<EvalAttack> resolve_eval_attacks(const ExperimentConfig& cfg) {
    std::vector<EvalAttack> out;
    for (const auto& tok : cfg.eval_attacks) {
        EvalAttack a;
        a.token = tok;
        a.cfg = cfg.hp.attack;  // evaluation mirrors the training bound
        a.cfg.random_start = false;
        if (tok == "fgsm") {
            a.name = "fgsm";
            a.cfg.steps = 1;
        } else if (tok == "bim") {
            a.name = "bim";
            a.cfg.steps = 10;
        } else if (tok.rfind("bim", 0) == 0) {
            a.name = "bim";
            a.cfg.steps = static_cast<std::size_t>(std::strtol(tok.c_str() + 3, nullptr, 10));
        } else {
            a.name = "pgd";
            a.cfg.steps = static_cast<std::size_t>(std::strtol(tok.c_str() + 3, nullptr, 10));
            a.cfg.random_start = true;
        }
        out.push_back(std::move(a));
    }
    return out;
}

inline void fill_eval_metrics(MetricRow& row, const Network& net, const Dataset& test,
                              const Dataset& attack_subset,
                              const std::vector<EvalAttack>& attacks, int workers,
                              std::uint64_t seed, std::size_t round) {
    row.evaluated = true;
    row.clean_acc = clean_accuracy(net, test, 256, workers);
    for (const auto& a : attacks) {
        const std::uint64_t key = derive_key(seed, purpose::kEval, round,
                                             std::hash<std::string>{}(a.token));
        row.robust[a.token] =
            robust_accuracy(net, attack_subset, a.name, a.cfg, key, 256, workers);
    }
}

inline std::string fmt6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace detail

inline void emit_manifest_json(const RunManifest& manifest, const std::string& path) {
    nlohmann::ordered_json j;
    j["code_version"] = manifest.code_version;
    nlohmann::ordered_json cfg;
    for (const auto& [k, v] : manifest.config_echo) cfg[k] = v;
    j["config"] = cfg;
    j["total_seconds"] = manifest.total_seconds;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : manifest.rows) {
        nlohmann::ordered_json row;
        row["round"] = r.round;
        row["variant"] = r.variant;
        row["evaluated"] = r.evaluated;
        row["mean_loss"] = r.mean_loss;
        row["seconds"] = r.seconds;
        if (r.evaluated) {
            row["clean_acc"] = r.clean_acc;
            nlohmann::ordered_json rob;
            for (const auto& [tok, acc] : r.robust) rob[tok] = acc;
            row["robust"] = rob;
        }
        rows.push_back(std::move(row));
    }
    j["rows"] = std::move(rows);
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for write");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

/// metrics.csv: header plus one row per evaluated round, accuracies with six
/// decimal places. Attacks outside the evaluation list print as nan.
inline void emit_metrics_csv(const RunManifest& manifest, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for write");
    out << "round,variant,clean_acc,fgsm,bim,pgd40,pgd100,mean_loss,seconds\n";
    static const char* kCanonical[] = {"fgsm", "bim", "pgd40", "pgd100"};
    for (const auto& r : manifest.rows) {
        if (!r.evaluated) continue;
        out << r.round << ',' << r.variant << ',' << detail::fmt6(r.clean_acc);
        for (const char* tok : kCanonical) {
            const auto it = r.robust.find(tok);
            out << ',' << detail::fmt6(it == r.robust.end()
                                           ? std::numeric_limits<double>::quiet_NaN()
                                           : it->second);
        }
        out << ',' << detail::fmt6(r.mean_loss) << ',' << detail::fmt6(r.seconds) << '\n';
    }
    if (!out) throw IoError("failed writing " + path);
}

/// Single-SVG learning curve: one polyline for clean accuracy and one per
/// evaluated attack, with axes and a legend.
inline void emit_learning_curve_svg(const RunManifest& manifest, const std::string& path) {
    const auto rows = manifest.evaluated_rows();
    if (rows.empty()) throw MetricError("no evaluated rounds to plot");

    std::vector<std::string> series_names = {"clean"};
    for (const auto& [tok, acc] : rows.front()->robust) {
        (void)acc;
        series_names.push_back(tok);
    }
    static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                     "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

    const double width = 880, height = 520;
    const double left = 70, right = 860, top = 30, bottom = 460;
    std::size_t max_round = 1;
    for (const auto* r : rows) max_round = std::max(max_round, r->round);
    auto xpos = [&](double round) {
        return left + (right - left) * round / static_cast<double>(max_round);
    };
    auto ypos = [&](double acc) { return bottom - (bottom - top) * acc; };

    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for write");
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
        << "\" fill=\"white\"/>\n";
    // axes
    out << "  <line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\""
        << bottom << "\" stroke=\"black\"/>\n";
    out << "  <line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
        << bottom << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double acc = i / 5.0;
        out << "  <text x=\"" << left - 10 << "\" y=\"" << ypos(acc) + 4
            << "\" text-anchor=\"end\" font-size=\"12\">" << detail::fmt6(acc).substr(0, 3)
            << "</text>\n";
        out << "  <line x1=\"" << left - 4 << "\" y1=\"" << ypos(acc) << "\" x2=\"" << left
            << "\" y2=\"" << ypos(acc) << "\" stroke=\"black\"/>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        const double round = max_round * i / 4.0;
        out << "  <text x=\"" << xpos(round) << "\" y=\"" << bottom + 18
            << "\" text-anchor=\"middle\" font-size=\"12\">"
            << static_cast<std::size_t>(round + 0.5) << "</text>\n";
    }
    out << "  <text x=\"" << (left + right) / 2 << "\" y=\"" << bottom + 40
        << "\" text-anchor=\"middle\" font-size=\"14\">round</text>\n";
    out << "  <text x=\"18\" y=\"" << (top + bottom) / 2
        << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 18 "
        << (top + bottom) / 2 << ")\">accuracy</text>\n";

    for (std::size_t s = 0; s < series_names.size(); ++s) {
        const std::string& name = series_names[s];
        const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
        std::string points;
        for (const auto* r : rows) {
            const double acc = (name == "clean") ? r->clean_acc : r->robust.at(name);
            points += std::to_string(xpos(static_cast<double>(r->round))) + "," +
                      std::to_string(ypos(acc)) + " ";
        }
        out << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
            << points << "\"/>\n";
        for (const auto* r : rows) {
            const double acc = (name == "clean") ? r->clean_acc : r->robust.at(name);
            out << "  <circle cx=\"" << xpos(static_cast<double>(r->round)) << "\" cy=\""
                << ypos(acc) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        // legend
        const double ly = top + 16 * static_cast<double>(s);
        out << "  <line x1=\"" << right - 120 << "\" y1=\"" << ly << "\" x2=\"" << right - 96
            << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "  <text x=\"" << right - 90 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">"
            << name << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) throw IoError("failed writing " + path);
}

using ProgressFn = std::function<void(const MetricRow&)>;

/// Loads and partitions the data, runs the configured rounds, evaluates on
/// the cadence, and writes metrics.csv, manifest.json, the learning curve and
/// the final checkpoint into output_dir.
inline RunManifest run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
    namespace fs = std::filesystem;
    const auto t0 = std::chrono::steady_clock::now();

    auto [train_full, test] = detail::load_experiment_data(cfg);
    Dataset train = (cfg.subsample_frac < 1.0)
                        ? subsample_fraction(train_full, cfg.subsample_frac, cfg.seed)
                        : std::move(train_full);

    const PartitionPlan plan =
        dirichlet_partition(train.labels, cfg.n_clients, cfg.gamma, cfg.seed);
    const std::vector<ClientState> clients = make_clients(train, plan, cfg.seed);

    std::vector<std::size_t> dims;
    dims.push_back(train.height() * train.width());
    for (std::size_t d : cfg.hidden_dims) dims.push_back(d);
    dims.push_back(static_cast<std::size_t>(train.num_classes));

    ServerState server;
    server.global_net = init_network(dims, cfg.seed);
    server.base_key = cfg.seed;

    const Dataset attack_subset = detail::eval_subset(test, cfg.eval_max_samples, cfg.seed);
    const std::vector<detail::EvalAttack> attacks = detail::resolve_eval_attacks(cfg);

    RunManifest manifest;
    manifest.config_echo = cfg.echo_pairs;

    fs::create_directories(cfg.output_dir);

    const std::size_t T = cfg.hp.rounds;
    if (T == 0) {
        MetricRow row;
        row.round = 0;
        row.variant = cfg.variant.name();
        const auto e0 = std::chrono::steady_clock::now();
        detail::fill_eval_metrics(row, server.global_net, test, attack_subset, attacks,
                                  cfg.hp.workers, cfg.seed, 0);
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count();
        if (progress) progress(row);
        manifest.rows.push_back(std::move(row));
    }
    for (std::size_t t = 1; t <= T; ++t) {
        const auto r0 = std::chrono::steady_clock::now();
        auto [next_server, report] = run_round(std::move(server), clients, cfg.variant, cfg.hp);
        server = std::move(next_server);

        MetricRow row;
        row.round = t;
        row.variant = cfg.variant.name();
        row.mean_loss = report.mean_loss();
        if (t % cfg.eval_every == 0 || t == T)
            detail::fill_eval_metrics(row, server.global_net, test, attack_subset, attacks,
                                      cfg.hp.workers, cfg.seed, t);
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - r0).count();
        if (progress) progress(row);
        manifest.rows.push_back(std::move(row));

        if (cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0) {
            Checkpoint ckpt{static_cast<std::uint32_t>(t), server.global_net, server.global_bank,
                            cfg.echo_lines()};
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_round_%05zu.bin", t);
            save_checkpoint(cfg.output_dir + "/" + name, ckpt);
        }
    }
    manifest.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    Checkpoint final_ckpt{static_cast<std::uint32_t>(server.round), server.global_net,
                          server.global_bank, cfg.echo_lines()};
    save_checkpoint(cfg.output_dir + "/checkpoint_final.bin", final_ckpt);
    emit_metrics_csv(manifest, cfg.output_dir + "/metrics.csv");
    emit_manifest_json(manifest, cfg.output_dir + "/manifest.json");
    emit_learning_curve_svg(manifest, cfg.output_dir + "/curve.svg");
    return manifest;
}

/// One experiment per rho under a shared seed, plus sweep.csv with the
/// final-round clean and mean robust accuracy per rho.
inline std::vector<RunManifest> run_sweep(const ExperimentConfig& cfg,
                                          const std::vector<double>& rho_values,
                                          const ProgressFn& progress = {}) {
    if (cfg.variant.kind != TrainerVariant::Kind::kFedBat)
        throw ConfigError("sweep requires the fedbat variant");
    if (rho_values.empty()) throw ConfigError("sweep needs at least one rho value");

    std::filesystem::create_directories(cfg.output_dir);
    std::vector<RunManifest> manifests;
    std::ofstream out(cfg.output_dir + "/sweep.csv");
    if (!out) throw IoError("cannot open sweep.csv for write");
    out << "rho,clean_acc,mean_robust_acc\n";
    for (double rho : rho_values) {
        if (rho < 0.0) throw ConfigError("rho must be non-negative");
        std::map<std::string, std::string> raw;
        for (const auto& [k, v] : cfg.echo_pairs) raw[k] = v;
        raw["lambda"] = detail::format_double(rho / (1.0 + rho));
        char sub[48];
        std::snprintf(sub, sizeof(sub), "rho_%g", rho);
        raw["output_dir"] = cfg.output_dir + "/" + sub;
        const ExperimentConfig sub_cfg = resolve_config(std::move(raw));
        RunManifest m = run_experiment(sub_cfg, progress);
        const RunSummary s = summarize_run(m, 1);  // final evaluated round
        out << detail::format_double(rho) << ',' << detail::fmt6(s.clean_acc) << ','
            << detail::fmt6(s.mean_robust) << '\n';
        manifests.push_back(std::move(m));
    }
    if (!out) throw IoError("failed writing sweep.csv");
    return manifests;
}

}  // namespace fedsim
