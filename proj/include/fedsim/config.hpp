#pragma once

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/attacks.hpp"
#include "fedsim/augment.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/federation.hpp"

namespace fedsim {

/// Fully resolved experiment description. Built from a flat key = value file
/// (or a named preset) with defaults applied; echo_lines() serializes it back
/// so a run can be reproduced bit for bit from its manifest.
struct ExperimentConfig {
    std::string dataset = "mnist";
    std::string data_dir;
    double subsample_frac = 0.1;
    std::size_t n_clients = 5;
    double gamma = 0.5;

    TrainerVariant variant;

    Hyperparams hp;

    std::vector<std::string> eval_attacks = {"fgsm", "bim", "pgd40", "pgd100"};
    std::size_t eval_every = 5;
    std::size_t eval_max_samples = 0;  // 0 = full test set

    std::vector<std::size_t> hidden_dims = {256, 128};
    std::uint64_t seed = 42;
    std::string output_dir = "out";
    std::size_t checkpoint_every = 0;  // 0 = final checkpoint only

    int blobs_classes = 4;
    int blobs_per_class = 200;
    int blobs_dim = 16;
    double blobs_spread = 0.05;

    std::vector<std::pair<std::string, std::string>> echo_pairs;

    std::string echo_lines() const {
        std::string s;
        for (const auto& [k, v] : echo_pairs) s += k + " = " + v + "\n";
        return s;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s + ",") {
        if (ch == ',') {
            const std::string t = trim(cur);
            if (!t.empty()) out.push_back(t);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    return out;
}

inline const std::set<std::string>& known_config_keys() {
    static const std::set<std::string> keys = {
        "preset", "dataset", "data_dir", "subsample_frac", "n_clients", "gamma",
        "variant", "rho", "lambda", "asd_weight", "augment", "adv_fraction",
        "lr", "batch_size", "local_epochs", "rounds", "participation_rate",
        "epsilon", "alpha", "train_steps", "random_start",
        "eval_attacks", "eval_every", "eval_max_samples",
        "hidden_dims", "seed", "workers", "output_dir", "checkpoint_every",
        "augment_ops", "crop_pad", "hflip_prob", "rotate_max_deg", "scale_lo", "scale_hi",
        "blobs_classes", "blobs_per_class", "blobs_dim", "blobs_spread"};
    return keys;
}

inline double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "' wants a number, got '" + v + "'");
    return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "' wants an integer, got '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "' wants true/false, got '" + v + "'");
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

/// Built-in experiment presets mirroring the reference setups: 5 clients,
/// Dir(0.5), 10% subsample, batch 64, 1 local epoch, 100 rounds, lr 0.01,
/// with per-dataset attack bounds and accuracy/robustness ratios.
inline std::map<std::string, std::string> preset_config(const std::string& name) {
    static const std::map<std::string, std::map<std::string, std::string>> presets = {
        {"mnist-fedavg", {{"dataset", "mnist"}, {"variant", "fedavg"}}},
        {"mnist-fedpgd", {{"dataset", "mnist"}, {"variant", "fedpgd"}}},
        {"mnist-mixfat", {{"dataset", "mnist"}, {"variant", "mixfat"}, {"adv_fraction", "0.5"}}},
        {"mnist-fedbat", {{"dataset", "mnist"}, {"variant", "fedbat"}}},
        {"mnist-fedbat-scale",
         {{"dataset", "mnist"},
          {"variant", "fedbat"},
          {"n_clients", "100"},
          {"participation_rate", "0.1"},
          {"subsample_frac", "1.0"}}},
        {"fashion-fedavg", {{"dataset", "fashion_mnist"}, {"variant", "fedavg"}}},
        {"fashion-fedpgd", {{"dataset", "fashion_mnist"}, {"variant", "fedpgd"}}},
        {"fashion-fedbat", {{"dataset", "fashion_mnist"}, {"variant", "fedbat"}}},
        {"blobs-fedavg", {{"dataset", "blobs"}, {"variant", "fedavg"}, {"rounds", "20"}}},
        {"blobs-fedpgd", {{"dataset", "blobs"}, {"variant", "fedpgd"}, {"rounds", "20"}}},
        {"blobs-fedbat", {{"dataset", "blobs"}, {"variant", "fedbat"}, {"rounds", "20"}}},
    };
    const auto it = presets.find(name);
    if (it == presets.end()) throw ConfigError("unknown preset '" + name + "'");
    return it->second;
}

/// Reads a flat "key = value" file ('#' starts a comment). Later keys
/// override earlier ones; unknown keys are rejected at resolve time.
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::map<std::string, std::string> raw;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              " is not 'key = value': " + line);
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) +
                                           " has an empty key");
        raw[key] = value;
    }
    return raw;
}

inline void apply_override(std::map<std::string, std::string>& raw, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override is not key=value: " + kv);
    raw[detail::trim(kv.substr(0, eq))] = detail::trim(kv.substr(eq + 1));
}

/// Applies presets, per-dataset defaults and validation; rejects unknown
/// keys by name. rho and lambda are mutually exclusive (rho maps to
/// lambda = rho / (1 + rho)).
inline ExperimentConfig resolve_config(std::map<std::string, std::string> raw) {
    if (const auto it = raw.find("preset"); it != raw.end()) {
        std::map<std::string, std::string> base = preset_config(it->second);
        raw.erase(it);
        for (const auto& [k, v] : raw) base[k] = v;
        raw = std::move(base);
    }
    for (const auto& [k, v] : raw) {
        (void)v;
        if (!detail::known_config_keys().count(k))
            throw ConfigError("unknown config key '" + k + "'");
    }
    auto has = [&](const char* k) { return raw.count(k) != 0; };
    auto str = [&](const char* k, const std::string& dflt) {
        return has(k) ? raw.at(k) : dflt;
    };
    auto num = [&](const char* k, double dflt) {
        return has(k) ? detail::parse_double(k, raw.at(k)) : dflt;
    };
    auto integer = [&](const char* k, long long dflt) {
        return has(k) ? detail::parse_int(k, raw.at(k)) : dflt;
    };
    auto boolean = [&](const char* k, bool dflt) {
        return has(k) ? detail::parse_bool(k, raw.at(k)) : dflt;
    };

    ExperimentConfig cfg;
    cfg.dataset = str("dataset", "mnist");
    if (cfg.dataset != "mnist" && cfg.dataset != "fashion_mnist" && cfg.dataset != "blobs")
        throw ConfigError("config key 'dataset' must be mnist, fashion_mnist, or blobs");
    const bool is_blobs = cfg.dataset == "blobs";
    const bool is_fashion = cfg.dataset == "fashion_mnist";

    cfg.data_dir = str("data_dir", "");
    cfg.subsample_frac = num("subsample_frac", is_blobs ? 1.0 : 0.1);
    if (!(cfg.subsample_frac > 0.0 && cfg.subsample_frac <= 1.0))
        throw ConfigError("config key 'subsample_frac' must be in (0,1]");
    const long long n_clients = integer("n_clients", 5);
    if (n_clients < 1) throw ConfigError("config key 'n_clients' must be at least 1");
    cfg.n_clients = static_cast<std::size_t>(n_clients);
    cfg.gamma = num("gamma", 0.5);
    if (!(cfg.gamma > 0.0)) throw ConfigError("config key 'gamma' must be positive");

    // Trainer variant and its parameters.
    const std::string variant = str("variant", "fedbat");
    if (has("rho") && has("lambda"))
        throw ConfigError("config keys 'rho' and 'lambda' are mutually exclusive");
    double lambda;
    if (has("lambda")) {
        lambda = detail::parse_double("lambda", raw.at("lambda"));
    } else {
        const double default_rho = is_blobs ? 1.0 : (is_fashion ? 7.0 : 10.0);
        const double rho = num("rho", default_rho);
        if (rho < 0.0) throw ConfigError("config key 'rho' must be non-negative");
        lambda = rho / (1.0 + rho);
    }
    if (lambda < 0.0 || lambda > 1.0)
        throw ConfigError("config key 'lambda' must be in [0,1]");

    AugmentationSpec aug;
    if (has("augment_ops")) {
        aug = AugmentationSpec::none();
        for (const auto& op : detail::split_list(raw.at("augment_ops"))) {
            if (op == "crop") aug.crop = true;
            else if (op == "hflip") aug.hflip = true;
            else if (op == "rotate") aug.rotate = true;
            else if (op == "scale") aug.scale = true;
            else throw ConfigError("config key 'augment_ops' has unknown op '" + op + "'");
        }
    }
    const long long crop_pad = integer("crop_pad", 2);
    if (crop_pad < 0) throw ConfigError("config key 'crop_pad' must be non-negative");
    aug.crop_pad = static_cast<std::size_t>(crop_pad);
    aug.hflip_prob = num("hflip_prob", 0.5);
    aug.rotate_max_deg = num("rotate_max_deg", 15.0);
    aug.scale_lo = num("scale_lo", 0.9);
    aug.scale_hi = num("scale_hi", 1.1);

    if (variant == "fedavg") {
        cfg.variant = TrainerVariant::fedavg();
    } else if (variant == "fedpgd") {
        cfg.variant = TrainerVariant::fedpgd();
    } else if (variant == "mixfat") {
        cfg.variant = TrainerVariant::mixfat(num("adv_fraction", 0.5));
    } else if (variant == "fedbat") {
        cfg.variant = TrainerVariant::fedbat(lambda, num("asd_weight", 1.0),
                                             boolean("augment", true), aug);
    } else {
        throw ConfigError("config key 'variant' must be fedavg, fedpgd, mixfat, or fedbat");
    }
    cfg.variant.augmentation = aug;
    try {
        cfg.variant.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("invalid variant parameters: ") + e.what());
    }

    cfg.hp.lr = num("lr", 0.01);
    if (!(cfg.hp.lr > 0.0)) throw ConfigError("config key 'lr' must be positive");
    const long long batch = integer("batch_size", 64);
    if (batch < 1) throw ConfigError("config key 'batch_size' must be at least 1");
    cfg.hp.batch_size = static_cast<std::size_t>(batch);
    const long long epochs = integer("local_epochs", 1);
    if (epochs < 1) throw ConfigError("config key 'local_epochs' must be at least 1");
    cfg.hp.local_epochs = static_cast<std::size_t>(epochs);
    const long long rounds = integer("rounds", 100);
    if (rounds < 0) throw ConfigError("config key 'rounds' must be non-negative");
    cfg.hp.rounds = static_cast<std::size_t>(rounds);
    cfg.hp.participation_rate = num("participation_rate", 1.0);
    if (!(cfg.hp.participation_rate > 0.0 && cfg.hp.participation_rate <= 1.0))
        throw ConfigError("config key 'participation_rate' must be in (0,1]");
    if (cfg.hp.participation_rate * static_cast<double>(cfg.n_clients) < 1.0)
        throw ConfigError("config key 'participation_rate' selects no client");

    cfg.hp.attack.epsilon = num("epsilon", is_blobs ? 0.1 : (is_fashion ? 32.0 / 255.0 : 0.3));
    cfg.hp.attack.alpha = num("alpha", is_blobs ? 0.025 : (is_fashion ? 8.0 / 255.0 : 0.01));
    const long long steps = integer("train_steps", 10);
    if (steps < 1) throw ConfigError("config key 'train_steps' must be at least 1");
    cfg.hp.attack.steps = static_cast<std::size_t>(steps);
    cfg.hp.attack.random_start = boolean("random_start", false);
    try {
        cfg.hp.attack.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("invalid attack parameters: ") + e.what());
    }
    cfg.hp.workers = static_cast<int>(integer("workers", 0));
    if (cfg.hp.workers < 0) throw ConfigError("config key 'workers' must be non-negative");

    cfg.eval_attacks = detail::split_list(str("eval_attacks", "fgsm,bim,pgd40,pgd100"));
    for (const auto& tok : cfg.eval_attacks) {
        if (tok == "fgsm" || tok == "bim") continue;
        const bool pgd_tok = tok.rfind("pgd", 0) == 0;
        const bool bim_tok = tok.rfind("bim", 0) == 0;
        if (!pgd_tok && !bim_tok)
            throw ConfigError("config key 'eval_attacks' has unknown attack '" + tok + "'");
        const std::string steps_str = tok.substr(3);
        char* end = nullptr;
        const long s = std::strtol(steps_str.c_str(), &end, 10);
        if (end == steps_str.c_str() || *end != '\0' || s < 1)
            throw ConfigError("config key 'eval_attacks' has unknown attack '" + tok + "'");
    }
    const long long eval_every = integer("eval_every", 5);
    if (eval_every < 1) throw ConfigError("config key 'eval_every' must be at least 1");
    cfg.eval_every = static_cast<std::size_t>(eval_every);
    const long long eval_max = integer("eval_max_samples", 0);
    if (eval_max < 0) throw ConfigError("config key 'eval_max_samples' must be non-negative");
    cfg.eval_max_samples = static_cast<std::size_t>(eval_max);

    cfg.hidden_dims.clear();
    for (const auto& tok :
         detail::split_list(str("hidden_dims", is_blobs ? "32,16" : "256,128"))) {
        const long long d = detail::parse_int("hidden_dims", tok);
        if (d < 1) throw ConfigError("config key 'hidden_dims' must hold positive dims");
        cfg.hidden_dims.push_back(static_cast<std::size_t>(d));
    }

    cfg.seed = static_cast<std::uint64_t>(integer("seed", 42));
    cfg.output_dir = str("output_dir", "out");
    const long long ckpt_every = integer("checkpoint_every", 0);
    if (ckpt_every < 0) throw ConfigError("config key 'checkpoint_every' must be non-negative");
    cfg.checkpoint_every = static_cast<std::size_t>(ckpt_every);

    cfg.blobs_classes = static_cast<int>(integer("blobs_classes", 4));
    cfg.blobs_per_class = static_cast<int>(integer("blobs_per_class", 200));
    cfg.blobs_dim = static_cast<int>(integer("blobs_dim", 16));
    cfg.blobs_spread = num("blobs_spread", 0.05);
    if (cfg.blobs_classes < 2 || cfg.blobs_per_class < 1 || cfg.blobs_dim < 1 ||
        cfg.blobs_spread < 0.0)
        throw ConfigError("config keys 'blobs_*' are out of range");

    // Canonical echo: every resolved key, in a fixed order, with lambda
    // already substituted for rho. Re-parsing the echo reproduces this
    // configuration exactly.
    auto d2s = detail::format_double;
    std::string aug_ops;
    if (aug.crop) aug_ops += "crop,";
    if (aug.hflip) aug_ops += "hflip,";
    if (aug.rotate) aug_ops += "rotate,";
    if (aug.scale) aug_ops += "scale,";
    if (!aug_ops.empty()) aug_ops.pop_back();
    std::string eval_list;
    for (const auto& t : cfg.eval_attacks) eval_list += t + ",";
    if (!eval_list.empty()) eval_list.pop_back();
    std::string hidden;
    for (std::size_t d : cfg.hidden_dims) hidden += std::to_string(d) + ",";
    if (!hidden.empty()) hidden.pop_back();

    cfg.echo_pairs = {
        {"dataset", cfg.dataset},
        {"data_dir", cfg.data_dir},
        {"subsample_frac", d2s(cfg.subsample_frac)},
        {"n_clients", std::to_string(cfg.n_clients)},
        {"gamma", d2s(cfg.gamma)},
        {"variant", cfg.variant.name()},
        {"lambda", d2s(cfg.variant.lambda)},
        {"asd_weight", d2s(cfg.variant.asd_weight)},
        {"augment", cfg.variant.augment ? "true" : "false"},
        {"adv_fraction", d2s(cfg.variant.adv_fraction)},
        {"lr", d2s(cfg.hp.lr)},
        {"batch_size", std::to_string(cfg.hp.batch_size)},
        {"local_epochs", std::to_string(cfg.hp.local_epochs)},
        {"rounds", std::to_string(cfg.hp.rounds)},
        {"participation_rate", d2s(cfg.hp.participation_rate)},
        {"epsilon", d2s(cfg.hp.attack.epsilon)},
        {"alpha", d2s(cfg.hp.attack.alpha)},
        {"train_steps", std::to_string(cfg.hp.attack.steps)},
        {"random_start", cfg.hp.attack.random_start ? "true" : "false"},
        {"eval_attacks", eval_list},
        {"eval_every", std::to_string(cfg.eval_every)},
        {"eval_max_samples", std::to_string(cfg.eval_max_samples)},
        {"hidden_dims", hidden},
        {"seed", std::to_string(cfg.seed)},
        {"workers", std::to_string(cfg.hp.workers)},
        {"output_dir", cfg.output_dir},
        {"checkpoint_every", std::to_string(cfg.checkpoint_every)},
        {"augment_ops", aug_ops},
        {"crop_pad", std::to_string(aug.crop_pad)},
        {"hflip_prob", d2s(aug.hflip_prob)},
        {"rotate_max_deg", d2s(aug.rotate_max_deg)},
        {"scale_lo", d2s(aug.scale_lo)},
        {"scale_hi", d2s(aug.scale_hi)},
        {"blobs_classes", std::to_string(cfg.blobs_classes)},
        {"blobs_per_class", std::to_string(cfg.blobs_per_class)},
        {"blobs_dim", std::to_string(cfg.blobs_dim)},
        {"blobs_spread", d2s(cfg.blobs_spread)},
    };
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
    return resolve_config(parse_config_file(path));
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    std::map<std::string, std::string> raw;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line is not 'key = value': " + line);
        raw[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
    return resolve_config(std::move(raw));
}

}  // namespace fedsim
