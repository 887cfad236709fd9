// Acceptance suite: one pass/fail line per criterion.
//
//   acceptance [--criterion N] [--data-dir DIR] [--seeds a,b,c]
//
// Exit codes: 0 all selected criteria passed, 1 at least one failed,
// 77 a selected criterion was skipped because the image datasets are not
// available (criteria 6-8 train on MNIST IDX files; everything else is
// self-contained).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "fedsim/experiment.hpp"
#include "testutil.hpp"

using namespace fedsim;

namespace {

constexpr int kSkipExit = 77;

struct Outcome {
    bool ran = false;
    bool passed = false;
    bool skipped = false;
    std::string detail;
};

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point start = clock::now();
    return std::chrono::duration<double>(clock::now() - start).count();
}

std::string g_data_dir;
std::vector<std::uint64_t> g_seeds = {1, 2, 3};
// dev overrides for smoke runs; the registered ctest entries never set them,
// so the criteria run at their stated scale by default
std::size_t g_rounds_override = 0;
std::string g_subsample_override;

std::size_t criterion_rounds(std::size_t stated) {
    return g_rounds_override ? g_rounds_override : stated;
}

bool mnist_available() {
    if (g_data_dir.empty()) return false;
    for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                          "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"})
        if (!std::filesystem::exists(g_data_dir + "/mnist/" + f)) return false;
    return true;
}

// Runs are cached in-process so criteria sharing a configuration (6 and 8
// both need the fedpgd and full fedbat runs) pay for it once.
std::map<std::string, RunManifest> g_run_cache;

// cache key ignores output_dir: criteria 6 and 8 share the fedpgd and full
// fedbat runs under different output directories
std::string cache_key(const ExperimentConfig& cfg) {
    std::string key;
    for (const auto& [k, v] : cfg.echo_pairs)
        if (k != "output_dir") key += k + "=" + v + "\n";
    return key;
}

const RunManifest& cached_run(const ExperimentConfig& cfg) {
    const std::string key = cache_key(cfg);
    auto it = g_run_cache.find(key);
    if (it != g_run_cache.end()) return it->second;
    std::printf("    running: %s seed %llu rounds %zu ...\n", cfg.variant.name(),
                static_cast<unsigned long long>(cfg.seed), cfg.hp.rounds);
    std::fflush(stdout);
    RunManifest m = run_experiment(cfg);
    return g_run_cache.emplace(key, std::move(m)).first->second;
}

ExperimentConfig mnist_cfg(const std::string& variant, std::uint64_t seed, std::size_t rounds,
                           const std::string& out_tag,
                           const std::map<std::string, std::string>& extra = {}) {
    std::map<std::string, std::string> raw;
    raw["dataset"] = "mnist";
    raw["data_dir"] = g_data_dir;
    raw["variant"] = variant;
    raw["seed"] = std::to_string(seed);
    raw["rounds"] = std::to_string(rounds);
    raw["eval_every"] = std::to_string(rounds);  // final-round evaluation
    raw["eval_attacks"] = "fgsm,bim,pgd40";
    raw["eval_max_samples"] = "1000";
    raw["workers"] = "0";
    raw["output_dir"] =
        "acceptance_out/" + out_tag + "_" + variant + "_s" + std::to_string(seed);
    if (!g_subsample_override.empty()) raw["subsample_frac"] = g_subsample_override;
    for (const auto& [k, v] : extra) raw[k] = v;
    return resolve_config(std::move(raw));
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double num = 0, dx = 0, dy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx == 0.0 || dy == 0.0) return 0.0;
    return num / std::sqrt(dx * dy);
}

// --------------------------------------------------------------------------
// 1. gradient oracle

Outcome criterion_1() {
    RngStream rng{0xACC1, 0};
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        testutil::RandomCase c = testutil::random_case(rng);

        // cross-entropy head
        auto [logits, trace] = forward(c.net, c.batch);
        auto [ce, dlogits] = softmax_cross_entropy(logits, c.labels);
        (void)ce;
        const GradientBundle g_ce = backward(c.net, trace, dlogits);
        auto ce_loss = [&](const Network& n) {
            auto [l, tr] = forward(n, c.batch);
            (void)tr;
            return softmax_cross_entropy(l, c.labels).first;
        };
        const testutil::FdGrads fd_ce = testutil::fd_param_grads(c.net, ce_loss);
        const Tensor fd_ce_in = testutil::fd_input_grads(c.batch, [&](const Tensor& b) {
            auto [l, tr] = forward(c.net, b);
            (void)tr;
            return softmax_cross_entropy(l, c.labels).first;
        });

        // feature-alignment (mse) head through the extractor
        Tensor targets = Tensor::zeros({c.batch.dim(0), c.net.feature_dim()});
        for (double& v : targets.data) v = rng.uniform(-0.5, 0.5);
        const Tensor emb =
            c.net.layers.size() >= 2 ? trace.post[c.net.layers.size() - 2] : trace.input;
        auto [mse, dfeat] = mse_feature_loss(emb, targets);
        (void)mse;
        const GradientBundle g_mse = backward(c.net, trace, dfeat, /*from_embedding=*/true);
        auto mse_loss = [&](const Network& n) {
            return mse_feature_loss(embed(n, c.batch), targets).first;
        };
        const testutil::FdGrads fd_mse = testutil::fd_param_grads(c.net, mse_loss);
        const Tensor fd_mse_in = testutil::fd_input_grads(c.batch, [&](const Tensor& b) {
            return mse_feature_loss(embed(c.net, b), targets).first;
        });

        for (std::size_t l = 0; l < c.net.layers.size(); ++l) {
            for (std::size_t i = 0; i < fd_ce.dweights[l].data.size(); ++i) {
                worst = std::max(worst, testutil::rel_err(fd_ce.dweights[l].data[i],
                                                          g_ce.dweights[l].data[i]));
                worst = std::max(worst, testutil::rel_err(fd_mse.dweights[l].data[i],
                                                          g_mse.dweights[l].data[i]));
            }
            for (std::size_t i = 0; i < fd_ce.dbias[l].data.size(); ++i) {
                worst = std::max(worst, testutil::rel_err(fd_ce.dbias[l].data[i],
                                                          g_ce.dbias[l].data[i]));
                worst = std::max(worst, testutil::rel_err(fd_mse.dbias[l].data[i],
                                                          g_mse.dbias[l].data[i]));
            }
        }
        for (std::size_t i = 0; i < fd_ce_in.data.size(); ++i) {
            worst = std::max(worst, testutil::rel_err(fd_ce_in.data[i],
                                                      g_ce.input_gradient.data[i]));
            worst = std::max(worst, testutil::rel_err(fd_mse_in.data[i],
                                                      g_mse.input_gradient.data[i]));
        }
    }
    Outcome o;
    o.ran = true;
    o.passed = worst < 1e-4;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "50 cases, worst rel err %.3g (tolerance 1e-4)", worst);
    o.detail = buf;
    return o;
}

// --------------------------------------------------------------------------
// 2. attack invariants

Outcome criterion_2() {
    RngStream rng{0xACC2, 0};
    std::vector<Network> nets;
    for (std::uint64_t s = 0; s < 4; ++s)
        nets.push_back(init_network({6, 5, 3}, derive_key(0xA77AC, s)));

    std::size_t violations = 0;
    for (int rep = 0; rep < 10000; ++rep) {
        const Network& net = nets[rep % nets.size()];
        const std::size_t b = 1 + rng.next_below(4);
        Tensor x = Tensor::zeros({b, 6});
        for (double& v : x.data) v = rng.next_double();
        std::vector<int> y(b);
        for (auto& v : y) v = static_cast<int>(rng.next_below(3));

        AttackConfig cfg;
        cfg.epsilon = (rep % 10 == 0) ? 0.0 : rng.uniform(0.0, 0.5);
        cfg.alpha = rng.uniform(0.004, 0.3);
        cfg.steps = 1 + rng.next_below(8);
        cfg.random_start = rng.next_below(2) == 1;

        Tensor adv;
        const int kind = rep % 3;
        if (kind == 0) {
            adv = fgsm(net, x, y, cfg.epsilon);
        } else if (kind == 1) {
            adv = bim(net, x, y, cfg);
        } else {
            RngStream attack_rng{derive_key(0xACC2F, static_cast<std::uint64_t>(rep)), 0};
            adv = pgd(net, x, y, cfg, attack_rng);
        }

        double delta = 0.0;
        bool clamped = true;
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            delta = std::max(delta, std::fabs(adv.data[i] - x.data[i]));
            clamped &= adv.data[i] >= cfg.clamp_lo && adv.data[i] <= cfg.clamp_hi;
        }
        if (delta > cfg.epsilon + 1e-12 || !clamped) ++violations;
        if (cfg.epsilon == 0.0 && adv.data != x.data) ++violations;
    }
    Outcome o;
    o.ran = true;
    o.passed = violations == 0;
    o.detail = "10000 randomized fgsm/bim/pgd calls, " + std::to_string(violations) +
               " ball/clamp/fixpoint violations";
    return o;
}

// --------------------------------------------------------------------------
// 3. degeneration lattice

struct BlobWorld {
    std::vector<ClientState> clients;
    Network net0;
    Hyperparams hp;
    std::uint64_t seed;
};

BlobWorld make_blob_world(std::uint64_t seed, std::size_t n_clients, double epsilon) {
    BlobWorld w;
    w.seed = seed;
    const Dataset train = synthesize_blobs(3, 60, 10, 0.05, seed);
    const PartitionPlan plan = dirichlet_partition(train.labels, n_clients, 2.0, seed);
    w.clients = make_clients(train, plan, seed);
    w.net0 = init_network({10, 12, 8, 3}, seed);
    w.hp.lr = 0.2;
    w.hp.batch_size = 16;
    w.hp.attack.epsilon = epsilon;
    w.hp.attack.alpha = epsilon > 0 ? epsilon / 3.0 : 0.03;
    w.hp.attack.steps = 3;
    w.hp.workers = 1;
    return w;
}

Network run_variant(const BlobWorld& w, const TrainerVariant& v, std::size_t rounds,
                    int workers = 1, const Hyperparams* hp_override = nullptr) {
    ServerState s;
    s.global_net = w.net0;
    s.base_key = w.seed;
    Hyperparams hp = hp_override ? *hp_override : w.hp;
    hp.workers = workers;
    for (std::size_t t = 0; t < rounds; ++t) {
        auto [next, report] = run_round(std::move(s), w.clients, v, hp);
        (void)report;
        s = std::move(next);
    }
    return s.global_net;
}

Outcome criterion_3() {
    const BlobWorld w = make_blob_world(0xACC3, 3, 0.1);
    std::vector<std::string> failures;

    const Network fedpgd_net = run_variant(w, TrainerVariant::fedpgd(), 3);
    const Network fedavg_net = run_variant(w, TrainerVariant::fedavg(), 3);

    if (!bitwise_equal(run_variant(w, TrainerVariant::fedbat(1.0, 0.0, false), 3), fedpgd_net))
        failures.push_back("fedbat(1,0,no-aug) != fedpgd");
    BlobWorld eps0 = w;
    eps0.hp.attack.epsilon = 0.0;
    if (!bitwise_equal(run_variant(eps0, TrainerVariant::fedpgd(), 3), fedavg_net))
        failures.push_back("fedpgd(eps=0) != fedavg");
    if (!bitwise_equal(run_variant(w, TrainerVariant::mixfat(1.0), 3), fedpgd_net))
        failures.push_back("mixfat(1) != fedpgd");
    if (!bitwise_equal(run_variant(w, TrainerVariant::mixfat(0.0), 3), fedavg_net))
        failures.push_back("mixfat(0) != fedavg");

    Outcome o;
    o.ran = true;
    o.passed = failures.empty();
    o.detail = failures.empty() ? "4 bitwise equivalences over 3 rounds on blobs"
                                : failures.front();
    return o;
}

// --------------------------------------------------------------------------
// 4. aggregation oracles

Outcome criterion_4() {
    RngStream rng{0xACC4, 0};
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        // model aggregation against a brute-force loop
        const std::size_t k = 1 + rng.next_below(6);
        std::vector<std::pair<Network, std::size_t>> updates;
        for (std::size_t i = 0; i < k; ++i)
            updates.emplace_back(init_network({5, 4, 3}, rng.next_u64()),
                                 1 + rng.next_below(50));
        const Network agg = aggregate_models(updates);
        double total = 0.0;
        for (const auto& [net, n] : updates) total += static_cast<double>(n);
        for (std::size_t l = 0; l < agg.layers.size(); ++l)
            for (std::size_t i = 0; i < agg.layers[l].weights.data.size(); ++i) {
                double expect = 0.0;
                for (const auto& [net, n] : updates)
                    expect += (static_cast<double>(n) / total) * net.layers[l].weights.data[i];
                worst = std::max(worst, std::fabs(agg.layers[l].weights.data[i] - expect));
            }

        // feature-bank aggregation against per-class possessor averaging
        const std::size_t n_banks = 1 + rng.next_below(5);
        const std::size_t classes = 2 + rng.next_below(5);
        const std::size_t fdim = 2 + rng.next_below(6);
        std::vector<FeatureBank> banks(n_banks);
        for (auto& b : banks) {
            b.feature_dim = fdim;
            b.counts.assign(classes, 0);
            b.means.resize(classes);
            for (std::size_t c = 0; c < classes; ++c) {
                if (rng.next_below(3) == 0) continue;  // absent
                b.counts[c] = 1 + rng.next_below(20);
                b.means[c].resize(fdim);
                for (double& v : b.means[c]) v = rng.uniform(-1.0, 1.0);
            }
        }
        bool any = false;
        for (const auto& b : banks) any |= b.any_present();
        if (!any) banks[0] = [&] {
            FeatureBank b;
            b.feature_dim = fdim;
            b.counts.assign(classes, 0);
            b.means.resize(classes);
            b.counts[0] = 1;
            b.means[0].assign(fdim, 0.25);
            return b;
        }();
        const FeatureBank global = aggregate_feature_banks(banks);
        for (std::size_t c = 0; c < classes; ++c) {
            std::vector<double> expect(fdim, 0.0);
            std::size_t possessors = 0;
            for (const auto& b : banks)
                if (b.counts[c] > 0) {
                    for (std::size_t j = 0; j < fdim; ++j) expect[j] += b.means[c][j];
                    ++possessors;
                }
            if (possessors == 0) {
                if (global.present(static_cast<int>(c))) worst = std::max(worst, 1.0);
                continue;
            }
            for (std::size_t j = 0; j < fdim; ++j)
                worst = std::max(worst, std::fabs(global.means[c][j] -
                                                  expect[j] / double(possessors)));
        }
    }
    Outcome o;
    o.ran = true;
    o.passed = worst < 1e-12;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "200 instances, worst abs deviation %.3g (tolerance 1e-12)",
                  worst);
    o.detail = buf;
    return o;
}

// --------------------------------------------------------------------------
// 5. scheduling independence

Outcome criterion_5() {
    const BlobWorld w = make_blob_world(0xACC5, 6, 0.1);
    const TrainerVariant v = TrainerVariant::fedbat(0.8, 1.0, true);
    const Network serial = run_variant(w, v, 10, 1);
    const Network parallel = run_variant(w, v, 10, 8);
    Outcome o;
    o.ran = true;
    o.passed = bitwise_equal(serial, parallel);
    o.detail = o.passed ? "10-round fedbat run identical for 1 vs 8 workers"
                        : "worker count changed the final model";
    return o;
}

// --------------------------------------------------------------------------
// 6. desk-scale mnist trend

Outcome criterion_6() {
    Outcome o;
    if (!mnist_available()) {
        o.skipped = true;
        o.detail = "mnist idx files not found under FEDSIM_DATA_DIR";
        return o;
    }
    o.ran = true;
    int ok_a = 0, ok_b = 0, ok_c = 0;
    for (std::uint64_t seed : g_seeds) {
        const RunSummary avg = summarize_run(cached_run(mnist_cfg("fedavg", seed, criterion_rounds(100), "c6")), 1);
        const RunSummary pgd_s =
            summarize_run(cached_run(mnist_cfg("fedpgd", seed, criterion_rounds(100), "c6")), 1);
        const RunSummary bat = summarize_run(cached_run(mnist_cfg("fedbat", seed, criterion_rounds(100), "c6")), 1);

        const bool a = avg.clean_acc >= 0.93 && avg.robust.at("pgd40") <= 0.10;
        const bool b = pgd_s.robust.at("pgd40") >= 0.25 && pgd_s.clean_acc <= avg.clean_acc;
        const double bat_mean =
            (bat.robust.at("fgsm") + bat.robust.at("bim") + bat.robust.at("pgd40")) / 3.0;
        const double pgd_mean =
            (pgd_s.robust.at("fgsm") + pgd_s.robust.at("bim") + pgd_s.robust.at("pgd40")) / 3.0;
        const bool c = bat.clean_acc >= pgd_s.clean_acc - 0.01 && bat_mean >= pgd_mean - 0.01;
        ok_a += a;
        ok_b += b;
        ok_c += c;
        std::printf(
            "    seed %llu: fedavg clean %.4f pgd40 %.4f | fedpgd clean %.4f pgd40 %.4f mean "
            "%.4f | fedbat clean %.4f mean %.4f [%c%c%c]\n",
            static_cast<unsigned long long>(seed), avg.clean_acc, avg.robust.at("pgd40"),
            pgd_s.clean_acc, pgd_s.robust.at("pgd40"), pgd_mean, bat.clean_acc, bat_mean,
            a ? 'A' : '-', b ? 'B' : '-', c ? 'C' : '-');
    }
    const int majority = static_cast<int>(g_seeds.size() / 2 + 1);
    o.passed = ok_a >= majority && ok_b >= majority && ok_c >= majority;
    o.detail = "majorities: fedavg-anchors " + std::to_string(ok_a) + "/" +
               std::to_string(g_seeds.size()) + ", fedpgd-anchors " + std::to_string(ok_b) + "/" +
               std::to_string(g_seeds.size()) + ", fedbat-vs-fedpgd " + std::to_string(ok_c) +
               "/" + std::to_string(g_seeds.size());
    return o;
}

// --------------------------------------------------------------------------
// 7. rho sweep trend

Outcome criterion_7() {
    Outcome o;
    if (!mnist_available()) {
        o.skipped = true;
        o.detail = "mnist idx files not found under FEDSIM_DATA_DIR";
        return o;
    }
    o.ran = true;
    const std::vector<double> rhos = {0.0, 1.0, 5.0, 10.0};
    int ok = 0;
    for (std::uint64_t seed : g_seeds) {
        std::vector<double> clean, robust;
        for (double rho : rhos) {
            char lambda[40];
            std::snprintf(lambda, sizeof(lambda), "%.17g", rho / (1.0 + rho));
            const ExperimentConfig cfg =
                mnist_cfg("fedbat", seed, criterion_rounds(30), "c7_rho" + std::to_string(int(rho)),
                          {{"lambda", lambda}, {"eval_attacks", "pgd10"}});
            const RunSummary s = summarize_run(cached_run(cfg), 1);
            clean.push_back(s.clean_acc);
            robust.push_back(s.robust.at("pgd10"));
        }
        const double s_clean = spearman(rhos, clean);
        const double s_robust = spearman(rhos, robust);
        const bool pass = s_clean <= 0.0 && s_robust >= 0.0;
        ok += pass;
        std::printf("    seed %llu: spearman(rho, clean) %.3f spearman(rho, pgd10) %.3f [%s]\n",
                    static_cast<unsigned long long>(seed), s_clean, s_robust,
                    pass ? "ok" : "fail");
    }
    o.passed = ok >= static_cast<int>(g_seeds.size() / 2 + 1);
    o.detail = std::to_string(ok) + "/" + std::to_string(g_seeds.size()) +
               " seeds show clean falling and robustness rising with rho";
    return o;
}

// --------------------------------------------------------------------------
// 8. ablation ordering

Outcome criterion_8() {
    Outcome o;
    if (!mnist_available()) {
        o.skipped = true;
        o.detail = "mnist idx files not found under FEDSIM_DATA_DIR";
        return o;
    }
    o.ran = true;
    int ok = 0;
    for (std::uint64_t seed : g_seeds) {
        std::vector<double> mean_robust;
        const std::vector<std::map<std::string, std::string>> configs = {
            {},  // fedpgd
            {{"asd_weight", "0"}, {"augment", "false"}},
            {{"asd_weight", "1"}, {"augment", "false"}},
            {{"asd_weight", "1"}, {"augment", "true"}},
        };
        for (std::size_t i = 0; i < configs.size(); ++i) {
            const std::string variant = i == 0 ? "fedpgd" : "fedbat";
            const ExperimentConfig cfg =
                mnist_cfg(variant, seed, criterion_rounds(100), "c8_step" + std::to_string(i), configs[i]);
            const RunSummary s = summarize_run(cached_run(cfg), 1);
            mean_robust.push_back(
                (s.robust.at("fgsm") + s.robust.at("bim") + s.robust.at("pgd40")) / 3.0);
        }
        bool monotone = true;
        for (std::size_t i = 0; i + 1 < mean_robust.size(); ++i)
            monotone &= mean_robust[i + 1] >= mean_robust[i] - 0.015;
        ok += monotone;
        std::printf("    seed %llu: mean robust %.4f -> %.4f -> %.4f -> %.4f [%s]\n",
                    static_cast<unsigned long long>(seed), mean_robust[0], mean_robust[1],
                    mean_robust[2], mean_robust[3], monotone ? "ok" : "fail");
    }
    o.passed = ok >= static_cast<int>(g_seeds.size() / 2 + 1);
    o.detail = std::to_string(ok) + "/" + std::to_string(g_seeds.size()) +
               " seeds keep mean robust accuracy non-decreasing across the four configs";
    return o;
}

// --------------------------------------------------------------------------
// 9. v-score oracle

Outcome criterion_9() {
    RngStream rng{0xACC9, 0};
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 1 + rng.next_below(30);
        std::vector<int> labels(n), clusters(n);
        for (auto& y : labels) y = static_cast<int>(rng.next_below(1 + rng.next_below(6)));
        for (auto& k : clusters) k = static_cast<int>(rng.next_below(1 + rng.next_below(6)));
        worst = std::max(worst, std::fabs(v_score(labels, clusters) -
                                          testutil::v_score_oracle(labels, clusters)));
    }
    // fixed example, frozen from the first-principles entropy computation
    const double fixed = v_score({0, 0, 1, 1}, {0, 1, 1, 1});
    const double fixed_expected = 0.3437110185;
    const bool fixed_ok = std::fabs(fixed - fixed_expected) < 1e-3;

    Outcome o;
    o.ran = true;
    o.passed = worst < 1e-10 && fixed_ok;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "100 labelings, worst oracle gap %.3g; fixed example %.6f (oracle %.6f)", worst,
                  fixed, fixed_expected);
    o.detail = buf;
    return o;
}

// --------------------------------------------------------------------------
// 10. dirichlet partition properties

Outcome criterion_10() {
    RngStream rng{0xACC10, 0};
    std::size_t valid = 0, infeasible = 0, violations = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n_clients = 1 + rng.next_below(20);
        const int n_classes = 2 + static_cast<int>(rng.next_below(9));
        const std::size_t n_samples =
            std::max<std::size_t>(50, 10 * n_clients) + rng.next_below(600);
        std::vector<int> labels(n_samples);
        for (auto& y : labels) y = static_cast<int>(rng.next_below(n_classes));
        const double gamma = std::exp(rng.uniform(std::log(0.05), std::log(100.0)));
        try {
            const PartitionPlan plan =
                dirichlet_partition(labels, n_clients, gamma, rng.next_u64());
            std::set<std::size_t> seen;
            std::size_t total = 0;
            bool ok = true;
            for (const auto& list : plan.client_indices) {
                ok &= !list.empty();
                for (std::size_t idx : list) ok &= idx < n_samples && seen.insert(idx).second;
                total += list.size();
            }
            ok &= total == n_samples;
            if (!ok) ++violations;
            else ++valid;
        } catch (const PartitionError&) {
            ++infeasible;  // documented outcome when retries run out
        }
    }
    // determinism on repeated seeds
    std::size_t nondeterministic = 0;
    std::vector<int> labels(400);
    for (auto& y : labels) y = static_cast<int>(rng.next_below(7));
    for (int rep = 0; rep < 100; ++rep) {
        const std::uint64_t seed = derive_key(0xD1CE, static_cast<std::uint64_t>(rep));
        const PartitionPlan a = dirichlet_partition(labels, 6, 0.4, seed);
        const PartitionPlan b = dirichlet_partition(labels, 6, 0.4, seed);
        if (a.client_indices != b.client_indices) ++nondeterministic;
    }

    Outcome o;
    o.ran = true;
    o.passed = violations == 0 && nondeterministic == 0 && valid >= 700;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "1000 draws: %zu valid plans, %zu infeasible (documented error), %zu invariant "
                  "violations; %zu nondeterministic repeats",
                  valid, infeasible, violations, nondeterministic);
    o.detail = buf;
    return o;
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*fn)();
};

const Criterion kCriteria[] = {
    {1, "gradient oracle (finite differences, CE + MSE heads)", criterion_1},
    {2, "attack invariants (ball containment, clamp, eps-0 fixpoint)", criterion_2},
    {3, "degeneration lattice (bitwise trainer equivalences)", criterion_3},
    {4, "aggregation oracles (models and feature banks)", criterion_4},
    {5, "scheduling independence (1 vs 8 workers)", criterion_5},
    {6, "desk-scale mnist trend (fedavg/fedpgd/fedbat anchors)", criterion_6},
    {7, "rho sweep trend (clean falls, robustness rises)", criterion_7},
    {8, "ablation ordering (mean robust accuracy non-decreasing)", criterion_8},
    {9, "v-score oracle (entropy from first principles)", criterion_9},
    {10, "dirichlet partition properties (cover, non-empty, determinism)", criterion_10},
};

}  // namespace

int main(int argc, char** argv) {
    int selected = 0;
    g_data_dir = std::getenv("FEDSIM_DATA_DIR") ? std::getenv("FEDSIM_DATA_DIR") : "";
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            selected = std::atoi(argv[++i]);
        } else if (std::strcmp(argv[i], "--data-dir") == 0 && i + 1 < argc) {
            g_data_dir = argv[++i];
        } else if (std::strcmp(argv[i], "--rounds") == 0 && i + 1 < argc) {
            g_rounds_override = static_cast<std::size_t>(std::atoll(argv[++i]));
        } else if (std::strcmp(argv[i], "--subsample") == 0 && i + 1 < argc) {
            g_subsample_override = argv[++i];
        } else if (std::strcmp(argv[i], "--seeds") == 0 && i + 1 < argc) {
            g_seeds.clear();
            std::string tok;
            for (char ch : std::string(argv[++i]) + ",") {
                if (ch == ',') {
                    if (!tok.empty()) g_seeds.push_back(std::strtoull(tok.c_str(), nullptr, 10));
                    tok.clear();
                } else {
                    tok += ch;
                }
            }
        } else {
            std::fprintf(stderr,
                         "usage: acceptance [--criterion N] [--data-dir DIR] [--seeds a,b,c]\n"
                         "       dev-only scale overrides: [--rounds N] [--subsample F]\n");
            return 2;
        }
    }

    bool any_fail = false, any_skip = false;
    for (const Criterion& c : kCriteria) {
        if (selected != 0 && c.id != selected) continue;
        const double t0 = now_seconds();
        Outcome o;
        try {
            o = c.fn();
        } catch (const std::exception& e) {
            o.ran = true;
            o.passed = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double dt = now_seconds() - t0;
        const char* status = o.skipped ? "SKIP" : (o.passed ? "PASS" : "FAIL");
        std::printf("criterion %2d: %s  %s | %s (%.1fs)\n", c.id, status, c.name,
                    o.detail.c_str(), dt);
        std::fflush(stdout);
        any_fail |= (!o.skipped && !o.passed);
        any_skip |= o.skipped;
    }
    if (any_fail) return 1;
    if (selected != 0 && any_skip) return kSkipExit;
    return 0;
}
