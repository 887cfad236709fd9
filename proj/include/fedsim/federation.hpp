#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "fedsim/attacks.hpp"
#include "fedsim/augment.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/network.hpp"
#include "fedsim/partition.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

/// Per-class mean embedding with the number of samples behind it. A class
/// with count 0 is absent and carries no mean (never a zero vector).
struct FeatureBank {
    std::size_t feature_dim = 0;
    std::vector<std::size_t> counts;
    std::vector<std::vector<double>> means;

    std::size_t num_classes() const { return counts.size(); }
    bool present(int c) const {
        return c >= 0 && static_cast<std::size_t>(c) < counts.size() &&
               counts[static_cast<std::size_t>(c)] > 0;
    }
    bool any_present() const {
        return std::any_of(counts.begin(), counts.end(), [](std::size_t n) { return n > 0; });
    }
};

struct ClientState {
    int id = 0;
    Dataset data;
    std::uint64_t rng_key = 0;
};

inline std::vector<ClientState> make_clients(const Dataset& ds, const PartitionPlan& plan,
                                             std::uint64_t base_key) {
    std::vector<ClientState> clients;
    clients.reserve(plan.n_clients());
    for (std::size_t i = 0; i < plan.n_clients(); ++i) {
        ClientState c;
        c.id = static_cast<int>(i);
        c.data = take_indices(ds, plan.client_indices[i]);
        if (c.data.size() == 0) throw PartitionError("client dataset is empty");
        c.rng_key = derive_key(base_key, purpose::kClient, i);
        clients.push_back(std::move(c));
    }
    return clients;
}

/// Trainer selection plus its parameters. lambda weighs the adversarial CE
/// branch against the clean one; asd_weight scales the feature-alignment
/// term; augment toggles the shared per-batch transform.
struct TrainerVariant {
    enum class Kind { kFedAvg, kFedPgd, kMixFat, kFedBat };
    Kind kind = Kind::kFedAvg;
    double adv_fraction = 0.5;  // mixfat
    double lambda = 0.5;        // fedbat
    double asd_weight = 1.0;    // fedbat
    bool augment = true;        // fedbat
    AugmentationSpec augmentation;

    static TrainerVariant fedavg() { return {}; }
    static TrainerVariant fedpgd() {
        TrainerVariant v;
        v.kind = Kind::kFedPgd;
        return v;
    }
    static TrainerVariant mixfat(double fraction) {
        TrainerVariant v;
        v.kind = Kind::kMixFat;
        v.adv_fraction = fraction;
        return v;
    }
    static TrainerVariant fedbat(double lambda, double asd_weight, bool augment,
                                 AugmentationSpec spec = {}) {
        TrainerVariant v;
        v.kind = Kind::kFedBat;
        v.lambda = lambda;
        v.asd_weight = asd_weight;
        v.augment = augment;
        v.augmentation = spec;
        return v;
    }

    const char* name() const {
        switch (kind) {
            case Kind::kFedAvg: return "fedavg";
            case Kind::kFedPgd: return "fedpgd";
            case Kind::kMixFat: return "mixfat";
            case Kind::kFedBat: return "fedbat";
        }
        return "?";
    }

    void validate() const {
        if (adv_fraction < 0.0 || adv_fraction > 1.0)
            throw ConfigError("mixfat adv_fraction must be in [0,1]");
        if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must be in [0,1]");
        if (asd_weight < 0.0) throw ConfigError("asd_weight must be non-negative");
        augmentation.validate();
    }
};

struct Hyperparams {
    double lr = 0.01;
    std::size_t batch_size = 64;
    std::size_t local_epochs = 1;
    std::size_t rounds = 100;
    AttackConfig attack;
    double participation_rate = 1.0;
    int workers = 1;
};

struct ServerState {
    std::size_t round = 0;  // completed rounds
    Network global_net;
    std::optional<FeatureBank> global_bank;
    std::uint64_t base_key = 0;
};

struct ClientReport {
    int id = 0;
    std::size_t n_samples = 0;
    double mean_loss = 0.0;
    bool adversarial = true;
};

struct RoundReport {
    std::size_t round = 0;
    std::vector<ClientReport> clients;

    double mean_loss() const {
        if (clients.empty()) return 0.0;
        double s = 0.0;
        for (const auto& c : clients) s += c.mean_loss;
        return s / static_cast<double>(clients.size());
    }
};

// ---------------------------------------------------------------------------
// Loss heads

/// (1 - lambda) * CE(net(clean)) + lambda * CE(net(adv)). A branch whose
/// weight is exactly zero is skipped entirely, so lambda in {0,1} degenerates
/// bitwise to the single-branch trainers.
inline std::pair<double, GradientBundle> hybrid_at_loss(const Network& net,
                                                        const Tensor& clean_batch,
                                                        const Tensor& adv_batch,
                                                        const std::vector<int>& labels,
                                                        double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must be in [0,1]");
    double loss = 0.0;
    GradientBundle bundle;
    bool have_bundle = false;
    if (lambda < 1.0) {
        auto [logits, trace] = forward(net, clean_batch);
        auto [l, dlogits] = softmax_cross_entropy(logits, labels);
        GradientBundle b = backward(net, trace, dlogits);
        if (lambda == 0.0) {
            loss = l;
            bundle = std::move(b);
        } else {
            loss = (1.0 - lambda) * l;
            b.scale(1.0 - lambda);
            bundle = std::move(b);
        }
        have_bundle = true;
    }
    if (lambda > 0.0) {
        auto [logits, trace] = forward(net, adv_batch);
        auto [l, dlogits] = softmax_cross_entropy(logits, labels);
        GradientBundle b = backward(net, trace, dlogits);
        if (lambda == 1.0) {
            loss = l;
            bundle = std::move(b);
        } else {
            loss += lambda * l;
            bundle.add_scaled(b, lambda);
        }
        have_bundle = true;
    }
    if (!have_bundle) throw ConfigError("hybrid loss needs at least one branch");
    return {loss, std::move(bundle)};
}

/// Aligns adversarial embeddings with per-class global clean means:
/// weight * mean_over_covered_samples ||f_e(x) - bank_mean[label]||^2.
/// Samples whose label is absent from the bank are excluded; if none are
/// covered the result is a zero loss and zero bundle (no supervision).
inline std::pair<double, GradientBundle> asd_loss(const Network& net, const Tensor& adv_aug_batch,
                                                  const std::vector<int>& labels,
                                                  const FeatureBank& global_bank, double weight) {
    if (weight < 0.0) throw ConfigError("asd weight must be non-negative");
    const std::size_t b = batch_rows(adv_aug_batch);
    if (labels.size() != b) throw ShapeError("label count does not match batch size");

    std::vector<std::size_t> covered;
    for (std::size_t r = 0; r < b; ++r)
        if (global_bank.present(labels[r])) covered.push_back(r);
    if (covered.empty() || weight == 0.0)
        return {0.0, zero_bundle(net, adv_aug_batch.shape)};

    auto [logits, trace] = forward(net, adv_aug_batch);
    (void)logits;
    const std::size_t f = net.feature_dim();
    const Tensor& emb = net.layers.size() >= 2 ? trace.post[net.layers.size() - 2] : trace.input;

    Tensor sub_features = Tensor::zeros({covered.size(), f});
    Tensor sub_targets = Tensor::zeros({covered.size(), f});
    for (std::size_t i = 0; i < covered.size(); ++i) {
        const std::size_t r = covered[i];
        std::copy_n(emb.data.begin() + static_cast<std::ptrdiff_t>(r * f), f,
                    sub_features.data.begin() + static_cast<std::ptrdiff_t>(i * f));
        const auto& mean = global_bank.means[static_cast<std::size_t>(labels[r])];
        std::copy_n(mean.begin(), f,
                    sub_targets.data.begin() + static_cast<std::ptrdiff_t>(i * f));
    }
    auto [mse, dsub] = mse_feature_loss(sub_features, sub_targets);

    Tensor dfeatures = Tensor::zeros({b, f});
    for (std::size_t i = 0; i < covered.size(); ++i) {
        const std::size_t r = covered[i];
        for (std::size_t j = 0; j < f; ++j)
            dfeatures.data[r * f + j] = weight * dsub.data[i * f + j];
    }
    GradientBundle bundle = backward(net, trace, dfeatures, /*from_embedding=*/true);
    return {weight * mse, std::move(bundle)};
}

// ---------------------------------------------------------------------------
// Feature banks

namespace detail {

struct BankAccumulator {
    std::size_t feature_dim = 0;
    std::vector<std::size_t> counts;
    std::vector<std::vector<double>> sums;

    BankAccumulator(std::size_t num_classes, std::size_t fdim)
        : feature_dim(fdim), counts(num_classes, 0), sums(num_classes) {}

    void add_embeddings(const Tensor& emb, const std::vector<int>& labels) {
        for (std::size_t r = 0; r < labels.size(); ++r) {
            const auto c = static_cast<std::size_t>(labels[r]);
            if (sums[c].empty()) sums[c].assign(feature_dim, 0.0);
            const double* row = emb.data.data() + r * feature_dim;
            for (std::size_t j = 0; j < feature_dim; ++j) sums[c][j] += row[j];
            ++counts[c];
        }
    }

    FeatureBank finalize() const {
        FeatureBank bank;
        bank.feature_dim = feature_dim;
        bank.counts = counts;
        bank.means.resize(counts.size());
        for (std::size_t c = 0; c < counts.size(); ++c) {
            if (counts[c] == 0) continue;
            bank.means[c].resize(feature_dim);
            const double inv = 1.0 / static_cast<double>(counts[c]);
            for (std::size_t j = 0; j < feature_dim; ++j) bank.means[c][j] = sums[c][j] * inv;
        }
        return bank;
    }
};

inline std::pair<Tensor, std::vector<int>> gather_batch(const Dataset& ds,
                                                        const std::vector<std::size_t>& order,
                                                        std::size_t begin, std::size_t end) {
    const std::size_t h = ds.height(), w = ds.width();
    Tensor x = Tensor::zeros({end - begin, h, w});
    std::vector<int> y(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        std::copy_n(ds.images.data.begin() + static_cast<std::ptrdiff_t>(order[i] * h * w),
                    h * w, x.data.begin() + static_cast<std::ptrdiff_t>((i - begin) * h * w));
        y[i - begin] = ds.labels[order[i]];
    }
    return {std::move(x), std::move(y)};
}

}  // namespace detail

/// Per-class running means of f_e over one epoch of augmented clean batches,
/// with a fixed network. Classes the client never sees stay absent.
inline FeatureBank compute_local_feature_bank(const Network& net, const ClientState& client,
                                              const AugmentationSpec& spec, std::size_t batch_size,
                                              RngStream& augment_rng) {
    detail::BankAccumulator acc(static_cast<std::size_t>(client.data.num_classes),
                                net.feature_dim());
    std::vector<std::size_t> order(client.data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
        const std::size_t end = std::min(order.size(), begin + batch_size);
        auto [x, y] = detail::gather_batch(client.data, order, begin, end);
        Tensor xh = augment_batch(x, spec, augment_rng);
        acc.add_embeddings(embed(net, xh), y);
    }
    return acc.finalize();
}

/// Size-weighted parameter mean: theta = sum_i (n_i / sum_j n_j) theta_i.
inline Network aggregate_models(const std::vector<std::pair<Network, std::size_t>>& updates) {
    if (updates.empty()) throw AggregationError("no model updates to aggregate");
    const Network& first = updates.front().first;
    std::size_t total = 0;
    for (const auto& [net, n] : updates) {
        if (!net.same_architecture(first))
            throw AggregationError("model architectures differ across updates");
        total += n;
    }
    if (total == 0) throw AggregationError("aggregate weight is zero");

    Network out = first;
    for (auto& layer : out.layers) {
        std::fill(layer.weights.data.begin(), layer.weights.data.end(), 0.0);
        std::fill(layer.bias.data.begin(), layer.bias.data.end(), 0.0);
    }
    for (const auto& [net, n] : updates) {
        const double w = static_cast<double>(n) / static_cast<double>(total);
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
            const auto& src = net.layers[l];
            auto& dst = out.layers[l];
            for (std::size_t i = 0; i < dst.weights.data.size(); ++i)
                dst.weights.data[i] += w * src.weights.data[i];
            for (std::size_t i = 0; i < dst.bias.data.size(); ++i)
                dst.bias.data[i] += w * src.bias.data[i];
        }
    }
    return out;
}

/// Per-class unweighted mean over the banks where the class is present.
/// Classes present nowhere stay absent; counts accumulate for bookkeeping.
inline FeatureBank aggregate_feature_banks(const std::vector<FeatureBank>& banks) {
    if (banks.empty()) throw AggregationError("no feature banks to aggregate");
    std::size_t feature_dim = 0;
    std::size_t num_classes = 0;
    for (const auto& b : banks) {
        num_classes = std::max(num_classes, b.num_classes());
        if (b.any_present()) {
            if (feature_dim == 0) feature_dim = b.feature_dim;
            else if (feature_dim != b.feature_dim)
                throw AggregationError("feature bank dims differ");
        }
    }
    FeatureBank out;
    out.feature_dim = feature_dim;
    out.counts.assign(num_classes, 0);
    out.means.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::size_t possessors = 0;
        for (const auto& b : banks) {
            if (c < b.num_classes() && b.counts[c] > 0) {
                if (out.means[c].empty()) out.means[c].assign(feature_dim, 0.0);
                for (std::size_t j = 0; j < feature_dim; ++j) out.means[c][j] += b.means[c][j];
                out.counts[c] += b.counts[c];
                ++possessors;
            }
        }
        if (possessors > 0) {
            const double inv = 1.0 / static_cast<double>(possessors);
            for (std::size_t j = 0; j < feature_dim; ++j) out.means[c][j] *= inv;
        }
    }
    return out;
}

/// Uniform draw without replacement of round(rate * n) client ids,
/// deterministic per (key, round). Returned ids are ascending.
inline std::vector<int> sample_clients(std::size_t n_clients, double participation_rate,
                                       std::size_t round, std::uint64_t rng_key) {
    if (!(participation_rate > 0.0 && participation_rate <= 1.0))
        throw ConfigError("participation_rate must be in (0,1]");
    const double kf = participation_rate * static_cast<double>(n_clients);
    if (kf < 1.0) throw ConfigError("participation_rate selects no client");
    const std::size_t k = std::min<std::size_t>(
        n_clients, static_cast<std::size_t>(std::llround(kf)));

    std::vector<int> ids(n_clients);
    std::iota(ids.begin(), ids.end(), 0);
    RngStream rng{derive_key(rng_key, purpose::kClientSample, round)};
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(n_clients - i));
        std::swap(ids[i], ids[j]);
    }
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
    return ids;
}

// ---------------------------------------------------------------------------
// Local updates

namespace detail {

struct LocalPlan {
    double lambda = 0.0;          // weight of the adversarial CE branch
    bool attack = false;          // generate AEs at all
    double asd_weight = 0.0;      // 0 disables the alignment term
    bool augment = false;
    bool collect_bank = false;
    const FeatureBank* bank = nullptr;  // null before the first aggregation
    const AugmentationSpec* aug_spec = nullptr;
};

struct LocalResult {
    Network net;
    FeatureBank bank;
    std::size_t n_samples = 0;
    double mean_loss = 0.0;
};

// The one local-epoch engine every trainer variant parameterizes. Feature
// banks accumulate from the evolving network before each step, AEs are
// regenerated against the current parameters every batch, and the clean and
// adversarial inputs share one drawn augmentation transform.
inline LocalResult run_local_update(const Network& start, const ClientState& client,
                                    const Hyperparams& hp, const LocalPlan& plan,
                                    std::size_t round) {
    Network net = start;
    BankAccumulator bank_acc(static_cast<std::size_t>(client.data.num_classes),
                             net.feature_dim());
    const bool asd_active =
        plan.asd_weight > 0.0 && plan.bank != nullptr && plan.bank->any_present();
    const bool need_adv = plan.attack && (plan.lambda > 0.0 || asd_active);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    const std::size_t n = client.data.size();
    for (std::size_t epoch = 0; epoch < hp.local_epochs; ++epoch) {
        RngStream shuffle_rng{derive_key(client.rng_key, round, epoch, purpose::kShuffle)};
        RngStream augment_rng{derive_key(client.rng_key, round, epoch, purpose::kAugment)};
        RngStream attack_rng{derive_key(client.rng_key, round, epoch, purpose::kAttack)};
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        shuffle_rng.shuffle(order);

        for (std::size_t begin = 0; begin < n; begin += hp.batch_size) {
            const std::size_t end = std::min(n, begin + hp.batch_size);
            auto [x, y] = gather_batch(client.data, order, begin, end);

            Tensor x_adv;
            if (need_adv) x_adv = pgd(net, x, y, hp.attack, attack_rng);

            Tensor xh = x;
            Tensor xh_adv = x_adv;
            if (plan.augment && plan.aug_spec) {
                const BatchTransform t = draw_transform(*plan.aug_spec, augment_rng);
                xh = apply_transform(x, t);
                if (need_adv) xh_adv = apply_transform(x_adv, t);
            }

            if (plan.collect_bank) bank_acc.add_embeddings(embed(net, xh), y);

            auto [hloss, bundle] = hybrid_at_loss(net, xh, plan.lambda > 0.0 ? xh_adv : xh, y,
                                                  plan.lambda);
            double batch_loss = hloss;
            if (asd_active) {
                auto [aloss, abundle] = asd_loss(net, xh_adv, y, *plan.bank, plan.asd_weight);
                batch_loss += aloss;
                bundle.add(abundle);
            }
            net = sgd_step(std::move(net), bundle, hp.lr);
            loss_sum += batch_loss;
            ++n_batches;
        }
    }
    LocalResult res;
    res.net = std::move(net);
    if (plan.collect_bank) res.bank = bank_acc.finalize();
    res.n_samples = n;
    res.mean_loss = n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0;
    return res;
}

inline LocalPlan plan_fedavg() { return {}; }

inline LocalPlan plan_fedpgd() {
    LocalPlan p;
    p.lambda = 1.0;
    p.attack = true;
    return p;
}

inline LocalPlan plan_fedbat(const TrainerVariant& v, const FeatureBank* bank) {
    LocalPlan p;
    p.lambda = v.lambda;
    p.attack = true;
    p.asd_weight = v.asd_weight;
    p.augment = v.augment;
    p.collect_bank = true;
    p.bank = bank;
    p.aug_spec = &v.augmentation;
    return p;
}

}  // namespace detail

/// E epochs of mini-batch SGD on clean cross-entropy.
inline std::pair<Network, std::size_t> local_update_fedavg(const ClientState& client,
                                                           const Network& net,
                                                           const Hyperparams& hp,
                                                           std::size_t round = 0) {
    auto res = detail::run_local_update(net, client, hp, detail::plan_fedavg(), round);
    return {std::move(res.net), res.n_samples};
}

/// Same loop with every batch replaced by its PGD adversarial counterpart,
/// regenerated against the current parameters.
inline std::pair<Network, std::size_t> local_update_fedpgd(const ClientState& client,
                                                           const Network& net,
                                                           const Hyperparams& hp,
                                                           std::size_t round = 0) {
    auto res = detail::run_local_update(net, client, hp, detail::plan_fedpgd(), round);
    return {std::move(res.net), res.n_samples};
}

/// Full per-batch objective: hybrid CE over the augmented clean/adversarial
/// pair plus the feature-alignment term, with the local bank collected along
/// the way. global_bank may be null in the first round.
inline std::tuple<Network, FeatureBank, std::size_t> local_update_fedbat(
    const ClientState& client, const Network& net, const FeatureBank* global_bank,
    const Hyperparams& hp, const TrainerVariant& variant, std::size_t round = 0) {
    if (variant.kind != TrainerVariant::Kind::kFedBat)
        throw ConfigError("local_update_fedbat requires the fedbat variant");
    auto res = detail::run_local_update(net, client, hp,
                                        detail::plan_fedbat(variant, global_bank), round);
    return {std::move(res.net), std::move(res.bank), res.n_samples};
}

/// Marks ceil(adv_fraction * K) of the K participating clients for
/// adversarial updates this round; the rest run clean updates.
inline std::vector<bool> mixfat_adversarial_mask(std::size_t n_selected, double adv_fraction,
                                                 std::uint64_t key, std::size_t round) {
    if (adv_fraction < 0.0 || adv_fraction > 1.0)
        throw ConfigError("mixfat adv_fraction must be in [0,1]");
    const std::size_t m = static_cast<std::size_t>(
        std::ceil(adv_fraction * static_cast<double>(n_selected)));
    std::vector<std::size_t> slots(n_selected);
    std::iota(slots.begin(), slots.end(), 0);
    RngStream rng{derive_key(key, purpose::kMixfatAssign, round)};
    rng.shuffle(slots);
    std::vector<bool> mask(n_selected, false);
    for (std::size_t i = 0; i < m && i < n_selected; ++i) mask[slots[i]] = true;
    return mask;
}

/// One mixed round over an explicit client list: a deterministic per-round
/// draw decides which clients train adversarially.
inline std::vector<std::pair<Network, std::size_t>> local_update_mixfat(
    const std::vector<const ClientState*>& clients, const Network& net, const Hyperparams& hp,
    double adv_fraction, std::uint64_t key, std::size_t round = 0) {
    const std::vector<bool> adv = mixfat_adversarial_mask(clients.size(), adv_fraction, key, round);
    std::vector<std::pair<Network, std::size_t>> out;
    out.reserve(clients.size());
    for (std::size_t i = 0; i < clients.size(); ++i) {
        out.push_back(adv[i] ? local_update_fedpgd(*clients[i], net, hp, round)
                             : local_update_fedavg(*clients[i], net, hp, round));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Round engine

/// One communication round: sample clients, fan the current model out, run
/// the local updates (on hp.workers threads), and fold the results back in
/// ascending client-id order. Any client failure aborts the round; there is
/// no partial aggregation.
inline std::pair<ServerState, RoundReport> run_round(ServerState server,
                                                     const std::vector<ClientState>& clients,
                                                     const TrainerVariant& variant,
                                                     const Hyperparams& hp) {
    variant.validate();
    const std::size_t round = server.round;
    const std::vector<int> selected =
        sample_clients(clients.size(), hp.participation_rate, round, server.base_key);

    std::vector<detail::LocalPlan> plans(selected.size());
    std::vector<bool> adv_mask;
    if (variant.kind == TrainerVariant::Kind::kMixFat)
        adv_mask = mixfat_adversarial_mask(selected.size(), variant.adv_fraction,
                                           server.base_key, round);
    const FeatureBank* bank = server.global_bank ? &*server.global_bank : nullptr;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        switch (variant.kind) {
            case TrainerVariant::Kind::kFedAvg: plans[i] = detail::plan_fedavg(); break;
            case TrainerVariant::Kind::kFedPgd: plans[i] = detail::plan_fedpgd(); break;
            case TrainerVariant::Kind::kMixFat:
                plans[i] = adv_mask[i] ? detail::plan_fedpgd() : detail::plan_fedavg();
                break;
            case TrainerVariant::Kind::kFedBat:
                plans[i] = detail::plan_fedbat(variant, bank);
                break;
        }
    }

    std::vector<detail::LocalResult> results(selected.size());
    std::vector<std::exception_ptr> failures(selected.size());
    const std::size_t n_workers = std::max<std::size_t>(
        1, std::min<std::size_t>(selected.size(),
                                 hp.workers > 0 ? static_cast<std::size_t>(hp.workers)
                                                : std::thread::hardware_concurrency()));
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= selected.size()) return;
            try {
                results[i] = detail::run_local_update(
                    server.global_net, clients[static_cast<std::size_t>(selected[i])], hp,
                    plans[i], round);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    if (n_workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    for (const auto& f : failures)
        if (f) std::rethrow_exception(f);

    std::vector<std::pair<Network, std::size_t>> updates;
    updates.reserve(results.size());
    RoundReport report;
    report.round = round;
    for (std::size_t i = 0; i < results.size(); ++i) {
        updates.emplace_back(std::move(results[i].net), results[i].n_samples);
        ClientReport cr;
        cr.id = selected[i];
        cr.n_samples = results[i].n_samples;
        cr.mean_loss = results[i].mean_loss;
        cr.adversarial = plans[i].attack;
        report.clients.push_back(cr);
    }
    server.global_net = aggregate_models(updates);
    if (variant.kind == TrainerVariant::Kind::kFedBat) {
        std::vector<FeatureBank> banks;
        banks.reserve(results.size());
        for (auto& r : results) banks.push_back(std::move(r.bank));
        server.global_bank = aggregate_feature_banks(banks);
    }
    server.round = round + 1;
    return {std::move(server), std::move(report)};
}

}  // namespace fedsim
