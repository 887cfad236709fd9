#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fedsim/attacks.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/network.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace detail {

inline int argmax_lowest(const double* row, std::size_t c) {
    int best = 0;
    for (std::size_t j = 1; j < c; ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
    return best;
}

inline std::pair<Tensor, std::vector<int>> eval_batch(const Dataset& ds, std::size_t begin,
                                                      std::size_t end) {
    const std::size_t h = ds.height(), w = ds.width();
    Tensor x = Tensor::zeros({end - begin, h, w});
    std::copy_n(ds.images.data.begin() + static_cast<std::ptrdiff_t>(begin * h * w),
                (end - begin) * h * w, x.data.begin());
    std::vector<int> y(ds.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                       ds.labels.begin() + static_cast<std::ptrdiff_t>(end));
    return {std::move(x), std::move(y)};
}

// Batches run on worker threads; per-batch counts fold in batch order so the
// result is independent of scheduling and of the batch size itself.
template <typename BatchFn>
std::size_t count_over_batches(const Dataset& ds, std::size_t batch_size, int workers,
                               BatchFn&& fn) {
    const std::size_t n = ds.size();
    const std::size_t n_batches = (n + batch_size - 1) / batch_size;
    std::vector<std::size_t> counts(n_batches, 0);
    const std::size_t n_workers = std::max<std::size_t>(
        1, std::min<std::size_t>(n_batches, workers > 0 ? static_cast<std::size_t>(workers)
                                                        : std::thread::hardware_concurrency()));
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        for (;;) {
            const std::size_t b = next.fetch_add(1);
            if (b >= n_batches) return;
            const std::size_t begin = b * batch_size;
            const std::size_t end = std::min(n, begin + batch_size);
            counts[b] = fn(b, begin, end);
        }
    };
    if (n_workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    std::size_t total = 0;
    for (std::size_t c : counts) total += c;
    return total;
}

// Attack a batch whose first sample sits at global index `begin`. Random
// starts are keyed per sample, so the result is independent of how the
// dataset was chunked into batches.
inline Tensor attacked_batch(const Network& net, const Tensor& x, const std::vector<int>& y,
                             const std::string& attack_name, const AttackConfig& cfg,
                             std::uint64_t rng_key, std::size_t begin) {
    if (attack_name == "fgsm") return fgsm(net, x, y, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
    if (attack_name == "bim") return bim(net, x, y, cfg);
    Tensor x_init = x;
    if (cfg.random_start) {
        const std::size_t pixels = batch_cols(x);
        for (std::size_t r = 0; r < y.size(); ++r) {
            RngStream rng{derive_key(rng_key, purpose::kEval, begin + r)};
            double* row = x_init.data.data() + r * pixels;
            for (std::size_t j = 0; j < pixels; ++j)
                row[j] += rng.uniform(-cfg.epsilon, cfg.epsilon);
        }
    }
    return pgd_iterate(net, x, std::move(x_init), y, cfg);
}

}  // namespace detail

/// Fraction of samples whose argmax logit (ties broken toward the lowest
/// class index) matches the label.
inline double clean_accuracy(const Network& net, const Dataset& ds, std::size_t batch_size = 256,
                             int workers = 1) {
    if (ds.size() == 0) throw MetricError("cannot evaluate an empty dataset");
    const std::size_t c = net.output_dim();
    const std::size_t correct = detail::count_over_batches(
        ds, batch_size, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
            auto [x, y] = detail::eval_batch(ds, begin, end);
            auto [logits, trace] = forward(net, x);
            (void)trace;
            std::size_t ok = 0;
            for (std::size_t r = 0; r < y.size(); ++r)
                if (detail::argmax_lowest(logits.data.data() + r * c, c) == y[r]) ++ok;
            return ok;
        });
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Accuracy under a white-box attack on the same network. attack_name is one
/// of fgsm / bim / pgd; cfg.steps applies to the iterative attacks.
inline double robust_accuracy(const Network& net, const Dataset& ds,
                              const std::string& attack_name, const AttackConfig& cfg,
                              std::uint64_t rng_key = 0, std::size_t batch_size = 256,
                              int workers = 1) {
    if (ds.size() == 0) throw MetricError("cannot evaluate an empty dataset");
    if (attack_name != "fgsm" && attack_name != "bim" && attack_name != "pgd")
        throw ConfigError("unknown attack '" + attack_name + "' (want fgsm, bim, or pgd)");
    const std::size_t c = net.output_dim();
    const std::size_t correct = detail::count_over_batches(
        ds, batch_size, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
            (void)b;
            auto [x, y] = detail::eval_batch(ds, begin, end);
            const Tensor x_adv =
                detail::attacked_batch(net, x, y, attack_name, cfg, rng_key, begin);
            auto [logits, trace] = forward(net, x_adv);
            (void)trace;
            std::size_t ok = 0;
            for (std::size_t r = 0; r < y.size(); ++r)
                if (detail::argmax_lowest(logits.data.data() + r * c, c) == y[r]) ++ok;
            return ok;
        });
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// V-measure: harmonic mean of homogeneity 1 - H(class|cluster)/H(class) and
/// completeness 1 - H(cluster|class)/H(cluster), entropies in nats. A zero
/// unconditional entropy makes its component 1 by convention.
inline double v_score(const std::vector<int>& true_labels,
                      const std::vector<int>& cluster_assignments) {
    if (true_labels.size() != cluster_assignments.size())
        throw MetricError("v_score inputs differ in length");
    if (true_labels.empty()) throw MetricError("v_score needs at least one sample");
    const double n = static_cast<double>(true_labels.size());

    std::map<int, std::size_t> class_count, cluster_count;
    std::map<std::pair<int, int>, std::size_t> joint;
    for (std::size_t i = 0; i < true_labels.size(); ++i) {
        ++class_count[true_labels[i]];
        ++cluster_count[cluster_assignments[i]];
        ++joint[{true_labels[i], cluster_assignments[i]}];
    }
    auto entropy = [n](const std::map<int, std::size_t>& counts) {
        double h = 0.0;
        for (const auto& [k, cnt] : counts) {
            (void)k;
            const double p = static_cast<double>(cnt) / n;
            h -= p * std::log(p);
        }
        return h;
    };
    const double h_class = entropy(class_count);
    const double h_cluster = entropy(cluster_count);

    // H(class|cluster) and H(cluster|class) from the joint counts.
    double h_class_given_cluster = 0.0;
    double h_cluster_given_class = 0.0;
    for (const auto& [pair, cnt] : joint) {
        const double p = static_cast<double>(cnt) / n;
        const double p_cluster =
            static_cast<double>(cluster_count.at(pair.second)) / n;
        const double p_class = static_cast<double>(class_count.at(pair.first)) / n;
        h_class_given_cluster -= p * std::log(p / p_cluster);
        h_cluster_given_class -= p * std::log(p / p_class);
    }

    const double h = h_class > 0.0 ? 1.0 - h_class_given_cluster / h_class : 1.0;
    const double c = h_cluster > 0.0 ? 1.0 - h_cluster_given_class / h_cluster : 1.0;
    if (h + c == 0.0) return 0.0;
    return 2.0 * h * c / (h + c);
}

/// Per-sample extractor embeddings with labels, predictions and a clean/adv
/// tag, as CSV: feature_0..feature_{F-1},label,pred,kind. When an attack
/// config is given, adversarial rows follow the clean ones.
inline void export_embeddings(const Network& net, const Dataset& ds,
                              const std::optional<AttackConfig>& attack_cfg,
                              const std::string& path, std::uint64_t rng_key = 0) {
    if (ds.size() == 0) throw MetricError("cannot export an empty dataset");
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for write");

    const std::size_t f = net.feature_dim();
    const std::size_t c = net.output_dim();
    out << "feature_0";
    for (std::size_t j = 1; j < f; ++j) out << ",feature_" << j;
    out << ",label,pred,kind\n";

    auto write_rows = [&](const Tensor& x, const std::vector<int>& y, const char* kind) {
        const Tensor emb = embed(net, x);
        auto [logits, trace] = forward(net, x);
        (void)trace;
        char buf[64];
        for (std::size_t r = 0; r < y.size(); ++r) {
            for (std::size_t j = 0; j < f; ++j) {
                std::snprintf(buf, sizeof(buf), "%.10g", emb.data[r * f + j]);
                out << buf << ',';
            }
            out << y[r] << ',' << detail::argmax_lowest(logits.data.data() + r * c, c) << ','
                << kind << '\n';
        }
    };

    constexpr std::size_t kBatch = 256;
    for (std::size_t begin = 0; begin < ds.size(); begin += kBatch) {
        const std::size_t end = std::min(ds.size(), begin + kBatch);
        auto [x, y] = detail::eval_batch(ds, begin, end);
        write_rows(x, y, "clean");
    }
    if (attack_cfg) {
        for (std::size_t begin = 0; begin < ds.size(); begin += kBatch) {
            const std::size_t end = std::min(ds.size(), begin + kBatch);
            auto [x, y] = detail::eval_batch(ds, begin, end);
            const Tensor x_adv =
                detail::attacked_batch(net, x, y, "pgd", *attack_cfg, rng_key, begin);
            write_rows(x_adv, y, "adv");
        }
    }
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace fedsim
