#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

/// Per-client index lists into a parent dataset. The lists are disjoint,
/// cover every sample, and none is empty.
struct PartitionPlan {
    std::vector<std::vector<std::size_t>> client_indices;
    double gamma = 0.0;
    std::uint64_t seed = 0;

    std::size_t n_clients() const { return client_indices.size(); }
};

/// Class-wise Dirichlet split: for each class, shuffle its indices and cut
/// them by proportions drawn from Dir(gamma * 1_N). Resamples the whole plan
/// (bounded retries) if any client ends up empty.
inline PartitionPlan dirichlet_partition(const std::vector<int>& labels, std::size_t n_clients,
                                         double gamma, std::uint64_t seed) {
    if (n_clients < 1) throw ConfigError("dirichlet_partition needs at least one client");
    if (!(gamma > 0.0)) throw ConfigError("dirichlet gamma must be positive");
    if (labels.empty()) throw PartitionError("cannot partition an empty label set");

    int max_label = 0;
    for (int y : labels) max_label = std::max(max_label, y);
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);

    constexpr int kMaxAttempts = 16;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        RngStream rng{derive_key(seed, purpose::kPartition, static_cast<std::uint64_t>(attempt))};
        PartitionPlan plan;
        plan.client_indices.assign(n_clients, {});
        plan.gamma = gamma;
        plan.seed = seed;
        for (const auto& cls : by_class) {
            if (cls.empty()) continue;
            std::vector<std::size_t> order = cls;
            rng.shuffle(order);
            const std::vector<double> props = dirichlet_sample(rng, n_clients, gamma);
            const double m = static_cast<double>(order.size());
            double cum = 0.0;
            std::size_t start = 0;
            for (std::size_t k = 0; k < n_clients; ++k) {
                cum += props[k];
                std::size_t end = (k + 1 == n_clients)
                                      ? order.size()
                                      : std::min<std::size_t>(
                                            order.size(),
                                            static_cast<std::size_t>(std::llround(cum * m)));
                end = std::max(end, start);
                plan.client_indices[k].insert(plan.client_indices[k].end(),
                                              order.begin() + static_cast<std::ptrdiff_t>(start),
                                              order.begin() + static_cast<std::ptrdiff_t>(end));
                start = end;
            }
        }
        const bool any_empty = std::any_of(plan.client_indices.begin(), plan.client_indices.end(),
                                           [](const auto& v) { return v.empty(); });
        if (!any_empty) return plan;
    }
    throw PartitionError("dirichlet_partition: a client stayed empty after retries");
}

}  // namespace fedsim
