#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "focus/dataset.hpp"
#include "focus/error.hpp"
#include "focus/rng.hpp"

namespace focus {

/// Isotropic Gaussian clusters (unit covariance), `samples_per_class` rows per
/// class. Class means sit on +/- coordinate axes at radius separation/sqrt(2)
/// under a seeded random rotation, so every pair of means is at least
/// `separation` apart. Supports up to 2 * dim classes.
inline Dataset synth_blobs(std::size_t num_classes, std::size_t samples_per_class, std::size_t dim,
                           double separation, std::uint64_t seed) {
  if (num_classes < 2) throw InvalidConfig("synth_blobs: need at least 2 classes");
  if (samples_per_class < 1 || dim < 1) throw InvalidConfig("synth_blobs: counts must be positive");
  if (!(separation > 0.0)) throw InvalidConfig("synth_blobs: separation must be positive");
  if (num_classes > 2 * dim)
    throw InvalidConfig("synth_blobs: dim " + std::to_string(dim) + " too small to place " +
                        std::to_string(num_classes) + " means at the requested separation");

  Rng rng(seed);
  // Random orthonormal basis by Gram-Schmidt on Gaussian vectors.
  std::vector<std::vector<double>> basis;
  while (basis.size() < dim) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    for (const auto& b : basis) {
      const double dot = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * b[i];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-8) continue;
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }

  const double radius = separation / std::sqrt(2.0);
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim));
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto& axis = basis[c % dim];
    const double sign = c < dim ? 1.0 : -1.0;
    for (std::size_t i = 0; i < dim; ++i) means[c][i] = sign * radius * axis[i];
  }

  std::vector<double> features;
  std::vector<std::uint32_t> labels;
  features.reserve(num_classes * samples_per_class * dim);
  labels.reserve(num_classes * samples_per_class);
  for (std::size_t s = 0; s < samples_per_class; ++s) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      for (std::size_t i = 0; i < dim; ++i) features.push_back(means[c][i] + rng.normal());
      labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return Dataset(dim, num_classes, std::move(features), std::move(labels));
}

struct PartitionPlan {
  std::size_t num_clients = 4;
  double benchmark_fraction = 0.2;
  double test_fraction = 0.0;  ///< 0 means no held-out test shard
  std::uint64_t seed = 0;
  std::optional<std::vector<double>> client_proportions;

  void validate() const {
    if (num_clients < 1) throw InvalidConfig("partition: num_clients must be >= 1");
    if (!(benchmark_fraction > 0.0 && benchmark_fraction < 1.0))
      throw InvalidConfig("partition: benchmark_fraction must be in (0,1)");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
      throw InvalidConfig("partition: test_fraction must be in [0,1)");
    if (!(benchmark_fraction + test_fraction < 1.0))
      throw InvalidConfig("partition: benchmark_fraction + test_fraction must be < 1");
    if (client_proportions) {
      if (client_proportions->size() != num_clients)
        throw InvalidConfig("partition: client_proportions must have one entry per client");
      double total = 0.0;
      for (double p : *client_proportions) {
        if (!(p > 0.0)) throw InvalidConfig("partition: client proportions must be positive");
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-9) throw InvalidConfig("partition: client proportions must sum to 1");
    }
  }
};

struct Partition {
  std::vector<Dataset> clients;
  Dataset benchmark;
  Dataset test;
};

/// Shuffles the rows once and slices them into benchmark, test and client
/// shards. Client sizes follow the proportions by largest remainder.
inline Partition partition(const Dataset& d, const PartitionPlan& plan) {
  plan.validate();
  const std::size_t n = d.size();
  const auto n_bench = static_cast<std::size_t>(std::llround(static_cast<double>(n) * plan.benchmark_fraction));
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * plan.test_fraction));
  if (n_bench == 0) throw InvalidConfig("partition: benchmark shard would be empty");
  if (plan.test_fraction > 0.0 && n_test == 0) throw InvalidConfig("partition: test shard would be empty");
  if (n_bench + n_test >= n) throw InvalidConfig("partition: no rows left for clients");
  const std::size_t rest = n - n_bench - n_test;

  std::vector<double> props = plan.client_proportions.value_or(
      std::vector<double>(plan.num_clients, 1.0 / static_cast<double>(plan.num_clients)));
  std::vector<std::size_t> sizes(plan.num_clients);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < plan.num_clients; ++k) {
    const double exact = props[k] * static_cast<double>(rest);
    sizes[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += sizes[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < rest; ++i, ++assigned) ++sizes[remainders[i % remainders.size()].second];
  for (std::size_t k = 0; k < plan.num_clients; ++k)
    if (sizes[k] == 0) throw InvalidConfig("partition: client shard " + std::to_string(k) + " would be empty");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(plan.seed);
  rng.shuffle(std::span<std::size_t>(order));

  std::span<const std::size_t> all(order);
  Partition out;
  out.benchmark = d.subset(all.subspan(0, n_bench));
  out.test = d.subset(all.subspan(n_bench, n_test));
  std::size_t offset = n_bench + n_test;
  for (auto size : sizes) {
    out.clients.push_back(d.subset(all.subspan(offset, size)));
    offset += size;
  }
  return out;
}

enum class NoiseKind { randomize, pairwise_flip };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::randomize;
  double fraction = 1.0;
  std::vector<std::size_t> target_clients;
  std::uint64_t seed = 0;
  std::optional<std::vector<std::uint32_t>> flip_map;  ///< class -> class; pairwise_flip only

  void validate(std::size_t num_classes, std::optional<std::size_t> num_clients = std::nullopt) const {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidConfig("noise: fraction must be in [0,1]");
    if (num_clients)
      for (auto k : target_clients)
        if (k >= *num_clients) throw InvalidConfig("noise: target client " + std::to_string(k) + " out of range");
    if (flip_map) {
      if (kind != NoiseKind::pairwise_flip) throw InvalidConfig("noise: flip_map only applies to pairwise_flip");
      if (flip_map->size() != num_classes) throw InvalidConfig("noise: flip_map must cover every class");
      std::vector<bool> seen(num_classes, false);
      for (auto c : *flip_map) {
        if (c >= num_classes || seen[c]) throw InvalidConfig("noise: flip_map must be a permutation of the classes");
        seen[c] = true;
      }
    }
  }

  /// The explicit map, or the cyclic shift c -> c+1 mod C.
  std::vector<std::uint32_t> effective_flip_map(std::size_t num_classes) const {
    if (flip_map) return *flip_map;
    std::vector<std::uint32_t> m(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) m[c] = static_cast<std::uint32_t>((c + 1) % num_classes);
    return m;
  }
};

inline const char* to_string(NoiseKind k) { return k == NoiseKind::randomize ? "randomize" : "pairwise_flip"; }

/// Corrupts round(fraction * N) uniformly chosen rows of one client's data.
/// `target_clients` is ignored here; see apply_noise.
inline Dataset inject_noise(const Dataset& d, const NoiseSpec& spec) {
  spec.validate(d.num_classes());
  Dataset out = d;
  const auto count = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(d.size())));
  if (count == 0) return out;

  Rng rng(spec.seed);
  std::vector<std::size_t> rows(d.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(rows));

  const auto flip = spec.effective_flip_map(d.num_classes());
  for (std::size_t i = 0; i < count; ++i) {
    const auto r = rows[i];
    if (spec.kind == NoiseKind::randomize)
      out.set_label(r, static_cast<std::uint32_t>(rng.below(d.num_classes())));
    else
      out.set_label(r, flip[d.label(r)]);
  }
  return out;
}

/// Applies every spec to its target clients; each client gets its own stream
/// derived from (spec seed, client index).
inline std::vector<Dataset> apply_noise(std::vector<Dataset> clients, const std::vector<NoiseSpec>& specs) {
  for (const auto& spec : specs) {
    if (clients.empty()) break;
    spec.validate(clients.front().num_classes(), clients.size());
    for (auto k : spec.target_clients) {
      NoiseSpec one = spec;
      one.seed = derive_seed(spec.seed, k);
      clients[k] = inject_noise(clients[k], one);
    }
  }
  return clients;
}

}  // namespace focus
