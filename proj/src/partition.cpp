#include "fedlora/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "fedlora/error.hpp"
#include "fedlora/rng.hpp"

namespace fedlora {
namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& data) {
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  return by_class;
}

/// Integer counts summing to `total`, proportional to `weights`; leftover
/// units go to the largest fractional parts, lowest index first on ties.
std::vector<std::size_t> largest_remainder(const std::vector<double>& weights, std::size_t total) {
  const double weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size(), 0);
  std::vector<double> fractions(weights.size(), 0.0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = weights[i] / weight_sum * static_cast<double>(total);
    counts[i] = std::min(total, static_cast<std::size_t>(std::floor(exact)));
    fractions[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fractions[a] > fractions[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size(), ++assigned) ++counts[order[i]];
  while (assigned > total) {
    // Floating drift can overshoot by a unit; take it back from the largest.
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  return counts;
}

void sort_clients(Partition& p) {
  for (auto& c : p.clients) std::sort(c.begin(), c.end());
}

void require_clients(std::size_t n) {
  if (n < 1) throw Error(ErrorCode::kParameter, "number of clients must be >= 1");
}

}  // namespace

std::size_t Partition::total_size() const {
  std::size_t total = 0;
  for (const auto& c : clients) total += c.size();
  return total;
}

std::string_view to_string(PartitionScheme scheme) {
  switch (scheme) {
    case PartitionScheme::kIid: return "iid";
    case PartitionScheme::kDirichlet: return "dirichlet";
    case PartitionScheme::kPathological: return "pathological";
  }
  return "unknown";
}

PartitionScheme parse_partition_scheme(std::string_view text) {
  for (auto s : {PartitionScheme::kIid, PartitionScheme::kDirichlet, PartitionScheme::kPathological})
    if (text == to_string(s)) return s;
  throw Error(ErrorCode::kParse, "unknown partition scheme '" + std::string(text) +
                                     "' (expected iid, dirichlet or pathological)");
}

TrainTestSplit train_test_split(const Dataset& data, double test_fraction, std::uint64_t seed, bool stratify) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::kParameter, "test fraction must lie in (0, 1)");
  }
  const std::size_t n = data.size();
  const auto test_total = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  Rng rng(derive_seed(seed, {0x5b11}));
  TrainTestSplit split;

  auto by_class = indices_by_class(data);
  const bool can_stratify =
      stratify && std::all_of(by_class.begin(), by_class.end(),
                              [](const auto& c) { return c.empty() || c.size() >= 2; });
  if (!can_stratify) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    rng.shuffle(all);
    split.test.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(test_total));
    split.train.assign(all.begin() + static_cast<std::ptrdiff_t>(test_total), all.end());
    split.stratified = false;
  } else {
    std::vector<double> weights;
    for (const auto& c : by_class) weights.push_back(static_cast<double>(c.size()));
    const auto per_class = largest_remainder(weights, test_total);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      auto& idx = by_class[c];
      rng.shuffle(idx);
      split.test.insert(split.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(per_class[c]));
      split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(per_class[c]), idx.end());
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

Partition split_iid(const Dataset& data, std::size_t num_clients, std::uint64_t seed) {
  require_clients(num_clients);
  if (data.size() < num_clients) {
    throw Error(ErrorCode::kInsufficientData, "IID split: " + std::to_string(data.size()) +
                                                  " samples for " + std::to_string(num_clients) + " clients");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {0x11d}));
  rng.shuffle(order);
  Partition p;
  p.clients.resize(num_clients);
  for (std::size_t i = 0; i < order.size(); ++i) p.clients[i % num_clients].push_back(order[i]);
  sort_clients(p);
  return p;
}

Partition split_iid_fewshot(const Dataset& data, std::size_t num_clients, std::size_t shots, std::uint64_t seed) {
  require_clients(num_clients);
  if (shots < 1) throw Error(ErrorCode::kParameter, "shots must be >= 1");
  auto by_class = indices_by_class(data);
  Rng rng(derive_seed(seed, {0xfe5}));
  Partition p;
  p.clients.resize(num_clients);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < shots * num_clients) {
      throw Error(ErrorCode::kInsufficientShots,
                  "class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                      " training samples, needs " + std::to_string(shots * num_clients) + " for " +
                      std::to_string(shots) + "-shot IID over " + std::to_string(num_clients) + " clients");
    }
    rng.shuffle(idx);
    for (std::size_t i = 0; i < num_clients; ++i)
      for (std::size_t s = 0; s < shots; ++s) p.clients[i].push_back(idx[i * shots + s]);
  }
  sort_clients(p);
  return p;
}

Partition split_dirichlet(const Dataset& data, std::size_t num_clients, double beta, std::uint64_t seed) {
  require_clients(num_clients);
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw Error(ErrorCode::kRange, "Dirichlet beta must be > 0");
  }
  const auto by_class = indices_by_class(data);
  Rng rng(derive_seed(seed, {0xd1c}));
  for (int attempt = 0; attempt < kDirichletMaxAttempts; ++attempt) {
    Partition p;
    p.clients.resize(num_clients);
    bool degenerate = false;
    for (const auto& members : by_class) {
      if (members.empty()) continue;
      std::vector<double> proportions(num_clients);
      for (double& v : proportions) v = rng.gamma(beta);
      if (std::accumulate(proportions.begin(), proportions.end(), 0.0) <= 0.0) {
        degenerate = true;
        break;
      }
      auto shuffled = members;
      rng.shuffle(shuffled);
      const auto counts = largest_remainder(proportions, shuffled.size());
      std::size_t cursor = 0;
      for (std::size_t i = 0; i < num_clients; ++i) {
        for (std::size_t k = 0; k < counts[i]; ++k) p.clients[i].push_back(shuffled[cursor++]);
      }
    }
    if (degenerate) continue;
    if (std::none_of(p.clients.begin(), p.clients.end(), [](const auto& c) { return c.empty(); })) {
      sort_clients(p);
      return p;
    }
  }
  throw Error(ErrorCode::kPartitionInfeasible,
              "Dirichlet split left a client empty after " + std::to_string(kDirichletMaxAttempts) +
                  " attempts (beta=" + std::to_string(beta) + ", N=" + std::to_string(num_clients) +
                  ", n=" + std::to_string(data.size()) + ")");
}

std::vector<std::vector<std::size_t>> pathological_class_assignment(std::size_t num_classes,
                                                                    std::size_t num_clients,
                                                                    std::size_t classes_per_client,
                                                                    std::uint64_t seed) {
  require_clients(num_clients);
  if (classes_per_client < 1) throw Error(ErrorCode::kParameter, "classes per client must be >= 1");
  // The last client takes the remainder and must own at least one class.
  if (classes_per_client * (num_clients - 1) >= num_classes) {
    throw Error(ErrorCode::kParameter,
                std::to_string(classes_per_client) + " classes for each of " + std::to_string(num_clients - 1) +
                    " clients leaves none of K=" + std::to_string(num_classes) + " for the last client");
  }
  std::vector<std::size_t> classes(num_classes);
  std::iota(classes.begin(), classes.end(), 0);
  Rng rng(derive_seed(seed, {0xba7}));
  rng.shuffle(classes);
  std::vector<std::vector<std::size_t>> owned(num_clients);
  for (std::size_t i = 0; i < num_classes; ++i) {
    const std::size_t client = std::min(i / classes_per_client, num_clients - 1);
    owned[client].push_back(classes[i]);
  }
  return owned;
}

Partition split_pathological(const Dataset& data, std::size_t num_clients, std::size_t classes_per_client,
                             std::size_t shots, std::uint64_t seed) {
  if (shots < 1) throw Error(ErrorCode::kParameter, "shots must be >= 1");
  const auto owned = pathological_class_assignment(data.num_classes, num_clients, classes_per_client, seed);
  auto by_class = indices_by_class(data);
  Rng rng(derive_seed(seed, {0x5a3}));
  for (std::size_t c = 0; c < by_class.size(); ++c) rng.shuffle(by_class[c]);

  Partition p;
  p.clients.resize(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i) {
    for (std::size_t c : owned[i]) {
      if (by_class[c].size() < shots) {
        throw Error(ErrorCode::kInsufficientShots, "class " + std::to_string(c) + " has " +
                                                       std::to_string(by_class[c].size()) +
                                                       " training samples, fewer than " +
                                                       std::to_string(shots) + " shots");
      }
      p.clients[i].insert(p.clients[i].end(), by_class[c].begin(),
                          by_class[c].begin() + static_cast<std::ptrdiff_t>(shots));
    }
  }
  sort_clients(p);
  return p;
}

Partition make_partition(const Dataset& data, const PartitionSpec& spec) {
  switch (spec.scheme) {
    case PartitionScheme::kIid:
      return spec.shots == 0 ? split_iid(data, spec.num_clients, spec.seed)
                             : split_iid_fewshot(data, spec.num_clients, spec.shots, spec.seed);
    case PartitionScheme::kDirichlet:
      return split_dirichlet(data, spec.num_clients, spec.beta, spec.seed);
    case PartitionScheme::kPathological:
      return split_pathological(data, spec.num_clients, spec.classes_per_client,
                                spec.shots == 0 ? 1 : spec.shots, spec.seed);
  }
  throw Error(ErrorCode::kParameter, "unknown partition scheme");
}

std::vector<double> client_label_entropy(const Dataset& data, const Partition& partition) {
  std::vector<double> out;
  for (const auto& client : partition.clients) {
    const auto hist = label_histogram(data, client);
    double h = 0.0;
    for (std::size_t count : hist) {
      if (count == 0) continue;
      const double p = static_cast<double>(count) / static_cast<double>(client.size());
      h -= p * std::log(p);
    }
    out.push_back(h);
  }
  return out;
}

std::string partition_manifest(const Partition& partition, const PartitionSpec& spec) {
  nlohmann::ordered_json j;
  j["scheme"] = std::string(to_string(spec.scheme));
  j["num_clients"] = spec.num_clients;
  j["seed"] = spec.seed;
  if (spec.scheme == PartitionScheme::kDirichlet) j["beta"] = spec.beta;
  if (spec.scheme == PartitionScheme::kPathological) j["classes_per_client"] = spec.classes_per_client;
  if (spec.shots > 0) j["shots"] = spec.shots;
  nlohmann::ordered_json clients = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < partition.clients.size(); ++i) clients[std::to_string(i + 1)] = partition.clients[i];
  j["clients"] = std::move(clients);
  return j.dump(2) + "\n";
}

}  // namespace fedlora
