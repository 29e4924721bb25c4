#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fedlora/dataset.hpp"

namespace fedlora {

struct TrainTestSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  /// False when some class had fewer than two samples and the split fell
  /// back to a plain shuffle.
  bool stratified = true;
};

/// Disjoint, seeded split with |test| = round(test_fraction * n). When
/// stratified, each class contributes floor or ceil of its share.
TrainTestSplit train_test_split(const Dataset& data, double test_fraction, std::uint64_t seed,
                                bool stratify = true);

/// One index list per client, indices into the dataset the split was
/// computed on. Lists are pairwise disjoint and sorted ascending.
struct Partition {
  std::vector<std::vector<std::size_t>> clients;

  std::size_t num_clients() const noexcept { return clients.size(); }
  std::size_t total_size() const;
};

enum class PartitionScheme { kIid, kDirichlet, kPathological };

std::string_view to_string(PartitionScheme scheme);
PartitionScheme parse_partition_scheme(std::string_view text);

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::kIid;
  std::size_t num_clients = 10;
  double beta = 0.5;                   // Dirichlet concentration
  std::size_t classes_per_client = 2;  // pathological k
  std::size_t shots = 0;               // per-class samples; 0 = use everything (IID only)
  std::uint64_t seed = 0;
};

inline constexpr int kDirichletMaxAttempts = 100;

/// Shuffle then deal round-robin; client sizes differ by at most one.
Partition split_iid(const Dataset& data, std::size_t num_clients, std::uint64_t seed);

/// Every client gets `shots` disjoint samples of every class.
Partition split_iid_fewshot(const Dataset& data, std::size_t num_clients, std::size_t shots,
                            std::uint64_t seed);

/// Per-class Dirichlet(beta) label skew with largest-remainder rounding.
/// Redraws the whole partition when a client ends up empty.
Partition split_dirichlet(const Dataset& data, std::size_t num_clients, double beta, std::uint64_t seed);

/// Classes shuffled and dealt `classes_per_client` per client, remainder
/// to the last client; `shots` samples per owned class.
Partition split_pathological(const Dataset& data, std::size_t num_clients,
                             std::size_t classes_per_client, std::size_t shots, std::uint64_t seed);

/// Class ownership for the pathological split (before any sampling).
std::vector<std::vector<std::size_t>> pathological_class_assignment(std::size_t num_classes,
                                                                    std::size_t num_clients,
                                                                    std::size_t classes_per_client,
                                                                    std::uint64_t seed);

Partition make_partition(const Dataset& data, const PartitionSpec& spec);

/// Shannon entropy (nats) of each client's label histogram.
std::vector<double> client_label_entropy(const Dataset& data, const Partition& partition);

/// JSON manifest: scheme, seed, and client id -> index list (ids 1-based).
std::string partition_manifest(const Partition& partition, const PartitionSpec& spec);

}  // namespace fedlora
