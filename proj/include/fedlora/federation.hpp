#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedlora/accounting.hpp"
#include "fedlora/adam.hpp"
#include "fedlora/checkpoint.hpp"
#include "fedlora/dataset.hpp"
#include "fedlora/model.hpp"

namespace fedlora {

/// The parameters exchanged in one round, in ascending name order.
struct TransferPayload {
  AdaptationKind mode = AdaptationKind::kFlora;
  std::uint64_t round = 0;
  std::vector<std::pair<std::string, Matrix>> entries;

  std::uint64_t param_count() const;
};

/// Copies the model's transfer set (per its own mode) into a payload.
TransferPayload extract_payload(const DualEncoderModel& model, std::uint64_t round);

/// Writes payload entries into the model. Throws kProtocol when the mode,
/// names, or shapes disagree with the model's transfer set.
void apply_payload(DualEncoderModel& model, const TransferPayload& payload);

Container payload_to_container(const TransferPayload& payload);
TransferPayload payload_from_container(const Container& container);

struct LocalTraining {
  std::size_t local_epochs = 1;
  std::size_t batch_size = 128;
  AdamConfig optimizer;
};

/// Shuffle seed for a client's n-th local epoch (counted over its lifetime).
std::uint64_t epoch_shuffle_seed(std::uint64_t run_seed, std::size_t client_id, std::uint64_t epoch);

/// One pass over `data` in seeded mini-batches; Adam updates exactly the
/// model's transfer set. Returns the mean batch loss.
double train_epoch(DualEncoderModel& model, AdamState& optimizer, const Dataset& data,
                   std::size_t batch_size, std::uint64_t shuffle_seed);

struct ClientState {
  std::size_t id = 0;  // 1-based
  Dataset data;
  DualEncoderModel model;
  AdamState optimizer;
  std::uint64_t epochs_completed = 0;
  std::uint64_t run_seed = 0;
};

struct ClientUpdate {
  TransferPayload payload;
  double mean_train_loss = 0.0;
};

/// Loads the global payload, runs the local epochs, and returns the new
/// transfer set. Non-finite losses raise kDivergence naming round and client.
ClientUpdate client_update(ClientState& client, const TransferPayload& global, const LocalTraining& settings);

/// Weighted mean with weights |D_i| / sum |D_j|, accumulated in input
/// order. Callers pass payloads in ascending client id order.
TransferPayload aggregate(std::span<const TransferPayload> payloads, std::span<const std::size_t> sizes);

/// floor(rho * N) distinct 1-based ids, sorted, reproducible per (seed, round).
std::vector<std::size_t> sample_clients(std::size_t num_clients, double sample_rate, std::uint64_t round,
                                        std::uint64_t seed);

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<std::size_t> predictions;
};

/// Top-1 accuracy and mean cross-entropy over the whole dataset.
Evaluation evaluate(const DualEncoderModel& model, const Dataset& data);

struct RoundReport {
  std::uint64_t round = 0;
  AdaptationKind mode = AdaptationKind::kFlora;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  std::vector<double> client_train_loss;  // aligned with sampled_clients
  double mean_train_loss = 0.0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t cumulative_bytes = 0;
  std::uint64_t broadcast_bytes = 0;  // informational: payload sent to all N
  double train_ms = 0.0;
  double eval_ms = 0.0;
  std::vector<std::size_t> sampled_clients;
};

struct FederationSettings {
  double sample_rate = 1.0;
  LocalTraining local;
  std::uint64_t seed = 0;
  std::uint64_t bytes_per_param = kDefaultBytesPerParam;
  bool record_timing = false;
};

/// Coordinator: holds the global model, the clients and the cost ledger.
class Server {
 public:
  /// `global_model` must already be configured for its adaptation mode.
  Server(DualEncoderModel global_model, std::vector<Dataset> client_data, Dataset test_set,
         FederationSettings settings);

  /// sample -> distribute -> local updates -> collect -> aggregate -> evaluate.
  RoundReport run_round();

  Evaluation evaluate_global() const;

  const DualEncoderModel& global_model() const noexcept { return global_model_; }
  const TransferPayload& global_payload() const noexcept { return global_payload_; }
  const CostLedger& ledger() const noexcept { return ledger_; }
  const std::vector<ClientState>& clients() const noexcept { return clients_; }
  std::uint64_t rounds_completed() const noexcept { return round_; }

 private:
  DualEncoderModel global_model_;
  TransferPayload global_payload_;
  std::vector<ClientState> clients_;
  Dataset test_set_;
  FederationSettings settings_;
  CostLedger ledger_;
  std::uint64_t round_ = 0;
};

/// Plain single-process training with the same batching and seeding as
/// client id 1; the reference a one-client federation must reproduce.
DualEncoderModel train_centralized(DualEncoderModel model, const Dataset& data, std::size_t epochs,
                                   std::size_t batch_size, const AdamConfig& optimizer, std::uint64_t seed);

}  // namespace fedlora
