#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedlora/config.hpp"
#include "fedlora/dataset.hpp"
#include "fedlora/federation.hpp"
#include "fedlora/model.hpp"
#include "fedlora/partition.hpp"

namespace fedlora {

/// Synthetic target task of a config (its shift applied).
SynthSpec target_spec(const ExperimentConfig& config);
/// The related source task used for pretraining: same class means, no
/// shift, an independent sample draw.
SynthSpec source_spec(const ExperimentConfig& config);

/// Target dataset: the configured file, else synthetic blobs.
Dataset load_target(const ExperimentConfig& config);

struct PretrainResult {
  DualEncoderModel model;
  double source_accuracy = 0.0;
};

/// Central full training of a fresh base model on the source task.
PretrainResult pretrain_base(const ExperimentConfig& config);

/// Loads `base_checkpoint` when set, otherwise pretrains.
DualEncoderModel obtain_base(const ExperimentConfig& config);

struct PreparedData {
  Dataset train;
  Dataset test;
  PartitionSpec partition_spec;  // as applied, with the derived seed
  Partition partition;           // indices into `train`
  std::vector<Dataset> client_data;
};

PreparedData prepare_data(const ExperimentConfig& config, const Dataset& target);

struct ExperimentResult {
  std::string config_hash;
  std::uint64_t payload_params = 0;
  std::uint64_t payload_bytes = 0;
  Evaluation zero_shot;  // unadapted base on the test set
  Evaluation initial;    // configured global model before round 1
  std::string partition_manifest;  // JSON, indices into the training split
  std::vector<RoundReport> rounds;
  double final_accuracy() const;
  std::uint64_t total_bytes() const;
};

using RoundCallback = std::function<void(const RoundReport&)>;

/// Builds data, partition and model, then runs `rounds` federated rounds.
/// Errors are rethrown with the config hash attached. `base` skips
/// pretraining when given.
ExperimentResult run_experiment(const ExperimentConfig& config, const DualEncoderModel* base = nullptr,
                                const RoundCallback& on_round = {});

/// Fixed metrics header and one row per round.
inline constexpr const char* kMetricsHeader =
    "round,mode,test_acc,test_loss,mean_train_loss,bytes_up,bytes_down,cum_bytes,train_ms,eval_ms,seed";
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const RoundReport& report, std::uint64_t seed);
std::string summary_json(const ExperimentConfig& config, const ExperimentResult& result);

struct FewShotCell {
  AdaptationKind mode = AdaptationKind::kFlora;
  std::size_t shots = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> final_accuracy;  // aligned with seeds
  std::vector<double> zero_shot_accuracy;
  double mean_accuracy() const;
  double stddev_accuracy() const;
  double mean_zero_shot() const;
};

/// One run per (mode, shots, seed); each seed's base model is built once
/// and reused across its cells.
std::vector<FewShotCell> sweep_fewshot(const ExperimentConfig& config,
                                       const std::function<void(const FewShotCell&)>& on_cell = {});

inline constexpr const char* kFewShotHeader = "mode,shots,seeds,mean_acc,std_acc,mean_zero_shot_acc";
void write_fewshot_csv(std::ostream& out, const std::vector<FewShotCell>& cells);

}  // namespace fedlora
