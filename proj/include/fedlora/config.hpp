#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fedlora/adam.hpp"
#include "fedlora/dataset.hpp"
#include "fedlora/model.hpp"
#include "fedlora/partition.hpp"

namespace fedlora {

/// Environment variable that overrides `output_dir` (flags still win).
inline constexpr const char* kOutputDirEnv = "FEDLORA_OUTPUT_DIR";

/// Every knob of one experiment, fully resolved.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;  // defaults to `seed`

  // Target task: a dataset file, or synthetic blobs.
  std::string data_path;
  SynthSpec data{.classes = 10, .feature_dim = 32, .per_class = 5000, .separation = 5.0, .shift = 2.0};
  double test_fraction = 0.2;

  // Base model: a checkpoint, or central pretraining on the unshifted
  // source distribution.
  std::string base_checkpoint;
  std::size_t pretrain_epochs = 5;
  std::size_t pretrain_per_class = 100;
  std::size_t pretrain_batch_size = 64;
  double pretrain_lr = 1e-2;

  ModelShape shape;
  AdaptationMode mode;
  double temperature = 0.01;

  PartitionSpec partition;
  double sample_rate = 1.0;
  std::size_t rounds = 50;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 128;
  AdamConfig optimizer;
  std::uint64_t bytes_per_param = 4;

  std::string output_dir = "out";
  bool record_timing = false;

  std::vector<std::size_t> sweep_shots{1, 2, 4, 8, 16};
  std::vector<std::uint64_t> sweep_seeds{1, 2, 3, 4, 5};
  std::vector<AdaptationKind> sweep_modes{AdaptationKind::kFlora};
};

/// Raw `key = value` pairs in the order they were given.
using ConfigValues = std::map<std::string, std::string, std::less<>>;

/// Recognized keys, in canonical order.
const std::vector<std::string>& config_keys();
/// Keys that have no default.
const std::vector<std::string>& required_config_keys();
/// One-line description of a key, for --help.
std::string_view config_key_help(std::string_view key);

/// Parses "key = value" lines; '#' starts a comment. Throws kParse with the
/// line number on malformed lines and naming the key when it is unknown or
/// repeated.
ConfigValues parse_config_text(std::string_view text, const std::string& source = "<config>");
ConfigValues read_config_file(const std::filesystem::path& path);

/// Later layers override earlier ones.
ConfigValues merge_config(ConfigValues base, const ConfigValues& overrides);

/// Converts and range-checks every value. Missing required keys are listed
/// together in one kParse error; bad values raise kParse or kRange naming
/// the key.
ExperimentConfig resolve_config(const ConfigValues& values);

/// Convenience: file (optional), then FEDLORA_OUTPUT_DIR, then flags.
ExperimentConfig load_config(const std::filesystem::path* file, const ConfigValues& flags);

/// Throws kRange naming the first out-of-range field.
void validate_config(const ExperimentConfig& config);

/// All resolved fields as sorted "key = value" lines.
std::string canonical_config(const ExperimentConfig& config);
/// FNV-1a 64 of the canonical text, 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace fedlora
