#include "fedlora/experiment.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "fedlora/accounting.hpp"
#include "fedlora/checkpoint.hpp"
#include "fedlora/error.hpp"
#include "fedlora/rng.hpp"
#include "json.hpp"

namespace fedlora {
namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kTagInit = 0x1417;
constexpr std::uint64_t kTagPretrain = 0x9e7a;
constexpr std::uint64_t kTagSplit = 0x5917;
constexpr std::uint64_t kTagPartition = 0x9a27;
constexpr std::uint64_t kTagAdapters = 0xada9;
constexpr std::uint64_t kTagSourceVariant = 1;

// Shortest text that reads back to the same double.
std::string real(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

ModelShape shape_for(const ExperimentConfig& config, const Dataset& target) {
  ModelShape shape = config.shape;
  shape.num_classes = target.num_classes;
  shape.feature_dim = target.feature_dim();
  return shape;
}

void check_base_shape(const DualEncoderModel& base, const ModelShape& want) {
  const ModelShape& got = base.shape();
  if (got.feature_dim != want.feature_dim || got.embed_dim != want.embed_dim ||
      got.image_blocks != want.image_blocks || got.text_blocks != want.text_blocks ||
      got.num_classes != want.num_classes) {
    throw Error(ErrorCode::kParameter, "base model shape (features " + std::to_string(got.feature_dim) + ", embed " +
                                           std::to_string(got.embed_dim) + ", classes " +
                                           std::to_string(got.num_classes) + ") does not match the configured task");
  }
}

}  // namespace

SynthSpec target_spec(const ExperimentConfig& config) {
  SynthSpec spec = config.data;
  spec.feature_dim = config.shape.feature_dim;
  spec.seed = config.data_seed;
  spec.variant = 0;
  return spec;
}

SynthSpec source_spec(const ExperimentConfig& config) {
  SynthSpec spec = target_spec(config);
  spec.shift = 0.0;
  spec.per_class = config.pretrain_per_class;
  spec.variant = kTagSourceVariant;
  return spec;
}

Dataset load_target(const ExperimentConfig& config) {
  if (config.data_path.empty()) return synth_dataset(target_spec(config));
  Dataset data = load_dataset(config.data_path);
  if (data.feature_dim() != config.shape.feature_dim) {
    throw Error(ErrorCode::kParameter, "dataset " + config.data_path + " has " + std::to_string(data.feature_dim()) +
                                           " features, config feature_dim is " +
                                           std::to_string(config.shape.feature_dim));
  }
  return data;
}

PretrainResult pretrain_base(const ExperimentConfig& config) {
  const Dataset source = synth_dataset(source_spec(config));
  ModelShape shape = config.shape;
  shape.num_classes = source.num_classes;
  DualEncoderModel model =
      DualEncoderModel::random_base(shape, config.temperature, derive_seed(config.seed, {kTagInit}));
  AdamConfig opt;
  opt.learning_rate = config.pretrain_lr;
  opt.weight_decay = 0.0;
  try {
    model = train_centralized(std::move(model), source, config.pretrain_epochs, config.pretrain_batch_size, opt,
                              derive_seed(config.seed, {kTagPretrain}));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNumeric) throw Error(ErrorCode::kDivergence, std::string("pretraining: ") + e.what());
    throw;
  }
  PretrainResult result{std::move(model), 0.0};
  result.source_accuracy = evaluate(result.model, source).accuracy;
  return result;
}

DualEncoderModel obtain_base(const ExperimentConfig& config) {
  if (!config.base_checkpoint.empty()) return load_model(config.base_checkpoint);
  return pretrain_base(config).model;
}

PreparedData prepare_data(const ExperimentConfig& config, const Dataset& target) {
  PreparedData out;
  const TrainTestSplit split = train_test_split(target, config.test_fraction, derive_seed(config.seed, {kTagSplit}));
  out.train = subset(target, split.train);
  out.test = subset(target, split.test);
  out.partition_spec = config.partition;
  out.partition_spec.seed = derive_seed(config.seed, {kTagPartition});
  out.partition = make_partition(out.train, out.partition_spec);
  for (const auto& indices : out.partition.clients) out.client_data.push_back(subset(out.train, indices));
  return out;
}

double ExperimentResult::final_accuracy() const {
  return rounds.empty() ? initial.accuracy : rounds.back().test_accuracy;
}

std::uint64_t ExperimentResult::total_bytes() const {
  return rounds.empty() ? 0 : rounds.back().cumulative_bytes;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const DualEncoderModel* base,
                                const RoundCallback& on_round) {
  ExperimentResult result;
  result.config_hash = config_hash(config);
  try {
    const Dataset target = load_target(config);
    PreparedData data = prepare_data(config, target);
    result.partition_manifest = partition_manifest(data.partition, data.partition_spec);
    DualEncoderModel model = base ? *base : obtain_base(config);
    check_base_shape(model, shape_for(config, target));
    if (model.temperature() != config.temperature) model.set_temperature(config.temperature);
    result.zero_shot = evaluate(model, data.test);

    model.configure(config.mode, derive_seed(config.seed, {kTagAdapters}));
    FederationSettings settings;
    settings.sample_rate = config.sample_rate;
    settings.local.local_epochs = config.local_epochs;
    settings.local.batch_size = config.batch_size;
    settings.local.optimizer = config.optimizer;
    settings.seed = config.seed;
    settings.bytes_per_param = config.bytes_per_param;
    settings.record_timing = config.record_timing;

    Server server(std::move(model), std::move(data.client_data), std::move(data.test), settings);
    result.initial = server.evaluate_global();
    result.payload_params = server.global_payload().param_count();
    result.payload_bytes = payload_bytes(result.payload_params, config.bytes_per_param);
    for (std::size_t t = 0; t < config.rounds; ++t) {
      result.rounds.push_back(server.run_round());
      if (on_round) on_round(result.rounds.back());
    }
  } catch (const Error& e) {
    throw Error(e.code(), std::string(e.what()) + " [config " + result.config_hash + "]");
  }
  return result;
}

void write_metrics_header(std::ostream& out) { out << kMetricsHeader << '\n'; }

void write_metrics_row(std::ostream& out, const RoundReport& r, std::uint64_t seed) {
  out << r.round << ',' << to_string(r.mode) << ',' << real(r.test_accuracy) << ',' << real(r.test_loss) << ','
      << real(r.mean_train_loss) << ',' << r.bytes_up << ',' << r.bytes_down << ',' << r.cumulative_bytes << ','
      << fixed(r.train_ms, 3) << ',' << fixed(r.eval_ms, 3) << ',' << seed << '\n';
}

std::string summary_json(const ExperimentConfig& config, const ExperimentResult& result) {
  nlohmann::ordered_json j;
  j["config_hash"] = result.config_hash;
  j["mode"] = std::string(to_string(config.mode.kind));
  j["seed"] = config.seed;
  j["rounds"] = result.rounds.size();
  j["payload_params"] = result.payload_params;
  j["payload_bytes"] = result.payload_bytes;
  j["round_cost_bytes"] = result.rounds.empty() ? 0 : result.rounds.front().bytes_up + result.rounds.front().bytes_down;
  j["total_bytes"] = result.total_bytes();
  j["total_megabytes"] = format_megabytes(result.total_bytes());
  j["zero_shot_accuracy"] = result.zero_shot.accuracy;
  j["initial_accuracy"] = result.initial.accuracy;
  j["final_accuracy"] = result.final_accuracy();
  j["final_test_loss"] = result.rounds.empty() ? result.initial.loss : result.rounds.back().test_loss;
  j["first_train_loss"] = result.rounds.empty() ? 0.0 : result.rounds.front().mean_train_loss;
  j["final_train_loss"] = result.rounds.empty() ? 0.0 : result.rounds.back().mean_train_loss;
  return j.dump(2) + "\n";
}

double FewShotCell::mean_accuracy() const {
  double s = 0.0;
  for (double a : final_accuracy) s += a;
  return final_accuracy.empty() ? 0.0 : s / static_cast<double>(final_accuracy.size());
}

double FewShotCell::stddev_accuracy() const {
  if (final_accuracy.size() < 2) return 0.0;
  const double m = mean_accuracy();
  double s = 0.0;
  for (double a : final_accuracy) s += (a - m) * (a - m);
  return std::sqrt(s / static_cast<double>(final_accuracy.size() - 1));
}

double FewShotCell::mean_zero_shot() const {
  double s = 0.0;
  for (double a : zero_shot_accuracy) s += a;
  return zero_shot_accuracy.empty() ? 0.0 : s / static_cast<double>(zero_shot_accuracy.size());
}

std::vector<FewShotCell> sweep_fewshot(const ExperimentConfig& config,
                                       const std::function<void(const FewShotCell&)>& on_cell) {
  std::vector<FewShotCell> cells;
  for (AdaptationKind mode : config.sweep_modes) {
    for (std::size_t shots : config.sweep_shots) {
      FewShotCell cell;
      cell.mode = mode;
      cell.shots = shots;
      cells.push_back(cell);
    }
  }
  if (cells.empty()) return cells;

  for (std::uint64_t seed : config.sweep_seeds) {
    ExperimentConfig per_seed = config;
    per_seed.seed = seed;
    per_seed.data_seed = seed;
    per_seed.partition.seed = seed;
    const DualEncoderModel base = obtain_base(per_seed);
    for (auto& cell : cells) {
      ExperimentConfig run = per_seed;
      run.mode.kind = cell.mode;
      run.partition.shots = cell.shots;
      const ExperimentResult r = run_experiment(run, &base);
      cell.seeds.push_back(seed);
      cell.final_accuracy.push_back(r.final_accuracy());
      cell.zero_shot_accuracy.push_back(r.zero_shot.accuracy);
    }
  }
  if (on_cell) {
    for (const auto& cell : cells) on_cell(cell);
  }
  return cells;
}

void write_fewshot_csv(std::ostream& out, const std::vector<FewShotCell>& cells) {
  out << kFewShotHeader << '\n';
  for (const auto& c : cells) {
    std::string seeds;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) seeds += (i ? ";" : "") + std::to_string(c.seeds[i]);
    out << to_string(c.mode) << ',' << c.shots << ',' << seeds << ',' << real(c.mean_accuracy()) << ','
        << real(c.stddev_accuracy()) << ',' << real(c.mean_zero_shot()) << '\n';
  }
}

}  // namespace fedlora
