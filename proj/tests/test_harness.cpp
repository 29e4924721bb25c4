#include <cstdlib>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fedlora/accounting.hpp"
#include "fedlora/config.hpp"
#include "fedlora/error.hpp"
#include "fedlora/experiment.hpp"
#include "fedlora/partition.hpp"
#include "json.hpp"

using namespace fedlora;

namespace {

ErrorCode code_of(const std::function<void()>& fn, std::string* message = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kIo;
}

const char* kSmall = R"(
seed = 3
mode = flora
rounds = 3
clients = 3
partition = iid
batch_size = 16
lr = 1e-2
lora_targets = both
feature_dim = 6
embed_dim = 6
image_blocks = 1
text_blocks = 1
classes = 3
per_class = 60
separation = 4
shift = 1
pretrain_epochs = 2
pretrain_per_class = 30
)";

ConfigValues small_values() { return parse_config_text(kSmall); }

ExperimentConfig small_config(const ConfigValues& overrides = {}) {
  return resolve_config(merge_config(small_values(), overrides));
}

std::string metrics_of(const ExperimentConfig& config, const ExperimentResult& result) {
  std::ostringstream out;
  write_metrics_header(out);
  for (const auto& r : result.rounds) write_metrics_row(out, r, config.seed);
  return out.str();
}

// Nearest class mean, with means estimated on the training rows.
double nearest_mean_accuracy(const Dataset& data, std::uint64_t seed) {
  const auto split = train_test_split(data, 0.2, seed);
  const std::size_t k = data.num_classes, d = data.feature_dim();
  std::vector<std::vector<double>> means(k, std::vector<double>(d, 0.0));
  std::vector<double> counts(k, 0.0);
  for (std::size_t i : split.train) {
    counts[data.labels[i]] += 1;
    for (std::size_t j = 0; j < d; ++j) means[data.labels[i]][j] += data.features(i, j);
  }
  for (std::size_t c = 0; c < k; ++c)
    for (double& v : means[c]) v /= counts[c];
  std::size_t hits = 0;
  for (std::size_t i : split.test) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < k; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) dist += std::pow(data.features(i, j) - means[c][j], 2);
      if (dist < best_d) best_d = dist, best = c;
    }
    hits += best == data.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(split.test.size());
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("empty config names every required field") {
    std::string msg;
    CHECK(code_of([] { resolve_config({}); }, &msg) == ErrorCode::kParse);
    for (const char* key : {"seed", "mode", "rounds", "clients", "partition"}) CHECK(msg.find(key) != std::string::npos);
  }

  TEST_CASE("shipped paper config carries the published settings") {
    const auto values = read_config_file(std::filesystem::path(FEDLORA_SOURCE_DIR) / "configs" / "paper.conf");
    const ExperimentConfig c = resolve_config(merge_config(values, {{"seed", "1"}}));
    CHECK(c.mode.kind == AdaptationKind::kFlora);
    CHECK(c.mode.lora.targets == LoraTargets::kText);
    CHECK(c.mode.lora.rank == 2);
    CHECK(c.mode.lora.alpha == 32.0);
    CHECK(c.optimizer.learning_rate == 5e-5);
    CHECK(c.optimizer.beta1 == 0.9);
    CHECK(c.optimizer.beta2 == 0.999);
    CHECK(c.optimizer.epsilon == 1e-6);
    CHECK(c.optimizer.weight_decay == 0.2);
    CHECK(c.rounds == 50);
    CHECK(c.local_epochs == 1);
    CHECK(c.partition.num_clients == 10);
    CHECK(c.sample_rate == 1.0);
    CHECK(c.batch_size == 128);
  }

  TEST_CASE("range and parse errors name the key") {
    std::string msg;
    CHECK(code_of([] { small_config({{"dirichlet_beta", "0"}}); }, &msg) == ErrorCode::kRange);
    CHECK(msg.find("dirichlet_beta") != std::string::npos);
    CHECK(code_of([] { small_config({{"sample_rate", "1.5"}}); }, &msg) == ErrorCode::kRange);
    CHECK(msg.find("sample_rate") != std::string::npos);
    CHECK(code_of([] { small_config({{"rounds", "many"}}); }, &msg) == ErrorCode::kParse);
    CHECK(msg.find("rounds") != std::string::npos);
    CHECK(code_of([] { parse_config_text("seed = 1\ncolour = red\n"); }, &msg) == ErrorCode::kParse);
    CHECK(msg.find("colour") != std::string::npos);
    CHECK(code_of([] { parse_config_text("seed = 1\nseed = 2\n"); }) == ErrorCode::kParse);
    CHECK(code_of([] { parse_config_text("seed 1\n"); }, &msg) == ErrorCode::kParse);
    CHECK(msg.find(":1") != std::string::npos);
    CHECK(code_of([] { read_config_file("/nonexistent/fedlora.conf"); }) == ErrorCode::kIo);
  }

  TEST_CASE("hash is stable and changes with every experiment field") {
    const std::string base = config_hash(small_config());
    CHECK(base.size() == 16);
    CHECK(config_hash(small_config()) == base);
    const ConfigValues changes[] = {
        {{"seed", "4"}},          {{"data_seed", "9"}},     {{"mode", "lc"}},
        {{"rounds", "4"}},        {{"clients", "2"}},       {{"partition", "dirichlet"}},
        {{"dirichlet_beta", "2"}}, {{"sample_rate", "0.5"}}, {{"local_epochs", "2"}},
        {{"batch_size", "8"}},    {{"lr", "2e-2"}},         {{"beta1", "0.8"}},
        {{"beta2", "0.99"}},      {{"eps", "1e-8"}},        {{"weight_decay", "0.1"}},
        {{"temperature", "0.02"}}, {{"lora_rank", "4"}},    {{"lora_alpha", "16"}},
        {{"lora_targets", "text"}}, {{"lora_scale_by_rank", "true"}}, {{"aa_width", "8"}},
        {{"per_class", "61"}},    {{"separation", "3"}},    {{"shift", "2"}},
        {{"test_fraction", "0.3"}}, {{"pretrain_epochs", "3"}}, {{"pretrain_lr", "0.02"}},
        {{"bytes_per_param", "2"}}};
    CHECK(config_hash(small_config({{"output_dir", "elsewhere"}, {"record_timing", "true"}})) == base);
    std::set<std::string> hashes{base};
    for (const auto& change : changes) {
      CAPTURE(change.begin()->first);
      CHECK(hashes.insert(config_hash(small_config(change))).second);
    }
  }

  TEST_CASE("environment sets the output directory and flags override it") {
    ::setenv(kOutputDirEnv, "/tmp/fedlora-env", 1);
    ConfigValues flags = small_values();
    CHECK(load_config(nullptr, flags).output_dir == "/tmp/fedlora-env");
    flags["output_dir"] = "/tmp/fedlora-flag";
    CHECK(load_config(nullptr, flags).output_dir == "/tmp/fedlora-flag");
    ::unsetenv(kOutputDirEnv);
  }

  TEST_CASE("canonical text round trips") {
    const ExperimentConfig c = small_config({{"partition", "pathological"}, {"classes_per_client", "1"}, {"shots", "4"}});
    const ExperimentConfig back = resolve_config(parse_config_text(canonical_config(c)));
    CHECK(canonical_config(back) == canonical_config(c));
    CHECK(config_hash(back) == config_hash(c));
  }
}

TEST_SUITE("synthetic task") {
  TEST_CASE("separation 5 is nearly separable; separation 0 is chance") {
    SynthSpec s;
    s.classes = 10;
    s.feature_dim = 32;
    s.per_class = 500;
    s.seed = 2;
    CHECK(nearest_mean_accuracy(synth_dataset(s), 1) >= 0.95);
    s.separation = 0.0;
    s.per_class = 2000;
    CHECK(std::abs(nearest_mean_accuracy(synth_dataset(s), 1) - 0.1) < 0.03);
  }
}

TEST_SUITE("experiment") {
  TEST_CASE("metrics are reproducible and the ledger matches the round cost") {
    const ExperimentConfig c = small_config();
    const DualEncoderModel base = obtain_base(c);
    const ExperimentResult a = run_experiment(c, &base);
    const ExperimentResult b = run_experiment(c, &base);
    const std::string text = metrics_of(c, a);
    CHECK(text == metrics_of(c, b));
    CHECK(text.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
    CHECK(summary_json(c, a) == summary_json(c, b));

    const std::uint64_t cost = comm_cost_per_round(3, 1.0, a.payload_bytes);
    CHECK(a.payload_params == count_params(c.shape, c.mode));
    for (std::size_t t = 0; t < a.rounds.size(); ++t) CHECK(a.rounds[t].cumulative_bytes == (t + 1) * cost);
    CHECK(a.total_bytes() == 3 * cost);

    const auto j = nlohmann::json::parse(summary_json(c, a));
    CHECK(j["config_hash"] == config_hash(c));
    CHECK(j["total_bytes"] == 3 * cost);
    CHECK(j["final_accuracy"].get<double>() == a.final_accuracy());
    CHECK(j["rounds"] == 3);
  }

  TEST_CASE("pretraining from the config is reproducible") {
    const ExperimentConfig c = small_config();
    const auto a = pretrain_base(c), b = pretrain_base(c);
    CHECK(a.source_accuracy == b.source_accuracy);
    for (const auto& [name, value] : a.model.parameters()) CHECK(bitwise_equal(b.model.parameter(name), value));
  }

  TEST_CASE("zero rounds produce no rows") {
    const ExperimentConfig c = small_config({{"rounds", "0"}});
    const ExperimentResult r = run_experiment(c);
    CHECK(r.rounds.empty());
    CHECK(r.total_bytes() == 0);
    CHECK(r.final_accuracy() == r.initial.accuracy);
  }

  TEST_CASE("errors carry the config hash") {
    const ExperimentConfig c = small_config({{"clients", "500"}});
    std::string msg;
    CHECK(code_of([&] { run_experiment(c); }, &msg) == ErrorCode::kInsufficientData);
    CHECK(msg.find(config_hash(c)) != std::string::npos);
  }

  TEST_CASE("few-shot sweep") {
    const ExperimentConfig c = small_config({{"rounds", "2"}, {"sweep_shots", "1,2"}, {"sweep_seeds", "1,2"},
                                             {"sweep_modes", "flora,lc"}});
    const auto cells = sweep_fewshot(c);
    REQUIRE(cells.size() == 4);
    for (const auto& cell : cells) {
      CHECK(cell.seeds == std::vector<std::uint64_t>{1, 2});
      CHECK(cell.final_accuracy.size() == 2);
      CHECK(cell.mean_accuracy() >= 0.0);
      CHECK(cell.mean_accuracy() <= 1.0);
    }
    // The same seeds share base models, so zero-shot accuracy repeats across cells.
    CHECK(cells[0].zero_shot_accuracy == cells[3].zero_shot_accuracy);
    std::ostringstream out;
    write_fewshot_csv(out, cells);
    const std::string text = out.str();
    CHECK(text.rfind(std::string(kFewShotHeader) + "\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 5);
    CHECK(text.find("flora,1,1;2,") != std::string::npos);
  }
}
