#include "fedlora/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "fedlora/error.hpp"

namespace fedlora {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view text, std::string_view expected) {
  throw Error(ErrorCode::kParse,
              "key '" + std::string(key) + "': cannot parse '" + std::string(text) + "' as " + std::string(expected));
}

std::uint64_t to_u64(std::string_view key, std::string_view text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) bad_value(key, text, "a non-negative integer");
  return v;
}

double to_double(std::string_view key, std::string_view text) {
  const std::string copy(text);
  char* end = nullptr;
  const double v = std::strtod(copy.c_str(), &end);
  if (copy.empty() || end != copy.c_str() + copy.size() || !std::isfinite(v)) bad_value(key, text, "a finite real");
  return v;
}

bool to_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  bad_value(key, text, "a boolean");
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto piece = trim(text.substr(start, comma == std::string_view::npos ? text.size() - start : comma - start));
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Shortest text that reads back to the same double.
std::string real(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& format) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ',';
    out += format(items[i]);
  }
  return out;
}

[[noreturn]] void out_of_range(std::string_view key, const std::string& value, std::string_view rule) {
  throw Error(ErrorCode::kRange, "key '" + std::string(key) + "' = " + value + " out of range: " + std::string(rule));
}

struct Field {
  std::string key;
  std::string help;
  bool required = false;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define FIELD_U64(name, member, help)                                                               \
  Field{name, help, false,                                                                          \
        [](ExperimentConfig& c, std::string_view v) { c.member = to_u64(name, v); },                \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }}
#define FIELD_REAL(name, member, help)                                                              \
  Field{name, help, false,                                                                          \
        [](ExperimentConfig& c, std::string_view v) { c.member = to_double(name, v); },             \
        [](const ExperimentConfig& c) { return real(c.member); }}
#define FIELD_TEXT(name, member, help)                                                              \
  Field{name, help, false, [](ExperimentConfig& c, std::string_view v) { c.member = std::string(v); }, \
        [](const ExperimentConfig& c) { return c.member; }}
#define FIELD_BOOL(name, member, help)                                                              \
  Field{name, help, false,                                                                          \
        [](ExperimentConfig& c, std::string_view v) { c.member = to_bool(name, v); },               \
        [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto required = [](Field field) {
      field.required = true;
      return field;
    };
    f.push_back(required(FIELD_U64("seed", seed, "run seed (shuffles, sampling, initialization)")));
    f.push_back(FIELD_U64("data_seed", data_seed, "synthetic data seed (defaults to seed)"));
    f.push_back(required(Field{
        "mode", "adaptation mode: flora | fft | lc | vm_lc | aa", false,
        [](ExperimentConfig& c, std::string_view v) { c.mode.kind = parse_adaptation_kind(v); },
        [](const ExperimentConfig& c) { return std::string(to_string(c.mode.kind)); }}));
    f.push_back(required(FIELD_U64("rounds", rounds, "communication rounds T")));
    f.push_back(required(FIELD_U64("clients", partition.num_clients, "number of clients N")));
    f.push_back(required(Field{
        "partition", "iid | dirichlet | pathological", false,
        [](ExperimentConfig& c, std::string_view v) { c.partition.scheme = parse_partition_scheme(v); },
        [](const ExperimentConfig& c) { return std::string(to_string(c.partition.scheme)); }}));
    f.push_back(FIELD_REAL("dirichlet_beta", partition.beta, "Dirichlet concentration beta > 0"));
    f.push_back(FIELD_U64("classes_per_client", partition.classes_per_client, "pathological k"));
    f.push_back(FIELD_U64("shots", partition.shots, "samples per class per client (0 = all, IID only)"));
    f.push_back(FIELD_REAL("sample_rate", sample_rate, "client sample ratio rho in (0, 1]"));
    f.push_back(FIELD_U64("local_epochs", local_epochs, "local epochs per round"));
    f.push_back(FIELD_U64("batch_size", batch_size, "mini-batch size"));
    f.push_back(FIELD_REAL("lr", optimizer.learning_rate, "Adam learning rate"));
    f.push_back(FIELD_REAL("beta1", optimizer.beta1, "Adam beta1"));
    f.push_back(FIELD_REAL("beta2", optimizer.beta2, "Adam beta2"));
    f.push_back(FIELD_REAL("eps", optimizer.epsilon, "Adam epsilon"));
    f.push_back(FIELD_REAL("weight_decay", optimizer.weight_decay, "decoupled weight decay"));
    f.push_back(FIELD_REAL("temperature", temperature, "logit temperature tau"));
    f.push_back(FIELD_U64("bytes_per_param", bytes_per_param, "transfer width in bytes"));
    f.push_back(Field{
        "lora_targets", "text | image | both", false,
        [](ExperimentConfig& c, std::string_view v) { c.mode.lora.targets = parse_lora_targets(v); },
        [](const ExperimentConfig& c) { return std::string(to_string(c.mode.lora.targets)); }});
    f.push_back(FIELD_U64("lora_rank", mode.lora.rank, "LoRA rank r"));
    f.push_back(FIELD_REAL("lora_alpha", mode.lora.alpha, "LoRA scaling alpha"));
    f.push_back(FIELD_BOOL("lora_scale_by_rank", mode.lora.scale_by_rank, "scale the delta by alpha / r"));
    f.push_back(FIELD_U64("aa_width", mode.adapter_width, "attention adapter width"));
    f.push_back(FIELD_U64("feature_dim", shape.feature_dim, "input feature width"));
    f.push_back(FIELD_U64("embed_dim", shape.embed_dim, "shared embedding width d"));
    f.push_back(FIELD_U64("image_blocks", shape.image_blocks, "image encoder blocks"));
    f.push_back(FIELD_U64("text_blocks", shape.text_blocks, "text encoder blocks"));
    f.push_back(FIELD_TEXT("data_path", data_path, "dataset file (empty = synthetic)"));
    f.push_back(FIELD_U64("classes", data.classes, "synthetic classes K"));
    f.push_back(FIELD_U64("per_class", data.per_class, "synthetic samples per class"));
    f.push_back(FIELD_REAL("separation", data.separation, "synthetic class-mean norm"));
    f.push_back(FIELD_REAL("shift", data.shift, "target shift away from the pretraining source"));
    f.push_back(FIELD_REAL("test_fraction", test_fraction, "held-out test fraction"));
    f.push_back(FIELD_TEXT("base_checkpoint", base_checkpoint, "pretrained base model (empty = pretrain)"));
    f.push_back(FIELD_U64("pretrain_epochs", pretrain_epochs, "central pretraining epochs"));
    f.push_back(FIELD_U64("pretrain_per_class", pretrain_per_class, "source samples per class"));
    f.push_back(FIELD_U64("pretrain_batch_size", pretrain_batch_size, "pretraining batch size"));
    f.push_back(FIELD_REAL("pretrain_lr", pretrain_lr, "pretraining learning rate"));
    f.push_back(FIELD_TEXT("output_dir", output_dir, "directory for metrics and summaries"));
    f.push_back(FIELD_BOOL("record_timing", record_timing, "write wall-clock columns (breaks byte equality)"));
    f.push_back(Field{
        "sweep_shots", "few-shot sweep shot counts", false,
        [](ExperimentConfig& c, std::string_view v) {
          c.sweep_shots.clear();
          for (const auto& s : split_list(v)) c.sweep_shots.push_back(to_u64("sweep_shots", s));
        },
        [](const ExperimentConfig& c) {
          return join(c.sweep_shots, [](std::size_t s) { return std::to_string(s); });
        }});
    f.push_back(Field{
        "sweep_seeds", "few-shot sweep seeds", false,
        [](ExperimentConfig& c, std::string_view v) {
          c.sweep_seeds.clear();
          for (const auto& s : split_list(v)) c.sweep_seeds.push_back(to_u64("sweep_seeds", s));
        },
        [](const ExperimentConfig& c) {
          return join(c.sweep_seeds, [](std::uint64_t s) { return std::to_string(s); });
        }});
    f.push_back(Field{
        "sweep_modes", "few-shot sweep modes", false,
        [](ExperimentConfig& c, std::string_view v) {
          c.sweep_modes.clear();
          for (const auto& s : split_list(v)) c.sweep_modes.push_back(parse_adaptation_kind(s));
        },
        [](const ExperimentConfig& c) {
          return join(c.sweep_modes, [](AdaptationKind k) { return std::string(to_string(k)); });
        }});
    return f;
  }();
  return table;
}

#undef FIELD_U64
#undef FIELD_REAL
#undef FIELD_TEXT
#undef FIELD_BOOL

const Field* find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) {
      if (f.required) k.push_back(f.key);
    }
    return k;
  }();
  return keys;
}

std::string_view config_key_help(std::string_view key) {
  const Field* f = find_field(key);
  return f ? std::string_view(f->help) : std::string_view();
}

ConfigValues parse_config_text(std::string_view text, const std::string& source) {
  ConfigValues values;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw Error(ErrorCode::kParse, where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::kParse, where + ": empty key");
    if (!find_field(key)) throw Error(ErrorCode::kParse, where + ": unknown key '" + key + "'");
    if (!values.emplace(key, value).second) throw Error(ErrorCode::kParse, where + ": key '" + key + "' repeated");
  }
  return values;
}

ConfigValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

ConfigValues merge_config(ConfigValues base, const ConfigValues& overrides) {
  for (const auto& [key, value] : overrides) base[key] = value;
  return base;
}

ExperimentConfig resolve_config(const ConfigValues& values) {
  for (const auto& [key, value] : values) {
    if (!find_field(key)) throw Error(ErrorCode::kParse, "unknown key '" + key + "'");
  }
  std::string missing;
  for (const auto& key : required_config_keys()) {
    if (!values.contains(key)) missing += (missing.empty() ? "" : ", ") + key;
  }
  if (!missing.empty()) throw Error(ErrorCode::kParse, "missing required fields: " + missing);

  ExperimentConfig config;
  for (const auto& f : fields()) {
    auto it = values.find(f.key);
    if (it == values.end()) continue;
    try {
      f.set(config, it->second);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kParse && std::string_view(e.what()).find("key '") == 0) throw;
      throw Error(ErrorCode::kParse, "key '" + f.key + "': " + e.what());
    }
  }
  if (!values.contains("data_seed")) config.data_seed = config.seed;
  config.data.feature_dim = config.shape.feature_dim;
  config.data.seed = config.data_seed;
  config.shape.num_classes = config.data.classes;
  config.partition.seed = config.seed;
  validate_config(config);
  return config;
}

ExperimentConfig load_config(const std::filesystem::path* file, const ConfigValues& flags) {
  ConfigValues values;
  if (file) values = read_config_file(*file);
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) values["output_dir"] = env;
  return resolve_config(merge_config(std::move(values), flags));
}

void validate_config(const ExperimentConfig& c) {
  auto get = [&](std::string_view key) { return find_field(key)->get(c); };
  if (c.partition.num_clients < 1) out_of_range("clients", get("clients"), ">= 1");
  if (!(c.sample_rate > 0.0 && c.sample_rate <= 1.0)) out_of_range("sample_rate", get("sample_rate"), "0 < rho <= 1");
  if (!(c.partition.beta > 0.0)) out_of_range("dirichlet_beta", get("dirichlet_beta"), "beta > 0");
  if (c.partition.scheme == PartitionScheme::kPathological && c.partition.classes_per_client < 1) {
    out_of_range("classes_per_client", get("classes_per_client"), ">= 1");
  }
  if (c.local_epochs < 1) out_of_range("local_epochs", get("local_epochs"), ">= 1");
  if (c.batch_size < 1) out_of_range("batch_size", get("batch_size"), ">= 1");
  if (!(c.optimizer.learning_rate >= 0.0)) out_of_range("lr", get("lr"), ">= 0");
  if (!(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0)) out_of_range("beta1", get("beta1"), "[0, 1)");
  if (!(c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0)) out_of_range("beta2", get("beta2"), "[0, 1)");
  if (!(c.optimizer.epsilon > 0.0)) out_of_range("eps", get("eps"), "> 0");
  if (!(c.optimizer.weight_decay >= 0.0)) out_of_range("weight_decay", get("weight_decay"), ">= 0");
  if (!(c.temperature > 0.0)) out_of_range("temperature", get("temperature"), "> 0");
  if (c.bytes_per_param < 1) out_of_range("bytes_per_param", get("bytes_per_param"), ">= 1");
  if (c.mode.lora.rank < 1) out_of_range("lora_rank", get("lora_rank"), ">= 1");
  if (c.mode.adapter_width < 1) out_of_range("aa_width", get("aa_width"), ">= 1");
  if (c.shape.feature_dim < 1) out_of_range("feature_dim", get("feature_dim"), ">= 1");
  if (c.shape.embed_dim < 1) out_of_range("embed_dim", get("embed_dim"), ">= 1");
  if (c.data.classes < 2) out_of_range("classes", get("classes"), ">= 2");
  if (c.data.per_class < 1) out_of_range("per_class", get("per_class"), ">= 1");
  if (!(c.data.separation >= 0.0)) out_of_range("separation", get("separation"), ">= 0");
  if (!(c.data.shift >= 0.0)) out_of_range("shift", get("shift"), ">= 0");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) out_of_range("test_fraction", get("test_fraction"), "(0, 1)");
  if (c.pretrain_per_class < 1) out_of_range("pretrain_per_class", get("pretrain_per_class"), ">= 1");
  if (c.pretrain_batch_size < 1) out_of_range("pretrain_batch_size", get("pretrain_batch_size"), ">= 1");
  if (!(c.pretrain_lr >= 0.0)) out_of_range("pretrain_lr", get("pretrain_lr"), ">= 0");
  for (std::size_t s : c.sweep_shots) {
    if (s < 1) out_of_range("sweep_shots", get("sweep_shots"), "every entry >= 1");
  }
}

std::string canonical_config(const ExperimentConfig& config) {
  std::vector<std::pair<std::string, std::string>> lines;
  for (const auto& f : fields()) lines.emplace_back(f.key, f.get(config));
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& [key, value] : lines) out += key + " = " + value + "\n";
  return out;
}

std::string config_hash(const ExperimentConfig& config) {
  // Where results go and whether wall time is recorded do not change them.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::istringstream lines(canonical_config(config));
  for (std::string line; std::getline(lines, line);) {
    if (line.starts_with("output_dir =") || line.starts_with("record_timing =")) continue;
    for (unsigned char ch : line + "\n") {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fedlora
