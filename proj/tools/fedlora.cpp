// fedlora: command-line front end for the federated fine-tuning simulator.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "fedlora/accounting.hpp"
#include "fedlora/checkpoint.hpp"
#include "fedlora/config.hpp"
#include "fedlora/dataset.hpp"
#include "fedlora/error.hpp"
#include "fedlora/experiment.hpp"
#include "fedlora/model.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace fedlora;

namespace {

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

// Federation keys are required by the config schema but unused by pretraining.
const ConfigValues kPretrainFallback{{"mode", "flora"}, {"partition", "iid"}, {"rounds", "0"}, {"clients", "1"}};

// --config plus one flag per config key; only flags actually given override.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> raw;

  void attach(CLI::App* cmd, bool seed_required) {
    cmd->add_option("--config", config_path, "key = value config file");
    for (const auto& key : config_keys()) {
      auto* opt = cmd->add_option("--" + dashed(key), raw[key], std::string(config_key_help(key)));
      if (key == "seed" && seed_required) opt->required();
    }
  }

  // `fallback` fills keys that neither the file nor the flags set.
  ExperimentConfig resolve(CLI::App* cmd, const ConfigValues& fallback = {}) const {
    ConfigValues flags;
    for (const auto& key : config_keys()) {
      if (cmd->count("--" + dashed(key)) > 0) flags[key] = raw.at(key);
    }
    const fs::path path(config_path);
    if (!fallback.empty()) {
      const ConfigValues file = config_path.empty() ? ConfigValues{} : read_config_file(path);
      for (const auto& [key, value] : fallback) {
        if (!file.contains(key) && !flags.contains(key)) flags[key] = value;
      }
    }
    return load_config(config_path.empty() ? nullptr : &path, flags);
  }
};

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

void close_output(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
  return buf;
}

int cmd_gen_data(const SynthSpec& spec, const std::string& out_path) {
  const Dataset data = synth_dataset(spec);
  const fs::path path(out_path);
  auto out = open_output(path);
  write_dataset(out, data);
  close_output(out, path);
  std::cout << "wrote " << path.string() << ": n=" << data.size() << " K=" << data.num_classes
            << " d_feat=" << data.feature_dim() << '\n';
  return 0;
}

int cmd_pretrain(const ExperimentConfig& config, const std::string& out_path) {
  const PretrainResult pre = pretrain_base(config);
  const fs::path path = out_path.empty() ? fs::path(config.output_dir) / "base.ckpt" : fs::path(out_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_model(path, pre.model);

  const Dataset target = load_target(config);
  const PreparedData data = prepare_data(config, target);
  const Evaluation zero_shot = evaluate(pre.model, data.test);

  nlohmann::ordered_json j;
  j["checkpoint"] = path.string();
  j["config_hash"] = config_hash(config);
  j["source_accuracy"] = pre.source_accuracy;
  j["zero_shot_accuracy"] = zero_shot.accuracy;
  j["zero_shot_loss"] = zero_shot.loss;
  const fs::path report = path.parent_path() / "pretrain.json";
  auto out = open_output(report);
  out << j.dump(2) << '\n';
  close_output(out, report);

  std::cout << "checkpoint " << path.string() << "\n"
            << "source accuracy " << percent(pre.source_accuracy) << "\n"
            << "zero-shot accuracy on target test set " << percent(zero_shot.accuracy) << '\n';
  return 0;
}

int cmd_run(const ExperimentConfig& config, bool quiet) {
  const fs::path dir(config.output_dir);
  const fs::path metrics_path = dir / "metrics.csv";
  auto metrics = open_output(metrics_path);
  write_metrics_header(metrics);
  const ExperimentResult result = run_experiment(config, nullptr, [&](const RoundReport& r) {
    write_metrics_row(metrics, r, config.seed);
    if (!quiet) {
      std::cerr << "round " << r.round << " acc " << percent(r.test_accuracy) << " train_loss " << r.mean_train_loss
                << " cum " << format_megabytes(r.cumulative_bytes) << " MB\n";
    }
  });
  close_output(metrics, metrics_path);

  const fs::path summary_path = dir / "summary.json";
  auto summary = open_output(summary_path);
  summary << summary_json(config, result);
  close_output(summary, summary_path);

  const fs::path manifest_path = dir / "partition.json";
  auto manifest = open_output(manifest_path);
  manifest << result.partition_manifest << '\n';
  close_output(manifest, manifest_path);

  std::cout << "mode " << to_string(config.mode.kind) << ", " << result.rounds.size() << " rounds, payload "
            << result.payload_params << " params\n"
            << "zero-shot " << percent(result.zero_shot.accuracy) << " -> final "
            << percent(result.final_accuracy()) << ", total " << format_megabytes(result.total_bytes()) << " MB\n"
            << "config " << result.config_hash << ", metrics in " << metrics_path.string() << '\n';
  return 0;
}

int cmd_sweep(const ExperimentConfig& config) {
  if (config.sweep_shots.empty() || config.sweep_modes.empty() || config.sweep_seeds.empty()) {
    std::cerr << "warning: empty sweep (shots, modes or seeds list), nothing to do\n";
    return 0;
  }
  const auto cells = sweep_fewshot(config);
  const fs::path path = fs::path(config.output_dir) / "fewshot.csv";
  auto out = open_output(path);
  write_fewshot_csv(out, cells);
  close_output(out, path);
  write_fewshot_csv(std::cout, cells);
  return 0;
}

int cmd_verify_tables(bool perturb_lora) {
  SizeCounters counters = SizeCounters::defaults();
  if (perturb_lora) {
    counters.lora = [](std::uint64_t dim, std::uint64_t blocks, std::uint64_t rank) {
      return lora_param_count(dim, blocks, rank) + 1;
    };
  }
  const auto rows = reproduce_size_tables(counters);
  const std::size_t mismatches = write_size_report(std::cout, rows);
  if (mismatches > 0) {
    std::cerr << mismatches << " of " << rows.size() << " table cells differ:\n";
    for (const auto& r : rows) {
      if (!r.match) std::cerr << "  " << r.table << " " << r.label << ": expected " << r.expected << ", computed "
                              << r.computed << '\n';
    }
    return 1;
  }
  std::cerr << "all " << rows.size() << " table cells match\n";
  return 0;
}

int cmd_count_params(const ModelShape& shape, const AdaptationMode& mode, std::uint64_t bytes_per_param) {
  const std::uint64_t params = count_params(shape, mode);
  const std::uint64_t bytes = payload_bytes(params, bytes_per_param);
  std::cout << "mode " << to_string(mode.kind) << "\nparams " << params << "\nbytes " << bytes << "\nmegabytes "
            << format_megabytes(bytes) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated fine-tuning simulator for dual-encoder classifiers"};
  app.require_subcommand(1);

  SynthSpec gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset file");
  gen_cmd->add_option("--out", gen_out, "output path")->required();
  gen_cmd->add_option("--seed", gen.seed, "data seed")->required();
  gen_cmd->add_option("--classes", gen.classes, "classes K")->capture_default_str();
  gen_cmd->add_option("--feature-dim", gen.feature_dim, "feature width")->capture_default_str();
  gen_cmd->add_option("--per-class", gen.per_class, "samples per class")->capture_default_str();
  gen_cmd->add_option("--separation", gen.separation, "class-mean norm")->capture_default_str();
  gen_cmd->add_option("--shift", gen.shift, "shift away from the source means")->capture_default_str();
  gen_cmd->add_option("--variant", gen.variant, "independent sample draw index")->capture_default_str();

  ConfigFlags pre_flags;
  std::string pre_out;
  auto* pre_cmd = app.add_subcommand("pretrain", "centrally train a base model on the source task");
  pre_flags.attach(pre_cmd, true);
  pre_cmd->add_option("--out", pre_out, "checkpoint path (default <output_dir>/base.ckpt)");

  ConfigFlags run_flags;
  bool quiet = false;
  auto* run_cmd = app.add_subcommand("run", "run one federated experiment");
  run_flags.attach(run_cmd, true);
  run_cmd->add_flag("--quiet", quiet, "no per-round progress on stderr");

  ConfigFlags sweep_flags;
  auto* sweep_cmd = app.add_subcommand("sweep-fewshot", "final accuracy per (mode, shots), averaged over seeds");
  sweep_flags.attach(sweep_cmd, true);

  bool perturb = false;
  auto* verify_cmd = app.add_subcommand("verify-tables", "recompute the published size tables");
  verify_cmd->add_flag("--perturb-lora", perturb, "negative control: off-by-one LoRA count");

  ModelShape shape;
  AdaptationMode mode;
  std::string mode_text = "flora", targets_text = "text";
  std::uint64_t bpp = kDefaultBytesPerParam;
  auto* count_cmd = app.add_subcommand("count-params", "transfer-set size for a shape and mode");
  count_cmd->add_option("--mode", mode_text, "flora | fft | lc | vm_lc | aa")->capture_default_str();
  count_cmd->add_option("--feature-dim", shape.feature_dim)->capture_default_str();
  count_cmd->add_option("--embed-dim", shape.embed_dim)->capture_default_str();
  count_cmd->add_option("--image-blocks", shape.image_blocks)->capture_default_str();
  count_cmd->add_option("--text-blocks", shape.text_blocks)->capture_default_str();
  count_cmd->add_option("--classes", shape.num_classes)->capture_default_str();
  count_cmd->add_option("--lora-targets", targets_text, "text | image | both")->capture_default_str();
  count_cmd->add_option("--lora-rank", mode.lora.rank)->capture_default_str();
  count_cmd->add_option("--aa-width", mode.adapter_width)->capture_default_str();
  count_cmd->add_option("--bytes-per-param", bpp)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error[usage]: " << msg << '\n';
    return 64;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, gen_out);
    if (*pre_cmd) return cmd_pretrain(pre_flags.resolve(pre_cmd, kPretrainFallback), pre_out);
    if (*run_cmd) return cmd_run(run_flags.resolve(run_cmd), quiet);
    if (*sweep_cmd) return cmd_sweep(sweep_flags.resolve(sweep_cmd));
    if (*verify_cmd) return cmd_verify_tables(perturb);
    if (*count_cmd) {
      mode.kind = parse_adaptation_kind(mode_text);
      mode.lora.targets = parse_lora_targets(targets_text);
      return cmd_count_params(shape, mode, bpp);
    }
  } catch (const Error& e) {
    std::cerr << "error[" << error_code_name(e.code()) << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
