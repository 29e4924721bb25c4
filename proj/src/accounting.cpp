#include "fedlora/accounting.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "fedlora/error.hpp"
#include "fedlora/model.hpp"

namespace fedlora {
namespace {

std::string with_commas(std::uint64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

std::string ratio_string(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

// Pre-norm transformer block: fused qkv and output projections with bias,
// two layer norms, 4x MLP with bias.
std::uint64_t transformer_block_params(std::uint64_t w) {
  const std::uint64_t attention = (3 * w * w + 3 * w) + (w * w + w);
  const std::uint64_t norms = 2 * (2 * w);
  const std::uint64_t mlp = (w * 4 * w + 4 * w) + (4 * w * w + w);
  return attention + norms + mlp;
}

}  // namespace

std::uint64_t payload_bytes(std::uint64_t param_count, std::uint64_t bytes_per_param) {
  return param_count * bytes_per_param;
}

double to_megabytes(std::uint64_t bytes) {
  return static_cast<double>(bytes) / (1024.0 * 1024.0);
}

std::string format_megabytes(std::uint64_t bytes) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", to_megabytes(bytes));
  return buf;
}

std::uint64_t cohort_size(std::uint64_t num_clients, double sample_rate) {
  if (!(sample_rate > 0.0 && sample_rate <= 1.0)) {
    throw Error(ErrorCode::kParameter, "sample rate must lie in (0, 1], got " + std::to_string(sample_rate));
  }
  // The 1e-9 slack keeps products like 0.3 * 10 from flooring to 2.
  return static_cast<std::uint64_t>(std::floor(sample_rate * static_cast<double>(num_clients) + 1e-9));
}

std::uint64_t comm_cost_per_round(std::uint64_t num_clients, double sample_rate, std::uint64_t payload) {
  return cohort_size(num_clients, sample_rate) * 2 * payload;
}

CostLedger::CostLedger(std::uint64_t bytes_per_param) : bytes_per_param_(bytes_per_param) {
  if (bytes_per_param == 0) throw Error(ErrorCode::kParameter, "bytes per parameter must be positive");
}

const CostLedger::Entry& CostLedger::record(std::uint64_t round, std::uint64_t payload_params,
                                            std::uint64_t cohort) {
  Entry e;
  e.round = round;
  e.payload_params = payload_params;
  e.payload_bytes = payload_bytes(payload_params, bytes_per_param_);
  e.cohort = cohort;
  e.round_cost_bytes = cohort * 2 * e.payload_bytes;
  e.cumulative_bytes = cumulative_bytes() + e.round_cost_bytes;
  entries_.push_back(e);
  return entries_.back();
}

std::uint64_t CostLedger::cumulative_bytes() const noexcept {
  return entries_.empty() ? 0 : entries_.back().cumulative_bytes;
}

std::uint64_t reference_image_params(const ReferenceClipShape& s, bool include_projection) {
  const std::uint64_t w = s.image_width;
  const std::uint64_t grid = s.image_resolution / s.patch_size;
  const std::uint64_t patch_embed = 3 * w * s.patch_size * s.patch_size;
  const std::uint64_t class_token = w;
  const std::uint64_t positions = (grid * grid + 1) * w;
  const std::uint64_t ln_pre = 2 * w, ln_post = 2 * w;
  std::uint64_t total = patch_embed + class_token + positions + ln_pre +
                        s.image_layers * transformer_block_params(w) + ln_post;
  if (include_projection) total += w * s.embed_dim;
  return total;
}

std::uint64_t reference_text_params(const ReferenceClipShape& s) {
  const std::uint64_t w = s.text_width;
  return s.vocab_size * w + s.context_length * w + s.text_layers * transformer_block_params(w) + 2 * w +
         w * s.embed_dim;
}

std::uint64_t reference_total_params(const ReferenceClipShape& s) {
  return reference_image_params(s, true) + reference_text_params(s) + 1;
}

SizeCounters SizeCounters::defaults() {
  SizeCounters c;
  c.lora = [](std::uint64_t dim, std::uint64_t blocks, std::uint64_t rank) {
    return lora_param_count(dim, blocks, rank);
  };
  c.linear_head = [](std::uint64_t embed_dim, std::uint64_t classes) {
    ModelShape shape;
    shape.embed_dim = embed_dim;
    shape.num_classes = classes;
    AdaptationMode mode;
    mode.kind = AdaptationKind::kLc;
    return count_params(shape, mode);
  };
  c.attention_adapter = [](std::uint64_t embed_dim, std::uint64_t width) {
    ModelShape shape;
    shape.embed_dim = embed_dim;
    AdaptationMode mode;
    mode.kind = AdaptationKind::kAa;
    mode.adapter_width = width;
    return count_params(shape, mode);
  };
  return c;
}

std::vector<SizeRow> reproduce_size_tables(const SizeCounters& counters, std::uint64_t bytes_per_param) {
  std::vector<SizeRow> rows;
  auto add_count = [&](const std::string& table, const std::string& label, const std::string& expected,
                       std::uint64_t computed) {
    const std::string text = with_commas(computed);
    rows.push_back({table, label, expected, text, text == expected});
  };
  auto add_size = [&](const std::string& label, const std::string& expected, std::uint64_t params) {
    const std::string text = format_megabytes(payload_bytes(params, bytes_per_param));
    rows.push_back({"transfer", label, expected, text, text == expected});
  };

  const ReferenceClipShape ref;
  const std::uint64_t ranks[] = {1, 2, 4, 8, 16, 32};
  const char* text_expected[] = {"12,288", "24,576", "49,152", "98,304", "196,608", "393,216"};
  // As printed; the rank-1 image cell does not follow the per-block formula.
  const char* image_expected[] = {"18,423", "36,864", "73,728", "147,456", "294,912", "589,824"};
  for (std::size_t i = 0; i < 6; ++i) {
    add_count("ablation", "text r=" + std::to_string(ranks[i]), text_expected[i],
              counters.lora(ref.text_width, ref.text_layers, ranks[i]));
  }
  for (std::size_t i = 0; i < 6; ++i) {
    add_count("ablation", "image r=" + std::to_string(ranks[i]), image_expected[i],
              counters.lora(ref.image_width, ref.image_layers, ranks[i]));
  }

  const std::uint64_t flora = counters.lora(ref.text_width, ref.text_layers, 2);
  const std::uint64_t fft = reference_total_params(ref);
  const std::uint64_t lc_low = counters.linear_head(ref.embed_dim, 2);
  const std::uint64_t lc_high = counters.linear_head(ref.embed_dim, 397);
  const std::uint64_t vision_body = reference_image_params(ref, false);
  const std::uint64_t aa = counters.attention_adapter(ref.embed_dim, ref.embed_dim);

  add_count("transfer", "FedFFT params", "151,277,313", fft);
  add_size("FedFFT size", "577.078", fft);
  add_count("transfer", "FedLC K=2 params", "1,026", lc_low);
  add_size("FedLC K=2 size", "0.004", lc_low);
  add_count("transfer", "FedLC K=397 params", "203,661", lc_high);
  add_size("FedLC K=397 size", "0.777", lc_high);
  add_count("transfer", "FedVM-LC K=2 params", "87,457,026", vision_body + lc_low);
  add_size("FedVM-LC K=2 size", "333.622", vision_body + lc_low);
  add_count("transfer", "FedVM-LC K=397 params", "87,659,661", vision_body + lc_high);
  add_size("FedVM-LC K=397 size", "334.395", vision_body + lc_high);
  add_count("transfer", "FedAA params", "525,312", aa);
  add_size("FedAA size", "2.004", aa);
  add_count("transfer", "FLoRA params", "24,576", flora);
  add_size("FLoRA size", "0.094", flora);
  return rows;
}

std::vector<std::string> reduction_ratio_notes() {
  const ReferenceClipShape ref;
  const std::uint64_t flora = lora_param_count(ref.text_width, ref.text_layers, 2);
  const std::uint64_t fft = reference_total_params(ref);
  const double mb_ratio = std::stod(format_megabytes(payload_bytes(fft))) /
                          std::stod(format_megabytes(payload_bytes(flora)));
  const double param_ratio = static_cast<double>(fft) / static_cast<double>(flora);
  const double text_only_ratio = 117120512.0 / static_cast<double>(flora);
  return {
      "note: the headline 4766x reduction does not equal any ratio of two listed sizes",
      "ratio FedFFT/FLoRA by rounded MB (577.078 / 0.094): " + ratio_string(mb_ratio),
      "ratio FedFFT/FLoRA by parameters (" + with_commas(fft) + " / " + with_commas(flora) +
          "): " + ratio_string(param_ratio),
      "ratio text-encoder-only reading (117,120,512 / " + with_commas(flora) + "): " +
          ratio_string(text_only_ratio),
  };
}

std::size_t write_size_report(std::ostream& out, const std::vector<SizeRow>& rows) {
  std::size_t mismatches = 0;
  out << "table,label,expected,computed,match\n";
  for (const auto& r : rows) {
    out << r.table << ',' << r.label << ",\"" << r.expected << "\",\"" << r.computed << "\","
        << (r.match ? "yes" : "NO") << '\n';
    if (!r.match) ++mismatches;
  }
  for (const auto& note : reduction_ratio_notes()) out << "# " << note << '\n';
  return mismatches;
}

}  // namespace fedlora
