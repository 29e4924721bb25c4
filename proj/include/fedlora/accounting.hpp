#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace fedlora {

inline constexpr std::uint64_t kDefaultBytesPerParam = 4;

std::uint64_t payload_bytes(std::uint64_t param_count, std::uint64_t bytes_per_param = kDefaultBytesPerParam);

/// bytes / 1024^2.
double to_megabytes(std::uint64_t bytes);
/// Megabytes rounded to three decimals, e.g. "0.094".
std::string format_megabytes(std::uint64_t bytes);

/// floor(rho * N). Throws kParameter unless 0 < rho <= 1.
std::uint64_t cohort_size(std::uint64_t num_clients, double sample_rate);

/// cohort_size * 2 * payload_bytes: one download and one upload per
/// participating client.
std::uint64_t comm_cost_per_round(std::uint64_t num_clients, double sample_rate, std::uint64_t payload_bytes);

/// Per-round communication ledger owned by the coordinator.
class CostLedger {
 public:
  struct Entry {
    std::uint64_t round = 0;
    std::uint64_t payload_params = 0;
    std::uint64_t payload_bytes = 0;
    std::uint64_t cohort = 0;
    std::uint64_t round_cost_bytes = 0;
    std::uint64_t cumulative_bytes = 0;
  };

  explicit CostLedger(std::uint64_t bytes_per_param = kDefaultBytesPerParam);

  const Entry& record(std::uint64_t round, std::uint64_t payload_params, std::uint64_t cohort);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::uint64_t cumulative_bytes() const noexcept;
  std::uint64_t bytes_per_param() const noexcept { return bytes_per_param_; }

 private:
  std::uint64_t bytes_per_param_;
  std::vector<Entry> entries_;
};

/// Transformer widths of the reference dual encoder (ViT-B/32 image tower,
/// 12-layer text tower) used to reproduce published sizes without weights.
struct ReferenceClipShape {
  std::uint64_t image_width = 768;
  std::uint64_t image_layers = 12;
  std::uint64_t patch_size = 32;
  std::uint64_t image_resolution = 224;
  std::uint64_t text_width = 512;
  std::uint64_t text_layers = 12;
  std::uint64_t vocab_size = 49408;
  std::uint64_t context_length = 77;
  std::uint64_t embed_dim = 512;
};

/// Image tower parameter count; the final projection is optional.
std::uint64_t reference_image_params(const ReferenceClipShape& shape, bool include_projection);
std::uint64_t reference_text_params(const ReferenceClipShape& shape);
/// Both towers plus the logit scale.
std::uint64_t reference_total_params(const ReferenceClipShape& shape);

/// Counting hooks, so a caller can substitute a formula (negative controls).
struct SizeCounters {
  std::function<std::uint64_t(std::uint64_t dim, std::uint64_t blocks, std::uint64_t rank)> lora;
  std::function<std::uint64_t(std::uint64_t embed_dim, std::uint64_t classes)> linear_head;
  std::function<std::uint64_t(std::uint64_t embed_dim, std::uint64_t width)> attention_adapter;

  static SizeCounters defaults();
};

struct SizeRow {
  std::string table;     // "ablation" or "transfer"
  std::string label;     // e.g. "text r=2", "FedLC K=397 size"
  std::string expected;  // as printed in the published table
  std::string computed;
  bool match = false;
};

std::vector<SizeRow> reproduce_size_tables(const SizeCounters& counters = SizeCounters::defaults(),
                                           std::uint64_t bytes_per_param = kDefaultBytesPerParam);

/// Candidate readings of the headline reduction factor, each computed.
std::vector<std::string> reduction_ratio_notes();

/// Writes "table,label,expected,computed,match" rows plus the ratio notes.
/// Returns the number of mismatched rows.
std::size_t write_size_report(std::ostream& out, const std::vector<SizeRow>& rows);

}  // namespace fedlora
