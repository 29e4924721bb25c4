#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedlora/matrix.hpp"
#include "fedlora/tape.hpp"

namespace fedlora {

class Rng;

/// What a client trains and exchanges each round.
enum class AdaptationKind {
  kFlora,  // LoRA adapters only
  kFft,    // every model parameter
  kLc,     // linear head on frozen image features
  kVmLc,   // image encoder + linear head
  kAa,     // residual bottleneck after the image encoder
};

enum class LoraTargets { kText, kImage, kBoth };

std::string_view to_string(AdaptationKind kind);
std::string_view to_string(LoraTargets targets);
AdaptationKind parse_adaptation_kind(std::string_view text);
LoraTargets parse_lora_targets(std::string_view text);

struct LoraSettings {
  LoraTargets targets = LoraTargets::kText;
  std::size_t rank = 2;
  double alpha = 32.0;
  // When set, the delta is scaled by alpha / rank instead of alpha.
  bool scale_by_rank = false;
};

struct AdaptationMode {
  AdaptationKind kind = AdaptationKind::kFlora;
  LoraSettings lora;
  std::size_t adapter_width = 16;  // AA bottleneck width
};

struct ModelShape {
  std::size_t feature_dim = 32;
  std::size_t embed_dim = 32;
  std::size_t image_blocks = 2;
  std::size_t text_blocks = 2;
  std::size_t num_classes = 10;
};

/// Low-rank pair attached to one base weight: W' = W + s * down * up, where
/// s is alpha (or alpha / rank with divide_by_rank).
struct LoraAdapter {
  Matrix down;  // d_in x r
  Matrix up;    // r x d_out
  double alpha = 1.0;
  bool divide_by_rank = false;
  std::string target;

  std::size_t rank() const { return down.cols(); }
  double scaling() const {
    return divide_by_rank ? alpha / static_cast<double>(rank()) : alpha;
  }
};

/// W + s * A * B. The base matrix is not modified.
Matrix lora_effective_weight(const Matrix& base, const LoraAdapter& adapter);

/// Parameter names. Every model parameter is a named matrix.
namespace names {
inline constexpr std::string_view kInputProj = "image.input_proj";
inline constexpr std::string_view kClassEmbeddings = "text.class_embeddings";
inline constexpr std::string_view kHead = "head.weight";
inline constexpr std::string_view kAaDownWeight = "aa.down.weight";
inline constexpr std::string_view kAaDownBias = "aa.down.bias";
inline constexpr std::string_view kAaUpWeight = "aa.up.weight";
inline constexpr std::string_view kAaUpBias = "aa.up.bias";
std::string image_block(std::size_t i);
std::string text_block(std::size_t i);
std::string lora_down(std::string_view target);
std::string lora_up(std::string_view target);
}  // namespace names

/// Residual bottleneck: out = f + softmax(f Wd + bd) Wu + bu.
struct AttentionAdapter {
  Matrix down_weight;  // d_img x width
  Matrix down_bias;    // 1 x width
  Matrix up_weight;    // width x d_img
  Matrix up_bias;      // 1 x d_img
};

/// Gaussian down projection, zero up projection and biases, so the adapter
/// starts as the identity on its input.
AttentionAdapter build_attention_adapter(std::size_t width, std::size_t embed_dim, Rng& rng);

/// Image encoder, text encoder, per-class embeddings and temperature, plus
/// whatever the current adaptation mode attaches (adapters, head, AA).
class DualEncoderModel {
 public:
  DualEncoderModel(ModelShape shape, double temperature);

  /// Fresh untrained base weights.
  static DualEncoderModel random_base(const ModelShape& shape, double temperature,
                                      std::uint64_t seed);

  const ModelShape& shape() const noexcept { return shape_; }
  double temperature() const noexcept { return temperature_; }
  void set_temperature(double tau);
  const AdaptationMode& mode() const noexcept { return mode_; }

  /// Drops any mode-specific parameters, then attaches the ones `mode`
  /// needs: LoRA pairs (A ~ N(0, 0.02^2), B = 0), a zero-shot linear head,
  /// or an attention adapter.
  void configure(const AdaptationMode& mode, std::uint64_t seed);

  bool has(std::string_view name) const;
  const Matrix& parameter(std::string_view name) const;
  /// Replaces a parameter; shape must match the existing one.
  void set_parameter(std::string_view name, Matrix value);
  /// Adds or replaces a parameter without shape checks (loading, configure).
  void insert_parameter(std::string name, Matrix value);
  const std::map<std::string, Matrix, std::less<>>& parameters() const noexcept { return params_; }

  std::optional<LoraAdapter> adapter_for(std::string_view target) const;
  void set_mode_tag(const AdaptationMode& mode) { mode_ = mode; }

  /// Names of the base (mode-independent) weights.
  std::vector<std::string> base_parameter_names() const;

 private:
  void remove_mode_parameters();

  ModelShape shape_;
  double temperature_;
  AdaptationMode mode_;
  std::map<std::string, Matrix, std::less<>> params_;
};

/// Graph nodes for one forward pass.
struct ForwardGraph {
  NodeId logits;
  std::map<std::string, NodeId, std::less<>> parameter_nodes;
};

/// Records the logits for a batch on `tape`. Parameters listed in
/// `trainable` become tape parameters; the rest are constants. Names in
/// `bound` reuse the given nodes instead of reading the model.
ForwardGraph build_forward(Tape& tape, const DualEncoderModel& model, const Matrix& features,
                           const std::set<std::string, std::less<>>& trainable = {},
                           const std::map<std::string, NodeId, std::less<>>& bound = {});

/// Mean negative log-likelihood of `labels` under softmax(logits).
NodeId cross_entropy_loss(Tape& tape, NodeId logits, std::span<const std::size_t> labels);

/// Image features, L2-normalized rows (batch x d).
Matrix encode_image(const DualEncoderModel& model, const Matrix& features);
/// Class features, L2-normalized rows (K x d).
Matrix encode_classes(const DualEncoderModel& model);
Matrix forward_logits(const DualEncoderModel& model, const Matrix& features);
/// Softmax over classes of cosine similarity / temperature.
Matrix forward_probs(const DualEncoderModel& model, const Matrix& features);

/// Mean over rows of -log p(label). Rows must sum to 1 within 1e-9.
double cross_entropy(const Matrix& probs, std::span<const std::size_t> labels);

/// Sets the linear head to [T^T; 0] using the adapter-free class features.
void init_linear_head_zero_shot(DualEncoderModel& model);

/// Names of the parameters exchanged (and trained) under `mode`,
/// ascending. Throws kMode when the model lacks what the mode needs.
std::vector<std::string> select_transfer_set(const DualEncoderModel& model,
                                             const AdaptationMode& mode);

/// Closed-form LoRA size for `blocks` square d x d projections.
std::uint64_t lora_param_count(std::uint64_t dim, std::uint64_t blocks, std::uint64_t rank);

/// Size of the transfer set for a model of `shape` under `mode`, computed
/// from the shape alone.
std::uint64_t count_params(const ModelShape& shape, const AdaptationMode& mode);

}  // namespace fedlora
