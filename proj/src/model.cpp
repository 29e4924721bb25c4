#include "fedlora/model.hpp"

#include <algorithm>
#include <cmath>

#include "fedlora/error.hpp"
#include "fedlora/rng.hpp"

namespace fedlora {

std::string_view to_string(AdaptationKind kind) {
  switch (kind) {
    case AdaptationKind::kFlora: return "flora";
    case AdaptationKind::kFft: return "fft";
    case AdaptationKind::kLc: return "lc";
    case AdaptationKind::kVmLc: return "vm_lc";
    case AdaptationKind::kAa: return "aa";
  }
  return "unknown";
}

std::string_view to_string(LoraTargets targets) {
  switch (targets) {
    case LoraTargets::kText: return "text";
    case LoraTargets::kImage: return "image";
    case LoraTargets::kBoth: return "both";
  }
  return "unknown";
}

AdaptationKind parse_adaptation_kind(std::string_view text) {
  for (auto kind : {AdaptationKind::kFlora, AdaptationKind::kFft, AdaptationKind::kLc,
                    AdaptationKind::kVmLc, AdaptationKind::kAa}) {
    if (text == to_string(kind)) return kind;
  }
  throw Error(ErrorCode::kParse, "unknown adaptation mode '" + std::string(text) +
                                     "' (expected flora, fft, lc, vm_lc or aa)");
}

LoraTargets parse_lora_targets(std::string_view text) {
  for (auto t : {LoraTargets::kText, LoraTargets::kImage, LoraTargets::kBoth}) {
    if (text == to_string(t)) return t;
  }
  throw Error(ErrorCode::kParse,
              "unknown LoRA target '" + std::string(text) + "' (expected text, image or both)");
}

Matrix lora_effective_weight(const Matrix& base, const LoraAdapter& adapter) {
  if (adapter.down.cols() != adapter.up.rows() || adapter.down.rows() != base.rows() ||
      adapter.up.cols() != base.cols()) {
    throw Error(ErrorCode::kShape, "lora_effective_weight: base " + shape_string(base) +
                                       " with A " + shape_string(adapter.down) + " and B " +
                                       shape_string(adapter.up));
  }
  return add(base, scale(matmul(adapter.down, adapter.up), adapter.scaling()));
}

namespace names {
std::string image_block(std::size_t i) { return "image.block." + std::to_string(i); }
std::string text_block(std::size_t i) { return "text.block." + std::to_string(i); }
std::string lora_down(std::string_view target) { return "lora." + std::string(target) + ".A"; }
std::string lora_up(std::string_view target) { return "lora." + std::string(target) + ".B"; }
}  // namespace names

AttentionAdapter build_attention_adapter(std::size_t width, std::size_t embed_dim, Rng& rng) {
  if (width == 0) throw Error(ErrorCode::kParameter, "attention adapter width must be >= 1");
  return AttentionAdapter{
      Matrix::gaussian(embed_dim, width, 1.0 / std::sqrt(static_cast<double>(embed_dim)), rng),
      Matrix(1, width), Matrix(width, embed_dim), Matrix(1, embed_dim)};
}

DualEncoderModel::DualEncoderModel(ModelShape shape, double temperature) : shape_(shape), temperature_(1.0) {
  if (shape.feature_dim == 0 || shape.embed_dim == 0 || shape.image_blocks == 0 ||
      shape.text_blocks == 0) {
    throw Error(ErrorCode::kParameter, "model dimensions and block counts must be >= 1");
  }
  if (shape.num_classes < 2) throw Error(ErrorCode::kParameter, "model needs at least 2 classes");
  set_temperature(temperature);
}

DualEncoderModel DualEncoderModel::random_base(const ModelShape& shape, double temperature,
                                               std::uint64_t seed) {
  DualEncoderModel model(shape, temperature);
  Rng rng(derive_seed(seed, {0xba5e}));
  const double d = static_cast<double>(shape.embed_dim);
  model.params_.emplace(std::string(names::kInputProj),
                        Matrix::gaussian(shape.feature_dim, shape.embed_dim,
                                         1.0 / std::sqrt(static_cast<double>(shape.feature_dim)), rng));
  for (std::size_t i = 0; i < shape.image_blocks; ++i) {
    model.params_.emplace(names::image_block(i),
                          Matrix::gaussian(shape.embed_dim, shape.embed_dim, 1.0 / std::sqrt(d), rng));
  }
  for (std::size_t i = 0; i < shape.text_blocks; ++i) {
    model.params_.emplace(names::text_block(i),
                          Matrix::gaussian(shape.embed_dim, shape.embed_dim, 1.0 / std::sqrt(d), rng));
  }
  model.params_.emplace(std::string(names::kClassEmbeddings),
                        Matrix::gaussian(shape.num_classes, shape.embed_dim, 1.0, rng));
  model.mode_.kind = AdaptationKind::kFft;
  return model;
}

void DualEncoderModel::set_temperature(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw Error(ErrorCode::kParameter, "temperature must be positive, got " + std::to_string(tau));
  }
  temperature_ = tau;
}

std::vector<std::string> DualEncoderModel::base_parameter_names() const {
  std::vector<std::string> out{std::string(names::kInputProj), std::string(names::kClassEmbeddings)};
  for (std::size_t i = 0; i < shape_.image_blocks; ++i) out.push_back(names::image_block(i));
  for (std::size_t i = 0; i < shape_.text_blocks; ++i) out.push_back(names::text_block(i));
  std::sort(out.begin(), out.end());
  return out;
}

void DualEncoderModel::remove_mode_parameters() {
  const auto base = base_parameter_names();
  for (auto it = params_.begin(); it != params_.end();) {
    if (std::binary_search(base.begin(), base.end(), it->first)) {
      ++it;
    } else {
      it = params_.erase(it);
    }
  }
}

void DualEncoderModel::configure(const AdaptationMode& mode, std::uint64_t seed) {
  for (const auto& name : base_parameter_names()) {
    if (!has(name)) throw Error(ErrorCode::kMode, "configure: base weight '" + name + "' missing");
  }
  remove_mode_parameters();
  mode_ = mode;
  Rng rng(derive_seed(seed, {0xada7, static_cast<std::uint64_t>(mode.kind)}));
  const std::size_t d = shape_.embed_dim;

  switch (mode.kind) {
    case AdaptationKind::kFlora: {
      if (mode.lora.rank == 0) throw Error(ErrorCode::kParameter, "LoRA rank must be >= 1");
      auto attach = [&](const std::string& target) {
        params_.emplace(names::lora_down(target), Matrix::gaussian(d, mode.lora.rank, 0.02, rng));
        params_.emplace(names::lora_up(target), Matrix(mode.lora.rank, d));
      };
      if (mode.lora.targets != LoraTargets::kText) {
        for (std::size_t i = 0; i < shape_.image_blocks; ++i) attach(names::image_block(i));
      }
      if (mode.lora.targets != LoraTargets::kImage) {
        for (std::size_t i = 0; i < shape_.text_blocks; ++i) attach(names::text_block(i));
      }
      break;
    }
    case AdaptationKind::kLc:
    case AdaptationKind::kVmLc:
      init_linear_head_zero_shot(*this);
      break;
    case AdaptationKind::kAa: {
      AttentionAdapter aa = build_attention_adapter(mode.adapter_width, d, rng);
      params_.emplace(std::string(names::kAaDownWeight), std::move(aa.down_weight));
      params_.emplace(std::string(names::kAaDownBias), std::move(aa.down_bias));
      params_.emplace(std::string(names::kAaUpWeight), std::move(aa.up_weight));
      params_.emplace(std::string(names::kAaUpBias), std::move(aa.up_bias));
      break;
    }
    case AdaptationKind::kFft:
      break;
  }
}

bool DualEncoderModel::has(std::string_view name) const { return params_.find(name) != params_.end(); }

const Matrix& DualEncoderModel::parameter(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw Error(ErrorCode::kMode, "model has no parameter '" + std::string(name) + "'");
  }
  return it->second;
}

void DualEncoderModel::set_parameter(std::string_view name, Matrix value) {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw Error(ErrorCode::kProtocol, "model has no parameter '" + std::string(name) + "'");
  }
  if (!it->second.same_shape(value)) {
    throw Error(ErrorCode::kProtocol, "parameter '" + std::string(name) + "' is " +
                                          shape_string(it->second) + ", got " + shape_string(value));
  }
  it->second = std::move(value);
}

void DualEncoderModel::insert_parameter(std::string name, Matrix value) {
  params_.insert_or_assign(std::move(name), std::move(value));
}

std::optional<LoraAdapter> DualEncoderModel::adapter_for(std::string_view target) const {
  auto down = params_.find(names::lora_down(target));
  auto up = params_.find(names::lora_up(target));
  if (down == params_.end() || up == params_.end()) return std::nullopt;
  return LoraAdapter{down->second, up->second, mode_.lora.alpha, mode_.lora.scale_by_rank,
                     std::string(target)};
}

namespace {

class GraphBuilder {
 public:
  GraphBuilder(Tape& tape, const DualEncoderModel& model,
               const std::set<std::string, std::less<>>& trainable, ForwardGraph& graph)
      : tape_(tape), model_(model), trainable_(trainable), graph_(graph) {}

  NodeId node(std::string_view name) {
    auto it = graph_.parameter_nodes.find(name);
    if (it != graph_.parameter_nodes.end()) return it->second;
    const Matrix& value = model_.parameter(name);
    NodeId id = trainable_.contains(name) ? tape_.parameter(value) : tape_.constant(value);
    graph_.parameter_nodes.emplace(std::string(name), id);
    return id;
  }

  /// W, or W + s * A * B when an adapter targets W.
  NodeId effective(const std::string& name, bool with_adapters) {
    NodeId base = node(name);
    if (!with_adapters) return base;
    const std::string down = names::lora_down(name);
    const std::string up = names::lora_up(name);
    if (!model_.has(down) || !model_.has(up)) return base;
    const LoraSettings& lora = model_.mode().lora;
    const double s = lora.scale_by_rank
                         ? lora.alpha / static_cast<double>(model_.parameter(down).cols())
                         : lora.alpha;
    return tape_.add(base, tape_.scale(tape_.matmul(node(down), node(up)), s));
  }

  NodeId image(const Matrix& features) {
    const ModelShape& shape = model_.shape();
    if (features.cols() != shape.feature_dim) {
      throw Error(ErrorCode::kShape, "image features are " + shape_string(features) + ", model expects " +
                                         std::to_string(shape.feature_dim) + " columns");
    }
    NodeId h = tape_.matmul(tape_.constant(features), node(names::kInputProj));
    for (std::size_t i = 0; i < shape.image_blocks; ++i) {
      h = tape_.tanh(tape_.matmul(h, effective(names::image_block(i), true)));
    }
    h = tape_.row_normalize(h);
    if (model_.mode().kind == AdaptationKind::kAa && model_.has(names::kAaDownWeight)) {
      NodeId gate = tape_.row_softmax(
          tape_.add_row_broadcast(tape_.matmul(h, node(names::kAaDownWeight)), node(names::kAaDownBias)));
      NodeId residual =
          tape_.add_row_broadcast(tape_.matmul(gate, node(names::kAaUpWeight)), node(names::kAaUpBias));
      h = tape_.row_normalize(tape_.add(h, residual));
    }
    return h;
  }

  NodeId text(bool with_adapters) {
    NodeId t = node(names::kClassEmbeddings);
    for (std::size_t i = 0; i < model_.shape().text_blocks; ++i) {
      t = tape_.tanh(tape_.matmul(t, effective(names::text_block(i), with_adapters)));
    }
    return tape_.row_normalize(t);
  }

 private:
  Tape& tape_;
  const DualEncoderModel& model_;
  const std::set<std::string, std::less<>>& trainable_;
  ForwardGraph& graph_;
};

bool uses_head(const DualEncoderModel& model) {
  const auto kind = model.mode().kind;
  return (kind == AdaptationKind::kLc || kind == AdaptationKind::kVmLc) && model.has(names::kHead);
}

}  // namespace

ForwardGraph build_forward(Tape& tape, const DualEncoderModel& model, const Matrix& features,
                           const std::set<std::string, std::less<>>& trainable,
                           const std::map<std::string, NodeId, std::less<>>& bound) {
  ForwardGraph graph;
  graph.parameter_nodes = bound;
  GraphBuilder builder(tape, model, trainable, graph);
  const double inv_tau = 1.0 / model.temperature();
  NodeId img = builder.image(features);
  if (uses_head(model)) {
    graph.logits = tape.scale(tape.matmul(tape.append_ones_column(img), builder.node(names::kHead)), inv_tau);
  } else {
    NodeId txt = builder.text(true);
    graph.logits = tape.scale(tape.matmul(img, tape.transpose(txt)), inv_tau);
  }
  return graph;
}

NodeId cross_entropy_loss(Tape& tape, NodeId logits, std::span<const std::size_t> labels) {
  const Matrix& value = tape.value(logits);
  if (labels.size() != value.rows()) {
    throw Error(ErrorCode::kShape, "cross_entropy_loss: " + std::to_string(labels.size()) +
                                       " labels for logits " + shape_string(value));
  }
  for (std::size_t label : labels) {
    if (label >= value.cols()) {
      throw Error(ErrorCode::kLabel, "label " + std::to_string(label) + " out of range for " +
                                         std::to_string(value.cols()) + " classes");
    }
  }
  NodeId picked = tape.pick_per_row(tape.row_log_softmax(logits),
                                    std::vector<std::size_t>(labels.begin(), labels.end()));
  return tape.scale(tape.mean(picked), -1.0);
}

Matrix encode_image(const DualEncoderModel& model, const Matrix& features) {
  Tape tape;
  ForwardGraph graph;
  const std::set<std::string, std::less<>> none;
  GraphBuilder builder(tape, model, none, graph);
  return tape.value(builder.image(features));
}

Matrix encode_classes(const DualEncoderModel& model) {
  Tape tape;
  ForwardGraph graph;
  const std::set<std::string, std::less<>> none;
  GraphBuilder builder(tape, model, none, graph);
  return tape.value(builder.text(true));
}

Matrix forward_logits(const DualEncoderModel& model, const Matrix& features) {
  if (!(model.temperature() > 0.0)) throw Error(ErrorCode::kParameter, "temperature must be positive");
  Tape tape;
  return tape.value(build_forward(tape, model, features).logits);
}

Matrix forward_probs(const DualEncoderModel& model, const Matrix& features) {
  return row_softmax(forward_logits(model, features));
}

double cross_entropy(const Matrix& probs, std::span<const std::size_t> labels) {
  if (labels.size() != probs.rows()) {
    throw Error(ErrorCode::kShape, "cross_entropy: " + std::to_string(labels.size()) +
                                       " labels for probabilities " + shape_string(probs));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double row_sum = 0.0;
    for (double p : probs.row(i)) row_sum += p;
    if (std::abs(row_sum - 1.0) > 1e-9) {
      throw Error(ErrorCode::kParameter, "cross_entropy: row " + std::to_string(i) +
                                             " sums to " + std::to_string(row_sum));
    }
    if (labels[i] >= probs.cols()) {
      throw Error(ErrorCode::kLabel, "label " + std::to_string(labels[i]) + " out of range for " +
                                         std::to_string(probs.cols()) + " classes");
    }
    total += -std::log(probs(i, labels[i]));
  }
  return total / static_cast<double>(probs.rows());
}

void init_linear_head_zero_shot(DualEncoderModel& model) {
  const auto kind = model.mode().kind;
  if (kind != AdaptationKind::kLc && kind != AdaptationKind::kVmLc) {
    throw Error(ErrorCode::kMode, "linear head requires lc or vm_lc mode, model is in " +
                                      std::string(to_string(kind)));
  }
  Tape tape;
  ForwardGraph graph;
  const std::set<std::string, std::less<>> none;
  GraphBuilder builder(tape, model, none, graph);
  const Matrix& classes = tape.value(builder.text(false));
  const std::size_t d = model.shape().embed_dim;
  Matrix head(d + 1, model.shape().num_classes);
  for (std::size_t k = 0; k < classes.rows(); ++k)
    for (std::size_t j = 0; j < d; ++j) head(j, k) = classes(k, j);
  model.insert_parameter(std::string(names::kHead), std::move(head));
}

std::vector<std::string> select_transfer_set(const DualEncoderModel& model, const AdaptationMode& mode) {
  std::vector<std::string> out;
  auto require = [&](const std::string& name) {
    if (!model.has(name)) {
      throw Error(ErrorCode::kMode, std::string(to_string(mode.kind)) + " transfer set needs '" +
                                        name + "', which the model does not have");
    }
    out.push_back(name);
  };
  const ModelShape& shape = model.shape();
  switch (mode.kind) {
    case AdaptationKind::kFlora:
      if (mode.lora.targets != LoraTargets::kText) {
        for (std::size_t i = 0; i < shape.image_blocks; ++i) {
          require(names::lora_down(names::image_block(i)));
          require(names::lora_up(names::image_block(i)));
        }
      }
      if (mode.lora.targets != LoraTargets::kImage) {
        for (std::size_t i = 0; i < shape.text_blocks; ++i) {
          require(names::lora_down(names::text_block(i)));
          require(names::lora_up(names::text_block(i)));
        }
      }
      break;
    case AdaptationKind::kLc:
      require(std::string(names::kHead));
      break;
    case AdaptationKind::kVmLc:
      require(std::string(names::kHead));
      require(std::string(names::kInputProj));
      for (std::size_t i = 0; i < shape.image_blocks; ++i) require(names::image_block(i));
      break;
    case AdaptationKind::kAa:
      for (auto name : {names::kAaDownWeight, names::kAaDownBias, names::kAaUpWeight, names::kAaUpBias})
        require(std::string(name));
      break;
    case AdaptationKind::kFft:
      for (const auto& [name, value] : model.parameters()) out.push_back(name);
      break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t lora_param_count(std::uint64_t dim, std::uint64_t blocks, std::uint64_t rank) {
  return blocks * rank * (dim + dim);
}

std::uint64_t count_params(const ModelShape& shape, const AdaptationMode& mode) {
  const std::uint64_t d = shape.embed_dim;
  const std::uint64_t f = shape.feature_dim;
  const std::uint64_t k = shape.num_classes;
  const std::uint64_t head = (d + 1) * k;
  switch (mode.kind) {
    case AdaptationKind::kFlora: {
      std::uint64_t total = 0;
      if (mode.lora.targets != LoraTargets::kText) total += lora_param_count(d, shape.image_blocks, mode.lora.rank);
      if (mode.lora.targets != LoraTargets::kImage) total += lora_param_count(d, shape.text_blocks, mode.lora.rank);
      return total;
    }
    case AdaptationKind::kLc:
      return head;
    case AdaptationKind::kVmLc:
      return f * d + shape.image_blocks * d * d + head;
    case AdaptationKind::kAa: {
      const std::uint64_t w = mode.adapter_width;
      return 2 * d * w + w + d;
    }
    case AdaptationKind::kFft:
      return f * d + (shape.image_blocks + shape.text_blocks) * d * d + k * d;
  }
  return 0;
}

}  // namespace fedlora
