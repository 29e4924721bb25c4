#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "fedlora/matrix.hpp"

namespace fedlora {

struct NodeId {
  std::size_t index = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class OpKind : int {
  kConstant,
  kParameter,
  kMatMul,
  kAdd,
  kAddRowBroadcast,
  kScale,
  kTranspose,
  kRowSoftmax,
  kRowLogSoftmax,
  kLog,
  kTanh,
  kGatherRows,
  kPickPerRow,
  kMean,
  kSum,
  kRowNormalize,
  kAppendOnesColumn,
};

struct OpAttributes {
  double scalar = 0.0;               // kScale factor
  std::vector<std::size_t> indices;  // kGatherRows rows, kPickPerRow columns
};

/// Gradient of the loss with respect to each trainable leaf.
using Gradients = std::map<NodeId, Matrix>;

/// Eager reverse-mode tape.
///
/// Every primitive is evaluated when it is recorded, so the recording order
/// is a topological order by construction. Leaves are either constants or
/// trainable parameters; only parameters receive gradients.
class Tape {
 public:
  NodeId constant(Matrix value);
  NodeId parameter(Matrix value);

  /// Generic entry point. Throws kUnsupportedOp for kinds without a rule.
  NodeId apply(OpKind kind, std::span<const NodeId> inputs, OpAttributes attributes = {});

  NodeId matmul(NodeId a, NodeId b) { return binary(OpKind::kMatMul, a, b); }
  NodeId add(NodeId a, NodeId b) { return binary(OpKind::kAdd, a, b); }
  NodeId add_row_broadcast(NodeId a, NodeId row) { return binary(OpKind::kAddRowBroadcast, a, row); }
  NodeId scale(NodeId a, double s);
  NodeId transpose(NodeId a) { return unary(OpKind::kTranspose, a); }
  NodeId row_softmax(NodeId a) { return unary(OpKind::kRowSoftmax, a); }
  NodeId row_log_softmax(NodeId a) { return unary(OpKind::kRowLogSoftmax, a); }
  NodeId log(NodeId a) { return unary(OpKind::kLog, a); }
  NodeId tanh(NodeId a) { return unary(OpKind::kTanh, a); }
  NodeId gather_rows(NodeId a, std::vector<std::size_t> rows);
  /// out(i, 0) = a(i, columns[i]).
  NodeId pick_per_row(NodeId a, std::vector<std::size_t> columns);
  NodeId mean(NodeId a) { return unary(OpKind::kMean, a); }
  NodeId sum(NodeId a) { return unary(OpKind::kSum, a); }
  NodeId row_normalize(NodeId a) { return unary(OpKind::kRowNormalize, a); }
  NodeId append_ones_column(NodeId a) { return unary(OpKind::kAppendOnesColumn, a); }

  const Matrix& value(NodeId id) const;
  bool is_parameter(NodeId id) const;
  bool requires_grad(NodeId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  std::vector<NodeId> parameters() const;

  /// Reverse pass from a 1x1 loss node. Throws kState when the node was not
  /// produced by this tape.
  Gradients backward(NodeId loss) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    OpAttributes attributes;
    Matrix value;
    bool requires_grad = false;
  };

  NodeId unary(OpKind kind, NodeId a);
  NodeId binary(OpKind kind, NodeId a, NodeId b);
  NodeId push(Node node);
  void check(NodeId id) const;

  std::vector<Node> nodes_;
};

}  // namespace fedlora
