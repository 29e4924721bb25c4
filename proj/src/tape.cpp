#include "fedlora/tape.hpp"

#include <cmath>
#include <optional>
#include <string>

#include "fedlora/error.hpp"

namespace fedlora {
namespace {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kAddRowBroadcast: return "add_row_broadcast";
    case OpKind::kScale: return "scale";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kRowSoftmax: return "row_softmax";
    case OpKind::kRowLogSoftmax: return "row_log_softmax";
    case OpKind::kLog: return "log";
    case OpKind::kTanh: return "tanh";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kPickPerRow: return "pick_per_row";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kRowNormalize: return "row_normalize";
    case OpKind::kAppendOnesColumn: return "append_ones_column";
  }
  return "unknown";
}

std::size_t arity(OpKind kind) {
  switch (kind) {
    case OpKind::kMatMul:
    case OpKind::kAdd:
    case OpKind::kAddRowBroadcast:
      return 2;
    case OpKind::kConstant:
    case OpKind::kParameter:
      return 0;
    default:
      return 1;
  }
}

Matrix apply_unary(const Matrix& a, double (*fn)(double)) {
  Matrix out = a;
  for (double& v : out.data()) v = fn(v);
  return out;
}

void accumulate(std::optional<Matrix>& slot, Matrix contribution) {
  if (!slot) {
    slot = std::move(contribution);
    return;
  }
  auto s = slot->data();
  auto c = contribution.data();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] += c[i];
}

}  // namespace

NodeId Tape::constant(Matrix value) {
  return push(Node{OpKind::kConstant, {}, {}, std::move(value), false});
}

NodeId Tape::parameter(Matrix value) {
  return push(Node{OpKind::kParameter, {}, {}, std::move(value), true});
}

NodeId Tape::scale(NodeId a, double s) {
  OpAttributes attrs;
  attrs.scalar = s;
  const NodeId in[] = {a};
  return apply(OpKind::kScale, in, std::move(attrs));
}

NodeId Tape::gather_rows(NodeId a, std::vector<std::size_t> rows) {
  OpAttributes attrs;
  attrs.indices = std::move(rows);
  const NodeId in[] = {a};
  return apply(OpKind::kGatherRows, in, std::move(attrs));
}

NodeId Tape::pick_per_row(NodeId a, std::vector<std::size_t> columns) {
  OpAttributes attrs;
  attrs.indices = std::move(columns);
  const NodeId in[] = {a};
  return apply(OpKind::kPickPerRow, in, std::move(attrs));
}

NodeId Tape::unary(OpKind kind, NodeId a) {
  const NodeId in[] = {a};
  return apply(kind, in);
}

NodeId Tape::binary(OpKind kind, NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(kind, in);
}

void Tape::check(NodeId id) const {
  if (id.index >= nodes_.size()) {
    throw Error(ErrorCode::kState,
                "node " + std::to_string(id.index) + " has not been recorded on this tape");
  }
}

NodeId Tape::push(Node node) {
  if (!all_finite(node.value)) {
    throw Error(ErrorCode::kNumeric,
                std::string("non-finite value produced by ") + op_name(node.kind));
  }
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

NodeId Tape::apply(OpKind kind, std::span<const NodeId> inputs, OpAttributes attributes) {
  if (static_cast<int>(kind) < 0 || static_cast<int>(kind) > static_cast<int>(OpKind::kAppendOnesColumn) ||
      kind == OpKind::kConstant || kind == OpKind::kParameter) {
    throw Error(ErrorCode::kUnsupportedOp,
                "unsupported primitive (kind " + std::to_string(static_cast<int>(kind)) + ")");
  }
  if (inputs.size() != arity(kind)) {
    throw Error(ErrorCode::kShape, std::string(op_name(kind)) + " expects " +
                                       std::to_string(arity(kind)) + " inputs");
  }
  for (NodeId id : inputs) check(id);

  const Matrix& a = nodes_[inputs[0].index].value;
  Matrix out;
  switch (kind) {
    case OpKind::kMatMul:
      out = fedlora::matmul(a, nodes_[inputs[1].index].value);
      break;
    case OpKind::kAdd:
      out = fedlora::add(a, nodes_[inputs[1].index].value);
      break;
    case OpKind::kAddRowBroadcast:
      out = fedlora::add_row_broadcast(a, nodes_[inputs[1].index].value);
      break;
    case OpKind::kScale:
      out = fedlora::scale(a, attributes.scalar);
      break;
    case OpKind::kTranspose:
      out = fedlora::transpose(a);
      break;
    case OpKind::kRowSoftmax:
      out = fedlora::row_softmax(a);
      break;
    case OpKind::kRowLogSoftmax:
      out = fedlora::row_log_softmax(a);
      break;
    case OpKind::kLog:
      out = apply_unary(a, [](double v) { return std::log(v); });
      break;
    case OpKind::kTanh:
      out = apply_unary(a, [](double v) { return std::tanh(v); });
      break;
    case OpKind::kGatherRows:
      out = fedlora::gather_rows(a, attributes.indices);
      break;
    case OpKind::kPickPerRow: {
      if (attributes.indices.size() != a.rows()) {
        throw Error(ErrorCode::kShape, "pick_per_row: " + std::to_string(attributes.indices.size()) +
                                           " columns for " + shape_string(a));
      }
      out = Matrix(a.rows(), 1);
      for (std::size_t i = 0; i < a.rows(); ++i) {
        if (attributes.indices[i] >= a.cols()) {
          throw Error(ErrorCode::kShape, "pick_per_row: column " +
                                             std::to_string(attributes.indices[i]) +
                                             " out of range for " + shape_string(a));
        }
        out(i, 0) = a(i, attributes.indices[i]);
      }
      break;
    }
    case OpKind::kMean:
      out = Matrix(1, 1, fedlora::mean(a));
      break;
    case OpKind::kSum:
      out = Matrix(1, 1, fedlora::sum(a));
      break;
    case OpKind::kRowNormalize:
      out = fedlora::row_normalize(a);
      break;
    case OpKind::kAppendOnesColumn:
      out = fedlora::append_ones_column(a);
      break;
    default:
      throw Error(ErrorCode::kUnsupportedOp, std::string("unsupported primitive ") + op_name(kind));
  }

  bool needs_grad = false;
  for (NodeId id : inputs) needs_grad = needs_grad || nodes_[id.index].requires_grad;
  std::vector<NodeId> saved(inputs.begin(), inputs.end());
  return push(Node{kind, std::move(saved), std::move(attributes), std::move(out), needs_grad});
}

const Matrix& Tape::value(NodeId id) const {
  check(id);
  return nodes_[id.index].value;
}

bool Tape::is_parameter(NodeId id) const {
  check(id);
  return nodes_[id.index].kind == OpKind::kParameter;
}

bool Tape::requires_grad(NodeId id) const {
  check(id);
  return nodes_[id.index].requires_grad;
}

std::vector<NodeId> Tape::parameters() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == OpKind::kParameter) out.push_back(NodeId{i});
  return out;
}

Gradients Tape::backward(NodeId loss) const {
  if (nodes_.empty()) throw Error(ErrorCode::kState, "backward called on an empty tape");
  check(loss);
  const Matrix& loss_value = nodes_[loss.index].value;
  if (loss_value.rows() != 1 || loss_value.cols() != 1) {
    throw Error(ErrorCode::kShape, "backward requires a 1x1 loss, got " + shape_string(loss_value));
  }

  std::vector<std::optional<Matrix>> adjoint(loss.index + 1);
  Gradients grads;
  if (!nodes_[loss.index].requires_grad) return grads;
  adjoint[loss.index] = Matrix(1, 1, 1.0);

  for (std::size_t k = loss.index + 1; k-- > 0;) {
    const Node& node = nodes_[k];
    if (!node.requires_grad || !adjoint[k]) continue;
    const Matrix& g = *adjoint[k];
    if (node.kind == OpKind::kParameter) {
      grads.emplace(NodeId{k}, g);
      continue;
    }

    auto wants = [&](std::size_t slot) { return nodes_[node.inputs[slot].index].requires_grad; };
    auto input = [&](std::size_t slot) -> const Matrix& { return nodes_[node.inputs[slot].index].value; };
    auto push_grad = [&](std::size_t slot, Matrix contribution) {
      accumulate(adjoint[node.inputs[slot].index], std::move(contribution));
    };
    const Matrix& y = node.value;

    switch (node.kind) {
      case OpKind::kMatMul:
        if (wants(0)) push_grad(0, fedlora::matmul(g, fedlora::transpose(input(1))));
        if (wants(1)) push_grad(1, fedlora::matmul(fedlora::transpose(input(0)), g));
        break;
      case OpKind::kAdd:
        if (wants(0)) push_grad(0, g);
        if (wants(1)) push_grad(1, g);
        break;
      case OpKind::kAddRowBroadcast:
        if (wants(0)) push_grad(0, g);
        if (wants(1)) {
          Matrix col_sums(1, g.cols());
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) col_sums(0, j) += g(i, j);
          push_grad(1, std::move(col_sums));
        }
        break;
      case OpKind::kScale:
        push_grad(0, fedlora::scale(g, node.attributes.scalar));
        break;
      case OpKind::kTranspose:
        push_grad(0, fedlora::transpose(g));
        break;
      case OpKind::kRowSoftmax: {
        Matrix d(y.rows(), y.cols());
        for (std::size_t i = 0; i < y.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j) d(i, j) = y(i, j) * (g(i, j) - dot);
        }
        push_grad(0, std::move(d));
        break;
      }
      case OpKind::kRowLogSoftmax: {
        Matrix d(y.rows(), y.cols());
        for (std::size_t i = 0; i < y.rows(); ++i) {
          double total = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) total += g(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j) d(i, j) = g(i, j) - std::exp(y(i, j)) * total;
        }
        push_grad(0, std::move(d));
        break;
      }
      case OpKind::kLog: {
        Matrix d = g;
        auto dd = d.data();
        auto x = input(0).data();
        for (std::size_t i = 0; i < dd.size(); ++i) dd[i] /= x[i];
        push_grad(0, std::move(d));
        break;
      }
      case OpKind::kTanh: {
        Matrix d = g;
        auto dd = d.data();
        auto yy = y.data();
        for (std::size_t i = 0; i < dd.size(); ++i) dd[i] *= 1.0 - yy[i] * yy[i];
        push_grad(0, std::move(d));
        break;
      }
      case OpKind::kGatherRows: {
        const Matrix& x = input(0);
        Matrix d(x.rows(), x.cols());
        for (std::size_t i = 0; i < node.attributes.indices.size(); ++i) {
          auto dst = d.row(node.attributes.indices[i]);
          auto src = g.row(i);
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
        push_grad(0, std::move(d));
        break;
      }
      case OpKind::kPickPerRow: {
        const Matrix& x = input(0);
        Matrix d(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) d(i, node.attributes.indices[i]) = g(i, 0);
        push_grad(0, std::move(d));
        break;
      }
      case OpKind::kMean: {
        const Matrix& x = input(0);
        push_grad(0, Matrix(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
        break;
      }
      case OpKind::kSum: {
        const Matrix& x = input(0);
        push_grad(0, Matrix(x.rows(), x.cols(), g(0, 0)));
        break;
      }
      case OpKind::kRowNormalize: {
        const Matrix& x = input(0);
        Matrix d(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
          double sq = 0.0;
          for (double v : x.row(i)) sq += v * v;
          // Zero rows pass through as zero; use the zero subgradient there.
          if (sq == 0.0) continue;
          const double norm = std::sqrt(sq);
          double dot = 0.0;
          for (std::size_t j = 0; j < x.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) = (g(i, j) - y(i, j) * dot) / norm;
        }
        push_grad(0, std::move(d));
        break;
      }
      case OpKind::kAppendOnesColumn: {
        const Matrix& x = input(0);
        Matrix d(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) = g(i, j);
        push_grad(0, std::move(d));
        break;
      }
      default:
        throw Error(ErrorCode::kUnsupportedOp, std::string("no backward rule for ") + op_name(node.kind));
    }
  }
  return grads;
}

}  // namespace fedlora
