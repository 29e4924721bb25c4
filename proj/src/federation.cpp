#include "fedlora/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "fedlora/error.hpp"
#include "fedlora/rng.hpp"

namespace fedlora {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

void require_compatible(const TransferPayload& reference, const TransferPayload& other, std::size_t index) {
  if (other.mode != reference.mode) {
    throw Error(ErrorCode::kProtocol, "payload " + std::to_string(index) + " has mode " +
                                          std::string(to_string(other.mode)) + ", expected " +
                                          std::string(to_string(reference.mode)));
  }
  if (other.entries.size() != reference.entries.size()) {
    throw Error(ErrorCode::kProtocol, "payload " + std::to_string(index) + " has " +
                                          std::to_string(other.entries.size()) + " entries, expected " +
                                          std::to_string(reference.entries.size()));
  }
  for (std::size_t e = 0; e < reference.entries.size(); ++e) {
    const auto& [name, value] = reference.entries[e];
    if (other.entries[e].first != name || !other.entries[e].second.same_shape(value)) {
      throw Error(ErrorCode::kProtocol, "payload " + std::to_string(index) + " entry '" +
                                            other.entries[e].first + "' " +
                                            shape_string(other.entries[e].second) + " does not match '" +
                                            name + "' " + shape_string(value));
    }
  }
}

}  // namespace

std::uint64_t TransferPayload::param_count() const {
  std::uint64_t total = 0;
  for (const auto& [name, value] : entries) total += value.size();
  return total;
}

TransferPayload extract_payload(const DualEncoderModel& model, std::uint64_t round) {
  TransferPayload payload;
  payload.mode = model.mode().kind;
  payload.round = round;
  for (const auto& name : select_transfer_set(model, model.mode())) {
    payload.entries.emplace_back(name, model.parameter(name));
  }
  return payload;
}

void apply_payload(DualEncoderModel& model, const TransferPayload& payload) {
  if (payload.mode != model.mode().kind) {
    throw Error(ErrorCode::kProtocol, "payload mode " + std::string(to_string(payload.mode)) +
                                          " does not match model mode " +
                                          std::string(to_string(model.mode().kind)));
  }
  const auto expected = select_transfer_set(model, model.mode());
  if (expected.size() != payload.entries.size()) {
    throw Error(ErrorCode::kProtocol, "payload carries " + std::to_string(payload.entries.size()) +
                                          " entries, model transfer set has " + std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (payload.entries[i].first != expected[i]) {
      throw Error(ErrorCode::kProtocol,
                  "payload entry '" + payload.entries[i].first + "' where '" + expected[i] + "' was expected");
    }
  }
  for (const auto& [name, value] : payload.entries) model.set_parameter(name, value);
}

Container payload_to_container(const TransferPayload& payload) {
  Container c;
  c.metadata["kind"] = "payload";
  c.metadata["mode"] = std::string(to_string(payload.mode));
  c.metadata["round"] = std::to_string(payload.round);
  c.entries = payload.entries;
  return c;
}

TransferPayload payload_from_container(const Container& c) {
  auto kind = c.metadata.find("kind");
  if (kind == c.metadata.end() || kind->second != "payload") {
    throw Error(ErrorCode::kParse, "container does not hold a transfer payload");
  }
  TransferPayload p;
  p.mode = parse_adaptation_kind(c.metadata.at("mode"));
  p.round = std::stoull(c.metadata.at("round"));
  p.entries = c.entries;
  return p;
}

std::uint64_t epoch_shuffle_seed(std::uint64_t run_seed, std::size_t client_id, std::uint64_t epoch) {
  return derive_seed(run_seed, {0xc11e47, client_id, epoch});
}

double train_epoch(DualEncoderModel& model, AdamState& optimizer, const Dataset& data, std::size_t batch_size,
                   std::uint64_t shuffle_seed) {
  if (batch_size == 0) throw Error(ErrorCode::kParameter, "batch size must be >= 1");
  if (data.size() == 0) throw Error(ErrorCode::kInsufficientData, "cannot train on an empty dataset");
  const auto names = select_transfer_set(model, model.mode());
  const std::set<std::string, std::less<>> trainable(names.begin(), names.end());

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(shuffle_seed);
  rng.shuffle(order);

  double loss_total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    const std::span<const std::size_t> batch(order.data() + start, end - start);
    std::vector<std::size_t> labels;
    labels.reserve(batch.size());
    for (std::size_t i : batch) labels.push_back(data.labels[i]);

    Tape tape;
    const ForwardGraph graph = build_forward(tape, model, gather_rows(data.features, batch), trainable);
    const NodeId loss = cross_entropy_loss(tape, graph.logits, labels);
    const double loss_value = tape.value(loss)(0, 0);
    if (!std::isfinite(loss_value)) throw Error(ErrorCode::kNumeric, "non-finite training loss");
    const Gradients grads = tape.backward(loss);

    std::vector<Matrix> params;
    std::vector<Matrix> grad_list;
    params.reserve(names.size());
    grad_list.reserve(names.size());
    for (const auto& name : names) {
      const Matrix& value = model.parameter(name);
      params.push_back(value);
      auto node = graph.parameter_nodes.find(name);
      auto g = node == graph.parameter_nodes.end() ? grads.end() : grads.find(node->second);
      grad_list.push_back(g == grads.end() ? Matrix(value.rows(), value.cols()) : g->second);
    }
    adam_step(params, grad_list, optimizer);
    for (std::size_t i = 0; i < names.size(); ++i) model.set_parameter(names[i], std::move(params[i]));

    loss_total += loss_value;
    ++batches;
  }
  return loss_total / static_cast<double>(batches);
}

ClientUpdate client_update(ClientState& client, const TransferPayload& global, const LocalTraining& settings) {
  const std::uint64_t round = global.round + 1;
  auto context = [&](const std::string& what) {
    return "round " + std::to_string(round) + ", client " + std::to_string(client.id) + ": " + what;
  };
  try {
    apply_payload(client.model, global);
  } catch (const Error& e) {
    throw Error(ErrorCode::kProtocol, context(e.what()));
  }

  double loss_total = 0.0;
  for (std::size_t e = 0; e < settings.local_epochs; ++e) {
    double loss = 0.0;
    try {
      loss = train_epoch(client.model, client.optimizer, client.data, settings.batch_size,
                         epoch_shuffle_seed(client.run_seed, client.id, client.epochs_completed));
    } catch (const Error& err) {
      if (err.code() == ErrorCode::kNumeric) throw Error(ErrorCode::kDivergence, context(err.what()));
      throw Error(err.code(), context(err.what()));
    }
    ++client.epochs_completed;
    loss_total += loss;
  }

  ClientUpdate update;
  update.payload = extract_payload(client.model, round);
  update.mean_train_loss = settings.local_epochs == 0 ? 0.0 : loss_total / static_cast<double>(settings.local_epochs);
  return update;
}

TransferPayload aggregate(std::span<const TransferPayload> payloads, std::span<const std::size_t> sizes) {
  if (payloads.empty()) throw Error(ErrorCode::kProtocol, "aggregate needs at least one payload");
  if (sizes.size() != payloads.size()) {
    throw Error(ErrorCode::kProtocol, "aggregate: " + std::to_string(payloads.size()) + " payloads but " +
                                          std::to_string(sizes.size()) + " sizes");
  }
  for (std::size_t i = 1; i < payloads.size(); ++i) require_compatible(payloads[0], payloads[i], i);
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total == 0) throw Error(ErrorCode::kParameter, "aggregate: total dataset size is zero");
  if (payloads.size() == 1) return payloads[0];

  const bool equal_sizes = std::all_of(sizes.begin(), sizes.end(), [&](std::size_t s) { return s == sizes[0]; });
  std::vector<double> weights(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    weights[i] = static_cast<double>(sizes[i]) / static_cast<double>(total);
  }
  const double count = static_cast<double>(payloads.size());

  TransferPayload out;
  out.mode = payloads[0].mode;
  out.round = payloads[0].round;
  for (std::size_t e = 0; e < payloads[0].entries.size(); ++e) {
    Matrix merged = payloads[0].entries[e].second;
    auto m = merged.data();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double first = payloads[0].entries[e].second.data()[j];
      bool identical = true;
      for (std::size_t i = 1; i < payloads.size() && identical; ++i)
        identical = same_bits(payloads[i].entries[e].second.data()[j], first);
      if (identical) continue;  // a convex combination of equal values is that value
      double acc = 0.0;
      if (equal_sizes) {
        acc = first;
        for (std::size_t i = 1; i < payloads.size(); ++i) acc += payloads[i].entries[e].second.data()[j];
        acc /= count;
      } else {
        acc = weights[0] * first;
        for (std::size_t i = 1; i < payloads.size(); ++i) acc += weights[i] * payloads[i].entries[e].second.data()[j];
      }
      m[j] = acc;
    }
    out.entries.emplace_back(payloads[0].entries[e].first, std::move(merged));
  }
  return out;
}

std::vector<std::size_t> sample_clients(std::size_t num_clients, double sample_rate, std::uint64_t round,
                                        std::uint64_t seed) {
  const std::size_t cohort = cohort_size(num_clients, sample_rate);
  if (cohort == 0) {
    throw Error(ErrorCode::kEmptyCohort, "floor(" + std::to_string(sample_rate) + " * " +
                                             std::to_string(num_clients) + ") = 0 clients per round");
  }
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 1);
  if (cohort < num_clients) {
    Rng rng(derive_seed(seed, {0x5a3b1e, round}));
    for (std::size_t i = 0; i < cohort; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(num_clients - i));
      std::swap(ids[i], ids[j]);
    }
    ids.resize(cohort);
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

Evaluation evaluate(const DualEncoderModel& model, const Dataset& data) {
  const Matrix logits = forward_logits(model, data.features);
  const Matrix log_probs = row_log_softmax(logits);
  Evaluation ev;
  ev.predictions = row_argmax(logits);
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (ev.predictions[i] == data.labels[i]) ++correct;
    loss -= log_probs(i, data.labels[i]);
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  ev.loss = loss / static_cast<double>(data.size());
  return ev;
}

Server::Server(DualEncoderModel global_model, std::vector<Dataset> client_data, Dataset test_set,
               FederationSettings settings)
    : global_model_(std::move(global_model)),
      test_set_(std::move(test_set)),
      settings_(settings),
      ledger_(settings.bytes_per_param) {
  if (client_data.empty()) throw Error(ErrorCode::kParameter, "federation needs at least one client");
  global_payload_ = extract_payload(global_model_, 0);
  clients_.reserve(client_data.size());
  for (std::size_t i = 0; i < client_data.size(); ++i) {
    ClientState c{i + 1, std::move(client_data[i]), global_model_, AdamState(settings_.local.optimizer), 0,
                  settings_.seed};
    clients_.push_back(std::move(c));
  }
}

Evaluation Server::evaluate_global() const { return evaluate(global_model_, test_set_); }

RoundReport Server::run_round() {
  const std::uint64_t t = round_ + 1;
  const auto train_start = Clock::now();
  RoundReport report;
  report.round = t;
  report.mode = global_model_.mode().kind;
  report.sampled_clients = sample_clients(clients_.size(), settings_.sample_rate, t, settings_.seed);

  std::vector<TransferPayload> uploads;
  std::vector<std::size_t> sizes;
  for (std::size_t id : report.sampled_clients) {
    ClientState& client = clients_[id - 1];
    if (client.data.size() == 0) {
      throw Error(ErrorCode::kInsufficientData,
                  "round " + std::to_string(t) + ": sampled client " + std::to_string(id) + " holds no data");
    }
    ClientUpdate update = client_update(client, global_payload_, settings_.local);
    report.client_train_loss.push_back(update.mean_train_loss);
    uploads.push_back(std::move(update.payload));
    sizes.push_back(client.data.size());
  }

  TransferPayload merged;
  try {
    merged = aggregate(uploads, sizes);
  } catch (const Error& e) {
    throw Error(e.code(), "round " + std::to_string(t) + ": " + e.what());
  }
  merged.round = t;
  apply_payload(global_model_, merged);
  const std::uint64_t params = merged.param_count();
  global_payload_ = std::move(merged);
  const double train_ms = elapsed_ms(train_start);

  const auto& entry = ledger_.record(t, params, report.sampled_clients.size());
  report.bytes_down = entry.cohort * entry.payload_bytes;
  report.bytes_up = entry.cohort * entry.payload_bytes;
  report.cumulative_bytes = entry.cumulative_bytes;
  report.broadcast_bytes = clients_.size() * entry.payload_bytes;
  report.mean_train_loss =
      std::accumulate(report.client_train_loss.begin(), report.client_train_loss.end(), 0.0) /
      static_cast<double>(report.client_train_loss.size());

  const auto eval_start = Clock::now();
  const Evaluation ev = evaluate_global();
  report.test_accuracy = ev.accuracy;
  report.test_loss = ev.loss;
  if (settings_.record_timing) {
    report.train_ms = train_ms;
    report.eval_ms = elapsed_ms(eval_start);
  }
  round_ = t;
  return report;
}

DualEncoderModel train_centralized(DualEncoderModel model, const Dataset& data, std::size_t epochs,
                                   std::size_t batch_size, const AdamConfig& optimizer, std::uint64_t seed) {
  AdamState state(optimizer);
  for (std::size_t e = 0; e < epochs; ++e) {
    train_epoch(model, state, data, batch_size, epoch_shuffle_seed(seed, 1, e));
  }
  return model;
}

}  // namespace fedlora
