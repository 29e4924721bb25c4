#include "fedlora/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "fedlora/error.hpp"

namespace fedlora {
namespace {

constexpr char kMagic[8] = {'F', 'L', 'O', 'R', 'A', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(ErrorCode::kParse, "checkpoint truncated");
  return value;
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 20)) throw Error(ErrorCode::kParse, "checkpoint string length too large");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error(ErrorCode::kParse, "checkpoint truncated");
  return s;
}

std::uint64_t meta_uint(const Container& c, const std::string& key) {
  auto it = c.metadata.find(key);
  if (it == c.metadata.end()) throw Error(ErrorCode::kParse, "checkpoint metadata lacks '" + key + "'");
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kParse, "checkpoint metadata '" + key + "' is not an integer");
  }
}

const std::string& meta(const Container& c, const std::string& key) {
  auto it = c.metadata.find(key);
  if (it == c.metadata.end()) throw Error(ErrorCode::kParse, "checkpoint metadata lacks '" + key + "'");
  return it->second;
}

}  // namespace

std::string encode_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", value);
  return buf;
}

double decode_double(const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0') throw Error(ErrorCode::kParse, "bad number '" + text + "'");
  return v;
}

void write_container(std::ostream& out, const Container& container) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kContainerVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(container.metadata.size()));
  for (const auto& [key, value] : container.metadata) {
    put_string(out, key);
    put_string(out, value);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(container.entries.size()));
  for (const auto& [name, m] : container.entries) {
    put_string(out, name);
    put<std::uint64_t>(out, m.rows());
    put<std::uint64_t>(out, m.cols());
    out.write(reinterpret_cast<const char*>(m.data().data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing checkpoint");
}

Container read_container(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kParse, "not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kContainerVersion) {
    throw Error(ErrorCode::kParse, "unsupported checkpoint version " + std::to_string(version));
  }
  Container c;
  const auto meta_count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string key = get_string(in);
    c.metadata[key] = get_string(in);
  }
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(in);
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (rows == 0 || cols == 0 || rows * cols > (std::uint64_t{1} << 32)) {
      throw Error(ErrorCode::kParse, "checkpoint matrix '" + name + "' has invalid shape");
    }
    std::vector<double> data(rows * cols);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw Error(ErrorCode::kParse, "checkpoint truncated in '" + name + "'");
    c.entries.emplace_back(std::move(name), Matrix(rows, cols, std::move(data)));
  }
  return c;
}

Container model_to_container(const DualEncoderModel& model) {
  Container c;
  const ModelShape& s = model.shape();
  const AdaptationMode& m = model.mode();
  c.metadata["kind"] = "model";
  c.metadata["shape.feature_dim"] = std::to_string(s.feature_dim);
  c.metadata["shape.embed_dim"] = std::to_string(s.embed_dim);
  c.metadata["shape.image_blocks"] = std::to_string(s.image_blocks);
  c.metadata["shape.text_blocks"] = std::to_string(s.text_blocks);
  c.metadata["shape.num_classes"] = std::to_string(s.num_classes);
  c.metadata["temperature"] = encode_double(model.temperature());
  c.metadata["mode"] = std::string(to_string(m.kind));
  c.metadata["lora.targets"] = std::string(to_string(m.lora.targets));
  c.metadata["lora.rank"] = std::to_string(m.lora.rank);
  c.metadata["lora.alpha"] = encode_double(m.lora.alpha);
  c.metadata["lora.scale_by_rank"] = m.lora.scale_by_rank ? "1" : "0";
  c.metadata["aa.width"] = std::to_string(m.adapter_width);
  for (const auto& [name, value] : model.parameters()) c.entries.emplace_back(name, value);
  return c;
}

DualEncoderModel model_from_container(const Container& c) {
  if (meta(c, "kind") != "model") throw Error(ErrorCode::kParse, "container does not hold a model");
  ModelShape s;
  s.feature_dim = meta_uint(c, "shape.feature_dim");
  s.embed_dim = meta_uint(c, "shape.embed_dim");
  s.image_blocks = meta_uint(c, "shape.image_blocks");
  s.text_blocks = meta_uint(c, "shape.text_blocks");
  s.num_classes = meta_uint(c, "shape.num_classes");
  DualEncoderModel model(s, decode_double(meta(c, "temperature")));
  AdaptationMode m;
  m.kind = parse_adaptation_kind(meta(c, "mode"));
  m.lora.targets = parse_lora_targets(meta(c, "lora.targets"));
  m.lora.rank = meta_uint(c, "lora.rank");
  m.lora.alpha = decode_double(meta(c, "lora.alpha"));
  m.lora.scale_by_rank = meta(c, "lora.scale_by_rank") == "1";
  m.adapter_width = meta_uint(c, "aa.width");
  model.set_mode_tag(m);
  for (const auto& [name, value] : c.entries) model.insert_parameter(name, value);
  for (const auto& name : model.base_parameter_names()) {
    if (!model.has(name)) throw Error(ErrorCode::kParse, "checkpoint lacks base weight '" + name + "'");
  }
  return model;
}

void save_model(const std::filesystem::path& path, const DualEncoderModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  write_container(out, model_to_container(model));
}

DualEncoderModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return model_from_container(read_container(in));
}

}  // namespace fedlora
