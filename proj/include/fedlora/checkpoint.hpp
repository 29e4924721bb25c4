#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedlora/matrix.hpp"
#include "fedlora/model.hpp"

namespace fedlora {

/// Flat versioned container of named matrices.
///
/// Layout, all integers little-endian:
///   magic "FLORACKP" (8 bytes), u32 version (= 1),
///   u32 metadata count, then per entry: u32 key length, key bytes,
///     u32 value length, value bytes,
///   u32 matrix count, then per entry: u32 name length, name bytes,
///     u64 rows, u64 cols, rows*cols IEEE-754 binary64 values, row-major.
/// Metadata values are text; doubles are written as hex floats so they
/// round-trip exactly.
struct Container {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Matrix>> entries;
};

inline constexpr std::uint32_t kContainerVersion = 1;

void write_container(std::ostream& out, const Container& container);
Container read_container(std::istream& in);

std::string encode_double(double value);
double decode_double(const std::string& text);

Container model_to_container(const DualEncoderModel& model);
DualEncoderModel model_from_container(const Container& container);

void save_model(const std::filesystem::path& path, const DualEncoderModel& model);
DualEncoderModel load_model(const std::filesystem::path& path);

}  // namespace fedlora
