#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedlora/matrix.hpp"

namespace fedlora {

struct Dataset {
  Matrix features;                  // n x d_feat
  std::vector<std::size_t> labels;  // n entries in [0, num_classes)
  std::size_t num_classes = 0;
  std::string provenance;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t feature_dim() const noexcept { return features.cols(); }

  /// Throws kRange / kShape / kNumeric when an invariant is broken.
  void validate() const;
};

Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

/// Per-class sample counts.
std::vector<std::size_t> label_histogram(const Dataset& data);
std::vector<std::size_t> label_histogram(const Dataset& data, std::span<const std::size_t> indices);

/// Gaussian blobs around random unit-norm class means scaled by `separation`.
///
/// `shift` perturbs each class mean toward an independent random direction
/// (then renormalizes), giving a related but different distribution for the
/// same seed. `variant` selects an independent sample draw.
struct SynthSpec {
  std::size_t classes = 10;
  std::size_t feature_dim = 32;
  std::size_t per_class = 100;
  double separation = 5.0;
  double shift = 0.0;
  std::uint64_t variant = 0;
  std::uint64_t seed = 0;
};

Dataset synth_dataset(const SynthSpec& spec);

/// Text format:
///   line 1: "<d_feat>,<K>"
///   then one line per sample: d_feat comma-separated reals, then the label.
/// Reals are written with 17 significant digits so a save/load round trip
/// is exact.
void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in, const std::string& source = "<stream>");
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace fedlora
