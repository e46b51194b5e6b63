#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdd/tensor.hpp"

namespace rdd {

struct Dataset {
  Tensor features;              // n x feature-shape
  std::vector<int> labels;      // in [0, C)
  std::vector<int> group_ids;   // optional; in [0, G)
  std::string name;

  std::int64_t size() const { return features.rank() >= 1 ? features.dim(0) : 0; }
  bool has_groups() const { return !group_ids.empty(); }
  int num_classes() const;
  int num_groups() const;
  Shape feature_shape() const;  // shape without the leading sample dimension

  void validate() const;
  Dataset take(const std::vector<std::int64_t>& indices) const;
  std::vector<std::int64_t> class_indices(int c) const;
};

struct MixtureSpec {
  int classes = 3;
  int groups_per_class = 3;
  int dim = 16;
  std::int64_t n = 3000;
  std::vector<double> group_weights;  // per within-class group, sums to 1
  double separation = 2.0;            // stddev of blob means; blobs have unit stddev
  std::uint64_t seed = 0;             // fixes the population (blob means)
  std::uint64_t sample_seed = 0;      // point-draw stream; 0 = same as seed

  void validate() const;
};

/// Gaussian mixture with one isotropic blob per (class, group) pair. Classes
/// are balanced; within a class the group is drawn from group_weights, so a
/// small weight produces a rare subgroup. Ground-truth group ids are global
/// per blob: class * groups_per_class + group. The blob means depend only on
/// `seed`, so train/test splits of one population share `seed` and differ in
/// `sample_seed`.
Dataset gen_subgroup_mixture(const MixtureSpec& spec);

struct CsvSchema {
  std::vector<std::string> feature_columns;
  std::string label_column;
  std::string group_column;  // empty = no groups
};

Dataset load_csv(const std::string& path, const CsvSchema& schema);
void save_csv(const Dataset& data, const std::string& path);

/// MNIST-style IDX ingestion (big-endian dims, unsigned bytes scaled to
/// [0, 1], features shaped H x W x 1). Labels default to zero when no label
/// file is given.
Dataset load_idx_images(const std::string& images_path, const std::string& labels_path = "");

enum class CorruptionKind { gaussian_noise, blur, invert };

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  double noise_sigma = 0.1;
  int blur_width = 3;
  double invert_lo = 0.0;
  double invert_hi = 1.0;
  std::uint64_t seed = 0;

  std::string name() const;
  static CorruptionSpec parse(const std::string& name);  // "noise" | "blur" | "invert"
  void validate() const;
};

/// Labels and group ids pass through untouched.
Dataset corrupt(const Dataset& data, const CorruptionSpec& spec);

/// Uniform per-class draw without replacement; selected rows keep their
/// original relative order.
Dataset subsample(const Dataset& data, int per_class, std::uint64_t seed);

}  // namespace rdd
