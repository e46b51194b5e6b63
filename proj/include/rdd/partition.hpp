#pragma once

#include <cstdint>
#include <vector>

#include "rdd/tensor.hpp"

namespace rdd {

struct ClusterAssignment {
  enum class Source { synthetic_points, kmeans };
  std::vector<int> assignment;                    // sample index -> cluster id in [0, K)
  std::vector<std::vector<std::int64_t>> members; // cluster id -> sample indices (ascending)
  Source center_source = Source::synthetic_points;

  int num_clusters() const { return static_cast<int>(members.size()); }
};

/// Assign each sample to the squared-Euclidean-nearest center, ties broken by
/// the lowest center index. When class_conditional is set (the training-side
/// convention), a sample of class y competes only among centers labeled y;
/// the class-agnostic mode serves the evaluation-side partitioning.
/// Features of any rank are compared as flat row vectors.
ClusterAssignment assign_to_nearest(const Tensor& features, const std::vector<int>& labels,
                                    const Tensor& centers, const std::vector<int>& center_labels,
                                    bool class_conditional = true);

struct CenterSet {
  Tensor centers;                 // K x d
  std::vector<int> labels;        // class per center
  std::vector<std::int64_t> source_rows;  // row into the stacked synthetic matrix
};

/// All points become centers when the per-class count is within max_clusters;
/// otherwise max_clusters points per class are drawn uniformly without
/// replacement (seeded).
CenterSet select_centers(const std::vector<Tensor>& per_class_points, int max_clusters, std::uint64_t seed);

struct KmeansResult {
  ClusterAssignment assignment;
  Tensor centers;                  // k x d
  std::vector<double> sse_history; // within-cluster SSE after each iteration
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Runs to an assignment fixpoint
/// or max_iters; empty clusters are repaired by reseeding from the point
/// farthest from its current center.
KmeansResult kmeans(const Tensor& features, int k, std::uint64_t seed, int max_iters = 100);

}  // namespace rdd
