#include "rdd/partition.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "rdd/rng.hpp"

namespace rdd {

namespace {

double sq_dist(const double* a, const double* b, std::int64_t d) {
  double s = 0.0;
  for (std::int64_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

}  // namespace

ClusterAssignment assign_to_nearest(const Tensor& features, const std::vector<int>& labels,
                                    const Tensor& centers, const std::vector<int>& center_labels,
                                    bool class_conditional) {
  const std::int64_t n = features.rank() >= 1 ? features.dim(0) : 0;
  const std::int64_t d = features.row_width();
  const std::int64_t k = centers.rank() >= 1 ? centers.dim(0) : 0;
  if (k < 1) throw std::invalid_argument("assign_to_nearest: need at least one center");
  if (centers.row_width() != d) {
    throw std::invalid_argument("assign_to_nearest: feature width " + std::to_string(d) +
                                " vs center width " + std::to_string(centers.row_width()));
  }
  if (static_cast<std::int64_t>(labels.size()) != n && class_conditional) {
    throw std::invalid_argument("assign_to_nearest: label count does not match samples");
  }
  if (class_conditional && static_cast<std::int64_t>(center_labels.size()) != k) {
    throw std::invalid_argument("assign_to_nearest: center label count does not match centers");
  }

  ClusterAssignment out;
  out.center_source = ClusterAssignment::Source::synthetic_points;
  out.assignment.assign(static_cast<std::size_t>(n), -1);
  out.members.assign(static_cast<std::size_t>(k), {});

  for (std::int64_t i = 0; i < n; ++i) {
    const double* x = features.data() + i * d;
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < k; ++c) {
      if (class_conditional && center_labels[static_cast<std::size_t>(c)] != labels[static_cast<std::size_t>(i)]) {
        continue;
      }
      const double dist = sq_dist(x, centers.data() + c * d, d);
      if (dist < best_d) {  // strict: ties keep the lowest center index
        best_d = dist;
        best = static_cast<int>(c);
      }
    }
    if (best < 0) {
      if (!features.all_finite() || !centers.all_finite()) {
        throw std::invalid_argument("assign_to_nearest: non-finite features or centers");
      }
      throw std::invalid_argument("assign_to_nearest: no center for class " +
                                  std::to_string(labels[static_cast<std::size_t>(i)]));
    }
    out.assignment[static_cast<std::size_t>(i)] = best;
    out.members[static_cast<std::size_t>(best)].push_back(i);
  }
  return out;
}

CenterSet select_centers(const std::vector<Tensor>& per_class_points, int max_clusters, std::uint64_t seed) {
  if (max_clusters < 1) throw std::invalid_argument("select_centers: max_clusters must be >= 1");
  if (per_class_points.empty()) throw std::invalid_argument("select_centers: empty synthetic set");

  std::int64_t width = per_class_points[0].row_width();
  CenterSet out;
  std::vector<double> data;
  std::int64_t stacked_row = 0;
  for (std::size_t c = 0; c < per_class_points.size(); ++c) {
    const Tensor& pts = per_class_points[c];
    if (pts.rank() < 1 || pts.dim(0) == 0) throw std::invalid_argument("select_centers: class without points");
    if (pts.row_width() != width) throw std::invalid_argument("select_centers: inconsistent feature widths");
    const std::int64_t ipc = pts.dim(0);
    std::vector<std::int64_t> chosen;
    if (ipc <= max_clusters) {
      chosen.resize(static_cast<std::size_t>(ipc));
      for (std::int64_t i = 0; i < ipc; ++i) chosen[static_cast<std::size_t>(i)] = i;
    } else {
      Rng rng(Rng::mix(seed, 0xce47e5ull + c));
      chosen = rng.sample_without_replacement(ipc, max_clusters);
      std::sort(chosen.begin(), chosen.end());
    }
    for (std::int64_t row : chosen) {
      const double* src = pts.data() + row * width;
      data.insert(data.end(), src, src + width);
      out.labels.push_back(static_cast<int>(c));
      out.source_rows.push_back(stacked_row + row);
    }
    stacked_row += ipc;
  }
  const auto k = static_cast<std::int64_t>(out.labels.size());
  out.centers = Tensor({k, width}, std::move(data));
  return out;
}

KmeansResult kmeans(const Tensor& features, int k, std::uint64_t seed, int max_iters) {
  const std::int64_t n = features.rank() >= 1 ? features.dim(0) : 0;
  const std::int64_t d = features.row_width();
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (n < k) {
    throw std::invalid_argument("kmeans: " + std::to_string(n) + " samples for k = " + std::to_string(k));
  }

  Rng rng(Rng::mix(seed, 0x6b6d65616e73ull));
  const double* x = features.data();

  // k-means++ seeding
  Tensor centers = Tensor::zeros({k, d});
  std::vector<double> best_d(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  {
    const std::int64_t first = rng.uniform_int(n);
    std::copy(x + first * d, x + (first + 1) * d, centers.data());
    for (std::int64_t i = 0; i < n; ++i) best_d[static_cast<std::size_t>(i)] = sq_dist(x + i * d, centers.data(), d);
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (double v : best_d) total += v;
      std::int64_t pick;
      if (total <= 0.0) {
        pick = rng.uniform_int(n);  // all points coincide with chosen centers
      } else {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        pick = n - 1;
        for (std::int64_t i = 0; i < n; ++i) {
          acc += best_d[static_cast<std::size_t>(i)];
          if (acc >= target) {
            pick = i;
            break;
          }
        }
      }
      std::copy(x + pick * d, x + (pick + 1) * d, centers.data() + c * d);
      for (std::int64_t i = 0; i < n; ++i) {
        const double dist = sq_dist(x + i * d, centers.data() + c * d, d);
        best_d[static_cast<std::size_t>(i)] = std::min(best_d[static_cast<std::size_t>(i)], dist);
      }
    }
  }

  KmeansResult out;
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);

  auto assign_all = [&]() {
    bool changed = false;
    for (std::int64_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = sq_dist(x + i * d, centers.data(), d);
      for (int c = 1; c < k; ++c) {
        const double dist = sq_dist(x + i * d, centers.data() + c * d, d);
        if (dist < bd) {
          bd = dist;
          best = c;
        }
      }
      if (assignment[static_cast<std::size_t>(i)] != best) changed = true;
      assignment[static_cast<std::size_t>(i)] = best;
    }
    return changed;
  };

  for (int iter = 0; iter < max_iters; ++iter) {
    const bool changed = assign_all();

    // empty-cluster repair: reseed from the point farthest from its center
    std::fill(counts.begin(), counts.end(), 0);
    for (std::int64_t i = 0; i < n; ++i) counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])]++;
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      std::int64_t far = 0;
      double far_d = -1.0;
      for (std::int64_t i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])] <= 1) continue;
        const double dist = sq_dist(x + i * d, centers.data() + assignment[static_cast<std::size_t>(i)] * d, d);
        if (dist > far_d) {
          far_d = dist;
          far = i;
        }
      }
      counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(far)])]--;
      assignment[static_cast<std::size_t>(far)] = c;
      counts[static_cast<std::size_t>(c)] = 1;
      std::copy(x + far * d, x + (far + 1) * d, centers.data() + c * d);
    }

    // recenter
    Tensor next = Tensor::zeros({k, d});
    std::vector<std::int64_t> cnt(static_cast<std::size_t>(k), 0);
    for (std::int64_t i = 0; i < n; ++i) {
      const int c = assignment[static_cast<std::size_t>(i)];
      cnt[static_cast<std::size_t>(c)]++;
      double* dst = next.data() + c * d;
      const double* src = x + i * d;
      for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    for (int c = 0; c < k; ++c) {
      double* dst = next.data() + c * d;
      for (std::int64_t j = 0; j < d; ++j) dst[j] /= static_cast<double>(cnt[static_cast<std::size_t>(c)]);
    }
    centers = std::move(next);

    double sse = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      sse += sq_dist(x + i * d, centers.data() + assignment[static_cast<std::size_t>(i)] * d, d);
    }
    out.sse_history.push_back(sse);
    out.iterations = iter + 1;
    if (!changed && iter > 0) break;  // assignment fixpoint
  }

  out.assignment.assignment = assignment;
  out.assignment.members.assign(static_cast<std::size_t>(k), {});
  for (std::int64_t i = 0; i < n; ++i) {
    out.assignment.members[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])].push_back(i);
  }
  out.assignment.center_source = ClusterAssignment::Source::kmeans;
  out.centers = std::move(centers);
  return out;
}

}  // namespace rdd
