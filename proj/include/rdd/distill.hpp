#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rdd/data.hpp"
#include "rdd/model.hpp"
#include "rdd/partition.hpp"
#include "rdd/risk.hpp"

namespace rdd {

/// The distilled set: per-class learnable feature tensors with fixed labels.
struct SyntheticSet {
  std::vector<Tensor> class_features;  // [class]: ipc x feature-shape
  std::vector<bool> learnable;         // per class tensor; labels never change

  int classes() const { return static_cast<int>(class_features.size()); }
  int ipc() const;
  Shape feature_shape() const;
  std::int64_t feature_width() const;

  Tensor stacked() const;              // (classes * ipc) x feature-shape
  std::vector<int> stacked_labels() const;
  Dataset as_dataset() const;
  void validate() const;
};

enum class Metric { gradient, distribution };
enum class MatchDistance { layerwise_cosine, l2 };
enum class InitMode { random_real, class_kmeans };
enum class ClusterMode { synthetic_nearest, single };
enum class DistillMethod { first_order, zero_order };

struct ZeroOrderParams {
  int probes = 64;     // M
  double sigma = 0.01;
};

struct DistillConfig {
  DistillMethod method = DistillMethod::first_order;
  Metric metric = Metric::gradient;
  MatchDistance distance = MatchDistance::layerwise_cosine;
  int ipc = 10;
  InitMode init = InitMode::random_real;
  int iterations = 100;
  int inner_steps = 10;
  double inner_lr = 0.01;
  double inner_momentum = 0.9;
  int minibatch = 256;          // total subsample size, split evenly per class
  double synthetic_lr = 1.0;
  int synthetic_steps = 1;
  int max_clusters = 10;
  ClusterMode cluster_mode = ClusterMode::synthetic_nearest;
  int restart_every = 10;       // fresh network init cadence; 1 = every iteration
  bool risk_weighted_matching = false;
  bool erm_baseline = false;    // plain mean-loss inner updates, no clustering/risk
  RiskConfig risk;
  ModelSpec model;
  ZeroOrderParams zero_order;
  std::uint64_t model_seed = 0;
  std::uint64_t synthetic_seed = 0;
  std::uint64_t subsample_seed = 0;
  std::uint64_t probe_seed = 0;

  int per_class_batch(int classes) const;
  void validate() const;
};

SyntheticSet init_synthetic(const Dataset& real, int ipc, InitMode mode, std::uint64_t seed);

struct MatchLoss {
  Var total;                    // plain cross-class sum
  std::vector<Var> per_class;
  int cosine_fallbacks = 0;     // layers where a zero-norm gradient forced l2
};

/// Distance between model gradients on the synthetic and real batches,
/// per class. The real-batch gradients are detached; the synthetic batch
/// enters as differentiable leaves so the loss can be differentiated with
/// respect to the synthetic features (gradient-of-gradient through the tape).
MatchLoss gradient_match_loss(Tape& t, const ModelSpec& spec, const std::vector<Var>& params,
                              const std::vector<Var>& syn_class_features,
                              const std::vector<Tensor>& real_class_features, MatchDistance distance);

/// Squared L2 distance between mean penultimate embeddings, per class.
MatchLoss distribution_match_loss(Tape& t, const ModelSpec& spec, const std::vector<Var>& params,
                                  const std::vector<Var>& syn_class_features,
                                  const std::vector<Tensor>& real_class_features);

struct InnerDiagnostics {
  double objective = 0.0;
  std::vector<double> cluster_cvars;
  std::vector<std::int64_t> cluster_sizes;
};

/// `steps` momentum-SGD steps on the group objective, with clusters fixed for
/// the whole call from nearest-synthetic-point assignment over the subsample.
ModelState inner_dro_update(ModelState state, const Dataset& subsample, const SyntheticSet& synthetic,
                            const RiskConfig& risk, int steps, double lr, double momentum,
                            ClusterMode cluster_mode, int max_clusters, std::uint64_t center_seed,
                            InnerDiagnostics* diag = nullptr);

/// Plain mean-loss counterpart used by the baseline path.
ModelState inner_erm_update(ModelState state, const Dataset& subsample, int steps, double lr, double momentum,
                            InnerDiagnostics* diag = nullptr);

struct IterationRecord {
  int iteration = 0;
  double matching_loss = 0.0;
  double objective = 0.0;
  std::vector<double> cluster_cvars;
  std::uint64_t synthetic_hash = 0;  // after this iteration's update
  int cosine_fallbacks = 0;
  double stepsize = 0.0;             // zero-order only
};

struct DistillResult {
  SyntheticSet synthetic;
  std::vector<IterationRecord> log;
};

DistillResult distill_first_order(const Dataset& real, const DistillConfig& config);

/// Gaussian-smoothing forward-difference estimator: exactly M + 1 objective
/// evaluations, g = (1/M) sum_l (L(S + sigma v_l) - L(S)) / sigma * v_l.
/// Returned tensors align with the learnable class tensors (zeros for frozen
/// ones).
std::vector<Tensor> zero_order_grad(const std::function<double(const SyntheticSet&)>& objective,
                                    const SyntheticSet& s, int probes, double sigma, std::uint64_t seed);

double zero_order_stepsize(int epoch);  // 0.1 / sqrt(1 + epoch)

DistillResult distill_zero_order(const Dataset& real, const DistillConfig& config);

std::uint64_t synthetic_hash(const SyntheticSet& s);
void save_synthetic(const SyntheticSet& s, const std::string& path);
SyntheticSet load_synthetic(const std::string& path);

}  // namespace rdd
