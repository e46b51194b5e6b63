#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdd/data.hpp"
#include "rdd/distill.hpp"
#include "rdd/model.hpp"

#include "json.hpp"

namespace rdd {

struct EvalTrainConfig {
  int epochs = 300;
  double lr = 0.05;
  double momentum = 0.9;
  bool use_risk = false;  // ablation flag: apply the CVaR objective to evaluation-side training
  RiskConfig risk;
};

/// Train a fresh model on the synthetic set with full-batch momentum SGD on
/// plain mean cross entropy (risk-neutral by default, matching the standard
/// evaluation protocol).
ModelState train_on_synthetic(const SyntheticSet& synthetic, const ModelSpec& spec, const EvalTrainConfig& cfg,
                              std::uint64_t seed);

/// Argmax-of-logits match rate; prediction ties resolve to the lowest class.
double accuracy(const ModelState& state, const Dataset& test);
std::vector<int> predict(const ModelState& state, const Tensor& features);

struct ClusterMinResult {
  double min_accuracy = 0.0;
  std::vector<double> subset_accuracy;
  std::vector<std::int64_t> subset_size;
};

/// Worst per-subset accuracy over a class-agnostic k-means partition of the
/// test set in raw feature space.
ClusterMinResult cluster_min(const ModelState& state, const Dataset& test, int k, std::uint64_t seed);

struct EvalReport {
  double standard_accuracy = 0.0;
  ClusterMinResult cluster_min;
  std::vector<std::pair<std::string, double>> corruption_accuracies;
  bool has_groups = false;
  double worst_group = 0.0;
  double average_group = 0.0;  // macro average over ground-truth groups
  std::vector<double> group_accuracy;
  std::vector<std::int64_t> group_size;
  std::uint64_t seed = 0;
  double wall_time_seconds = 0.0;
  nlohmann::ordered_json config_echo;

  nlohmann::ordered_json to_json() const;
  std::string summary_line() const;
};

struct EvalSuiteConfig {
  int cluster_min_k = 10;
  std::vector<CorruptionSpec> corruptions;
  std::uint64_t seed = 0;
};

EvalReport robustness_suite(const ModelState& state, const Dataset& test, const EvalSuiteConfig& cfg);

}  // namespace rdd
