#pragma once

#include <span>
#include <vector>

#include "rdd/autodiff.hpp"

namespace rdd {

enum class CvarMode { lower_trimmed, upper_tail };

struct RiskConfig {
  double alpha = 0.8;                          // tail ratio in (0, 1]
  CvarMode cvar_mode = CvarMode::lower_trimmed;
  bool include_ce = true;                      // add plain mean cross entropy
  double weight_avg = 1.0;                     // weight of mean-of-CVaRs term
  double weight_max = 1.0;                     // weight of max-of-CVaRs term

  void validate() const;
};

/// Smallest loss value v such that the fraction of losses <= v reaches alpha
/// (an order statistic of the input).
double value_at_risk(std::span<const double> losses, double alpha);

/// lower_trimmed: fractionally weighted mean of the smallest alpha*n losses
/// (the boundary order statistic is weighted so total weight is exactly
/// alpha*n). At alpha = 1 this is the plain mean, computed identically to
/// mean() so the degenerate configuration reduces bit-exactly to ERM.
/// upper_tail: the symmetric statistic on the other tail (mean of the largest
/// (1-alpha)*n losses; the max at alpha = 1).
double cvar(std::span<const double> losses, double alpha, CvarMode mode);
inline double cvar(std::span<const double> losses, const RiskConfig& cfg) {
  cfg.validate();
  return cvar(losses, cfg.alpha, cfg.cvar_mode);
}

/// Differentiable CVaR of a length-n loss vector on the tape. The tail
/// selection weights are piecewise constant in the losses and enter as a
/// constant tensor, so gradients match the analytic subgradient wherever the
/// quantile selection is locally stable.
Var cvar(Tape& t, Var losses, const RiskConfig& cfg);

struct GroupObjectiveValue {
  double objective = 0.0;
  std::vector<double> cluster_cvars;
};

struct GroupObjectiveVars {
  Var objective;
  std::vector<double> cluster_cvars;
  int max_cluster = -1;  // index into the nonempty-cluster list
};

/// weight_avg * mean_i CVaR_i + weight_max * max_i CVaR_i (+ mean CE when
/// configured). Empty clusters must be filtered by the caller; the mean runs
/// over the clusters given. The max term subgradient flows through the single
/// lowest-index argmax cluster.
GroupObjectiveValue group_objective(const std::vector<std::vector<double>>& cluster_losses,
                                    const RiskConfig& cfg);
GroupObjectiveVars group_objective(Tape& t, const std::vector<Var>& cluster_losses, Var all_losses,
                                   const RiskConfig& cfg);

}  // namespace rdd
