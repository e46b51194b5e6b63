#include "rdd/risk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace rdd {

void RiskConfig::validate() const {
  if (!(alpha > 0.0) || alpha > 1.0) {
    throw std::invalid_argument("risk: alpha must be in (0, 1], got " + std::to_string(alpha));
  }
  if (weight_avg < 0.0 || weight_max < 0.0) throw std::invalid_argument("risk: term weights must be nonnegative");
  if (weight_avg == 0.0 && weight_max == 0.0 && !include_ce) {
    throw std::invalid_argument("risk: objective has no terms (both weights zero, include_ce false)");
  }
}

namespace {

void require_nonempty(std::span<const double> losses, const char* what) {
  if (losses.empty()) throw std::invalid_argument(std::string(what) + ": empty loss vector (empty cluster)");
}

// order-statistic position realizing the alpha-quantile threshold
std::size_t var_position(double alpha, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    if (static_cast<double>(k + 1) / static_cast<double>(n) >= alpha) return k;
  }
  return n - 1;  // alpha <= 1 always triggers by k = n - 1
}

struct TailWeights {
  std::vector<double> w;   // per original sample
  double value = 0.0;      // the resulting CVaR value
};

// Weights realizing the lower-trimmed CVaR as a dot product with the losses:
// 1/(n*alpha) for every sample at or below the threshold, with the threshold
// sample's weight reduced so the total mass is exactly alpha*n. The reduction
// is attributed to the lowest-index sample attaining the threshold, which is
// also where the quantile's local derivative lives.
TailWeights lower_trimmed_weights(std::span<const double> losses, double alpha) {
  const std::size_t n = losses.size();
  std::vector<double> values(losses.begin(), losses.end());
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double f = sorted[var_position(alpha, n)];

  std::size_t m = 0;
  for (double v : values) m += v <= f ? 1 : 0;

  TailWeights tw;
  tw.w.assign(n, 0.0);
  const double base = 1.0 / (static_cast<double>(n) * alpha);
  std::int64_t boundary = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (values[i] <= f) tw.w[i] = base;
    if (values[i] == f && boundary < 0) boundary = static_cast<std::int64_t>(i);
  }
  const double correction = (alpha - static_cast<double>(m) / static_cast<double>(n)) / alpha;
  tw.w[static_cast<std::size_t>(boundary)] += correction;

  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += tw.w[i] * values[i];
  tw.value = acc;
  return tw;
}

double plain_mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double value_at_risk(std::span<const double> losses, double alpha) {
  require_nonempty(losses, "value_at_risk");
  if (!(alpha > 0.0) || alpha > 1.0) {
    throw std::invalid_argument("value_at_risk: alpha must be in (0, 1], got " + std::to_string(alpha));
  }
  std::vector<double> sorted(losses.begin(), losses.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[var_position(alpha, sorted.size())];
}

double cvar(std::span<const double> losses, double alpha, CvarMode mode) {
  require_nonempty(losses, "cvar");
  if (!(alpha > 0.0) || alpha > 1.0) {
    throw std::invalid_argument("cvar: alpha must be in (0, 1], got " + std::to_string(alpha));
  }
  if (mode == CvarMode::lower_trimmed) {
    if (alpha == 1.0) return plain_mean(losses);
    return lower_trimmed_weights(losses, alpha).value;
  }
  // upper tail
  if (alpha == 1.0) return *std::max_element(losses.begin(), losses.end());
  std::vector<double> negated(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) negated[i] = -losses[i];
  const TailWeights tw = lower_trimmed_weights(negated, 1.0 - alpha);
  double acc = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) acc += tw.w[i] * losses[i];
  return acc;
}

Var cvar(Tape& t, Var losses, const RiskConfig& cfg) {
  cfg.validate();
  const Tensor& lv = t.value(losses);
  if (lv.rank() != 1 || lv.size() == 0) {
    throw std::invalid_argument("cvar: expected nonempty loss vector, got " + shape_str(lv.shape()));
  }
  const std::span<const double> values(lv.data(), static_cast<std::size_t>(lv.size()));
  if (cfg.cvar_mode == CvarMode::lower_trimmed) {
    if (cfg.alpha == 1.0) return mean(t, losses);  // exact ERM reduction
    TailWeights tw = lower_trimmed_weights(values, cfg.alpha);
    return dot(t, losses, t.constant(Tensor({lv.dim(0)}, std::move(tw.w))));
  }
  if (cfg.alpha == 1.0) {
    std::int64_t arg = 0;  // lowest index among ties
    for (std::size_t i = 1; i < values.size(); ++i) {
      if (values[i] > values[static_cast<std::size_t>(arg)]) arg = static_cast<std::int64_t>(i);
    }
    return sum(t, gather_rows(t, losses, {arg}));
  }
  std::vector<double> negated(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) negated[i] = -values[i];
  TailWeights tw = lower_trimmed_weights(negated, 1.0 - cfg.alpha);
  return dot(t, losses, t.constant(Tensor({lv.dim(0)}, std::move(tw.w))));
}

GroupObjectiveValue group_objective(const std::vector<std::vector<double>>& cluster_losses,
                                    const RiskConfig& cfg) {
  cfg.validate();
  if (cluster_losses.empty()) throw std::invalid_argument("group_objective: no nonempty clusters");
  GroupObjectiveValue out;
  out.cluster_cvars.reserve(cluster_losses.size());
  for (const auto& c : cluster_losses) out.cluster_cvars.push_back(cvar(c, cfg.alpha, cfg.cvar_mode));
  double avg = 0.0;
  for (double v : out.cluster_cvars) avg += v;
  avg /= static_cast<double>(out.cluster_cvars.size());
  const double mx = *std::max_element(out.cluster_cvars.begin(), out.cluster_cvars.end());
  out.objective = cfg.weight_avg * avg + cfg.weight_max * mx;
  if (cfg.include_ce) {
    double s = 0.0;
    std::int64_t n = 0;
    for (const auto& c : cluster_losses) {
      for (double v : c) s += v;
      n += static_cast<std::int64_t>(c.size());
    }
    out.objective += s / static_cast<double>(n);
  }
  return out;
}

GroupObjectiveVars group_objective(Tape& t, const std::vector<Var>& cluster_losses, Var all_losses,
                                   const RiskConfig& cfg) {
  cfg.validate();
  if (cluster_losses.empty()) throw std::invalid_argument("group_objective: no nonempty clusters");
  GroupObjectiveVars out;
  std::vector<Var> cvars;
  cvars.reserve(cluster_losses.size());
  for (Var c : cluster_losses) {
    Var v = cvar(t, c, cfg);
    cvars.push_back(v);
    out.cluster_cvars.push_back(t.value(v).at(0));
  }

  Var objective{};
  auto accumulate = [&](Var term) { objective = objective.valid() ? add(t, objective, term) : term; };

  if (cfg.weight_avg > 0.0) {
    Var chain = cvars[0];
    for (std::size_t i = 1; i < cvars.size(); ++i) chain = add(t, chain, cvars[i]);
    Var avg = scale(t, chain, 1.0 / static_cast<double>(cvars.size()));
    accumulate(scale(t, avg, cfg.weight_avg));
  }
  if (cfg.weight_max > 0.0) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < out.cluster_cvars.size(); ++i) {
      if (out.cluster_cvars[i] > out.cluster_cvars[arg]) arg = i;  // lowest index wins ties
    }
    out.max_cluster = static_cast<int>(arg);
    accumulate(scale(t, cvars[arg], cfg.weight_max));
  }
  if (cfg.include_ce) {
    if (!all_losses.valid()) {
      throw std::invalid_argument("group_objective: include_ce requires the full per-sample loss vector");
    }
    accumulate(mean(t, all_losses));
  }
  out.objective = objective;
  return out;
}

}  // namespace rdd
