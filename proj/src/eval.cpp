#include "rdd/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "rdd/rng.hpp"

namespace rdd {

ModelState train_on_synthetic(const SyntheticSet& synthetic, const ModelSpec& spec, const EvalTrainConfig& cfg,
                              std::uint64_t seed) {
  synthetic.validate();
  if (cfg.epochs < 0) throw std::invalid_argument("train_on_synthetic: epochs must be >= 0");
  const Dataset train = synthetic.as_dataset();
  ModelState state = init_model(spec, Rng::mix(seed, 0x747261696eull));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape t;
    const std::vector<Var> params = param_leaves(t, state, true);
    Var x = t.constant(train.features);
    if (spec.arch == Arch::mlp) x = reshape(t, x, {train.size(), train.features.row_width()});
    Var losses = per_sample_loss(t, spec, params, x, train.labels);
    Var objective;
    if (cfg.use_risk) {
      // single-cluster CVaR over the synthetic batch, same weighting as training
      const GroupObjectiveVars obj = group_objective(t, {losses}, losses, cfg.risk);
      objective = obj.objective;
    } else {
      objective = mean(t, losses);
    }
    const std::vector<Var> grads = t.gradients(objective, params);
    std::vector<Tensor> grad_values;
    grad_values.reserve(grads.size());
    for (Var g : grads) grad_values.push_back(t.value(g));
    state = sgd_step(state, grad_values, cfg.lr, cfg.momentum);
  }
  return state;
}

std::vector<int> predict(const ModelState& state, const Tensor& features) {
  const std::int64_t n = features.rank() >= 1 ? features.dim(0) : 0;
  std::vector<int> pred(static_cast<std::size_t>(n));
  const std::int64_t chunk = 1024;
  for (std::int64_t begin = 0; begin < n; begin += chunk) {
    const std::int64_t end = std::min(n, begin + chunk);
    Tensor batch = features.rows(begin, end);
    if (state.spec.arch == Arch::mlp) {
      batch = batch.reshaped({end - begin, batch.row_width()});
    }
    const Tensor logits = forward_logits(state, batch);
    const std::int64_t c = logits.dim(1);
    for (std::int64_t i = 0; i < end - begin; ++i) {
      int best = 0;
      for (std::int64_t j = 1; j < c; ++j) {
        if (logits.at(i, j) > logits.at(i, best)) best = static_cast<int>(j);  // ties keep lowest class
      }
      pred[static_cast<std::size_t>(begin + i)] = best;
    }
  }
  return pred;
}

double accuracy(const ModelState& state, const Dataset& test) {
  test.validate();
  if (test.size() == 0) throw std::invalid_argument("accuracy: empty test set");
  const std::vector<int> pred = predict(state, test.features);
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == test.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

ClusterMinResult cluster_min(const ModelState& state, const Dataset& test, int k, std::uint64_t seed) {
  test.validate();
  if (test.size() < k) {
    throw std::invalid_argument("cluster_min: test size " + std::to_string(test.size()) + " below k = " +
                                std::to_string(k));
  }
  const Tensor flat = test.features.reshaped({test.size(), test.features.row_width()});
  const KmeansResult km = kmeans(flat, k, seed);
  const std::vector<int> pred = predict(state, test.features);

  ClusterMinResult out;
  out.min_accuracy = 1.0;
  for (const auto& members : km.assignment.members) {
    if (members.empty()) continue;  // repaired away in practice; skip defensively
    std::int64_t hits = 0;
    for (std::int64_t i : members) {
      if (pred[static_cast<std::size_t>(i)] == test.labels[static_cast<std::size_t>(i)]) ++hits;
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(members.size());
    out.subset_accuracy.push_back(acc);
    out.subset_size.push_back(static_cast<std::int64_t>(members.size()));
    out.min_accuracy = std::min(out.min_accuracy, acc);
  }
  return out;
}

EvalReport robustness_suite(const ModelState& state, const Dataset& test, const EvalSuiteConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  EvalReport report;
  report.seed = cfg.seed;
  report.standard_accuracy = accuracy(state, test);
  report.cluster_min = cluster_min(state, test, cfg.cluster_min_k, cfg.seed);

  for (const CorruptionSpec& spec : cfg.corruptions) {
    const Dataset corrupted = corrupt(test, spec);
    report.corruption_accuracies.emplace_back(spec.name(), accuracy(state, corrupted));
  }

  if (test.has_groups()) {
    report.has_groups = true;
    const int groups = test.num_groups();
    const std::vector<int> pred = predict(state, test.features);
    std::vector<std::int64_t> hits(static_cast<std::size_t>(groups), 0);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(groups), 0);
    for (std::int64_t i = 0; i < test.size(); ++i) {
      const int g = test.group_ids[static_cast<std::size_t>(i)];
      counts[static_cast<std::size_t>(g)]++;
      if (pred[static_cast<std::size_t>(i)] == test.labels[static_cast<std::size_t>(i)]) {
        hits[static_cast<std::size_t>(g)]++;
      }
    }
    report.worst_group = 1.0;
    double sum = 0.0;
    int present = 0;
    for (int g = 0; g < groups; ++g) {
      if (counts[static_cast<std::size_t>(g)] == 0) continue;  // group absent from this test set
      const double acc =
          static_cast<double>(hits[static_cast<std::size_t>(g)]) / static_cast<double>(counts[static_cast<std::size_t>(g)]);
      report.group_accuracy.push_back(acc);
      report.group_size.push_back(counts[static_cast<std::size_t>(g)]);
      report.worst_group = std::min(report.worst_group, acc);
      sum += acc;
      ++present;
    }
    report.average_group = present > 0 ? sum / present : 0.0;
  }

  report.wall_time_seconds =
      std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() - start).count();
  return report;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["standard_accuracy"] = standard_accuracy;
  nlohmann::ordered_json cm;
  cm["min_accuracy"] = cluster_min.min_accuracy;
  cm["subset_accuracy"] = cluster_min.subset_accuracy;
  cm["subset_size"] = cluster_min.subset_size;
  j["cluster_min"] = cm;
  nlohmann::ordered_json corr = nlohmann::ordered_json::object();
  for (const auto& [name, acc] : corruption_accuracies) corr[name] = acc;
  j["corruption_accuracies"] = corr;
  if (has_groups) {
    nlohmann::ordered_json g;
    g["worst_group_accuracy"] = worst_group;
    g["average_group_accuracy"] = average_group;
    g["group_accuracy"] = group_accuracy;
    g["group_size"] = group_size;
    j["groups"] = g;
  }
  j["seed"] = seed;
  j["wall_time_seconds"] = wall_time_seconds;
  if (!config_echo.is_null()) j["config"] = config_echo;
  return j;
}

std::string EvalReport::summary_line() const {
  std::ostringstream os;
  os.precision(4);
  os << "standard=" << standard_accuracy << " cluster_min=" << cluster_min.min_accuracy;
  if (!corruption_accuracies.empty()) {
    auto worst = corruption_accuracies.front();
    for (const auto& ca : corruption_accuracies) {
      if (ca.second < worst.second) worst = ca;
    }
    os << " worst_corruption=" << worst.first << ":" << worst.second;
  }
  if (has_groups) os << " worst_group=" << worst_group;
  return os.str();
}

}  // namespace rdd
