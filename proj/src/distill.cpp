#include "rdd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "rdd/rng.hpp"

namespace rdd {

// ---------------------------------------------------------------------------
// SyntheticSet
// ---------------------------------------------------------------------------

int SyntheticSet::ipc() const {
  return class_features.empty() ? 0 : static_cast<int>(class_features[0].dim(0));
}

Shape SyntheticSet::feature_shape() const {
  if (class_features.empty()) return {};
  const Shape& s = class_features[0].shape();
  return Shape(s.begin() + 1, s.end());
}

std::int64_t SyntheticSet::feature_width() const {
  return class_features.empty() ? 0 : class_features[0].row_width();
}

void SyntheticSet::validate() const {
  if (class_features.empty()) throw std::invalid_argument("synthetic set: no classes");
  if (learnable.size() != class_features.size()) {
    throw std::invalid_argument("synthetic set: learnable flags do not match class count");
  }
  const std::int64_t ipc0 = class_features[0].dim(0);
  for (const Tensor& t : class_features) {
    if (t.rank() < 1 || t.dim(0) != ipc0) {
      throw std::invalid_argument("synthetic set: every class must hold exactly ipc points");
    }
    if (!(t.shape() == class_features[0].shape())) {
      throw std::invalid_argument("synthetic set: inconsistent per-class shapes");
    }
  }
  if (ipc0 < 1) throw std::invalid_argument("synthetic set: ipc must be >= 1");
}

Tensor SyntheticSet::stacked() const {
  validate();
  Shape s = class_features[0].shape();
  s[0] = static_cast<std::int64_t>(class_features.size()) * s[0];
  Tensor out = Tensor::zeros(s);
  double* dst = out.data();
  for (const Tensor& t : class_features) {
    std::copy(t.data(), t.data() + t.size(), dst);
    dst += t.size();
  }
  return out;
}

std::vector<int> SyntheticSet::stacked_labels() const {
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(classes() * ipc()));
  for (int c = 0; c < classes(); ++c) {
    for (int i = 0; i < ipc(); ++i) labels.push_back(c);
  }
  return labels;
}

Dataset SyntheticSet::as_dataset() const {
  Dataset d;
  d.features = stacked();
  d.labels = stacked_labels();
  d.name = "synthetic";
  return d;
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

int DistillConfig::per_class_batch(int classes) const {
  if (classes < 1) throw std::invalid_argument("distill: need at least one class");
  return std::max(1, minibatch / classes);
}

void DistillConfig::validate() const {
  if (ipc < 1) throw std::invalid_argument("distill: ipc must be >= 1");
  if (iterations < 0) throw std::invalid_argument("distill: iterations must be >= 0");
  if (inner_steps < 0) throw std::invalid_argument("distill: inner_steps must be >= 0");
  if (minibatch < 1) throw std::invalid_argument("distill: minibatch must be >= 1");
  if (synthetic_steps < 1) throw std::invalid_argument("distill: synthetic_steps must be >= 1");
  if (max_clusters < 1) throw std::invalid_argument("distill: max_clusters must be >= 1");
  if (restart_every < 0) throw std::invalid_argument("distill: restart_every must be >= 0");
  if (method == DistillMethod::zero_order) {
    if (zero_order.probes < 1) throw std::invalid_argument("distill: zero-order probe count must be >= 1");
    if (!(zero_order.sigma > 0.0)) throw std::invalid_argument("distill: zero-order sigma must be > 0");
  }
  risk.validate();
  model.validate();
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

SyntheticSet init_synthetic(const Dataset& real, int ipc, InitMode mode, std::uint64_t seed) {
  real.validate();
  if (ipc < 1) throw std::invalid_argument("init_synthetic: ipc must be >= 1");
  const int classes = real.num_classes();
  if (classes < 1) throw std::invalid_argument("init_synthetic: dataset has no classes");

  SyntheticSet s;
  const Shape feat = real.feature_shape();
  for (int c = 0; c < classes; ++c) {
    const std::vector<std::int64_t> pool = real.class_indices(c);
    if (mode == InitMode::random_real) {
      if (static_cast<int>(pool.size()) < ipc) {
        throw std::invalid_argument("init_synthetic: class " + std::to_string(c) + " has " +
                                    std::to_string(pool.size()) + " samples, need " + std::to_string(ipc));
      }
      Rng rng(Rng::mix(seed, 0x696e6974ull + static_cast<std::uint64_t>(c)));
      std::vector<std::int64_t> chosen = rng.sample_without_replacement(static_cast<std::int64_t>(pool.size()), ipc);
      std::sort(chosen.begin(), chosen.end());
      Shape shape = feat;
      shape.insert(shape.begin(), ipc);
      Tensor t = Tensor::zeros(shape);
      const std::int64_t w = real.features.row_width();
      for (int i = 0; i < ipc; ++i) {
        const std::int64_t src = pool[static_cast<std::size_t>(chosen[static_cast<std::size_t>(i)])];
        std::copy(real.features.data() + src * w, real.features.data() + (src + 1) * w, t.data() + i * w);
      }
      s.class_features.push_back(std::move(t));
    } else {
      if (pool.empty()) throw std::invalid_argument("init_synthetic: class " + std::to_string(c) + " is empty");
      if (static_cast<int>(pool.size()) < ipc) {
        throw std::invalid_argument("init_synthetic: class " + std::to_string(c) + " has fewer samples than ipc");
      }
      const Dataset slice = real.take(pool);
      const Tensor flat = slice.features.reshaped({slice.size(), slice.features.row_width()});
      const KmeansResult km = kmeans(flat, ipc, Rng::mix(seed, 0x6b696e6974ull + static_cast<std::uint64_t>(c)));
      Shape shape = feat;
      shape.insert(shape.begin(), ipc);
      s.class_features.push_back(km.centers.reshaped(shape));
    }
  }
  s.learnable.assign(static_cast<std::size_t>(classes), true);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// matching losses
// ---------------------------------------------------------------------------

namespace {

// squared-norm floor below which a gradient counts as zero for the cosine
// distance; the normalization 1/(|gs||gr|) is meaningless that close to zero
constexpr double kZeroNormThreshold = 1e-12;

// batch of class-c points as a rank-2 (mlp) or rank-4 (convnet) input
Var as_model_input(Tape& t, Var batch, const ModelSpec& spec) {
  const Tensor& v = t.value(batch);
  Shape s = spec.input_shape;
  s.insert(s.begin(), v.dim(0));
  if (spec.arch == Arch::mlp) s = {v.dim(0), spec.input_size()};
  return reshape(t, batch, s);
}

Var mean_class_loss(Tape& t, const ModelSpec& spec, const std::vector<Var>& params, Var batch, int label) {
  const std::int64_t b = t.value(batch).dim(0);
  const std::vector<int> labels(static_cast<std::size_t>(b), label);
  return mean(t, per_sample_loss(t, spec, params, as_model_input(t, batch, spec), labels));
}

}  // namespace

MatchLoss gradient_match_loss(Tape& t, const ModelSpec& spec, const std::vector<Var>& params,
                              const std::vector<Var>& syn_class_features,
                              const std::vector<Tensor>& real_class_features, MatchDistance distance) {
  if (syn_class_features.size() != real_class_features.size()) {
    throw std::invalid_argument("gradient_match_loss: class count mismatch");
  }
  MatchLoss out;
  for (std::size_t c = 0; c < syn_class_features.size(); ++c) {
    if (t.value(syn_class_features[c]).dim(0) == 0 || real_class_features[c].dim(0) == 0) {
      throw std::invalid_argument("gradient_match_loss: empty batch for class " + std::to_string(c));
    }
    Var syn_loss = mean_class_loss(t, spec, params, syn_class_features[c], static_cast<int>(c));
    Var real_loss = mean_class_loss(t, spec, params, t.constant(real_class_features[c]), static_cast<int>(c));
    const std::vector<Var> syn_grads = t.gradients(syn_loss, params);
    const std::vector<Var> real_grads = t.gradients(real_loss, params);

    Var class_term{};
    for (std::size_t l = 0; l < params.size(); ++l) {
      Var gs = syn_grads[l];
      Var gr = t.constant(t.value(real_grads[l]));  // supervision target, detached

      Var term{};
      if (distance == MatchDistance::layerwise_cosine) {
        const Tensor& gsv = t.value(gs);
        const Tensor& grv = t.value(gr);
        double ns2 = 0.0, nr2 = 0.0;
        for (std::int64_t i = 0; i < gsv.size(); ++i) ns2 += gsv.at(i) * gsv.at(i);
        for (std::int64_t i = 0; i < grv.size(); ++i) nr2 += grv.at(i) * grv.at(i);
        if (ns2 < kZeroNormThreshold || nr2 < kZeroNormThreshold) {
          out.cosine_fallbacks++;
          Var diff = sub(t, gs, gr);
          term = dot(t, diff, diff);
        } else {
          Var cosine = mul(t, dot(t, gs, gr),
                           reciprocal(t, mul(t, sqrt_v(t, dot(t, gs, gs)), sqrt_v(t, dot(t, gr, gr)))));
          term = add_const(t, neg(t, cosine), 1.0);
        }
      } else {
        Var diff = sub(t, gs, gr);
        term = dot(t, diff, diff);
      }
      class_term = class_term.valid() ? add(t, class_term, term) : term;
    }
    out.per_class.push_back(class_term);
    out.total = out.total.valid() ? add(t, out.total, class_term) : class_term;
  }
  return out;
}

MatchLoss distribution_match_loss(Tape& t, const ModelSpec& spec, const std::vector<Var>& params,
                                  const std::vector<Var>& syn_class_features,
                                  const std::vector<Tensor>& real_class_features) {
  if (syn_class_features.size() != real_class_features.size()) {
    throw std::invalid_argument("distribution_match_loss: class count mismatch");
  }
  MatchLoss out;
  for (std::size_t c = 0; c < syn_class_features.size(); ++c) {
    const std::int64_t bs = t.value(syn_class_features[c]).dim(0);
    const std::int64_t br = real_class_features[c].dim(0);
    if (bs == 0 || br == 0) {
      throw std::invalid_argument("distribution_match_loss: empty batch for class " + std::to_string(c));
    }
    Var es = forward(t, spec, params, as_model_input(t, syn_class_features[c], spec)).embedding;
    Var er = forward(t, spec, params, as_model_input(t, t.constant(real_class_features[c]), spec)).embedding;
    Var mean_s = scale(t, sum_rows(t, es), 1.0 / static_cast<double>(bs));
    Var mean_r = t.constant(t.value(scale(t, sum_rows(t, er), 1.0 / static_cast<double>(br))));
    Var diff = sub(t, mean_s, mean_r);
    Var term = dot(t, diff, diff);
    out.per_class.push_back(term);
    out.total = out.total.valid() ? add(t, out.total, term) : term;
  }
  return out;
}

// ---------------------------------------------------------------------------
// inner updates
// ---------------------------------------------------------------------------

ModelState inner_dro_update(ModelState state, const Dataset& subsample, const SyntheticSet& synthetic,
                            const RiskConfig& risk, int steps, double lr, double momentum,
                            ClusterMode cluster_mode, int max_clusters, std::uint64_t center_seed,
                            InnerDiagnostics* diag) {
  if (subsample.size() == 0) throw std::invalid_argument("inner_dro_update: empty subsample");
  risk.validate();

  // assignments fixed for the whole call
  std::vector<std::vector<std::int64_t>> members;
  if (cluster_mode == ClusterMode::single) {
    std::vector<std::int64_t> all(static_cast<std::size_t>(subsample.size()));
    for (std::int64_t i = 0; i < subsample.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    members.push_back(std::move(all));
  } else {
    const CenterSet centers = select_centers(synthetic.class_features, max_clusters, center_seed);
    const ClusterAssignment assignment =
        assign_to_nearest(subsample.features, subsample.labels, centers.centers, centers.labels, true);
    for (const auto& m : assignment.members) {
      if (!m.empty()) members.push_back(m);  // empty clusters are skipped
    }
  }
  if (members.empty()) throw std::invalid_argument("inner_dro_update: all clusters empty");

  const std::vector<int> labels = subsample.labels;
  for (int step = 0; step < steps; ++step) {
    Tape t;
    const std::vector<Var> params = param_leaves(t, state, true);
    Var x = t.constant(subsample.features);
    if (state.spec.arch == Arch::mlp) {
      x = reshape(t, x, {subsample.size(), subsample.features.row_width()});
    }
    Var losses = per_sample_loss(t, state.spec, params, x, labels);
    std::vector<Var> cluster_losses;
    cluster_losses.reserve(members.size());
    for (const auto& m : members) cluster_losses.push_back(gather_rows(t, losses, m));
    const GroupObjectiveVars obj = group_objective(t, cluster_losses, losses, risk);
    const std::vector<Var> grads = t.gradients(obj.objective, params);
    std::vector<Tensor> grad_values;
    grad_values.reserve(grads.size());
    for (Var g : grads) grad_values.push_back(t.value(g));
    state = sgd_step(state, grad_values, lr, momentum);
    if (diag != nullptr && step == steps - 1) {
      diag->objective = t.value(obj.objective).at(0);
      diag->cluster_cvars = obj.cluster_cvars;
      diag->cluster_sizes.clear();
      for (const auto& m : members) diag->cluster_sizes.push_back(static_cast<std::int64_t>(m.size()));
    }
  }
  if (diag != nullptr && steps == 0) {
    diag->cluster_sizes.clear();
    for (const auto& m : members) diag->cluster_sizes.push_back(static_cast<std::int64_t>(m.size()));
  }
  return state;
}

ModelState inner_erm_update(ModelState state, const Dataset& subsample, int steps, double lr, double momentum,
                            InnerDiagnostics* diag) {
  if (subsample.size() == 0) throw std::invalid_argument("inner_erm_update: empty subsample");
  for (int step = 0; step < steps; ++step) {
    Tape t;
    const std::vector<Var> params = param_leaves(t, state, true);
    Var x = t.constant(subsample.features);
    if (state.spec.arch == Arch::mlp) {
      x = reshape(t, x, {subsample.size(), subsample.features.row_width()});
    }
    Var losses = per_sample_loss(t, state.spec, params, x, subsample.labels);
    Var objective = mean(t, losses);
    const std::vector<Var> grads = t.gradients(objective, params);
    std::vector<Tensor> grad_values;
    grad_values.reserve(grads.size());
    for (Var g : grads) grad_values.push_back(t.value(g));
    state = sgd_step(state, grad_values, lr, momentum);
    if (diag != nullptr && step == steps - 1) {
      diag->objective = t.value(objective).at(0);
      diag->cluster_cvars = {t.value(objective).at(0)};
      diag->cluster_sizes = {subsample.size()};
    }
  }
  return state;
}

// ---------------------------------------------------------------------------
// first-order loop
// ---------------------------------------------------------------------------

namespace {

std::vector<Tensor> per_class_batches(const Dataset& slice, int classes) {
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    const std::vector<std::int64_t> idx = slice.class_indices(c);
    if (idx.empty()) throw std::invalid_argument("distill: subsample has no samples of class " + std::to_string(c));
    out.push_back(slice.take(idx).features);
  }
  return out;
}

// combine per-class matching losses under the configured weighting
Var combine_matching(Tape& t, const MatchLoss& match, const DistillConfig& cfg) {
  if (!cfg.risk_weighted_matching || cfg.erm_baseline) return match.total;
  Var chain = match.per_class[0];
  for (std::size_t i = 1; i < match.per_class.size(); ++i) chain = add(t, chain, match.per_class[i]);
  Var avg = scale(t, chain, 1.0 / static_cast<double>(match.per_class.size()));
  std::size_t arg = 0;
  for (std::size_t i = 1; i < match.per_class.size(); ++i) {
    if (t.value(match.per_class[i]).at(0) > t.value(match.per_class[arg]).at(0)) arg = i;
  }
  return add(t, scale(t, avg, cfg.risk.weight_avg), scale(t, match.per_class[arg], cfg.risk.weight_max));
}

struct SyntheticStepResult {
  double matching_loss = 0.0;
  int cosine_fallbacks = 0;
};

SyntheticStepResult synthetic_gradient_step(SyntheticSet& s, const ModelState& state,
                                            const std::vector<Tensor>& real_batches, const DistillConfig& cfg) {
  Tape t;
  const bool need_theta_grads = cfg.metric == Metric::gradient;
  const std::vector<Var> params = param_leaves(t, state, need_theta_grads);
  std::vector<Var> syn_vars;
  syn_vars.reserve(s.class_features.size());
  for (std::size_t c = 0; c < s.class_features.size(); ++c) {
    syn_vars.push_back(t.leaf(s.class_features[c], s.learnable[c]));
  }
  const MatchLoss match = cfg.metric == Metric::gradient
                              ? gradient_match_loss(t, cfg.model, params, syn_vars, real_batches, cfg.distance)
                              : distribution_match_loss(t, cfg.model, params, syn_vars, real_batches);
  Var loss = combine_matching(t, match, cfg);
  const std::vector<Var> grads = t.gradients(loss, syn_vars);
  for (std::size_t c = 0; c < s.class_features.size(); ++c) {
    if (!s.learnable[c]) continue;
    Tensor& feat = s.class_features[c];
    const Tensor& g = t.value(grads[c]);
    for (std::int64_t i = 0; i < feat.size(); ++i) feat.at(i) -= cfg.synthetic_lr * g.at(i);
  }
  return {t.value(loss).at(0), match.cosine_fallbacks};
}

}  // namespace

DistillResult distill_first_order(const Dataset& real, const DistillConfig& config) {
  config.validate();
  real.validate();
  const int classes = config.model.classes;
  if (real.num_classes() > classes) {
    throw std::invalid_argument("distill: dataset has more classes than the model spec");
  }

  DistillResult result;
  result.synthetic = init_synthetic(real, config.ipc, config.init, config.synthetic_seed);
  if (static_cast<int>(result.synthetic.class_features.size()) != classes) {
    throw std::invalid_argument("distill: dataset classes do not match model spec classes");
  }

  const int per_class = config.per_class_batch(classes);
  ModelState state = init_model(config.model, Rng::mix(config.model_seed, 0));

  for (int it = 0; it < config.iterations; ++it) {
    try {
      if (config.restart_every > 0 && it % config.restart_every == 0) {
        state = init_model(config.model, Rng::mix(config.model_seed, static_cast<std::uint64_t>(it)));
      }
      const Dataset sub = subsample(real, per_class, Rng::mix(config.subsample_seed, static_cast<std::uint64_t>(it)));

      InnerDiagnostics diag;
      if (config.erm_baseline) {
        state = inner_erm_update(std::move(state), sub, config.inner_steps, config.inner_lr,
                                 config.inner_momentum, &diag);
      } else {
        state = inner_dro_update(std::move(state), sub, result.synthetic, config.risk, config.inner_steps,
                                 config.inner_lr, config.inner_momentum, config.cluster_mode, config.max_clusters,
                                 Rng::mix(config.subsample_seed, 0xc3a7e5ull + static_cast<std::uint64_t>(it)),
                                 &diag);
      }

      const std::vector<Tensor> real_batches = per_class_batches(sub, classes);
      SyntheticStepResult step_result;
      for (int sstep = 0; sstep < config.synthetic_steps; ++sstep) {
        step_result = synthetic_gradient_step(result.synthetic, state, real_batches, config);
      }

      IterationRecord rec;
      rec.iteration = it;
      rec.matching_loss = step_result.matching_loss;
      rec.objective = diag.objective;
      rec.cluster_cvars = diag.cluster_cvars;
      rec.cosine_fallbacks = step_result.cosine_fallbacks;
      rec.synthetic_hash = synthetic_hash(result.synthetic);
      result.log.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error("distill: iteration " + std::to_string(it) + ": " + e.what());
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// zero-order
// ---------------------------------------------------------------------------

std::vector<Tensor> zero_order_grad(const std::function<double(const SyntheticSet&)>& objective,
                                    const SyntheticSet& s, int probes, double sigma, std::uint64_t seed) {
  s.validate();
  if (probes < 1) throw std::invalid_argument("zero_order_grad: need at least one probe");
  if (!(sigma > 0.0)) throw std::invalid_argument("zero_order_grad: sigma must be > 0");

  const double base = objective(s);
  if (!std::isfinite(base)) throw std::runtime_error("zero_order_grad: non-finite objective at probe 0 (base point)");

  std::vector<Tensor> grad;
  grad.reserve(s.class_features.size());
  for (const Tensor& t : s.class_features) grad.push_back(Tensor::zeros(t.shape()));

  for (int l = 1; l <= probes; ++l) {
    Rng rng(Rng::mix(seed, 0x70726f6265ull + static_cast<std::uint64_t>(l)));
    SyntheticSet probe = s;
    std::vector<Tensor> direction;
    direction.reserve(s.class_features.size());
    for (std::size_t c = 0; c < s.class_features.size(); ++c) {
      Tensor v = Tensor::zeros(s.class_features[c].shape());
      if (s.learnable[c]) {
        for (std::int64_t i = 0; i < v.size(); ++i) v.at(i) = rng.normal();
        Tensor& pf = probe.class_features[c];
        for (std::int64_t i = 0; i < pf.size(); ++i) pf.at(i) += sigma * v.at(i);
      }
      direction.push_back(std::move(v));
    }
    const double value = objective(probe);
    if (!std::isfinite(value)) {
      throw std::runtime_error("zero_order_grad: non-finite objective at probe " + std::to_string(l));
    }
    const double coeff = (value - base) / sigma;
    for (std::size_t c = 0; c < grad.size(); ++c) {
      Tensor& g = grad[c];
      const Tensor& v = direction[c];
      for (std::int64_t i = 0; i < g.size(); ++i) g.at(i) += coeff * v.at(i);
    }
  }
  const double inv_m = 1.0 / static_cast<double>(probes);
  for (Tensor& g : grad) {
    for (std::int64_t i = 0; i < g.size(); ++i) g.at(i) *= inv_m;
  }
  return grad;
}

double zero_order_stepsize(int epoch) { return 0.1 / std::sqrt(1.0 + static_cast<double>(epoch)); }

DistillResult distill_zero_order(const Dataset& real, const DistillConfig& config) {
  config.validate();
  real.validate();
  const int classes = config.model.classes;

  DistillResult result;
  result.synthetic = init_synthetic(real, config.ipc, config.init, config.synthetic_seed);
  if (static_cast<int>(result.synthetic.class_features.size()) != classes) {
    throw std::invalid_argument("distill: dataset classes do not match model spec classes");
  }
  const int per_class = config.per_class_batch(classes);
  ModelState state = init_model(config.model, Rng::mix(config.model_seed, 0));

  for (int epoch = 0; epoch < config.iterations; ++epoch) {
    try {
      if (config.restart_every > 0 && epoch % config.restart_every == 0) {
        state = init_model(config.model, Rng::mix(config.model_seed, static_cast<std::uint64_t>(epoch)));
      }
      const Dataset sub =
          subsample(real, per_class, Rng::mix(config.subsample_seed, static_cast<std::uint64_t>(epoch)));
      InnerDiagnostics diag;
      if (config.erm_baseline) {
        state = inner_erm_update(std::move(state), sub, config.inner_steps, config.inner_lr,
                                 config.inner_momentum, &diag);
      } else {
        state = inner_dro_update(std::move(state), sub, result.synthetic, config.risk, config.inner_steps,
                                 config.inner_lr, config.inner_momentum, config.cluster_mode, config.max_clusters,
                                 Rng::mix(config.subsample_seed, 0xc3a7e5ull + static_cast<std::uint64_t>(epoch)),
                                 &diag);
      }
      const std::vector<Tensor> real_batches = per_class_batches(sub, classes);

      // black-box matching objective at theta*
      const ModelState& theta = state;
      auto objective = [&](const SyntheticSet& candidate) {
        Tape t;
        const bool need_theta_grads = config.metric == Metric::gradient;
        const std::vector<Var> params = param_leaves(t, theta, need_theta_grads);
        std::vector<Var> syn_vars;
        syn_vars.reserve(candidate.class_features.size());
        for (const Tensor& feat : candidate.class_features) syn_vars.push_back(t.constant(feat));
        const MatchLoss match = config.metric == Metric::gradient
                                    ? gradient_match_loss(t, config.model, params, syn_vars, real_batches,
                                                          config.distance)
                                    : distribution_match_loss(t, config.model, params, syn_vars, real_batches);
        return t.value(match.total).at(0);
      };

      const std::vector<Tensor> grad =
          zero_order_grad(objective, result.synthetic, config.zero_order.probes, config.zero_order.sigma,
                          Rng::mix(config.probe_seed, static_cast<std::uint64_t>(epoch)));
      const double stepsize = zero_order_stepsize(epoch);
      for (std::size_t c = 0; c < result.synthetic.class_features.size(); ++c) {
        if (!result.synthetic.learnable[c]) continue;
        Tensor& feat = result.synthetic.class_features[c];
        for (std::int64_t i = 0; i < feat.size(); ++i) feat.at(i) -= stepsize * grad[c].at(i);
      }

      IterationRecord rec;
      rec.iteration = epoch;
      rec.matching_loss = objective(result.synthetic);
      rec.objective = diag.objective;
      rec.cluster_cvars = diag.cluster_cvars;
      rec.stepsize = stepsize;
      rec.synthetic_hash = synthetic_hash(result.synthetic);
      result.log.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error("distill: epoch " + std::to_string(epoch) + ": " + e.what());
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// serialization: "RDDS" | u32 version | u32 classes | u32 ipc | u32 rank |
// u64 per-point dims | u8 learnable per class | f64 data per class (LE)
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kSyntheticVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("synthetic file: truncated");
  return v;
}

}  // namespace

std::uint64_t synthetic_hash(const SyntheticSet& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Tensor& t : s.class_features) h = hash_tensor(t, h);
  return h;
}

void save_synthetic(const SyntheticSet& s, const std::string& path) {
  s.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("synthetic file: cannot open '" + path + "' for writing");
  os.write("RDDS", 4);
  write_pod<std::uint32_t>(os, kSyntheticVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.classes()));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.ipc()));
  const Shape feat = s.feature_shape();
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(feat.size()));
  for (std::int64_t d : feat) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
  for (bool l : s.learnable) write_pod<std::uint8_t>(os, l ? 1 : 0);
  for (const Tensor& t : s.class_features) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
  }
  if (!os) throw std::runtime_error("synthetic file: write failed for '" + path + "'");
}

SyntheticSet load_synthetic(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("synthetic file: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RDDS", 4) != 0) throw std::runtime_error("synthetic file: bad magic in '" + path + "'");
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kSyntheticVersion) {
    throw std::runtime_error("synthetic file: unsupported version " + std::to_string(version));
  }
  const auto classes = read_pod<std::uint32_t>(is);
  const auto ipc = read_pod<std::uint32_t>(is);
  const auto rank = read_pod<std::uint32_t>(is);
  Shape feat(rank);
  for (auto& d : feat) d = static_cast<std::int64_t>(read_pod<std::uint64_t>(is));
  SyntheticSet s;
  s.learnable.resize(classes);
  for (std::uint32_t c = 0; c < classes; ++c) {
    const auto flag = read_pod<std::uint8_t>(is);
    s.learnable[c] = flag != 0;
  }
  Shape shape = feat;
  shape.insert(shape.begin(), static_cast<std::int64_t>(ipc));
  for (std::uint32_t c = 0; c < classes; ++c) {
    std::vector<double> data(static_cast<std::size_t>(numel(shape)));
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(sizeof(double) * data.size()));
    if (!is) throw std::runtime_error("synthetic file: truncated class " + std::to_string(c));
    s.class_features.emplace_back(shape, std::move(data));
  }
  s.validate();
  return s;
}

}  // namespace rdd
