#include "rdd/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "rdd/rng.hpp"

namespace rdd {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& context) {
  if (!j.is_object()) throw ConfigError("config: '" + context + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + context + "." + key + "'");
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field '" + key + "' has the wrong type");
  }
}

template <typename T>
T require(const json& j, const std::string& key, const std::string& context) {
  if (!j.contains(key)) throw ConfigError("config: missing required field '" + context + "." + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field '" + context + "." + key + "' has the wrong type");
  }
}

CorruptionSpec parse_corruption(const json& j, std::uint64_t seed) {
  CorruptionSpec spec;
  if (j.is_string()) {
    spec = CorruptionSpec::parse(j.get<std::string>());
  } else {
    check_keys(j, {"kind", "sigma", "width", "lo", "hi", "seed"}, "eval.corruptions[]");
    spec = CorruptionSpec::parse(require<std::string>(j, "kind", "eval.corruptions[]"));
    spec.noise_sigma = get_or<double>(j, "sigma", spec.noise_sigma);
    spec.blur_width = get_or<int>(j, "width", spec.blur_width);
    spec.invert_lo = get_or<double>(j, "lo", spec.invert_lo);
    spec.invert_hi = get_or<double>(j, "hi", spec.invert_hi);
    if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
  }
  spec.seed = seed;
  spec.validate();
  return spec;
}

DataConfig parse_data(const json& j) {
  check_keys(j,
             {"source", "classes", "groups_per_class", "dim", "train_n", "test_n", "group_weights", "separation",
              "train_path", "test_path", "feature_columns", "label_column", "group_column", "train_images",
              "train_labels", "test_images", "test_labels"},
             "data");
  DataConfig d;
  const std::string source = get_or<std::string>(j, "source", "generator");
  if (source == "generator") {
    d.source = DataConfig::Source::generator;
    d.mixture.classes = get_or<int>(j, "classes", d.mixture.classes);
    d.mixture.groups_per_class = get_or<int>(j, "groups_per_class", d.mixture.groups_per_class);
    d.mixture.dim = get_or<int>(j, "dim", d.mixture.dim);
    d.mixture.n = get_or<std::int64_t>(j, "train_n", d.mixture.n);
    d.test_n = get_or<std::int64_t>(j, "test_n", 0);
    d.mixture.separation = get_or<double>(j, "separation", d.mixture.separation);
    if (j.contains("group_weights")) {
      d.mixture.group_weights = j.at("group_weights").get<std::vector<double>>();
    } else {
      // one rare subgroup by default
      const int g = d.mixture.groups_per_class;
      if (g == 1) {
        d.mixture.group_weights = {1.0};
      } else {
        d.mixture.group_weights.assign(static_cast<std::size_t>(g), 0.95 / (g - 1));
        d.mixture.group_weights.back() = 0.05;
      }
    }
    try {
      d.mixture.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: data: ") + e.what());
    }
  } else if (source == "csv") {
    d.source = DataConfig::Source::csv;
    d.train_path = require<std::string>(j, "train_path", "data");
    d.test_path = get_or<std::string>(j, "test_path", d.train_path);
    d.feature_columns = get_or<std::vector<std::string>>(j, "feature_columns", {});
    d.label_column = get_or<std::string>(j, "label_column", "label");
    d.group_column = get_or<std::string>(j, "group_column", "");
  } else if (source == "idx") {
    d.source = DataConfig::Source::idx;
    d.train_images = require<std::string>(j, "train_images", "data");
    d.train_labels = get_or<std::string>(j, "train_labels", "");
    d.test_images = get_or<std::string>(j, "test_images", d.train_images);
    d.test_labels = get_or<std::string>(j, "test_labels", d.train_labels);
  } else {
    throw ConfigError("config: data.source must be generator | csv | idx, got '" + source + "'");
  }
  return d;
}

ModelSpec parse_model(const json& j, const DataConfig& data) {
  ModelSpec spec;
  check_keys(j, {"arch", "input_shape", "hidden", "channels", "kernel", "classes"}, "model");
  const std::string arch = get_or<std::string>(j, "arch", "mlp");
  if (arch == "mlp") {
    spec.arch = Arch::mlp;
    spec.hidden = get_or<std::vector<int>>(j, "hidden", {64, 64});
  } else if (arch == "convnet") {
    spec.arch = Arch::convnet;
    spec.channels = get_or<std::vector<int>>(j, "channels", {8, 16});
    spec.kernel = get_or<int>(j, "kernel", 3);
  } else {
    throw ConfigError("config: model.arch must be mlp | convnet, got '" + arch + "'");
  }
  if (j.contains("input_shape")) {
    spec.input_shape = j.at("input_shape").get<Shape>();
  } else if (data.source == DataConfig::Source::generator) {
    spec.input_shape = {data.mixture.dim};
  } else {
    throw ConfigError("config: model.input_shape is required for non-generator data");
  }
  if (j.contains("classes")) {
    spec.classes = j.at("classes").get<int>();
  } else if (data.source == DataConfig::Source::generator) {
    spec.classes = data.mixture.classes;
  } else {
    throw ConfigError("config: model.classes is required for non-generator data");
  }
  try {
    spec.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: model: ") + e.what());
  }
  return spec;
}

RiskConfig parse_risk(const json& j) {
  check_keys(j, {"alpha", "cvar_mode", "include_ce", "weight_avg", "weight_max"}, "risk");
  RiskConfig r;
  r.alpha = get_or<double>(j, "alpha", r.alpha);
  const std::string mode = get_or<std::string>(j, "cvar_mode", "lower_trimmed");
  if (mode == "lower_trimmed") {
    r.cvar_mode = CvarMode::lower_trimmed;
  } else if (mode == "upper_tail") {
    r.cvar_mode = CvarMode::upper_tail;
  } else {
    throw ConfigError("config: risk.cvar_mode must be lower_trimmed | upper_tail, got '" + mode + "'");
  }
  r.include_ce = get_or<bool>(j, "include_ce", r.include_ce);
  r.weight_avg = get_or<double>(j, "weight_avg", r.weight_avg);
  r.weight_max = get_or<double>(j, "weight_max", r.weight_max);
  try {
    r.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: risk: ") + e.what());
  }
  return r;
}

void parse_distill(const json& j, DistillConfig& d) {
  check_keys(j,
             {"method", "metric", "distance", "ipc", "init", "iterations", "inner_steps", "inner_lr",
              "inner_momentum", "minibatch", "synthetic_lr", "synthetic_steps", "max_clusters", "cluster_mode",
              "restart_every", "risk_weighted_matching", "erm_baseline", "zero_order"},
             "distill");
  const std::string method = get_or<std::string>(j, "method", "first_order");
  if (method == "first_order") {
    d.method = DistillMethod::first_order;
  } else if (method == "zero_order") {
    d.method = DistillMethod::zero_order;
  } else {
    throw ConfigError("config: distill.method must be first_order | zero_order, got '" + method + "'");
  }
  const std::string metric = get_or<std::string>(j, "metric", "gradient");
  if (metric == "gradient") {
    d.metric = Metric::gradient;
  } else if (metric == "distribution") {
    d.metric = Metric::distribution;
  } else {
    throw ConfigError("config: distill.metric must be gradient | distribution, got '" + metric + "'");
  }
  const std::string distance = get_or<std::string>(j, "distance", "layerwise_cosine");
  if (distance == "layerwise_cosine") {
    d.distance = MatchDistance::layerwise_cosine;
  } else if (distance == "l2") {
    d.distance = MatchDistance::l2;
  } else {
    throw ConfigError("config: distill.distance must be layerwise_cosine | l2, got '" + distance + "'");
  }
  const std::string init = get_or<std::string>(j, "init", "random_real");
  if (init == "random_real") {
    d.init = InitMode::random_real;
  } else if (init == "class_kmeans") {
    d.init = InitMode::class_kmeans;
  } else {
    throw ConfigError("config: distill.init must be random_real | class_kmeans, got '" + init + "'");
  }
  const std::string cluster_mode = get_or<std::string>(j, "cluster_mode", "synthetic_nearest");
  if (cluster_mode == "synthetic_nearest") {
    d.cluster_mode = ClusterMode::synthetic_nearest;
  } else if (cluster_mode == "single") {
    d.cluster_mode = ClusterMode::single;
  } else {
    throw ConfigError("config: distill.cluster_mode must be synthetic_nearest | single, got '" + cluster_mode + "'");
  }
  d.ipc = get_or<int>(j, "ipc", d.ipc);
  d.iterations = get_or<int>(j, "iterations", d.iterations);
  d.inner_steps = get_or<int>(j, "inner_steps", d.inner_steps);
  d.inner_lr = get_or<double>(j, "inner_lr", d.inner_lr);
  d.inner_momentum = get_or<double>(j, "inner_momentum", d.inner_momentum);
  d.minibatch = get_or<int>(j, "minibatch", d.minibatch);
  d.synthetic_lr = get_or<double>(j, "synthetic_lr", d.synthetic_lr);
  d.synthetic_steps = get_or<int>(j, "synthetic_steps", d.synthetic_steps);
  d.max_clusters = get_or<int>(j, "max_clusters", d.max_clusters);
  d.restart_every = get_or<int>(j, "restart_every", d.restart_every);
  d.risk_weighted_matching = get_or<bool>(j, "risk_weighted_matching", d.risk_weighted_matching);
  d.erm_baseline = get_or<bool>(j, "erm_baseline", d.erm_baseline);
  if (j.contains("zero_order")) {
    const json& z = j.at("zero_order");
    check_keys(z, {"probes", "sigma"}, "distill.zero_order");
    d.zero_order.probes = get_or<int>(z, "probes", d.zero_order.probes);
    d.zero_order.sigma = get_or<double>(z, "sigma", d.zero_order.sigma);
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  check_keys(j, {"seed", "seeds", "output_dir", "data", "model", "risk", "distill", "eval"}, "<root>");
  RunConfig cfg;
  cfg.master_seed = get_or<std::uint64_t>(j, "seed", 0);

  cfg.seeds.data = Rng::mix(cfg.master_seed, 1);
  cfg.seeds.model = Rng::mix(cfg.master_seed, 2);
  cfg.seeds.synthetic = Rng::mix(cfg.master_seed, 3);
  cfg.seeds.subsample = Rng::mix(cfg.master_seed, 4);
  cfg.seeds.probe = Rng::mix(cfg.master_seed, 5);
  cfg.seeds.eval = Rng::mix(cfg.master_seed, 6);
  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    check_keys(s, {"data", "model", "synthetic", "subsample", "probe", "eval"}, "seeds");
    cfg.seeds.data = get_or<std::uint64_t>(s, "data", cfg.seeds.data);
    cfg.seeds.model = get_or<std::uint64_t>(s, "model", cfg.seeds.model);
    cfg.seeds.synthetic = get_or<std::uint64_t>(s, "synthetic", cfg.seeds.synthetic);
    cfg.seeds.subsample = get_or<std::uint64_t>(s, "subsample", cfg.seeds.subsample);
    cfg.seeds.probe = get_or<std::uint64_t>(s, "probe", cfg.seeds.probe);
    cfg.seeds.eval = get_or<std::uint64_t>(s, "eval", cfg.seeds.eval);
  }

  cfg.data = parse_data(j.contains("data") ? j.at("data") : json::object());
  cfg.data.mixture.seed = cfg.seeds.data;

  cfg.distill.model = parse_model(j.contains("model") ? j.at("model") : json::object(), cfg.data);
  cfg.distill.risk = parse_risk(j.contains("risk") ? j.at("risk") : json::object());
  if (j.contains("distill")) parse_distill(j.at("distill"), cfg.distill);
  cfg.distill.model_seed = cfg.seeds.model;
  cfg.distill.synthetic_seed = cfg.seeds.synthetic;
  cfg.distill.subsample_seed = cfg.seeds.subsample;
  cfg.distill.probe_seed = cfg.seeds.probe;

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"epochs", "lr", "momentum", "cluster_min_k", "corruptions", "use_risk"}, "eval");
    cfg.eval_train.epochs = get_or<int>(e, "epochs", cfg.eval_train.epochs);
    cfg.eval_train.lr = get_or<double>(e, "lr", cfg.eval_train.lr);
    cfg.eval_train.momentum = get_or<double>(e, "momentum", cfg.eval_train.momentum);
    cfg.eval_train.use_risk = get_or<bool>(e, "use_risk", false);
    cfg.eval_train.risk = cfg.distill.risk;
    cfg.eval_suite.cluster_min_k = get_or<int>(e, "cluster_min_k", cfg.eval_suite.cluster_min_k);
    if (e.contains("corruptions")) {
      cfg.eval_suite.corruptions.clear();
      for (const json& c : e.at("corruptions")) {
        cfg.eval_suite.corruptions.push_back(parse_corruption(c, cfg.seeds.eval));
      }
    }
  } else {
    cfg.eval_train.risk = cfg.distill.risk;
  }
  cfg.eval_suite.seed = cfg.seeds.eval;

  cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir);

  try {
    cfg.distill.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: distill: ") + e.what());
  }
  if (cfg.eval_train.epochs < 0) throw ConfigError("config: eval.epochs must be >= 0");
  if (cfg.eval_suite.cluster_min_k < 1) throw ConfigError("config: eval.cluster_min_k must be >= 1");
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = master_seed;
  j["seeds"] = {{"data", seeds.data},       {"model", seeds.model},   {"synthetic", seeds.synthetic},
                {"subsample", seeds.subsample}, {"probe", seeds.probe}, {"eval", seeds.eval}};
  nlohmann::ordered_json d;
  switch (data.source) {
    case DataConfig::Source::generator: {
      d["source"] = "generator";
      d["classes"] = data.mixture.classes;
      d["groups_per_class"] = data.mixture.groups_per_class;
      d["dim"] = data.mixture.dim;
      d["train_n"] = data.mixture.n;
      d["test_n"] = data.test_n == 0 ? data.mixture.n : data.test_n;
      d["group_weights"] = data.mixture.group_weights;
      d["separation"] = data.mixture.separation;
      break;
    }
    case DataConfig::Source::csv: {
      d["source"] = "csv";
      d["train_path"] = data.train_path;
      d["test_path"] = data.test_path;
      d["feature_columns"] = data.feature_columns;
      d["label_column"] = data.label_column;
      d["group_column"] = data.group_column;
      break;
    }
    case DataConfig::Source::idx: {
      d["source"] = "idx";
      d["train_images"] = data.train_images;
      d["train_labels"] = data.train_labels;
      d["test_images"] = data.test_images;
      d["test_labels"] = data.test_labels;
      break;
    }
  }
  j["data"] = d;
  j["model"] = distill.model.to_json();
  j["risk"] = {{"alpha", distill.risk.alpha},
               {"cvar_mode", distill.risk.cvar_mode == CvarMode::lower_trimmed ? "lower_trimmed" : "upper_tail"},
               {"include_ce", distill.risk.include_ce},
               {"weight_avg", distill.risk.weight_avg},
               {"weight_max", distill.risk.weight_max}};
  nlohmann::ordered_json dd;
  dd["method"] = distill.method == DistillMethod::first_order ? "first_order" : "zero_order";
  dd["metric"] = distill.metric == Metric::gradient ? "gradient" : "distribution";
  dd["distance"] = distill.distance == MatchDistance::layerwise_cosine ? "layerwise_cosine" : "l2";
  dd["ipc"] = distill.ipc;
  dd["init"] = distill.init == InitMode::random_real ? "random_real" : "class_kmeans";
  dd["iterations"] = distill.iterations;
  dd["inner_steps"] = distill.inner_steps;
  dd["inner_lr"] = distill.inner_lr;
  dd["inner_momentum"] = distill.inner_momentum;
  dd["minibatch"] = distill.minibatch;
  dd["synthetic_lr"] = distill.synthetic_lr;
  dd["synthetic_steps"] = distill.synthetic_steps;
  dd["max_clusters"] = distill.max_clusters;
  dd["cluster_mode"] = distill.cluster_mode == ClusterMode::synthetic_nearest ? "synthetic_nearest" : "single";
  dd["restart_every"] = distill.restart_every;
  dd["risk_weighted_matching"] = distill.risk_weighted_matching;
  dd["erm_baseline"] = distill.erm_baseline;
  dd["zero_order"] = {{"probes", distill.zero_order.probes}, {"sigma", distill.zero_order.sigma}};
  j["distill"] = dd;
  nlohmann::ordered_json e;
  e["epochs"] = eval_train.epochs;
  e["lr"] = eval_train.lr;
  e["momentum"] = eval_train.momentum;
  e["use_risk"] = eval_train.use_risk;
  e["cluster_min_k"] = eval_suite.cluster_min_k;
  nlohmann::ordered_json corr = nlohmann::ordered_json::array();
  for (const CorruptionSpec& c : eval_suite.corruptions) {
    nlohmann::ordered_json cj;
    cj["kind"] = c.name();
    if (c.kind == CorruptionKind::gaussian_noise) cj["sigma"] = c.noise_sigma;
    if (c.kind == CorruptionKind::blur) cj["width"] = c.blur_width;
    if (c.kind == CorruptionKind::invert) {
      cj["lo"] = c.invert_lo;
      cj["hi"] = c.invert_hi;
    }
    cj["seed"] = c.seed;
    corr.push_back(cj);
  }
  e["corruptions"] = corr;
  j["eval"] = e;
  j["output_dir"] = output_dir;
  return j;
}

namespace {

CsvSchema resolve_csv_schema(const std::string& path, const DataConfig& d) {
  CsvSchema schema;
  schema.label_column = d.label_column;
  schema.group_column = d.group_column;
  if (!d.feature_columns.empty()) {
    schema.feature_columns = d.feature_columns;
    return schema;
  }
  std::ifstream is(path);
  if (!is) throw std::runtime_error("csv: cannot open '" + path + "'");
  std::string header;
  if (!std::getline(is, header)) throw std::runtime_error("csv: '" + path + "' is empty");
  std::string cell;
  for (std::size_t i = 0; i <= header.size(); ++i) {
    if (i == header.size() || header[i] == ',') {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      if (cell != d.label_column && (d.group_column.empty() || cell != d.group_column)) {
        schema.feature_columns.push_back(cell);
      }
      cell.clear();
    } else {
      cell.push_back(header[i]);
    }
  }
  return schema;
}

Dataset build_from(const DataConfig& d, bool test, std::uint64_t data_seed) {
  switch (d.source) {
    case DataConfig::Source::generator: {
      MixtureSpec spec = d.mixture;
      spec.seed = data_seed;  // shared population
      spec.sample_seed = test ? Rng::mix(data_seed, 0x74657374ull) : data_seed;
      if (test && d.test_n > 0) spec.n = d.test_n;
      return gen_subgroup_mixture(spec);
    }
    case DataConfig::Source::csv: {
      const std::string& path = test ? d.test_path : d.train_path;
      return load_csv(path, resolve_csv_schema(path, d));
    }
    case DataConfig::Source::idx: {
      return test ? load_idx_images(d.test_images, d.test_labels) : load_idx_images(d.train_images, d.train_labels);
    }
  }
  throw std::logic_error("unreachable data source");
}

}  // namespace

Dataset RunConfig::build_train() const { return build_from(data, false, seeds.data); }
Dataset RunConfig::build_test() const { return build_from(data, true, seeds.data); }

Dataset build_test_dataset(const nlohmann::json& spec) {
  std::uint64_t master = 0;
  nlohmann::json data_obj;
  if (spec.is_object() && spec.contains("data")) {
    master = get_or<std::uint64_t>(spec, "seed", 0);
    data_obj = spec.at("data");
  } else {
    data_obj = spec;
  }
  const DataConfig d = parse_data(data_obj);
  return build_from(d, true, Rng::mix(master, 1));
}

}  // namespace rdd
