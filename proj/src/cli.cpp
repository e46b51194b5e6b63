#include "rdd/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>

#include "rdd/config.hpp"
#include "rdd/eval.hpp"

namespace rdd::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

fs::path resolve_out_dir(const std::string& configured, const std::string& override_dir) {
  fs::path dir = override_dir.empty() ? fs::path(configured) : fs::path(override_dir);
  if (dir.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') {
      dir = fs::path(root) / dir;
    }
  }
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

ordered_json manifest_json(const RunConfig& cfg, const DistillResult& result) {
  ordered_json m;
  m["format"] = "rdd-manifest";
  m["version"] = 1;
  m["config"] = cfg.to_json();
  m["iterations_run"] = result.log.size();
  char hash_hex[17];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(synthetic_hash(result.synthetic)));
  m["synthetic_hash"] = hash_hex;
  return m;
}

std::string log_lines(const DistillResult& result) {
  std::string out;
  for (const IterationRecord& rec : result.log) {
    ordered_json j;
    j["iteration"] = rec.iteration;
    j["matching_loss"] = rec.matching_loss;
    j["objective"] = rec.objective;
    j["cluster_cvars"] = rec.cluster_cvars;
    char hash_hex[17];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx", static_cast<unsigned long long>(rec.synthetic_hash));
    j["synthetic_hash"] = hash_hex;
    j["cosine_fallbacks"] = rec.cosine_fallbacks;
    if (rec.stepsize > 0.0) j["stepsize"] = rec.stepsize;
    out += j.dump();
    out += '\n';
  }
  return out;
}

struct RunArtifacts {
  fs::path synthetic_path;
  DistillResult result;
};

RunArtifacts run_distill_into(const RunConfig& cfg, const fs::path& out_dir) {
  const Dataset train = cfg.build_train();
  RunArtifacts artifacts;
  artifacts.result = cfg.distill.method == DistillMethod::first_order ? distill_first_order(train, cfg.distill)
                                                                      : distill_zero_order(train, cfg.distill);
  fs::create_directories(out_dir);
  artifacts.synthetic_path = out_dir / "synthetic.rdds";
  save_synthetic(artifacts.result.synthetic, artifacts.synthetic_path.string());
  write_text(out_dir / "manifest.json", manifest_json(cfg, artifacts.result).dump(2) + "\n");
  write_text(out_dir / "log.jsonl", log_lines(artifacts.result));
  return artifacts;
}

EvalReport evaluate(const RunConfig& cfg, const SyntheticSet& synthetic, const Dataset& test) {
  const ModelState state = train_on_synthetic(synthetic, cfg.distill.model, cfg.eval_train, cfg.seeds.eval);
  EvalReport report = robustness_suite(state, test, cfg.eval_suite);
  report.config_echo = cfg.to_json();
  return report;
}

RunConfig load_manifest_config(const fs::path& synthetic_path) {
  const fs::path manifest = synthetic_path.parent_path() / "manifest.json";
  std::ifstream is(manifest);
  if (!is) {
    throw ConfigError("eval: manifest '" + manifest.string() + "' not found next to the synthetic file");
  }
  json m;
  try {
    is >> m;
  } catch (const json::exception& e) {
    throw ConfigError("eval: manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!m.contains("config")) throw ConfigError("eval: manifest has no 'config' object");
  return RunConfig::from_json(m.at("config"));
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace

int run_distill(const std::string& config_path, const std::string& out_override) {
  return guarded([&]() {
    const RunConfig cfg = RunConfig::from_file(config_path);
    const fs::path out_dir = resolve_out_dir(cfg.output_dir, out_override);
    run_distill_into(cfg, out_dir);
    std::cout << "distilled " << cfg.distill.iterations << " iterations -> " << (out_dir / "synthetic.rdds").string()
              << "\n";
    return kOk;
  });
}

int run_eval(const EvalOptions& options) {
  return guarded([&]() {
    const fs::path synthetic_path(options.synthetic_path);
    RunConfig cfg = load_manifest_config(synthetic_path);
    if (options.cluster_min_k > 0) cfg.eval_suite.cluster_min_k = options.cluster_min_k;
    if (options.epochs >= 0) cfg.eval_train.epochs = options.epochs;
    if (!options.corruptions.empty()) {
      cfg.eval_suite.corruptions.clear();
      for (const std::string& name : options.corruptions) {
        CorruptionSpec spec = CorruptionSpec::parse(name);
        spec.seed = cfg.seeds.eval;
        cfg.eval_suite.corruptions.push_back(spec);
      }
    }

    const SyntheticSet synthetic = load_synthetic(options.synthetic_path);

    Dataset test;
    if (options.test_source.empty()) {
      test = cfg.build_test();
    } else {
      const fs::path src(options.test_source);
      if (src.extension() == ".json") {
        std::ifstream is(src);
        if (!is) throw ConfigError("eval: cannot open test spec '" + src.string() + "'");
        json spec;
        try {
          is >> spec;
        } catch (const json::exception& e) {
          throw ConfigError("eval: test spec is not valid JSON: " + std::string(e.what()));
        }
        test = build_test_dataset(spec);
      } else if (src.extension() == ".csv") {
        DataConfig d;
        d.source = DataConfig::Source::csv;
        d.test_path = d.train_path = src.string();
        RunConfig tmp = cfg;
        tmp.data = d;
        test = tmp.build_test();
      } else {
        test = load_idx_images(src.string());
      }
    }

    const EvalReport report = evaluate(cfg, synthetic, test);
    const fs::path out_dir = options.out_dir.empty() ? synthetic_path.parent_path()
                                                     : resolve_out_dir(options.out_dir, "");
    fs::create_directories(out_dir);
    write_text(out_dir / "report.json", report.to_json().dump(2) + "\n");
    std::cout << report.summary_line() << "\n";
    return kOk;
  });
}

namespace {

// dotted path into the config json; bare names alias into their section
std::vector<std::string> resolve_param_path(const json& root, const std::string& param) {
  std::vector<std::string> path;
  std::string cur;
  for (std::size_t i = 0; i <= param.size(); ++i) {
    if (i == param.size() || param[i] == '.') {
      path.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(param[i]);
    }
  }
  if (path.size() == 1) {
    for (const char* section : {"risk", "distill", "data", "model", "eval"}) {
      if (root.contains(section) && root.at(section).contains(path[0])) {
        return {section, path[0]};
      }
    }
    static const std::set<std::string> risk_fields = {"alpha", "weight_avg", "weight_max", "include_ce"};
    static const std::set<std::string> distill_fields = {"ipc",       "iterations", "inner_steps", "minibatch",
                                                         "max_clusters", "synthetic_lr", "inner_lr"};
    if (risk_fields.count(path[0])) return {"risk", path[0]};
    if (distill_fields.count(path[0])) return {"distill", path[0]};
  }
  return path;
}

json parse_value_literal(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);  // fall back to a string value
  }
}

}  // namespace

int run_sweep(const std::string& config_path, const std::string& param, const std::vector<std::string>& values,
              const std::string& out_override) {
  return guarded([&]() {
    std::ifstream is(config_path);
    if (!is) throw ConfigError("config: cannot open '" + config_path + "'");
    json base;
    try {
      is >> base;
    } catch (const json::exception& e) {
      throw ConfigError("config: '" + config_path + "' is not valid JSON: " + std::string(e.what()));
    }
    if (values.empty()) throw ConfigError("sweep: no values given");

    const std::vector<std::string> path = resolve_param_path(base, param);
    {  // the swept parameter must resolve to a known config field
      json probe = base;
      json* node = &probe;
      for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        if (!node->contains(path[i])) (*node)[path[i]] = json::object();
        node = &(*node)[path[i]];
      }
      (*node)[path.back()] = parse_value_literal(values[0]);
      RunConfig::from_json(probe);  // throws ConfigError on unknown keys
    }

    const RunConfig base_cfg = RunConfig::from_file(config_path);
    const fs::path out_root = resolve_out_dir(base_cfg.output_dir, out_override);
    fs::create_directories(out_root);

    std::string csv = "value,standard_accuracy,cluster_min,worst_group,average_group\n";
    bool any_failed = false;
    for (const std::string& value : values) {
      json patched = base;
      json* node = &patched;
      for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        if (!node->contains(path[i])) (*node)[path[i]] = json::object();
        node = &(*node)[path[i]];
      }
      (*node)[path.back()] = parse_value_literal(value);
      const fs::path run_dir = out_root / (param + "=" + value);
      try {
        const RunConfig cfg = RunConfig::from_json(patched);
        const RunArtifacts artifacts = run_distill_into(cfg, run_dir);
        const Dataset test = cfg.build_test();
        const EvalReport report = evaluate(cfg, artifacts.result.synthetic, test);
        write_text(run_dir / "report.json", report.to_json().dump(2) + "\n");
        csv += value + "," + std::to_string(report.standard_accuracy) + "," +
               std::to_string(report.cluster_min.min_accuracy) + "," +
               (report.has_groups ? std::to_string(report.worst_group) : "") + "," +
               (report.has_groups ? std::to_string(report.average_group) : "") + "\n";
        std::cout << param << "=" << value << " " << report.summary_line() << "\n";
      } catch (const std::exception& e) {
        std::cerr << "sweep: " << param << "=" << value << " failed: " << e.what() << "\n";
        any_failed = true;
      }
      write_text(out_root / "sweep.csv", csv);  // partial results survive later failures
    }
    return any_failed ? kRuntimeError : kOk;
  });
}

}  // namespace rdd::cli
