#pragma once

#include <stdexcept>
#include <string>

#include "rdd/data.hpp"
#include "rdd/distill.hpp"
#include "rdd/eval.hpp"

#include "json.hpp"

namespace rdd {

/// Raised for malformed or inconsistent run configurations; maps to exit
/// code 2 at the CLI boundary.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct SeedSet {
  std::uint64_t data = 0;
  std::uint64_t model = 0;
  std::uint64_t synthetic = 0;
  std::uint64_t subsample = 0;
  std::uint64_t probe = 0;
  std::uint64_t eval = 0;
};

struct DataConfig {
  enum class Source { generator, csv, idx };
  Source source = Source::generator;
  // generator
  MixtureSpec mixture;
  std::int64_t test_n = 0;  // 0 = same as train n
  // csv
  std::string train_path, test_path;
  std::vector<std::string> feature_columns;  // empty = all non-label columns
  std::string label_column = "label";
  std::string group_column;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
};

/// Complete declarative experiment description. Defaults mirror the reference
/// constants (alpha 0.8, at most 10 clusters, mini-batch 256), so a
/// near-empty config runs the standard recipe at desk scale.
struct RunConfig {
  std::uint64_t master_seed = 0;
  SeedSet seeds;
  DataConfig data;
  DistillConfig distill;  // carries the model spec and risk config
  EvalTrainConfig eval_train;
  EvalSuiteConfig eval_suite;
  std::string output_dir = "runs/out";

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
  nlohmann::ordered_json to_json() const;  // fully resolved echo, seeds included

  Dataset build_train() const;
  Dataset build_test() const;
};

/// Data-source spec shared by `eval --test`: either a full run config or a
/// bare `data` object.
Dataset build_test_dataset(const nlohmann::json& spec);

}  // namespace rdd
