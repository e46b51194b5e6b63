#pragma once

#include <string>
#include <vector>

namespace rdd::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 configuration error.
constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kConfigError = 2;

/// Output root override; when set, relative output directories resolve
/// beneath it.
constexpr const char* kOutputRootEnv = "RDD_OUTPUT_ROOT";

struct EvalOptions {
  std::string synthetic_path;
  std::string test_source;         // .json data spec | .csv | .idx
  std::vector<std::string> corruptions;  // empty = use manifest config
  int cluster_min_k = 0;           // 0 = use manifest config
  int epochs = -1;                 // -1 = use manifest config
  std::string out_dir;             // empty = report next to the synthetic file
};

int run_distill(const std::string& config_path, const std::string& out_override);
int run_eval(const EvalOptions& options);
int run_sweep(const std::string& config_path, const std::string& param, const std::vector<std::string>& values,
              const std::string& out_override);

}  // namespace rdd::cli
