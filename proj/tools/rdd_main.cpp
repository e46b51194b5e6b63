#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rdd/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Robust dataset distillation: distill, evaluate, sweep"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  auto* distill = app.add_subcommand("distill", "Distill a synthetic set from a config file");
  distill->add_option("--config", config_path, "Run config (JSON)")->required();
  distill->add_option("--out", out_override, "Output directory override");

  rdd::cli::EvalOptions eval_options;
  std::string corruptions_csv;
  auto* eval = app.add_subcommand("eval", "Evaluate a synthetic set on a test source");
  eval->add_option("--synthetic", eval_options.synthetic_path, "Synthetic set file (.rdds)")->required();
  eval->add_option("--test", eval_options.test_source, "Test source: data-spec .json, .csv, or IDX images");
  eval->add_option("--corruptions", corruptions_csv, "Comma-separated corruption kinds (noise,blur,invert)");
  eval->add_option("--cluster-min-k", eval_options.cluster_min_k, "Subset count for the cluster-min metric");
  eval->add_option("--epochs", eval_options.epochs, "Evaluation training epochs override");
  eval->add_option("--out", eval_options.out_dir, "Report directory (default: next to the synthetic file)");

  std::string sweep_config, sweep_param, sweep_values_csv;
  auto* sweep = app.add_subcommand("sweep", "Run distill+eval over a list of parameter values");
  sweep->add_option("--config", sweep_config, "Run config (JSON)")->required();
  sweep->add_option("--param", sweep_param, "Config parameter (e.g. alpha or risk.alpha)")->required();
  sweep->add_option("--values", sweep_values_csv, "Comma-separated values")->required();
  sweep->add_option("--out", out_override, "Output directory override");

  CLI11_PARSE(app, argc, argv);

  auto split_csv = [](const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
      if (ch == ',') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  };

  if (distill->parsed()) return rdd::cli::run_distill(config_path, out_override);
  if (eval->parsed()) {
    eval_options.corruptions = split_csv(corruptions_csv);
    return rdd::cli::run_eval(eval_options);
  }
  if (sweep->parsed()) {
    return rdd::cli::run_sweep(sweep_config, sweep_param, split_csv(sweep_values_csv), out_override);
  }
  return rdd::cli::kConfigError;
}
