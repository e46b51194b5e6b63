#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdd/autodiff.hpp"
#include "rdd/tensor.hpp"

#include "json.hpp"

namespace rdd {

enum class Arch { mlp, convnet };

struct ModelSpec {
  Arch arch = Arch::mlp;
  Shape input_shape;            // {d} for mlp, {H, W, C} for convnet
  std::vector<int> hidden;      // mlp hidden widths
  std::vector<int> channels;    // convnet channel counts
  int kernel = 3;               // convnet kernel size (square, stride 1, same padding)
  int classes = 2;
  std::uint64_t init_seed = 0;

  void validate() const;
  std::int64_t input_size() const;
  nlohmann::ordered_json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

struct NamedParam {
  std::string name;
  Tensor value;
};

/// Parameter collection plus momentum buffers. Steps produce new states;
/// the buffers are runtime-only and are not written to checkpoints.
struct ModelState {
  ModelSpec spec;
  std::vector<NamedParam> params;
  std::vector<Tensor> velocity;  // empty until the first sgd_step

  std::int64_t param_count() const;
};

ModelState init_model(const ModelSpec& spec, std::uint64_t seed);
inline ModelState init_model(const ModelSpec& spec) { return init_model(spec, spec.init_seed); }

std::vector<Var> param_leaves(Tape& t, const ModelState& state, bool requires_grad);

struct ForwardVars {
  Var logits;
  Var embedding;  // penultimate activation (input to the linear head)
};

ForwardVars forward(Tape& t, const ModelSpec& spec, const std::vector<Var>& params, Var x);

/// Convenience: forward on a throwaway tape.
Tensor forward_logits(const ModelState& state, const Tensor& x);
Tensor forward_embedding(const ModelState& state, const Tensor& x);

/// Per-sample cross-entropy losses for a batch (length-b vector on the tape).
Var per_sample_loss(Tape& t, const ModelSpec& spec, const std::vector<Var>& params, Var x,
                    const std::vector<int>& labels);
std::vector<double> per_sample_loss(const ModelState& state, const Tensor& x, const std::vector<int>& labels);

/// Momentum SGD: v <- momentum * v + g, theta <- theta - lr * v.
/// `grads` aligns with state.params by position.
ModelState sgd_step(const ModelState& state, const std::vector<Tensor>& grads, double lr, double momentum);

void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace rdd
