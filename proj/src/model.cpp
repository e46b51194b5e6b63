#include "rdd/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "rdd/rng.hpp"

namespace rdd {

void ModelSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("model spec: need at least 2 classes");
  if (arch == Arch::mlp) {
    if (input_shape.size() != 1 || input_shape[0] <= 0) {
      throw std::invalid_argument("model spec: mlp expects a flat input shape, got " + shape_str(input_shape));
    }
    for (int h : hidden) {
      if (h <= 0) throw std::invalid_argument("model spec: nonpositive hidden width");
    }
  } else {
    if (input_shape.size() != 3 || input_shape[0] <= 0 || input_shape[1] <= 0 || input_shape[2] <= 0) {
      throw std::invalid_argument("model spec: convnet expects an HxWxC input shape, got " + shape_str(input_shape));
    }
    if (channels.empty()) throw std::invalid_argument("model spec: convnet needs at least one channel count");
    for (int c : channels) {
      if (c <= 0) throw std::invalid_argument("model spec: nonpositive channel count");
    }
    if (kernel <= 0 || kernel % 2 == 0) {
      throw std::invalid_argument("model spec: kernel must be odd and positive, got " + std::to_string(kernel));
    }
    if (kernel > input_shape[0] + 2 * (kernel / 2) || kernel > input_shape[1] + 2 * (kernel / 2)) {
      throw std::invalid_argument("model spec: kernel larger than padded input");
    }
  }
}

std::int64_t ModelSpec::input_size() const { return numel(input_shape); }

nlohmann::ordered_json ModelSpec::to_json() const {
  nlohmann::ordered_json j;
  j["arch"] = arch == Arch::mlp ? "mlp" : "convnet";
  j["input_shape"] = input_shape;
  if (arch == Arch::mlp) {
    j["hidden"] = hidden;
  } else {
    j["channels"] = channels;
    j["kernel"] = kernel;
  }
  j["classes"] = classes;
  j["init_seed"] = init_seed;
  return j;
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s;
  const std::string arch = j.at("arch").get<std::string>();
  if (arch == "mlp") {
    s.arch = Arch::mlp;
  } else if (arch == "convnet") {
    s.arch = Arch::convnet;
  } else {
    throw std::invalid_argument("model spec: unknown arch '" + arch + "'");
  }
  s.input_shape = j.at("input_shape").get<Shape>();
  if (j.contains("hidden")) s.hidden = j.at("hidden").get<std::vector<int>>();
  if (j.contains("channels")) s.channels = j.at("channels").get<std::vector<int>>();
  if (j.contains("kernel")) s.kernel = j.at("kernel").get<int>();
  s.classes = j.at("classes").get<int>();
  if (j.contains("init_seed")) s.init_seed = j.at("init_seed").get<std::uint64_t>();
  s.validate();
  return s;
}

std::int64_t ModelState::param_count() const {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

namespace {

Tensor he_uniform(Rng& rng, Shape shape, std::int64_t fan_in) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(shape);
  for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-limit, limit);
  return t;
}

}  // namespace

ModelState init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(Rng::mix(seed, 0x6d6f64656cull));  // stream tag distinct from data RNGs
  ModelState st;
  st.spec = spec;
  if (spec.arch == Arch::mlp) {
    std::int64_t in = spec.input_size();
    for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
      const std::int64_t out = spec.hidden[l];
      st.params.push_back({"fc" + std::to_string(l) + ".w", he_uniform(rng, {in, out}, in)});
      st.params.push_back({"fc" + std::to_string(l) + ".b", Tensor::zeros({out})});
      in = out;
    }
    st.params.push_back({"head.w", he_uniform(rng, {in, spec.classes}, in)});
    st.params.push_back({"head.b", Tensor::zeros({spec.classes})});
  } else {
    const int k = spec.kernel;
    std::int64_t cin = spec.input_shape[2];
    for (std::size_t l = 0; l < spec.channels.size(); ++l) {
      const std::int64_t cout = spec.channels[l];
      const std::int64_t fan_in = static_cast<std::int64_t>(k) * k * cin;
      st.params.push_back({"conv" + std::to_string(l) + ".k", he_uniform(rng, {k, k, cin, cout}, fan_in)});
      st.params.push_back({"conv" + std::to_string(l) + ".b", Tensor::zeros({cout})});
      cin = cout;
    }
    const std::int64_t flat = spec.input_shape[0] * spec.input_shape[1] * cin;
    st.params.push_back({"head.w", he_uniform(rng, {flat, spec.classes}, flat)});
    st.params.push_back({"head.b", Tensor::zeros({spec.classes})});
  }
  return st;
}

std::vector<Var> param_leaves(Tape& t, const ModelState& state, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(state.params.size());
  for (const auto& p : state.params) vars.push_back(t.leaf(p.value, requires_grad));
  return vars;
}

namespace {

Var conv_layer(Tape& t, Var x, Var kernel, Var bias, int k) {
  const Tensor& xv = t.value(x);
  const Tensor& kv = t.value(kernel);
  const std::int64_t b = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const std::int64_t cout = kv.dim(3);
  const int pad = k / 2;  // same padding at stride 1
  Var cols = im2col(t, x, k, k, pad);
  Var kmat = reshape(t, kernel, {kv.dim(0) * kv.dim(1) * kv.dim(2), cout});
  Var out = add_rowvec(t, matmul(t, cols, kmat), bias);
  return reshape(t, out, {b, h, w, cout});
}

}  // namespace

ForwardVars forward(Tape& t, const ModelSpec& spec, const std::vector<Var>& params, Var x) {
  spec.validate();
  const Tensor& xv = t.value(x);
  const std::size_t expect = spec.arch == Arch::mlp ? 2 * (spec.hidden.size() + 1) : 2 * (spec.channels.size() + 1);
  if (params.size() != expect) {
    throw std::invalid_argument("forward: parameter count " + std::to_string(params.size()) +
                                " does not match spec (" + std::to_string(expect) + ")");
  }
  if (spec.arch == Arch::mlp) {
    if (xv.rank() != 2 || xv.dim(1) != spec.input_size()) {
      throw std::invalid_argument("forward: input " + shape_str(xv.shape()) + " does not match mlp spec input " +
                                  shape_str(spec.input_shape));
    }
    Var h = x;
    std::size_t pi = 0;
    for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
      h = relu(t, add_rowvec(t, matmul(t, h, params[pi]), params[pi + 1]));
      pi += 2;
    }
    Var logits = add_rowvec(t, matmul(t, h, params[pi]), params[pi + 1]);
    return {logits, h};
  }
  if (xv.rank() != 4 || xv.dim(1) != spec.input_shape[0] || xv.dim(2) != spec.input_shape[1] ||
      xv.dim(3) != spec.input_shape[2]) {
    throw std::invalid_argument("forward: input " + shape_str(xv.shape()) + " does not match convnet spec input " +
                                shape_str(spec.input_shape));
  }
  Var h = x;
  std::size_t pi = 0;
  for (std::size_t l = 0; l < spec.channels.size(); ++l) {
    h = relu(t, conv_layer(t, h, params[pi], params[pi + 1], spec.kernel));
    pi += 2;
  }
  const Tensor& hv = t.value(h);
  Var flat = reshape(t, h, {hv.dim(0), hv.dim(1) * hv.dim(2) * hv.dim(3)});
  Var logits = add_rowvec(t, matmul(t, flat, params[pi]), params[pi + 1]);
  return {logits, flat};
}

Tensor forward_logits(const ModelState& state, const Tensor& x) {
  Tape t;
  auto params = param_leaves(t, state, false);
  Var logits = forward(t, state.spec, params, t.constant(x)).logits;
  return t.value(logits);
}

Tensor forward_embedding(const ModelState& state, const Tensor& x) {
  Tape t;
  auto params = param_leaves(t, state, false);
  Var emb = forward(t, state.spec, params, t.constant(x)).embedding;
  return t.value(emb);
}

Var per_sample_loss(Tape& t, const ModelSpec& spec, const std::vector<Var>& params, Var x,
                    const std::vector<int>& labels) {
  Var logits = forward(t, spec, params, x).logits;
  return softmax_cross_entropy(t, logits, labels);
}

std::vector<double> per_sample_loss(const ModelState& state, const Tensor& x, const std::vector<int>& labels) {
  Tape t;
  auto params = param_leaves(t, state, false);
  Var losses = per_sample_loss(t, state.spec, params, t.constant(x), labels);
  return t.value(losses).vec();
}

ModelState sgd_step(const ModelState& state, const std::vector<Tensor>& grads, double lr, double momentum) {
  if (grads.size() != state.params.size()) {
    throw std::invalid_argument("sgd_step: gradient count " + std::to_string(grads.size()) + " vs parameters " +
                                std::to_string(state.params.size()));
  }
  ModelState next = state;
  if (next.velocity.empty()) {
    next.velocity.reserve(state.params.size());
    for (const auto& p : state.params) next.velocity.push_back(Tensor::zeros(p.value.shape()));
  }
  for (std::size_t i = 0; i < next.params.size(); ++i) {
    if (!grads[i].same_shape(next.params[i].value)) {
      throw std::invalid_argument("sgd_step: gradient shape " + shape_str(grads[i].shape()) +
                                  " does not match parameter '" + next.params[i].name + "' " +
                                  shape_str(next.params[i].value.shape()));
    }
    Tensor& v = next.velocity[i];
    Tensor& p = next.params[i].value;
    for (std::int64_t j = 0; j < p.size(); ++j) {
      v.at(j) = momentum * v.at(j) + grads[i].at(j);
      p.at(j) -= lr * v.at(j);
    }
  }
  return next;
}

// ---------------------------------------------------------------------------
// checkpoint format: "RDDM" | u32 version | u64 spec-json length | spec json |
// per parameter: u64 name length | name | u32 rank | u64 dims | f64 data (LE)
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write("RDDM", 4);
  write_pod<std::uint32_t>(os, kCheckpointVersion);
  const std::string spec = state.spec.to_json().dump();
  write_pod<std::uint64_t>(os, spec.size());
  os.write(spec.data(), static_cast<std::streamsize>(spec.size()));
  write_pod<std::uint64_t>(os, state.params.size());
  for (const auto& p : state.params) {
    write_pod<std::uint64_t>(os, p.name.size());
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (std::int64_t d : p.value.shape()) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.value.size())));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RDDM", 4) != 0) throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto spec_len = read_pod<std::uint64_t>(is);
  std::string spec_json(spec_len, '\0');
  is.read(spec_json.data(), static_cast<std::streamsize>(spec_len));
  if (!is) throw std::runtime_error("checkpoint: truncated spec");
  ModelState st;
  st.spec = ModelSpec::from_json(nlohmann::json::parse(spec_json));
  const auto n_params = read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const auto name_len = read_pod<std::uint64_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rank = read_pod<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::int64_t>(read_pod<std::uint64_t>(is));
    std::vector<double> data(static_cast<std::size_t>(numel(shape)));
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(sizeof(double) * data.size()));
    if (!is) throw std::runtime_error("checkpoint: truncated parameter '" + name + "'");
    st.params.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return st;
}

}  // namespace rdd
