#include "rdd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace rdd {

namespace {

#ifdef NDEBUG
constexpr bool kDefaultCheckFinite = false;
#else
constexpr bool kDefaultCheckFinite = true;
#endif

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

void require_rank(const char* op, const Tensor& t, int rank) {
  if (t.rank() != rank) {
    shape_error(op, "expected rank-" + std::to_string(rank) + " tensor, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    shape_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tape::Tape() : check_finite_(kDefaultCheckFinite) {}

void Tape::check_var(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw std::out_of_range("tape: var " + std::to_string(v.id) + " is not on this tape");
  }
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.op = "leaf";
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const {
  check_var(v);
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

bool Tape::wants_grad(Var v) const {
  check_var(v);
  return nodes_[static_cast<std::size_t>(v.id)].requires_grad;
}

Var Tape::record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  if (check_finite_ && !value.all_finite()) {
    throw std::runtime_error(std::string(op) + ": produced non-finite values");
  }
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.inputs.reserve(inputs.size());
  for (Var in : inputs) {
    check_var(in);
    n.inputs.push_back(in.id);
    if (nodes_[static_cast<std::size_t>(in.id)].requires_grad) n.requires_grad = true;
  }
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

std::vector<Var> Tape::gradients(Var loss, const std::vector<Var>& wrt) {
  check_var(loss);
  if (value(loss).size() != 1) {
    throw std::invalid_argument("tape: backward requires a scalar loss, got " + shape_str(value(loss).shape()));
  }
  const int n0 = static_cast<int>(nodes_.size());

  // ancestors of the loss that can carry gradient
  std::vector<char> needed(static_cast<std::size_t>(n0), 0);
  needed[static_cast<std::size_t>(loss.id)] = 1;
  for (int id = loss.id; id >= 0; --id) {
    if (!needed[static_cast<std::size_t>(id)]) continue;
    for (int in : nodes_[static_cast<std::size_t>(id)].inputs) {
      if (nodes_[static_cast<std::size_t>(in)].requires_grad) needed[static_cast<std::size_t>(in)] = 1;
    }
  }

  std::vector<int> grad_of(static_cast<std::size_t>(n0), -1);
  grad_of[static_cast<std::size_t>(loss.id)] =
      constant(Tensor::full(value(loss).shape(), 1.0)).id;

  // reverse record order; each node processed exactly once
  for (int id = loss.id; id >= 0; --id) {
    if (!needed[static_cast<std::size_t>(id)] || grad_of[static_cast<std::size_t>(id)] < 0) continue;
    // copy, record() below may reallocate nodes_
    const BackwardFn backward = nodes_[static_cast<std::size_t>(id)].backward;
    const std::vector<int> inputs = nodes_[static_cast<std::size_t>(id)].inputs;
    if (!backward) continue;  // leaf
    std::vector<Var> gin(inputs.size(), Var{});
    backward(*this, Var{id}, Var{grad_of[static_cast<std::size_t>(id)]}, gin);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const int in = inputs[k];
      if (!nodes_[static_cast<std::size_t>(in)].requires_grad || !gin[k].valid()) continue;
      int& slot = grad_of[static_cast<std::size_t>(in)];
      slot = slot < 0 ? gin[k].id : add(*this, Var{slot}, gin[k]).id;
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (Var v : wrt) {
    check_var(v);
    if (v.id < n0 && grad_of[static_cast<std::size_t>(v.id)] >= 0) {
      out.push_back(Var{grad_of[static_cast<std::size_t>(v.id)]});
    } else {
      out.push_back(constant(Tensor::zeros(value(v).shape())));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape("add", av, bv);
  Tensor out = av;
  for (std::int64_t i = 0; i < out.size(); ++i) out.at(i) += bv.at(i);
  return t.record("add", std::move(out), {a, b},
                  [a, b](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    if (tt.wants_grad(a)) gin[0] = g;
                    if (tt.wants_grad(b)) gin[1] = g;
                  });
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape("sub", av, bv);
  Tensor out = av;
  for (std::int64_t i = 0; i < out.size(); ++i) out.at(i) -= bv.at(i);
  return t.record("sub", std::move(out), {a, b},
                  [a, b](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    if (tt.wants_grad(a)) gin[0] = g;
                    if (tt.wants_grad(b)) gin[1] = scale(tt, g, -1.0);
                  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape("mul", av, bv);
  Tensor out = av;
  for (std::int64_t i = 0; i < out.size(); ++i) out.at(i) *= bv.at(i);
  return t.record("mul", std::move(out), {a, b},
                  [a, b](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    if (tt.wants_grad(a)) gin[0] = mul(tt, g, b);
                    if (tt.wants_grad(b)) gin[1] = mul(tt, g, a);
                  });
}

Var scale(Tape& t, Var a, double c) {
  Tensor out = t.value(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out.at(i) *= c;
  return t.record("scale", std::move(out), {a},
                  [c](Tape& tt, Var, Var g, std::vector<Var>& gin) { gin[0] = scale(tt, g, c); });
}

Var add_const(Tape& t, Var a, double c) {
  Tensor out = t.value(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out.at(i) += c;
  return t.record("add_const", std::move(out), {a},
                  [](Tape&, Var, Var g, std::vector<Var>& gin) { gin[0] = g; });
}

Var neg(Tape& t, Var a) { return scale(t, a, -1.0); }

Var relu(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out.at(i) = out.at(i) > 0.0 ? out.at(i) : 0.0;
  return t.record("relu", std::move(out), {a},
                  [a](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    const Tensor& x = tt.value(a);
                    Tensor mask = Tensor::zeros(x.shape());
                    for (std::int64_t i = 0; i < x.size(); ++i) mask.at(i) = x.at(i) > 0.0 ? 1.0 : 0.0;
                    gin[0] = mul(tt, g, tt.constant(std::move(mask)));
                  });
}

Var exp_v(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out.at(i) = std::exp(out.at(i));
  return t.record("exp", std::move(out), {a},
                  [](Tape& tt, Var self, Var g, std::vector<Var>& gin) { gin[0] = mul(tt, g, self); });
}

Var log_v(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out.at(i) = std::log(out.at(i));
  return t.record("log", std::move(out), {a},
                  [a](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    gin[0] = mul(tt, g, reciprocal(tt, a));
                  });
}

Var sqrt_v(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out.at(i) = std::sqrt(out.at(i));
  return t.record("sqrt", std::move(out), {a},
                  [](Tape& tt, Var self, Var g, std::vector<Var>& gin) {
                    gin[0] = scale(tt, mul(tt, g, reciprocal(tt, self)), 0.5);
                  });
}

Var reciprocal(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (std::int64_t i = 0; i < out.size(); ++i) out.at(i) = 1.0 / out.at(i);
  return t.record("reciprocal", std::move(out), {a},
                  [](Tape& tt, Var self, Var g, std::vector<Var>& gin) {
                    gin[0] = neg(tt, mul(tt, g, mul(tt, self, self)));
                  });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_rank("matmul", av, 2);
  require_rank("matmul", bv, 2);
  const std::int64_t m = av.dim(0), k = av.dim(1), k2 = bv.dim(0), n = bv.dim(1);
  if (k != k2) {
    shape_error("matmul", "inner dimensions disagree: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  const double* pa = av.data();
  const double* pb = bv.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = pb + kk * n;
      double* orow = po + i * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return t.record("matmul", std::move(out), {a, b},
                  [a, b](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    if (tt.wants_grad(a)) gin[0] = matmul(tt, g, transpose(tt, b));
                    if (tt.wants_grad(b)) gin[1] = matmul(tt, transpose(tt, a), g);
                  });
}

Var transpose(Tape& t, Var a) {
  const Tensor& av = t.value(a);
  require_rank("transpose", av, 2);
  const std::int64_t m = av.dim(0), n = av.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  return t.record("transpose", std::move(out), {a},
                  [](Tape& tt, Var, Var g, std::vector<Var>& gin) { gin[0] = transpose(tt, g); });
}

// ---------------------------------------------------------------------------
// reductions / broadcasts
// ---------------------------------------------------------------------------

Var sum(Tape& t, Var a) {
  const Tensor& av = t.value(a);
  double s = 0.0;
  for (std::int64_t i = 0; i < av.size(); ++i) s += av.at(i);
  const Shape in_shape = av.shape();
  return t.record("sum", Tensor::scalar(s), {a},
                  [in_shape](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    gin[0] = bcast_scalar(tt, g, in_shape);
                  });
}

Var mean(Tape& t, Var a) {
  const std::int64_t n = t.value(a).size();
  if (n == 0) shape_error("mean", "empty tensor");
  return scale(t, sum(t, a), 1.0 / static_cast<double>(n));
}

Var sum_rows(Tape& t, Var a) {
  const Tensor& av = t.value(a);
  require_rank("sum_rows", av, 2);
  const std::int64_t m = av.dim(0), n = av.dim(1);
  Tensor out = Tensor::zeros({n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.at(j) += av.at(i, j);
  return t.record("sum_rows", std::move(out), {a},
                  [m](Tape& tt, Var, Var g, std::vector<Var>& gin) { gin[0] = bcast_rows(tt, g, m); });
}

Var sum_cols(Tape& t, Var a) {
  const Tensor& av = t.value(a);
  require_rank("sum_cols", av, 2);
  const std::int64_t m = av.dim(0), n = av.dim(1);
  Tensor out = Tensor::zeros({m});
  for (std::int64_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < n; ++j) s += av.at(i, j);
    out.at(i) = s;
  }
  return t.record("sum_cols", std::move(out), {a},
                  [n](Tape& tt, Var, Var g, std::vector<Var>& gin) { gin[0] = bcast_cols(tt, g, n); });
}

Var bcast_rows(Tape& t, Var v, std::int64_t m) {
  const Tensor& vv = t.value(v);
  require_rank("bcast_rows", vv, 1);
  const std::int64_t n = vv.dim(0);
  Tensor out = Tensor::zeros({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = vv.at(j);
  return t.record("bcast_rows", std::move(out), {v},
                  [](Tape& tt, Var, Var g, std::vector<Var>& gin) { gin[0] = sum_rows(tt, g); });
}

Var bcast_cols(Tape& t, Var v, std::int64_t n) {
  const Tensor& vv = t.value(v);
  require_rank("bcast_cols", vv, 1);
  const std::int64_t m = vv.dim(0);
  Tensor out = Tensor::zeros({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = vv.at(i);
  return t.record("bcast_cols", std::move(out), {v},
                  [](Tape& tt, Var, Var g, std::vector<Var>& gin) { gin[0] = sum_cols(tt, g); });
}

Var bcast_scalar(Tape& t, Var s, Shape shape) {
  const Tensor& sv = t.value(s);
  if (sv.size() != 1) shape_error("bcast_scalar", "expected scalar, got " + shape_str(sv.shape()));
  Tensor out = Tensor::full(shape, sv.at(0));
  return t.record("bcast_scalar", std::move(out), {s},
                  [](Tape& tt, Var, Var g, std::vector<Var>& gin) { gin[0] = sum(tt, g); });
}

Var add_rowvec(Tape& t, Var a, Var v) {
  const Tensor& av = t.value(a);
  const Tensor& vv = t.value(v);
  require_rank("add_rowvec", av, 2);
  require_rank("add_rowvec", vv, 1);
  if (av.dim(1) != vv.dim(0)) {
    shape_error("add_rowvec", shape_str(av.shape()) + " + " + shape_str(vv.shape()));
  }
  Tensor out = av;
  const std::int64_t m = av.dim(0), n = av.dim(1);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.at(i, j) += vv.at(j);
  return t.record("add_rowvec", std::move(out), {a, v},
                  [a, v](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    if (tt.wants_grad(a)) gin[0] = g;
                    if (tt.wants_grad(v)) gin[1] = sum_rows(tt, g);
                  });
}

Var add_colvec(Tape& t, Var a, Var v) {
  const Tensor& av = t.value(a);
  const Tensor& vv = t.value(v);
  require_rank("add_colvec", av, 2);
  require_rank("add_colvec", vv, 1);
  if (av.dim(0) != vv.dim(0)) {
    shape_error("add_colvec", shape_str(av.shape()) + " + " + shape_str(vv.shape()));
  }
  Tensor out = av;
  const std::int64_t m = av.dim(0), n = av.dim(1);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.at(i, j) += vv.at(i);
  return t.record("add_colvec", std::move(out), {a, v},
                  [a, v](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    if (tt.wants_grad(a)) gin[0] = g;
                    if (tt.wants_grad(v)) gin[1] = sum_cols(tt, g);
                  });
}

Var dot(Tape& t, Var a, Var b) { return sum(t, mul(t, a, b)); }

// ---------------------------------------------------------------------------
// shape / indexing
// ---------------------------------------------------------------------------

Var reshape(Tape& t, Var a, Shape shape) {
  const Tensor& av = t.value(a);
  Tensor out = av.reshaped(std::move(shape));
  const Shape in_shape = av.shape();
  return t.record("reshape", std::move(out), {a},
                  [in_shape](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    gin[0] = reshape(tt, g, in_shape);
                  });
}

Var gather_rows(Tape& t, Var a, std::vector<std::int64_t> idx) {
  const Tensor& av = t.value(a);
  if (av.rank() < 1) shape_error("gather_rows", "needs rank >= 1");
  const std::int64_t n = av.dim(0), w = av.row_width();
  for (std::int64_t i : idx) {
    if (i < 0 || i >= n) shape_error("gather_rows", "row index " + std::to_string(i) + " out of [0, " + std::to_string(n) + ")");
  }
  Shape s = av.shape();
  s[0] = static_cast<std::int64_t>(idx.size());
  Tensor out = Tensor::zeros(s);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double* src = av.data() + idx[r] * w;
    std::copy(src, src + w, out.data() + static_cast<std::int64_t>(r) * w);
  }
  return t.record("gather_rows", std::move(out), {a},
                  [idx = std::move(idx), n](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    gin[0] = scatter_rows(tt, g, idx, n);
                  });
}

Var scatter_rows(Tape& t, Var a, std::vector<std::int64_t> idx, std::int64_t n_rows) {
  const Tensor& av = t.value(a);
  if (av.rank() < 1) shape_error("scatter_rows", "needs rank >= 1");
  if (av.dim(0) != static_cast<std::int64_t>(idx.size())) {
    shape_error("scatter_rows", "index count " + std::to_string(idx.size()) + " vs rows " + std::to_string(av.dim(0)));
  }
  const std::int64_t w = av.row_width();
  Shape s = av.shape();
  s[0] = n_rows;
  Tensor out = Tensor::zeros(s);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= n_rows) shape_error("scatter_rows", "row index out of range");
    const double* src = av.data() + static_cast<std::int64_t>(r) * w;
    double* dst = out.data() + idx[r] * w;
    for (std::int64_t j = 0; j < w; ++j) dst[j] += src[j];
  }
  return t.record("scatter_rows", std::move(out), {a},
                  [idx = std::move(idx)](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    gin[0] = gather_rows(tt, g, idx);
                  });
}

Var pick_class(Tape& t, Var logits, std::vector<int> labels) {
  const Tensor& lv = t.value(logits);
  require_rank("pick_class", lv, 2);
  const std::int64_t b = lv.dim(0), c = lv.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b) {
    shape_error("pick_class", "label count " + std::to_string(labels.size()) + " vs batch " + std::to_string(b));
  }
  Tensor out = Tensor::zeros({b});
  for (std::int64_t i = 0; i < b; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) {
      throw std::out_of_range("pick_class: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    out.at(i) = lv.at(i, y);
  }
  return t.record("pick_class", std::move(out), {logits},
                  [labels = std::move(labels), c](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    gin[0] = scatter_class(tt, g, labels, c);
                  });
}

Var scatter_class(Tape& t, Var v, std::vector<int> labels, std::int64_t n_classes) {
  const Tensor& vv = t.value(v);
  require_rank("scatter_class", vv, 1);
  const std::int64_t b = vv.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != b) {
    shape_error("scatter_class", "label count vs batch mismatch");
  }
  Tensor out = Tensor::zeros({b, n_classes});
  for (std::int64_t i = 0; i < b; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= n_classes) throw std::out_of_range("scatter_class: label out of range");
    out.at(i, y) = vv.at(i);
  }
  return t.record("scatter_class", std::move(out), {v},
                  [labels = std::move(labels)](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    gin[0] = pick_class(tt, g, labels);
                  });
}

// ---------------------------------------------------------------------------
// convolution support
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  std::int64_t b, h, w, c, oh, ow;
};

ConvDims conv_dims(const Tensor& x, int kh, int kw, int pad) {
  require_rank("im2col", x, 4);
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), 0, 0};
  d.oh = d.h + 2 * pad - kh + 1;
  d.ow = d.w + 2 * pad - kw + 1;
  if (d.oh <= 0 || d.ow <= 0) {
    shape_error("im2col", "kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                              " too large for input " + shape_str(x.shape()));
  }
  return d;
}

}  // namespace

Var im2col(Tape& t, Var x, int kh, int kw, int pad) {
  const Tensor& xv = t.value(x);
  const ConvDims d = conv_dims(xv, kh, kw, pad);
  Tensor out = Tensor::zeros({d.b * d.oh * d.ow, static_cast<std::int64_t>(kh) * kw * d.c});
  std::int64_t row = 0;
  for (std::int64_t bi = 0; bi < d.b; ++bi) {
    for (std::int64_t oh = 0; oh < d.oh; ++oh) {
      for (std::int64_t ow = 0; ow < d.ow; ++ow, ++row) {
        std::int64_t col = 0;
        for (int ki = 0; ki < kh; ++ki) {
          const std::int64_t ih = oh + ki - pad;
          for (int kj = 0; kj < kw; ++kj) {
            const std::int64_t iw = ow + kj - pad;
            if (ih >= 0 && ih < d.h && iw >= 0 && iw < d.w) {
              const double* src = xv.data() + ((bi * d.h + ih) * d.w + iw) * d.c;
              std::copy(src, src + d.c, out.data() + row * out.dim(1) + col);
            }
            col += d.c;
          }
        }
      }
    }
  }
  const Shape img_shape = xv.shape();
  return t.record("im2col", std::move(out), {x},
                  [img_shape, kh, kw, pad](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    gin[0] = col2im(tt, g, img_shape, kh, kw, pad);
                  });
}

Var col2im(Tape& t, Var cols, Shape img_shape, int kh, int kw, int pad) {
  const Tensor& cv = t.value(cols);
  require_rank("col2im", cv, 2);
  Tensor img = Tensor::zeros(img_shape);
  const ConvDims d = conv_dims(img, kh, kw, pad);
  if (cv.dim(0) != d.b * d.oh * d.ow || cv.dim(1) != static_cast<std::int64_t>(kh) * kw * d.c) {
    shape_error("col2im", "column matrix " + shape_str(cv.shape()) + " does not match image " + shape_str(img_shape));
  }
  std::int64_t row = 0;
  for (std::int64_t bi = 0; bi < d.b; ++bi) {
    for (std::int64_t oh = 0; oh < d.oh; ++oh) {
      for (std::int64_t ow = 0; ow < d.ow; ++ow, ++row) {
        std::int64_t col = 0;
        for (int ki = 0; ki < kh; ++ki) {
          const std::int64_t ih = oh + ki - pad;
          for (int kj = 0; kj < kw; ++kj) {
            const std::int64_t iw = ow + kj - pad;
            if (ih >= 0 && ih < d.h && iw >= 0 && iw < d.w) {
              double* dst = img.data() + ((bi * d.h + ih) * d.w + iw) * d.c;
              const double* src = cv.data() + row * cv.dim(1) + col;
              for (std::int64_t ch = 0; ch < d.c; ++ch) dst[ch] += src[ch];
            }
            col += d.c;
          }
        }
      }
    }
  }
  return t.record("col2im", std::move(img), {cols},
                  [kh, kw, pad](Tape& tt, Var, Var g, std::vector<Var>& gin) {
                    gin[0] = im2col(tt, g, kh, kw, pad);
                  });
}

// ---------------------------------------------------------------------------
// softmax cross entropy
// ---------------------------------------------------------------------------

Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<int>& labels) {
  const Tensor& lv = t.value(logits);
  require_rank("softmax_cross_entropy", lv, 2);
  const std::int64_t b = lv.dim(0), c = lv.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b) {
    shape_error("softmax_cross_entropy", "label count " + std::to_string(labels.size()) + " vs batch " + std::to_string(b));
  }
  for (int y : labels) {
    if (y < 0 || y >= c) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  // detached per-row max; exact for both value and gradients by shift invariance
  Tensor row_max = Tensor::zeros({b});
  for (std::int64_t i = 0; i < b; ++i) {
    double m = lv.at(i, 0);
    for (std::int64_t j = 1; j < c; ++j) m = std::max(m, lv.at(i, j));
    row_max.at(i) = -m;
  }
  Var shifted = add_colvec(t, logits, t.constant(std::move(row_max)));
  Var sum_exp = sum_cols(t, exp_v(t, shifted));       // [b]
  Var picked = pick_class(t, shifted, labels);        // [b]
  return sub(t, log_v(t, sum_exp), picked);
}

}  // namespace rdd
