#pragma once

#include <functional>
#include <vector>

#include "rdd/tensor.hpp"

namespace rdd {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Dynamic tape: every operation appends a node holding the eagerly computed
/// value, its input handles, and a closure that expresses the input gradients
/// in terms of tape operations. Because gradients are themselves recorded
/// nodes, a second backward pass through them yields exact second-order
/// derivatives (needed to differentiate gradient-matching losses with respect
/// to synthetic inputs).
///
/// Single-threaded per tape; nodes are immutable once recorded.
class Tape {
 public:
  Tape();

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }

  const Tensor& value(Var v) const;
  bool wants_grad(Var v) const;
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  /// When enabled, every recorded value is scanned for NaN/Inf and an error
  /// is raised naming the producing op. On by default in debug builds.
  void set_check_finite(bool on) { check_finite_ = on; }

  /// Reverse pass from a scalar loss. Visits each recorded node at most once
  /// in reverse record order and returns one gradient per requested var
  /// (zeros when the loss does not depend on it). The returned gradients are
  /// live tape nodes, so they can be composed and differentiated again.
  std::vector<Var> gradients(Var loss, const std::vector<Var>& wrt);

  using BackwardFn = std::function<void(Tape&, Var self, Var gout, std::vector<Var>& gin)>;
  Var record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    bool requires_grad = false;
    BackwardFn backward;  // empty for leaves
    const char* op = "leaf";
  };
  std::vector<Node> nodes_;
  bool check_finite_;

  void check_var(Var v) const;
};

// ---- elementwise / scalar ----
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var add_const(Tape& t, Var a, double c);
Var neg(Tape& t, Var a);
Var relu(Tape& t, Var a);
Var exp_v(Tape& t, Var a);
Var log_v(Tape& t, Var a);
Var sqrt_v(Tape& t, Var a);
Var reciprocal(Tape& t, Var a);

// ---- linear algebra ----
Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);

// ---- broadcasting / reductions ----
Var sum(Tape& t, Var a);                      // -> scalar
Var mean(Tape& t, Var a);                     // sum / n
Var sum_rows(Tape& t, Var a);                 // m x n -> n   (sum over rows)
Var sum_cols(Tape& t, Var a);                 // m x n -> m   (sum over columns)
Var bcast_rows(Tape& t, Var v, std::int64_t m);  // n -> m x n
Var bcast_cols(Tape& t, Var v, std::int64_t n);  // m -> m x n
Var bcast_scalar(Tape& t, Var s, Shape shape);
Var add_rowvec(Tape& t, Var a, Var v);        // (m x n) + n per row
Var add_colvec(Tape& t, Var a, Var v);        // (m x n) + m per column
Var dot(Tape& t, Var a, Var b);               // sum(a * b), any matching shape

// ---- shape / indexing ----
Var reshape(Tape& t, Var a, Shape shape);
Var gather_rows(Tape& t, Var a, std::vector<std::int64_t> idx);
Var scatter_rows(Tape& t, Var a, std::vector<std::int64_t> idx, std::int64_t n_rows);
Var pick_class(Tape& t, Var logits, std::vector<int> labels);            // b x C -> b
Var scatter_class(Tape& t, Var v, std::vector<int> labels, std::int64_t n_classes);

// ---- convolution support (stride 1, zero padding) ----
Var im2col(Tape& t, Var x, int kh, int kw, int pad);
Var col2im(Tape& t, Var cols, Shape img_shape, int kh, int kw, int pad);

/// Per-sample negative log softmax probability of the true class; returns a
/// length-b vector. Composed from tape primitives so it stays differentiable
/// to any order; the row-max shift is a detached constant (exactly cancelled
/// by softmax shift invariance).
Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<int>& labels);

}  // namespace rdd
