#ifndef DUCH_AUTODIFF_HPP_
#define DUCH_AUTODIFF_HPP_

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "duch/matrix.hpp"

namespace duch {

/// Trainable tensor: value, accumulated gradient and Adam moments, all of
/// the same shape.
struct Param {
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;

  Param() = default;
  explicit Param(Matrix v)
      : value(std::move(v)), grad(zeros_like(value)), adam_m(zeros_like(value)),
        adam_v(zeros_like(value)) {}

  void zero_grad() { grad.fill(0.0); }
};

enum class Mode { train, eval };

struct BatchNormState {
  Param gamma;  // 1 x h
  Param beta;   // 1 x h
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  Mode mode = Mode::train;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t width, double momentum = 0.1, double epsilon = 1e-5);
  std::size_t width() const { return running_mean.size(); }
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
/// node list backwards is a valid topological order for backpropagation.
class Tape {
 public:
  // Receives the node's forward value and the gradient of the loss w.r.t. it.
  using Backward = std::function<void(Tape&, const Matrix& out, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Borrowed, gradient-free view of a matrix owned elsewhere. Must outlive the tape.
  Var constant_ref(const Matrix& value);
  // Parameter leaf. When trainable, backward() accumulates into param.grad.
  Var param(Param& p, bool trainable = true);

  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Gradient accumulated at node v by the last backward(); empty if none reached it.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

  // Accumulation slot for the gradient of v; allocated on first use.
  Matrix& grad_slot(Var v);
  // grad(v) += g, skipped when v does not require a gradient.
  void accumulate(Var v, const Matrix& g);

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* borrowed = nullptr;
    Param* param = nullptr;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

namespace ad {

enum class Activation { relu, tanh, sigmoid };

// out[r] = x[r] * w + b
Var linear(Var x, Var w, Var b);
Var activation(Var x, Activation kind);
Var relu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);

// Train mode normalizes with batch statistics and updates the running
// statistics; eval mode applies the running statistics as a fixed affine map.
Var batch_norm(Var x, BatchNormState& state, Var gamma, Var beta);

// Each row scaled to unit L2 norm. Zero rows raise DegenerateError.
Var row_l2_normalize(Var x);

Var matmul_nt(Var a, Var c);
Var add(Var a, Var b);
Var scale(Var a, double factor);
Var vstack(Var top, Var bottom);

// Given similarity matrices self_sim (anchor vs anchor) and cross_sim
// (anchor vs positive set), returns
//   mean_j -log( e^{cross_jj/tau} / (sum_{k!=j} e^{self_jk/tau} + sum_k e^{cross_jk/tau}) ).
Var contrastive_nll(Var self_sim, Var cross_sim, double tau);

// sum ||target - h||^2 / normalizer, target treated as constant.
Var squared_error_sum(Var h, const Matrix& target, double normalizer);
// ||1^T h||^2 / normalizer: squared norm of the per-column sums.
Var column_sum_squares(Var h, double normalizer);

// -mean log(p) (or -mean log(1 - p) when complement), with p clamped to
// [clamp, 1 - clamp].
Var neg_log_mean(Var p, bool complement, double clamp = 1e-7);

}  // namespace ad

// Central-difference gradient of build_loss() w.r.t. every entry of target.
// build_loss must construct the loss on the supplied tape from scratch.
Matrix numerical_gradient(const std::function<Var(Tape&)>& build_loss, Param& target, double step);

// max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-12).
// Coordinates where both |analytic_i| and |numeric_i| are <= zero_tol count
// as agreeing zeros (e.g. dead relu units, where the central difference is
// pure rounding noise).
double max_relative_error(const Matrix& analytic, const Matrix& numeric, double zero_tol = 0.0);

// Zeroes the grads of params, backpropagates build_loss once to fill them,
// and compares each against numerical_gradient. Returns the worst relative
// error over all coordinates of all params.
double finite_difference_check(const std::function<Var(Tape&)>& build_loss,
                               std::span<Param* const> params, double step = 1e-5, double zero_tol = 0.0);

}  // namespace duch

#endif  // DUCH_AUTODIFF_HPP_
