#include "duch/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fmt/format.h>
#include <limits>

#include "duch/errors.hpp"

namespace duch {

BatchNormState::BatchNormState(std::size_t width, double momentum_, double epsilon_)
    : gamma(Matrix(1, width, 1.0)),
      beta(Matrix(1, width, 0.0)),
      running_mean(width, 0.0),
      running_var(width, 1.0),
      momentum(momentum_),
      epsilon(epsilon_) {}

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Tape::constant_ref(const Matrix& value) {
  Node node;
  node.borrowed = &value;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Tape::param(Param& p, bool trainable) {
  Node node;
  node.borrowed = &p.value;
  if (trainable) {
    node.param = &p;
    node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  Node node;
  node.owned = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape != this) throw Error("tape: operand recorded on a different tape");
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.borrowed != nullptr ? *n.borrowed : n.owned;
}

Matrix& Tape::grad_slot(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = zeros_like(value(v));
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  if (!nodes_[v.id].requires_grad) return;
  axpy(grad_slot(v), g);
}

void Tape::backward(Var loss) {
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionError(fmt::format("backward: loss must be 1x1, got {}", lv.shape_string()));
  }
  if (!nodes_[loss.id].requires_grad) return;
  for (auto& n : nodes_) n.grad = Matrix();
  grad_slot(loss)(0, 0) = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, value({this, i}), n.grad);
    if (n.param != nullptr) axpy(n.param->grad, n.grad);
  }
}

namespace ad {

namespace {

Matrix map(const Matrix& x, auto fn) {
  Matrix out(x.rows(), x.cols());
  const double* src = x.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = fn(src[i]);
  return out;
}

void require_finite(const Matrix& x, const char* op) {
  if (!x.all_finite()) throw Error(fmt::format("{}: non-finite input", op));
}

Matrix scalar(double v) { return Matrix(1, 1, v); }

// Largest double strictly below 1.
constexpr double kBelowOne = 1.0 - std::numeric_limits<double>::epsilon() / 2;

}  // namespace

Var linear(Var x, Var w, Var b) {
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Matrix& bv = b.value();
  if (xv.cols() != wv.rows()) {
    throw DimensionError(fmt::format("linear: input is {} but weight is {}", xv.shape_string(),
                                     wv.shape_string()));
  }
  if (bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw DimensionError(fmt::format("linear: weight is {} but bias is {}", wv.shape_string(),
                                     bv.shape_string()));
  }
  Matrix out = matmul(xv, wv);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv(0, c);
  }
  const std::array inputs{x, w, b};
  return x.tape->record(std::move(out), inputs,
                        [x, w, b](Tape& t, const Matrix&, const Matrix& g) {
                          if (t.requires_grad(x)) t.accumulate(x, matmul_nt(g, t.value(w)));
                          if (t.requires_grad(w)) t.accumulate(w, matmul_tn(t.value(x), g));
                          if (t.requires_grad(b)) {
                            Matrix& gb = t.grad_slot(b);
                            for (std::size_t r = 0; r < g.rows(); ++r) {
                              for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
                            }
                          }
                        });
}

Var relu(Var x) {
  require_finite(x.value(), "relu");
  const std::array inputs{x};
  return x.tape->record(map(x.value(), [](double v) { return v > 0.0 ? v : 0.0; }), inputs,
                        [x](Tape& t, const Matrix& out, const Matrix& g) {
                          Matrix dx = g;
                          for (std::size_t i = 0; i < dx.size(); ++i) {
                            if (out.data()[i] <= 0.0) dx.data()[i] = 0.0;
                          }
                          t.accumulate(x, dx);
                        });
}

Var tanh(Var x) {
  require_finite(x.value(), "tanh");
  const std::array inputs{x};
  return x.tape->record(
      map(x.value(), [](double v) { return std::clamp(std::tanh(v), -kBelowOne, kBelowOne); }),
      inputs, [x](Tape& t, const Matrix& out, const Matrix& g) {
        Matrix dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const double y = out.data()[i];
          dx.data()[i] *= 1.0 - y * y;
        }
        t.accumulate(x, dx);
      });
}

Var sigmoid(Var x) {
  require_finite(x.value(), "sigmoid");
  const std::array inputs{x};
  return x.tape->record(map(x.value(),
                            [](double v) {
                              return std::clamp(1.0 / (1.0 + std::exp(-v)),
                                                std::numeric_limits<double>::min(), kBelowOne);
                            }),
                        inputs, [x](Tape& t, const Matrix& out, const Matrix& g) {
                          Matrix dx = g;
                          for (std::size_t i = 0; i < dx.size(); ++i) {
                            const double y = out.data()[i];
                            dx.data()[i] *= y * (1.0 - y);
                          }
                          t.accumulate(x, dx);
                        });
}

Var activation(Var x, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return relu(x);
    case Activation::tanh:
      return tanh(x);
    case Activation::sigmoid:
      return sigmoid(x);
  }
  throw Error("activation: unknown kind");
}

Var batch_norm(Var x, BatchNormState& state, Var gamma, Var beta) {
  const Matrix& xv = x.value();
  const std::size_t m = xv.rows();
  const std::size_t h = xv.cols();
  if (h != state.width() || gamma.value().cols() != h || beta.value().cols() != h) {
    throw DimensionError(fmt::format("batch_norm: input is {} but state width is {}",
                                     xv.shape_string(), state.width()));
  }
  const Matrix& gv = gamma.value();
  const Matrix& bv = beta.value();
  const std::array inputs{x, gamma, beta};

  if (state.mode == Mode::eval) {
    std::vector<double> inv_std(h);
    for (std::size_t c = 0; c < h; ++c) inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
    Matrix xhat(m, h);
    Matrix out(m, h);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < h; ++c) {
        xhat(r, c) = (xv(r, c) - state.running_mean[c]) * inv_std[c];
        out(r, c) = gv(0, c) * xhat(r, c) + bv(0, c);
      }
    }
    return x.tape->record(
        std::move(out), inputs,
        [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
            Tape& t, const Matrix&, const Matrix& g) {
          const Matrix& gam = t.value(gamma);
          Matrix dx(g.rows(), g.cols());
          Matrix dgamma(1, g.cols());
          Matrix dbeta(1, g.cols());
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
              dx(r, c) = g(r, c) * gam(0, c) * inv_std[c];
              dgamma(0, c) += g(r, c) * xhat(r, c);
              dbeta(0, c) += g(r, c);
            }
          }
          t.accumulate(x, dx);
          t.accumulate(gamma, dgamma);
          t.accumulate(beta, dbeta);
        });
  }

  if (m < 2) {
    throw DegenerateError(fmt::format("batch_norm: train mode needs at least 2 rows, got {}", m));
  }
  std::vector<double> mean(h, 0.0);
  std::vector<double> var(h, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < h; ++c) mean[c] += xv(r, c);
  }
  for (auto& v : mean) v /= static_cast<double>(m);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < h; ++c) {
      const double d = xv(r, c) - mean[c];
      var[c] += d * d;
    }
  }
  for (auto& v : var) v /= static_cast<double>(m);

  std::vector<double> inv_std(h);
  for (std::size_t c = 0; c < h; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + state.epsilon);
  Matrix xhat(m, h);
  Matrix out(m, h);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < h; ++c) {
      xhat(r, c) = (xv(r, c) - mean[c]) * inv_std[c];
      out(r, c) = gv(0, c) * xhat(r, c) + bv(0, c);
    }
  }

  const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
  for (std::size_t c = 0; c < h; ++c) {
    state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
    state.running_var[c] =
        (1.0 - state.momentum) * state.running_var[c] + state.momentum * var[c] * unbias;
  }

  return x.tape->record(
      std::move(out), inputs,
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, const Matrix&, const Matrix& g) {
        const Matrix& gam = t.value(gamma);
        const std::size_t rows = g.rows();
        const std::size_t cols = g.cols();
        Matrix dgamma(1, cols);
        Matrix dbeta(1, cols);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            dgamma(0, c) += g(r, c) * xhat(r, c);
            dbeta(0, c) += g(r, c);
          }
        }
        t.accumulate(gamma, dgamma);
        t.accumulate(beta, dbeta);
        if (!t.requires_grad(x)) return;
        // dxhat = g * gamma; dx = inv_std / M * (M dxhat - sum(dxhat) - xhat sum(dxhat xhat))
        Matrix dx(rows, cols);
        const double inv_m = 1.0 / static_cast<double>(rows);
        for (std::size_t c = 0; c < cols; ++c) {
          double sum_d = 0.0;
          double sum_dx = 0.0;
          for (std::size_t r = 0; r < rows; ++r) {
            const double d = g(r, c) * gam(0, c);
            sum_d += d;
            sum_dx += d * xhat(r, c);
          }
          for (std::size_t r = 0; r < rows; ++r) {
            const double d = g(r, c) * gam(0, c);
            dx(r, c) = inv_std[c] * inv_m *
                       (static_cast<double>(rows) * d - sum_d - xhat(r, c) * sum_dx);
          }
        }
        t.accumulate(x, dx);
      });
}

Var row_l2_normalize(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  std::vector<double> norms(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double sq = 0.0;
    for (double v : xv.row(r)) sq += v * v;
    const double n = std::sqrt(sq);
    if (!(n > 0.0)) {
      throw DegenerateError(fmt::format("row_l2_normalize: row {} has zero norm", r));
    }
    norms[r] = n;
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) / n;
  }
  const std::array inputs{x};
  return x.tape->record(std::move(out), inputs,
                        [x, norms = std::move(norms)](Tape& t, const Matrix& y, const Matrix& g) {
                          Matrix dx(g.rows(), g.cols());
                          for (std::size_t r = 0; r < g.rows(); ++r) {
                            double dot = 0.0;
                            for (std::size_t c = 0; c < g.cols(); ++c) dot += y(r, c) * g(r, c);
                            for (std::size_t c = 0; c < g.cols(); ++c) {
                              dx(r, c) = (g(r, c) - y(r, c) * dot) / norms[r];
                            }
                          }
                          t.accumulate(x, dx);
                        });
}

Var matmul_nt(Var a, Var c) {
  const std::array inputs{a, c};
  return a.tape->record(duch::matmul_nt(a.value(), c.value()), inputs,
                        [a, c](Tape& t, const Matrix&, const Matrix& g) {
                          if (t.requires_grad(a)) t.accumulate(a, matmul(g, t.value(c)));
                          if (t.requires_grad(c)) t.accumulate(c, matmul_tn(g, t.value(a)));
                        });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "lhs", "rhs");
  Matrix out = a.value();
  axpy(out, b.value());
  const std::array inputs{a, b};
  return a.tape->record(std::move(out), inputs, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var scale(Var a, double factor) {
  Matrix out = map(a.value(), [factor](double v) { return v * factor; });
  const std::array inputs{a};
  return a.tape->record(std::move(out), inputs,
                        [a, factor](Tape& t, const Matrix&, const Matrix& g) {
                          if (t.requires_grad(a)) axpy(t.grad_slot(a), g, factor);
                        });
}

Var vstack(Var top, Var bottom) {
  const std::size_t top_rows = top.value().rows();
  const std::array inputs{top, bottom};
  return top.tape->record(duch::vstack(top.value(), bottom.value()), inputs,
                          [top, bottom, top_rows](Tape& t, const Matrix&, const Matrix& g) {
                            const std::size_t cols = g.cols();
                            if (t.requires_grad(top)) {
                              Matrix& gt = t.grad_slot(top);
                              for (std::size_t i = 0; i < top_rows * cols; ++i) gt.data()[i] += g.data()[i];
                            }
                            if (t.requires_grad(bottom)) {
                              Matrix& gb = t.grad_slot(bottom);
                              for (std::size_t i = 0; i < gb.size(); ++i) {
                                gb.data()[i] += g.data()[top_rows * cols + i];
                              }
                            }
                          });
}

Var contrastive_nll(Var self_sim, Var cross_sim, double tau) {
  const Matrix& s = self_sim.value();
  const Matrix& x = cross_sim.value();
  const std::size_t m = s.rows();
  if (s.cols() != m || !x.same_shape(s)) {
    throw DimensionError(fmt::format("contrastive_nll: self {} and cross {} must be equal squares",
                                     s.shape_string(), x.shape_string()));
  }
  if (!(tau > 0.0)) throw ConfigError("contrastive_nll: temperature must be positive");
  // Softmax-style weights over the denominator terms, kept for backward.
  Matrix p_self(m, m);
  Matrix p_cross(m, m);
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    // Shift by the row maximum so exp() cannot overflow for small tau.
    double shift = x(j, 0) / tau;
    for (std::size_t k = 0; k < m; ++k) {
      if (k != j) shift = std::max(shift, s(j, k) / tau);
      shift = std::max(shift, x(j, k) / tau);
    }
    double denom = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      if (k != j) {
        p_self(j, k) = std::exp(s(j, k) / tau - shift);
        denom += p_self(j, k);
      }
      p_cross(j, k) = std::exp(x(j, k) / tau - shift);
      denom += p_cross(j, k);
    }
    for (std::size_t k = 0; k < m; ++k) {
      p_self(j, k) /= denom;
      p_cross(j, k) /= denom;
    }
    total += shift + std::log(denom) - x(j, j) / tau;
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  const std::array inputs{self_sim, cross_sim};
  return self_sim.tape->record(
      scalar(total * inv_m), inputs,
      [self_sim, cross_sim, tau, inv_m, p_self = std::move(p_self), p_cross = std::move(p_cross)](
          Tape& t, const Matrix&, const Matrix& g) {
        const double coef = g(0, 0) * inv_m / tau;
        if (t.requires_grad(self_sim)) {
          Matrix& gs = t.grad_slot(self_sim);
          for (std::size_t i = 0; i < gs.size(); ++i) gs.data()[i] += coef * p_self.data()[i];
        }
        if (t.requires_grad(cross_sim)) {
          Matrix& gx = t.grad_slot(cross_sim);
          const std::size_t n = gx.rows();
          for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t k = 0; k < n; ++k) {
              gx(j, k) += coef * (p_cross(j, k) - (j == k ? 1.0 : 0.0));
            }
          }
        }
      });
}

Var squared_error_sum(Var h, const Matrix& target, double normalizer) {
  const Matrix& hv = h.value();
  require_same_shape(hv, target, "codes", "target");
  double total = 0.0;
  for (std::size_t i = 0; i < hv.size(); ++i) {
    const double d = target.data()[i] - hv.data()[i];
    total += d * d;
  }
  const std::array inputs{h};
  return h.tape->record(scalar(total / normalizer), inputs,
                        [h, target, normalizer](Tape& t, const Matrix&, const Matrix& g) {
                          const Matrix& hv = t.value(h);
                          Matrix& gh = t.grad_slot(h);
                          const double coef = 2.0 * g(0, 0) / normalizer;
                          for (std::size_t i = 0; i < gh.size(); ++i) {
                            gh.data()[i] += coef * (hv.data()[i] - target.data()[i]);
                          }
                        });
}

Var column_sum_squares(Var h, double normalizer) {
  const Matrix& hv = h.value();
  std::vector<double> sums(hv.cols(), 0.0);
  for (std::size_t r = 0; r < hv.rows(); ++r) {
    for (std::size_t c = 0; c < hv.cols(); ++c) sums[c] += hv(r, c);
  }
  double total = 0.0;
  for (double s : sums) total += s * s;
  const std::array inputs{h};
  return h.tape->record(scalar(total / normalizer), inputs,
                        [h, normalizer, sums = std::move(sums)](Tape& t, const Matrix&,
                                                                const Matrix& g) {
                          Matrix& gh = t.grad_slot(h);
                          const double coef = 2.0 * g(0, 0) / normalizer;
                          for (std::size_t r = 0; r < gh.rows(); ++r) {
                            for (std::size_t c = 0; c < gh.cols(); ++c) gh(r, c) += coef * sums[c];
                          }
                        });
}

Var neg_log_mean(Var p, bool complement, double clamp) {
  const Matrix& pv = p.value();
  const double n = static_cast<double>(pv.size());
  double total = 0.0;
  for (double v : pv.values()) {
    const double q = std::clamp(complement ? 1.0 - v : v, clamp, 1.0 - clamp);
    total -= std::log(q);
  }
  const std::array inputs{p};
  return p.tape->record(scalar(total / n), inputs,
                        [p, complement, clamp, n](Tape& t, const Matrix&, const Matrix& g) {
                          const Matrix& pv = t.value(p);
                          Matrix& gp = t.grad_slot(p);
                          for (std::size_t i = 0; i < gp.size(); ++i) {
                            const double q = complement ? 1.0 - pv.data()[i] : pv.data()[i];
                            if (q < clamp || q > 1.0 - clamp) continue;
                            // d(-log q)/dp = -1/q, times dq/dp = -1 for the complement.
                            const double d = (complement ? 1.0 : -1.0) / q;
                            gp.data()[i] += g(0, 0) * d / n;
                          }
                        });
}

}  // namespace ad

Matrix numerical_gradient(const std::function<Var(Tape&)>& build_loss, Param& target, double step) {
  Matrix out = zeros_like(target.value);
  auto eval = [&build_loss]() {
    Tape tape;
    return build_loss(tape).value()(0, 0);
  };
  for (std::size_t i = 0; i < target.value.size(); ++i) {
    double& slot = target.value.data()[i];
    const double saved = slot;
    slot = saved + step;
    const double plus = eval();
    slot = saved - step;
    const double minus = eval();
    slot = saved;
    out.data()[i] = (plus - minus) / (2.0 * step);
  }
  return out;
}

double max_relative_error(const Matrix& analytic, const Matrix& numeric, double zero_tol) {
  require_same_shape(analytic, numeric, "analytic", "numeric");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i];
    const double n = numeric.data()[i];
    if (std::abs(a) <= zero_tol && std::abs(n) <= zero_tol) continue;
    const double denom = std::max({std::abs(a), std::abs(n), 1e-12});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

double finite_difference_check(const std::function<Var(Tape&)>& build_loss,
                               std::span<Param* const> params, double step, double zero_tol) {
  for (Param* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(build_loss(tape));
  }
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix numeric = numerical_gradient(build_loss, *params[i], step);
    worst = std::max(worst, max_relative_error(analytic[i], numeric, zero_tol));
  }
  return worst;
}

}  // namespace duch
