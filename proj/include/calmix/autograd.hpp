#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "calmix/matrix.hpp"

namespace calmix {

using ParamId = std::size_t;
using NodeId = std::size_t;
inline constexpr ParamId kNoParam = std::numeric_limits<ParamId>::max();

// Complementary mixing weights for a ratio lambda in [0,1]. The smaller
// weight is recomputed from the larger one so that the pair produced for
// lambda and the swapped pair produced for 1 - lambda coincide bit for bit.
inline std::pair<double, double> mix_weights(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("mix_weights: lambda must lie in [0,1]");
  const double wj = 1.0 - lambda;
  const double wi = (lambda < 0.5) ? 1.0 - wj : lambda;
  return {wi, wj};
}

// wi*a + wj*b clamped to [min(a,b), max(a,b)]; the bare sum can leave the
// interval by one ulp.
inline double lerp_component(double a, double b, double wi, double wj) {
  const double lo = std::min(a, b);
  const double hi = std::max(a, b);
  return std::clamp(wi * a + wj * b, lo, hi);
}

inline Vector lerp_clamped(const Vector& a, const Vector& b, double wi,
                           double wj) {
  if (a.size() != b.size())
    throw std::invalid_argument("lerp: shape mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = lerp_component(a[i], b[i], wi, wj);
  return out;
}

// Named parameter arrays plus their gradient accumulators. Large row-gathered
// tables (the embedding table) opt into row-sparse bookkeeping so that a
// training step only touches the rows a batch actually used.
class ParamStore {
 public:
  ParamId add(std::string name, Matrix value, bool row_sparse_grad = false) {
    Slot s;
    s.name = std::move(name);
    s.grad = Matrix(value.rows, value.cols, 0.0);
    s.value = std::move(value);
    s.row_sparse = row_sparse_grad;
    slots_.push_back(std::move(s));
    return slots_.size() - 1;
  }

  std::size_t count() const { return slots_.size(); }
  const std::string& name(ParamId p) const { return slots_.at(p).name; }
  Matrix& value(ParamId p) { return slots_.at(p).value; }
  const Matrix& value(ParamId p) const { return slots_.at(p).value; }
  Matrix& grad(ParamId p) { return slots_.at(p).grad; }
  const Matrix& grad(ParamId p) const { return slots_.at(p).grad; }

  void touch_row(ParamId p, std::size_t row) {
    slots_.at(p).touched.push_back(row);
  }

  // p -= lr * grad, then reset the accumulators that were used.
  void sgd_step(double lr) {
    for (Slot& s : slots_) {
      if (s.row_sparse) {
        for (std::size_t r : s.touched) {
          auto v = s.value.row(r);
          auto g = s.grad.row(r);
          for (std::size_t j = 0; j < v.size(); ++j) {
            v[j] -= lr * g[j];
            g[j] = 0.0;
          }
        }
        s.touched.clear();
      } else {
        for (std::size_t i = 0; i < s.value.size(); ++i) {
          s.value.data[i] -= lr * s.grad.data[i];
          s.grad.data[i] = 0.0;
        }
      }
    }
  }

  void zero_grad() {
    for (Slot& s : slots_) {
      if (s.row_sparse) {
        for (std::size_t r : s.touched) {
          auto g = s.grad.row(r);
          std::fill(g.begin(), g.end(), 0.0);
        }
        s.touched.clear();
      } else {
        std::fill(s.grad.data.begin(), s.grad.data.end(), 0.0);
      }
    }
  }

 private:
  struct Slot {
    std::string name;
    Matrix value;
    Matrix grad;
    bool row_sparse = false;
    std::vector<std::size_t> touched;
  };
  std::vector<Slot> slots_;
};

// Reverse-mode tape over a fixed op vocabulary: everything the classifier and
// its losses need, nothing more. Values are computed eagerly at record time;
// backward() walks the records once, in reverse, accumulating additively into
// node grads and the bound ParamStore.
//
// A tape is single-owner and single-use: record, backward once, read grads.
// Parameters must not change between record and backward.
class GradTape {
 public:
  explicit GradTape(ParamStore* params) : params_(params) {}

  NodeId input(Matrix value) {
    Node n;
    n.op = OpKind::Input;
    n.value = std::move(value);
    return push(std::move(n));
  }

  NodeId gather_rows(ParamId table, std::vector<std::size_t> rows) {
    const Matrix& t = params_->value(table);
    if (rows.empty()) throw std::invalid_argument("gather_rows: no rows");
    Node n;
    n.op = OpKind::GatherRows;
    n.param_a = table;
    n.value = Matrix(rows.size(), t.cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] >= t.rows)
        throw std::invalid_argument("gather_rows: row index out of range");
      auto src = t.row(rows[r]);
      std::copy(src.begin(), src.end(), n.value.row(r).begin());
    }
    n.rows = std::move(rows);
    return push(std::move(n));
  }

  NodeId mean_rows(NodeId m) {
    Node n;
    n.op = OpKind::MeanRows;
    n.inputs = {m};
    n.value = Matrix::from_vector(mean_rows_forward(value(m)));
    return push(std::move(n));
  }

  // W*x + b with x a column vector.
  NodeId affine(ParamId weight, NodeId x, ParamId bias) {
    const Matrix& W = params_->value(weight);
    const Matrix& b = params_->value(bias);
    const Matrix& xv = value(x);
    if (xv.cols != 1 || b.cols != 1)
      throw std::invalid_argument("affine: operands must be column vectors");
    Node n;
    n.op = OpKind::Affine;
    n.param_a = weight;
    n.param_b = bias;
    n.inputs = {x};
    n.value = Matrix::from_vector(affine_forward(W, xv.data, b.data));
    return push(std::move(n));
  }

  NodeId tanh(NodeId x) {
    Node n;
    n.op = OpKind::Tanh;
    n.inputs = {x};
    n.value = value(x);
    n.value.data = tanh_forward(std::move(n.value.data));
    return push(std::move(n));
  }

  // Convex combination of two same-shape nodes (clamped, see lerp_component).
  NodeId lerp(NodeId a, NodeId b, double lambda) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("lerp: shape mismatch");
    const auto [wi, wj] = mix_weights(lambda);
    Node n;
    n.op = OpKind::Lerp;
    n.inputs = {a, b};
    n.w_first = wi;
    n.w_second = wj;
    n.value = Matrix(av.rows, av.cols);
    for (std::size_t i = 0; i < av.size(); ++i)
      n.value.data[i] = lerp_component(av.data[i], bv.data[i], wi, wj);
    return push(std::move(n));
  }

  // Fused softmax cross entropy against a fixed target distribution. The
  // logits gradient is exactly softmax(z) - target.
  NodeId cross_entropy_with_logits(NodeId logits, Vector target) {
    const Matrix& zv = value(logits);
    if (zv.cols != 1 || zv.rows != target.size())
      throw std::invalid_argument("cross_entropy_with_logits: shape mismatch");
    const double loss = cross_entropy_soft(zv.data, target);
    Node n;
    n.op = OpKind::CrossEntropyWithLogits;
    n.inputs = {logits};
    n.target = std::move(target);
    n.value = Matrix(1, 1, loss);
    return push(std::move(n));
  }

  // sum_i weights[i] * xs[i] over scalar nodes.
  NodeId weighted_sum(std::vector<NodeId> xs, Vector weights) {
    if (xs.size() != weights.size() || xs.empty())
      throw std::invalid_argument("weighted_sum: needs matching nonempty lists");
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Matrix& v = value(xs[i]);
      if (v.size() != 1)
        throw std::invalid_argument("weighted_sum: inputs must be scalars");
      s += weights[i] * v.data[0];
    }
    Node n;
    n.op = OpKind::WeightedSum;
    n.inputs = std::move(xs);
    n.weights = std::move(weights);
    n.value = Matrix(1, 1, s);
    return push(std::move(n));
  }

  const Matrix& value(NodeId id) const { return nodes_.at(id).value; }

  const Matrix& grad(NodeId id) const {
    if (!backward_done_)
      throw std::logic_error("GradTape::grad: backward has not run");
    return nodes_.at(id).grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a recorded scalar. Touches every record exactly once,
  // newest first; gradients accumulate additively into nodes and params.
  void backward(NodeId root) {
    if (nodes_.empty())
      throw std::logic_error("GradTape::backward: no forward pass recorded");
    if (backward_done_)
      throw std::logic_error("GradTape::backward: tape already consumed");
    if (root >= nodes_.size() || nodes_[root].value.size() != 1)
      throw std::invalid_argument("GradTape::backward: root must be a recorded scalar");
    for (Node& n : nodes_) n.grad = Matrix(n.value.rows, n.value.cols, 0.0);
    nodes_[root].grad.data[0] = 1.0;

    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      switch (n.op) {
        case OpKind::Input:
          break;
        case OpKind::GatherRows: {
          Matrix& tg = params_->grad(n.param_a);
          for (std::size_t r = 0; r < n.rows.size(); ++r) {
            auto dst = tg.row(n.rows[r]);
            auto src = n.grad.row(r);
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
            params_->touch_row(n.param_a, n.rows[r]);
          }
          break;
        }
        case OpKind::MeanRows: {
          Matrix& gin = nodes_[n.inputs[0]].grad;
          const double inv = 1.0 / static_cast<double>(gin.rows);
          for (std::size_t r = 0; r < gin.rows; ++r)
            for (std::size_t j = 0; j < gin.cols; ++j)
              gin.at(r, j) += n.grad.data[j] * inv;
          break;
        }
        case OpKind::Affine: {
          const Matrix& W = params_->value(n.param_a);
          const Matrix& xv = nodes_[n.inputs[0]].value;
          Matrix& gW = params_->grad(n.param_a);
          Matrix& gb = params_->grad(n.param_b);
          Matrix& gx = nodes_[n.inputs[0]].grad;
          for (std::size_t i2 = 0; i2 < W.rows; ++i2) {
            const double g = n.grad.data[i2];
            gb.data[i2] += g;
            double* gwrow = gW.data.data() + i2 * W.cols;
            const double* wrow = W.data.data() + i2 * W.cols;
            for (std::size_t j = 0; j < W.cols; ++j) {
              gwrow[j] += g * xv.data[j];
              gx.data[j] += wrow[j] * g;
            }
          }
          break;
        }
        case OpKind::Tanh: {
          Matrix& gin = nodes_[n.inputs[0]].grad;
          for (std::size_t k = 0; k < gin.size(); ++k) {
            const double y = n.value.data[k];
            gin.data[k] += n.grad.data[k] * (1.0 - y * y);
          }
          break;
        }
        case OpKind::Lerp: {
          Matrix& ga = nodes_[n.inputs[0]].grad;
          Matrix& gb2 = nodes_[n.inputs[1]].grad;
          for (std::size_t k = 0; k < ga.size(); ++k) {
            ga.data[k] += n.w_first * n.grad.data[k];
            gb2.data[k] += n.w_second * n.grad.data[k];
          }
          break;
        }
        case OpKind::CrossEntropyWithLogits: {
          Matrix& gz = nodes_[n.inputs[0]].grad;
          const Vector p = softmax(nodes_[n.inputs[0]].value.data);
          const double g = n.grad.data[0];
          for (std::size_t k = 0; k < gz.size(); ++k)
            gz.data[k] += g * (p[k] - n.target[k]);
          break;
        }
        case OpKind::WeightedSum: {
          const double g = n.grad.data[0];
          for (std::size_t k = 0; k < n.inputs.size(); ++k)
            nodes_[n.inputs[k]].grad.data[0] += n.weights[k] * g;
          break;
        }
      }
    }
    backward_done_ = true;
  }

 private:
  enum class OpKind {
    Input,
    GatherRows,
    MeanRows,
    Affine,
    Tanh,
    Lerp,
    CrossEntropyWithLogits,
    WeightedSum
  };

  struct Node {
    OpKind op;
    Matrix value;
    Matrix grad;
    std::vector<NodeId> inputs;
    ParamId param_a = kNoParam;
    ParamId param_b = kNoParam;
    std::vector<std::size_t> rows;
    double w_first = 0.0;
    double w_second = 0.0;
    Vector target;
    Vector weights;
  };

  NodeId push(Node n) {
    require_finite(n.value.data, "GradTape");
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  ParamStore* params_;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

struct ParamCoord {
  ParamId param;
  std::size_t index;
};

struct GradCheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  ParamCoord worst{0, 0};
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central finite differences against a supplied analytic gradient. Error per
// coordinate is |a - n| / max(|a|, |n|, 1), i.e. relative for large entries
// and absolute below magnitude one.
template <typename LossFn, typename GradFn>
GradCheckReport grad_check(LossFn&& fn, ParamStore& params, GradFn&& analytic,
                           std::span<const ParamCoord> coords, double h,
                           double tol) {
  if (coords.empty())
    throw std::invalid_argument("grad_check: no coordinates to check");
  GradCheckReport report;
  for (const ParamCoord& c : coords) {
    double& slot = params.value(c.param).data.at(c.index);
    const double saved = slot;
    slot = saved + h;
    const double up = fn();
    slot = saved - h;
    const double down = fn();
    slot = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw std::invalid_argument("grad_check: loss is not finite");
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic(c);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
    const double rel = std::abs(a - numeric) / denom;
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = c;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
    ++report.coords_checked;
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

inline std::vector<ParamCoord> all_coords(const ParamStore& params) {
  std::vector<ParamCoord> out;
  for (ParamId p = 0; p < params.count(); ++p)
    for (std::size_t i = 0; i < params.value(p).size(); ++i)
      out.push_back({p, i});
  return out;
}

}  // namespace calmix
