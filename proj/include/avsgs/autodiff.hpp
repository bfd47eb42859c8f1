#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "avsgs/common.hpp"

/// Reverse-mode automatic differentiation over dense Eigen matrices.
///
/// A Tape records every operation applied to its variables together with a
/// closure that propagates adjoints; backward() replays the closures in
/// reverse program order. Everything is templated on the scalar so the same
/// network code runs in float for training and in double for finite
/// difference verification.
///
/// Convention for image-shaped data: a feature map with C channels over an
/// H x W grid is a (C x H*W) matrix whose column index is r * W + c
/// (row-major spatial order). Vectors are (d x 1) matrices.
namespace avsgs::ad {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// A trainable tensor (matrix-shaped) with its accumulated gradient and the
/// optimizer's moment buffers. Layers own their Params; tapes reference them.
template <class S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  Mat<S> m;  // Adam first-moment buffer (sized on first optimizer step)
  Mat<S> v;  // Adam second-moment buffer

  void zero_grad() {
    grad = Mat<S>::Zero(value.rows(), value.cols());
  }
};

/// Handle to a tape slot. Only valid for the tape that produced it.
struct Var {
  Eigen::Index id = -1;
};

template <class S>
class Tape {
 public:
  /// When `recording` is false the tape computes values only and backward()
  /// is unavailable; inference runs on non-recording tapes.
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var constant(Mat<S> value) { return push(std::move(value), nullptr); }

  /// Leaf bound to a trainable parameter; backward() adds into param.grad.
  Var leaf(Param<S>& p) { return push(p.value, nullptr, &p); }

  const Mat<S>& val(Var v) const { return slots_[v.id].val; }

  /// Adjoint of a variable; zero-initialized on first access.
  Mat<S>& grad(Var v) {
    Slot& s = slots_[v.id];
    if (s.grad.size() == 0)
      s.grad = Mat<S>::Zero(s.val.rows(), s.val.cols());
    return s.grad;
  }

  /// Seed the (1x1) root and sweep the tape in reverse, accumulating into
  /// every bound parameter's grad.
  void backward(Var root) {
    require(recording_, "backward() on a non-recording tape");
    require(slots_[root.id].val.size() == 1,
            "backward() expects a scalar (1x1) root");
    grad(root).setConstant(S(1));
    for (Eigen::Index i = root.id; i >= 0; --i) {
      Slot& s = slots_[i];
      if (s.grad.size() == 0) continue;  // never touched: zero adjoint
      if (s.back) s.back(*this);
      if (s.param) s.param->grad += s.grad;
    }
  }

  /// Record a new slot. `back` may be empty for leaves and constants.
  Var push(Mat<S> value, std::function<void(Tape&)> back,
           Param<S>* param = nullptr) {
    Slot s;
    s.val = std::move(value);
    if (recording_) {
      s.back = std::move(back);
      s.param = param;
    }
    slots_.push_back(std::move(s));
    return Var{static_cast<Eigen::Index>(slots_.size()) - 1};
  }

  std::size_t size() const { return slots_.size(); }

 private:
  struct Slot {
    Mat<S> val;
    Mat<S> grad;
    std::function<void(Tape&)> back;
    Param<S>* param = nullptr;
  };

  bool recording_;
  std::vector<Slot> slots_;
};

/// Record an op: `fwd` produces the value, `bwd(tape, out)` distributes
/// grad(out) to the inputs. The result Var is forwarded into the closure.
template <class S, class Fwd, class Bwd>
Var make_op(Tape<S>& t, Fwd&& fwd, Bwd&& bwd) {
  Mat<S> value = fwd();
  if (!t.recording()) return t.push(std::move(value), nullptr);
  auto fn = std::make_shared<std::decay_t<Bwd>>(std::forward<Bwd>(bwd));
  const Var out{static_cast<Eigen::Index>(t.size())};
  return t.push(std::move(value),
                [fn, out](Tape<S>& t2) { (*fn)(t2, out); });
}

// ---------------------------------------------------------------------------
// Dense primitives
// ---------------------------------------------------------------------------

template <class S>
Var matmul(Tape<S>& t, Var a, Var b) {
  require(t.val(a).cols() == t.val(b).rows(), "matmul: inner dims differ");
  return make_op(
      t, [&] { return Mat<S>(t.val(a) * t.val(b)); },
      [a, b](Tape<S>& t2, Var out) {
        const Mat<S>& g = t2.grad(out);
        t2.grad(a).noalias() += g * t2.val(b).transpose();
        t2.grad(b).noalias() += t2.val(a).transpose() * g;
      });
}

template <class S>
Var add(Tape<S>& t, Var a, Var b) {
  require(t.val(a).rows() == t.val(b).rows() &&
              t.val(a).cols() == t.val(b).cols(),
          "add: shape mismatch");
  return make_op(
      t, [&] { return Mat<S>(t.val(a) + t.val(b)); },
      [a, b](Tape<S>& t2, Var out) {
        t2.grad(a) += t2.grad(out);
        t2.grad(b) += t2.grad(out);
      });
}

template <class S>
Var sub(Tape<S>& t, Var a, Var b) {
  require(t.val(a).rows() == t.val(b).rows() &&
              t.val(a).cols() == t.val(b).cols(),
          "sub: shape mismatch");
  return make_op(
      t, [&] { return Mat<S>(t.val(a) - t.val(b)); },
      [a, b](Tape<S>& t2, Var out) {
        t2.grad(a) += t2.grad(out);
        t2.grad(b) -= t2.grad(out);
      });
}

/// Elementwise product.
template <class S>
Var cmul(Tape<S>& t, Var a, Var b) {
  require(t.val(a).rows() == t.val(b).rows() &&
              t.val(a).cols() == t.val(b).cols(),
          "cmul: shape mismatch");
  return make_op(
      t, [&] { return Mat<S>(t.val(a).cwiseProduct(t.val(b))); },
      [a, b](Tape<S>& t2, Var out) {
        const Mat<S>& g = t2.grad(out);
        t2.grad(a) += g.cwiseProduct(t2.val(b));
        t2.grad(b) += g.cwiseProduct(t2.val(a));
      });
}

template <class S>
Var scale(Tape<S>& t, Var a, S c) {
  return make_op(
      t, [&] { return Mat<S>(t.val(a) * c); },
      [a, c](Tape<S>& t2, Var out) { t2.grad(a) += t2.grad(out) * c; });
}

/// Add a column vector (d x 1) to every column of a (d x n) matrix.
template <class S>
Var add_col(Tape<S>& t, Var a, Var bias) {
  require(t.val(bias).cols() == 1 && t.val(bias).rows() == t.val(a).rows(),
          "add_col: bias must be (rows x 1)");
  return make_op(
      t,
      [&] {
        return Mat<S>(t.val(a).colwise() +
                      Eigen::Matrix<S, Eigen::Dynamic, 1>(t.val(bias).col(0)));
      },
      [a, bias](Tape<S>& t2, Var out) {
        const Mat<S>& g = t2.grad(out);
        t2.grad(a) += g;
        t2.grad(bias).col(0) += g.rowwise().sum();
      });
}

/// 1 - x elementwise.
template <class S>
Var one_minus(Tape<S>& t, Var a) {
  return make_op(
      t, [&] { return Mat<S>(S(1) - t.val(a).array()); },
      [a](Tape<S>& t2, Var out) { t2.grad(a) -= t2.grad(out); });
}

template <class S>
Var leaky_relu(Tape<S>& t, Var a, S slope) {
  return make_op(
      t,
      [&] {
        return Mat<S>(
            t.val(a).array().max(t.val(a).array() * slope).matrix());
      },
      [a, slope](Tape<S>& t2, Var out) {
        const auto pos = (t2.val(a).array() > S(0)).template cast<S>();
        t2.grad(a).array() +=
            t2.grad(out).array() * (pos + slope * (S(1) - pos));
      });
}

template <class S>
Var sigmoid(Tape<S>& t, Var a) {
  return make_op(
      t,
      [&] {
        return Mat<S>((S(1) / (S(1) + (-t.val(a).array()).exp())).matrix());
      },
      [a](Tape<S>& t2, Var out) {
        const auto& y = t2.val(out).array();
        t2.grad(a).array() += t2.grad(out).array() * y * (S(1) - y);
      });
}

template <class S>
Var tanh_(Tape<S>& t, Var a) {
  return make_op(
      t, [&] { return Mat<S>(t.val(a).array().tanh().matrix()); },
      [a](Tape<S>& t2, Var out) {
        const auto& y = t2.val(out).array();
        t2.grad(a).array() += t2.grad(out).array() * (S(1) - y * y);
      });
}

/// Natural log; inputs must be positive (clamp first when in doubt).
template <class S>
Var log_(Tape<S>& t, Var a) {
  return make_op(
      t, [&] { return Mat<S>(t.val(a).array().log().matrix()); },
      [a](Tape<S>& t2, Var out) {
        t2.grad(a).array() += t2.grad(out).array() / t2.val(a).array();
      });
}

/// max(x, lo) elementwise; gradient passes only where x > lo.
template <class S>
Var clamp_min(Tape<S>& t, Var a, S lo) {
  return make_op(
      t, [&] { return Mat<S>(t.val(a).array().max(lo).matrix()); },
      [a, lo](Tape<S>& t2, Var out) {
        const auto& x = t2.val(a).array();
        t2.grad(a).array() +=
            t2.grad(out).array() * (x > lo).template cast<S>();
      });
}

/// Softmax independently over each column.
template <class S>
Var softmax_cols(Tape<S>& t, Var a) {
  return make_op(
      t,
      [&] {
        Mat<S> y = t.val(a);
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
          auto col = y.col(c).array();
          col -= col.maxCoeff();
          col = col.exp();
          col /= col.sum();
        }
        return y;
      },
      [a](Tape<S>& t2, Var out) {
        const Mat<S>& y = t2.val(out);
        const Mat<S>& g = t2.grad(out);
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
          const S inner = y.col(c).dot(g.col(c));
          t2.grad(a).col(c).array() +=
              y.col(c).array() * (g.col(c).array() - inner);
        }
      });
}

/// Stack two matrices with equal column counts vertically.
template <class S>
Var concat_rows(Tape<S>& t, Var a, Var b) {
  require(t.val(a).cols() == t.val(b).cols(),
          "concat_rows: column counts differ");
  return make_op(
      t,
      [&] {
        Mat<S> y(t.val(a).rows() + t.val(b).rows(), t.val(a).cols());
        y.topRows(t.val(a).rows()) = t.val(a);
        y.bottomRows(t.val(b).rows()) = t.val(b);
        return y;
      },
      [a, b](Tape<S>& t2, Var out) {
        const Mat<S>& g = t2.grad(out);
        t2.grad(a) += g.topRows(t2.val(a).rows());
        t2.grad(b) += g.bottomRows(t2.val(b).rows());
      });
}

template <class S>
Var slice_rows(Tape<S>& t, Var a, Eigen::Index first, Eigen::Index count) {
  require(first >= 0 && first + count <= t.val(a).rows(),
          "slice_rows: range out of bounds");
  return make_op(
      t, [&] { return Mat<S>(t.val(a).middleRows(first, count)); },
      [a, first, count](Tape<S>& t2, Var out) {
        t2.grad(a).middleRows(first, count) += t2.grad(out);
      });
}

template <class S>
Var slice_cols(Tape<S>& t, Var a, Eigen::Index first, Eigen::Index count) {
  require(first >= 0 && first + count <= t.val(a).cols(),
          "slice_cols: range out of bounds");
  return make_op(
      t, [&] { return Mat<S>(t.val(a).middleCols(first, count)); },
      [a, first, count](Tape<S>& t2, Var out) {
        t2.grad(a).middleCols(first, count) += t2.grad(out);
      });
}

/// Select columns by index (duplicates allowed).
template <class S>
Var gather_cols(Tape<S>& t, Var a, std::vector<Eigen::Index> idx) {
  return make_op(
      t,
      [&] {
        Mat<S> y(t.val(a).rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k)
          y.col(static_cast<Eigen::Index>(k)) = t.val(a).col(idx[k]);
        return y;
      },
      [a, idx](Tape<S>& t2, Var out) {
        const Mat<S>& g = t2.grad(out);
        for (std::size_t k = 0; k < idx.size(); ++k)
          t2.grad(a).col(idx[k]) += g.col(static_cast<Eigen::Index>(k));
      });
}

/// Row-wise maximum -> (rows x 1). Ties route the gradient to the first hit.
template <class S>
Var rowwise_max(Tape<S>& t, Var a) {
  auto arg = std::make_shared<std::vector<Eigen::Index>>();
  return make_op(
      t,
      [&] {
        const Mat<S>& x = t.val(a);
        Mat<S> y(x.rows(), 1);
        arg->resize(static_cast<std::size_t>(x.rows()));
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          Eigen::Index c = 0;
          y(r, 0) = x.row(r).maxCoeff(&c);
          (*arg)[static_cast<std::size_t>(r)] = c;
        }
        return y;
      },
      [a, arg](Tape<S>& t2, Var out) {
        const Mat<S>& g = t2.grad(out);
        for (Eigen::Index r = 0; r < g.rows(); ++r)
          t2.grad(a)(r, (*arg)[static_cast<std::size_t>(r)]) += g(r, 0);
      });
}

/// Row-wise mean -> (rows x 1).
template <class S>
Var rowwise_mean(Tape<S>& t, Var a) {
  return make_op(
      t, [&] { return Mat<S>(t.val(a).rowwise().mean()); },
      [a](Tape<S>& t2, Var out) {
        const S inv = S(1) / static_cast<S>(t2.val(a).cols());
        t2.grad(a).colwise() +=
            Eigen::Matrix<S, Eigen::Dynamic, 1>(t2.grad(out).col(0) * inv);
      });
}

/// Replicate a (d x 1) column n times -> (d x n).
template <class S>
Var broadcast_cols(Tape<S>& t, Var a, Eigen::Index n) {
  require(t.val(a).cols() == 1, "broadcast_cols: input must be a column");
  return make_op(
      t, [&] { return Mat<S>(t.val(a).replicate(1, n)); },
      [a](Tape<S>& t2, Var out) {
        t2.grad(a).col(0) += t2.grad(out).rowwise().sum();
      });
}

/// L2-normalize each column; safe for nonzero columns.
template <class S>
Var normalize_cols(Tape<S>& t, Var a) {
  return make_op(
      t,
      [&] {
        Mat<S> y = t.val(a);
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
          const S n = y.col(c).norm();
          require(n > S(0), "normalize_cols: zero column");
          y.col(c) /= n;
        }
        return y;
      },
      [a](Tape<S>& t2, Var out) {
        const Mat<S>& x = t2.val(a);
        const Mat<S>& y = t2.val(out);
        const Mat<S>& g = t2.grad(out);
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
          const S n = x.col(c).norm();
          const S inner = y.col(c).dot(g.col(c));
          t2.grad(a).col(c) += (g.col(c) - y.col(c) * inner) / n;
        }
      });
}

/// Sum of all entries -> (1 x 1).
template <class S>
Var sum_all(Tape<S>& t, Var a) {
  return make_op(
      t,
      [&] {
        Mat<S> y(1, 1);
        y(0, 0) = t.val(a).sum();
        return y;
      },
      [a](Tape<S>& t2, Var out) {
        t2.grad(a).array() += t2.grad(out)(0, 0);
      });
}

/// Inner product of two equally shaped matrices -> (1 x 1).
template <class S>
Var dot(Tape<S>& t, Var a, Var b) {
  require(t.val(a).rows() == t.val(b).rows() &&
              t.val(a).cols() == t.val(b).cols(),
          "dot: shape mismatch");
  return make_op(
      t,
      [&] {
        Mat<S> y(1, 1);
        y(0, 0) = t.val(a).cwiseProduct(t.val(b)).sum();
        return y;
      },
      [a, b](Tape<S>& t2, Var out) {
        const S g = t2.grad(out)(0, 0);
        t2.grad(a) += g * t2.val(b);
        t2.grad(b) += g * t2.val(a);
      });
}

template <class S>
Var square(Tape<S>& t, Var a) {
  return make_op(
      t, [&] { return Mat<S>(t.val(a).array().square().matrix()); },
      [a](Tape<S>& t2, Var out) {
        t2.grad(a).array() +=
            t2.grad(out).array() * S(2) * t2.val(a).array();
      });
}

/// Extract one entry -> (1 x 1).
template <class S>
Var pick(Tape<S>& t, Var a, Eigen::Index r, Eigen::Index c) {
  require(r >= 0 && r < t.val(a).rows() && c >= 0 && c < t.val(a).cols(),
          "pick: index out of range");
  return make_op(
      t,
      [&] {
        Mat<S> y(1, 1);
        y(0, 0) = t.val(a)(r, c);
        return y;
      },
      [a, r, c](Tape<S>& t2, Var out) {
        t2.grad(a)(r, c) += t2.grad(out)(0, 0);
      });
}

/// Sum of |a - target| over all entries -> (1 x 1); target is constant.
/// The subgradient at exact zeros is zero.
template <class S>
Var l1_to(Tape<S>& t, Var a, Mat<S> target) {
  auto tgt = std::make_shared<Mat<S>>(std::move(target));
  require(t.val(a).rows() == tgt->rows() && t.val(a).cols() == tgt->cols(),
          "l1_to: shape mismatch");
  return make_op(
      t,
      [&] {
        Mat<S> y(1, 1);
        y(0, 0) = (t.val(a) - *tgt).array().abs().sum();
        return y;
      },
      [a, tgt](Tape<S>& t2, Var out) {
        const S g = t2.grad(out)(0, 0);
        const Mat<S> d = t2.val(a) - *tgt;
        t2.grad(a).array() +=
            g * (d.array() > S(0)).template cast<S>() -
            g * (d.array() < S(0)).template cast<S>();
      });
}

/// Weighted sum with a constant weight matrix -> (1 x 1).
template <class S>
Var weighted_sum(Tape<S>& t, Var a, Mat<S> weights) {
  auto w = std::make_shared<Mat<S>>(std::move(weights));
  require(t.val(a).rows() == w->rows() && t.val(a).cols() == w->cols(),
          "weighted_sum: shape mismatch");
  return make_op(
      t,
      [&] {
        Mat<S> y(1, 1);
        y(0, 0) = t.val(a).cwiseProduct(*w).sum();
        return y;
      },
      [a, w](Tape<S>& t2, Var out) {
        t2.grad(a) += t2.grad(out)(0, 0) * *w;
      });
}

template <class S>
Var transpose_(Tape<S>& t, Var a) {
  return make_op(
      t, [&] { return Mat<S>(t.val(a).transpose()); },
      [a](Tape<S>& t2, Var out) {
        t2.grad(a) += t2.grad(out).transpose();
      });
}

// ---------------------------------------------------------------------------
// Graph primitives
// ---------------------------------------------------------------------------

/// Outer sum of two (1 x n) rows: out(j, k) = src(0, j) + dst(0, k).
/// This is the unnormalized attention logit matrix over a complete digraph
/// with self-loops; column k collects the logits of edges into node k.
template <class S>
Var attention_pair_sum(Tape<S>& t, Var src, Var dst) {
  require(t.val(src).rows() == 1 && t.val(dst).rows() == 1 &&
              t.val(src).cols() == t.val(dst).cols(),
          "attention_pair_sum: inputs must be equal-length rows");
  return make_op(
      t,
      [&] {
        const Eigen::Index n = t.val(src).cols();
        Mat<S> y(n, n);
        for (Eigen::Index j = 0; j < n; ++j)
          for (Eigen::Index k = 0; k < n; ++k)
            y(j, k) = t.val(src)(0, j) + t.val(dst)(0, k);
        return y;
      },
      [src, dst](Tape<S>& t2, Var out) {
        const Mat<S>& g = t2.grad(out);
        t2.grad(src).row(0) += g.rowwise().sum().transpose();
        t2.grad(dst).row(0) += g.colwise().sum();
      });
}

/// Edge aggregation over the complete digraph without self-loops:
///   out(:, k) = mean over j != k of leaky_relu(p(:, j) + q(:, k) + bias).
/// A single-node graph has no incoming edges; the output is zero.
template <class S>
Var edge_mean_leaky(Tape<S>& t, Var p, Var q, Var bias, S slope) {
  require(t.val(p).rows() == t.val(q).rows() &&
              t.val(p).cols() == t.val(q).cols(),
          "edge_mean_leaky: p/q shape mismatch");
  require(t.val(bias).cols() == 1 && t.val(bias).rows() == t.val(p).rows(),
          "edge_mean_leaky: bias must be (rows x 1)");
  return make_op(
      t,
      [&] {
        const Mat<S>& P = t.val(p);
        const Mat<S>& Q = t.val(q);
        const auto& b = t.val(bias).col(0);
        const Eigen::Index n = P.cols();
        Mat<S> y = Mat<S>::Zero(P.rows(), n);
        if (n < 2) return y;
        for (Eigen::Index k = 0; k < n; ++k) {
          for (Eigen::Index j = 0; j < n; ++j) {
            if (j == k) continue;
            const auto z = (P.col(j) + Q.col(k) + b).array();
            y.col(k).array() += z.max(z * slope);
          }
          y.col(k) /= static_cast<S>(n - 1);
        }
        return y;
      },
      [p, q, bias, slope](Tape<S>& t2, Var out) {
        const Mat<S>& P = t2.val(p);
        const Mat<S>& Q = t2.val(q);
        const auto& b = t2.val(bias).col(0);
        const Mat<S>& g = t2.grad(out);
        const Eigen::Index n = P.cols();
        if (n < 2) return;
        const S inv = S(1) / static_cast<S>(n - 1);
        using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
        for (Eigen::Index k = 0; k < n; ++k) {
          for (Eigen::Index j = 0; j < n; ++j) {
            if (j == k) continue;
            const Vec z = P.col(j) + Q.col(k) + b;
            const auto pos = (z.array() > S(0)).template cast<S>();
            const Vec f =
                (g.col(k).array() * inv * (pos + slope * (S(1) - pos)))
                    .matrix();
            t2.grad(p).col(j) += f;
            t2.grad(q).col(k) += f;
            t2.grad(bias).col(0) += f;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution primitives (channel-major image layout, see file header)
// ---------------------------------------------------------------------------

/// Geometry of one convolution: all spatial quantities are in pixels.
struct ConvGeom {
  int in_ch = 0, out_ch = 0;
  int h = 0, w = 0;       // input spatial size
  int kernel = 0, stride = 1, pad = 0;

  int out_h() const { return (h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (w + 2 * pad - kernel) / stride + 1; }
  // Transposed convolution treats (h, w) as the small input side:
  int tr_out_h() const { return (h - 1) * stride - 2 * pad + kernel; }
  int tr_out_w() const { return (w - 1) * stride - 2 * pad + kernel; }
};

/// Gather conv patches: result is (in_ch*k*k x out_h*out_w); row index is
/// ci*k*k + kr*k + kc, column index is ro*out_w + co.
template <class S>
Mat<S> im2col(const Mat<S>& x, const ConvGeom& g) {
  const int k = g.kernel;
  Mat<S> cols = Mat<S>::Zero(g.in_ch * k * k, g.out_h() * g.out_w());
  for (int ro = 0; ro < g.out_h(); ++ro) {
    for (int co = 0; co < g.out_w(); ++co) {
      const Eigen::Index q = static_cast<Eigen::Index>(ro) * g.out_w() + co;
      for (int kr = 0; kr < k; ++kr) {
        const int ri = ro * g.stride - g.pad + kr;
        if (ri < 0 || ri >= g.h) continue;
        for (int kc = 0; kc < k; ++kc) {
          const int ci_pos = co * g.stride - g.pad + kc;
          if (ci_pos < 0 || ci_pos >= g.w) continue;
          const Eigen::Index src = static_cast<Eigen::Index>(ri) * g.w + ci_pos;
          for (int ch = 0; ch < g.in_ch; ++ch)
            cols(static_cast<Eigen::Index>(ch) * k * k + kr * k + kc, q) =
                x(ch, src);
        }
      }
    }
  }
  return cols;
}

/// Scatter-add the inverse of im2col.
template <class S>
void col2im_add(const Mat<S>& cols, const ConvGeom& g, Mat<S>& x) {
  const int k = g.kernel;
  for (int ro = 0; ro < g.out_h(); ++ro) {
    for (int co = 0; co < g.out_w(); ++co) {
      const Eigen::Index q = static_cast<Eigen::Index>(ro) * g.out_w() + co;
      for (int kr = 0; kr < k; ++kr) {
        const int ri = ro * g.stride - g.pad + kr;
        if (ri < 0 || ri >= g.h) continue;
        for (int kc = 0; kc < k; ++kc) {
          const int ci_pos = co * g.stride - g.pad + kc;
          if (ci_pos < 0 || ci_pos >= g.w) continue;
          const Eigen::Index dst = static_cast<Eigen::Index>(ri) * g.w + ci_pos;
          for (int ch = 0; ch < g.in_ch; ++ch)
            x(ch, dst) +=
                cols(static_cast<Eigen::Index>(ch) * k * k + kr * k + kc, q);
        }
      }
    }
  }
}

/// 2-D convolution. x: (in_ch x h*w); weight: (out_ch x in_ch*k*k) with the
/// im2col row layout; bias: (out_ch x 1). Output: (out_ch x out_h*out_w).
template <class S>
Var conv2d(Tape<S>& t, Var x, Var weight, Var bias, const ConvGeom& g) {
  require(t.val(x).rows() == g.in_ch &&
              t.val(x).cols() == static_cast<Eigen::Index>(g.h) * g.w,
          "conv2d: input shape mismatch");
  require(t.val(weight).rows() == g.out_ch &&
              t.val(weight).cols() ==
                  static_cast<Eigen::Index>(g.in_ch) * g.kernel * g.kernel,
          "conv2d: weight shape mismatch");
  auto cols = std::make_shared<Mat<S>>(im2col(t.val(x), g));
  return make_op(
      t,
      [&] {
        Mat<S> y = t.val(weight) * *cols;
        y.colwise() += Eigen::Matrix<S, Eigen::Dynamic, 1>(t.val(bias).col(0));
        return y;
      },
      [x, weight, bias, cols, g](Tape<S>& t2, Var out) {
        const Mat<S>& gy = t2.grad(out);
        t2.grad(weight).noalias() += gy * cols->transpose();
        t2.grad(bias).col(0) += gy.rowwise().sum();
        const Mat<S> gcols = t2.val(weight).transpose() * gy;
        col2im_add(gcols, g, t2.grad(x));
      });
}

/// Transposed 2-D convolution (the gradient map of conv2d). x is the small
/// side (in_ch x h*w); weight: (in_ch x out_ch*k*k); output:
/// (out_ch x tr_out_h*tr_out_w). The geometry's channel fields refer to
/// this op's own input/output channel counts.
template <class S>
Var conv2d_transpose(Tape<S>& t, Var x, Var weight, Var bias,
                     const ConvGeom& g) {
  require(t.val(x).rows() == g.in_ch &&
              t.val(x).cols() == static_cast<Eigen::Index>(g.h) * g.w,
          "conv2d_transpose: input shape mismatch");
  require(t.val(weight).rows() == g.in_ch &&
              t.val(weight).cols() ==
                  static_cast<Eigen::Index>(g.out_ch) * g.kernel * g.kernel,
          "conv2d_transpose: weight shape mismatch");
  // The scatter geometry is the conv geometry whose *output* is our input.
  ConvGeom sg;
  sg.in_ch = g.out_ch;
  sg.out_ch = g.in_ch;
  sg.h = g.tr_out_h();
  sg.w = g.tr_out_w();
  sg.kernel = g.kernel;
  sg.stride = g.stride;
  sg.pad = g.pad;
  return make_op(
      t,
      [&] {
        const Mat<S> cols = t.val(weight).transpose() * t.val(x);
        Mat<S> y = Mat<S>::Zero(g.out_ch,
                                static_cast<Eigen::Index>(sg.h) * sg.w);
        col2im_add(cols, sg, y);
        y.colwise() += Eigen::Matrix<S, Eigen::Dynamic, 1>(t.val(bias).col(0));
        return y;
      },
      [x, weight, bias, sg](Tape<S>& t2, Var out) {
        const Mat<S>& gy = t2.grad(out);
        const Mat<S> gcols = im2col(gy, sg);
        t2.grad(x).noalias() += t2.val(weight) * gcols;
        t2.grad(weight).noalias() += t2.val(x) * gcols.transpose();
        t2.grad(bias).col(0) += gy.rowwise().sum();
      });
}

/// Per-channel running statistics owned by a batch-norm layer.
template <class S>
struct BatchNormState {
  Eigen::Matrix<S, Eigen::Dynamic, 1> running_mean;
  Eigen::Matrix<S, Eigen::Dynamic, 1> running_var;
};

/// Spatial batch normalization over a single image: statistics are taken
/// per channel across the spatial positions. Training mode normalizes with
/// batch statistics and updates the running buffers in place (the running
/// variance uses the unbiased estimate); evaluation mode normalizes with
/// the stored running statistics.
template <class S>
Var batchnorm(Tape<S>& t, Var x, Var gamma, Var beta,
              BatchNormState<S>& state, bool training, S momentum, S eps) {
  const Eigen::Index c_count = t.val(x).rows();
  const Eigen::Index n = t.val(x).cols();
  require(t.val(gamma).rows() == c_count && t.val(gamma).cols() == 1 &&
              t.val(beta).rows() == c_count && t.val(beta).cols() == 1,
          "batchnorm: gamma/beta must be (channels x 1)");
  require(state.running_mean.rows() == c_count &&
              state.running_var.rows() == c_count,
          "batchnorm: state size mismatch");

  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  auto mean = std::make_shared<Vec>();
  auto inv_std = std::make_shared<Vec>();

  if (training) {
    require(n >= 2, "batchnorm: need at least two positions in training");
    *mean = t.val(x).rowwise().mean();
    Vec var(c_count);
    for (Eigen::Index c = 0; c < c_count; ++c)
      var(c) = (t.val(x).row(c).array() - (*mean)(c)).square().mean();
    *inv_std = (var.array() + eps).rsqrt();
    const S unbias = static_cast<S>(n) / static_cast<S>(n - 1);
    state.running_mean =
        (S(1) - momentum) * state.running_mean + momentum * *mean;
    state.running_var =
        (S(1) - momentum) * state.running_var + momentum * unbias * var;
  } else {
    *mean = state.running_mean;
    *inv_std = (state.running_var.array() + eps).rsqrt();
  }

  return make_op(
      t,
      [&] {
        Mat<S> y(c_count, n);
        for (Eigen::Index c = 0; c < c_count; ++c)
          y.row(c) = ((t.val(x).row(c).array() - (*mean)(c)) * (*inv_std)(c)) *
                         t.val(gamma)(c, 0) +
                     t.val(beta)(c, 0);
        return y;
      },
      [x, gamma, beta, mean, inv_std, training](Tape<S>& t2, Var out) {
        const Mat<S>& g = t2.grad(out);
        const Eigen::Index cc = g.rows();
        const Eigen::Index nn = g.cols();
        for (Eigen::Index c = 0; c < cc; ++c) {
          const auto xr = t2.val(x).row(c).array();
          const auto xhat = (xr - (*mean)(c)) * (*inv_std)(c);
          const auto gr = g.row(c).array();
          t2.grad(gamma)(c, 0) += (gr * xhat).sum();
          t2.grad(beta)(c, 0) += gr.sum();
          const S gm = t2.val(gamma)(c, 0);
          if (!training) {
            t2.grad(x).row(c).array() += gr * gm * (*inv_std)(c);
            continue;
          }
          // Batch statistics depend on x: full normalization backward.
          const auto gxhat = gr * gm;
          const S sum_gxhat = gxhat.sum();
          const S sum_gxhat_xhat = (gxhat * xhat).sum();
          t2.grad(x).row(c).array() +=
              (*inv_std)(c) / static_cast<S>(nn) *
              (static_cast<S>(nn) * gxhat - sum_gxhat - xhat * sum_gxhat_xhat);
        }
      });
}

}  // namespace avsgs::ad
