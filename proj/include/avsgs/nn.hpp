#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "avsgs/autodiff.hpp"
#include "avsgs/gridio.hpp"
#include "avsgs/rng.hpp"

/// Layer building blocks over the autodiff tape, the Adam optimizer, and
/// checkpoint serialization. Layers own their parameters; applying a layer
/// binds the parameters to the caller's tape as leaves.
namespace avsgs::nn {

using ad::Mat;
using ad::Param;
using ad::Tape;
using ad::Var;

/// Uniform init in [-bound, bound], filled in storage order so the draw
/// sequence is reproducible.
template <class S>
Mat<S> uniform_init(Eigen::Index rows, Eigen::Index cols, double bound,
                    Rng& rng) {
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  return m;
}

/// Named tensors a module wants persisted: trainable parameters plus
/// non-trainable buffers (e.g. batch-norm running statistics).
template <class S>
struct TensorRefs {
  std::vector<Param<S>*> params;
  std::vector<std::pair<std::string, Mat<S>*>> buffers;

  void add(Param<S>& p) { params.push_back(&p); }
  void add_buffer(const std::string& name, Mat<S>& m) {
    buffers.emplace_back(name, &m);
  }
  void append(const TensorRefs& other) {
    params.insert(params.end(), other.params.begin(), other.params.end());
    buffers.insert(buffers.end(), other.buffers.begin(), other.buffers.end());
  }
};

template <class S>
struct Linear {
  Param<S> w, b;

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    w.name = name + ".w";
    w.value = uniform_init<S>(out, in, bound, rng);
    w.zero_grad();
    b.name = name + ".b";
    b.value = uniform_init<S>(out, 1, bound, rng);
    b.zero_grad();
  }

  Var apply(Tape<S>& t, Var x) {
    return ad::add_col(t, ad::matmul(t, t.leaf(w), x), t.leaf(b));
  }

  void collect(TensorRefs<S>& out) {
    out.add(w);
    out.add(b);
  }
};

/// Two-layer MLP with a LeakyReLU between the layers.
template <class S>
struct Mlp2 {
  Linear<S> l1, l2;
  S slope = S(0.2);

  Mlp2() = default;
  Mlp2(const std::string& name, int in, int hidden, int out, Rng& rng)
      : l1(name + ".l1", in, hidden, rng), l2(name + ".l2", hidden, out, rng) {}

  Var apply(Tape<S>& t, Var x) {
    return l2.apply(t, ad::leaky_relu(t, l1.apply(t, x), slope));
  }

  void collect(TensorRefs<S>& out) {
    l1.collect(out);
    l2.collect(out);
  }
};

template <class S>
struct Conv2d {
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;
  Param<S> w, b;

  Conv2d() = default;
  Conv2d(const std::string& name, int in_ch_, int out_ch_, int kernel_,
         int stride_, int pad_, Rng& rng)
      : in_ch(in_ch_), out_ch(out_ch_), kernel(kernel_), stride(stride_),
        pad(pad_) {
    const double bound =
        1.0 / std::sqrt(static_cast<double>(in_ch) * kernel * kernel);
    w.name = name + ".w";
    w.value = uniform_init<S>(out_ch, in_ch * kernel * kernel, bound, rng);
    w.zero_grad();
    b.name = name + ".b";
    b.value = uniform_init<S>(out_ch, 1, bound, rng);
    b.zero_grad();
  }

  Var apply(Tape<S>& t, Var x, int h, int w_in) const {
    ad::ConvGeom g;
    g.in_ch = in_ch;
    g.out_ch = out_ch;
    g.h = h;
    g.w = w_in;
    g.kernel = kernel;
    g.stride = stride;
    g.pad = pad;
    return ad::conv2d(t, x, t.leaf(const_cast<Param<S>&>(w)),
                      t.leaf(const_cast<Param<S>&>(b)), g);
  }

  void collect(TensorRefs<S>& out) {
    out.add(w);
    out.add(b);
  }
};

template <class S>
struct ConvTranspose2d {
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;
  Param<S> w, b;

  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int in_ch_, int out_ch_,
                  int kernel_, int stride_, int pad_, Rng& rng)
      : in_ch(in_ch_), out_ch(out_ch_), kernel(kernel_), stride(stride_),
        pad(pad_) {
    const double bound =
        1.0 / std::sqrt(static_cast<double>(in_ch) * kernel * kernel);
    w.name = name + ".w";
    w.value = uniform_init<S>(in_ch, out_ch * kernel * kernel, bound, rng);
    w.zero_grad();
    b.name = name + ".b";
    b.value = uniform_init<S>(out_ch, 1, bound, rng);
    b.zero_grad();
  }

  Var apply(Tape<S>& t, Var x, int h, int w_in) const {
    ad::ConvGeom g;
    g.in_ch = in_ch;
    g.out_ch = out_ch;
    g.h = h;
    g.w = w_in;
    g.kernel = kernel;
    g.stride = stride;
    g.pad = pad;
    return ad::conv2d_transpose(t, x, t.leaf(const_cast<Param<S>&>(w)),
                                t.leaf(const_cast<Param<S>&>(b)), g);
  }

  void collect(TensorRefs<S>& out) {
    out.add(w);
    out.add(b);
  }
};

template <class S>
struct BatchNorm2d {
  Param<S> gamma, beta;
  ad::BatchNormState<S> state;
  std::string name;
  S momentum = S(0.1);
  S eps = S(1e-5);

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name_, int channels) : name(name_) {
    gamma.name = name + ".gamma";
    gamma.value = Mat<S>::Ones(channels, 1);
    gamma.zero_grad();
    beta.name = name + ".beta";
    beta.value = Mat<S>::Zero(channels, 1);
    beta.zero_grad();
    state.running_mean.setZero(channels);
    state.running_var.setOnes(channels);
    mean_buf = Mat<S>::Zero(channels, 1);
    var_buf = Mat<S>::Ones(channels, 1);
  }

  Var apply(Tape<S>& t, Var x, bool training) {
    sync_from_buffers();
    Var y = ad::batchnorm(t, x, t.leaf(gamma), t.leaf(beta), state, training,
                          momentum, eps);
    sync_to_buffers();
    return y;
  }

  void collect(TensorRefs<S>& out) {
    out.add(gamma);
    out.add(beta);
    out.add_buffer(name + ".running_mean", mean_buf);
    out.add_buffer(name + ".running_var", var_buf);
  }

 private:
  // Serialized views of the running statistics (checkpoints hold matrices).
  Mat<S> mean_buf, var_buf;

  void sync_from_buffers() {
    state.running_mean = mean_buf.col(0);
    state.running_var = var_buf.col(0);
  }
  void sync_to_buffers() {
    mean_buf.col(0) = state.running_mean;
    var_buf.col(0) = state.running_var;
  }
};

/// Single GRU cell following the standard gate equations
///   r = sigm(W_ir x + b_ir + W_hr h + b_hr)
///   z = sigm(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
template <class S>
struct GruCell {
  Param<S> w_ir, w_iz, w_in, w_hr, w_hz, w_hn;
  Param<S> b_ir, b_iz, b_in, b_hr, b_hz, b_hn;
  int hidden = 0;

  GruCell() = default;
  GruCell(const std::string& name, int input, int hidden_, Rng& rng)
      : hidden(hidden_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    auto mk = [&](Param<S>& p, const char* suffix, Eigen::Index r,
                  Eigen::Index c) {
      p.name = name + "." + suffix;
      p.value = uniform_init<S>(r, c, bound, rng);
      p.zero_grad();
    };
    mk(w_ir, "w_ir", hidden, input);
    mk(w_iz, "w_iz", hidden, input);
    mk(w_in, "w_in", hidden, input);
    mk(w_hr, "w_hr", hidden, hidden);
    mk(w_hz, "w_hz", hidden, hidden);
    mk(w_hn, "w_hn", hidden, hidden);
    mk(b_ir, "b_ir", hidden, 1);
    mk(b_iz, "b_iz", hidden, 1);
    mk(b_in, "b_in", hidden, 1);
    mk(b_hr, "b_hr", hidden, 1);
    mk(b_hz, "b_hz", hidden, 1);
    mk(b_hn, "b_hn", hidden, 1);
  }

  /// One step; x and h are (d x 1) columns. Returns the new hidden state.
  Var step(Tape<S>& t, Var x, Var h) {
    auto gate = [&](Param<S>& wi, Param<S>& bi, Param<S>& wh, Param<S>& bh) {
      return ad::add(t,
                     ad::add(t, ad::matmul(t, t.leaf(wi), x), t.leaf(bi)),
                     ad::add(t, ad::matmul(t, t.leaf(wh), h), t.leaf(bh)));
    };
    const Var r = ad::sigmoid(t, gate(w_ir, b_ir, w_hr, b_hr));
    const Var z = ad::sigmoid(t, gate(w_iz, b_iz, w_hz, b_hz));
    const Var h_part =
        ad::add(t, ad::matmul(t, t.leaf(w_hn), h), t.leaf(b_hn));
    const Var n = ad::tanh_(
        t, ad::add(t,
                   ad::add(t, ad::matmul(t, t.leaf(w_in), x), t.leaf(b_in)),
                   ad::cmul(t, r, h_part)));
    return ad::add(t, ad::cmul(t, ad::one_minus(t, z), n), ad::cmul(t, z, h));
  }

  void collect(TensorRefs<S>& out) {
    for (Param<S>* p : {&w_ir, &w_iz, &w_in, &w_hr, &w_hz, &w_hn, &b_ir,
                        &b_iz, &b_in, &b_hr, &b_hz, &b_hn})
      out.add(*p);
  }
};

/// Adam optimizer with decoupled-from-schedule learning rate: the caller
/// passes the rate for each step, so decay schedules live outside.
/// Weight decay is added to the gradient (L2 regularization).
template <class S>
class Adam {
 public:
  struct Config {
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
    S weight_decay = S(0);
  };

  Adam(std::vector<Param<S>*> params, Config cfg)
      : params_(std::move(params)), cfg_(cfg) {}

  void zero_grad() {
    for (Param<S>* p : params_) p->zero_grad();
  }

  void step(S lr) {
    ++t_;
    const S bc1 = S(1) - std::pow(cfg_.beta1, static_cast<S>(t_));
    const S bc2 = S(1) - std::pow(cfg_.beta2, static_cast<S>(t_));
    for (Param<S>* p : params_) {
      if (p->m.size() == 0) {
        p->m = Mat<S>::Zero(p->value.rows(), p->value.cols());
        p->v = Mat<S>::Zero(p->value.rows(), p->value.cols());
      }
      Mat<S> g = p->grad;
      if (cfg_.weight_decay != S(0)) g += cfg_.weight_decay * p->value;
      p->m = cfg_.beta1 * p->m + (S(1) - cfg_.beta1) * g;
      p->v = cfg_.beta2 * p->v + (S(1) - cfg_.beta2) * g.cwiseProduct(g);
      const auto m_hat = p->m.array() / bc1;
      const auto v_hat = p->v.array() / bc2;
      p->value.array() -= lr * m_hat / (v_hat.sqrt() + cfg_.eps);
    }
  }

  long long steps_taken() const { return t_; }

 private:
  std::vector<Param<S>*> params_;
  Config cfg_;
  long long t_ = 0;
};

/// Serialize all named tensors (parameters and buffers) of a module.
template <class S>
std::vector<TensorEntry> to_tensor_entries(const TensorRefs<S>& refs) {
  std::vector<TensorEntry> out;
  auto push = [&](const std::string& name, const Mat<S>& m) {
    TensorEntry e;
    e.name = name;
    e.dims = {static_cast<std::uint32_t>(m.rows()),
              static_cast<std::uint32_t>(m.cols())};
    e.data.resize(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        e.data[k++] = static_cast<float>(m(r, c));
    out.push_back(std::move(e));
  };
  for (const Param<S>* p : refs.params) push(p->name, p->value);
  for (const auto& [name, m] : refs.buffers) push(name, *m);
  return out;
}

/// Restore named tensors; every referenced tensor must be present with
/// matching dimensions.
template <class S>
void from_tensor_entries(const std::vector<TensorEntry>& entries,
                         TensorRefs<S>& refs) {
  auto fill = [&](const std::string& name, Mat<S>& m) {
    for (const TensorEntry& e : entries) {
      if (e.name != name) continue;
      require(e.dims.size() == 2 &&
                  e.dims[0] == static_cast<std::uint32_t>(m.rows()) &&
                  e.dims[1] == static_cast<std::uint32_t>(m.cols()),
              "checkpoint tensor has wrong shape: " + name);
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
          m(r, c) = static_cast<S>(e.data[k++]);
      return;
    }
    throw Error("checkpoint is missing tensor: " + name);
  };
  for (Param<S>* p : refs.params) fill(p->name, p->value);
  for (auto& [name, m] : refs.buffers) fill(name, *m);
}

}  // namespace avsgs::nn
