#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "avsgs/autodiff.hpp"
#include "avsgs/nn.hpp"
#include "avsgs/rng.hpp"

/// Audio separator network: a U-Net conditioned on one visual embedding.
///
/// The encoder halves the spatial side with every stride-2 4x4 convolution
/// (batch-normalized, LeakyReLU slope 0.2) until the map is 2x2; the
/// embedding is tiled over those four positions and channel-concatenated;
/// the decoder mirrors the encoder with 4x4 stride-2 transposed
/// convolutions, LeakyReLU activations, and skip concatenations from the
/// resolution-matched encoder layer; a final sigmoid (no normalization)
/// produces a mask in (0,1).
///
/// The full-scale network has depth 7 and eats 256x256 spectrogram grids;
/// a smaller `depth` d (minimum 2) eats 2^(d+1)-sided grids so gradient
/// checks run in milliseconds. Images travel as (channels x side*side)
/// matrices, column index = row * side + col.
namespace avsgs::sep {

using ad::Mat;
using ad::Tape;
using ad::Var;

/// Spatial side and channel count at one encoder boundary.
struct PlanEntry {
  int side = 0;
  int channels = 0;
};

/// Channel counts along the encoder: entry 0 is the input plane, entry k
/// the output of the k-th stride-2 convolution. Depth d uses the first
/// d+1 entries of the fixed 1,32,64,128,256,512,512,512 ladder.
inline std::vector<int> channel_ladder(int depth) {
  require(depth >= 2 && depth <= 7, "separator depth must be in [2, 7]");
  static const std::vector<int> full = {1, 32, 64, 128, 256, 512, 512, 512};
  return {full.begin(), full.begin() + depth + 1};
}

/// The resolution/channel schedule for the given depth, input layer first.
/// The last entry is the bottleneck: spatial 2x2.
inline std::vector<PlanEntry> encoder_channel_plan(int depth = 7) {
  const std::vector<int> ladder = channel_ladder(depth);
  std::vector<PlanEntry> plan;
  for (int k = 0; k <= depth; ++k)
    plan.push_back(PlanEntry{1 << (depth + 1 - k), ladder[k]});
  return plan;
}

template <class S>
class Unet {
 public:
  struct Config {
    int depth = 7;
    bool no_skip = false;   // ablation: drop the skip concatenations
    int embed_dim = 512;
  };

  Unet() = default;

  Unet(Config cfg, Rng& rng) : cfg_(cfg) {
    const std::vector<int> ladder = channel_ladder(cfg_.depth);
    const int d = cfg_.depth;
    enc_.reserve(d);
    enc_bn_.reserve(d);
    dec_.reserve(d);
    for (int i = 0; i < d; ++i) {
      const std::string base = "unet.enc" + std::to_string(i);
      enc_.emplace_back(base + ".conv", ladder[i], ladder[i + 1], 4, 2, 1,
                        rng);
      enc_bn_.emplace_back(base + ".bn", ladder[i + 1]);
    }
    for (int i = 0; i < d; ++i) {
      // Decoder layer i consumes the map at side 2^(i+1) and doubles it.
      // Input channels: the conditioned bottleneck for i = 0, afterwards
      // the previous output plus (unless ablated) its skip partner.
      const int in_ch = i == 0 ? ladder[d] + cfg_.embed_dim
                               : ladder[d - i] * (cfg_.no_skip ? 1 : 2);
      const int out_ch = ladder[d - 1 - i];
      dec_.emplace_back("unet.dec" + std::to_string(i) + ".tconv", in_ch,
                        out_ch, 4, 2, 1, rng);
    }
  }

  const Config& config() const { return cfg_; }
  int input_side() const { return 1 << (cfg_.depth + 1); }

  /// Mask prediction. x: (1 x side*side) mixture plane; y: (embed_dim x 1)
  /// unit-norm conditioning vector. Returns a (1 x side*side) mask, every
  /// value strictly inside (0,1).
  Var forward(Tape<S>& t, Var x, Var y, bool training) {
    const int side = input_side();
    require(t.val(x).rows() == 1 &&
                t.val(x).cols() == Eigen::Index(side) * side,
            "separator input must be a 1-channel " + std::to_string(side) +
                "-sided grid");
    require(t.val(y).rows() == cfg_.embed_dim && t.val(y).cols() == 1,
            "conditioning embedding has the wrong shape");
    const S norm = t.val(y).norm();
    require(std::abs(double(norm) - 1.0) <= 1e-5,
            "conditioning embedding must be unit norm");

    const int d = cfg_.depth;
    std::vector<Var> acts;  // encoder outputs, acts[i] at side 2^(d-i)
    acts.reserve(d);
    Var cur = x;
    int s = side;
    for (int i = 0; i < d; ++i) {
      cur = enc_[i].apply(t, cur, s, s);
      s /= 2;
      cur = enc_bn_[i].apply(t, cur, training);
      cur = ad::leaky_relu(t, cur, S(0.2));
      acts.push_back(cur);
    }
    // Bottleneck is 2x2: tile the embedding over the four positions and
    // concatenate along channels.
    const Var tiled = ad::broadcast_cols(t, y, 4);
    cur = ad::concat_rows(t, cur, tiled);

    for (int i = 0; i < d; ++i) {
      cur = dec_[i].apply(t, cur, s, s);
      s *= 2;
      if (i == d - 1) return ad::sigmoid(t, cur);
      cur = ad::leaky_relu(t, cur, S(0.2));
      if (!cfg_.no_skip) cur = ad::concat_rows(t, cur, acts[d - 2 - i]);
    }
    return cur;  // unreachable: the loop always exits via the sigmoid
  }

  /// Total trainable scalar count; the no_skip ablation shrinks the decoder
  /// weights, making the difference externally observable.
  std::size_t parameter_count() {
    nn::TensorRefs<S> refs;
    collect(refs);
    std::size_t n = 0;
    for (const auto* p : refs.params)
      n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  void collect(nn::TensorRefs<S>& out) {
    for (auto& c : enc_) c.collect(out);
    for (auto& b : enc_bn_) b.collect(out);
    for (auto& dconv : dec_) dconv.collect(out);
  }

 private:
  Config cfg_;
  std::vector<nn::Conv2d<S>> enc_;
  std::vector<nn::BatchNorm2d<S>> enc_bn_;
  std::vector<nn::ConvTranspose2d<S>> dec_;
};

/// Row-major flattening between (side x side) grids and the (1 x side^2)
/// planes the network consumes.
template <class S>
Mat<S> flatten_grid(const Eigen::MatrixXd& grid) {
  Mat<S> out(1, grid.rows() * grid.cols());
  for (Eigen::Index r = 0; r < grid.rows(); ++r)
    for (Eigen::Index c = 0; c < grid.cols(); ++c)
      out(0, r * grid.cols() + c) = static_cast<S>(grid(r, c));
  return out;
}

template <class S>
Eigen::MatrixXd unflatten_grid(const Mat<S>& plane, Eigen::Index side) {
  require(plane.rows() == 1 && plane.cols() == side * side,
          "plane does not match the requested grid side");
  Eigen::MatrixXd out(side, side);
  for (Eigen::Index r = 0; r < side; ++r)
    for (Eigen::Index c = 0; c < side; ++c)
      out(r, c) = static_cast<double>(plane(0, r * side + c));
  return out;
}

/// Elementwise mask application: values = mask .* x. The mask must lie in
/// [0,1] and match x's shape; the product then never exceeds x.
inline Eigen::MatrixXd apply_mask(const Eigen::MatrixXd& mask,
                                  const Eigen::MatrixXd& x) {
  require(mask.rows() == x.rows() && mask.cols() == x.cols(),
          "mask/spectrogram shape mismatch");
  require((mask.array() >= 0.0).all() && (mask.array() <= 1.0).all(),
          "mask values must lie in [0,1]");
  return mask.cwiseProduct(x);
}

}  // namespace avsgs::sep
