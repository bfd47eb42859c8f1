#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "avsgs/autodiff.hpp"
#include "avsgs/nn.hpp"
#include "avsgs/rng.hpp"

/// Training losses and the audio classifier they rely on.
///
/// A training step separates the same two-video mixture once per embedding;
/// the losses below tie those separations to the videos' object classes
/// (consistency), to the mixture's ideal binary masks (co-separation), and
/// to one another (orthogonality of the embedding set).
namespace avsgs::loss {

using ad::Mat;
using ad::Tape;
using ad::Var;

struct LossWeights {
  double lambda1 = 1.0;    // consistency
  double lambda2 = 0.05;   // co-separation
  double lambda3 = 1.0;    // orthogonality
};

/// Probability clamp inside cross-entropies: confidently wrong predictions
/// stay finite.
inline constexpr double kProbFloor = 1e-12;

/// Small CNN classifying a separated magnitude plane: four stride-2 4x4
/// convolutions (1 -> 32 -> 64 -> 128 -> 256, LeakyReLU slope 0.2), global
/// average pooling, and a linear head with softmax over the principal
/// catalog plus one background class.
template <class S>
struct AudioClassifier {
  std::vector<nn::Conv2d<S>> convs;
  nn::Linear<S> head;
  int n_out = 0;

  AudioClassifier() = default;
  AudioClassifier(int n_out_, Rng& rng) : n_out(n_out_) {
    require(n_out >= 2, "classifier needs at least two classes");
    const int chans[5] = {1, 32, 64, 128, 256};
    convs.reserve(4);
    for (int i = 0; i < 4; ++i)
      convs.emplace_back("clf.conv" + std::to_string(i), chans[i],
                         chans[i + 1], 4, 2, 1, rng);
    head = nn::Linear<S>("clf.head", 256, n_out, rng);
  }

  /// x: (1 x side*side) nonnegative plane -> (n_out x 1) probabilities.
  Var apply(Tape<S>& t, Var x, int side) {
    require(side >= 16 && side % 16 == 0,
            "classifier input side must be a multiple of 16");
    require(t.val(x).rows() == 1 &&
                t.val(x).cols() == Eigen::Index(side) * side,
            "classifier input must be a 1-channel square plane");
    Var cur = x;
    int s = side;
    for (auto& conv : convs) {
      cur = conv.apply(t, cur, s, s);
      s /= 2;
      cur = ad::leaky_relu(t, cur, S(0.2));
    }
    const Var pooled = ad::rowwise_mean(t, cur);  // (256 x 1)
    return ad::softmax_cols(t, head.apply(t, pooled));
  }

  void collect(nn::TensorRefs<S>& out) {
    for (auto& c : convs) c.collect(out);
    head.collect(out);
  }
};

/// Orthogonality penalty over an embedding set: the sum of squared dot
/// products over ordered pairs of distinct included embeddings. Each entry
/// of `ys` is a (d x 1) unit column; the last entry is the background
/// embedding and is excluded unless `include_background` is set. For unit
/// rows this equals the squared Frobenius distance between the Gram matrix
/// and the identity.
template <class S>
Var ortho_loss(Tape<S>& t, const std::vector<Var>& ys,
               bool include_background = false) {
  const std::size_t m =
      include_background ? ys.size() : (ys.empty() ? 0 : ys.size() - 1);
  Var acc = t.constant(Mat<S>::Zero(1, 1));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      acc = ad::add(t, acc, ad::square(t, ad::dot(t, ys[i], ys[j])));
    }
  return acc;
}

/// Permutation-minimized cross-entropy between per-video classifier outputs
/// and per-video label lists (label values index the probability rows).
/// For each video, every assignment of outputs to label slots is scored as
/// the summed negative log probability of the slot's label and the cheapest
/// assignment is kept; videos add up. Counts above 4 are out of contract
/// (enumeration is exact and cheap only for small sets).
template <class S>
Var consistency_loss(Tape<S>& t,
                     const std::vector<std::vector<Var>>& probs_per_video,
                     const std::vector<std::vector<int>>& labels_per_video) {
  require(probs_per_video.size() == labels_per_video.size(),
          "consistency loss: video count mismatch");
  Var total = t.constant(Mat<S>::Zero(1, 1));
  for (std::size_t u = 0; u < probs_per_video.size(); ++u) {
    const auto& probs = probs_per_video[u];
    const auto& labels = labels_per_video[u];
    require(probs.size() == labels.size(),
            "consistency loss: outputs and labels must align");
    const int n = static_cast<int>(probs.size());
    require(n >= 1, "consistency loss: empty video");
    require(n <= 4, "consistency loss: more than 4 sources per video");
    for (int c = 0; c < n; ++c)
      require(labels[c] >= 0 &&
                  labels[c] < t.val(probs[0]).rows(),
              "consistency loss: label outside the class range");

    // Find the cheapest assignment on values, then record only its terms.
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
      double cost = 0.0;
      for (int c = 0; c < n; ++c) {
        const double p = static_cast<double>(
            t.val(probs[static_cast<std::size_t>(perm[c])])(labels[c], 0));
        cost -= std::log(std::max(p, kProbFloor));
      }
      if (cost < best_cost) {
        best_cost = cost;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));

    for (int c = 0; c < n; ++c) {
      const Var p =
          ad::pick(t, probs[static_cast<std::size_t>(best[c])], labels[c], 0);
      const Var nll =
          ad::scale(t, ad::log_(t, ad::clamp_min(t, p, S(kProbFloor))),
                    S(-1));
      total = ad::add(t, total, nll);
    }
  }
  return total;
}

/// Indicator mask 1{x_u > x_other}, elementwise and strict: ties (both-zero
/// bins included) belong to neither side.
inline Eigen::MatrixXd ideal_binary_mask(const Eigen::MatrixXd& x_u,
                                         const Eigen::MatrixXd& x_other) {
  require(x_u.rows() == x_other.rows() && x_u.cols() == x_other.cols(),
          "ideal binary mask: shape mismatch");
  return (x_u.array() > x_other.array()).cast<double>();
}

/// Co-separation penalty: for each video, the L1 distance between the sum
/// of its predicted masks and its ideal binary mask, summed over videos.
/// Masks are (1 x P) planes; `ibm_per_video[u]` is a constant of the same
/// shape.
template <class S>
Var cosep_loss(Tape<S>& t,
               const std::vector<std::vector<Var>>& masks_per_video,
               const std::vector<Mat<S>>& ibm_per_video) {
  require(masks_per_video.size() == ibm_per_video.size(),
          "co-separation loss: video count mismatch");
  Var total = t.constant(Mat<S>::Zero(1, 1));
  for (std::size_t u = 0; u < masks_per_video.size(); ++u) {
    const auto& masks = masks_per_video[u];
    require(!masks.empty(), "co-separation loss: video without masks");
    Var sum = masks[0];
    for (std::size_t i = 1; i < masks.size(); ++i)
      sum = ad::add(t, sum, masks[i]);
    require(t.val(sum).rows() == ibm_per_video[u].rows() &&
                t.val(sum).cols() == ibm_per_video[u].cols(),
            "co-separation loss: mask/target shape mismatch");
    total = ad::add(t, total, ad::l1_to(t, sum, ibm_per_video[u]));
  }
  return total;
}

/// Weighted total: lambda1 * consistency + lambda2 * co-separation +
/// lambda3 * orthogonality.
template <class S>
Var total_loss(Tape<S>& t, Var cons, Var cosep, Var ortho,
               const LossWeights& w) {
  require(w.lambda1 >= 0 && w.lambda2 >= 0 && w.lambda3 >= 0,
          "loss weights must be nonnegative");
  return ad::add(t,
                 ad::add(t, ad::scale(t, cons, S(w.lambda1)),
                         ad::scale(t, cosep, S(w.lambda2))),
                 ad::scale(t, ortho, S(w.lambda3)));
}

inline double total_loss_value(double cons, double cosep, double ortho,
                               const LossWeights& w) {
  require(w.lambda1 >= 0 && w.lambda2 >= 0 && w.lambda3 >= 0,
          "loss weights must be nonnegative");
  return w.lambda1 * cons + w.lambda2 * cosep + w.lambda3 * ortho;
}

}  // namespace avsgs::loss
