#pragma once

#include <vector>

#include "avsgs/autodiff.hpp"
#include "avsgs/nn.hpp"
#include "avsgs/rng.hpp"
#include "avsgs/scenegraph.hpp"

/// Visual embedding stack: raw detector features are projected to a common
/// 512-d width, refined by one multi-head graph attention layer and one edge
/// convolution, pooled into a single graph summary vector, and expanded by a
/// GRU into one unit-norm embedding per audio source.
///
/// Node features travel as (width x n) matrices, one column per graph node.
namespace avsgs::vis {

using ad::Mat;
using ad::Param;
using ad::Tape;
using ad::Var;

inline constexpr int kFeatureWidth = 512;

/// Raw detector features arrive at 2048-d (generic backbone) or 512-d;
/// 2048-d features pass through a learned 2-layer MLP (2048 -> 1024 -> 512,
/// LeakyReLU slope 0.2 between the layers) while 512-d features bypass it
/// unchanged. Any other width is a contract violation.
template <class S>
struct FeatureProjector {
  nn::Mlp2<S> mlp;

  FeatureProjector() = default;
  explicit FeatureProjector(Rng& rng)
      : mlp("projector", 2048, 1024, kFeatureWidth, rng) {}

  Var apply(Tape<S>& t, Var raw) {
    const Eigen::Index d = t.val(raw).rows();
    if (d == kFeatureWidth) return raw;
    require(d == 2048, "feature projection expects 512-d or 2048-d input");
    return mlp.apply(t, raw);
  }

  void collect(nn::TensorRefs<S>& out) { mlp.collect(out); }
};

/// Multi-head graph attention over the complete graph with self-loops.
/// Each of the four heads projects nodes to 128-d (no output bias), scores
/// every ordered pair with a LeakyReLU of a source term plus a destination
/// term, normalizes the scores of each destination's in-neighbourhood by
/// softmax, and aggregates; head outputs concatenate back to 512-d.
template <class S>
struct GatLayer {
  static constexpr int kHeads = 4;
  static constexpr int kHeadDim = kFeatureWidth / kHeads;

  std::vector<Param<S>> w;       // per head: (128 x 512)
  std::vector<Param<S>> a_src;   // per head: (1 x 128)
  std::vector<Param<S>> a_dst;   // per head: (1 x 128)
  S slope = S(0.2);

  GatLayer() = default;
  explicit GatLayer(Rng& rng) {
    w.resize(kHeads);
    a_src.resize(kHeads);
    a_dst.resize(kHeads);
    const double wb = 1.0 / std::sqrt(double(kFeatureWidth));
    const double ab = 1.0 / std::sqrt(double(kHeadDim));
    for (int h = 0; h < kHeads; ++h) {
      const std::string base = "gat.h" + std::to_string(h);
      w[h].name = base + ".w";
      w[h].value = nn::uniform_init<S>(kHeadDim, kFeatureWidth, wb, rng);
      w[h].zero_grad();
      a_src[h].name = base + ".a_src";
      a_src[h].value = nn::uniform_init<S>(1, kHeadDim, ab, rng);
      a_src[h].zero_grad();
      a_dst[h].name = base + ".a_dst";
      a_dst[h].value = nn::uniform_init<S>(1, kHeadDim, ab, rng);
      a_dst[h].zero_grad();
    }
  }

  Var apply(Tape<S>& t, Var f) {
    require(t.val(f).rows() == kFeatureWidth,
            "graph attention expects 512-d node features");
    Var out{};
    for (int h = 0; h < kHeads; ++h) {
      const Var g = ad::matmul(t, t.leaf(w[h]), f);           // (128 x n)
      const Var s_src = ad::matmul(t, t.leaf(a_src[h]), g);   // (1 x n)
      const Var s_dst = ad::matmul(t, t.leaf(a_dst[h]), g);
      const Var logits =
          ad::leaky_relu(t, ad::attention_pair_sum(t, s_src, s_dst), slope);
      const Var alpha = ad::softmax_cols(t, logits);          // (n x n)
      const Var head = ad::matmul(t, g, alpha);               // (128 x n)
      out = h == 0 ? head : ad::concat_rows(t, out, head);
    }
    return out;
  }

  void collect(nn::TensorRefs<S>& out) {
    for (int h = 0; h < kHeads; ++h) {
      out.add(w[h]);
      out.add(a_src[h]);
      out.add(a_dst[h]);
    }
  }
};

/// Edge convolution over the complete graph without self-loops: every
/// directed edge (j -> k) is scored by a 2-layer MLP (1024 -> 512 -> 512,
/// LeakyReLU slope 0.2 between the layers) applied to the concatenated pair
/// [f_j; f_k]; node k's new feature is the mean over its incoming edges.
/// The second (linear) layer commutes with the mean, so it is applied once
/// per node rather than once per edge. A single-node graph has no edges and
/// yields zeros.
template <class S>
struct EdgeConv {
  Param<S> w1, b1;      // (512 x 1024), (512 x 1): the pairwise layer
  nn::Linear<S> l2;     // 512 -> 512
  S slope = S(0.2);

  EdgeConv() = default;
  explicit EdgeConv(Rng& rng) : l2("econv.l2", kFeatureWidth, kFeatureWidth,
                                   rng) {
    // Match a 1024-input linear layer's init bound.
    const double bound = 1.0 / std::sqrt(2.0 * kFeatureWidth);
    w1.name = "econv.w1";
    w1.value =
        nn::uniform_init<S>(kFeatureWidth, 2 * kFeatureWidth, bound, rng);
    w1.zero_grad();
    b1.name = "econv.b1";
    b1.value = nn::uniform_init<S>(kFeatureWidth, 1, bound, rng);
    b1.zero_grad();
    // l2 was constructed before w1/b1 drew from rng; order is fixed by the
    // member-initializer list and stays reproducible.
  }

  Var apply(Tape<S>& t, Var f) {
    require(t.val(f).rows() == kFeatureWidth,
            "edge convolution expects 512-d node features");
    const Eigen::Index n = t.val(f).cols();
    if (n < 2) return t.constant(Mat<S>::Zero(kFeatureWidth, n));
    const Var w1v = t.leaf(w1);
    const Var w_src = ad::slice_cols(t, w1v, 0, kFeatureWidth);
    const Var w_dst = ad::slice_cols(t, w1v, kFeatureWidth, kFeatureWidth);
    const Var p = ad::matmul(t, w_src, f);
    const Var q = ad::matmul(t, w_dst, f);
    const Var mean_edges = ad::edge_mean_leaky(t, p, q, t.leaf(b1), slope);
    return l2.apply(t, mean_edges);
  }

  void collect(nn::TensorRefs<S>& out) {
    out.add(w1);
    out.add(b1);
    l2.collect(out);
  }
};

/// Global pooling: concatenate the per-dimension maximum and mean over all
/// nodes (1024-d) and project linearly to the 512-d graph summary.
template <class S>
struct GraphPool {
  nn::Linear<S> proj;  // 1024 -> 512

  GraphPool() = default;
  explicit GraphPool(Rng& rng)
      : proj("pool.proj", 2 * kFeatureWidth, kFeatureWidth, rng) {}

  Var apply(Tape<S>& t, Var f) {
    require(t.val(f).cols() >= 1, "pooling an empty graph");
    const Var mx = ad::rowwise_max(t, f);
    const Var mn = ad::rowwise_mean(t, f);
    return proj.apply(t, ad::concat_rows(t, mx, mn));
  }

  void collect(nn::TensorRefs<S>& out) { proj.collect(out); }
};

/// The embeddings produced for one video: row i is y_i (unit norm), and the
/// matching row of hidden_trace is the GRU hidden state that produced it.
template <class S>
struct EmbeddingSet {
  Mat<S> embeddings;    // (count x 512)
  Mat<S> hidden_trace;  // (count x 512)
};

/// The full stack. summarize() maps raw node features to the graph summary
/// vector; embed() unrolls the GRU (input 512, hidden 512) with the summary
/// as a constant input from a zero initial hidden state, emitting one
/// L2-normalized embedding per step.
template <class S>
struct VisualNet {
  FeatureProjector<S> projector;
  GatLayer<S> gat;
  EdgeConv<S> econv;
  GraphPool<S> pool;
  nn::GruCell<S> gru;

  VisualNet() = default;
  explicit VisualNet(Rng& rng)
      : projector(rng), gat(rng), econv(rng), pool(rng),
        gru("gru", kFeatureWidth, kFeatureWidth, rng) {}

  Var summarize(Tape<S>& t, Var raw_features) {
    Var f = projector.apply(t, raw_features);
    f = gat.apply(t, f);
    f = econv.apply(t, f);
    return pool.apply(t, f);
  }

  std::vector<Var> embed(Tape<S>& t, Var zeta, int count,
                         std::vector<Var>* hidden_trace = nullptr) {
    require(count >= 1, "embedding count must be at least 1");
    Var h = t.constant(Mat<S>::Zero(kFeatureWidth, 1));
    std::vector<Var> ys;
    ys.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      h = gru.step(t, zeta, h);
      if (hidden_trace) hidden_trace->push_back(h);
      ys.push_back(ad::normalize_cols(t, h));
    }
    return ys;
  }

  void collect(nn::TensorRefs<S>& out) {
    projector.collect(out);
    gat.collect(out);
    econv.collect(out);
    pool.collect(out);
    gru.collect(out);
  }
};

/// Stack the scene graph's node features into the (width x n) matrix the
/// network consumes, preserving node order. All nodes must share one width.
template <class S>
Mat<S> node_feature_matrix(const SceneGraph& graph) {
  require(!graph.nodes.empty(), "scene graph has no nodes");
  const Eigen::Index d = graph.nodes.front().feature.size();
  Mat<S> f(d, static_cast<Eigen::Index>(graph.nodes.size()));
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    require(graph.nodes[i].feature.size() == d,
            "scene graph mixes feature widths");
    f.col(static_cast<Eigen::Index>(i)) =
        graph.nodes[i].feature.template cast<S>();
  }
  return f;
}

/// Evaluate the embedding set for a graph summary without recording.
template <class S>
EmbeddingSet<S> make_embedding_set(VisualNet<S>& net, const Mat<S>& zeta,
                                   int count) {
  Tape<S> t(false);
  std::vector<Var> hidden;
  const std::vector<Var> ys =
      net.embed(t, t.constant(zeta), count, &hidden);
  EmbeddingSet<S> out;
  out.embeddings.resize(count, kFeatureWidth);
  out.hidden_trace.resize(count, kFeatureWidth);
  for (int i = 0; i < count; ++i) {
    out.embeddings.row(i) = t.val(ys[static_cast<std::size_t>(i)]).transpose();
    out.hidden_trace.row(i) =
        t.val(hidden[static_cast<std::size_t>(i)]).transpose();
  }
  return out;
}

}  // namespace avsgs::vis
