#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "avsgs/common.hpp"

/// Visual scene graph construction from per-frame object detections.
///
/// A video's detections are reduced to one key frame per principal object
/// (its most confident detection), context nodes gated by IoU overlap inside
/// that key frame, and a single random-crop background node; the nodes are
/// wired into a complete directed graph without self-loops.
namespace avsgs {

/// Axis-aligned pixel box. A valid box has positive width and height.
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

/// One detector output: class, box, confidence, backbone feature vector.
struct Detection {
  std::string class_label;
  Box box;
  Eigen::VectorXd feature;
  double score = 0;
  int frame_index = 0;
};

/// The principal classes active in one video plus the full catalog they are
/// drawn from. A video names one or two principals.
struct PrincipalSpec {
  std::vector<std::string> classes;
  std::vector<std::string> catalog;
};

enum class NodeRole { principal, context, background };

/// Graph node. Features are stored exactly as the detector produced them
/// (512-d or 2048-d); the learned projection to the common 512-d width
/// happens inside the embedding network so it can train. The box is kept
/// for diagnostics (a background node carries its crop box).
struct SceneNode {
  int node_id = 0;
  NodeRole role = NodeRole::context;
  std::string class_label;
  int frame_index = 0;
  Box box;
  Eigen::VectorXd feature;
};

struct SceneGraph {
  std::vector<SceneNode> nodes;
  std::vector<std::pair<int, int>> edges;  // ordered (src, dst), src != dst
  int principal_count = 0;
};

/// Intersection-over-union of two boxes; 0 when disjoint.
/// Throws Error for a degenerate (empty or inverted) box.
double iou(const Box& a, const Box& b);

/// The winning detection for one principal class.
struct KeyFrame {
  int frame_index = 0;
  Detection detection;
};

/// Pick each principal's most confident detection. Ties are broken by the
/// lower frame index, then the lower box x_min. Throws Error naming the
/// class when a principal has no detection at all.
std::map<std::string, KeyFrame> select_key_frames(
    const std::vector<Detection>& dets, const PrincipalSpec& spec);

/// Assemble the scene graph:
///   - one principal node per class in spec.classes (via select_key_frames);
///   - context nodes: detections in that principal's key frame whose IoU
///     with the principal box strictly exceeds `iou_threshold`, keeping the
///     `max_context` highest-scoring ones;
///   - one background node cut from the earliest key frame: side lengths are
///     drawn uniformly from [0.25, 0.5] of the frame extent and the feature
///     is a seeded standard-normal stand-in for a backbone pass on the crop;
///   - edges: every ordered pair of distinct nodes.
/// Identical detections reached through several principals collapse into one
/// shared node. Deterministic in (dets, spec, threshold, max_context, seed)
/// and invariant to input order.
SceneGraph build_graph(const std::vector<Detection>& dets,
                       const PrincipalSpec& spec, double iou_threshold = 0.1,
                       int max_context = 20, std::uint64_t rng_seed = 0);

/// Read detections from a JSON-lines file. Each record carries
///   {video_id, frame_index, class_label, box:[x0,y0,x1,y1], score,
///    feature:[floats]}
/// or replaces `feature` with `feature_row`, an index into `sidecar_path`,
/// a grid snapshot holding one feature per row. Only records matching
/// `video_id` are returned when it is non-empty. Malformed lines raise
/// Error with their line number; loaded features must be 512-d or 2048-d.
std::vector<Detection> load_detections(const std::string& jsonl_path,
                                       const std::string& video_id = "",
                                       const std::string& sidecar_path = "");

/// Read the principal catalog: one class label per line, blanks skipped.
std::vector<std::string> load_catalog(const std::string& path);

}  // namespace avsgs
