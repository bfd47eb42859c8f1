#include "avsgs/scenegraph.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>
#include <tuple>

#include <json.hpp>

#include "avsgs/gridio.hpp"
#include "avsgs/rng.hpp"

namespace avsgs {

namespace {

void check_box(const Box& b) {
  require(b.x_min < b.x_max && b.y_min < b.y_max,
          "degenerate box: requires x_min < x_max and y_min < y_max");
}

/// Sort key giving a total order on detections that does not depend on
/// input order: score descending, then spatial/class fields ascending.
auto det_order_key(const Detection& d) {
  return std::make_tuple(-d.score, d.frame_index, d.box.x_min, d.box.y_min,
                         d.box.x_max, d.box.y_max, d.class_label);
}

/// Identity key for deduplicating nodes: two detections with equal class,
/// frame, box, and score are the same physical detection.
auto det_identity_key(const Detection& d) {
  return std::make_tuple(d.class_label, d.frame_index, d.box.x_min,
                         d.box.y_min, d.box.x_max, d.box.y_max, d.score);
}

}  // namespace

double iou(const Box& a, const Box& b) {
  check_box(a);
  check_box(b);
  const double ix = std::max(
      0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(
      0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
  const double area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
  return inter / (area_a + area_b - inter);
}

std::map<std::string, KeyFrame> select_key_frames(
    const std::vector<Detection>& dets, const PrincipalSpec& spec) {
  require(!spec.classes.empty() && spec.classes.size() <= 2,
          "a video names one or two principal classes");
  for (const std::string& c : spec.classes)
    require(std::find(spec.catalog.begin(), spec.catalog.end(), c) !=
                spec.catalog.end(),
            "principal class not in catalog: " + c);

  std::map<std::string, KeyFrame> out;
  for (const std::string& cls : spec.classes) {
    const Detection* best = nullptr;
    for (const Detection& d : dets) {
      if (d.class_label != cls) continue;
      if (best == nullptr ||
          std::make_tuple(-d.score, d.frame_index, d.box.x_min) <
              std::make_tuple(-best->score, best->frame_index,
                              best->box.x_min))
        best = &d;
    }
    if (best == nullptr) throw Error("principal not found: " + cls);
    out[cls] = KeyFrame{best->frame_index, *best};
  }
  return out;
}

SceneGraph build_graph(const std::vector<Detection>& dets,
                       const PrincipalSpec& spec, double iou_threshold,
                       int max_context, std::uint64_t rng_seed) {
  require(max_context >= 0, "max_context must be non-negative");
  const auto key_frames = select_key_frames(dets, spec);

  SceneGraph graph;
  graph.principal_count = static_cast<int>(spec.classes.size());

  // De-duplication: identity key -> node_id for nodes added so far.
  std::map<decltype(det_identity_key(Detection{})), int> seen;
  auto add_detection_node = [&](const Detection& d, NodeRole role) {
    const auto key = det_identity_key(d);
    if (auto it = seen.find(key); it != seen.end()) return it->second;
    SceneNode node;
    node.node_id = static_cast<int>(graph.nodes.size());
    node.role = role;
    node.class_label = d.class_label;
    node.frame_index = d.frame_index;
    node.box = d.box;
    node.feature = d.feature;
    graph.nodes.push_back(std::move(node));
    seen.emplace(key, graph.nodes.size() - 1);
    return static_cast<int>(graph.nodes.size()) - 1;
  };

  // Principals first, in the order the spec names them.
  for (const std::string& cls : spec.classes)
    add_detection_node(key_frames.at(cls).detection, NodeRole::principal);

  // Context nodes per principal: same key frame, IoU strictly above the
  // threshold, truncated to the highest scores. The principal's own
  // detection is not its own context.
  for (const std::string& cls : spec.classes) {
    const KeyFrame& kf = key_frames.at(cls);
    std::vector<const Detection*> candidates;
    for (const Detection& d : dets) {
      if (d.frame_index != kf.frame_index) continue;
      if (det_identity_key(d) == det_identity_key(kf.detection)) continue;
      if (iou(d.box, kf.detection.box) > iou_threshold)
        candidates.push_back(&d);
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Detection* a, const Detection* b) {
                return det_order_key(*a) < det_order_key(*b);
              });
    // The same detection may appear several times in the stream; collapse
    // duplicates before counting against max_context.
    std::set<decltype(det_identity_key(Detection{}))> picked;
    for (const Detection* d : candidates) {
      if (static_cast<int>(picked.size()) >= max_context) break;
      if (!picked.insert(det_identity_key(*d)).second) continue;
      add_detection_node(*d, NodeRole::context);
    }
  }

  // Background node: a random crop of the earliest key frame. The frame
  // extent is taken from its detections (no image data flows through here)
  // and the feature is a seeded standard-normal placeholder for a backbone
  // pass on the crop.
  int first_frame = std::numeric_limits<int>::max();
  for (const auto& [cls, kf] : key_frames)
    first_frame = std::min(first_frame, kf.frame_index);
  double frame_w = 0, frame_h = 0;
  for (const Detection& d : dets) {
    if (d.frame_index != first_frame) continue;
    frame_w = std::max(frame_w, d.box.x_max);
    frame_h = std::max(frame_h, d.box.y_max);
  }
  const Eigen::Index feat_dim =
      key_frames.at(spec.classes.front()).detection.feature.size();

  Rng rng(rng_seed);
  const double crop_w = rng.uniform(0.25, 0.5) * frame_w;
  const double crop_h = rng.uniform(0.25, 0.5) * frame_h;
  const double crop_x = rng.uniform(0.0, frame_w - crop_w);
  const double crop_y = rng.uniform(0.0, frame_h - crop_h);

  SceneNode bg;
  bg.node_id = static_cast<int>(graph.nodes.size());
  bg.role = NodeRole::background;
  bg.class_label = "background";
  bg.frame_index = first_frame;
  bg.box = Box{crop_x, crop_y, crop_x + crop_w, crop_y + crop_h};
  bg.feature = Eigen::VectorXd(feat_dim);
  for (Eigen::Index i = 0; i < feat_dim; ++i) bg.feature(i) = rng.normal();
  graph.nodes.push_back(std::move(bg));

  const int n = static_cast<int>(graph.nodes.size());
  for (int src = 0; src < n; ++src)
    for (int dst = 0; dst < n; ++dst)
      if (src != dst) graph.edges.emplace_back(src, dst);
  return graph;
}

std::vector<Detection> load_detections(const std::string& jsonl_path,
                                       const std::string& video_id,
                                       const std::string& sidecar_path) {
  std::ifstream in(jsonl_path);
  require(in.good(), "cannot open detection file: " + jsonl_path);

  Eigen::MatrixXd sidecar;
  bool have_sidecar = false;
  if (!sidecar_path.empty()) {
    sidecar = read_grid(sidecar_path);
    have_sidecar = true;
  }

  std::vector<Detection> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where =
        jsonl_path + ":" + std::to_string(line_no) + ": ";
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(where + "malformed JSON (" + e.what() + ")");
    }
    try {
      if (!video_id.empty() &&
          rec.at("video_id").get<std::string>() != video_id)
        continue;
      Detection d;
      d.class_label = rec.at("class_label").get<std::string>();
      d.frame_index = rec.at("frame_index").get<int>();
      const auto& box = rec.at("box");
      require(box.is_array() && box.size() == 4,
              where + "box must be [x0,y0,x1,y1]");
      d.box = Box{box[0].get<double>(), box[1].get<double>(),
                  box[2].get<double>(), box[3].get<double>()};
      check_box(d.box);
      d.score = rec.at("score").get<double>();
      require(d.score >= 0.0 && d.score <= 1.0,
              where + "score outside [0,1]");
      if (rec.contains("feature_row")) {
        require(have_sidecar,
                where + "feature_row given but no sidecar file supplied");
        const auto row = rec.at("feature_row").get<Eigen::Index>();
        require(row >= 0 && row < sidecar.rows(),
                where + "feature_row outside the sidecar grid");
        d.feature = sidecar.row(row).transpose();
      } else {
        const auto& feat = rec.at("feature");
        require(feat.is_array(), where + "feature must be an array");
        d.feature = Eigen::VectorXd(feat.size());
        for (std::size_t i = 0; i < feat.size(); ++i)
          d.feature(static_cast<Eigen::Index>(i)) = feat[i].get<double>();
      }
      require(d.feature.size() == 512 || d.feature.size() == 2048,
              where + "feature must be 512-d or 2048-d");
      out.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw Error(where + "bad detection record (" + e.what() + ")");
    }
  }
  return out;
}

std::vector<std::string> load_catalog(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open catalog file: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.pop_back();
    if (line.empty()) continue;
    out.push_back(line);
  }
  require(!out.empty(), "catalog file is empty: " + path);
  return out;
}

}  // namespace avsgs
