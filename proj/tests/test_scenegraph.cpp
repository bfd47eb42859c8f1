#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "avsgs/gridio.hpp"
#include "avsgs/rng.hpp"
#include "avsgs/scenegraph.hpp"
#include "test_util.hpp"

using namespace avsgs;

namespace {

Detection det(const std::string& cls, double x0, double y0, double x1,
              double y1, double score, int frame,
              Eigen::Index feat_dim = 4) {
  Detection d;
  d.class_label = cls;
  d.box = Box{x0, y0, x1, y1};
  d.score = score;
  d.frame_index = frame;
  d.feature = Eigen::VectorXd::Constant(feat_dim, score + frame);
  return d;
}

PrincipalSpec spec_for(std::vector<std::string> classes) {
  PrincipalSpec s;
  s.classes = std::move(classes);
  s.catalog = {"dogs", "water", "bell", "man"};
  return s;
}

int count_role(const SceneGraph& g, NodeRole role) {
  return static_cast<int>(
      std::count_if(g.nodes.begin(), g.nodes.end(),
                    [&](const SceneNode& n) { return n.role == role; }));
}

}  // namespace

TEST_SUITE("scenegraph") {

TEST_CASE("iou of identical boxes is one") {
  const Box b{2, 3, 10, 12};
  CHECK(iou(b, b) == doctest::Approx(1.0));
}

TEST_CASE("iou of disjoint boxes is zero") {
  CHECK(iou(Box{0, 0, 5, 5}, Box{6, 6, 9, 9}) == 0.0);
  // Touching edges intersect with zero area.
  CHECK(iou(Box{0, 0, 5, 5}, Box{5, 0, 9, 5}) == 0.0);
}

TEST_CASE("iou of a known overlap") {
  CHECK(iou(Box{0, 0, 10, 10}, Box{5, 5, 15, 15}) ==
        doctest::Approx(25.0 / 175.0).epsilon(1e-12));
}

TEST_CASE("iou rejects degenerate boxes") {
  CHECK_THROWS_AS(iou(Box{0, 0, 0, 5}, Box{0, 0, 5, 5}), Error);
  CHECK_THROWS_AS(iou(Box{0, 0, 5, 5}, Box{3, 8, 5, 2}), Error);
}

TEST_CASE("key frame selection takes the most confident detection") {
  std::vector<Detection> dets = {det("dogs", 0, 0, 5, 5, 0.3, 0),
                                 det("dogs", 0, 0, 5, 5, 0.9, 1),
                                 det("dogs", 0, 0, 5, 5, 0.5, 2)};
  const auto kf = select_key_frames(dets, spec_for({"dogs"}));
  CHECK(kf.at("dogs").frame_index == 1);
  CHECK(kf.at("dogs").detection.score == doctest::Approx(0.9));
}

TEST_CASE("key frames of two principals may come from different frames") {
  std::vector<Detection> dets = {det("dogs", 0, 0, 5, 5, 0.8, 0),
                                 det("water", 0, 0, 5, 5, 0.7, 3)};
  const auto kf = select_key_frames(dets, spec_for({"dogs", "water"}));
  CHECK(kf.at("dogs").frame_index == 0);
  CHECK(kf.at("water").frame_index == 3);
}

TEST_CASE("score ties prefer the lower frame index") {
  std::vector<Detection> dets = {det("dogs", 0, 0, 5, 5, 0.9, 4),
                                 det("dogs", 0, 0, 5, 5, 0.9, 2)};
  const auto kf = select_key_frames(dets, spec_for({"dogs"}));
  CHECK(kf.at("dogs").frame_index == 2);
}

TEST_CASE("ties within a frame prefer the lower x_min") {
  std::vector<Detection> dets = {det("dogs", 6, 0, 11, 5, 0.9, 2),
                                 det("dogs", 1, 0, 6, 5, 0.9, 2)};
  const auto kf = select_key_frames(dets, spec_for({"dogs"}));
  CHECK(kf.at("dogs").detection.box.x_min == doctest::Approx(1.0));
}

TEST_CASE("a missing principal raises an error naming the class") {
  std::vector<Detection> dets = {det("dogs", 0, 0, 5, 5, 0.8, 0)};
  try {
    select_key_frames(dets, spec_for({"dogs", "water"}));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("water") != std::string::npos);
  }
}

TEST_CASE("principal classes outside the catalog are rejected") {
  std::vector<Detection> dets = {det("dogs", 0, 0, 5, 5, 0.8, 0)};
  PrincipalSpec s = spec_for({"dogs"});
  s.classes = {"spaceship"};
  CHECK_THROWS_AS(select_key_frames(dets, s), Error);
}

TEST_CASE("context gating keeps only overlaps strictly above the threshold") {
  // Principal box (0,0,10,10); three others at IoU 0.0, ~0.05, 0.2.
  std::vector<Detection> dets = {
      det("dogs", 0, 0, 10, 10, 0.9, 0),
      det("man", 20, 20, 30, 30, 0.8, 0),        // disjoint: 0.0
      det("man", 8, 8, 18, 18, 0.7, 0),          // 4/196 ~ 0.02
      det("man", 2, 2, 12, 12, 0.6, 0),          // 64/136 ~ 0.47
  };
  const SceneGraph g = build_graph(dets, spec_for({"dogs"}), 0.1, 20, 7);
  CHECK(count_role(g, NodeRole::context) == 1);
  CHECK(count_role(g, NodeRole::principal) == 1);
  CHECK(count_role(g, NodeRole::background) == 1);
}

TEST_CASE("an overlap exactly at the threshold is excluded") {
  // (0,0,10,10) vs (5,5,15,15): IoU = 25/175 = 1/7.
  std::vector<Detection> dets = {det("dogs", 0, 0, 10, 10, 0.9, 0),
                                 det("man", 5, 5, 15, 15, 0.8, 0)};
  const SceneGraph at = build_graph(dets, spec_for({"dogs"}), 1.0 / 7.0);
  CHECK(count_role(at, NodeRole::context) == 0);
  const SceneGraph below =
      build_graph(dets, spec_for({"dogs"}), 1.0 / 7.0 - 1e-9);
  CHECK(count_role(below, NodeRole::context) == 1);
}

TEST_CASE("two principals with contexts of three and two give 56 edges") {
  std::vector<Detection> dets = {
      det("dogs", 0, 0, 10, 10, 0.9, 0),
      det("man", 1, 1, 11, 11, 0.8, 0),
      det("man", 2, 2, 12, 12, 0.7, 0),
      det("bell", 3, 3, 13, 13, 0.6, 0),
      det("water", 100, 100, 110, 110, 0.9, 5),
      det("man", 101, 101, 111, 111, 0.8, 5),
      det("bell", 102, 102, 112, 112, 0.7, 5),
  };
  const SceneGraph g = build_graph(dets, spec_for({"dogs", "water"}), 0.1);
  REQUIRE(static_cast<int>(g.nodes.size()) == 8);
  CHECK(count_role(g, NodeRole::principal) == 2);
  CHECK(count_role(g, NodeRole::context) == 5);
  CHECK(count_role(g, NodeRole::background) == 1);
  CHECK(g.edges.size() == 56);
  // No self-loops, all pairs distinct.
  std::set<std::pair<int, int>> uniq(g.edges.begin(), g.edges.end());
  CHECK(uniq.size() == 56);
  for (const auto& [s, d] : g.edges) CHECK(s != d);
}

TEST_CASE("context truncation keeps the highest scores") {
  std::vector<Detection> dets = {det("dogs", 0, 0, 100, 100, 0.99, 0)};
  for (int i = 0; i < 25; ++i)
    dets.push_back(det("man", 1.0 + i, 1, 90.0 + i, 90, 0.01 * (i + 1), 0));
  const SceneGraph g = build_graph(dets, spec_for({"dogs"}), 0.1, 20, 3);
  CHECK(count_role(g, NodeRole::context) == 20);
  // The five lowest scores (0.01 .. 0.05) must have been dropped.
  for (const SceneNode& n : g.nodes)
    if (n.role == NodeRole::context) CHECK(n.feature(0) > 0.055);
}

TEST_CASE("a shared detection becomes one node, not two") {
  // Both principals sit in the same frame; one context overlaps both.
  std::vector<Detection> dets = {
      det("dogs", 0, 0, 10, 10, 0.9, 0),
      det("water", 4, 4, 14, 14, 0.9, 0),
      det("man", 2, 2, 12, 12, 0.8, 0),  // overlaps both principals
  };
  const SceneGraph g = build_graph(dets, spec_for({"dogs", "water"}), 0.1);
  // dogs, water, shared man context, background = 4 nodes. The two
  // principals also overlap each other; they stay principal nodes.
  CHECK(count_role(g, NodeRole::context) == 1);
  CHECK(static_cast<int>(g.nodes.size()) == 4);
  CHECK(g.edges.size() == 12);
}

TEST_CASE("graph construction is deterministic and order independent") {
  std::vector<Detection> dets = {
      det("dogs", 0, 0, 10, 10, 0.9, 0),
      det("man", 1, 1, 11, 11, 0.8, 0),
      det("bell", 2, 2, 12, 12, 0.7, 0),
      det("water", 50, 50, 60, 60, 0.95, 2),
      det("man", 51, 51, 61, 61, 0.6, 2),
  };
  const SceneGraph a = build_graph(dets, spec_for({"dogs", "water"}), 0.1,
                                   20, 42);
  std::reverse(dets.begin(), dets.end());
  const SceneGraph b = build_graph(dets, spec_for({"dogs", "water"}), 0.1,
                                   20, 42);
  REQUIRE(a.nodes.size() == b.nodes.size());
  REQUIRE(a.edges.size() == b.edges.size());
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    CHECK(a.nodes[i].class_label == b.nodes[i].class_label);
    CHECK(a.nodes[i].role == b.nodes[i].role);
    CHECK(a.nodes[i].frame_index == b.nodes[i].frame_index);
    CHECK((a.nodes[i].feature - b.nodes[i].feature).cwiseAbs().maxCoeff() ==
          0.0);
  }
  CHECK(a.edges == b.edges);
}

TEST_CASE("different seeds change only the background node") {
  std::vector<Detection> dets = {det("dogs", 0, 0, 10, 10, 0.9, 0),
                                 det("man", 1, 1, 11, 11, 0.8, 0)};
  const SceneGraph a = build_graph(dets, spec_for({"dogs"}), 0.1, 20, 1);
  const SceneGraph b = build_graph(dets, spec_for({"dogs"}), 0.1, 20, 2);
  REQUIRE(a.nodes.size() == b.nodes.size());
  const SceneNode& bg_a = a.nodes.back();
  const SceneNode& bg_b = b.nodes.back();
  REQUIRE(bg_a.role == NodeRole::background);
  CHECK((bg_a.feature - bg_b.feature).cwiseAbs().maxCoeff() > 0.0);
  for (std::size_t i = 0; i + 1 < a.nodes.size(); ++i)
    CHECK((a.nodes[i].feature - b.nodes[i].feature).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("the background crop stays inside the frame at a lawful size") {
  std::vector<Detection> dets = {det("dogs", 0, 0, 64, 48, 0.9, 0),
                                 det("man", 10, 10, 50, 40, 0.8, 0)};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SceneGraph g = build_graph(dets, spec_for({"dogs"}), 0.1, 20, seed);
    const SceneNode& bg = g.nodes.back();
    REQUIRE(bg.role == NodeRole::background);
    CHECK(bg.class_label == "background");
    const double w = bg.box.x_max - bg.box.x_min;
    const double h = bg.box.y_max - bg.box.y_min;
    CHECK(w >= 0.25 * 64 - 1e-9);
    CHECK(w <= 0.50 * 64 + 1e-9);
    CHECK(h >= 0.25 * 48 - 1e-9);
    CHECK(h <= 0.50 * 48 + 1e-9);
    CHECK(bg.box.x_min >= -1e-9);
    CHECK(bg.box.y_min >= -1e-9);
    CHECK(bg.box.x_max <= 64 + 1e-9);
    CHECK(bg.box.y_max <= 48 + 1e-9);
    CHECK(bg.feature.size() == dets[0].feature.size());
  }
}

TEST_CASE("node and edge counts respect the structural bound") {
  std::vector<Detection> dets = {det("dogs", 0, 0, 10, 10, 0.9, 0)};
  for (int i = 0; i < 30; ++i)
    dets.push_back(det("man", 0.5 + 0.01 * i, 0.5, 9.5, 9.5,
                       0.5 + 0.01 * i, 0));
  const int max_context = 4;
  const SceneGraph g =
      build_graph(dets, spec_for({"dogs"}), 0.1, max_context, 0);
  const int n = static_cast<int>(g.nodes.size());
  CHECK(n <= 1 * (1 + max_context) + 1);
  CHECK(static_cast<int>(g.edges.size()) == n * (n - 1));
}

TEST_CASE("detection files round trip through the loader") {
  testutil::TempDir dir("scenegraph");
  const std::string path = dir.file("dets.jsonl");
  {
    std::ofstream out(path);
    out << R"({"video_id":"v1","frame_index":0,"class_label":"dogs",)"
        << R"("box":[0,0,10,10],"score":0.9,"feature":[)";
    for (int i = 0; i < 512; ++i) out << (i ? "," : "") << i * 0.001;
    out << "]}\n";
    out << R"({"video_id":"v2","frame_index":1,"class_label":"man",)"
        << R"("box":[5,5,15,15],"score":0.5,"feature":[)";
    for (int i = 0; i < 512; ++i) out << (i ? "," : "") << 0.5;
    out << "]}\n";
  }
  const auto all = load_detections(path);
  REQUIRE(all.size() == 2);
  CHECK(all[0].class_label == "dogs");
  CHECK(all[0].feature.size() == 512);
  CHECK(all[0].feature(3) == doctest::Approx(0.003));
  const auto only_v2 = load_detections(path, "v2");
  REQUIRE(only_v2.size() == 1);
  CHECK(only_v2[0].frame_index == 1);
}

TEST_CASE("detection features can live in a sidecar grid") {
  testutil::TempDir dir("scenegraph");
  const std::string side = dir.file("features.bin");
  Eigen::MatrixXd feats(2, 512);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 512; ++c) feats(r, c) = r * 1000 + c;
  write_grid(side, feats);

  const std::string path = dir.file("dets.jsonl");
  {
    std::ofstream out(path);
    out << R"({"video_id":"v1","frame_index":0,"class_label":"dogs",)"
        << R"("box":[0,0,10,10],"score":0.9,"feature_row":1})" << "\n";
  }
  const auto dets = load_detections(path, "", side);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].feature.size() == 512);
  CHECK(dets[0].feature(7) == doctest::Approx(1007.0));

  // Without the sidecar the record is unreadable.
  CHECK_THROWS_AS(load_detections(path), Error);
}

TEST_CASE("loader errors carry the offending line number") {
  testutil::TempDir dir("scenegraph");
  const std::string path = dir.file("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"video_id":"v1","frame_index":0,"class_label":"dogs",)"
        << R"("box":[0,0,10,10],"score":0.9,"feature":[)";
    for (int i = 0; i < 512; ++i) out << (i ? "," : "") << 0.1;
    out << "]}\n";
    out << "{not json}\n";
  }
  try {
    load_detections(path);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}

TEST_CASE("loader rejects out-of-contract records") {
  testutil::TempDir dir("scenegraph");
  auto write_one = [&](const std::string& body) {
    const std::string path = dir.file("one.jsonl");
    std::ofstream out(path);
    out << body << "\n";
    return path;
  };
  std::string feat512 = "[";
  for (int i = 0; i < 512; ++i) feat512 += (i ? ",0.1" : "0.1");
  feat512 += "]";

  // Score outside [0, 1].
  CHECK_THROWS_AS(
      load_detections(write_one(
          R"({"video_id":"v","frame_index":0,"class_label":"dogs",)"
          R"("box":[0,0,10,10],"score":1.5,"feature":)" + feat512 + "}")),
      Error);
  // Inverted box.
  CHECK_THROWS_AS(
      load_detections(write_one(
          R"({"video_id":"v","frame_index":0,"class_label":"dogs",)"
          R"("box":[10,0,0,10],"score":0.5,"feature":)" + feat512 + "}")),
      Error);
  // Wrong feature width.
  CHECK_THROWS_AS(
      load_detections(write_one(
          R"({"video_id":"v","frame_index":0,"class_label":"dogs",)"
          R"("box":[0,0,10,10],"score":0.5,"feature":[1,2,3]})")),
      Error);
  // Missing field.
  CHECK_THROWS_AS(
      load_detections(write_one(
          R"({"video_id":"v","frame_index":0,)"
          R"("box":[0,0,10,10],"score":0.5,"feature":)" + feat512 + "}")),
      Error);
}

TEST_CASE("catalog files load one label per line") {
  testutil::TempDir dir("scenegraph");
  const std::string path = dir.file("catalog.txt");
  {
    std::ofstream out(path);
    out << "dogs\nwater\n\nbell\n";
  }
  const auto cat = load_catalog(path);
  REQUIRE(cat.size() == 3);
  CHECK(cat[0] == "dogs");
  CHECK(cat[2] == "bell");
  CHECK_THROWS_AS(load_catalog(dir.file("missing.txt")), Error);
}

}  // TEST_SUITE
