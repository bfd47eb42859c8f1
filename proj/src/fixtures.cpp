#include "avsgs/fixtures.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "avsgs/dataprep.hpp"
#include "avsgs/scenegraph.hpp"
#include "avsgs/wav.hpp"

namespace avsgs::fix {
namespace {

using json = nlohmann::json;

constexpr double kFrameW = 640.0;
constexpr double kFrameH = 480.0;
// High enough that far-from-partial bins are noise-vs-noise (splitting the
// ideal mask evenly between any two classes) yet ~25 dB below the tones.
constexpr double kNoiseAmp = 0.02;
constexpr double kTonePeak = 0.35;
constexpr int kMaxBalanceAttempts = 100;

const char* kContextClasses[] = {"person", "chair",  "tree",
                                 "table",  "window", "grass"};

double round6(double v) { return std::round(v * 1e6) / 1e6; }

Box random_principal_box(Rng& rng) {
  const double w = rng.uniform(160.0, 280.0);
  const double h = rng.uniform(120.0, 210.0);
  const double x0 = rng.uniform(40.0, kFrameW - w - 40.0);
  const double y0 = rng.uniform(30.0, kFrameH - h - 30.0);
  return Box{x0, y0, x0 + w, y0 + h};
}

Box clamp_to_frame(Box b) {
  b.x_min = std::clamp(b.x_min, 0.0, kFrameW - 2.0);
  b.y_min = std::clamp(b.y_min, 0.0, kFrameH - 2.0);
  b.x_max = std::clamp(b.x_max, b.x_min + 1.0, kFrameW);
  b.y_max = std::clamp(b.y_max, b.y_min + 1.0, kFrameH);
  return b;
}

/// A box overlapping `anchor` comfortably above the context gate.
Box overlapping_box(const Box& anchor, Rng& rng) {
  const double aw = anchor.x_max - anchor.x_min;
  const double ah = anchor.y_max - anchor.y_min;
  for (int tries = 0; tries < 200; ++tries) {
    const double w = aw * rng.uniform(0.6, 1.1);
    const double h = ah * rng.uniform(0.6, 1.1);
    const double x0 = anchor.x_min + aw * rng.uniform(-0.4, 0.4);
    const double y0 = anchor.y_min + ah * rng.uniform(-0.4, 0.4);
    const Box b = clamp_to_frame(Box{x0, y0, x0 + w, y0 + h});
    if (iou(anchor, b) > 0.12) return b;
  }
  throw Error("fixtures: failed to place a context box");
}

/// A box far enough from `anchor` to fall below the context gate.
Box distant_box(const Box& anchor, Rng& rng) {
  for (int tries = 0; tries < 200; ++tries) {
    const double w = rng.uniform(50.0, 140.0);
    const double h = rng.uniform(50.0, 120.0);
    const double x0 = rng.uniform(0.0, kFrameW - w);
    const double y0 = rng.uniform(0.0, kFrameH - h);
    const Box b = Box{x0, y0, x0 + w, y0 + h};
    if (iou(anchor, b) < 0.05) return b;
  }
  throw Error("fixtures: failed to place a distractor box");
}

std::vector<double> class_feature(double class_mean, int dim, Rng& rng) {
  std::vector<double> f(dim);
  for (double& v : f) v = round6(class_mean + 0.5 * rng.normal());
  return f;
}

json detection_json(const std::string& video_id, const std::string& cls,
                    int frame, const Box& b, double score,
                    const std::vector<double>& feature) {
  json j;
  j["video_id"] = video_id;
  j["class_label"] = cls;
  j["frame_index"] = frame;
  j["box"] = {round6(b.x_min), round6(b.y_min), round6(b.x_max),
              round6(b.y_max)};
  j["score"] = round6(score);
  j["feature"] = feature;
  return j;
}

spectro::Grid log_grid(const spectro::Waveform& wf,
                       const spectro::Config& cfg) {
  return spectro::log_resample(spectro::stft(wf, cfg).magnitude, cfg).values;
}

/// Both sources of a cross-class pair must win at least `min_frac` of the
/// grid in the strict-inequality ideal mask.
bool balanced(const spectro::Grid& a, const spectro::Grid& b,
              double min_frac) {
  const double total = static_cast<double>(a.size());
  const double wins_a = (a.array() > b.array()).cast<double>().sum();
  const double wins_b = (b.array() > a.array()).cast<double>().sum();
  return wins_a / total >= min_frac && wins_b / total >= min_frac;
}

}  // namespace

spectro::Waveform class_tone(int class_index, long n_samples, Rng& rng) {
  require(class_index >= 0, "class_tone: negative class index");
  require(n_samples > 0, "class_tone: no samples requested");
  const double f0 = 110.0 * std::pow(2.0, class_index / 3.0);
  const double nyquist_guard = 0.45 * spectro::kSampleRate;

  std::vector<double> multipliers;
  for (int m = 1; m <= 11; m += 2)
    if (f0 * m < nyquist_guard) multipliers.push_back(m);
  require(!multipliers.empty(), "class_tone: fundamental above usable band");

  std::vector<double> phases(multipliers.size());
  for (double& p : phases) p = rng.uniform(0.0, 2.0 * M_PI);
  const double am_rate = rng.uniform(0.5, 3.0);
  const double am_depth = rng.uniform(0.3, 0.6);
  const double am_phase = rng.uniform(0.0, 2.0 * M_PI);

  spectro::Waveform wf;
  wf.samples.resize(static_cast<std::size_t>(n_samples));
  double peak = 0.0;
  for (long i = 0; i < n_samples; ++i) {
    const double t = static_cast<double>(i) / spectro::kSampleRate;
    double v = 0.0;
    for (std::size_t h = 0; h < multipliers.size(); ++h)
      v += std::sin(2.0 * M_PI * f0 * multipliers[h] * t + phases[h]) /
           multipliers[h];
    v *= 1.0 + am_depth * std::sin(2.0 * M_PI * am_rate * t + am_phase);
    wf.samples[static_cast<std::size_t>(i)] = v;
    peak = std::max(peak, std::abs(v));
  }
  for (double& v : wf.samples) {
    v *= kTonePeak / peak;
    v += kNoiseAmp * rng.uniform(-1.0, 1.0);
  }
  return wf;
}

Corpus make_corpus(const CorpusConfig& cfg) {
  require(cfg.n_per_class >= 1, "make_corpus: n_per_class must be >= 1");
  require(!cfg.classes.empty(), "make_corpus: no classes requested");
  require(!cfg.out_dir.empty(), "make_corpus: no output directory");
  require(cfg.n_samples >= cfg.spec_cfg.segment_samples(),
          "make_corpus: audio shorter than one analysis segment");

  const std::vector<std::string> catalog = load_catalog(cfg.catalog_path);
  const prep::AuditoryDictionary dict =
      prep::load_dictionary(cfg.dictionary_path, catalog);

  // Per class: catalog position (drives the feature mean and the tone) and
  // the most frequent dictionary word (drives the caption).
  std::map<std::string, int> catalog_index;
  for (std::size_t i = 0; i < catalog.size(); ++i)
    catalog_index[catalog[i]] = static_cast<int>(i);
  std::map<std::string, std::pair<std::string, long>> best_word;
  for (const auto& [word, entry] : dict.entries) {
    if (entry.principal_class == "background") continue;
    auto& best = best_word[entry.principal_class];
    if (entry.corpus_frequency > best.second) best = {word, entry.corpus_frequency};
  }
  for (const std::string& cls : cfg.classes) {
    require(catalog_index.count(cls), "make_corpus: class not in catalog: " + cls);
    require(best_word.count(cls),
            "make_corpus: no dictionary word for class: " + cls);
  }

  std::filesystem::create_directories(cfg.out_dir);

  // Copy the catalog next to the manifest so the corpus directory is a
  // self-contained dataset root.
  {
    std::ofstream cat(cfg.out_dir + "/catalog.txt");
    require(cat.good(), "make_corpus: cannot write catalog copy");
    for (const std::string& cls : catalog) cat << cls << "\n";
  }

  const Rng base(cfg.seed);
  Corpus corpus;

  // Audio first, with the balance check against every earlier video.
  std::vector<spectro::Waveform> audio;
  std::vector<spectro::Grid> grids;
  std::vector<int> class_of;
  const int n_videos = static_cast<int>(cfg.classes.size()) * cfg.n_per_class;
  for (int v = 0; v < n_videos; ++v) {
    const int class_pos = v / cfg.n_per_class;
    const int k = catalog_index.at(cfg.classes[class_pos]);
    spectro::Waveform wf;
    spectro::Grid grid;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxBalanceAttempts && !placed; ++attempt) {
      Rng rng = base.fork(static_cast<std::uint64_t>(v) * 1009 + attempt);
      wf = class_tone(k, cfg.n_samples, rng);
      grid = log_grid(wf, cfg.spec_cfg);
      placed = true;
      for (int u = 0; u < v && placed; ++u)
        if (class_of[u] != k && !balanced(grids[u], grid, cfg.balance_min))
          placed = false;
    }
    require(placed, "make_corpus: could not balance video " + std::to_string(v));
    audio.push_back(std::move(wf));
    grids.push_back(std::move(grid));
    class_of.push_back(k);
  }

  std::ofstream captions(cfg.out_dir + "/captions.jsonl");
  std::ofstream manifest(cfg.out_dir + "/manifest.jsonl");
  require(captions.good() && manifest.good(),
          "make_corpus: cannot write corpus index files");

  for (int v = 0; v < n_videos; ++v) {
    const int class_pos = v / cfg.n_per_class;
    const int per_class = v % cfg.n_per_class;
    const std::string& cls = cfg.classes[class_pos];
    const int k = catalog_index.at(cls);

    std::ostringstream id;
    id << cls << "_" << (per_class < 10 ? "0" : "") << per_class;
    CorpusVideo video;
    video.video_id = id.str();
    video.class_label = cls;
    video.wav_path = video.video_id + ".wav";
    video.detection_path = video.video_id + "_det.jsonl";
    write_wav(cfg.out_dir + "/" + video.wav_path, audio[v]);

    // Detections: one principal, 2-4 overlapping contexts, 1-3 far
    // distractors (one of them outside the key frame).
    Rng det_rng = base.fork(500000 + static_cast<std::uint64_t>(v));
    const int key_frame = static_cast<int>(det_rng.integer(6));
    const Box principal = random_principal_box(det_rng);
    const double class_mean = 0.3 * (k + 1);

    std::ofstream det(cfg.out_dir + "/" + video.detection_path);
    require(det.good(), "make_corpus: cannot write " + video.detection_path);
    det << detection_json(video.video_id, cls, key_frame, principal,
                          det_rng.uniform(0.86, 0.99),
                          class_feature(class_mean, cfg.feature_dim, det_rng))
               .dump()
        << "\n";

    const int n_context = 2 + static_cast<int>(det_rng.integer(3));
    for (int c = 0; c < n_context; ++c) {
      const Box b = overlapping_box(principal, det_rng);
      const char* ctx_cls =
          kContextClasses[det_rng.integer(std::size(kContextClasses))];
      det << detection_json(video.video_id, ctx_cls, key_frame, b,
                            det_rng.uniform(0.3, 0.85),
                            class_feature(0.0, cfg.feature_dim, det_rng))
                 .dump()
          << "\n";
    }
    const int n_distractor = 1 + static_cast<int>(det_rng.integer(3));
    for (int d = 0; d < n_distractor; ++d) {
      const Box b = distant_box(principal, det_rng);
      const int frame = d == 0 ? key_frame : (key_frame + 1 + d) % 8;
      const char* ctx_cls =
          kContextClasses[det_rng.integer(std::size(kContextClasses))];
      det << detection_json(video.video_id, ctx_cls, frame, b,
                            det_rng.uniform(0.3, 0.85),
                            class_feature(0.0, cfg.feature_dim, det_rng))
                 .dump()
          << "\n";
    }
    require(det.good(), "make_corpus: write failed: " + video.detection_path);

    video.caption = "the " + best_word.at(cls).first + " of a " + cls +
                    " fills this clip";
    json cap;
    cap["video_id"] = video.video_id;
    cap["caption"] = video.caption;
    captions << cap.dump() << "\n";

    json man;
    man["video_id"] = video.video_id;
    man["class_label"] = cls;
    man["wav"] = video.wav_path;
    man["detections"] = video.detection_path;
    manifest << man.dump() << "\n";

    corpus.videos.push_back(std::move(video));
  }
  require(captions.good() && manifest.good(),
          "make_corpus: write failed on corpus index files");

  corpus.manifest_path = cfg.out_dir + "/manifest.jsonl";
  corpus.captions_path = cfg.out_dir + "/captions.jsonl";
  return corpus;
}

}  // namespace avsgs::fix
