// avsgs: operator entry point for the separation pipeline. One binary with
// subcommands (train, separate, evaluate, build-dataset, inspect-graph,
// plot-spec); every run is deterministic in its inputs and the --seed flag.
//
// Exit codes: 0 success, 1 contract error (bad data, unreadable asset,
// violated precondition), 2 usage error (bad flags or config keys).

#include <CLI11.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "avsgs/common.hpp"
#include "avsgs/dataprep.hpp"
#include "avsgs/gridio.hpp"
#include "avsgs/metrics.hpp"
#include "avsgs/pngio.hpp"
#include "avsgs/scenegraph.hpp"
#include "avsgs/spectro.hpp"
#include "avsgs/trainer.hpp"
#include "avsgs/wav.hpp"

namespace fs = std::filesystem;

namespace {

/// Splits a comma-separated flag value, dropping empty segments.
std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string two_digits(int i) {
  const std::string s = std::to_string(i);
  return s.size() < 2 ? "0" + s : s;
}

/// Output stem for estimate i of n: sources count from 01, the extra
/// trailing estimate is the background.
std::string estimate_stem(int i, int n_sources) {
  return i < n_sources ? "source_" + two_digits(i + 1) : "background";
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string data;
  std::string catalog;
  std::string config;
  std::string out;
  long seed = 0;
  long max_steps = 0;
  double context_iou = 0.1;
  int max_context = 20;
};

int run_train(const TrainOpts& o, const CLI::App& cmd) {
  namespace train = avsgs::train;

  std::string data = o.data;
  if (data.empty())
    if (const char* env = std::getenv("AVSGS_DATA_DIR")) data = env;
  if (data.empty())
    throw train::ConfigError(
        "no dataset directory: pass --data or set AVSGS_DATA_DIR");

  train::TrainConfig cfg;
  if (!o.config.empty()) cfg = train::load_train_config(o.config);
  if (cmd.count("--seed")) cfg.seed = static_cast<std::uint64_t>(o.seed);
  if (cmd.count("--max-steps")) cfg.max_steps = o.max_steps;
  if (cmd.count("--context-iou")) cfg.context_iou_threshold = o.context_iou;
  if (cmd.count("--max-context")) cfg.max_context = o.max_context;
  train::validate(cfg);

  const std::string manifest = (fs::path(data) / "manifest.jsonl").string();
  const std::string catalog =
      o.catalog.empty() ? (fs::path(data) / "catalog.txt").string()
                        : o.catalog;
  train::Pool pool = train::load_pool(manifest, catalog, cfg);
  std::cout << "dataset: " << pool.videos.size() << " videos, "
            << pool.catalog.size() << " classes\n"
            << "config digest: " << train::config_digest(cfg) << "\n";

  const train::TrainResult result = train::train(cfg, pool, o.out, &std::cout);
  std::cout << "checkpoint: " << result.final_checkpoint << "\n"
            << "loss log: " << result.loss_csv << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// separate

struct SeparateOpts {
  std::string audio;
  std::string detections;
  std::string classes_csv;
  std::string checkpoint;
  std::string out;
  std::string video_id;
  int n_sources = 0;
  double context_iou = 0.1;
  int max_context = 20;
  long seed = 0;
};

int run_separate(const SeparateOpts& o, const CLI::App& cmd) {
  namespace train = avsgs::train;

  const std::vector<std::string> classes = split_list(o.classes_csv);
  avsgs::require(!classes.empty(), "no principal classes given");

  train::Model model;
  const train::CheckpointInfo info =
      train::load_checkpoint(o.checkpoint, model);

  const std::vector<avsgs::Detection> dets =
      avsgs::load_detections(o.detections, o.video_id);
  const avsgs::PrincipalSpec spec{classes, info.catalog};
  const avsgs::SceneGraph graph =
      avsgs::build_graph(dets, spec, o.context_iou, o.max_context,
                         static_cast<std::uint64_t>(o.seed));

  const avsgs::spectro::Waveform audio = avsgs::read_wav(o.audio);
  const int n = cmd.count("--n-sources") ? o.n_sources
                                         : static_cast<int>(classes.size());

  std::vector<avsgs::spectro::Grid> masks;
  const std::vector<avsgs::spectro::Waveform> outs =
      train::infer_separate(model, graph, n, audio, &masks);

  fs::create_directories(o.out);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const std::string stem = estimate_stem(static_cast<int>(i), n);
    const std::string wav_path = (fs::path(o.out) / (stem + ".wav")).string();
    const std::string mask_path =
        (fs::path(o.out) / (stem + "_mask.grid")).string();
    avsgs::write_wav(wav_path, outs[i]);
    avsgs::write_grid(mask_path, masks[i]);
    std::cout << stem << ": " << wav_path << " " << mask_path << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalOpts {
  std::string manifest;
  std::string checkpoint;
  std::string out;
  double context_iou = 0.1;
  int max_context = 20;
  long seed = 0;
};

int run_evaluate(const EvalOpts& o) {
  namespace train = avsgs::train;
  namespace metrics = avsgs::metrics;

  const std::vector<metrics::EvalEntry> entries =
      metrics::load_eval_manifest(o.manifest);
  avsgs::require(!entries.empty(),
                 "evaluation manifest is empty: " + o.manifest);

  train::Model model;
  const train::CheckpointInfo info =
      train::load_checkpoint(o.checkpoint, model);

  // Estimates are scored at the precision separate would write to disk, so
  // evaluating against its WAV outputs is exactly self-consistent.
  const metrics::SeparateFn separate =
      [&](const metrics::EvalEntry& entry) {
        const std::vector<avsgs::Detection> dets =
            avsgs::load_detections(entry.detection_file);
        const avsgs::PrincipalSpec spec{entry.principal_classes, info.catalog};
        const avsgs::SceneGraph graph =
            avsgs::build_graph(dets, spec, o.context_iou, o.max_context,
                               static_cast<std::uint64_t>(o.seed));
        const avsgs::spectro::Waveform audio = avsgs::read_wav(entry.mixture_wav);
        const std::vector<avsgs::spectro::Waveform> outs = train::infer_separate(
            model, graph, static_cast<int>(entry.principal_classes.size()),
            audio);
        std::vector<Eigen::VectorXd> estimates;
        for (const avsgs::spectro::Waveform& wf : outs) {
          Eigen::VectorXd v(static_cast<Eigen::Index>(wf.samples.size()));
          for (Eigen::Index j = 0; j < v.size(); ++j)
            v[j] = avsgs::pcm16_round_trip(wf.samples[static_cast<std::size_t>(j)]);
          estimates.push_back(std::move(v));
        }
        return estimates;
      };

  const metrics::EvalReport report =
      metrics::evaluate_manifest(entries, separate, &std::cerr);
  avsgs::require(report.evaluated > 0,
                 "no evaluation entry could be scored (" +
                     std::to_string(report.skipped) + " skipped)");
  metrics::write_eval_report_csv(report, o.out);
  std::cout << "evaluated " << report.evaluated << " of " << entries.size()
            << " entries (" << report.skipped << " skipped)\n"
            << "mean SDR " << report.mean_sdr << " dB, SIR " << report.mean_sir
            << " dB, SAR " << report.mean_sar << " dB\n"
            << "report: " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// build-dataset

struct BuildOpts {
  std::string captions;
  std::string dictionary;
  std::string catalog;
  std::string out;
};

int run_build_dataset(const BuildOpts& o) {
  namespace prep = avsgs::prep;

  const std::vector<std::string> catalog = avsgs::load_catalog(o.catalog);
  const prep::AuditoryDictionary dict =
      prep::load_dictionary(o.dictionary, catalog);
  const std::vector<prep::CaptionRecord> records =
      prep::load_captions(o.captions);
  const std::vector<prep::FilteredVideo> filtered =
      prep::filter_captions(records, dict);

  fs::create_directories(o.out);
  const std::string jsonl = (fs::path(o.out) / "filtered.jsonl").string();
  const std::string csv =
      (fs::path(o.out) / "class_histogram.csv").string();
  prep::write_filtered_jsonl(filtered, jsonl);
  prep::write_histogram_csv(prep::class_histogram(filtered, catalog), csv);

  std::cout << "kept " << filtered.size() << " of " << records.size()
            << " videos\n"
            << "filtered index: " << jsonl << "\n"
            << "class histogram: " << csv << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// inspect-graph

struct InspectOpts {
  std::string detections;
  std::string classes_csv;
  std::string catalog;
  std::string video_id;
  double context_iou = 0.1;
  int max_context = 20;
  long seed = 0;
};

const char* role_name(avsgs::NodeRole role) {
  switch (role) {
    case avsgs::NodeRole::principal: return "principal";
    case avsgs::NodeRole::context: return "context";
    default: return "background";
  }
}

int run_inspect_graph(const InspectOpts& o) {
  const std::vector<std::string> classes = split_list(o.classes_csv);
  avsgs::require(!classes.empty(), "no principal classes given");
  // Without a catalog file the named classes themselves serve as catalog;
  // graph construction only needs the principals to be members of it.
  const std::vector<std::string> catalog =
      o.catalog.empty() ? classes : avsgs::load_catalog(o.catalog);

  const std::vector<avsgs::Detection> dets =
      avsgs::load_detections(o.detections, o.video_id);
  const avsgs::SceneGraph graph =
      avsgs::build_graph(dets, {classes, catalog}, o.context_iou,
                         o.max_context, static_cast<std::uint64_t>(o.seed));

  int principals = 0, contexts = 0, backgrounds = 0;
  std::vector<const avsgs::SceneNode*> principal_nodes;
  for (const avsgs::SceneNode& node : graph.nodes) {
    if (node.role == avsgs::NodeRole::principal) {
      ++principals;
      principal_nodes.push_back(&node);
    } else if (node.role == avsgs::NodeRole::context) {
      ++contexts;
    } else {
      ++backgrounds;
    }
  }

  std::cout << "nodes: " << graph.nodes.size() << " (principals " << principals
            << ", contexts " << contexts << ", background " << backgrounds
            << ")\n"
            << "edges: " << graph.edges.size() << "\n";
  for (const avsgs::SceneNode& node : graph.nodes) {
    std::cout << role_name(node.role) << " node " << node.node_id;
    if (!node.class_label.empty()) std::cout << " class=" << node.class_label;
    std::cout << " frame=" << node.frame_index << " box=[" << node.box.x_min
              << "," << node.box.y_min << "," << node.box.x_max << ","
              << node.box.y_max << "]";
    if (node.role == avsgs::NodeRole::context)
      for (const avsgs::SceneNode* p : principal_nodes)
        std::cout << " iou(" << p->class_label
                  << ")=" << avsgs::iou(node.box, p->box);
    std::cout << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// plot-spec

struct PlotOpts {
  std::string input;
  std::string out;
  double db_floor = -80.0;
};

int run_plot_spec(const PlotOpts& o) {
  namespace spectro = avsgs::spectro;

  Eigen::MatrixXd grid;
  if (ends_with(o.input, ".wav")) {
    spectro::Waveform wf = avsgs::read_wav(o.input);
    spectro::Config cfg;
    const long n = static_cast<long>(wf.samples.size());
    avsgs::require(n >= cfg.window,
                   "audio too short for one analysis window: " + o.input);
    cfg.frames = static_cast<int>((n - cfg.window) / cfg.hop) + 1;
    wf = spectro::pad_or_trim(wf, cfg.segment_samples());
    grid = spectro::stft(wf, cfg).magnitude;
  } else {
    grid = avsgs::read_grid(o.input);
  }
  avsgs::write_grid_png(o.out, grid, o.db_floor);
  std::cout << "wrote " << o.out << " (" << grid.rows() << "x" << grid.cols()
            << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visually guided audio source separation", "avsgs"};
  app.require_subcommand(1);

  TrainOpts t;
  CLI::App* train_cmd =
      app.add_subcommand("train", "train a model on a dataset directory");
  train_cmd->add_option("--data", t.data,
                        "dataset directory holding manifest.jsonl and "
                        "catalog.txt (default: $AVSGS_DATA_DIR)");
  train_cmd->add_option("--catalog", t.catalog,
                        "principal catalog file (default: <data>/catalog.txt)");
  train_cmd->add_option("--config", t.config, "key=value training config file");
  train_cmd->add_option("--out", t.out, "output directory for checkpoints")
      ->required();
  train_cmd->add_option("--seed", t.seed, "run seed (overrides config)");
  train_cmd->add_option("--max-steps", t.max_steps,
                        "optimizer steps (overrides config)");
  train_cmd->add_option("--context-iou", t.context_iou,
                        "context overlap threshold (overrides config)");
  train_cmd->add_option("--max-context", t.max_context,
                        "context nodes per principal (overrides config)");

  SeparateOpts s;
  CLI::App* separate_cmd = app.add_subcommand(
      "separate", "split one mixture into per-source tracks");
  separate_cmd->add_option("--audio", s.audio, "mixture WAV file")->required();
  separate_cmd->add_option("--detections", s.detections,
                           "detection JSONL for the video")
      ->required();
  separate_cmd
      ->add_option("--classes", s.classes_csv,
                   "comma-separated principal classes")
      ->required();
  separate_cmd->add_option("--checkpoint", s.checkpoint, "model checkpoint")
      ->required();
  separate_cmd->add_option("--out", s.out, "output directory")->required();
  separate_cmd->add_option("--video-id", s.video_id,
                           "keep only detections of this video id");
  separate_cmd->add_option("--n-sources", s.n_sources,
                           "estimate count (default: one per class)");
  separate_cmd->add_option("--context-iou", s.context_iou,
                           "context overlap threshold");
  separate_cmd->add_option("--max-context", s.max_context,
                           "context nodes per principal");
  separate_cmd->add_option("--seed", s.seed, "background-crop seed");

  EvalOpts e;
  CLI::App* evaluate_cmd = app.add_subcommand(
      "evaluate", "score a checkpoint against reference sources");
  evaluate_cmd->add_option("--manifest", e.manifest, "evaluation JSONL")
      ->required();
  evaluate_cmd->add_option("--checkpoint", e.checkpoint, "model checkpoint")
      ->required();
  evaluate_cmd->add_option("--out", e.out, "report CSV path")->required();
  evaluate_cmd->add_option("--context-iou", e.context_iou,
                           "context overlap threshold");
  evaluate_cmd->add_option("--max-context", e.max_context,
                           "context nodes per principal");
  evaluate_cmd->add_option("--seed", e.seed, "background-crop seed");

  BuildOpts b;
  CLI::App* build_cmd = app.add_subcommand(
      "build-dataset", "filter captioned videos by auditory words");
  build_cmd->add_option("--captions", b.captions, "caption JSONL")->required();
  build_cmd->add_option("--dictionary", b.dictionary, "auditory word TSV")
      ->required();
  build_cmd->add_option("--catalog", b.catalog, "principal catalog file")
      ->required();
  build_cmd->add_option("--out", b.out, "output directory")->required();

  InspectOpts i;
  CLI::App* inspect_cmd = app.add_subcommand(
      "inspect-graph", "print the scene graph built from detections");
  inspect_cmd->add_option("--detections", i.detections,
                          "detection JSONL for the video")
      ->required();
  inspect_cmd
      ->add_option("--classes", i.classes_csv,
                   "comma-separated principal classes")
      ->required();
  inspect_cmd->add_option("--catalog", i.catalog,
                          "principal catalog file (default: the classes)");
  inspect_cmd->add_option("--video-id", i.video_id,
                          "keep only detections of this video id");
  inspect_cmd->add_option("--context-iou", i.context_iou,
                          "context overlap threshold");
  inspect_cmd->add_option("--max-context", i.max_context,
                          "context nodes per principal");
  inspect_cmd->add_option("--seed", i.seed, "background-crop seed");

  PlotOpts p;
  CLI::App* plot_cmd = app.add_subcommand(
      "plot-spec", "render a WAV or grid snapshot as a grayscale PNG");
  plot_cmd->add_option("--input", p.input, "WAV file or grid snapshot")
      ->required();
  plot_cmd->add_option("--out", p.out, "PNG path")->required();
  plot_cmd->add_option("--db-floor", p.db_floor,
                       "black point in dB below peak (negative)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;  // --help exits 0; any flag misuse exits 2
  }

  try {
    if (*train_cmd) return run_train(t, *train_cmd);
    if (*separate_cmd) return run_separate(s, *separate_cmd);
    if (*evaluate_cmd) return run_evaluate(e);
    if (*build_cmd) return run_build_dataset(b);
    if (*inspect_cmd) return run_inspect_graph(i);
    if (*plot_cmd) return run_plot_spec(p);
  } catch (const avsgs::train::ConfigError& err) {
    std::cerr << "avsgs: config error: " << err.what() << "\n";
    return 2;
  } catch (const avsgs::Error& err) {
    std::cerr << "avsgs: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "avsgs: unexpected error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
