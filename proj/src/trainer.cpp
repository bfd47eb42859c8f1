#include "avsgs/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <utility>

#include "avsgs/gridio.hpp"
#include "avsgs/wav.hpp"

namespace avsgs::train {
namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value for '" + key + "': " +
                      value);
  }
}

long long parse_integer(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value for '" + key + "': " +
                      value);
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value for '" + key + "': " +
                      value);
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: bad boolean value for '" + key + "': " + value);
}

std::string resolve(const std::filesystem::path& base,
                    const std::string& rel) {
  const std::filesystem::path p(rel);
  return p.is_absolute() ? p.string() : (base / p).string();
}

std::string step_tag(long step) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%08ld", step);
  return buf;
}

}  // namespace

void set_config_value(TrainConfig& cfg, const std::string& key,
                      const std::string& value) {
  if (key == "learning_rate")
    cfg.learning_rate = parse_double(key, value);
  else if (key == "weight_decay")
    cfg.weight_decay = parse_double(key, value);
  else if (key == "beta1")
    cfg.beta1 = parse_double(key, value);
  else if (key == "beta2")
    cfg.beta2 = parse_double(key, value);
  else if (key == "lr_decay_factor")
    cfg.lr_decay_factor = parse_double(key, value);
  else if (key == "lr_decay_interval")
    cfg.lr_decay_interval = static_cast<long>(parse_integer(key, value));
  else if (key == "lambda1")
    cfg.weights.lambda1 = parse_double(key, value);
  else if (key == "lambda2")
    cfg.weights.lambda2 = parse_double(key, value);
  else if (key == "lambda3")
    cfg.weights.lambda3 = parse_double(key, value);
  else if (key == "max_steps")
    cfg.max_steps = static_cast<long>(parse_integer(key, value));
  else if (key == "seed")
    cfg.seed = parse_u64(key, value);
  else if (key == "context_iou_threshold")
    cfg.context_iou_threshold = parse_double(key, value);
  else if (key == "max_context")
    cfg.max_context = static_cast<int>(parse_integer(key, value));
  else if (key == "unet_depth")
    cfg.unet_depth = static_cast<int>(parse_integer(key, value));
  else if (key == "grad_accum")
    cfg.grad_accum = static_cast<int>(parse_integer(key, value));
  else if (key == "checkpoint_interval")
    cfg.checkpoint_interval = static_cast<long>(parse_integer(key, value));
  else if (key == "class_balanced")
    cfg.class_balanced = parse_bool(key, value);
  else if (key == "ortho_background")
    cfg.ortho_background = parse_bool(key, value);
  else
    throw ConfigError("config: unknown key '" + key + "'");
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot read config file: " + path);
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value");
    try {
      set_config_value(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  return cfg;
}

void validate(const TrainConfig& cfg) {
  require(std::isfinite(cfg.learning_rate) && cfg.learning_rate > 0,
          "config: learning_rate must be positive");
  require(std::isfinite(cfg.weight_decay) && cfg.weight_decay >= 0,
          "config: weight_decay must be nonnegative");
  require(cfg.beta1 > 0 && cfg.beta1 < 1, "config: beta1 must be in (0,1)");
  require(cfg.beta2 > 0 && cfg.beta2 < 1, "config: beta2 must be in (0,1)");
  require(std::isfinite(cfg.lr_decay_factor) && cfg.lr_decay_factor > 0,
          "config: lr_decay_factor must be positive");
  require(cfg.lr_decay_interval >= 1,
          "config: lr_decay_interval must be at least 1");
  require(cfg.weights.lambda1 >= 0 && cfg.weights.lambda2 >= 0 &&
              cfg.weights.lambda3 >= 0,
          "config: loss weights must be nonnegative");
  require(cfg.max_steps >= 0, "config: max_steps must be nonnegative");
  require(cfg.context_iou_threshold >= 0 && cfg.context_iou_threshold < 1,
          "config: context_iou_threshold must be in [0,1)");
  require(cfg.max_context >= 0, "config: max_context must be nonnegative");
  // The classifier needs a grid side that is a multiple of 16, which caps
  // the separator depth from below at 3.
  require(cfg.unet_depth >= 3 && cfg.unet_depth <= 7,
          "config: unet_depth must be in [3,7]");
  require(cfg.grad_accum >= 1, "config: grad_accum must be at least 1");
  require(cfg.checkpoint_interval >= 1,
          "config: checkpoint_interval must be at least 1");
}

std::string config_canonical(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "beta1=" << fmt_double(cfg.beta1) << "\n";
  out << "beta2=" << fmt_double(cfg.beta2) << "\n";
  out << "checkpoint_interval=" << cfg.checkpoint_interval << "\n";
  out << "class_balanced=" << (cfg.class_balanced ? 1 : 0) << "\n";
  out << "context_iou_threshold=" << fmt_double(cfg.context_iou_threshold)
      << "\n";
  out << "grad_accum=" << cfg.grad_accum << "\n";
  out << "lambda1=" << fmt_double(cfg.weights.lambda1) << "\n";
  out << "lambda2=" << fmt_double(cfg.weights.lambda2) << "\n";
  out << "lambda3=" << fmt_double(cfg.weights.lambda3) << "\n";
  out << "learning_rate=" << fmt_double(cfg.learning_rate) << "\n";
  out << "lr_decay_factor=" << fmt_double(cfg.lr_decay_factor) << "\n";
  out << "lr_decay_interval=" << cfg.lr_decay_interval << "\n";
  out << "max_context=" << cfg.max_context << "\n";
  out << "max_steps=" << cfg.max_steps << "\n";
  out << "ortho_background=" << (cfg.ortho_background ? 1 : 0) << "\n";
  out << "seed=" << cfg.seed << "\n";
  out << "unet_depth=" << cfg.unet_depth << "\n";
  out << "weight_decay=" << fmt_double(cfg.weight_decay) << "\n";
  return out.str();
}

std::string config_digest(const TrainConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(
                    fnv1a64(config_canonical(cfg))));
  return buf;
}

double scheduled_lr(const TrainConfig& cfg, long step) {
  require(step >= 0, "scheduled_lr: negative step");
  const long decays = step / cfg.lr_decay_interval;
  return cfg.learning_rate *
         std::pow(cfg.lr_decay_factor, static_cast<double>(decays));
}

Pool load_pool(const std::string& manifest_path,
               const std::string& catalog_path, const TrainConfig& cfg) {
  Pool pool;
  pool.catalog = load_catalog(catalog_path);
  require(!pool.catalog.empty(), "dataset catalog is empty");

  std::ifstream in(manifest_path);
  require(in.good(), "cannot read dataset manifest: " + manifest_path);
  const std::filesystem::path base =
      std::filesystem::path(manifest_path).parent_path();
  const spectro::Config scfg = cfg.spectro_config();

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string at =
        manifest_path + ":" + std::to_string(lineno) + ": ";
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(at + "bad JSON: " + e.what());
    }
    for (const char* field : {"video_id", "class_label", "wav", "detections"})
      require(rec.contains(field) && rec[field].is_string(),
              at + "missing string field '" + std::string(field) + "'");

    VideoData v;
    v.video_id = rec["video_id"].get<std::string>();
    v.class_label = rec["class_label"].get<std::string>();
    const auto it =
        std::find(pool.catalog.begin(), pool.catalog.end(), v.class_label);
    require(it != pool.catalog.end(),
            at + "class '" + v.class_label + "' is not in the catalog");

    const std::vector<Detection> dets = load_detections(
        resolve(base, rec["detections"].get<std::string>()), v.video_id);
    PrincipalSpec spec;
    spec.classes = {v.class_label};
    spec.catalog = pool.catalog;
    // The background-crop seed depends only on the video id: graphs are a
    // property of the data, not of the training run.
    v.graph = build_graph(dets, spec, cfg.context_iou_threshold,
                          cfg.max_context, fnv1a64(v.video_id));
    v.labels = {static_cast<int>(it - pool.catalog.begin()),
                pool.background_label()};

    const spectro::Waveform raw =
        read_wav(resolve(base, rec["wav"].get<std::string>()));
    require(raw.sample_rate == spectro::kSampleRate,
            at + "unexpected sample rate");
    v.audio = spectro::pad_or_trim(raw, scfg.segment_samples());
    v.log_grid =
        spectro::log_resample(spectro::stft(v.audio, scfg).magnitude, scfg)
            .values;

    pool.videos.push_back(std::move(v));
  }
  require(!pool.videos.empty(),
          "dataset manifest lists no videos: " + manifest_path);
  return pool;
}

TrainSample make_sample(const Pool& pool, Rng& rng, bool class_balanced) {
  const int n = static_cast<int>(pool.videos.size());
  require(n >= 2, "training pool needs at least two videos");

  int ia = 0, ib = 0;
  if (class_balanced) {
    std::map<std::string, std::vector<int>> by_class;
    for (int i = 0; i < n; ++i)
      by_class[pool.videos[static_cast<std::size_t>(i)].class_label]
          .push_back(i);
    const int k = static_cast<int>(by_class.size());
    require(k >= 2, "class-balanced sampling needs at least two classes");
    int ca = static_cast<int>(rng.integer(k));
    int cb = static_cast<int>(rng.integer(k - 1));
    if (cb >= ca) ++cb;
    auto nth = [&](int idx) {
      auto it = by_class.begin();
      std::advance(it, idx);
      return it->second;
    };
    const std::vector<int>& la = nth(ca);
    const std::vector<int>& lb = nth(cb);
    ia = la[static_cast<std::size_t>(rng.integer(
        static_cast<std::int64_t>(la.size())))];
    ib = lb[static_cast<std::size_t>(rng.integer(
        static_cast<std::int64_t>(lb.size())))];
  } else {
    ia = static_cast<int>(rng.integer(n));
    ib = static_cast<int>(rng.integer(n - 1));
    if (ib >= ia) ++ib;
  }

  TrainSample s;
  s.video_a = pool.videos[static_cast<std::size_t>(ia)];
  s.video_b = pool.videos[static_cast<std::size_t>(ib)];
  s.mixture = spectro::mix({s.video_a.audio, s.video_b.audio});

  // Infer the analysis geometry from the cached grids so the sample agrees
  // with the pool it came from.
  spectro::Config scfg;
  scfg.frames = static_cast<int>(s.video_a.log_grid.cols());
  scfg.log_bins = static_cast<int>(s.video_a.log_grid.rows());
  const spectro::ComplexSpectrogram cs = spectro::stft(s.mixture, scfg);
  s.mixture_spec = spectro::log_resample(cs.magnitude, scfg);
  s.mixture_phase = cs.phase;
  return s;
}

Model::Model(int unet_depth, int n_classes_, Rng& rng)
    : visual(rng),
      separator(sep::Unet<double>::Config{unet_depth, false,
                                          vis::kFeatureWidth},
                rng),
      classifier(n_classes_, rng),
      n_classes(n_classes_) {}

nn::TensorRefs<double> Model::refs() {
  nn::TensorRefs<double> out;
  visual.collect(out);
  separator.collect(out);
  classifier.collect(out);
  return out;
}

void save_checkpoint(const std::string& path, Model& model,
                     const CheckpointInfo& info) {
  const nn::TensorRefs<double> refs = model.refs();
  write_tensor_archive(path, nn::to_tensor_entries(refs));
  json manifest;
  manifest["catalog"] = info.catalog;
  manifest["config_hash"] = info.config_hash;
  manifest["step"] = info.step;
  manifest["unet_depth"] = info.unet_depth;
  std::ofstream out(path + ".json");
  require(out.good(), "cannot write checkpoint manifest: " + path + ".json");
  out << manifest.dump(2) << "\n";
  require(out.good(), "checkpoint manifest write failed: " + path + ".json");
}

CheckpointInfo load_checkpoint(const std::string& path, Model& model) {
  std::ifstream in(path + ".json");
  require(in.good(), "cannot read checkpoint manifest: " + path + ".json");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw Error("bad checkpoint manifest " + path + ".json: " + e.what());
  }
  CheckpointInfo info;
  require(manifest.contains("step") && manifest.contains("config_hash") &&
              manifest.contains("catalog") && manifest.contains("unet_depth"),
          "checkpoint manifest is missing fields: " + path + ".json");
  info.step = manifest["step"].get<long>();
  info.config_hash = manifest["config_hash"].get<std::string>();
  info.catalog = manifest["catalog"].get<std::vector<std::string>>();
  info.unet_depth = manifest["unet_depth"].get<int>();
  require(!info.catalog.empty(), "checkpoint catalog is empty");

  Rng rng(0);
  model = Model(info.unet_depth, static_cast<int>(info.catalog.size()) + 1,
                rng);
  nn::TensorRefs<double> refs = model.refs();
  nn::from_tensor_entries(read_tensor_archive(path), refs);
  return info;
}

ForwardOutput forward(ad::Tape<double>& tape, Model& model,
                      const TrainSample& sample, const TrainConfig& cfg,
                      bool training) {
  const int side = model.separator.input_side();
  require(sample.mixture_spec.values.rows() == side &&
              sample.mixture_spec.values.cols() == side,
          "sample grid does not match the separator input side");

  const ad::Var x =
      tape.constant(sep::flatten_grid<double>(sample.mixture_spec.values));

  ForwardOutput out;
  std::vector<std::vector<ad::Var>> probs_per_video;
  std::vector<std::vector<int>> labels_per_video;
  std::vector<std::vector<ad::Var>> masks_per_video;
  ad::Var ortho{};
  bool first_video = true;

  for (const VideoData* vd : {&sample.video_a, &sample.video_b}) {
    const int count = vd->graph.principal_count + 1;
    require(static_cast<int>(vd->labels.size()) == count,
            "video " + vd->video_id + ": labels do not match its sources");
    for (int l : vd->labels)
      require(l >= 0 && l < model.n_classes,
              "video " + vd->video_id + ": label outside the class range");

    const ad::Var feats = tape.constant(
        vis::node_feature_matrix<double>(vd->graph));
    const ad::Var zeta = model.visual.summarize(tape, feats);
    const std::vector<ad::Var> ys = model.visual.embed(tape, zeta, count);

    std::vector<ad::Var> probs;
    std::vector<ad::Var> masks;
    Eigen::MatrixXd emb(count, vis::kFeatureWidth);
    std::vector<spectro::Grid> mask_grids;
    for (int i = 0; i < count; ++i) {
      const ad::Var y = ys[static_cast<std::size_t>(i)];
      emb.row(i) = tape.val(y).transpose();
      const ad::Var mask = model.separator.forward(tape, x, y, training);
      const ad::Var separated = ad::cmul(tape, mask, x);
      probs.push_back(model.classifier.apply(tape, separated, side));
      masks.push_back(mask);
      mask_grids.push_back(sep::unflatten_grid(tape.val(mask), side));
      ++out.separator_calls;
    }

    const ad::Var o = loss::ortho_loss(tape, ys, cfg.ortho_background);
    ortho = first_video ? o : ad::add(tape, ortho, o);
    first_video = false;

    probs_per_video.push_back(std::move(probs));
    labels_per_video.push_back(vd->labels);
    masks_per_video.push_back(std::move(masks));
    out.embeddings.push_back(std::move(emb));
    out.masks.push_back(std::move(mask_grids));
  }

  const Eigen::MatrixXd ibm_a = loss::ideal_binary_mask(
      sample.video_a.log_grid, sample.video_b.log_grid);
  const Eigen::MatrixXd ibm_b = loss::ideal_binary_mask(
      sample.video_b.log_grid, sample.video_a.log_grid);
  const std::vector<ad::Mat<double>> ibms = {
      sep::flatten_grid<double>(ibm_a), sep::flatten_grid<double>(ibm_b)};

  const ad::Var cons =
      loss::consistency_loss(tape, probs_per_video, labels_per_video);
  const ad::Var cosep = loss::cosep_loss(tape, masks_per_video, ibms);
  out.total = loss::total_loss(tape, cons, cosep, ortho, cfg.weights);

  out.cons = tape.val(cons)(0, 0);
  out.cosep = tape.val(cosep)(0, 0);
  out.ortho = tape.val(ortho)(0, 0);
  out.total_value = tape.val(out.total)(0, 0);
  return out;
}

TrainResult train(const TrainConfig& cfg, const Pool& pool,
                  const std::string& out_dir, std::ostream* progress) {
  validate(cfg);
  require(!pool.catalog.empty(), "training pool has no catalog");
  std::filesystem::create_directories(out_dir);

  Rng root(cfg.seed);
  Rng model_rng = root.fork(1);
  Rng sample_rng = root.fork(2);
  Model model(cfg.unet_depth, static_cast<int>(pool.catalog.size()) + 1,
              model_rng);
  nn::TensorRefs<double> refs = model.refs();

  nn::Adam<double>::Config acfg;
  acfg.beta1 = cfg.beta1;
  acfg.beta2 = cfg.beta2;
  acfg.weight_decay = cfg.weight_decay;
  nn::Adam<double> adam(refs.params, acfg);

  const std::string csv_path = out_dir + "/loss.csv";
  std::ofstream csv(csv_path);
  require(csv.good(), "cannot write loss CSV: " + csv_path);
  csv << "step,l_cons,l_cosep,l_ortho,total\n";

  const CheckpointInfo base_info{0, config_digest(cfg), pool.catalog,
                                 cfg.unet_depth};

  for (long step = 0; step < cfg.max_steps; ++step) {
    double cons = 0, cosep = 0, ortho = 0, total = 0;
    std::string ids;
    adam.zero_grad();
    for (int micro = 0; micro < cfg.grad_accum; ++micro) {
      const TrainSample sample =
          make_sample(pool, sample_rng, cfg.class_balanced);
      ad::Tape<double> tape;
      const ForwardOutput f = forward(tape, model, sample, cfg, true);
      if (!ids.empty()) ids += ", ";
      ids += sample.video_a.video_id + "+" + sample.video_b.video_id;
      if (!std::isfinite(f.total_value)) {
        std::ofstream dump(out_dir + "/abort.txt");
        dump << "step " << step << "\nsamples " << ids << "\ncons " << f.cons
             << "\ncosep " << f.cosep << "\northo " << f.ortho << "\ntotal "
             << f.total_value << "\n";
        throw Error("training aborted at step " + std::to_string(step) +
                    ": non-finite loss (samples " + ids + ")");
      }
      tape.backward(f.total);
      cons += f.cons;
      cosep += f.cosep;
      ortho += f.ortho;
      total += f.total_value;
    }
    const double inv = 1.0 / cfg.grad_accum;
    if (cfg.grad_accum > 1)
      for (ad::Param<double>* p : refs.params) p->grad *= inv;
    cons *= inv;
    cosep *= inv;
    ortho *= inv;
    total *= inv;

    adam.step(scheduled_lr(cfg, step));

    char row[160];
    std::snprintf(row, sizeof(row), "%ld,%.17g,%.17g,%.17g,%.17g\n", step,
                  cons, cosep, ortho, total);
    csv << row;

    if (progress && ((step + 1) % 100 == 0 || step + 1 == cfg.max_steps))
      *progress << "step " << (step + 1) << "/" << cfg.max_steps << " total "
                << total << " lr " << scheduled_lr(cfg, step) << "\n"
                << std::flush;

    if ((step + 1) % cfg.checkpoint_interval == 0 &&
        step + 1 != cfg.max_steps) {
      CheckpointInfo info = base_info;
      info.step = step + 1;
      save_checkpoint(out_dir + "/checkpoint_" + step_tag(step + 1) + ".tens",
                      model, info);
    }
  }
  csv.flush();
  require(csv.good(), "loss CSV write failed: " + csv_path);

  CheckpointInfo info = base_info;
  info.step = cfg.max_steps;
  const std::string final_path = out_dir + "/checkpoint_final.tens";
  save_checkpoint(final_path, model, info);

  TrainResult res;
  res.steps = cfg.max_steps;
  res.final_checkpoint = final_path;
  res.loss_csv = csv_path;
  return res;
}

std::vector<spectro::Waveform> infer_separate(
    Model& model, const SceneGraph& graph, int n_sources,
    const spectro::Waveform& audio, std::vector<spectro::Grid>* masks_out) {
  require(n_sources >= 1, "separation needs at least one source");
  require(audio.sample_rate == spectro::kSampleRate,
          "separation input has an unexpected sample rate");

  const int side = model.separator.input_side();
  spectro::Config scfg;
  scfg.frames = side;
  scfg.log_bins = side;
  const spectro::Waveform padded =
      spectro::pad_or_trim(audio, scfg.segment_samples());
  const spectro::ComplexSpectrogram cs = spectro::stft(padded, scfg);
  const spectro::LogSpectrogram log = spectro::log_resample(cs.magnitude,
                                                            scfg);

  ad::Tape<double> tape(false);
  const ad::Var x = tape.constant(sep::flatten_grid<double>(log.values));
  const ad::Var feats =
      tape.constant(vis::node_feature_matrix<double>(graph));
  const ad::Var zeta = model.visual.summarize(tape, feats);
  const std::vector<ad::Var> ys =
      model.visual.embed(tape, zeta, n_sources + 1);

  std::vector<spectro::Waveform> out;
  for (const ad::Var& y : ys) {
    const ad::Var mask = model.separator.forward(tape, x, y, false);
    const spectro::Grid log_mask = sep::unflatten_grid(tape.val(mask), side);
    if (masks_out) masks_out->push_back(log_mask);
    const spectro::Grid linear_mask = spectro::mask_to_linear(log_mask,
                                                              log.map);
    const spectro::Grid masked = sep::apply_mask(linear_mask, cs.magnitude);
    out.push_back(spectro::istft(masked, cs.phase, scfg));
  }
  return out;
}

std::vector<spectro::Waveform> infer_separate(
    const SceneGraph& graph, int n_sources, const spectro::Waveform& audio,
    const std::string& checkpoint_path,
    std::vector<spectro::Grid>* masks_out) {
  Model model;
  load_checkpoint(checkpoint_path, model);
  return infer_separate(model, graph, n_sources, audio, masks_out);
}

}  // namespace avsgs::train
