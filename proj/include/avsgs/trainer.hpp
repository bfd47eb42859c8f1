#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "avsgs/autodiff.hpp"
#include "avsgs/common.hpp"
#include "avsgs/losses.hpp"
#include "avsgs/nn.hpp"
#include "avsgs/rng.hpp"
#include "avsgs/scenegraph.hpp"
#include "avsgs/separator.hpp"
#include "avsgs/spectro.hpp"
#include "avsgs/visualnet.hpp"

/// Mix-and-separate training and inference-time separation.
///
/// A training step mixes the audio of two videos drawn from the pool, runs
/// the visual embedding stack on each video's scene graph, separates the
/// shared mixture spectrogram once per embedding, classifies every separated
/// grid, and optimizes the weighted sum of the consistency, co-separation,
/// and orthogonality losses with Adam under a stepwise learning-rate decay.
namespace avsgs::train {

/// Configuration mistakes an operator can make at the command line or in a
/// config file (unknown key, unparsable value, malformed line). The CLI maps
/// these to the usage exit code, unlike contract errors.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Flat training configuration. The config file is `key=value` text, one
/// pair per line, '#' starting a comment line; keys match the field names
/// below. Defaults are the published training recipe.
struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lr_decay_factor = 0.1;     // multiplies the rate every interval
  long lr_decay_interval = 15000;   // steps per decay
  loss::LossWeights weights;        // lambda1, lambda2, lambda3
  long max_steps = 0;
  std::uint64_t seed = 0;
  double context_iou_threshold = 0.1;
  int max_context = 20;
  int unet_depth = 7;               // grid side = 2^(depth+1)
  int grad_accum = 1;               // pairs accumulated per optimizer step
  long checkpoint_interval = 500;   // steps between periodic checkpoints
  bool class_balanced = false;      // pair videos of distinct classes
  bool ortho_background = false;    // include background embeddings in ortho

  int grid_side() const { return 1 << (unet_depth + 1); }
  spectro::Config spectro_config() const {
    spectro::Config c;
    c.frames = grid_side();
    c.log_bins = grid_side();
    return c;
  }
};

/// Set one field from its config-file key. Unknown keys and unparsable
/// values raise ConfigError naming the key.
void set_config_value(TrainConfig& cfg, const std::string& key,
                      const std::string& value);

/// Parse a flat key=value config file over the defaults. Malformed lines
/// raise ConfigError with the path and line number.
TrainConfig load_train_config(const std::string& path);

/// Range-check every field; violations raise Error.
void validate(const TrainConfig& cfg);

/// Canonical serialization: every key in fixed alphabetical order, one per
/// line. Re-parsing it reproduces the config exactly.
std::string config_canonical(const TrainConfig& cfg);

/// 16-hex-digit digest of the canonical serialization; recorded in
/// checkpoint manifests so a checkpoint can be matched to its recipe.
std::string config_digest(const TrainConfig& cfg);

/// Learning rate at a given 0-based step: the base rate decayed once per
/// completed interval.
double scheduled_lr(const TrainConfig& cfg, long step);

/// One video's training inputs: its scene graph, the class labels its
/// separated outputs must explain (principal catalog indices with the
/// background index last), the solo audio cut to segment length, and the
/// solo log-frequency magnitude grid the ideal binary masks are built from.
struct VideoData {
  std::string video_id;
  std::string class_label;
  SceneGraph graph;
  std::vector<int> labels;
  spectro::Waveform audio;
  spectro::Grid log_grid;
};

/// The loaded dataset: one VideoData per index row plus the class catalog
/// (background excluded; its label index is catalog.size()).
struct Pool {
  std::vector<VideoData> videos;
  std::vector<std::string> catalog;

  int background_label() const { return static_cast<int>(catalog.size()); }
};

/// Load a dataset index: a JSON-lines manifest whose records carry
/// {video_id, class_label, wav, detections} with paths relative to the
/// manifest's directory, plus the catalog file. Each video's detections are
/// built into a scene graph (background-node seed derived from the video id,
/// so graphs do not depend on the training seed), its audio padded or
/// trimmed to the segment length, and its solo log grid precomputed.
Pool load_pool(const std::string& manifest_path,
               const std::string& catalog_path, const TrainConfig& cfg);

/// One training pair: two distinct videos, their mixture, and the mixture's
/// log-frequency magnitude plus linear-frequency phase.
struct TrainSample {
  VideoData video_a;
  VideoData video_b;
  spectro::Waveform mixture;
  spectro::LogSpectrogram mixture_spec;
  spectro::Grid mixture_phase;
};

/// Draw a pair uniformly without replacement (two distinct indices). With
/// `class_balanced` set, two distinct classes are drawn first and one video
/// uniformly within each. Requires at least two videos (and, balanced, at
/// least two classes).
TrainSample make_sample(const Pool& pool, Rng& rng,
                        bool class_balanced = false);

/// All learnable modules. Construction order (visual stack, separator,
/// classifier) fixes the draw order from the init generator, so a seed
/// reproduces the weights exactly.
struct Model {
  vis::VisualNet<double> visual;
  sep::Unet<double> separator;
  loss::AudioClassifier<double> classifier;
  int n_classes = 0;  // catalog classes + background

  Model() = default;
  Model(int unet_depth, int n_classes, Rng& rng);

  nn::TensorRefs<double> refs();
};

/// Checkpoint sidecar contents. `path` holds the named-tensor archive;
/// `path + ".json"` holds {catalog, config_hash, step, unet_depth}.
struct CheckpointInfo {
  long step = 0;
  std::string config_hash;
  std::vector<std::string> catalog;
  int unet_depth = 7;
};

void save_checkpoint(const std::string& path, Model& model,
                     const CheckpointInfo& info);

/// Rebuild the model a checkpoint describes and load its tensors.
CheckpointInfo load_checkpoint(const std::string& path, Model& model);

/// Everything one forward pass produces. `total` stays valid while the tape
/// that built it is alive; the host copies survive it.
struct ForwardOutput {
  ad::Var total{};
  double cons = 0;
  double cosep = 0;
  double ortho = 0;
  double total_value = 0;
  // Per video: log-domain masks, one per embedding, background last.
  std::vector<std::vector<spectro::Grid>> masks;
  // Per video: (N_u + 1) x 512 embedding rows in emission order.
  std::vector<Eigen::MatrixXd> embeddings;
  int separator_calls = 0;
};

/// Compose the full training objective for one sample on the given tape:
/// per video, N_u+1 embeddings, one separator pass per embedding on the
/// shared mixture grid, one classifier pass per separated grid; then the
/// consistency, co-separation (against the videos' ideal binary masks),
/// and orthogonality terms combined with the configured weights.
ForwardOutput forward(ad::Tape<double>& tape, Model& model,
                      const TrainSample& sample, const TrainConfig& cfg,
                      bool training = true);

struct TrainResult {
  long steps = 0;
  std::string final_checkpoint;
  std::string loss_csv;
};

/// Run the optimization loop: per step, `grad_accum` sampled pairs are
/// forwarded and their gradients averaged, Adam applies the scheduled rate,
/// and one CSV row "step,l_cons,l_cosep,l_ortho,total" is appended to
/// out_dir/loss.csv. Periodic checkpoints land at
/// out_dir/checkpoint_<step>.tens and the final state at
/// out_dir/checkpoint_final.tens (with max_steps = 0 that is the fresh
/// initialization). A non-finite loss aborts with the offending video ids,
/// after writing out_dir/abort.txt. Identical (config, pool) inputs yield a
/// byte-identical CSV. Progress lines go to `progress` when given.
TrainResult train(const TrainConfig& cfg, const Pool& pool,
                  const std::string& out_dir,
                  std::ostream* progress = nullptr);

/// Separate a mixture with a trained model: n_sources+1 embeddings are
/// generated from the graph, each mask is predicted on the log grid, read
/// back onto the linear grid, applied to the mixture magnitude, and
/// inverted with the mixture phase. Returns n_sources+1 waveforms
/// (sources first, background last); `masks_out`, when given, receives the
/// log-domain masks in the same order.
std::vector<spectro::Waveform> infer_separate(
    Model& model, const SceneGraph& graph, int n_sources,
    const spectro::Waveform& audio,
    std::vector<spectro::Grid>* masks_out = nullptr);

/// Convenience overload: load the checkpoint, then separate.
std::vector<spectro::Waveform> infer_separate(
    const SceneGraph& graph, int n_sources, const spectro::Waveform& audio,
    const std::string& checkpoint_path,
    std::vector<spectro::Grid>* masks_out = nullptr);

}  // namespace avsgs::train
