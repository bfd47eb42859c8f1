#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avsgs/common.hpp"
#include "avsgs/rng.hpp"
#include "avsgs/spectro.hpp"

namespace avsgs::fix {

/// Recipe for a synthetic training corpus. Every video gets
/// class-characteristic audio, a detection file, and a caption; the whole
/// corpus is a pure function of the seed.
struct CorpusConfig {
  std::vector<std::string> classes;  // catalog class names to generate
  int n_per_class = 8;
  std::uint64_t seed = 0;
  long n_samples = spectro::Config{}.segment_samples();
  std::string out_dir;
  std::string dictionary_path;  // auditory words, for captions
  std::string catalog_path;     // full principal-class catalog
  /// Grid geometry used for the mask-balance check during generation.
  spectro::Config spec_cfg{};
  int feature_dim = 2048;
  /// Minimum fraction of time-frequency bins each source of a cross-class
  /// pair must win in the ideal binary mask.
  double balance_min = 0.30;
};

struct CorpusVideo {
  std::string video_id;
  std::string class_label;
  std::string wav_path;        // relative to out_dir
  std::string detection_path;  // relative to out_dir
  std::string caption;
};

struct Corpus {
  std::vector<CorpusVideo> videos;
  std::string manifest_path;
  std::string captions_path;
};

/// Synthesizes the characteristic tone for catalog class `class_index`: a
/// stack of odd harmonics over a fundamental of 110 * 2^(class_index / 3)
/// Hz with a seeded amplitude-modulation envelope and a low noise floor.
/// Odd multipliers keep any two classes' partials disjoint, so mixtures
/// remain separable by construction.
spectro::Waveform class_tone(int class_index, long n_samples, Rng& rng);

/// Generates the corpus files under cfg.out_dir: one WAV and one detection
/// JSONL per video, plus captions.jsonl, manifest.jsonl, and a catalog.txt
/// copy that makes the directory a self-contained dataset root. Audio whose
/// ideal-mask balance against an earlier video falls below balance_min is
/// regenerated from a fresh substream, so emitted cross-class pairs always
/// give both sources a meaningful share of the grid.
Corpus make_corpus(const CorpusConfig& cfg);

}  // namespace avsgs::fix
