#pragma once

#include <Eigen/Dense>

#include <vector>

#include "avsgs/common.hpp"

namespace avsgs::spectro {

/// The pipeline operates at a single fixed sample rate.
constexpr int kSampleRate = 11025;

/// Mono audio. Samples are nominally in [-1, 1] but intermediate results
/// (mixtures, reconstructions) may exceed that range; only the WAV writer
/// clamps.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;
};

/// Real-valued frequency-by-time grid: rows = frequency bins, cols = frames.
using Grid = Eigen::MatrixXd;

/// Analysis geometry. The window/hop pair fixes the linear bin count; the
/// frame count and log-bin count set the square grid the networks consume.
struct Config {
  int window = 1022;    // Hann analysis window length (periodic form)
  int hop = 256;        // samples between frame starts
  int frames = 256;     // time frames per segment
  int log_bins = 256;   // rows of the log-frequency grid

  int linear_bins() const { return window / 2 + 1; }
  long segment_samples() const {
    return static_cast<long>(frames - 1) * hop + window;
  }
};

/// One-sided short-time spectrum split into magnitude and phase,
/// each linear_bins x frames.
struct ComplexSpectrogram {
  Grid magnitude;
  Grid phase;
};

/// Fixed linear->log frequency mapping. Each linear bin deposits its mass
/// into at most two adjacent log bins with convex weights, so each column
/// of the implied resampling matrix sums to exactly one and per-frame mass
/// is preserved. The same table is reused in reverse to read a log-domain
/// mask back onto the linear grid.
struct BinMap {
  std::vector<int> lower;       // first target log bin, per linear bin
  std::vector<int> upper;       // second target (== lower when w_lower == 1)
  std::vector<double> w_lower;  // weight on `lower`; `upper` gets the rest
  int log_bins = 0;
  int lin_bins = 0;
};

/// Magnitude grid on the log-frequency axis, log_bins x frames, plus the
/// map that produced it.
struct LogSpectrogram {
  Grid values;
  BinMap map;
};

/// Right-pad with zeros or truncate so the result has exactly
/// `target_samples` samples.
Waveform pad_or_trim(const Waveform& in, long target_samples);

/// Sample-wise sum of equally long waveforms at the pipeline rate.
Waveform mix(const std::vector<Waveform>& parts);

/// Short-time Fourier transform with a periodic Hann window. The input
/// must be at least one segment long (see Config::segment_samples); frames
/// are taken from the prefix and nothing is padded silently.
ComplexSpectrogram stft(const Waveform& in, const Config& cfg = {});

/// Inverse STFT by weighted overlap-add with the analysis window; the
/// overlapped window energy is divided out per sample, so a round trip
/// through stft() is exact wherever the window coverage is nonzero.
Waveform istft(const Grid& magnitude, const Grid& phase,
               const Config& cfg = {});

/// Build the linear->log mapping for the given bin counts. Log-bin centers
/// are geometrically spaced over linear bins [1, lin_bins - 1]; the DC bin
/// folds into log bin 0.
BinMap make_bin_map(int lin_bins, int log_bins);

/// Resample a linear-frequency magnitude grid onto the log-frequency axis.
LogSpectrogram log_resample(const Grid& linear_magnitude,
                            const Config& cfg = {});

/// Read a log-domain mask back onto the linear grid: each linear bin takes
/// the convex combination of the (at most two) log bins it feeds. Values in
/// [0, 1] stay in [0, 1].
Grid mask_to_linear(const Grid& log_mask, const BinMap& map);

}  // namespace avsgs::spectro
