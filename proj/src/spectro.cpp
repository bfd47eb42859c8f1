#include "avsgs/spectro.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>

namespace avsgs::spectro {

namespace {

/// Periodic Hann window of length n: w[k] = 0.5 - 0.5 cos(2 pi k / n).
std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k)
    w[static_cast<size_t>(k)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * k / n);
  return w;
}

void check_config(const Config& cfg) {
  require(cfg.window > 0 && cfg.hop > 0 && cfg.frames > 0 && cfg.log_bins > 0,
          "spectrogram config fields must be positive");
  require(cfg.window % 2 == 0, "analysis window length must be even");
}

}  // namespace

Waveform pad_or_trim(const Waveform& in, long target_samples) {
  require(target_samples >= 0, "target length must be non-negative");
  Waveform out;
  out.sample_rate = in.sample_rate;
  out.samples.assign(static_cast<size_t>(target_samples), 0.0);
  const long n = std::min<long>(target_samples,
                                static_cast<long>(in.samples.size()));
  std::copy_n(in.samples.begin(), n, out.samples.begin());
  return out;
}

Waveform mix(const std::vector<Waveform>& parts) {
  require(!parts.empty(), "mix requires at least one waveform");
  const size_t n = parts.front().samples.size();
  const int rate = parts.front().sample_rate;
  Waveform out;
  out.sample_rate = rate;
  out.samples.assign(n, 0.0);
  for (const Waveform& p : parts) {
    require(p.samples.size() == n, "mix requires equal-length waveforms");
    require(p.sample_rate == rate, "mix requires matching sample rates");
    for (size_t i = 0; i < n; ++i) out.samples[i] += p.samples[i];
  }
  return out;
}

ComplexSpectrogram stft(const Waveform& in, const Config& cfg) {
  check_config(cfg);
  require(in.sample_rate == kSampleRate, "waveform must be at 11025 Hz");
  require(static_cast<long>(in.samples.size()) >= cfg.segment_samples(),
          "stft input shorter than one analysis segment; pad_or_trim first");

  const int bins = cfg.linear_bins();
  const std::vector<double> window = hann_window(cfg.window);
  Eigen::FFT<double> fft;

  ComplexSpectrogram out;
  out.magnitude.resize(bins, cfg.frames);
  out.phase.resize(bins, cfg.frames);

  std::vector<double> frame(static_cast<size_t>(cfg.window));
  std::vector<std::complex<double>> spec;
  for (int t = 0; t < cfg.frames; ++t) {
    const long start = static_cast<long>(t) * cfg.hop;
    for (int k = 0; k < cfg.window; ++k)
      frame[static_cast<size_t>(k)] =
          in.samples[static_cast<size_t>(start + k)] *
          window[static_cast<size_t>(k)];
    fft.fwd(spec, frame);
    for (int b = 0; b < bins; ++b) {
      out.magnitude(b, t) = std::abs(spec[static_cast<size_t>(b)]);
      out.phase(b, t) = std::arg(spec[static_cast<size_t>(b)]);
    }
  }
  return out;
}

Waveform istft(const Grid& magnitude, const Grid& phase, const Config& cfg) {
  check_config(cfg);
  const int bins = cfg.linear_bins();
  require(magnitude.rows() == bins && magnitude.cols() == cfg.frames,
          "magnitude grid has wrong shape for this config");
  require(phase.rows() == bins && phase.cols() == cfg.frames,
          "phase grid has wrong shape for this config");

  const std::vector<double> window = hann_window(cfg.window);
  const long total = cfg.segment_samples();
  std::vector<double> acc(static_cast<size_t>(total), 0.0);
  std::vector<double> norm(static_cast<size_t>(total), 0.0);

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> full(static_cast<size_t>(cfg.window));
  std::vector<std::complex<double>> frame;
  for (int t = 0; t < cfg.frames; ++t) {
    // Rebuild the full spectrum from the one-sided half (conjugate symmetry).
    for (int b = 0; b < bins; ++b)
      full[static_cast<size_t>(b)] =
          std::polar(magnitude(b, t), phase(b, t));
    for (int b = 1; b < bins - 1; ++b)
      full[static_cast<size_t>(cfg.window - b)] =
          std::conj(full[static_cast<size_t>(b)]);
    fft.inv(frame, full);

    const long start = static_cast<long>(t) * cfg.hop;
    for (int k = 0; k < cfg.window; ++k) {
      const double w = window[static_cast<size_t>(k)];
      acc[static_cast<size_t>(start + k)] +=
          w * frame[static_cast<size_t>(k)].real();
      norm[static_cast<size_t>(start + k)] += w * w;
    }
  }

  Waveform out;
  out.samples.resize(static_cast<size_t>(total));
  for (long i = 0; i < total; ++i) {
    const double d = norm[static_cast<size_t>(i)];
    out.samples[static_cast<size_t>(i)] =
        d > 0.0 ? acc[static_cast<size_t>(i)] / d : 0.0;
  }
  return out;
}

BinMap make_bin_map(int lin_bins, int log_bins) {
  require(lin_bins >= 2, "need at least two linear bins");
  require(log_bins >= 2, "need at least two log bins");

  // Geometric centers over linear bins [1, lin_bins - 1].
  const double first = 1.0;
  const double last = static_cast<double>(lin_bins - 1);
  std::vector<double> center(static_cast<size_t>(log_bins));
  for (int i = 0; i < log_bins; ++i)
    center[static_cast<size_t>(i)] =
        first * std::pow(last / first, static_cast<double>(i) / (log_bins - 1));

  BinMap map;
  map.log_bins = log_bins;
  map.lin_bins = lin_bins;
  map.lower.resize(static_cast<size_t>(lin_bins));
  map.upper.resize(static_cast<size_t>(lin_bins));
  map.w_lower.resize(static_cast<size_t>(lin_bins));

  map.lower[0] = map.upper[0] = 0;  // DC folds into the lowest log bin
  map.w_lower[0] = 1.0;
  for (int j = 1; j < lin_bins; ++j) {
    const double x = static_cast<double>(j);
    if (x >= center.back()) {
      map.lower[static_cast<size_t>(j)] = log_bins - 1;
      map.upper[static_cast<size_t>(j)] = log_bins - 1;
      map.w_lower[static_cast<size_t>(j)] = 1.0;
      continue;
    }
    // Largest i with center[i] <= x (center[0] = 1 <= x always holds).
    const auto it =
        std::upper_bound(center.begin(), center.end(), x) - 1;
    const int i = static_cast<int>(it - center.begin());
    const double lo = center[static_cast<size_t>(i)];
    const double hi = center[static_cast<size_t>(i + 1)];
    double w = (hi - x) / (hi - lo);
    w = std::clamp(w, 0.0, 1.0);
    map.lower[static_cast<size_t>(j)] = i;
    map.upper[static_cast<size_t>(j)] = i + 1;
    map.w_lower[static_cast<size_t>(j)] = w;
  }
  return map;
}

LogSpectrogram log_resample(const Grid& linear_magnitude, const Config& cfg) {
  check_config(cfg);
  require(linear_magnitude.rows() == cfg.linear_bins(),
          "linear grid row count does not match the config");

  LogSpectrogram out;
  out.map = make_bin_map(cfg.linear_bins(), cfg.log_bins);
  out.values = Grid::Zero(cfg.log_bins, linear_magnitude.cols());
  for (int j = 0; j < cfg.linear_bins(); ++j) {
    const double w = out.map.w_lower[static_cast<size_t>(j)];
    out.values.row(out.map.lower[static_cast<size_t>(j)]) +=
        w * linear_magnitude.row(j);
    if (out.map.upper[static_cast<size_t>(j)] !=
        out.map.lower[static_cast<size_t>(j)])
      out.values.row(out.map.upper[static_cast<size_t>(j)]) +=
          (1.0 - w) * linear_magnitude.row(j);
  }
  return out;
}

Grid mask_to_linear(const Grid& log_mask, const BinMap& map) {
  require(log_mask.rows() == map.log_bins,
          "mask row count does not match the bin map");
  require((log_mask.array() >= 0.0).all() && (log_mask.array() <= 1.0).all(),
          "mask values must lie in [0, 1]");
  Grid out(map.lin_bins, log_mask.cols());
  for (int j = 0; j < map.lin_bins; ++j) {
    const double w = map.w_lower[static_cast<size_t>(j)];
    out.row(j) = w * log_mask.row(map.lower[static_cast<size_t>(j)]) +
                 (1.0 - w) * log_mask.row(map.upper[static_cast<size_t>(j)]);
  }
  return out;
}

}  // namespace avsgs::spectro
