#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "avsgs/autodiff.hpp"
#include "avsgs/rng.hpp"
#include "avsgs/spectro.hpp"

namespace testutil {

/// Compare analytic gradients of a scalar-valued tape program against
/// central finite differences on sampled entries of every listed parameter.
/// Returns the worst relative error observed. Double precision only.
inline double fd_check(
    const std::function<avsgs::ad::Var(avsgs::ad::Tape<double>&)>& make_loss,
    std::vector<avsgs::ad::Param<double>*> params, avsgs::Rng& rng,
    int samples_per_param = 6, double h = 1e-6) {
  using avsgs::ad::Tape;
  for (auto* p : params) p->zero_grad();
  Tape<double> tape(true);
  tape.backward(make_loss(tape));
  std::vector<avsgs::ad::Mat<double>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    const Eigen::Index n = p.value.size();
    for (int s = 0; s < samples_per_param; ++s) {
      const Eigen::Index idx = static_cast<Eigen::Index>(rng.integer(n));
      const double saved = p.value.data()[idx];
      p.value.data()[idx] = saved + h;
      double f_plus;
      {
        Tape<double> t(false);
        f_plus = t.val(make_loss(t))(0, 0);
      }
      p.value.data()[idx] = saved - h;
      double f_minus;
      {
        Tape<double> t(false);
        f_minus = t.val(make_loss(t))(0, 0);
      }
      p.value.data()[idx] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * h);
      const double an = analytic[pi].data()[idx];
      const double denom = std::max({1e-7, std::abs(fd), std::abs(an)});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

/// Fresh scratch directory under the system temp root; removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    root_ = std::filesystem::temp_directory_path() /
            ("avsgs_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter_++));
    std::filesystem::create_directories(root_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(root_, ec);
  }
  std::filesystem::path path() const { return root_; }
  std::string file(const std::string& name) const {
    return (root_ / name).string();
  }

 private:
  static inline int counter_ = 0;
  std::filesystem::path root_;
};

inline avsgs::spectro::Waveform sine(double freq_hz, long n, double amp = 0.5,
                                     double phase = 0.0) {
  avsgs::spectro::Waveform w;
  w.samples.resize(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i)
    w.samples[static_cast<size_t>(i)] =
        amp * std::sin(2.0 * M_PI * freq_hz * i / avsgs::spectro::kSampleRate +
                       phase);
  return w;
}

inline avsgs::spectro::Waveform noise(long n, std::uint64_t seed,
                                      double amp = 0.5) {
  avsgs::Rng rng(seed);
  avsgs::spectro::Waveform w;
  w.samples.resize(static_cast<size_t>(n));
  for (auto& s : w.samples) s = amp * (2.0 * rng.uniform() - 1.0);
  return w;
}

/// Signal-to-noise ratio in dB between a reference and an estimate over
/// [begin, end).
inline double snr_db(const std::vector<double>& ref,
                     const std::vector<double>& est, size_t begin,
                     size_t end) {
  double sig = 0.0, err = 0.0;
  for (size_t i = begin; i < end; ++i) {
    sig += ref[i] * ref[i];
    const double d = ref[i] - est[i];
    err += d * d;
  }
  if (err == 0.0) return 1e9;
  return 10.0 * std::log10(sig / err);
}

}  // namespace testutil
