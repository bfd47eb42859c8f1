#pragma once

#include <string>

#include "avsgs/spectro.hpp"

namespace avsgs {

/// Read a 16-bit PCM mono WAV file at 11025 Hz. Any other encoding,
/// channel count, bit depth, or sample rate is rejected (there is no
/// resampler in the pipeline).
spectro::Waveform read_wav(const std::string& path);

/// Write 16-bit PCM mono WAV at the waveform's rate. Samples are clamped
/// to [-1, 1] before quantization.
void write_wav(const std::string& path, const spectro::Waveform& wf);

/// The value read_wav would return for `sample` after a write_wav round
/// trip: clamp to [-1, 1], quantize to the nearest 16-bit level, rescale.
/// Lets callers compare in-memory signals against file-backed ones without
/// touching disk.
double pcm16_round_trip(double sample);

}  // namespace avsgs
