#include "avsgs/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace avsgs {

namespace {

long pcm16_level(double s) {
  return std::clamp<long>(std::lrint(std::clamp(s, -1.0, 1.0) * 32768.0),
                          -32768, 32767);
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 |
         static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
}

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

spectro::Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open WAV file: " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  require(raw.size() >= 12, "WAV file too short: " + path);
  require(std::memcmp(raw.data(), "RIFF", 4) == 0 &&
              std::memcmp(raw.data() + 8, "WAVE", 4) == 0,
          "not a RIFF/WAVE file: " + path);

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= raw.size()) {
    const char* id = reinterpret_cast<const char*>(raw.data() + pos);
    const std::uint32_t len = read_u32(raw.data() + pos + 4);
    pos += 8;
    if (pos + len > raw.size()) break;
    if (std::memcmp(id, "fmt ", 4) == 0 && len >= 16) {
      format = read_u16(raw.data() + pos);
      channels = read_u16(raw.data() + pos + 2);
      rate = read_u32(raw.data() + pos + 4);
      bits = read_u16(raw.data() + pos + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = raw.data() + pos;
      data_len = len;
    }
    pos += len + (len & 1);  // chunks are word-aligned
  }

  require(have_fmt && data != nullptr, "WAV missing fmt/data chunk: " + path);
  require(format == 1, "WAV must be integer PCM: " + path);
  require(channels == 1, "WAV must be mono: " + path);
  require(bits == 16, "WAV must be 16-bit: " + path);
  require(rate == static_cast<std::uint32_t>(spectro::kSampleRate),
          "WAV must be sampled at 11025 Hz: " + path);

  spectro::Waveform wf;
  wf.sample_rate = spectro::kSampleRate;
  const std::uint32_t n = data_len / 2;
  wf.samples.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::int16_t v = static_cast<std::int16_t>(
        static_cast<std::uint16_t>(data[2 * i] | data[2 * i + 1] << 8));
    wf.samples[i] = static_cast<double>(v) / 32768.0;
  }
  return wf;
}

void write_wav(const std::string& path, const spectro::Waveform& wf) {
  const std::uint32_t n = static_cast<std::uint32_t>(wf.samples.size());
  const std::uint32_t data_len = n * 2;

  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // integer PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(wf.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(wf.sample_rate) * 2);
  put_u16(out, 2);   // block align
  put_u16(out, 16);  // bits per sample
  out += "data";
  put_u32(out, data_len);
  for (double s : wf.samples)
    put_u16(out,
            static_cast<std::uint16_t>(static_cast<std::int16_t>(pcm16_level(s))));

  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open WAV file for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(f.good(), "failed writing WAV file: " + path);
}

double pcm16_round_trip(double sample) {
  return static_cast<double>(pcm16_level(sample)) / 32768.0;
}

}  // namespace avsgs
