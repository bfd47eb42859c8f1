#include "avsgs/gridio.hpp"

#include <cstring>
#include <fstream>

namespace avsgs {

namespace {

constexpr char kGridMagic[8] = {'A', 'V', 'S', 'G', 'S', 'P', 'E', 'C'};
constexpr char kArchiveMagic[8] = {'A', 'V', 'S', 'G', 'T', 'E', 'N', 'S'};
constexpr std::uint32_t kArchiveVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(is.good(), "truncated file: " + path);
  return static_cast<std::uint32_t>(b[0]) |
         static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 |
         static_cast<std::uint32_t>(b[3]) << 24;
}

void put_f32(std::ostream& os, const float* data, std::size_t n) {
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(n * sizeof(float)));
}

void get_f32(std::istream& is, float* data, std::size_t n,
             const std::string& path) {
  is.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(n * sizeof(float)));
  require(is.good(), "truncated file: " + path);
}

}  // namespace

void write_grid(const std::string& path, const Eigen::MatrixXd& grid) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open for writing: " + path);
  f.write(kGridMagic, 8);
  put_u32(f, static_cast<std::uint32_t>(grid.rows()));
  put_u32(f, static_cast<std::uint32_t>(grid.cols()));
  std::vector<float> row(static_cast<std::size_t>(grid.cols()));
  for (Eigen::Index r = 0; r < grid.rows(); ++r) {
    for (Eigen::Index c = 0; c < grid.cols(); ++c)
      row[static_cast<std::size_t>(c)] = static_cast<float>(grid(r, c));
    put_f32(f, row.data(), row.size());
  }
  require(f.good(), "failed writing: " + path);
}

Eigen::MatrixXd read_grid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  require(f.good() && std::memcmp(magic, kGridMagic, 8) == 0,
          "not a spectrogram snapshot: " + path);
  const std::uint32_t rows = get_u32(f, path);
  const std::uint32_t cols = get_u32(f, path);
  Eigen::MatrixXd grid(rows, cols);
  std::vector<float> row(cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    get_f32(f, row.data(), row.size(), path);
    for (std::uint32_t c = 0; c < cols; ++c)
      grid(r, c) = static_cast<double>(row[c]);
  }
  return grid;
}

void write_tensor_archive(const std::string& path,
                          const std::vector<TensorEntry>& entries) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open for writing: " + path);
  f.write(kArchiveMagic, 8);
  put_u32(f, kArchiveVersion);
  put_u32(f, static_cast<std::uint32_t>(entries.size()));
  for (const TensorEntry& e : entries) {
    require(e.data.size() == e.element_count(),
            "tensor payload size does not match dims: " + e.name);
    put_u32(f, static_cast<std::uint32_t>(e.name.size()));
    f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(f, static_cast<std::uint32_t>(e.dims.size()));
    for (std::uint32_t d : e.dims) put_u32(f, d);
    put_f32(f, e.data.data(), e.data.size());
  }
  require(f.good(), "failed writing: " + path);
}

std::vector<TensorEntry> read_tensor_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  require(f.good() && std::memcmp(magic, kArchiveMagic, 8) == 0,
          "not a tensor archive: " + path);
  const std::uint32_t version = get_u32(f, path);
  require(version == kArchiveVersion, "unsupported archive version: " + path);
  const std::uint32_t count = get_u32(f, path);
  std::vector<TensorEntry> entries(count);
  for (TensorEntry& e : entries) {
    const std::uint32_t name_len = get_u32(f, path);
    e.name.resize(name_len);
    f.read(e.name.data(), name_len);
    require(f.good(), "truncated file: " + path);
    const std::uint32_t rank = get_u32(f, path);
    e.dims.resize(rank);
    for (std::uint32_t& d : e.dims) d = get_u32(f, path);
    e.data.resize(e.element_count());
    get_f32(f, e.data.data(), e.data.size(), path);
  }
  return entries;
}

}  // namespace avsgs
