#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "avsgs/common.hpp"

namespace avsgs {

/// Single-matrix snapshot file: magic "AVSGSPEC", u32 rows, u32 cols, then
/// rows*cols float32 values row-major, all little-endian. Used to persist
/// spectrogram grids and masks.
void write_grid(const std::string& path, const Eigen::MatrixXd& grid);
Eigen::MatrixXd read_grid(const std::string& path);

/// One named tensor inside an archive: float32 payload with explicit dims,
/// stored row-major (last dimension fastest).
struct TensorEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
  }
};

/// Named tensor archive: magic "AVSGTENS", u32 version (currently 1),
/// u32 entry count, then per entry u32 name length + bytes, u32 rank,
/// u32 dims[rank], float32 payload row-major. Little-endian throughout.
/// Model checkpoints and feature sidecars use this container.
void write_tensor_archive(const std::string& path,
                          const std::vector<TensorEntry>& entries);
std::vector<TensorEntry> read_tensor_archive(const std::string& path);

}  // namespace avsgs
