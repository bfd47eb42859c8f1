#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "avsgs/common.hpp"

namespace avsgs {

/// Encode an 8-bit grayscale PNG in memory: one byte per pixel, row-major,
/// top row first. The image data travels in stored (uncompressed) deflate
/// blocks inside a standard zlib stream, so any PNG reader accepts the file
/// while the writer needs no compression library.
std::vector<std::uint8_t> encode_png_gray(
    const std::vector<std::uint8_t>& pixels, int width, int height);

void write_png_gray(const std::string& path,
                    const std::vector<std::uint8_t>& pixels, int width,
                    int height);

/// Render a magnitude grid to a grayscale image on a decibel scale: the
/// peak magnitude maps to white and anything `db_floor` dB or further below
/// the peak maps to black. Grid row 0 (the lowest frequency) is drawn at
/// the BOTTOM of the image. An all-zero grid renders uniformly black.
void write_grid_png(const std::string& path, const Eigen::MatrixXd& grid,
                    double db_floor = -80.0);

}  // namespace avsgs
