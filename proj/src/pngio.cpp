#include "avsgs/pngio.hpp"

#include <array>
#include <cmath>
#include <fstream>

namespace avsgs {
namespace {

std::uint32_t crc32(const std::uint8_t* data, std::size_t n,
                    std::uint32_t crc = 0) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xffffffffu;
  for (std::size_t i = 0; i < n; ++i)
    crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

std::uint32_t adler32(const std::uint8_t* data, std::size_t n) {
  std::uint32_t a = 1, b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a = (a + data[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

void push_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void push_chunk(std::vector<std::uint8_t>& out, const char type[5],
                const std::vector<std::uint8_t>& data) {
  push_be32(out, static_cast<std::uint32_t>(data.size()));
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.insert(out.end(), body.begin(), body.end());
  push_be32(out, crc32(body.data(), body.size()));
}

}  // namespace

std::vector<std::uint8_t> encode_png_gray(
    const std::vector<std::uint8_t>& pixels, int width, int height) {
  require(width >= 1 && height >= 1, "png: image must be at least 1x1");
  require(pixels.size() == static_cast<std::size_t>(width) *
                               static_cast<std::size_t>(height),
          "png: pixel count does not match the dimensions");

  // Each scanline is prefixed with filter type 0 (None).
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(height) *
              (static_cast<std::size_t>(width) + 1));
  for (int r = 0; r < height; ++r) {
    raw.push_back(0);
    const std::size_t off =
        static_cast<std::size_t>(r) * static_cast<std::size_t>(width);
    raw.insert(raw.end(), pixels.begin() + static_cast<std::ptrdiff_t>(off),
               pixels.begin() + static_cast<std::ptrdiff_t>(off + width));
  }

  // zlib wrapper around stored deflate blocks (max 65535 bytes per block).
  std::vector<std::uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  std::size_t pos = 0;
  do {
    const std::size_t len = std::min<std::size_t>(raw.size() - pos, 65535);
    const bool final_block = pos + len == raw.size();
    z.push_back(final_block ? 1 : 0);
    z.push_back(static_cast<std::uint8_t>(len & 0xffu));
    z.push_back(static_cast<std::uint8_t>(len >> 8));
    z.push_back(static_cast<std::uint8_t>(~len & 0xffu));
    z.push_back(static_cast<std::uint8_t>((~len >> 8) & 0xffu));
    z.insert(z.end(), raw.begin() + static_cast<std::ptrdiff_t>(pos),
             raw.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  } while (pos < raw.size());
  push_be32(z, adler32(raw.data(), raw.size()));

  std::vector<std::uint8_t> ihdr;
  push_be32(ihdr, static_cast<std::uint32_t>(width));
  push_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // color type: grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace

  std::vector<std::uint8_t> png = {0x89, 0x50, 0x4e, 0x47,
                                   0x0d, 0x0a, 0x1a, 0x0a};
  push_chunk(png, "IHDR", ihdr);
  push_chunk(png, "IDAT", z);
  push_chunk(png, "IEND", {});
  return png;
}

void write_png_gray(const std::string& path,
                    const std::vector<std::uint8_t>& pixels, int width,
                    int height) {
  const std::vector<std::uint8_t> bytes =
      encode_png_gray(pixels, width, height);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write image: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  require(out.good(), "image write failed: " + path);
}

void write_grid_png(const std::string& path, const Eigen::MatrixXd& grid,
                    double db_floor) {
  require(grid.size() > 0, "cannot render an empty grid");
  require(db_floor < 0, "the decibel floor must be negative");
  const Eigen::MatrixXd mag = grid.cwiseAbs();
  const double peak = mag.maxCoeff();

  const int height = static_cast<int>(grid.rows());
  const int width = static_cast<int>(grid.cols());
  std::vector<std::uint8_t> pixels(
      static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
  if (peak > 0) {
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) {
        const double v = mag(r, c);
        double level = v > 0 ? 20.0 * std::log10(v / peak) : db_floor;
        level = std::max(level, db_floor);
        const double unit = 1.0 - level / db_floor;  // floor->0, peak->1
        // Row 0 carries the lowest frequency: draw it at the bottom.
        const std::size_t px =
            static_cast<std::size_t>(height - 1 - r) *
                static_cast<std::size_t>(width) +
            static_cast<std::size_t>(c);
        pixels[px] = static_cast<std::uint8_t>(std::lround(unit * 255.0));
      }
  }
  write_png_gray(path, pixels, width, height);
}

}  // namespace avsgs
