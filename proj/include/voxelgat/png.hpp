#pragma once

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "voxelgat/common.hpp"

namespace voxelgat {

namespace detail {

inline void png_be32(unsigned char* p, std::uint32_t v) {
  p[0] = (unsigned char)(v >> 24);
  p[1] = (unsigned char)(v >> 16);
  p[2] = (unsigned char)(v >> 8);
  p[3] = (unsigned char)v;
}

inline void png_chunk(std::ofstream& os, const char* type, const unsigned char* data,
                      std::uint32_t len) {
  unsigned char head[8];
  png_be32(head, len);
  std::memcpy(head + 4, type, 4);
  os.write(reinterpret_cast<const char*>(head), 8);
  if (len) os.write(reinterpret_cast<const char*>(data), len);
  std::uint32_t crc = std::uint32_t(::crc32(0, reinterpret_cast<const Bytef*>(type), 4));
  if (len) crc = std::uint32_t(::crc32(crc, data, len));
  unsigned char tail[4];
  png_be32(tail, crc);
  os.write(reinterpret_cast<const char*>(tail), 4);
}

}  // namespace detail

/// Minimal 8-bit RGB PNG writer (single IDAT, filter 0 rows).
inline void write_png_rgb(const std::string& path, std::size_t width, std::size_t height,
                          const std::vector<unsigned char>& rgb) {
  check(width > 0 && height > 0, ErrorKind::parameter, "empty image");
  check(rgb.size() == width * height * 3, ErrorKind::contract, "pixel buffer size mismatch");

  std::vector<unsigned char> raw;
  raw.reserve(height * (1 + width * 3));
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), rgb.begin() + std::ptrdiff_t(y * width * 3),
               rgb.begin() + std::ptrdiff_t((y + 1) * width * 3));
  }
  uLongf bound = ::compressBound(uLong(raw.size()));
  std::vector<unsigned char> packed(bound);
  int rc = ::compress2(packed.data(), &bound, raw.data(), uLong(raw.size()), 9);
  check(rc == Z_OK, ErrorKind::io, "deflate failed for " + path);
  packed.resize(bound);

  std::ofstream os(path, std::ios::binary);
  check(bool(os), ErrorKind::io, "cannot open for writing: " + path);
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  os.write(reinterpret_cast<const char*>(sig), 8);

  unsigned char ihdr[13];
  detail::png_be32(ihdr, std::uint32_t(width));
  detail::png_be32(ihdr + 4, std::uint32_t(height));
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // truecolor
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  detail::png_chunk(os, "IHDR", ihdr, 13);
  detail::png_chunk(os, "IDAT", packed.data(), std::uint32_t(packed.size()));
  detail::png_chunk(os, "IEND", nullptr, 0);
  check(bool(os), ErrorKind::io, "write failed: " + path);
}

}  // namespace voxelgat
