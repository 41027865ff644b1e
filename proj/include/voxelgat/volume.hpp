#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>

#include "voxelgat/common.hpp"

namespace voxelgat {

inline constexpr std::size_t kNumModalities = 4;  // channel order: T1, T1CE, T2, FLAIR

struct Offset3 {
  std::size_t z = 0, y = 0, x = 0;
};

/// Four co-registered intensity grids plus the brain mask. The mask is the
/// union of nonzero support across channels, captured when the volume is
/// built; normalization can later make in-brain intensities zero or negative
/// without the mask drifting.
struct MultiModalVolume {
  Dims dims;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel along z, y, x
  std::array<std::vector<double>, kNumModalities> chan;
  std::vector<std::uint8_t> mask;
  std::vector<std::uint8_t> labels;  // optional ground truth; empty when absent

  static MultiModalVolume zeros(Dims d) {
    MultiModalVolume v;
    v.dims = d;
    for (auto& c : v.chan) c.assign(d.voxels(), 0.0);
    v.mask.assign(d.voxels(), 0);
    return v;
  }

  double& at(std::size_t c, std::size_t z, std::size_t y, std::size_t x) {
    return chan[c][dims.index(z, y, x)];
  }
  double at(std::size_t c, std::size_t z, std::size_t y, std::size_t x) const {
    return chan[c][dims.index(z, y, x)];
  }

  bool in_mask(std::size_t i) const { return mask[i] != 0; }

  std::size_t mask_count() const {
    std::size_t n = 0;
    for (std::uint8_t m : mask) n += m != 0;
    return n;
  }

  void recompute_mask() {
    mask.assign(dims.voxels(), 0);
    for (const auto& c : chan)
      for (std::size_t i = 0; i < c.size(); ++i)
        if (c[i] != 0.0) mask[i] = 1;
  }

  void validate() const {
    for (const auto& c : chan)
      check(c.size() == dims.voxels(), ErrorKind::dimension, "channel size does not match dims");
    check(mask.size() == dims.voxels(), ErrorKind::dimension, "mask size does not match dims");
    for (double s : spacing) check(s > 0.0, ErrorKind::parameter, "spacing must be positive");
    if (!labels.empty()) {
      check(labels.size() == dims.voxels(), ErrorKind::dimension, "label size does not match dims");
      for (std::uint8_t l : labels)
        check(l <= 3, ErrorKind::contract, "label value out of range 0..3");
    }
  }
};

/// Per-voxel class ids in {0=background, 1=necrotic core, 2=edema, 3=enhancing}.
struct LabelVolume {
  Dims dims;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> labels;

  void validate() const {
    check(labels.size() == dims.voxels(), ErrorKind::dimension, "label size does not match dims");
    for (std::uint8_t l : labels)
      check(l <= 3, ErrorKind::contract, "label value out of range 0..3");
  }
};

/// Tight bounding box of the brain mask. Returns the cropped volume and the
/// box origin in the source grid; labels and mask travel with the crop.
inline std::pair<MultiModalVolume, Offset3> crop_to_brain(const MultiModalVolume& v) {
  std::size_t z0 = v.dims.d, y0 = v.dims.h, x0 = v.dims.w, z1 = 0, y1 = 0, x1 = 0;
  bool any = false;
  for (std::size_t z = 0; z < v.dims.d; ++z)
    for (std::size_t y = 0; y < v.dims.h; ++y)
      for (std::size_t x = 0; x < v.dims.w; ++x)
        if (v.mask[v.dims.index(z, y, x)]) {
          any = true;
          z0 = std::min(z0, z); z1 = std::max(z1, z);
          y0 = std::min(y0, y); y1 = std::max(y1, y);
          x0 = std::min(x0, x); x1 = std::max(x1, x);
        }
  check(any, ErrorKind::empty_brain, "volume has no nonzero voxel in any channel");

  MultiModalVolume out;
  out.dims = {z1 - z0 + 1, y1 - y0 + 1, x1 - x0 + 1};
  out.spacing = v.spacing;
  for (auto& c : out.chan) c.assign(out.dims.voxels(), 0.0);
  out.mask.assign(out.dims.voxels(), 0);
  if (!v.labels.empty()) out.labels.assign(out.dims.voxels(), 0);

  for (std::size_t z = 0; z < out.dims.d; ++z)
    for (std::size_t y = 0; y < out.dims.h; ++y)
      for (std::size_t x = 0; x < out.dims.w; ++x) {
        std::size_t si = v.dims.index(z + z0, y + y0, x + x0);
        std::size_t di = out.dims.index(z, y, x);
        for (std::size_t c = 0; c < kNumModalities; ++c) out.chan[c][di] = v.chan[c][si];
        out.mask[di] = v.mask[si];
        if (!v.labels.empty()) out.labels[di] = v.labels[si];
      }
  return {std::move(out), Offset3{z0, y0, x0}};
}

/// Divides each channel by its own p-th percentile of nonzero intensities,
/// then clips to [0, 1].
inline MultiModalVolume rescale_percentile(const MultiModalVolume& v, double p = 99.5) {
  MultiModalVolume out = v;
  for (std::size_t c = 0; c < kNumModalities; ++c) {
    std::vector<double> nz;
    nz.reserve(v.chan[c].size());
    for (double x : v.chan[c])
      if (x != 0.0) nz.push_back(x);
    check(!nz.empty(), ErrorKind::degenerate_channel,
          "channel " + std::to_string(c) + " has no nonzero voxel");
    double pct = percentile(std::move(nz), p);
    check(pct != 0.0, ErrorKind::degenerate_channel,
          "channel " + std::to_string(c) + " percentile is zero");
    for (double& x : out.chan[c]) x = std::clamp(x / pct, 0.0, 1.0);
  }
  return out;
}

/// Mean and population stddev of one channel over the brain mask.
inline std::pair<double, double> mask_stats(const MultiModalVolume& v, std::size_t c) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.mask.size(); ++i)
    if (v.mask[i]) {
      sum += v.chan[c][i];
      ++n;
    }
  if (n == 0) return {0.0, 0.0};
  double mean = sum / double(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < v.mask.size(); ++i)
    if (v.mask[i]) ss += (v.chan[c][i] - mean) * (v.chan[c][i] - mean);
  return {mean, std::sqrt(ss / double(n))};
}

/// Zero-mean unit-variance per channel over the brain mask. Background voxels
/// stay untouched (they are zero in every channel by mask construction). A
/// constant channel maps to all-zero over the mask.
inline MultiModalVolume znormalize(const MultiModalVolume& v) {
  MultiModalVolume out = v;
  for (std::size_t c = 0; c < kNumModalities; ++c) {
    auto [mean, stddev] = mask_stats(v, c);
    for (std::size_t i = 0; i < v.mask.size(); ++i)
      if (v.mask[i]) out.chan[c][i] = stddev < 1e-12 ? 0.0 : (v.chan[c][i] - mean) / stddev;
  }
  return out;
}

/// Centers the volume in a zero-padded target grid. Returns the placement
/// offset for inverse mapping.
inline std::pair<MultiModalVolume, Offset3> pad_to_shape(const MultiModalVolume& v, Dims target) {
  check(target.d >= v.dims.d && target.h >= v.dims.h && target.w >= v.dims.w,
        ErrorKind::dimension, "pad target smaller than current shape");
  Offset3 off{(target.d - v.dims.d) / 2, (target.h - v.dims.h) / 2, (target.w - v.dims.w) / 2};

  MultiModalVolume out;
  out.dims = target;
  out.spacing = v.spacing;
  for (auto& c : out.chan) c.assign(target.voxels(), 0.0);
  out.mask.assign(target.voxels(), 0);
  if (!v.labels.empty()) out.labels.assign(target.voxels(), 0);

  for (std::size_t z = 0; z < v.dims.d; ++z)
    for (std::size_t y = 0; y < v.dims.h; ++y)
      for (std::size_t x = 0; x < v.dims.w; ++x) {
        std::size_t si = v.dims.index(z, y, x);
        std::size_t di = out.dims.index(z + off.z, y + off.y, x + off.x);
        for (std::size_t c = 0; c < kNumModalities; ++c) out.chan[c][di] = v.chan[c][si];
        out.mask[di] = v.mask[si];
        if (!v.labels.empty()) out.labels[di] = v.labels[si];
      }
  return {std::move(out), off};
}

// ---------------------------------------------------------------------------
// VXG1 container: "VXG1" magic, dims as 3 little-endian u32 (d,h,w), channel
// count u32 (4 or 0 for label-only files), f32 voxel data channel-major, then
// a u8 has-labels flag and the u8 label grid when present. Spacing is not
// stored; loaders assume 1 mm isotropic.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  check(bool(is), ErrorKind::io, "truncated file: " + path);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline void write_magic(std::ostream& os, const char magic[4]) { os.write(magic, 4); }

inline void read_magic(std::istream& is, const char expect[4], const std::string& path) {
  char got[4] = {};
  is.read(got, 4);
  check(bool(is) && std::memcmp(got, expect, 4) == 0, ErrorKind::io,
        "bad magic in " + path + " (expected " + std::string(expect, 4) + ")");
}

}  // namespace detail

inline void save_vxg(const std::string& path, const MultiModalVolume& v) {
  v.validate();
  std::ofstream os(path, std::ios::binary);
  check(bool(os), ErrorKind::io, "cannot open for writing: " + path);
  detail::write_magic(os, "VXG1");
  detail::put_u32(os, std::uint32_t(v.dims.d));
  detail::put_u32(os, std::uint32_t(v.dims.h));
  detail::put_u32(os, std::uint32_t(v.dims.w));
  detail::put_u32(os, std::uint32_t(kNumModalities));
  std::vector<float> buf(v.dims.voxels());
  for (std::size_t c = 0; c < kNumModalities; ++c) {
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = float(v.chan[c][i]);
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
  }
  os.put(v.labels.empty() ? 0 : 1);
  if (!v.labels.empty())
    os.write(reinterpret_cast<const char*>(v.labels.data()), std::streamsize(v.labels.size()));
  check(bool(os), ErrorKind::io, "write failed: " + path);
}

inline void save_vxg(const std::string& path, const LabelVolume& lv) {
  lv.validate();
  std::ofstream os(path, std::ios::binary);
  check(bool(os), ErrorKind::io, "cannot open for writing: " + path);
  detail::write_magic(os, "VXG1");
  detail::put_u32(os, std::uint32_t(lv.dims.d));
  detail::put_u32(os, std::uint32_t(lv.dims.h));
  detail::put_u32(os, std::uint32_t(lv.dims.w));
  detail::put_u32(os, 0);
  os.put(1);
  os.write(reinterpret_cast<const char*>(lv.labels.data()), std::streamsize(lv.labels.size()));
  check(bool(os), ErrorKind::io, "write failed: " + path);
}

/// Loads a full 4-channel volume. Rejects label-only files.
inline MultiModalVolume load_vxg(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), ErrorKind::io, "cannot open: " + path);
  detail::read_magic(is, "VXG1", path);
  MultiModalVolume v;
  v.dims.d = detail::get_u32(is, path);
  v.dims.h = detail::get_u32(is, path);
  v.dims.w = detail::get_u32(is, path);
  std::uint32_t channels = detail::get_u32(is, path);
  check(channels == kNumModalities, ErrorKind::io,
        path + " holds " + std::to_string(channels) + " channels, expected 4");
  std::vector<float> buf(v.dims.voxels());
  for (std::size_t c = 0; c < kNumModalities; ++c) {
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
    check(bool(is), ErrorKind::io, "truncated file: " + path);
    v.chan[c].assign(buf.begin(), buf.end());
  }
  int flag = is.get();
  check(flag == 0 || flag == 1, ErrorKind::io, "truncated file: " + path);
  if (flag == 1) {
    v.labels.resize(v.dims.voxels());
    is.read(reinterpret_cast<char*>(v.labels.data()), std::streamsize(v.labels.size()));
    check(bool(is), ErrorKind::io, "truncated file: " + path);
  }
  v.recompute_mask();
  v.validate();
  return v;
}

/// Loads the label grid from either a label-only or a full volume file.
inline LabelVolume load_vxg_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), ErrorKind::io, "cannot open: " + path);
  detail::read_magic(is, "VXG1", path);
  LabelVolume lv;
  lv.dims.d = detail::get_u32(is, path);
  lv.dims.h = detail::get_u32(is, path);
  lv.dims.w = detail::get_u32(is, path);
  std::uint32_t channels = detail::get_u32(is, path);
  if (channels > 0)
    is.seekg(std::streamoff(channels) * std::streamoff(lv.dims.voxels()) * 4, std::ios::cur);
  int flag = is.get();
  check(flag == 1, ErrorKind::io, path + " has no label block");
  lv.labels.resize(lv.dims.voxels());
  is.read(reinterpret_cast<char*>(lv.labels.data()), std::streamsize(lv.labels.size()));
  check(bool(is), ErrorKind::io, "truncated file: " + path);
  lv.validate();
  return lv;
}

}  // namespace voxelgat
