#pragma once

// NIfTI-1 single-file (.nii / .nii.gz) reader and label writer. Little-endian
// files only; detached .hdr/.img pairs and byte-swapped files are rejected.
// The 348-byte source header is kept verbatim so predictions can be written
// back into the source geometry (pixdim, qform/sform untouched).

#include <zlib.h>

#include <array>
#include <cstring>
#include <string>
#include <vector>

#include "voxelgat/volume.hpp"

namespace voxelgat {

inline constexpr std::size_t kNiftiHeaderSize = 348;

struct NiftiImage {
  Dims dims;                                  // d=nz, h=ny, w=nx; x fastest in data
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // z, y, x in mm
  std::vector<double> data;
  std::array<unsigned char, kNiftiHeaderSize> header{};
};

namespace detail {

template <class T>
T nifti_get(const unsigned char* h, std::size_t off) {
  T v;
  std::memcpy(&v, h + off, sizeof(T));
  return v;
}

template <class T>
void nifti_set(unsigned char* h, std::size_t off, T v) {
  std::memcpy(h + off, &v, sizeof(T));
}

struct GzCloser {
  gzFile f;
  ~GzCloser() {
    if (f) gzclose(f);
  }
};

inline void gz_read_exact(gzFile f, void* buf, std::size_t bytes, const std::string& path) {
  std::size_t done = 0;
  auto* p = static_cast<unsigned char*>(buf);
  while (done < bytes) {
    unsigned chunk = unsigned(std::min<std::size_t>(bytes - done, 1u << 28));
    int got = gzread(f, p + done, chunk);
    check(got > 0, ErrorKind::io, "truncated file: " + path);
    done += std::size_t(got);
  }
}

template <class Src>
void widen_to_f64(const std::vector<unsigned char>& raw, std::vector<double>& out) {
  const Src* src = reinterpret_cast<const Src*>(raw.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = double(src[i]);
}

}  // namespace detail

inline NiftiImage load_nifti(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  check(f != nullptr, ErrorKind::io, "cannot open: " + path);
  detail::GzCloser closer{f};

  NiftiImage img;
  detail::gz_read_exact(f, img.header.data(), kNiftiHeaderSize, path);
  const unsigned char* h = img.header.data();
  check(detail::nifti_get<std::int32_t>(h, 0) == 348, ErrorKind::io,
        "not a little-endian NIfTI-1 file: " + path);
  check(std::memcmp(h + 344, "n+1", 3) == 0, ErrorKind::io,
        "unsupported NIfTI variant (detached or unknown magic): " + path);

  std::int16_t ndim = detail::nifti_get<std::int16_t>(h, 40);
  check(ndim >= 3 && ndim <= 7, ErrorKind::io, "unsupported dimensionality: " + path);
  auto dim_at = [&](int i) { return detail::nifti_get<std::int16_t>(h, 40 + 2 * std::size_t(i)); };
  for (int i = 4; i <= ndim; ++i)
    check(dim_at(i) <= 1, ErrorKind::io, "multi-volume file not supported: " + path);
  std::int16_t nx = dim_at(1), ny = dim_at(2), nz = dim_at(3);
  check(nx > 0 && ny > 0 && nz > 0, ErrorKind::io, "non-positive dimension: " + path);
  img.dims = {std::size_t(nz), std::size_t(ny), std::size_t(nx)};

  auto pix_at = [&](int i) { return detail::nifti_get<float>(h, 76 + 4 * std::size_t(i)); };
  img.spacing = {pix_at(3) > 0 ? double(pix_at(3)) : 1.0, pix_at(2) > 0 ? double(pix_at(2)) : 1.0,
                 pix_at(1) > 0 ? double(pix_at(1)) : 1.0};

  std::int16_t datatype = detail::nifti_get<std::int16_t>(h, 70);
  float vox_offset = detail::nifti_get<float>(h, 108);
  check(vox_offset >= 348.0f, ErrorKind::io, "bad data offset: " + path);
  float slope = detail::nifti_get<float>(h, 112);
  float inter = detail::nifti_get<float>(h, 116);

  std::size_t skip = std::size_t(vox_offset) - kNiftiHeaderSize;
  if (skip > 0) {
    std::vector<unsigned char> ext(skip);
    detail::gz_read_exact(f, ext.data(), skip, path);
  }

  std::size_t n = img.dims.voxels();
  std::size_t elem = 0;
  switch (datatype) {
    case 2: elem = 1; break;    // u8
    case 4: elem = 2; break;    // i16
    case 8: elem = 4; break;    // i32
    case 16: elem = 4; break;   // f32
    case 64: elem = 8; break;   // f64
    case 512: elem = 2; break;  // u16
    default:
      fail(ErrorKind::io, "unsupported NIfTI datatype " + std::to_string(datatype) + ": " + path);
  }
  std::vector<unsigned char> raw(n * elem);
  detail::gz_read_exact(f, raw.data(), raw.size(), path);

  img.data.resize(n);
  switch (datatype) {
    case 2: detail::widen_to_f64<std::uint8_t>(raw, img.data); break;
    case 4: detail::widen_to_f64<std::int16_t>(raw, img.data); break;
    case 8: detail::widen_to_f64<std::int32_t>(raw, img.data); break;
    case 16: detail::widen_to_f64<float>(raw, img.data); break;
    case 64: detail::widen_to_f64<double>(raw, img.data); break;
    case 512: detail::widen_to_f64<std::uint16_t>(raw, img.data); break;
  }
  if (slope != 0.0f && !(slope == 1.0f && inter == 0.0f))
    for (double& v : img.data) v = v * double(slope) + double(inter);
  return img;
}

/// Writes a u8 label grid. When `ref` is given its geometry fields (pixdim,
/// qform/sform) are preserved and its grid size must match; otherwise a
/// minimal header is synthesized from the label volume's spacing. `note`
/// lands in descrip (truncated to 79 chars).
inline void save_nifti_labels(const std::string& path, const LabelVolume& lv,
                              const std::array<unsigned char, kNiftiHeaderSize>* ref = nullptr,
                              const std::string& note = "") {
  lv.validate();
  std::array<unsigned char, kNiftiHeaderSize> h{};
  if (ref) {
    h = *ref;
    auto dim_at = [&](int i) { return detail::nifti_get<std::int16_t>(h.data(), 40 + 2 * std::size_t(i)); };
    check(std::size_t(dim_at(1)) == lv.dims.w && std::size_t(dim_at(2)) == lv.dims.h &&
              std::size_t(dim_at(3)) == lv.dims.d,
          ErrorKind::dimension, "reference geometry does not match label grid");
  } else {
    detail::nifti_set<std::int32_t>(h.data(), 0, 348);
    h[38] = 'r';
    detail::nifti_set<float>(h.data(), 76, 1.0f);  // qfac
    detail::nifti_set<float>(h.data(), 80, float(lv.spacing[2]));
    detail::nifti_set<float>(h.data(), 84, float(lv.spacing[1]));
    detail::nifti_set<float>(h.data(), 88, float(lv.spacing[0]));
    std::memcpy(h.data() + 344, "n+1\0", 4);
  }
  detail::nifti_set<std::int16_t>(h.data(), 40, 3);
  detail::nifti_set<std::int16_t>(h.data(), 42, std::int16_t(lv.dims.w));
  detail::nifti_set<std::int16_t>(h.data(), 44, std::int16_t(lv.dims.h));
  detail::nifti_set<std::int16_t>(h.data(), 46, std::int16_t(lv.dims.d));
  for (int i = 4; i <= 7; ++i) detail::nifti_set<std::int16_t>(h.data(), 40 + 2 * std::size_t(i), 1);
  detail::nifti_set<std::int16_t>(h.data(), 70, 2);  // u8
  detail::nifti_set<std::int16_t>(h.data(), 72, 8);
  detail::nifti_set<float>(h.data(), 108, 352.0f);
  detail::nifti_set<float>(h.data(), 112, 1.0f);
  detail::nifti_set<float>(h.data(), 116, 0.0f);
  std::memset(h.data() + 148, 0, 80);
  std::memcpy(h.data() + 148, note.data(), std::min<std::size_t>(note.size(), 79));

  const unsigned char ext_flag[4] = {0, 0, 0, 0};
  if (path.ends_with(".gz")) {
    gzFile f = gzopen(path.c_str(), "wb");
    check(f != nullptr, ErrorKind::io, "cannot open for writing: " + path);
    detail::GzCloser closer{f};
    bool ok = gzwrite(f, h.data(), unsigned(h.size())) == int(h.size()) &&
              gzwrite(f, ext_flag, 4) == 4 &&
              gzwrite(f, lv.labels.data(), unsigned(lv.labels.size())) == int(lv.labels.size());
    check(ok, ErrorKind::io, "write failed: " + path);
  } else {
    std::ofstream os(path, std::ios::binary);
    check(bool(os), ErrorKind::io, "cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(h.data()), std::streamsize(h.size()));
    os.write(reinterpret_cast<const char*>(ext_flag), 4);
    os.write(reinterpret_cast<const char*>(lv.labels.data()), std::streamsize(lv.labels.size()));
    check(bool(os), ErrorKind::io, "write failed: " + path);
  }
}

/// Assembles the four modality files (and optional segmentation) into one
/// volume. Segmentation value 4 (enhancing tumor in source datasets) is
/// remapped to the dense id 3.
struct NiftiStudy {
  MultiModalVolume volume;
  std::array<unsigned char, kNiftiHeaderSize> ref_header{};
};

inline NiftiStudy load_nifti_study(const std::string& t1, const std::string& t1ce,
                                   const std::string& t2, const std::string& flair,
                                   const std::string& seg = "") {
  const std::string paths[kNumModalities] = {t1, t1ce, t2, flair};
  NiftiStudy study;
  for (std::size_t c = 0; c < kNumModalities; ++c) {
    NiftiImage img = load_nifti(paths[c]);
    if (c == 0) {
      study.volume.dims = img.dims;
      study.volume.spacing = img.spacing;
      study.ref_header = img.header;
    } else {
      check(img.dims == study.volume.dims, ErrorKind::dimension,
            "modality grids differ: " + paths[c]);
    }
    study.volume.chan[c] = std::move(img.data);
  }
  study.volume.mask.assign(study.volume.dims.voxels(), 0);
  study.volume.recompute_mask();

  if (!seg.empty()) {
    NiftiImage s = load_nifti(seg);
    check(s.dims == study.volume.dims, ErrorKind::dimension, "segmentation grid differs: " + seg);
    study.volume.labels.resize(s.data.size());
    for (std::size_t i = 0; i < s.data.size(); ++i) {
      double v = s.data[i];
      check(v == 0.0 || v == 1.0 || v == 2.0 || v == 3.0 || v == 4.0, ErrorKind::io,
            "unexpected label value " + std::to_string(v) + " in " + seg);
      study.volume.labels[i] = v == 4.0 ? 3 : std::uint8_t(v);
    }
  }
  study.volume.validate();
  return study;
}

}  // namespace voxelgat
