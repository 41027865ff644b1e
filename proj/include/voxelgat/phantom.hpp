#pragma once

#include "voxelgat/volume.hpp"

namespace voxelgat {

/// Synthetic study generator: a brain ellipsoid containing one or more nested
/// tumor systems (necrotic core inside an enhancing shell inside edema), with
/// per-class intensity profiles across the four modalities and additive
/// Gaussian noise. Stands in for real studies at desk scale.
struct PhantomSpec {
  Dims shape{32, 32, 32};
  std::size_t count = 1;
  std::size_t tumors = 1;
  double edema_lo = 0.18;  // edema radius range, fraction of each axis length
  double edema_hi = 0.28;
  double core_frac = 0.65;      // enhancing shell outer radius / edema radius
  double necrosis_frac = 0.50;  // necrotic core radius / enhancing radius
  // intensity[class][modality], modality order T1, T1CE, T2, FLAIR.
  std::array<std::array<double, 4>, 4> intensity{{
      {800, 780, 620, 600},     // healthy brain
      {350, 300, 900, 750},     // necrotic core
      {600, 580, 1000, 1200},   // edema, bright in FLAIR
      {700, 1400, 800, 850},    // enhancing, bright in T1CE
  }};
  double noise = 30.0;
  std::uint64_t seed = 0;

  void validate() const {
    check(shape.d >= 16 && shape.h >= 16 && shape.w >= 16, ErrorKind::parameter,
          "phantom shape must be at least 16 per axis");
    check(count >= 1 && tumors >= 1, ErrorKind::parameter, "count and tumors must be positive");
    check(edema_lo > 0.0 && edema_lo <= edema_hi, ErrorKind::parameter,
          "edema radius range is empty");
    // The drawn radius is scaled by up to 1.15 and the center offset by up to
    // 0.08 of the axis; 0.42 is the brain's semi-axis fraction.
    check(edema_hi * 1.15 + 0.08 <= 0.42, ErrorKind::parameter,
          "edema radii do not fit inside the brain for this shape");
    check(core_frac > 0.0 && core_frac < 1.0, ErrorKind::parameter,
          "core fraction must be in (0, 1)");
    check(necrosis_frac > 0.0 && necrosis_frac < 1.0, ErrorKind::parameter,
          "necrosis fraction must be in (0, 1)");
    check(noise >= 0.0, ErrorKind::parameter, "noise level must be nonnegative");
  }
};

struct Ellipsoid {
  std::array<double, 3> center;  // z, y, x voxel coordinates
  std::array<double, 3> radii;   // semi-axes in voxels

  bool contains(double z, double y, double x) const {
    double a = (z - center[0]) / radii[0];
    double b = (y - center[1]) / radii[1];
    double c = (x - center[2]) / radii[2];
    return a * a + b * b + c * c <= 1.0;
  }
};

struct TumorGeometry {
  Ellipsoid edema, enhancing, necrosis;  // concentric, shrinking radii
};

struct PhantomGeometry {
  Ellipsoid brain;
  std::vector<TumorGeometry> tumors;
};

namespace detail {

inline std::uint64_t phantom_seed(const PhantomSpec& spec, std::size_t index) {
  return spec.seed + 0x9e3779b97f4a7c15ull * (std::uint64_t(index) + 1);
}

}  // namespace detail

/// Volume `index` of the series. Deterministic: the same (spec, index) yields
/// bit-identical output. Ground-truth labels ride along in the volume.
inline MultiModalVolume make_phantom(const PhantomSpec& spec, std::size_t index,
                                     PhantomGeometry* geometry = nullptr) {
  spec.validate();
  Rng rng(detail::phantom_seed(spec, index));
  Dims dims = spec.shape;

  PhantomGeometry geo;
  geo.brain.center = {(double(dims.d) - 1.0) / 2.0, (double(dims.h) - 1.0) / 2.0,
                      (double(dims.w) - 1.0) / 2.0};
  geo.brain.radii = {0.42 * double(dims.d), 0.42 * double(dims.h), 0.42 * double(dims.w)};

  std::array<double, 3> axes{double(dims.d), double(dims.h), double(dims.w)};
  for (std::size_t t = 0; t < spec.tumors; ++t) {
    TumorGeometry tg;
    double base = rng.uniform(spec.edema_lo, spec.edema_hi);
    for (std::size_t a = 0; a < 3; ++a) {
      tg.edema.center[a] = geo.brain.center[a] + rng.uniform(-0.08, 0.08) * axes[a];
      tg.edema.radii[a] = base * rng.uniform(0.85, 1.15) * axes[a];
    }
    tg.enhancing.center = tg.necrosis.center = tg.edema.center;
    for (std::size_t a = 0; a < 3; ++a) {
      tg.enhancing.radii[a] = tg.edema.radii[a] * spec.core_frac;
      tg.necrosis.radii[a] = tg.enhancing.radii[a] * spec.necrosis_frac;
    }
    geo.tumors.push_back(tg);
  }

  MultiModalVolume v = MultiModalVolume::zeros(dims);
  v.labels.assign(dims.voxels(), 0);
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) {
        double zz = double(z), yy = double(y), xx = double(x);
        if (!geo.brain.contains(zz, yy, xx)) continue;
        std::size_t i = dims.index(z, y, x);
        // Innermost shell wins across overlapping tumors.
        std::uint8_t label = 0;
        int depth = 0;
        for (const TumorGeometry& tg : geo.tumors) {
          if (tg.necrosis.contains(zz, yy, xx) && depth < 3) {
            label = 1;
            depth = 3;
          } else if (tg.enhancing.contains(zz, yy, xx) && depth < 2) {
            label = 3;
            depth = 2;
          } else if (tg.edema.contains(zz, yy, xx) && depth < 1) {
            label = 2;
            depth = 1;
          }
        }
        v.labels[i] = label;
        for (std::size_t c = 0; c < kNumModalities; ++c) {
          double value = spec.intensity[label][c];
          if (spec.noise > 0.0) value += spec.noise * rng.normal();
          v.chan[c][i] = std::max(value, 1.0);  // keep the brain inside the support mask
        }
      }
  v.recompute_mask();
  v.validate();
  if (geometry) *geometry = geo;
  return v;
}

}  // namespace voxelgat
