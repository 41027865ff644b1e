#pragma once

#include <array>
#include <deque>

#include "voxelgat/volume.hpp"

namespace voxelgat {

inline constexpr std::uint32_t kNoCluster = 0xFFFFFFFFu;

/// Clustering knobs. lambda <= 0 and tol < 0 are "derive from the others":
/// lambda = cbrt(D·H·W / k), tol = 1e-4·lambda.
struct SlicParams {
  std::size_t k = 15000;
  double omega = 0.2;
  double lambda = 0.0;
  std::size_t max_iters = 10;
  double tol = -1.0;
  bool enforce_connectivity = true;

  SlicParams resolved(Dims dims) const {
    SlicParams p = *this;
    check(p.k >= 1, ErrorKind::parameter, "cluster count must be at least 1");
    check(p.omega > 0.0, ErrorKind::parameter, "omega must be positive");
    check(p.max_iters >= 1, ErrorKind::parameter, "iteration cap must be at least 1");
    if (p.lambda <= 0.0) p.lambda = std::cbrt(double(dims.voxels()) / double(p.k));
    if (p.tol < 0.0) p.tol = 1e-4 * p.lambda;
    return p;
  }
};

/// Cluster ids per voxel (kNoCluster outside the brain mask), per-cluster
/// centroid 7-vectors (four mean intensities then mean x, y, z) and sizes.
struct SupervoxelLabeling {
  Dims dims;
  std::vector<std::uint32_t> assignment;
  std::vector<std::array<double, 7>> centroids;
  std::vector<std::size_t> sizes;

  std::size_t cluster_count() const { return centroids.size(); }

  void validate() const {
    check(assignment.size() == dims.voxels(), ErrorKind::dimension,
          "assignment size does not match dims");
    check(centroids.size() == sizes.size(), ErrorKind::contract,
          "centroid and size tables differ in length");
    for (std::uint32_t a : assignment)
      check(a == kNoCluster || a < centroids.size(), ErrorKind::contract,
            "assignment refers to a missing cluster");
  }
};

/// Per-iteration objective values (sum of squared combined distances, the
/// quantity Lloyd descent minimizes) sampled after each half-step.
struct SlicTrace {
  std::vector<double> energy_post_assign;
  std::vector<double> energy_post_update;
  std::vector<double> movement;
  std::size_t iterations = 0;
};

inline std::array<double, 7> voxel_vector(const MultiModalVolume& v, std::size_t z, std::size_t y,
                                          std::size_t x) {
  return {v.at(0, z, y, x), v.at(1, z, y, x), v.at(2, z, y, x), v.at(3, z, y, x),
          double(x),        double(y),        double(z)};
}

/// Combined intensity+spatial distance: sqrt(D_i^2 + (omega/lambda)^2 * D_xyz^2)
/// with D_i over the four intensities and D_xyz over voxel coordinates.
inline double slic_distance(const std::array<double, 7>& p, const std::array<double, 7>& q,
                            const SlicParams& params) {
  check(params.lambda > 0.0, ErrorKind::parameter, "lambda must be resolved and positive");
  double di2 = 0.0, dx2 = 0.0;
  for (std::size_t i = 0; i < 4; ++i) di2 += (p[i] - q[i]) * (p[i] - q[i]);
  for (std::size_t i = 4; i < 7; ++i) dx2 += (p[i] - q[i]) * (p[i] - q[i]);
  double r = params.omega / params.lambda;
  return std::sqrt(di2 + r * r * dx2);
}

namespace detail {

inline double slic_distance2(const std::array<double, 7>& p, const std::array<double, 7>& q,
                             double ratio2) {
  double di2 = 0.0, dx2 = 0.0;
  for (std::size_t i = 0; i < 4; ++i) di2 += (p[i] - q[i]) * (p[i] - q[i]);
  for (std::size_t i = 4; i < 7; ++i) dx2 += (p[i] - q[i]) * (p[i] - q[i]);
  return di2 + ratio2 * dx2;
}

}  // namespace detail

/// Descent objective: sum over assigned in-brain voxels of the squared
/// combined distance to their centroid.
inline double slic_energy(const SupervoxelLabeling& s, const MultiModalVolume& v,
                          const SlicParams& params) {
  double r = params.omega / params.lambda;
  double ratio2 = r * r;
  double total = 0.0;
  for (std::size_t z = 0; z < v.dims.d; ++z)
    for (std::size_t y = 0; y < v.dims.h; ++y)
      for (std::size_t x = 0; x < v.dims.w; ++x) {
        std::uint32_t c = s.assignment[v.dims.index(z, y, x)];
        if (c == kNoCluster) continue;
        total += detail::slic_distance2(voxel_vector(v, z, y, x), s.centroids[c], ratio2);
      }
  return total;
}

/// Member means recomputed from the assignment. Empty clusters keep their
/// previous centroid; their size drops to zero.
inline void recompute_stats(SupervoxelLabeling& s, const MultiModalVolume& v) {
  std::size_t n = s.centroids.size();
  std::vector<std::array<double, 7>> sums(n, {0, 0, 0, 0, 0, 0, 0});
  s.sizes.assign(n, 0);
  for (std::size_t z = 0; z < v.dims.d; ++z)
    for (std::size_t y = 0; y < v.dims.h; ++y)
      for (std::size_t x = 0; x < v.dims.w; ++x) {
        std::uint32_t c = s.assignment[v.dims.index(z, y, x)];
        if (c == kNoCluster) continue;
        auto vec = voxel_vector(v, z, y, x);
        for (std::size_t i = 0; i < 7; ++i) sums[c][i] += vec[i];
        s.sizes[c]++;
      }
  for (std::size_t c = 0; c < n; ++c)
    if (s.sizes[c] > 0)
      for (std::size_t i = 0; i < 7; ++i) s.centroids[c][i] = sums[c][i] / double(s.sizes[c]);
}

namespace detail {

/// Drops empty clusters and renumbers the rest in id order.
inline void compact_clusters(SupervoxelLabeling& s) {
  std::vector<std::uint32_t> remap(s.centroids.size(), kNoCluster);
  std::vector<std::array<double, 7>> centroids;
  std::vector<std::size_t> sizes;
  for (std::size_t c = 0; c < s.centroids.size(); ++c)
    if (s.sizes[c] > 0) {
      remap[c] = std::uint32_t(centroids.size());
      centroids.push_back(s.centroids[c]);
      sizes.push_back(s.sizes[c]);
    }
  for (std::uint32_t& a : s.assignment)
    if (a != kNoCluster) a = remap[a];
  s.centroids = std::move(centroids);
  s.sizes = std::move(sizes);
}

/// Grid seed positions along one axis: cell centers at spacing lambda, at
/// least one per axis.
inline std::vector<std::size_t> seed_axis(std::size_t dim, double lambda) {
  std::vector<std::size_t> pos;
  for (double c = lambda / 2.0; c < double(dim); c += lambda) pos.push_back(std::size_t(c));
  if (pos.empty()) pos.push_back(dim / 2);
  return pos;
}

/// Intensity gradient magnitude: sum of absolute central differences over the
/// four channels, indices clamped at volume borders.
inline double intensity_gradient(const MultiModalVolume& v, std::size_t z, std::size_t y,
                                 std::size_t x) {
  auto clamped = [&](std::size_t c, std::size_t zz, std::size_t yy, std::size_t xx) {
    return v.at(c, std::min(zz, v.dims.d - 1), std::min(yy, v.dims.h - 1),
                std::min(xx, v.dims.w - 1));
  };
  double g = 0.0;
  for (std::size_t c = 0; c < kNumModalities; ++c) {
    g += std::fabs(clamped(c, z + 1, y, x) - clamped(c, z == 0 ? 0 : z - 1, y, x));
    g += std::fabs(clamped(c, z, y + 1, x) - clamped(c, z, y == 0 ? 0 : y - 1, x));
    g += std::fabs(clamped(c, z, y, x + 1) - clamped(c, z, y, x == 0 ? 0 : x - 1));
  }
  return g;
}

/// Splits every cluster into 6-connected components and relabels so each
/// cluster is one component: the largest component keeps the id, smaller ones
/// merge into the largest adjacent already-settled cluster, and components
/// with no settled neighbor become new clusters.
inline void enforce_connectivity_pass(SupervoxelLabeling& s) {
  const Dims dims = s.dims;
  const std::size_t n_vox = dims.voxels();
  std::vector<std::uint32_t> comp_of(n_vox, kNoCluster);
  struct Component {
    std::uint32_t cluster;
    std::vector<std::size_t> voxels;
  };
  std::vector<Component> comps;

  const std::ptrdiff_t dz = std::ptrdiff_t(dims.h * dims.w);
  const std::ptrdiff_t dy = std::ptrdiff_t(dims.w);
  auto neighbors = [&](std::size_t i, auto&& fn) {
    std::size_t z = i / (dims.h * dims.w), rem = i % (dims.h * dims.w);
    std::size_t y = rem / dims.w, x = rem % dims.w;
    if (z > 0) fn(i - std::size_t(dz));
    if (z + 1 < dims.d) fn(i + std::size_t(dz));
    if (y > 0) fn(i - std::size_t(dy));
    if (y + 1 < dims.h) fn(i + std::size_t(dy));
    if (x > 0) fn(i - 1);
    if (x + 1 < dims.w) fn(i + 1);
  };

  for (std::size_t i = 0; i < n_vox; ++i) {
    if (s.assignment[i] == kNoCluster || comp_of[i] != kNoCluster) continue;
    std::uint32_t cid = std::uint32_t(comps.size());
    comps.push_back({s.assignment[i], {}});
    std::deque<std::size_t> queue{i};
    comp_of[i] = cid;
    while (!queue.empty()) {
      std::size_t cur = queue.front();
      queue.pop_front();
      comps[cid].voxels.push_back(cur);
      neighbors(cur, [&](std::size_t nb) {
        if (comp_of[nb] == kNoCluster && s.assignment[nb] == s.assignment[i]) {
          comp_of[nb] = cid;
          queue.push_back(nb);
        }
      });
    }
  }

  // Largest component per cluster keeps the id (ties -> first in scan order).
  std::vector<std::uint32_t> keeper(s.centroids.size(), kNoCluster);
  for (std::uint32_t cid = 0; cid < comps.size(); ++cid) {
    std::uint32_t cl = comps[cid].cluster;
    if (keeper[cl] == kNoCluster || comps[cid].voxels.size() > comps[keeper[cl]].voxels.size())
      keeper[cl] = cid;
  }

  std::vector<std::uint8_t> settled_voxel(n_vox, 0);
  std::vector<std::uint8_t> comp_settled(comps.size(), 0);
  for (std::size_t cl = 0; cl < keeper.size(); ++cl)
    if (keeper[cl] != kNoCluster) {
      comp_settled[keeper[cl]] = 1;
      for (std::size_t vx : comps[keeper[cl]].voxels) settled_voxel[vx] = 1;
    }

  // Orphans join the largest settled cluster they touch; repeat until no
  // orphan can reach one. Processing order is fixed by component discovery.
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::uint32_t cid = 0; cid < comps.size(); ++cid) {
      if (comp_settled[cid]) continue;
      std::uint32_t best = kNoCluster;
      for (std::size_t vx : comps[cid].voxels)
        neighbors(vx, [&](std::size_t nb) {
          if (!settled_voxel[nb]) return;
          std::uint32_t cand = s.assignment[nb];
          if (best == kNoCluster || s.sizes[cand] > s.sizes[best] ||
              (s.sizes[cand] == s.sizes[best] && cand < best))
            best = cand;
        });
      if (best == kNoCluster) continue;
      for (std::size_t vx : comps[cid].voxels) {
        s.sizes[s.assignment[vx]]--;
        s.assignment[vx] = best;
        settled_voxel[vx] = 1;
      }
      s.sizes[best] += comps[cid].voxels.size();
      comp_settled[cid] = 1;
      progress = true;
    }
  }

  // Unreachable orphans (no settled neighbor at fixpoint) become new clusters.
  for (std::uint32_t cid = 0; cid < comps.size(); ++cid) {
    if (comp_settled[cid]) continue;
    std::uint32_t fresh = std::uint32_t(s.centroids.size());
    s.centroids.push_back({});
    s.sizes.push_back(0);
    for (std::size_t vx : comps[cid].voxels) {
      s.sizes[s.assignment[vx]]--;
      s.assignment[vx] = fresh;
      settled_voxel[vx] = 1;
    }
    s.sizes[fresh] = comps[cid].voxels.size();
    comp_settled[cid] = 1;
  }
}

}  // namespace detail

/// Localized K-means over the combined distance. Seeds start on a regular
/// grid, nudged to the lowest-gradient voxel of their 3x3x3 neighborhood;
/// each pass reassigns voxels within a 2*lambda window of every centroid
/// (keeping the current assignment unless strictly closer, so the objective
/// never rises), then moves centroids to member means.
inline SupervoxelLabeling run_slic(const MultiModalVolume& v, const SlicParams& raw_params,
                                   SlicTrace* trace = nullptr) {
  const SlicParams params = raw_params.resolved(v.dims);
  const Dims dims = v.dims;
  const std::size_t brain = v.mask_count();
  check(params.k <= brain, ErrorKind::parameter,
        "cluster count " + std::to_string(params.k) + " exceeds in-brain voxel count " +
            std::to_string(brain));

  SupervoxelLabeling s;
  s.dims = dims;
  s.assignment.assign(dims.voxels(), kNoCluster);

  // Seeding: grid cell centers, perturbed within 3x3x3 to the flattest spot.
  for (std::size_t sz : detail::seed_axis(dims.d, params.lambda))
    for (std::size_t sy : detail::seed_axis(dims.h, params.lambda))
      for (std::size_t sx : detail::seed_axis(dims.w, params.lambda)) {
        double best_grad = 0.0;
        std::size_t bz = 0, by = 0, bx = 0;
        bool found = false;
        for (std::size_t z = sz == 0 ? 0 : sz - 1; z <= std::min(sz + 1, dims.d - 1); ++z)
          for (std::size_t y = sy == 0 ? 0 : sy - 1; y <= std::min(sy + 1, dims.h - 1); ++y)
            for (std::size_t x = sx == 0 ? 0 : sx - 1; x <= std::min(sx + 1, dims.w - 1); ++x) {
              if (!v.mask[dims.index(z, y, x)]) continue;
              double g = detail::intensity_gradient(v, z, y, x);
              if (!found || g < best_grad) {
                found = true;
                best_grad = g;
                bz = z; by = y; bx = x;
              }
            }
        if (found) {
          s.centroids.push_back(voxel_vector(v, bz, by, bx));
          s.sizes.push_back(0);
        }
      }
  check(!s.centroids.empty(), ErrorKind::empty_brain, "no seed landed inside the brain mask");

  const double ratio = params.omega / params.lambda;
  const double ratio2 = ratio * ratio;
  const std::ptrdiff_t win = std::ptrdiff_t(std::ceil(2.0 * params.lambda));

  std::vector<double> best_d2(dims.voxels());
  for (std::size_t iter = 0; iter < params.max_iters; ++iter) {
    // Refresh each voxel's distance to its current centroid (centroids moved
    // since the last pass), then let nearby centroids bid for improvements.
    for (std::size_t z = 0; z < dims.d; ++z)
      for (std::size_t y = 0; y < dims.h; ++y)
        for (std::size_t x = 0; x < dims.w; ++x) {
          std::size_t i = dims.index(z, y, x);
          std::uint32_t c = s.assignment[i];
          best_d2[i] = c == kNoCluster
                           ? std::numeric_limits<double>::infinity()
                           : detail::slic_distance2(voxel_vector(v, z, y, x), s.centroids[c], ratio2);
        }

    for (std::uint32_t c = 0; c < s.centroids.size(); ++c) {
      const auto& cen = s.centroids[c];
      std::size_t z0 = std::size_t(std::max<std::ptrdiff_t>(0, std::ptrdiff_t(cen[6]) - win));
      std::size_t z1 = std::size_t(std::min<std::ptrdiff_t>(std::ptrdiff_t(dims.d) - 1, std::ptrdiff_t(cen[6]) + win));
      std::size_t y0 = std::size_t(std::max<std::ptrdiff_t>(0, std::ptrdiff_t(cen[5]) - win));
      std::size_t y1 = std::size_t(std::min<std::ptrdiff_t>(std::ptrdiff_t(dims.h) - 1, std::ptrdiff_t(cen[5]) + win));
      std::size_t x0 = std::size_t(std::max<std::ptrdiff_t>(0, std::ptrdiff_t(cen[4]) - win));
      std::size_t x1 = std::size_t(std::min<std::ptrdiff_t>(std::ptrdiff_t(dims.w) - 1, std::ptrdiff_t(cen[4]) + win));
      for (std::size_t z = z0; z <= z1; ++z)
        for (std::size_t y = y0; y <= y1; ++y)
          for (std::size_t x = x0; x <= x1; ++x) {
            std::size_t i = dims.index(z, y, x);
            if (!v.mask[i]) continue;
            double d2 = detail::slic_distance2(voxel_vector(v, z, y, x), cen, ratio2);
            if (d2 < best_d2[i]) {
              best_d2[i] = d2;
              s.assignment[i] = c;
            }
          }
    }

    // Any in-brain voxel left outside every window: nearest centroid overall.
    for (std::size_t z = 0; z < dims.d; ++z)
      for (std::size_t y = 0; y < dims.h; ++y)
        for (std::size_t x = 0; x < dims.w; ++x) {
          std::size_t i = dims.index(z, y, x);
          if (!v.mask[i] || s.assignment[i] != kNoCluster) continue;
          auto vec = voxel_vector(v, z, y, x);
          for (std::uint32_t c = 0; c < s.centroids.size(); ++c) {
            double d2 = detail::slic_distance2(vec, s.centroids[c], ratio2);
            if (d2 < best_d2[i]) {
              best_d2[i] = d2;
              s.assignment[i] = c;
            }
          }
        }

    if (trace) trace->energy_post_assign.push_back(slic_energy(s, v, params));

    std::vector<std::array<double, 7>> old = s.centroids;
    recompute_stats(s, v);
    double movement = 0.0;
    for (std::size_t c = 0; c < s.centroids.size(); ++c)
      if (s.sizes[c] > 0) movement += slic_distance(old[c], s.centroids[c], params);

    if (trace) {
      trace->energy_post_update.push_back(slic_energy(s, v, params));
      trace->movement.push_back(movement);
      trace->iterations = iter + 1;
    }
    if (movement < params.tol) break;
  }

  if (params.enforce_connectivity) {
    detail::enforce_connectivity_pass(s);
    recompute_stats(s, v);
  }
  detail::compact_clusters(s);
  s.validate();
  return s;
}

/// Drops clusters that are empty or whose mean intensity is zero in every
/// modality (background clusters), then renumbers.
inline SupervoxelLabeling remove_outliers(const SupervoxelLabeling& s, const MultiModalVolume& v) {
  SupervoxelLabeling out = s;
  recompute_stats(out, v);
  for (std::size_t c = 0; c < out.centroids.size(); ++c) {
    if (out.sizes[c] == 0) continue;
    bool all_zero = true;
    for (std::size_t i = 0; i < 4; ++i) all_zero = all_zero && out.centroids[c][i] == 0.0;
    if (all_zero) {
      for (std::uint32_t& a : out.assignment)
        if (a == std::uint32_t(c)) a = kNoCluster;
      out.sizes[c] = 0;
    }
  }
  detail::compact_clusters(out);
  check(!out.centroids.empty(), ErrorKind::empty_graph, "every cluster was removed as background");
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// SVX1 cache: "SVX1" magic, dims as 3 u32, cluster count u32, u32 assignment
// grid (kNoCluster sentinel outside the brain), f64 centroid table n x 7.
// Sizes are recomputed on load.

inline void save_svx(const std::string& path, const SupervoxelLabeling& s) {
  s.validate();
  std::ofstream os(path, std::ios::binary);
  check(bool(os), ErrorKind::io, "cannot open for writing: " + path);
  detail::write_magic(os, "SVX1");
  detail::put_u32(os, std::uint32_t(s.dims.d));
  detail::put_u32(os, std::uint32_t(s.dims.h));
  detail::put_u32(os, std::uint32_t(s.dims.w));
  detail::put_u32(os, std::uint32_t(s.centroids.size()));
  os.write(reinterpret_cast<const char*>(s.assignment.data()),
           std::streamsize(s.assignment.size() * 4));
  os.write(reinterpret_cast<const char*>(s.centroids.data()),
           std::streamsize(s.centroids.size() * 7 * 8));
  check(bool(os), ErrorKind::io, "write failed: " + path);
}

inline SupervoxelLabeling load_svx(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), ErrorKind::io, "cannot open: " + path);
  detail::read_magic(is, "SVX1", path);
  SupervoxelLabeling s;
  s.dims.d = detail::get_u32(is, path);
  s.dims.h = detail::get_u32(is, path);
  s.dims.w = detail::get_u32(is, path);
  std::uint32_t count = detail::get_u32(is, path);
  s.assignment.resize(s.dims.voxels());
  is.read(reinterpret_cast<char*>(s.assignment.data()), std::streamsize(s.assignment.size() * 4));
  s.centroids.resize(count);
  is.read(reinterpret_cast<char*>(s.centroids.data()), std::streamsize(count * 7 * 8));
  check(bool(is), ErrorKind::io, "truncated file: " + path);
  s.sizes.assign(count, 0);
  for (std::uint32_t a : s.assignment) {
    check(a == kNoCluster || a < count, ErrorKind::io, "corrupt assignment in " + path);
    if (a != kNoCluster) s.sizes[a]++;
  }
  s.validate();
  return s;
}

}  // namespace voxelgat
