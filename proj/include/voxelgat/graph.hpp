#pragma once

#include <set>

#include "voxelgat/supervoxel.hpp"

namespace voxelgat {

inline constexpr std::size_t kFeatureWidth = 20;
inline constexpr std::array<double, 5> kFeaturePercentiles{10.0, 25.0, 50.0, 75.0, 90.0};
inline constexpr std::size_t kNumClasses = 4;

/// Region adjacency graph: one node per supervoxel. Feature rows are
/// modality-major (five percentiles for T1, then T1CE, T2, FLAIR). Edges are
/// undirected, stored once with a < b, no self-pairs.
struct Rag {
  std::size_t n = 0;
  std::vector<double> features;  // n x kFeatureWidth, row-major
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::vector<std::uint8_t> labels;  // empty when ground truth is absent
  std::vector<std::uint32_t> node_to_cluster;

  void validate() const {
    check(features.size() == n * kFeatureWidth, ErrorKind::dimension,
          "feature matrix size does not match node count");
    check(node_to_cluster.size() == n, ErrorKind::dimension,
          "node-to-cluster map length does not match node count");
    for (auto [a, b] : edges) {
      check(a < b, ErrorKind::contract, "edge pair not stored as a < b");
      check(b < n, ErrorKind::contract, "edge endpoint out of range");
    }
    std::set<std::pair<std::uint32_t, std::uint32_t>> dedup(edges.begin(), edges.end());
    check(dedup.size() == edges.size(), ErrorKind::contract, "duplicate undirected edge");
    if (!labels.empty()) {
      check(labels.size() == n, ErrorKind::dimension, "label count does not match node count");
      for (std::uint8_t l : labels) check(l < kNumClasses, ErrorKind::contract, "label out of range");
    }
  }
};

/// Per-node percentile features of member-voxel intensities.
inline std::vector<double> extract_features(const SupervoxelLabeling& s,
                                            const MultiModalVolume& v) {
  check(s.dims == v.dims, ErrorKind::dimension, "labeling and volume shapes differ");
  std::size_t n = s.cluster_count();
  std::vector<std::array<std::vector<double>, kNumModalities>> member(n);
  for (std::size_t z = 0; z < v.dims.d; ++z)
    for (std::size_t y = 0; y < v.dims.h; ++y)
      for (std::size_t x = 0; x < v.dims.w; ++x) {
        std::uint32_t c = s.assignment[v.dims.index(z, y, x)];
        if (c == kNoCluster) continue;
        for (std::size_t m = 0; m < kNumModalities; ++m)
          member[c][m].push_back(v.at(m, z, y, x));
      }

  std::vector<double> features(n * kFeatureWidth);
  for (std::size_t c = 0; c < n; ++c) {
    check(!member[c][0].empty(), ErrorKind::contract,
          "cluster " + std::to_string(c) + " has no member voxels");
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      std::vector<double> sorted = member[c][m];
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t pi = 0; pi < kFeaturePercentiles.size(); ++pi)
        features[c * kFeatureWidth + m * kFeaturePercentiles.size() + pi] =
            percentile_of_sorted(sorted, kFeaturePercentiles[pi]);
    }
  }
  return features;
}

/// Face adjacency (6-connectivity) between clusters, each pair once.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> build_adjacency(
    const SupervoxelLabeling& s) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
  auto note = [&](std::uint32_t a, std::uint32_t b) {
    if (a == kNoCluster || b == kNoCluster || a == b) return;
    pairs.emplace(std::min(a, b), std::max(a, b));
  };
  for (std::size_t z = 0; z < s.dims.d; ++z)
    for (std::size_t y = 0; y < s.dims.h; ++y)
      for (std::size_t x = 0; x < s.dims.w; ++x) {
        std::uint32_t here = s.assignment[s.dims.index(z, y, x)];
        if (z + 1 < s.dims.d) note(here, s.assignment[s.dims.index(z + 1, y, x)]);
        if (y + 1 < s.dims.h) note(here, s.assignment[s.dims.index(z, y + 1, x)]);
        if (x + 1 < s.dims.w) note(here, s.assignment[s.dims.index(z, y, x + 1)]);
      }
  return {pairs.begin(), pairs.end()};
}

/// Majority class over member voxels; ties go to the smaller class id.
inline std::vector<std::uint8_t> attach_labels(const SupervoxelLabeling& s,
                                               const LabelVolume& gt) {
  check(s.dims == gt.dims, ErrorKind::dimension, "labeling and ground-truth shapes differ");
  std::size_t n = s.cluster_count();
  std::vector<std::array<std::size_t, kNumClasses>> votes(n, {0, 0, 0, 0});
  for (std::size_t i = 0; i < s.assignment.size(); ++i) {
    std::uint32_t c = s.assignment[i];
    if (c != kNoCluster) votes[c][gt.labels[i]]++;
  }
  std::vector<std::uint8_t> labels(n, 0);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t best = 0;
    for (std::size_t cls = 1; cls < kNumClasses; ++cls)
      if (votes[c][cls] > votes[c][best]) best = cls;
    labels[c] = std::uint8_t(best);
  }
  return labels;
}

/// Paints every member voxel with its node's class; voxels outside all
/// clusters become background.
inline LabelVolume project_to_voxels(const SupervoxelLabeling& s,
                                     const std::vector<std::uint8_t>& node_labels,
                                     std::array<double, 3> spacing = {1.0, 1.0, 1.0}) {
  check(node_labels.size() == s.cluster_count(), ErrorKind::contract,
        "node label count does not match cluster count");
  LabelVolume lv;
  lv.dims = s.dims;
  lv.spacing = spacing;
  lv.labels.assign(s.dims.voxels(), 0);
  for (std::size_t i = 0; i < s.assignment.size(); ++i)
    if (s.assignment[i] != kNoCluster) lv.labels[i] = node_labels[s.assignment[i]];
  lv.validate();
  return lv;
}

/// Full graph build; attaches node labels when the volume carries them.
inline Rag build_rag(const SupervoxelLabeling& s, const MultiModalVolume& v) {
  Rag g;
  g.n = s.cluster_count();
  g.features = extract_features(s, v);
  g.edges = build_adjacency(s);
  g.node_to_cluster.resize(g.n);
  for (std::size_t i = 0; i < g.n; ++i) g.node_to_cluster[i] = std::uint32_t(i);
  if (!v.labels.empty()) {
    LabelVolume gt;
    gt.dims = v.dims;
    gt.spacing = v.spacing;
    gt.labels = v.labels;
    g.labels = attach_labels(s, gt);
  }
  g.validate();
  return g;
}

inline std::array<std::size_t, kNumClasses> class_node_counts(
    const std::vector<std::uint8_t>& labels) {
  std::array<std::size_t, kNumClasses> counts{0, 0, 0, 0};
  for (std::uint8_t l : labels) counts[l]++;
  return counts;
}

/// Node-count-per-class table, one row per class, optional predicted column.
inline void write_node_counts_csv(const std::string& path,
                                  const std::array<std::size_t, kNumClasses>& actual,
                                  const std::array<std::size_t, kNumClasses>* predicted = nullptr) {
  std::ofstream os(path);
  check(bool(os), ErrorKind::io, "cannot open for writing: " + path);
  os << (predicted ? "class,actual_nodes,predicted_nodes\n" : "class,actual_nodes\n");
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    os << c << ',' << actual[c];
    if (predicted) os << ',' << (*predicted)[c];
    os << '\n';
  }
  check(bool(os), ErrorKind::io, "write failed: " + path);
}

// ---------------------------------------------------------------------------
// RAG1 cache: "RAG1" magic, u32 node count, u32 feature width, u32 edge
// count, u8 has-labels flag, f64 feature matrix, u32 edge pairs (a then b),
// u8 labels when flagged, u32 node-to-cluster map.

inline void save_rag(const std::string& path, const Rag& g) {
  g.validate();
  std::ofstream os(path, std::ios::binary);
  check(bool(os), ErrorKind::io, "cannot open for writing: " + path);
  detail::write_magic(os, "RAG1");
  detail::put_u32(os, std::uint32_t(g.n));
  detail::put_u32(os, std::uint32_t(kFeatureWidth));
  detail::put_u32(os, std::uint32_t(g.edges.size()));
  os.put(g.labels.empty() ? 0 : 1);
  os.write(reinterpret_cast<const char*>(g.features.data()),
           std::streamsize(g.features.size() * 8));
  for (auto [a, b] : g.edges) {
    detail::put_u32(os, a);
    detail::put_u32(os, b);
  }
  if (!g.labels.empty())
    os.write(reinterpret_cast<const char*>(g.labels.data()), std::streamsize(g.labels.size()));
  os.write(reinterpret_cast<const char*>(g.node_to_cluster.data()),
           std::streamsize(g.node_to_cluster.size() * 4));
  check(bool(os), ErrorKind::io, "write failed: " + path);
}

inline Rag load_rag(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), ErrorKind::io, "cannot open: " + path);
  detail::read_magic(is, "RAG1", path);
  Rag g;
  g.n = detail::get_u32(is, path);
  std::uint32_t width = detail::get_u32(is, path);
  check(width == kFeatureWidth, ErrorKind::io,
        path + " has feature width " + std::to_string(width) + ", expected 20");
  std::uint32_t n_edges = detail::get_u32(is, path);
  int flag = is.get();
  check(flag == 0 || flag == 1, ErrorKind::io, "truncated file: " + path);
  g.features.resize(g.n * kFeatureWidth);
  is.read(reinterpret_cast<char*>(g.features.data()), std::streamsize(g.features.size() * 8));
  g.edges.resize(n_edges);
  for (auto& [a, b] : g.edges) {
    a = detail::get_u32(is, path);
    b = detail::get_u32(is, path);
  }
  if (flag == 1) {
    g.labels.resize(g.n);
    is.read(reinterpret_cast<char*>(g.labels.data()), std::streamsize(g.labels.size()));
  }
  g.node_to_cluster.resize(g.n);
  is.read(reinterpret_cast<char*>(g.node_to_cluster.data()),
          std::streamsize(g.node_to_cluster.size() * 4));
  check(bool(is), ErrorKind::io, "truncated file: " + path);
  g.validate();
  return g;
}

}  // namespace voxelgat
