#pragma once

#include <numeric>
#include <optional>

#include <json.hpp>

#include "voxelgat/volume.hpp"

namespace voxelgat {

/// Composite tumor regions evaluated against the background+3-class labeling:
/// whole tumor {1,2,3}, tumor core {1,3}, enhancing tumor {3}.
struct RegionSpec {
  const char* name;
  std::array<bool, 4> member;
};

inline constexpr std::array<RegionSpec, 3> kRegions{{
    {"WT", {false, true, true, true}},
    {"TC", {false, true, false, true}},
    {"ET", {false, false, false, true}},
}};

struct OverlapCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

inline OverlapCounts overlap(const std::vector<std::uint8_t>& pred,
                             const std::vector<std::uint8_t>& gt) {
  check(pred.size() == gt.size(), ErrorKind::contract, "mask sizes differ");
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && gt[i]) ++c.tp;
    else if (pred[i]) ++c.fp;
    else if (gt[i]) ++c.fn;
  }
  return c;
}

/// 2TP / (2TP + FP + FN). Both masks empty scores 1, exactly one empty 0.
inline double dice(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
  OverlapCounts c = overlap(pred, gt);
  if (c.tp + c.fp + c.fn == 0) return 1.0;
  return 2.0 * double(c.tp) / double(2 * c.tp + c.fp + c.fn);
}

namespace detail {

inline constexpr double kEdtBig = 1e30;

/// Lower-envelope pass: d[i] = min_j (pos[i]-pos[j])^2 + f[j]. Sample
/// positions carry the physical spacing, so squared distances come out in mm².
inline void dt1d(const std::vector<double>& f, const std::vector<double>& pos,
                 std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  int n = int(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -1e300;
  z[1] = 1e300;
  for (int q = 1; q < n; ++q) {
    double s = 0.0;
    while (true) {
      int p = v[k];
      s = ((f[q] + pos[q] * pos[q]) - (f[p] + pos[p] * pos[p])) / (2.0 * pos[q] - 2.0 * pos[p]);
      if (s <= z[k]) --k;
      else break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = 1e300;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < pos[q]) ++k;
    int p = v[k];
    d[q] = (pos[q] - pos[p]) * (pos[q] - pos[p]) + f[p];
  }
}

/// Exact anisotropic squared Euclidean distance transform: for every voxel the
/// squared mm distance to the nearest set voxel, kEdtBig-ish if the mask is empty.
inline std::vector<double> edt2(const std::vector<std::uint8_t>& mask, Dims dims,
                                std::array<double, 3> spacing) {
  std::vector<double> g(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) g[i] = mask[i] ? 0.0 : kEdtBig;

  std::size_t longest = std::max({dims.d, dims.h, dims.w});
  std::vector<double> f(longest), pos(longest), d(longest), z(longest + 1);
  std::vector<int> v(longest);

  auto pass = [&](std::size_t n, double step, auto index) {
    f.resize(n);
    pos.resize(n);
    d.resize(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = double(i) * step;
    for (std::size_t i = 0; i < n; ++i) f[i] = g[index(i)];
    dt1d(f, pos, d, v, z);
    for (std::size_t i = 0; i < n; ++i) g[index(i)] = d[i];
  };

  for (std::size_t zz = 0; zz < dims.d; ++zz)
    for (std::size_t y = 0; y < dims.h; ++y)
      pass(dims.w, spacing[2], [&](std::size_t x) { return dims.index(zz, y, x); });
  for (std::size_t zz = 0; zz < dims.d; ++zz)
    for (std::size_t x = 0; x < dims.w; ++x)
      pass(dims.h, spacing[1], [&](std::size_t y) { return dims.index(zz, y, x); });
  for (std::size_t y = 0; y < dims.h; ++y)
    for (std::size_t x = 0; x < dims.w; ++x)
      pass(dims.d, spacing[0], [&](std::size_t zz) { return dims.index(zz, y, x); });
  return g;
}

}  // namespace detail

/// 95th percentile (linear interpolation) of the concatenated bidirectional
/// voxel-to-nearest-voxel distances in mm. Both masks empty gives 0; exactly
/// one empty has no defined distance and returns nullopt.
inline std::optional<double> hd95(const std::vector<std::uint8_t>& pred,
                                  const std::vector<std::uint8_t>& gt, Dims dims,
                                  std::array<double, 3> spacing) {
  check(pred.size() == gt.size() && pred.size() == dims.voxels(), ErrorKind::contract,
        "mask sizes do not match the grid");
  std::size_t np = 0, ng = 0;
  for (std::uint8_t v : pred) np += v != 0;
  for (std::uint8_t v : gt) ng += v != 0;
  if (np == 0 && ng == 0) return 0.0;
  if (np == 0 || ng == 0) return std::nullopt;

  std::vector<double> to_gt = detail::edt2(gt, dims, spacing);
  std::vector<double> to_pred = detail::edt2(pred, dims, spacing);
  std::vector<double> dists;
  dists.reserve(np + ng);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i]) dists.push_back(std::sqrt(to_gt[i]));
    if (gt[i]) dists.push_back(std::sqrt(to_pred[i]));
  }
  std::sort(dists.begin(), dists.end());
  return percentile_of_sorted(dists, 95.0);
}

struct RegionResult {
  double dice = 0.0;
  std::optional<double> hd95;
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
  std::string id;
  std::array<RegionResult, 3> regions;  // kRegions order: WT, TC, ET
  std::array<std::size_t, 4> nodes_actual{0, 0, 0, 0};
  std::array<std::size_t, 4> nodes_predicted{0, 0, 0, 0};
  bool has_node_counts = false;
};

/// Per-region overlap and distance metrics of a predicted labeling against
/// ground truth on the same grid. Node counts are left for the caller, which
/// knows the graph the prediction came from.
inline EvalReport evaluate(const LabelVolume& pred, const LabelVolume& gt) {
  check(pred.dims == gt.dims, ErrorKind::contract, "label grids differ in shape");
  for (std::size_t a = 0; a < 3; ++a)
    check(pred.spacing[a] == gt.spacing[a], ErrorKind::contract, "label grids differ in spacing");
  pred.validate();
  gt.validate();

  EvalReport report;
  std::size_t n = gt.dims.voxels();
  std::vector<std::uint8_t> pm(n), gm(n);
  for (std::size_t r = 0; r < kRegions.size(); ++r) {
    const RegionSpec& spec = kRegions[r];
    for (std::size_t i = 0; i < n; ++i) {
      pm[i] = spec.member[pred.labels[i]] ? 1 : 0;
      gm[i] = spec.member[gt.labels[i]] ? 1 : 0;
    }
    OverlapCounts c = overlap(pm, gm);
    RegionResult& res = report.regions[r];
    res.tp = c.tp;
    res.fp = c.fp;
    res.fn = c.fn;
    res.dice = dice(pm, gm);
    res.hd95 = hd95(pm, gm, gt.dims, gt.spacing);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Serialization. JSON for single reports (undefined hd95 -> null), one CSV
// row per volume, and a mean/median aggregate across volumes.

inline nlohmann::json eval_report_json(const EvalReport& r) {
  nlohmann::json j;
  j["id"] = r.id;
  for (std::size_t i = 0; i < kRegions.size(); ++i) {
    nlohmann::json rj;
    rj["dice"] = r.regions[i].dice;
    if (r.regions[i].hd95) rj["hd95"] = *r.regions[i].hd95;
    else rj["hd95"] = nullptr;
    rj["tp"] = r.regions[i].tp;
    rj["fp"] = r.regions[i].fp;
    rj["fn"] = r.regions[i].fn;
    j["regions"][kRegions[i].name] = rj;
  }
  if (r.has_node_counts) {
    j["nodes_actual"] = r.nodes_actual;
    j["nodes_predicted"] = r.nodes_predicted;
  }
  return j;
}

inline void save_eval_json(const std::string& path, const EvalReport& r) {
  std::ofstream os(path);
  check(bool(os), ErrorKind::io, "cannot open for writing: " + path);
  os << eval_report_json(r).dump(2) << "\n";
  check(bool(os), ErrorKind::io, "write failed: " + path);
}

inline EvalReport load_eval_json(const std::string& path) {
  std::ifstream is(path);
  check(bool(is), ErrorKind::io, "cannot open: " + path);
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  check(!j.is_discarded(), ErrorKind::io, "not a valid evaluation report: " + path);
  EvalReport r;
  try {
    r.id = j.value("id", "");
    for (std::size_t i = 0; i < kRegions.size(); ++i) {
      const nlohmann::json& rj = j.at("regions").at(kRegions[i].name);
      r.regions[i].dice = rj.at("dice").get<double>();
      if (!rj.at("hd95").is_null()) r.regions[i].hd95 = rj.at("hd95").get<double>();
      r.regions[i].tp = rj.at("tp").get<std::size_t>();
      r.regions[i].fp = rj.at("fp").get<std::size_t>();
      r.regions[i].fn = rj.at("fn").get<std::size_t>();
    }
    if (j.contains("nodes_actual")) {
      r.has_node_counts = true;
      for (std::size_t c = 0; c < 4; ++c) {
        r.nodes_actual[c] = j.at("nodes_actual").at(c).get<std::size_t>();
        r.nodes_predicted[c] = j.at("nodes_predicted").at(c).get<std::size_t>();
      }
    }
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::io, "evaluation report missing fields: " + path);
  }
  return r;
}

inline std::string eval_csv_header() {
  return "id,dice_wt,hd95_wt,dice_tc,hd95_tc,dice_et,hd95_et";
}

/// Undefined hd95 renders as an empty field.
inline std::string eval_csv_row(const EvalReport& r) {
  char buf[64];
  std::string row = r.id;
  for (const RegionResult& res : r.regions) {
    std::snprintf(buf, sizeof buf, ",%.17g", res.dice);
    row += buf;
    if (res.hd95) {
      std::snprintf(buf, sizeof buf, ",%.17g", *res.hd95);
      row += buf;
    } else {
      row += ",";
    }
  }
  return row;
}

struct RegionAggregate {
  double mean_dice = 0.0, median_dice = 0.0;
  double mean_hd95 = 0.0, median_hd95 = 0.0;
  std::size_t hd95_defined = 0;
};

struct Aggregate {
  std::array<RegionAggregate, 3> regions;
  std::size_t count = 0;
};

inline Aggregate aggregate(const std::vector<EvalReport>& reports) {
  check(!reports.empty(), ErrorKind::contract, "nothing to aggregate");
  Aggregate agg;
  agg.count = reports.size();
  for (std::size_t i = 0; i < kRegions.size(); ++i) {
    std::vector<double> dices, hds;
    for (const EvalReport& r : reports) {
      dices.push_back(r.regions[i].dice);
      if (r.regions[i].hd95) hds.push_back(*r.regions[i].hd95);
    }
    RegionAggregate& ra = agg.regions[i];
    ra.mean_dice = std::accumulate(dices.begin(), dices.end(), 0.0) / double(dices.size());
    ra.median_dice = percentile(dices, 50.0);
    ra.hd95_defined = hds.size();
    if (!hds.empty()) {
      ra.mean_hd95 = std::accumulate(hds.begin(), hds.end(), 0.0) / double(hds.size());
      ra.median_hd95 = percentile(hds, 50.0);
    }
  }
  return agg;
}

}  // namespace voxelgat
