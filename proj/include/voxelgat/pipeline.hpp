#pragma once

#include <cctype>
#include <cstring>
#include <filesystem>

#include "voxelgat/metrics.hpp"
#include "voxelgat/nifti.hpp"
#include "voxelgat/phantom.hpp"
#include "voxelgat/png.hpp"
#include "voxelgat/supervoxel.hpp"
#include "voxelgat/training.hpp"

namespace voxelgat {

enum class Stage { phantom, preprocess, build_graph, train, predict, evaluate, report };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::phantom: return "phantom";
    case Stage::preprocess: return "preprocess";
    case Stage::build_graph: return "build-graph";
    case Stage::train: return "train";
    case Stage::predict: return "predict";
    case Stage::evaluate: return "evaluate";
    case Stage::report: return "report";
  }
  return "?";
}

struct PipelineConfig {
  std::vector<Stage> stages;
  std::vector<std::string> inputs;
  std::string out_dir = ".";
  std::string checkpoint;  // model path; defaults to <out_dir>/model.gatc
  std::string gt_path;     // evaluate: ground-truth labels when not embedded upstream
  PhantomSpec phantom;
  double rescale_pct = 99.5;
  SlicParams slic;
  GatConfig arch;
  TrainConfig train_cfg;
  bool overlay = false;
  bool deterministic = false;  // reserved: every stage already runs single-threaded
};

namespace detail {

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

/// Basename without extension or a trailing artifact suffix, so downstream
/// artifacts of "phantom_000_pre.vxg" share the stem "phantom_000".
inline std::string stem_of(const std::string& path) {
  std::string s = std::filesystem::path(path).filename().string();
  for (const char* ext : {".gz", ".nii", ".vxg", ".svx", ".rag", ".json"}) {
    std::size_t n = std::strlen(ext);
    if (s.size() > n && s.compare(s.size() - n, n, ext) == 0) s.resize(s.size() - n);
  }
  for (const char* suffix : {"_pre", "_pred", "_seg", "_eval"}) {
    std::size_t n = std::strlen(suffix);
    if (s.size() > n && s.compare(s.size() - n, n, suffix) == 0) s.resize(s.size() - n);
  }
  return s;
}

inline bool ends_with(const std::string& s, const std::string& tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

}  // namespace detail

/// Ground-truth labels from either a VXG file or a NIfTI segmentation
/// (values rounded, label 4 remapped to 3 per the study convention).
inline LabelVolume load_labels_any(const std::string& path) {
  if (detail::ends_with(path, ".vxg")) return load_vxg_labels(path);
  NiftiImage img = load_nifti(path);
  LabelVolume lv;
  lv.dims = img.dims;
  lv.spacing = img.spacing;
  lv.labels.resize(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    double r = std::round(img.data[i]);
    check(r >= 0.0 && (r <= 3.0 || r == 4.0), ErrorKind::io,
          "unexpected segmentation value " + std::to_string(img.data[i]) + " in " + path);
    lv.labels[i] = std::uint8_t(r == 4.0 ? 3.0 : r);
  }
  lv.validate();
  return lv;
}

// ---------------------------------------------------------------------------
// Stages. Each takes explicit inputs, writes its artifacts under out_dir, and
// returns the paths it produced.

/// Writes phantom_<idx>.vxg (four modalities + labels) and a label-only
/// phantom_<idx>_seg.vxg per volume.
inline std::vector<std::string> stage_phantom(const PhantomSpec& spec,
                                              const std::string& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < spec.count; ++i) {
    MultiModalVolume v = make_phantom(spec, i);
    char name[64];
    std::snprintf(name, sizeof name, "phantom_%03zu", i);
    std::string path = detail::join_path(out_dir, std::string(name) + ".vxg");
    save_vxg(path, v);
    LabelVolume seg;
    seg.dims = v.dims;
    seg.spacing = v.spacing;
    seg.labels = v.labels;
    save_vxg(detail::join_path(out_dir, std::string(name) + "_seg.vxg"), seg);
    paths.push_back(path);
  }
  return paths;
}

/// Crop to the brain's bounding box, rescale each modality by its high
/// percentile, then z-normalize over the brain mask.
inline MultiModalVolume preprocess_volume(const MultiModalVolume& input, double pct) {
  auto [cropped, offset] = crop_to_brain(input);
  (void)offset;
  MultiModalVolume scaled = rescale_percentile(cropped, pct);
  return znormalize(scaled);
}

inline std::string stage_preprocess(const std::string& input, const std::string& out_dir,
                                    double pct) {
  MultiModalVolume v = load_vxg(input);
  MultiModalVolume out = preprocess_volume(v, pct);
  std::filesystem::create_directories(out_dir);
  std::string path = detail::join_path(out_dir, detail::stem_of(input) + "_pre.vxg");
  save_vxg(path, out);
  return path;
}

inline std::string stage_preprocess_study(const std::string& t1, const std::string& t1ce,
                                          const std::string& t2, const std::string& flair,
                                          const std::string& seg, const std::string& out_dir,
                                          double pct) {
  NiftiStudy study = load_nifti_study(t1, t1ce, t2, flair, seg);
  MultiModalVolume out = preprocess_volume(study.volume, pct);
  std::filesystem::create_directories(out_dir);
  std::string path = detail::join_path(out_dir, detail::stem_of(t1) + "_pre.vxg");
  save_vxg(path, out);
  return path;
}

struct GraphArtifacts {
  std::string svx, rag;
};

/// Supervoxel decomposition plus region graph extraction from a preprocessed
/// volume. Ground-truth labels, when present, become majority-vote node labels.
inline GraphArtifacts stage_build_graph(const std::string& pre_path, const std::string& out_dir,
                                        const SlicParams& params) {
  MultiModalVolume v = load_vxg(pre_path);
  SupervoxelLabeling s = remove_outliers(run_slic(v, params), v);
  Rag g = build_rag(s, v);
  std::filesystem::create_directories(out_dir);
  std::string stem = detail::stem_of(pre_path);
  GraphArtifacts out{detail::join_path(out_dir, stem + ".svx"),
                     detail::join_path(out_dir, stem + ".rag")};
  save_svx(out.svx, s);
  save_rag(out.rag, g);
  return out;
}

struct TrainArtifacts {
  std::string checkpoint, log_csv;
  TrainLog log;
};

inline TrainArtifacts stage_train(const std::vector<std::string>& rag_paths,
                                  const std::string& out_dir, const GatConfig& arch,
                                  const TrainConfig& cfg, const std::string& checkpoint = "") {
  check(!rag_paths.empty(), ErrorKind::parameter, "no graphs given to train on");
  std::vector<Rag> data;
  for (const std::string& p : rag_paths) data.push_back(load_rag(p));
  GatModel m = make_model(arch);
  TrainArtifacts out;
  out.log = train(m, data, cfg);
  // The best parameters seen survive even an aborted run; persist them before
  // reporting the failure.
  std::filesystem::create_directories(out_dir);
  out.checkpoint = checkpoint.empty() ? detail::join_path(out_dir, "model.gatc") : checkpoint;
  out.log_csv = detail::join_path(out_dir, "train_log.csv");
  save_checkpoint(out.checkpoint, m);
  write_train_log_csv(out.log_csv, out.log);
  check(!out.log.aborted, ErrorKind::numeric, "training aborted: " + out.log.abort_reason);
  return out;
}

/// Predicted node labels of a graph under a trained model.
inline std::vector<std::uint8_t> predict_nodes(const GatModel& m, const Rag& g) {
  Tensor probs = model_forward(m, g);
  std::vector<std::uint8_t> labels(g.n);
  for (std::size_t i = 0; i < g.n; ++i) {
    std::size_t arg = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c)
      if (probs.at(i, c) > probs.at(i, arg)) arg = c;
    labels[i] = std::uint8_t(arg);
  }
  return labels;
}

/// Axial slice through the largest predicted whole-tumor cross-section,
/// FLAIR grayscale under the class colors (necrosis blue, edema red,
/// enhancing yellow).
inline void render_overlay(const MultiModalVolume& pre, const LabelVolume& pred,
                           const std::string& path) {
  check(pre.dims == pred.dims, ErrorKind::contract, "overlay grids differ");
  Dims dims = pre.dims;
  std::size_t best_z = dims.d / 2, best_count = 0;
  for (std::size_t z = 0; z < dims.d; ++z) {
    std::size_t count = 0;
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) count += pred.labels[dims.index(z, y, x)] != 0;
    if (count > best_count) {
      best_count = count;
      best_z = z;
    }
  }

  std::vector<double> flair;
  for (std::size_t i = 0; i < dims.voxels(); ++i)
    if (pre.mask[i]) flair.push_back(pre.chan[3][i]);
  double lo = flair.empty() ? 0.0 : percentile(flair, 1.0);
  double hi = flair.empty() ? 1.0 : percentile(flair, 99.0);
  if (hi <= lo) hi = lo + 1.0;

  static constexpr std::array<std::array<unsigned char, 3>, 4> kColor{{
      {0, 0, 0}, {60, 90, 255}, {255, 70, 50}, {255, 215, 50}}};
  std::vector<unsigned char> rgb(dims.h * dims.w * 3, 0);
  for (std::size_t y = 0; y < dims.h; ++y)
    for (std::size_t x = 0; x < dims.w; ++x) {
      std::size_t i = dims.index(best_z, y, x);
      double g = (pre.chan[3][i] - lo) / (hi - lo);
      unsigned char gray = (unsigned char)std::clamp(g * 255.0, 0.0, 255.0);
      unsigned char* px = &rgb[(y * dims.w + x) * 3];
      std::uint8_t label = pred.labels[i];
      for (std::size_t c = 0; c < 3; ++c)
        px[c] = label == 0 ? gray
                           : (unsigned char)(0.45 * gray + 0.55 * kColor[label][c]);
    }
  write_png_rgb(path, dims.w, dims.h, rgb);
}

struct PredictArtifacts {
  std::string pred, overlay;
};

inline PredictArtifacts stage_predict(const std::string& model_path, const std::string& rag_path,
                                      const std::string& svx_path, const std::string& out_dir,
                                      bool overlay = false, const std::string& pre_path = "") {
  GatModel m = load_checkpoint(model_path);
  Rag g = load_rag(rag_path);
  SupervoxelLabeling s = load_svx(svx_path);
  std::vector<std::uint8_t> nodes = predict_nodes(m, g);

  // Graph nodes index the compacted cluster table; route through the cluster
  // ids recorded at extraction time.
  std::vector<std::uint8_t> by_cluster(s.cluster_count(), 0);
  check(g.node_to_cluster.size() == g.n, ErrorKind::contract, "graph lacks cluster mapping");
  for (std::size_t i = 0; i < g.n; ++i) {
    check(g.node_to_cluster[i] < by_cluster.size(), ErrorKind::contract,
          "graph references a cluster outside the labeling");
    by_cluster[g.node_to_cluster[i]] = nodes[i];
  }
  LabelVolume pred = project_to_voxels(s, by_cluster);

  std::filesystem::create_directories(out_dir);
  std::string stem = detail::stem_of(rag_path);
  PredictArtifacts out;
  out.pred = detail::join_path(out_dir, stem + "_pred.vxg");
  save_vxg(out.pred, pred);
  if (overlay) {
    check(!pre_path.empty(), ErrorKind::parameter,
          "overlay export needs the preprocessed volume");
    MultiModalVolume pre = load_vxg(pre_path);
    out.overlay = detail::join_path(out_dir, "overlay_" + stem + ".png");
    render_overlay(pre, pred, out.overlay);
  }
  return out;
}

/// Voxel metrics of a prediction against ground truth; node counts attach
/// when the supervoxel labeling and graph are supplied.
inline std::string stage_evaluate(const std::string& pred_path, const std::string& gt_path,
                                  const std::string& out_dir, const std::string& svx_path = "",
                                  const std::string& rag_path = "") {
  LabelVolume pred = load_labels_any(pred_path);
  LabelVolume gt = load_labels_any(gt_path);
  EvalReport report = evaluate(pred, gt);
  report.id = detail::stem_of(pred_path);

  std::filesystem::create_directories(out_dir);
  std::string stem = detail::stem_of(pred_path);
  if (!svx_path.empty() && !rag_path.empty()) {
    SupervoxelLabeling s = load_svx(svx_path);
    Rag g = load_rag(rag_path);
    std::vector<std::uint8_t> pred_nodes = attach_labels(s, pred);
    std::vector<std::uint8_t> actual_nodes =
        g.labels.empty() ? attach_labels(s, gt) : g.labels;
    report.has_node_counts = true;
    report.nodes_actual = class_node_counts(actual_nodes);
    report.nodes_predicted = class_node_counts(pred_nodes);
    write_node_counts_csv(detail::join_path(out_dir, stem + "_nodes.csv"),
                          report.nodes_actual, &report.nodes_predicted);
  }
  std::string path = detail::join_path(out_dir, stem + "_eval.json");
  save_eval_json(path, report);
  return path;
}

inline Aggregate stage_report(const std::vector<std::string>& eval_paths,
                              const std::string& out_csv) {
  check(!eval_paths.empty(), ErrorKind::parameter, "no evaluation reports given");
  std::vector<EvalReport> reports;
  for (const std::string& p : eval_paths) reports.push_back(load_eval_json(p));
  Aggregate agg = aggregate(reports);
  if (!out_csv.empty()) {
    std::ofstream os(out_csv);
    check(bool(os), ErrorKind::io, "cannot open for writing: " + out_csv);
    os << "stat";
    for (const RegionSpec& r : kRegions) {
      std::string n = r.name;
      for (char& c : n) c = char(std::tolower(c));
      os << ",dice_" << n << ",hd95_" << n;
    }
    os << "\n";
    char buf[64];
    for (const char* stat : {"mean", "median"}) {
      os << stat;
      bool mean = std::string(stat) == "mean";
      for (const RegionAggregate& ra : agg.regions) {
        std::snprintf(buf, sizeof buf, ",%.17g", mean ? ra.mean_dice : ra.median_dice);
        os << buf;
        if (ra.hd95_defined == 0) {
          os << ",";
        } else {
          std::snprintf(buf, sizeof buf, ",%.17g", mean ? ra.mean_hd95 : ra.median_hd95);
          os << buf;
        }
      }
      os << "\n";
    }
    check(bool(os), ErrorKind::io, "write failed: " + out_csv);
  }
  return agg;
}

/// Runs the selected stages in pipeline order, flowing each stage's artifacts
/// into the next. Errors carry the failing stage's name.
inline void run_pipeline(const PipelineConfig& cfg) {
  std::vector<std::string> volumes = cfg.inputs;
  std::vector<std::string> pres, rags, svxs, preds, evals;
  std::string checkpoint =
      cfg.checkpoint.empty() ? detail::join_path(cfg.out_dir, "model.gatc") : cfg.checkpoint;

  auto has = [&](Stage s) {
    return std::find(cfg.stages.begin(), cfg.stages.end(), s) != cfg.stages.end();
  };
  auto wrap = [](Stage s, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(stage_name(s)) + ": " + e.what());
    }
  };

  // Stages consume the upstream stage's outputs when it ran, else cfg.inputs.
  if (has(Stage::phantom))
    wrap(Stage::phantom, [&] { volumes = stage_phantom(cfg.phantom, cfg.out_dir); });
  if (has(Stage::preprocess))
    wrap(Stage::preprocess, [&] {
      for (const std::string& v : volumes)
        pres.push_back(stage_preprocess(v, cfg.out_dir, cfg.rescale_pct));
    });
  else
    pres = volumes;
  if (has(Stage::build_graph))
    wrap(Stage::build_graph, [&] {
      for (const std::string& p : pres) {
        GraphArtifacts a = stage_build_graph(p, cfg.out_dir, cfg.slic);
        svxs.push_back(a.svx);
        rags.push_back(a.rag);
      }
    });
  if (has(Stage::train))
    wrap(Stage::train, [&] {
      TrainArtifacts a = stage_train(rags, cfg.out_dir, cfg.arch, cfg.train_cfg, checkpoint);
      checkpoint = a.checkpoint;
    });
  if (has(Stage::predict))
    wrap(Stage::predict, [&] {
      for (std::size_t i = 0; i < rags.size(); ++i)
        preds.push_back(stage_predict(checkpoint, rags[i], svxs[i], cfg.out_dir, cfg.overlay,
                                      pres[i])
                            .pred);
    });
  if (has(Stage::evaluate))
    wrap(Stage::evaluate, [&] {
      for (std::size_t i = 0; i < preds.size(); ++i) {
        // Ground truth rides in the preprocessed volume on the same grid.
        std::string gt = cfg.gt_path.empty() ? pres[i] : cfg.gt_path;
        evals.push_back(stage_evaluate(preds[i], gt, cfg.out_dir, svxs[i], rags[i]));
      }
    });
  if (has(Stage::report))
    wrap(Stage::report, [&] {
      stage_report(evals.empty() ? cfg.inputs : evals,
                   detail::join_path(cfg.out_dir, "report.csv"));
    });
}

}  // namespace voxelgat
