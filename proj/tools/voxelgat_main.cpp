// voxelgat: supervoxel graph segmentation pipeline driver.
//
// Each subcommand runs one pipeline stage against artifact files, so a full
// run is a shell script of stages and any stage can be rerun from its cached
// inputs. Exit codes: 0 success, 1 internal error, 2 user or config error.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "voxelgat/pipeline.hpp"

namespace vg = voxelgat;

namespace {

void check_threads_env() {
  const char* s = std::getenv("VOXELGAT_THREADS");
  if (!s) return;
  char* end = nullptr;
  long v = std::strtol(s, &end, 10);
  vg::check(end != s && *end == '\0' && v >= 1, vg::ErrorKind::config,
            std::string("VOXELGAT_THREADS must be a positive integer, got '") + s + "'");
}

/// Values from a --config JSON file fill in flags the command line left at
/// their defaults. Keys are the long flag names without the leading dashes;
/// keys for other subcommands are ignored so one file can drive a whole run.
struct JsonOverlay {
  nlohmann::json data;
  bool loaded = false;

  void load(const std::string& path) {
    if (path.empty()) return;
    std::ifstream is(path);
    vg::check(bool(is), vg::ErrorKind::io, "cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    data = nlohmann::json::parse(text, nullptr, false);
    vg::check(!data.is_discarded() && data.is_object(), vg::ErrorKind::config,
              "config is not a JSON object: " + path);
    loaded = true;
  }

  // opt == nullptr marks a key with no flag equivalent.
  template <class T>
  void put(const CLI::Option* opt, const char* key, T& target) const {
    if (!loaded || (opt && opt->count() > 0) || !data.contains(key)) return;
    try {
      target = data.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      vg::fail(vg::ErrorKind::config, std::string("config key '") + key + "' has the wrong shape");
    }
  }
};

template <class Fn>
void run_stage(vg::Stage stage, Fn&& fn) {
  try {
    check_threads_env();
    fn();
  } catch (const vg::Error& e) {
    throw vg::Error(e.kind(), std::string(vg::stage_name(stage)) + ": " + e.what());
  }
}

/// Flags shared by every subcommand.
struct Common {
  std::string config;
  std::string out_dir = ".";
  bool deterministic = false;
  CLI::Option* config_opt = nullptr;
  CLI::Option* out_opt = nullptr;

  void attach(CLI::App* sub) {
    config_opt = sub->add_option("--config", config, "JSON file mirroring the flags");
    out_opt = sub->add_option("--out", out_dir, "output directory")->capture_default_str();
    sub->add_flag("--deterministic", deterministic,
                  "single-threaded reductions (already the only mode; accepted for "
                  "interface stability)");
  }

  JsonOverlay overlay() {
    JsonOverlay j;
    j.load(config);
    j.put(out_opt, "out", out_dir);
    return j;
  }
};

vg::Dims shape_from(const std::vector<std::size_t>& shape) {
  if (shape.size() == 1) return {shape[0], shape[0], shape[0]};
  if (shape.size() == 3) return {shape[0], shape[1], shape[2]};
  vg::fail(vg::ErrorKind::parameter, "--shape takes one extent or three (d h w)");
}

void setup_phantom(CLI::App& app) {
  auto* sub = app.add_subcommand("phantom", "generate synthetic labeled volumes");
  auto common = std::make_shared<Common>();
  common->attach(sub);
  struct Vars {
    vg::PhantomSpec spec;
    std::vector<std::size_t> shape;
    CLI::Option *count, *shape_opt, *tumors, *noise, *seed;
    CLI::Option *edema_lo, *edema_hi, *core_frac, *necrosis_frac;
  };
  auto v = std::make_shared<Vars>();
  v->count = sub->add_option("--count", v->spec.count, "volumes to generate")
                 ->capture_default_str();
  v->shape_opt = sub->add_option("--shape", v->shape, "voxel extents, one value or d h w")
                     ->expected(1, 3);
  v->tumors = sub->add_option("--tumors", v->spec.tumors, "tumor systems per volume")
                  ->capture_default_str();
  v->noise = sub->add_option("--noise", v->spec.noise, "additive noise sigma")
                 ->capture_default_str();
  v->seed = sub->add_option("--seed", v->spec.seed, "generator seed")->capture_default_str();
  v->edema_lo = sub->add_option("--edema-lo", v->spec.edema_lo,
                                "min edema radius as a fraction of each axis");
  v->edema_hi = sub->add_option("--edema-hi", v->spec.edema_hi,
                                "max edema radius as a fraction of each axis");
  v->core_frac = sub->add_option("--core-frac", v->spec.core_frac,
                                 "enhancing radius over edema radius");
  v->necrosis_frac = sub->add_option("--necrosis-frac", v->spec.necrosis_frac,
                                     "necrosis radius over enhancing radius");
  sub->callback([common, v] {
    run_stage(vg::Stage::phantom, [&] {
      JsonOverlay j = common->overlay();
      j.put(v->count, "count", v->spec.count);
      j.put(v->shape_opt, "shape", v->shape);
      j.put(v->tumors, "tumors", v->spec.tumors);
      j.put(v->noise, "noise", v->spec.noise);
      j.put(v->seed, "seed", v->spec.seed);
      j.put(v->edema_lo, "edema-lo", v->spec.edema_lo);
      j.put(v->edema_hi, "edema-hi", v->spec.edema_hi);
      j.put(v->core_frac, "core-frac", v->spec.core_frac);
      j.put(v->necrosis_frac, "necrosis-frac", v->spec.necrosis_frac);
      j.put(nullptr, "intensity", v->spec.intensity);
      if (!v->shape.empty()) v->spec.shape = shape_from(v->shape);
      for (const std::string& p : vg::stage_phantom(v->spec, common->out_dir))
        std::printf("wrote %s\n", p.c_str());
    });
  });
}

void setup_preprocess(CLI::App& app) {
  auto* sub = app.add_subcommand("preprocess", "crop, rescale and z-normalize volumes");
  auto common = std::make_shared<Common>();
  common->attach(sub);
  struct Vars {
    std::vector<std::string> inputs;
    std::string t1, t1ce, t2, flair, seg;
    double pct = 99.5;
    CLI::Option *inputs_opt, *pct_opt;
  };
  auto v = std::make_shared<Vars>();
  v->inputs_opt = sub->add_option("inputs", v->inputs, "volume files (.vxg)");
  sub->add_option("--t1", v->t1, "T1 NIfTI file");
  sub->add_option("--t1ce", v->t1ce, "T1CE NIfTI file");
  sub->add_option("--t2", v->t2, "T2 NIfTI file");
  sub->add_option("--flair", v->flair, "FLAIR NIfTI file");
  sub->add_option("--seg", v->seg, "segmentation NIfTI file (optional)");
  v->pct_opt = sub->add_option("--pct", v->pct, "rescale percentile")->capture_default_str();
  sub->callback([common, v] {
    run_stage(vg::Stage::preprocess, [&] {
      JsonOverlay j = common->overlay();
      j.put(v->inputs_opt, "inputs", v->inputs);
      j.put(v->pct_opt, "pct", v->pct);
      bool study = !v->t1.empty() || !v->t1ce.empty() || !v->t2.empty() || !v->flair.empty();
      if (study) {
        vg::check(v->inputs.empty(), vg::ErrorKind::parameter,
                  "give either .vxg inputs or the four modality files, not both");
        vg::check(!v->t1.empty() && !v->t1ce.empty() && !v->t2.empty() && !v->flair.empty(),
                  vg::ErrorKind::parameter, "a study needs all of --t1 --t1ce --t2 --flair");
        std::string p = vg::stage_preprocess_study(v->t1, v->t1ce, v->t2, v->flair, v->seg,
                                                   common->out_dir, v->pct);
        std::printf("wrote %s\n", p.c_str());
        return;
      }
      vg::check(!v->inputs.empty(), vg::ErrorKind::parameter, "no input volumes given");
      for (const std::string& in : v->inputs) {
        std::string p = vg::stage_preprocess(in, common->out_dir, v->pct);
        std::printf("wrote %s\n", p.c_str());
      }
    });
  });
}

void setup_build_graph(CLI::App& app) {
  auto* sub = app.add_subcommand("build-graph",
                                 "supervoxel decomposition and region graph extraction");
  auto common = std::make_shared<Common>();
  common->attach(sub);
  struct Vars {
    std::vector<std::string> inputs;
    vg::SlicParams params;
    bool connectivity = true;
    std::uint64_t seed = 0;
    CLI::Option *inputs_opt, *k, *omega, *lambda, *iters, *tol, *conn;
  };
  auto v = std::make_shared<Vars>();
  v->inputs_opt = sub->add_option("inputs", v->inputs, "preprocessed volumes (.vxg)");
  v->k = sub->add_option("--clusters,--k", v->params.k, "target supervoxel count")
             ->capture_default_str();
  v->omega = sub->add_option("--omega", v->params.omega, "spatial distance weight")
                 ->capture_default_str();
  v->lambda = sub->add_option("--lambda", v->params.lambda,
                              "cluster spacing; 0 derives it from the cluster count");
  v->iters = sub->add_option("--iters,--max-iters", v->params.max_iters, "iteration cap")
                 ->capture_default_str();
  v->tol = sub->add_option("--tol", v->params.tol,
                           "centroid motion threshold; negative derives it from spacing");
  v->conn = sub->add_flag("--connectivity,!--no-connectivity", v->connectivity,
                          "merge disconnected cluster fragments into adjacent clusters");
  sub->add_option("--seed", v->seed, "reserved; clustering is deterministic");
  sub->callback([common, v] {
    run_stage(vg::Stage::build_graph, [&] {
      JsonOverlay j = common->overlay();
      j.put(v->inputs_opt, "inputs", v->inputs);
      j.put(v->k, "clusters", v->params.k);
      j.put(v->omega, "omega", v->params.omega);
      j.put(v->lambda, "lambda", v->params.lambda);
      j.put(v->iters, "iters", v->params.max_iters);
      j.put(v->tol, "tol", v->params.tol);
      j.put(v->conn, "connectivity", v->connectivity);
      v->params.enforce_connectivity = v->connectivity;
      vg::check(!v->inputs.empty(), vg::ErrorKind::parameter, "no input volumes given");
      for (const std::string& in : v->inputs) {
        vg::GraphArtifacts a = vg::stage_build_graph(in, common->out_dir, v->params);
        std::printf("wrote %s\nwrote %s\n", a.svx.c_str(), a.rag.c_str());
      }
    });
  });
}

void setup_train(CLI::App& app) {
  auto* sub = app.add_subcommand("train", "fit the attention model on labeled graphs");
  auto common = std::make_shared<Common>();
  common->attach(sub);
  struct Vars {
    std::vector<std::string> inputs;
    std::string model;
    vg::GatConfig arch;
    vg::TrainConfig cfg;
    std::uint64_t seed = 0;
    std::vector<double> weights;
    CLI::Option *inputs_opt, *model_opt, *hidden, *heads, *layers, *out_heads, *eta;
    CLI::Option *epochs, *batch, *lr, *decay, *val_frac, *log_every, *dropout, *weights_opt;
    CLI::Option* seed_opt;
  };
  auto v = std::make_shared<Vars>();
  v->inputs_opt = sub->add_option("inputs", v->inputs, "labeled graph files (.rag)");
  v->model_opt = sub->add_option("--model", v->model, "checkpoint path (default <out>/model.gatc)");
  v->hidden = sub->add_option("--hidden", v->arch.hidden_dim, "features per hidden head")
                  ->capture_default_str();
  v->heads = sub->add_option("--heads", v->arch.heads, "hidden attention heads")
                 ->capture_default_str();
  v->layers = sub->add_option("--layers", v->arch.hidden_layers, "hidden layers")
                  ->capture_default_str();
  v->out_heads = sub->add_option("--out-heads", v->arch.out_heads, "averaged output heads")
                     ->capture_default_str();
  v->eta = sub->add_option("--eta", v->arch.eta, "attention leak slope")->capture_default_str();
  v->epochs = sub->add_option("--epochs", v->cfg.epochs, "training epochs")
                  ->capture_default_str();
  v->batch = sub->add_option("--batch", v->cfg.graphs_per_batch, "graphs per batch")
                 ->capture_default_str();
  v->lr = sub->add_option("--lr", v->cfg.base_lr, "base learning rate")->capture_default_str();
  v->decay = sub->add_option("--decay", v->cfg.decay, "per-epoch exponential decay constant")
                 ->capture_default_str();
  v->val_frac = sub->add_option("--val-frac", v->cfg.val_fraction, "validation split fraction")
                    ->capture_default_str();
  v->log_every = sub->add_option("--log-every", v->cfg.log_every, "progress print cadence")
                     ->capture_default_str();
  v->dropout = sub->add_option("--dropout", v->cfg.feature_dropout, "input feature dropout")
                   ->capture_default_str();
  v->weights_opt = sub->add_option("--class-weights", v->weights,
                                   "loss weights for the 4 classes; omit to derive from data")
                       ->expected(4);
  v->seed_opt = sub->add_option("--seed", v->seed, "seed for init, splits and dropout")
                    ->capture_default_str();
  sub->callback([common, v] {
    run_stage(vg::Stage::train, [&] {
      JsonOverlay j = common->overlay();
      j.put(v->inputs_opt, "inputs", v->inputs);
      j.put(v->model_opt, "model", v->model);
      j.put(v->hidden, "hidden", v->arch.hidden_dim);
      j.put(v->heads, "heads", v->arch.heads);
      j.put(v->layers, "layers", v->arch.hidden_layers);
      j.put(v->out_heads, "out-heads", v->arch.out_heads);
      j.put(v->eta, "eta", v->arch.eta);
      j.put(v->epochs, "epochs", v->cfg.epochs);
      j.put(v->batch, "batch", v->cfg.graphs_per_batch);
      j.put(v->lr, "lr", v->cfg.base_lr);
      j.put(v->decay, "decay", v->cfg.decay);
      j.put(v->val_frac, "val-frac", v->cfg.val_fraction);
      j.put(v->log_every, "log-every", v->cfg.log_every);
      j.put(v->dropout, "dropout", v->cfg.feature_dropout);
      j.put(v->weights_opt, "class-weights", v->weights);
      j.put(v->seed_opt, "seed", v->seed);
      if (!v->weights.empty()) {
        vg::check(v->weights.size() == 4, vg::ErrorKind::parameter,
                  "--class-weights takes exactly 4 values");
        for (std::size_t c = 0; c < 4; ++c) v->cfg.class_weights[c] = v->weights[c];
      }
      v->arch.seed = v->cfg.seed = v->seed;
      vg::TrainArtifacts a =
          vg::stage_train(v->inputs, common->out_dir, v->arch, v->cfg, v->model);
      std::printf("wrote %s\nwrote %s\n", a.checkpoint.c_str(), a.log_csv.c_str());
    });
  });
}

void setup_predict(CLI::App& app) {
  auto* sub = app.add_subcommand("predict", "label a graph with a trained model");
  auto common = std::make_shared<Common>();
  common->attach(sub);
  struct Vars {
    std::string model, rag, svx, pre;
    bool overlay = false;
    CLI::Option *model_opt, *rag_opt, *svx_opt, *pre_opt, *overlay_opt;
  };
  auto v = std::make_shared<Vars>();
  v->model_opt = sub->add_option("--model", v->model, "checkpoint path")->required();
  v->rag_opt = sub->add_option("--rag", v->rag, "graph file")->required();
  v->svx_opt = sub->add_option("--svx", v->svx, "supervoxel labeling file")->required();
  v->pre_opt = sub->add_option("--pre", v->pre, "preprocessed volume, needed for --overlay");
  v->overlay_opt = sub->add_flag("--overlay", v->overlay, "export a PNG overlay slice");
  sub->callback([common, v] {
    run_stage(vg::Stage::predict, [&] {
      JsonOverlay j = common->overlay();
      j.put(v->pre_opt, "pre", v->pre);
      j.put(v->overlay_opt, "overlay", v->overlay);
      vg::PredictArtifacts a = vg::stage_predict(v->model, v->rag, v->svx, common->out_dir,
                                                 v->overlay, v->pre);
      std::printf("wrote %s\n", a.pred.c_str());
      if (!a.overlay.empty()) std::printf("wrote %s\n", a.overlay.c_str());
    });
  });
}

void setup_evaluate(CLI::App& app) {
  auto* sub = app.add_subcommand("evaluate", "score a prediction against ground truth");
  auto common = std::make_shared<Common>();
  common->attach(sub);
  struct Vars {
    std::string pred, gt, svx, rag;
  };
  auto v = std::make_shared<Vars>();
  sub->add_option("--pred", v->pred, "predicted labels (.vxg or NIfTI)")->required();
  sub->add_option("--gt", v->gt, "ground-truth labels (.vxg or NIfTI)")->required();
  sub->add_option("--svx", v->svx, "supervoxel labeling, adds node counts");
  sub->add_option("--rag", v->rag, "graph file, adds node counts");
  sub->callback([common, v] {
    run_stage(vg::Stage::evaluate, [&] {
      common->overlay();
      vg::check(v->svx.empty() == v->rag.empty(), vg::ErrorKind::parameter,
                "--svx and --rag go together");
      std::string path = vg::stage_evaluate(v->pred, v->gt, common->out_dir, v->svx, v->rag);
      vg::EvalReport r = vg::load_eval_json(path);
      for (std::size_t i = 0; i < vg::kRegions.size(); ++i) {
        const vg::RegionResult& reg = r.regions[i];
        if (reg.hd95)
          std::printf("%s dice %.4f hd95 %.2f\n", vg::kRegions[i].name, reg.dice, *reg.hd95);
        else
          std::printf("%s dice %.4f hd95 n/a\n", vg::kRegions[i].name, reg.dice);
      }
      std::printf("wrote %s\n", path.c_str());
    });
  });
}

void setup_report(CLI::App& app) {
  auto* sub = app.add_subcommand("report", "aggregate evaluation reports");
  auto common = std::make_shared<Common>();
  common->attach(sub);
  struct Vars {
    std::vector<std::string> inputs;
    CLI::Option* inputs_opt;
  };
  auto v = std::make_shared<Vars>();
  v->inputs_opt = sub->add_option("inputs", v->inputs, "evaluation reports (.json)");
  sub->callback([common, v] {
    run_stage(vg::Stage::report, [&] {
      JsonOverlay j = common->overlay();
      j.put(v->inputs_opt, "inputs", v->inputs);
      std::filesystem::create_directories(common->out_dir);
      std::string csv = (std::filesystem::path(common->out_dir) / "report.csv").string();
      vg::Aggregate agg = vg::stage_report(v->inputs, csv);
      std::printf("%-8s", "stat");
      for (const vg::RegionSpec& reg : vg::kRegions)
        std::printf("  dice_%-4s hd95_%-4s", reg.name, reg.name);
      std::printf("\n");
      for (bool mean : {true, false}) {
        std::printf("%-8s", mean ? "mean" : "median");
        for (const vg::RegionAggregate& ra : agg.regions) {
          std::printf("  %9.4f", mean ? ra.mean_dice : ra.median_dice);
          if (ra.hd95_defined == 0)
            std::printf(" %9s", "n/a");
          else
            std::printf(" %9.2f", mean ? ra.mean_hd95 : ra.median_hd95);
        }
        std::printf("\n");
      }
      std::printf("wrote %s\n", csv.c_str());
    });
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"supervoxel graph attention segmentation pipeline"};
  app.require_subcommand(1);
  setup_phantom(app);
  setup_preprocess(app);
  setup_build_graph(app);
  setup_train(app);
  setup_predict(app);
  setup_evaluate(app);
  setup_report(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const vg::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return vg::Error::user_facing(e.kind()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return 0;
}
