// The pipeline composed by hand, one module at a time, printing what each
// step produces. Nothing touches disk; this is the in-memory API that the
// stage functions wrap with file formats.

#include <cstdio>
#include <vector>

#include "voxelgat/gat.hpp"
#include "voxelgat/graph.hpp"
#include "voxelgat/metrics.hpp"
#include "voxelgat/phantom.hpp"
#include "voxelgat/pipeline.hpp"
#include "voxelgat/supervoxel.hpp"
#include "voxelgat/training.hpp"

namespace vg = voxelgat;

int main() {
  vg::PhantomSpec spec;
  spec.shape = {32, 32, 32};
  spec.seed = 23;

  vg::SlicParams slic;
  slic.k = 300;
  slic.omega = 2.0;
  slic.max_iters = 6;

  // Studies 0..5 train the model, study 6 is scored below.
  std::vector<vg::Rag> graphs;
  std::vector<vg::SupervoxelLabeling> labelings;
  std::vector<vg::MultiModalVolume> volumes;
  for (std::size_t i = 0; i < 7; ++i) {
    vg::MultiModalVolume raw = vg::make_phantom(spec, i);
    vg::MultiModalVolume pre = vg::preprocess_volume(raw, 99.5);
    vg::SupervoxelLabeling s = vg::remove_outliers(vg::run_slic(pre, slic), pre);
    vg::Rag g = vg::build_rag(s, pre);  // phantom labels ride along into g.labels
    if (i == 0)
      std::printf("study 0: %zu clusters, %zu nodes, %zu edges, %zu features per node\n",
                  s.cluster_count(), g.n, g.edges.size(), vg::kFeatureWidth);
    graphs.push_back(std::move(g));
    labelings.push_back(std::move(s));
    volumes.push_back(std::move(pre));
  }

  vg::GatConfig arch;
  arch.hidden_dim = 16;
  arch.heads = 4;
  arch.hidden_layers = 2;
  arch.out_heads = 4;
  arch.seed = 7;
  vg::GatModel model = vg::make_model(arch);
  std::printf("model: %zu parameters\n", model.param_count());

  vg::TrainConfig cfg;
  cfg.epochs = 40;
  cfg.graphs_per_batch = 3;
  cfg.base_lr = 3e-3;
  cfg.decay = 1e-3;
  cfg.val_fraction = 0.0;
  cfg.log_every = 10;
  cfg.seed = 7;
  std::vector<vg::Rag> train_set(graphs.begin(), graphs.end() - 1);
  vg::TrainLog log = vg::train(model, train_set, cfg);
  std::printf("training: loss %.4f -> %.4f over %zu epochs\n", log.records.front().loss,
              log.records.back().loss, log.records.size());

  // Score the held-out study: node predictions painted back onto the voxel
  // grid, against the labels the phantom generator embedded.
  const vg::Rag& g = graphs.back();
  const vg::SupervoxelLabeling& s = labelings.back();
  std::vector<std::uint8_t> nodes = vg::predict_nodes(model, g);
  std::vector<std::uint8_t> by_cluster(s.cluster_count(), 0);
  for (std::size_t i = 0; i < g.n; ++i) by_cluster[g.node_to_cluster[i]] = nodes[i];
  vg::LabelVolume pred = vg::project_to_voxels(s, by_cluster);

  vg::LabelVolume gt;
  gt.dims = volumes.back().dims;
  gt.labels = volumes.back().labels;
  vg::EvalReport r = vg::evaluate(pred, gt);
  for (std::size_t i = 0; i < vg::kRegions.size(); ++i) {
    std::printf("held-out %s: dice %.4f", vg::kRegions[i].name, r.regions[i].dice);
    if (r.regions[i].hd95)
      std::printf(", hd95 %.2f mm\n", *r.regions[i].hd95);
    else
      std::printf(", hd95 n/a\n");
  }
  return 0;
}
