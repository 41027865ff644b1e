#pragma once

#include <cstdio>
#include <iostream>

#include "voxelgat/gat.hpp"

namespace voxelgat {

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t graphs_per_batch = 6;
  double base_lr = 1e-4;
  double decay = 1e-4;  // per-epoch exponential decay constant
  std::array<double, 4> class_weights{0, 0, 0, 0};  // all-zero: derive from data
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  std::size_t log_every = 10;  // stdout cadence, 0 silences; the log itself is per-epoch
  double feature_dropout = 0.0;

  void validate() const {
    check(graphs_per_batch >= 1, ErrorKind::config, "graphs_per_batch must be positive");
    check(base_lr > 0.0, ErrorKind::config, "base learning rate must be positive");
    check(decay >= 0.0, ErrorKind::config, "decay rate must be nonnegative");
    check(val_fraction >= 0.0 && val_fraction < 1.0, ErrorKind::config,
          "validation fraction must be in [0, 1)");
    check(feature_dropout >= 0.0 && feature_dropout < 1.0, ErrorKind::config,
          "feature dropout must be in [0, 1)");
    bool any = false;
    for (double w : class_weights) any = any || w != 0.0;
    if (any)
      for (double w : class_weights)
        check(w > 0.0, ErrorKind::config, "class weights must all be positive");
  }
};

struct TrainRecord {
  std::size_t epoch;
  double loss;
  double f1_wt;
  double lr;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::size_t clamped = 0;  // true-class probabilities floored inside the loss
  std::size_t skipped = 0;  // optimizer updates dropped on non-finite gradients
  bool aborted = false;
  std::string abort_reason;
};

inline double lr_schedule(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.base_lr * std::exp(-cfg.decay * double(epoch));
}

/// Mean over nodes of -W_y log(p_y) with the true-class probability floored
/// at 1e-12; floor hits are counted into *clamped when given.
inline Tensor weighted_cross_entropy(Tape& tape, const Tensor& probs,
                                     const std::vector<std::uint8_t>& labels,
                                     const std::array<double, 4>& weights,
                                     std::size_t* clamped = nullptr) {
  std::size_t n = probs.rows();
  check(probs.shape().size() == 2 && probs.cols() == kNumClasses, ErrorKind::dimension,
        "probability matrix must have one column per class");
  check(labels.size() == n, ErrorKind::dimension, "one label per row required");
  check(n > 0, ErrorKind::contract, "empty batch");
  std::vector<std::uint32_t> cols(n);
  std::vector<double> w_y(n);
  for (std::size_t i = 0; i < n; ++i) {
    check(labels[i] < kNumClasses, ErrorKind::contract, "label out of range");
    cols[i] = labels[i];
    w_y[i] = weights[labels[i]];
  }
  Tensor picked = take_per_row(tape, probs, cols);
  Tensor logs = log_clamped(tape, picked, 1e-12, clamped);
  Tensor weighted = mul(tape, logs, Tensor::from({n}, w_y));
  return scale(tape, sum_all(tape, weighted), -1.0 / double(n));
}

/// Adam with bias correction. A parameter whose gradient contains a non-finite
/// entry keeps its value and moment estimates for that step.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params) : params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].numel(), 0.0);
      v_[i].assign(params_[i].numel(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(kBeta1, double(t_));
    double bc2 = 1.0 - std::pow(kBeta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      std::size_t count = p.numel();
      const double* g = p.has_grad() ? p.grad() : nullptr;
      bool finite = true;
      if (g)
        for (std::size_t j = 0; j < count && finite; ++j) finite = std::isfinite(g[j]);
      if (!finite) {
        ++skipped_;
        continue;
      }
      double* x = p.data();
      for (std::size_t j = 0; j < count; ++j) {
        double gj = g ? g[j] : 0.0;
        m_[i][j] = kBeta1 * m_[i][j] + (1.0 - kBeta1) * gj;
        v_[i][j] = kBeta2 * v_[i][j] + (1.0 - kBeta2) * gj * gj;
        double mhat = m_[i][j] / bc1;
        double vhat = v_[i][j] / bc2;
        x[j] -= lr * mhat / (std::sqrt(vhat) + kEps);
      }
    }
  }

  std::size_t skipped() const { return skipped_; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
  std::size_t skipped_ = 0;
};

/// Disjoint union: features stacked, edge endpoints offset, labels
/// concatenated. No cross-graph edges, so forward passes factor per graph.
inline Rag batch_graphs(const std::vector<Rag>& graphs) {
  check(!graphs.empty(), ErrorKind::contract, "cannot batch zero graphs");
  bool labeled = !graphs[0].labels.empty();
  Rag out;
  out.n = 0;
  for (const Rag& g : graphs) {
    check((!g.labels.empty()) == labeled, ErrorKind::contract,
          "cannot batch labeled with unlabeled graphs");
    std::uint32_t off = out.n;
    out.features.insert(out.features.end(), g.features.begin(), g.features.end());
    for (auto [a, b] : g.edges) out.edges.emplace_back(a + off, b + off);
    out.labels.insert(out.labels.end(), g.labels.begin(), g.labels.end());
    out.node_to_cluster.insert(out.node_to_cluster.end(), g.node_to_cluster.begin(),
                               g.node_to_cluster.end());
    out.n += g.n;
  }
  out.validate();
  return out;
}

/// Inverse class frequency over all labeled nodes, normalized so present
/// classes average 1. Classes absent from the data get the neutral weight 1.
inline std::array<double, 4> inverse_frequency_weights(const std::vector<Rag>& graphs) {
  std::array<std::size_t, 4> counts{0, 0, 0, 0};
  for (const Rag& g : graphs)
    for (std::uint8_t l : g.labels) ++counts[l];
  std::array<double, 4> w{1.0, 1.0, 1.0, 1.0};
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < 4; ++c)
    if (counts[c] > 0) {
      w[c] = 1.0 / double(counts[c]);
      sum += w[c];
      ++present;
    }
  check(present > 0, ErrorKind::contract, "no labeled nodes in dataset");
  double mean = sum / double(present);
  for (std::size_t c = 0; c < 4; ++c)
    if (counts[c] > 0) w[c] /= mean;
  return w;
}

/// Node-level whole-tumor f1 (classes 1..3 against class 0) of argmax
/// predictions over a set of graphs. Both sides empty counts as perfect.
inline double node_f1_wt(const GatModel& m, const std::vector<Rag>& graphs) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const Rag& g : graphs) {
    Tensor probs = model_forward(m, g);
    for (std::size_t i = 0; i < g.n; ++i) {
      std::size_t arg = 0;
      for (std::size_t c = 1; c < kNumClasses; ++c)
        if (probs.at(i, c) > probs.at(i, arg)) arg = c;
      bool pred = arg != 0;
      bool truth = g.labels[i] != 0;
      if (pred && truth) ++tp;
      else if (pred) ++fp;
      else if (truth) ++fn;
    }
  }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * double(tp) / double(2 * tp + fp + fn);
}

namespace detail {

inline std::vector<std::vector<double>> snapshot_params(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.emplace_back(p.data(), p.data() + p.numel());
  return out;
}

inline void restore_params(std::vector<Tensor>& params,
                           const std::vector<std::vector<double>>& blob) {
  for (std::size_t i = 0; i < params.size(); ++i)
    std::copy(blob[i].begin(), blob[i].end(), params[i].data());
}

}  // namespace detail

/// Seeded mini-batch training. Shuffles graphs per epoch, batches them,
/// applies the weighted cross-entropy under Adam with the exponential decay
/// schedule, and logs loss, whole-tumor f1, and the learning rate per epoch.
/// The model is left at the best-f1 epoch (ties broken by lower loss). A
/// numeric failure mid-run aborts, keeping the best parameters seen so far.
inline TrainLog train(GatModel& m, const std::vector<Rag>& data, const TrainConfig& cfg) {
  cfg.validate();
  check(!data.empty(), ErrorKind::contract, "training dataset is empty");
  for (const Rag& g : data)
    check(!g.labels.empty(), ErrorKind::contract, "training graphs must carry labels");

  TrainLog log;
  if (cfg.epochs == 0) return log;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  fisher_yates(order, rng);
  std::size_t n_val = std::size_t(cfg.val_fraction * double(data.size()));
  std::vector<Rag> val_set, train_set;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_val ? val_set : train_set).push_back(data[order[i]]);
  check(!train_set.empty(), ErrorKind::config, "validation split consumed every graph");
  const std::vector<Rag>& eval_set = val_set.empty() ? train_set : val_set;

  std::array<double, 4> weights = cfg.class_weights;
  bool derive = true;
  for (double w : weights) derive = derive && w == 0.0;
  if (derive) weights = inverse_frequency_weights(train_set);

  std::vector<Tensor> params = m.parameters();
  Adam opt(params);
  std::vector<std::vector<double>> best = detail::snapshot_params(params);
  double best_f1 = -1.0, best_loss = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> perm(train_set.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = lr_schedule(cfg, epoch);
    fisher_yates(perm, rng);
    double loss_sum = 0.0;
    std::size_t node_sum = 0;
    try {
      for (std::size_t start = 0; start < perm.size(); start += cfg.graphs_per_batch) {
        std::vector<Rag> chunk;
        for (std::size_t i = start; i < std::min(start + cfg.graphs_per_batch, perm.size()); ++i)
          chunk.push_back(train_set[perm[i]]);
        Rag batch = batch_graphs(chunk);

        std::vector<std::uint32_t> src, dst;
        expand_edges(batch, src, dst);
        std::vector<double> feat = batch.features;
        if (cfg.feature_dropout > 0.0) {
          double keep = 1.0 - cfg.feature_dropout;
          for (double& v : feat) v = rng.uniform() < keep ? v / keep : 0.0;
        }
        Tensor features = Tensor::from({batch.n, kFeatureWidth}, feat);

        Tape tape;
        Tensor probs = model_forward(tape, m, features, src, dst);
        Tensor loss = weighted_cross_entropy(tape, probs, batch.labels, weights, &log.clamped);
        check(loss.all_finite(), ErrorKind::numeric, "non-finite training loss");
        for (Tensor& p : params) p.zero_grad();
        backward(loss, tape);
        opt.step(lr);
        loss_sum += loss.at(0) * double(batch.n);
        node_sum += batch.n;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      log.aborted = true;
      log.abort_reason = e.what();
      detail::restore_params(params, best);
      log.skipped = opt.skipped();
      return log;
    }

    double epoch_loss = loss_sum / double(node_sum);
    double f1 = node_f1_wt(m, eval_set);
    log.records.push_back({epoch, epoch_loss, f1, lr});
    if (cfg.log_every > 0 && (epoch % cfg.log_every == 0 || epoch + 1 == cfg.epochs))
      std::printf("epoch %zu  loss %.6f  f1_wt %.4f  lr %.3g\n", epoch, epoch_loss, f1, lr);

    if (f1 > best_f1 || (f1 == best_f1 && epoch_loss < best_loss)) {
      best_f1 = f1;
      best_loss = epoch_loss;
      best = detail::snapshot_params(params);
    }
  }

  detail::restore_params(params, best);
  log.skipped = opt.skipped();
  return log;
}

inline void write_train_log_csv(const std::string& path, const TrainLog& log) {
  std::ofstream os(path);
  check(bool(os), ErrorKind::io, "cannot open for writing: " + path);
  os << "epoch,loss,f1_wt,lr\n";
  char buf[128];
  for (const TrainRecord& r : log.records) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.loss, r.f1_wt, r.lr);
    os << buf;
  }
  check(bool(os), ErrorKind::io, "write failed: " + path);
}

}  // namespace voxelgat
