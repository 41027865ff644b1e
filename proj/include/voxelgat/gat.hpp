#pragma once

#include <span>

#include <json.hpp>

#include "voxelgat/graph.hpp"
#include "voxelgat/tensor.hpp"

namespace voxelgat {

/// Architecture hyperparameters. Hidden layers concatenate their heads (width
/// between layers = heads * hidden_dim); the output layer averages its heads
/// and feeds a row softmax.
struct GatConfig {
  std::size_t in_dim = kFeatureWidth;
  std::size_t hidden_dim = 64;
  std::size_t heads = 8;
  std::size_t hidden_layers = 8;
  std::size_t out_dim = kNumClasses;
  std::size_t out_heads = 8;
  double eta = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    check(in_dim >= 1 && hidden_dim >= 1 && heads >= 1 && out_dim >= 1 && out_heads >= 1,
          ErrorKind::config, "architecture dimensions must be positive");
    check(hidden_layers >= 1, ErrorKind::config, "at least one hidden layer required");
    check(eta > 0.0 && eta < 1.0, ErrorKind::config, "negative slope must be in (0, 1)");
  }
};

/// One multi-head attention layer. Per head: weight W (out x in) and the
/// attention vector split into its destination and source halves (out x 1
/// each), so a^T [W h_p || W h_q] = a_dst . W h_p + a_src . W h_q.
struct GatConvLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t heads = 0;
  double eta = 0.2;
  bool concat = true;  // false: average heads, no activation (output layer)
  std::vector<Tensor> w, a_dst, a_src;

  std::size_t width() const { return concat ? heads * out_dim : out_dim; }
  std::size_t param_count() const { return heads * (out_dim * in_dim + 2 * out_dim); }
};

/// Reference single-pair attention logit: LeakyReLU(a^T [W h_p || W h_q]).
inline double edge_logit(const GatConvLayer& layer, std::span<const double> h_p,
                         std::span<const double> h_q, std::size_t head) {
  check(head < layer.heads, ErrorKind::parameter, "head index out of range");
  check(h_p.size() == layer.in_dim && h_q.size() == layer.in_dim, ErrorKind::dimension,
        "feature width does not match layer input");
  const Tensor& w = layer.w[head];
  double s = 0.0;
  for (std::size_t i = 0; i < layer.out_dim; ++i) {
    double up = 0.0, uq = 0.0;
    for (std::size_t j = 0; j < layer.in_dim; ++j) {
      up += w.at(i, j) * h_p[j];
      uq += w.at(i, j) * h_q[j];
    }
    s += layer.a_dst[head].at(i) * up + layer.a_src[head].at(i) * uq;
  }
  return s >= 0.0 ? s : layer.eta * s;
}

/// Attention-weighted aggregation over the directed edge list (which must
/// already carry self-loops). When alpha_out is given it receives each head's
/// edge weights in edge order.
inline Tensor layer_forward(Tape& tape, const GatConvLayer& layer, const Tensor& h,
                            const std::vector<std::uint32_t>& src,
                            const std::vector<std::uint32_t>& dst, std::size_t n,
                            std::vector<Tensor>* alpha_out = nullptr) {
  check(h.shape().size() == 2 && h.cols() == layer.in_dim, ErrorKind::dimension,
        "layer input width mismatch");
  check(src.size() == dst.size(), ErrorKind::dimension, "edge list lengths differ");
  if (alpha_out) alpha_out->clear();

  std::vector<Tensor> head_out;
  head_out.reserve(layer.heads);
  for (std::size_t k = 0; k < layer.heads; ++k) {
    Tensor z = matmul_nt(tape, h, layer.w[k]);
    Tensor score_dst = matmul(tape, z, layer.a_dst[k]);
    Tensor score_src = matmul(tape, z, layer.a_src[k]);
    Tensor logits = leaky_relu(
        tape,
        add(tape, gather_rows(tape, score_dst, dst), gather_rows(tape, score_src, src)),
        layer.eta);
    Tensor alpha = segment_softmax(tape, logits, dst, n);
    if (alpha_out) alpha_out->push_back(alpha);
    Tensor agg = segment_weighted_sum(tape, z, alpha, src, dst, n);
    head_out.push_back(layer.concat ? leaky_relu(tape, agg, layer.eta) : agg);
  }
  if (layer.concat) return concat_cols(tape, head_out);
  Tensor sum = head_out[0];
  for (std::size_t k = 1; k < layer.heads; ++k) sum = add(tape, sum, head_out[k]);
  return scale(tape, sum, 1.0 / double(layer.heads));
}

/// Nine-layer stack (hidden layers + softmax output layer) over a node graph.
struct GatModel {
  GatConfig cfg;
  std::vector<GatConvLayer> layers;

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const GatConvLayer& layer : layers)
      for (std::size_t k = 0; k < layer.heads; ++k) {
        out.push_back(layer.w[k]);
        out.push_back(layer.a_dst[k]);
        out.push_back(layer.a_src[k]);
      }
    return out;
  }

  std::size_t param_count() const {
    std::size_t total = 0;
    for (const GatConvLayer& layer : layers) total += layer.param_count();
    return total;
  }
};

namespace detail {

inline GatConvLayer make_layer(std::size_t in_dim, std::size_t out_dim, std::size_t heads,
                               double eta, bool concat) {
  GatConvLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.heads = heads;
  layer.eta = eta;
  layer.concat = concat;
  for (std::size_t k = 0; k < heads; ++k) {
    layer.w.emplace_back(std::vector<std::size_t>{out_dim, in_dim}, true);
    layer.a_dst.emplace_back(std::vector<std::size_t>{out_dim, 1}, true);
    layer.a_src.emplace_back(std::vector<std::size_t>{out_dim, 1}, true);
  }
  return layer;
}

inline void glorot_fill(Tensor& t, double limit, Rng& rng) {
  for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(-limit, limit);
}

}  // namespace detail

/// Fresh model with seeded Glorot-uniform parameters, no biases.
inline GatModel make_model(const GatConfig& cfg) {
  cfg.validate();
  GatModel m;
  m.cfg = cfg;
  std::size_t width = cfg.in_dim;
  for (std::size_t l = 0; l < cfg.hidden_layers; ++l) {
    m.layers.push_back(detail::make_layer(width, cfg.hidden_dim, cfg.heads, cfg.eta, true));
    width = cfg.heads * cfg.hidden_dim;
  }
  m.layers.push_back(detail::make_layer(width, cfg.out_dim, cfg.out_heads, cfg.eta, false));

  Rng rng(cfg.seed);
  for (GatConvLayer& layer : m.layers) {
    double w_limit = std::sqrt(6.0 / double(layer.in_dim + layer.out_dim));
    double a_limit = std::sqrt(6.0 / double(2 * layer.out_dim + 1));
    for (std::size_t k = 0; k < layer.heads; ++k) {
      detail::glorot_fill(layer.w[k], w_limit, rng);
      detail::glorot_fill(layer.a_dst[k], a_limit, rng);
      detail::glorot_fill(layer.a_src[k], a_limit, rng);
    }
  }
  return m;
}

/// Directed edge expansion: both directions of every undirected pair, then
/// one self-loop per node.
inline void expand_edges(const Rag& g, std::vector<std::uint32_t>& src,
                         std::vector<std::uint32_t>& dst) {
  src.clear();
  dst.clear();
  src.reserve(2 * g.edges.size() + g.n);
  dst.reserve(2 * g.edges.size() + g.n);
  for (auto [a, b] : g.edges) {
    src.push_back(b);
    dst.push_back(a);
    src.push_back(a);
    dst.push_back(b);
  }
  for (std::uint32_t i = 0; i < g.n; ++i) {
    src.push_back(i);
    dst.push_back(i);
  }
}

/// Full forward pass to class probabilities (rows sum to 1).
inline Tensor model_forward(Tape& tape, const GatModel& m, const Tensor& features,
                            const std::vector<std::uint32_t>& src,
                            const std::vector<std::uint32_t>& dst) {
  check(features.cols() == m.cfg.in_dim, ErrorKind::dimension,
        "graph feature width does not match model input");
  std::size_t n = features.rows();
  Tensor x = features;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    x = layer_forward(tape, m.layers[l], x, src, dst, n);
    check(x.all_finite(), ErrorKind::numeric,
          "non-finite value after layer " + std::to_string(l));
  }
  x = row_softmax(tape, x);
  check(x.all_finite(), ErrorKind::numeric, "non-finite value in output softmax");
  return x;
}

inline Tensor model_forward(Tape& tape, const GatModel& m, const Rag& g) {
  std::vector<std::uint32_t> src, dst;
  expand_edges(g, src, dst);
  Tensor features = Tensor::from({g.n, kFeatureWidth}, g.features);
  return model_forward(tape, m, features, src, dst);
}

/// Inference-only forward.
inline Tensor model_forward(const GatModel& m, const Rag& g) {
  Tape tape;
  return model_forward(tape, m, g);
}

// ---------------------------------------------------------------------------
// Checkpoint: "GATC" magic, u32 version, u32 JSON length, JSON architecture
// block, then raw f64 parameter blobs in layer order (per head: W row-major,
// then the attention vector as destination half followed by source half).
// Round-trips bit-exactly.

inline void save_checkpoint(const std::string& path, const GatModel& m) {
  nlohmann::json arch{{"in_dim", m.cfg.in_dim},     {"hidden_dim", m.cfg.hidden_dim},
                      {"heads", m.cfg.heads},       {"hidden_layers", m.cfg.hidden_layers},
                      {"out_dim", m.cfg.out_dim},   {"out_heads", m.cfg.out_heads},
                      {"eta", m.cfg.eta},           {"seed", m.cfg.seed}};
  std::string json = arch.dump();

  std::ofstream os(path, std::ios::binary);
  check(bool(os), ErrorKind::io, "cannot open for writing: " + path);
  detail::write_magic(os, "GATC");
  detail::put_u32(os, 1);
  detail::put_u32(os, std::uint32_t(json.size()));
  os.write(json.data(), std::streamsize(json.size()));
  for (const Tensor& p : m.parameters())
    os.write(reinterpret_cast<const char*>(p.data()), std::streamsize(p.numel() * 8));
  check(bool(os), ErrorKind::io, "write failed: " + path);
}

inline GatModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), ErrorKind::io, "cannot open: " + path);
  detail::read_magic(is, "GATC", path);
  std::uint32_t version = detail::get_u32(is, path);
  check(version == 1, ErrorKind::io,
        "unsupported checkpoint version " + std::to_string(version) + ": " + path);
  std::uint32_t json_len = detail::get_u32(is, path);
  std::string json(json_len, '\0');
  is.read(json.data(), std::streamsize(json_len));
  check(bool(is), ErrorKind::io, "truncated file: " + path);

  nlohmann::json arch = nlohmann::json::parse(json, nullptr, false);
  check(!arch.is_discarded(), ErrorKind::io, "corrupt architecture block: " + path);
  GatConfig cfg;
  try {
    cfg.in_dim = arch.at("in_dim").get<std::size_t>();
    cfg.hidden_dim = arch.at("hidden_dim").get<std::size_t>();
    cfg.heads = arch.at("heads").get<std::size_t>();
    cfg.hidden_layers = arch.at("hidden_layers").get<std::size_t>();
    cfg.out_dim = arch.at("out_dim").get<std::size_t>();
    cfg.out_heads = arch.at("out_heads").get<std::size_t>();
    cfg.eta = arch.at("eta").get<double>();
    cfg.seed = arch.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::io, "architecture block missing fields: " + path);
  }

  GatModel m = make_model(cfg);
  for (Tensor& p : m.parameters()) {
    is.read(reinterpret_cast<char*>(p.data()), std::streamsize(p.numel() * 8));
    check(bool(is), ErrorKind::io, "truncated parameter blob: " + path);
  }
  return m;
}

}  // namespace voxelgat
