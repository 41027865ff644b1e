#pragma once

#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <utility>

#include "voxelgat/common.hpp"

namespace voxelgat {

namespace detail {

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated when the tensor participates in a backward pass
  bool requires_grad = false;
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace detail

/// Dense f64 array with optional gradient buffer. Handle semantics: copies
/// share the underlying buffer. Values are immutable once an op has consumed
/// the tensor; only `grad` is mutated, and only during backward().
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

  Tensor(std::vector<std::size_t> shape, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    impl_->shape = std::move(shape);
    impl_->data.assign(detail::shape_numel(impl_->shape), 0.0);
    impl_->requires_grad = requires_grad;
    if (requires_grad) impl_->grad.assign(impl_->data.size(), 0.0);
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values,
                     bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    check(values.size() == t.numel(), ErrorKind::dimension, "tensor data does not match shape");
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t rows() const { return impl_->shape.empty() ? 0 : impl_->shape[0]; }
  std::size_t cols() const { return impl_->shape.size() < 2 ? 1 : impl_->shape[1]; }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  double& at(std::size_t i) { return impl_->data[i]; }
  double at(std::size_t i) const { return impl_->data[i]; }
  double& at(std::size_t r, std::size_t c) { return impl_->data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  // Handle semantics: a const handle still exposes the mutable grad buffer,
  // which backward closures (holding copies of the handle) accumulate into.
  double* grad() const { return impl_->grad.data(); }
  std::vector<double>& grad_vec() const { return impl_->grad; }

  void zero_grad() {
    if (impl_->requires_grad || !impl_->grad.empty()) impl_->grad.assign(numel(), 0.0);
  }

  bool all_finite() const {
    for (double v : impl_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_buffer(const Tensor& o) const { return impl_ == o.impl_; }

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of the primitive ops of one forward pass. Recording order is
/// execution order, so walking the record backwards is reverse topological
/// order by construction. Single writer; not reusable across passes.
class Tape {
 public:
  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

// Prepares an op output: propagates requires_grad and allocates the grad
// buffer the backward closures will accumulate into.
inline Tensor make_output(std::vector<std::size_t> shape, bool needs_grad) {
  Tensor out(std::move(shape), needs_grad);
  return out;
}

inline void ensure_grad(const Tensor& t) {
  if (t.requires_grad() && !t.has_grad()) t.impl()->grad.assign(t.numel(), 0.0);
}

// C += A * B, row-major, no aliasing.
inline void matmul_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                       std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T where A is m x k and B is n x k.
inline void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                          std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      crow[j] += s;
    }
  }
}

// C += A^T * B where A is m x k and B is m x n; C is k x n.
inline void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                          std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double av = arow[kk];
      if (av == 0.0) continue;
      double* crow = c + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

/// Matrix product [m x k] * [k x n] -> [m x n].
/// Backward: dA += G * B^T, dB += A^T * G.
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2, ErrorKind::dimension,
        "matmul expects rank-2 tensors");
  std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  check(b.shape()[0] == k, ErrorKind::dimension, "matmul inner dimensions differ");

  bool needs = a.requires_grad() || b.requires_grad();
  Tensor out = detail::make_output({m, n}, needs);
  std::fill(out.data(), out.data() + out.numel(), 0.0);
  detail::matmul_acc(a.data(), b.data(), out.data(), m, k, n);

  if (needs) {
    detail::ensure_grad(a);
    detail::ensure_grad(b);
    tape.record([a, b, out, m, k, n] {
      if (a.requires_grad()) detail::matmul_nt_acc(out.grad(), b.data(), a.impl()->grad.data(), m, n, k);
      if (b.requires_grad()) detail::matmul_tn_acc(a.data(), out.grad(), b.impl()->grad.data(), m, k, n);
    });
  }
  return out;
}

/// Matrix product with transposed right operand: [m x k] * [n x k]^T -> [m x n].
inline Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2, ErrorKind::dimension,
        "matmul_nt expects rank-2 tensors");
  std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  check(b.shape()[1] == k, ErrorKind::dimension, "matmul_nt inner dimensions differ");

  bool needs = a.requires_grad() || b.requires_grad();
  Tensor out = detail::make_output({m, n}, needs);
  std::fill(out.data(), out.data() + out.numel(), 0.0);
  detail::matmul_nt_acc(a.data(), b.data(), out.data(), m, k, n);

  if (needs) {
    detail::ensure_grad(a);
    detail::ensure_grad(b);
    tape.record([a, b, out, m, k, n] {
      // C = A * B^T: dA += G * B, dB += G^T * A.
      if (a.requires_grad()) detail::matmul_acc(out.grad(), b.data(), a.impl()->grad.data(), m, n, k);
      if (b.requires_grad()) detail::matmul_tn_acc(out.grad(), a.data(), b.impl()->grad.data(), m, n, k);
    });
  }
  return out;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), ErrorKind::dimension, "add shape mismatch");
  bool needs = a.requires_grad() || b.requires_grad();
  Tensor out = detail::make_output(a.shape(), needs);
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
  if (needs) {
    detail::ensure_grad(a);
    detail::ensure_grad(b);
    tape.record([a, b, out] {
      if (a.requires_grad())
        for (std::size_t i = 0; i < out.numel(); ++i) a.grad()[i] += out.grad()[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < out.numel(); ++i) b.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

/// Elementwise product of same-shape tensors.
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), ErrorKind::dimension, "mul shape mismatch");
  bool needs = a.requires_grad() || b.requires_grad();
  Tensor out = detail::make_output(a.shape(), needs);
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * b.at(i);
  if (needs) {
    detail::ensure_grad(a);
    detail::ensure_grad(b);
    tape.record([a, b, out] {
      if (a.requires_grad())
        for (std::size_t i = 0; i < out.numel(); ++i) a.grad()[i] += out.grad()[i] * b.at(i);
      if (b.requires_grad())
        for (std::size_t i = 0; i < out.numel(); ++i) b.grad()[i] += out.grad()[i] * a.at(i);
    });
  }
  return out;
}

inline Tensor scale(Tape& tape, const Tensor& a, double c) {
  bool needs = a.requires_grad();
  Tensor out = detail::make_output(a.shape(), needs);
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * c;
  if (needs) {
    detail::ensure_grad(a);
    tape.record([a, out, c] {
      for (std::size_t i = 0; i < out.numel(); ++i) a.grad()[i] += out.grad()[i] * c;
    });
  }
  return out;
}

/// Elementwise x for x >= 0, eta*x otherwise. eta must lie in (0, 1).
inline Tensor leaky_relu(Tape& tape, const Tensor& a, double eta) {
  check(eta > 0.0 && eta < 1.0, ErrorKind::parameter, "leaky_relu slope must be in (0, 1)");
  bool needs = a.requires_grad();
  Tensor out = detail::make_output(a.shape(), needs);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double x = a.at(i);
    out.at(i) = x >= 0.0 ? x : eta * x;
  }
  if (needs) {
    detail::ensure_grad(a);
    tape.record([a, out, eta] {
      for (std::size_t i = 0; i < out.numel(); ++i)
        a.grad()[i] += out.grad()[i] * (a.at(i) >= 0.0 ? 1.0 : eta);
    });
  }
  return out;
}

/// Concatenates rank-2 tensors with equal row counts along columns.
inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  check(!parts.empty(), ErrorKind::contract, "concat of no tensors");
  std::size_t m = parts[0].rows();
  std::size_t total = 0;
  bool needs = false;
  for (const Tensor& p : parts) {
    check(p.shape().size() == 2 && p.rows() == m, ErrorKind::dimension,
          "concat_cols row mismatch");
    total += p.cols();
    needs = needs || p.requires_grad();
  }
  Tensor out = detail::make_output({m, total}, needs);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::size_t c = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::memcpy(out.data() + i * total + off, p.data() + i * c, c * sizeof(double));
    off += c;
  }
  if (needs) {
    for (const Tensor& p : parts) detail::ensure_grad(p);
    tape.record([parts, out, m, total] {
      std::size_t off = 0;
      for (const Tensor& p : parts) {
        std::size_t c = p.cols();
        if (p.requires_grad())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad()[i * c + j] += out.grad()[i * total + off + j];
        off += c;
      }
    });
  }
  return out;
}

inline Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
  return concat_cols(tape, std::vector<Tensor>{a, b});
}

/// Row gather: out[i, :] = a[idx[i], :].
inline Tensor gather_rows(Tape& tape, const Tensor& a, std::vector<std::uint32_t> idx) {
  check(a.shape().size() == 2, ErrorKind::dimension, "gather_rows expects rank-2 tensor");
  std::size_t f = a.cols();
  for (std::uint32_t i : idx)
    check(i < a.rows(), ErrorKind::dimension, "gather index out of range");
  bool needs = a.requires_grad();
  Tensor out = detail::make_output({idx.size(), f}, needs);
  for (std::size_t e = 0; e < idx.size(); ++e)
    std::memcpy(out.data() + e * f, a.data() + std::size_t{idx[e]} * f, f * sizeof(double));
  if (needs) {
    detail::ensure_grad(a);
    tape.record([a, out, idx = std::move(idx), f] {
      for (std::size_t e = 0; e < idx.size(); ++e) {
        double* dst = a.grad() + std::size_t{idx[e]} * f;
        const double* src = out.grad() + e * f;
        for (std::size_t j = 0; j < f; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

/// Scatter-add of rows: out[dst[e], :] += a[e, :]. Inverse of gather_rows.
inline Tensor segment_sum(Tape& tape, const Tensor& a, std::vector<std::uint32_t> dst,
                          std::size_t n_rows) {
  check(a.shape().size() == 2 && a.rows() == dst.size(), ErrorKind::dimension,
        "segment_sum index count mismatch");
  std::size_t f = a.cols();
  for (std::uint32_t i : dst) check(i < n_rows, ErrorKind::dimension, "segment index out of range");
  bool needs = a.requires_grad();
  Tensor out = detail::make_output({n_rows, f}, needs);
  for (std::size_t e = 0; e < dst.size(); ++e) {
    double* o = out.data() + std::size_t{dst[e]} * f;
    const double* s = a.data() + e * f;
    for (std::size_t j = 0; j < f; ++j) o[j] += s[j];
  }
  if (needs) {
    detail::ensure_grad(a);
    tape.record([a, out, dst = std::move(dst), f] {
      for (std::size_t e = 0; e < dst.size(); ++e) {
        const double* g = out.grad() + std::size_t{dst[e]} * f;
        double* d = a.grad() + e * f;
        for (std::size_t j = 0; j < f; ++j) d[j] += g[j];
      }
    });
  }
  return out;
}

/// Softmax over groups of entries sharing a destination index. Stabilized by
/// subtracting the per-group maximum before exponentiation. Every index in
/// [0, n_nodes) must be hit by at least one entry; a node with no incoming
/// edge is an isolated-node error (callers prevent it with self-loops).
inline Tensor segment_softmax(Tape& tape, const Tensor& logits,
                              const std::vector<std::uint32_t>& dst, std::size_t n_nodes) {
  check(logits.numel() == dst.size(), ErrorKind::dimension,
        "segment_softmax logits/index count mismatch");
  for (std::uint32_t i : dst)
    check(i < n_nodes, ErrorKind::dimension, "segment_softmax index out of range");

  std::vector<std::uint32_t> hits(n_nodes, 0);
  for (std::uint32_t i : dst) hits[i]++;
  for (std::size_t p = 0; p < n_nodes; ++p)
    check(hits[p] > 0, ErrorKind::isolated_node,
          "node " + std::to_string(p) + " has no incoming edge");

  std::size_t e_count = dst.size();
  std::vector<double> group_max(n_nodes, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < e_count; ++e)
    group_max[dst[e]] = std::max(group_max[dst[e]], logits.at(e));

  bool needs = logits.requires_grad();
  Tensor out = detail::make_output(logits.shape(), needs);
  std::vector<double> group_sum(n_nodes, 0.0);
  for (std::size_t e = 0; e < e_count; ++e) {
    out.at(e) = std::exp(logits.at(e) - group_max[dst[e]]);
    group_sum[dst[e]] += out.at(e);
  }
  for (std::size_t e = 0; e < e_count; ++e) out.at(e) /= group_sum[dst[e]];

  if (needs) {
    detail::ensure_grad(logits);
    tape.record([logits, out, dst, n_nodes] {
      // dx_e = y_e * (g_e - sum over its group of y_j * g_j)
      std::vector<double> group_dot(n_nodes, 0.0);
      for (std::size_t e = 0; e < dst.size(); ++e) group_dot[dst[e]] += out.at(e) * out.grad()[e];
      for (std::size_t e = 0; e < dst.size(); ++e)
        logits.grad()[e] += out.at(e) * (out.grad()[e] - group_dot[dst[e]]);
    });
  }
  return out;
}

/// Fused attention aggregation: out[dst[e], :] += weights[e] * values[src[e], :].
inline Tensor segment_weighted_sum(Tape& tape, const Tensor& values, const Tensor& weights,
                                   std::vector<std::uint32_t> src, std::vector<std::uint32_t> dst,
                                   std::size_t n_rows) {
  check(values.shape().size() == 2, ErrorKind::dimension, "segment_weighted_sum expects matrix");
  check(weights.numel() == src.size() && src.size() == dst.size(), ErrorKind::dimension,
        "segment_weighted_sum index count mismatch");
  std::size_t f = values.cols();
  for (std::size_t e = 0; e < src.size(); ++e) {
    check(src[e] < values.rows(), ErrorKind::dimension, "source index out of range");
    check(dst[e] < n_rows, ErrorKind::dimension, "destination index out of range");
  }
  bool needs = values.requires_grad() || weights.requires_grad();
  Tensor out = detail::make_output({n_rows, f}, needs);
  for (std::size_t e = 0; e < src.size(); ++e) {
    const double* v = values.data() + std::size_t{src[e]} * f;
    double* o = out.data() + std::size_t{dst[e]} * f;
    double w = weights.at(e);
    for (std::size_t j = 0; j < f; ++j) o[j] += w * v[j];
  }
  if (needs) {
    detail::ensure_grad(values);
    detail::ensure_grad(weights);
    tape.record([values, weights, out, src = std::move(src), dst = std::move(dst), f] {
      for (std::size_t e = 0; e < src.size(); ++e) {
        const double* g = out.grad() + std::size_t{dst[e]} * f;
        const double* v = values.data() + std::size_t{src[e]} * f;
        double w = weights.at(e);
        if (values.requires_grad()) {
          double* dv = values.grad() + std::size_t{src[e]} * f;
          for (std::size_t j = 0; j < f; ++j) dv[j] += w * g[j];
        }
        if (weights.requires_grad()) {
          double s = 0.0;
          for (std::size_t j = 0; j < f; ++j) s += v[j] * g[j];
          weights.grad()[e] += s;
        }
      }
    });
  }
  return out;
}

/// Row-wise stabilized softmax of an [n x c] matrix.
inline Tensor row_softmax(Tape& tape, const Tensor& a) {
  check(a.shape().size() == 2, ErrorKind::dimension, "row_softmax expects matrix");
  std::size_t n = a.rows(), c = a.cols();
  bool needs = a.requires_grad();
  Tensor out = detail::make_output({n, c}, needs);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = a.data() + i * c;
    double* y = out.data() + i * c;
    double mx = x[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= s;
  }
  if (needs) {
    detail::ensure_grad(a);
    tape.record([a, out, n, c] {
      for (std::size_t i = 0; i < n; ++i) {
        const double* y = out.data() + i * c;
        const double* g = out.grad() + i * c;
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
        double* d = a.grad() + i * c;
        for (std::size_t j = 0; j < c; ++j) d[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

/// Picks one column per row: out[i] = a[i, cols[i]].
inline Tensor take_per_row(Tape& tape, const Tensor& a, std::vector<std::uint32_t> cols) {
  check(a.shape().size() == 2 && a.rows() == cols.size(), ErrorKind::dimension,
        "take_per_row index count mismatch");
  std::size_t c = a.cols();
  for (std::uint32_t j : cols) check(j < c, ErrorKind::dimension, "column index out of range");
  bool needs = a.requires_grad();
  Tensor out = detail::make_output({cols.size()}, needs);
  for (std::size_t i = 0; i < cols.size(); ++i) out.at(i) = a.at(i, cols[i]);
  if (needs) {
    detail::ensure_grad(a);
    tape.record([a, out, cols = std::move(cols), c] {
      for (std::size_t i = 0; i < cols.size(); ++i) a.grad()[i * c + cols[i]] += out.grad()[i];
    });
  }
  return out;
}

/// Elementwise log with a floor: log(max(x, floor)). Entries at or below the
/// floor contribute zero gradient; `clamped`, when given, counts them.
inline Tensor log_clamped(Tape& tape, const Tensor& a, double floor_val,
                          std::size_t* clamped = nullptr) {
  bool needs = a.requires_grad();
  Tensor out = detail::make_output(a.shape(), needs);
  std::size_t n_clamped = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double x = a.at(i);
    if (x < floor_val) {
      x = floor_val;
      ++n_clamped;
    }
    out.at(i) = std::log(x);
  }
  if (clamped) *clamped += n_clamped;
  if (needs) {
    detail::ensure_grad(a);
    tape.record([a, out, floor_val] {
      for (std::size_t i = 0; i < out.numel(); ++i)
        if (a.at(i) >= floor_val) a.grad()[i] += out.grad()[i] / a.at(i);
    });
  }
  return out;
}

/// Full reduction to a scalar (shape {1}).
inline Tensor sum_all(Tape& tape, const Tensor& a) {
  bool needs = a.requires_grad();
  Tensor out = detail::make_output({1}, needs);
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
  out.at(0) = s;
  if (needs) {
    detail::ensure_grad(a);
    tape.record([a, out] {
      double g = out.grad()[0];
      for (std::size_t i = 0; i < a.numel(); ++i) a.grad()[i] += g;
    });
  }
  return out;
}

/// Reverse-mode accumulation from a scalar loss. After the call every tensor
/// with requires_grad that fed the loss holds d(loss)/d(tensor) in grad.
inline void backward(const Tensor& loss, Tape& tape) {
  check(loss.numel() == 1, ErrorKind::contract, "backward needs a scalar loss");
  if (!loss.requires_grad()) return;  // nothing on the tape feeds it
  detail::ensure_grad(loss);
  loss.grad()[0] += 1.0;
  tape.run_backward();
}

}  // namespace voxelgat
