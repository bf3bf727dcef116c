#include "ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace catface {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!GradTape::active()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

double* grad_ptr(const NodePtr& n) {
  if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
  return n->grad.data();
}

// Incoming gradient of a node, or nullptr when nothing has flowed into it.
const double* out_grad(const NodePtr& n) { return n->grad.empty() ? nullptr : n->grad.data(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Maps rank-3 HxWxC onto batch size 1 so convolution loops only ever see
// BxHxWxC.
void as_nhwc(const Tensor& x, const char* op, int& B, int& H, int& W, int& C) {
  if (x.rank() == 4) {
    B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  } else if (x.rank() == 3) {
    B = 1, H = x.dim(0), W = x.dim(1), C = x.dim(2);
  } else {
    throw DimensionError(std::string(op) + ": expected HxWxC or BxHxWxC, got " +
                         shape_str(x.shape()));
  }
}

Shape with_channels(const Tensor& x, int c) {
  Shape s = x.shape();
  s.back() = c;
  return s;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
  detail::check_finite(out, "add");
  if (recording({&a, &b})) {
    out.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    GradTape::active()->record([an, bn, on] {
      const double* g = out_grad(on);
      if (!g) return;
      const size_t m = on->data.size();
      if (an->requires_grad) {
        double* ga = grad_ptr(an);
        for (size_t i = 0; i < m; ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        double* gb = grad_ptr(bn);
        for (size_t i = 0; i < m; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] - b.ptr()[i];
  detail::check_finite(out, "sub");
  if (recording({&a, &b})) {
    out.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    GradTape::active()->record([an, bn, on] {
      const double* g = out_grad(on);
      if (!g) return;
      const size_t m = on->data.size();
      if (an->requires_grad) {
        double* ga = grad_ptr(an);
        for (size_t i = 0; i < m; ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        double* gb = grad_ptr(bn);
        for (size_t i = 0; i < m; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
  detail::check_finite(out, "mul");
  if (recording({&a, &b})) {
    out.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    GradTape::active()->record([an, bn, on] {
      const double* g = out_grad(on);
      if (!g) return;
      const size_t m = on->data.size();
      if (an->requires_grad) {
        double* ga = grad_ptr(an);
        for (size_t i = 0; i < m; ++i) ga[i] += g[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        double* gb = grad_ptr(bn);
        for (size_t i = 0; i < m; ++i) gb[i] += g[i] * an->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const size_t n = x.size();
  for (size_t i = 0; i < n; ++i) out.ptr()[i] = x.ptr()[i] * c;
  detail::check_finite(out, "scale");
  if (recording({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record([xn, on, c] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = grad_ptr(xn);
      const size_t m = on->data.size();
      for (size_t i = 0; i < m; ++i) gx[i] += g[i] * c;
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1 || x.rank() < 1 || x.shape().back() != b.dim(0)) {
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
  }
  const int C = b.dim(0);
  const size_t rows = x.size() / static_cast<size_t>(C);
  Tensor out = Tensor::zeros(x.shape());
  for (size_t r = 0; r < rows; ++r) {
    const double* xi = x.ptr() + r * C;
    double* oi = out.ptr() + r * C;
    for (int c = 0; c < C; ++c) oi[c] = xi[c] + b.ptr()[c];
  }
  detail::check_finite(out, "add_bias");
  if (recording({&x, &b})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), bn = b.node(), on = out.node();
    GradTape::active()->record([xn, bn, on, rows, C] {
      const double* g = out_grad(on);
      if (!g) return;
      if (xn->requires_grad) {
        double* gx = grad_ptr(xn);
        const size_t m = on->data.size();
        for (size_t i = 0; i < m; ++i) gx[i] += g[i];
      }
      if (bn->requires_grad) {
        double* gb = grad_ptr(bn);
        for (size_t r = 0; r < rows; ++r) {
          const double* gi = g + r * C;
          for (int c = 0; c < C; ++c) gb[c] += gi[c];
        }
      }
    });
  }
  return out;
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const size_t n = x.size();
  for (size_t i = 0; i < n; ++i) {
    double v = x.ptr()[i];
    out.ptr()[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  detail::check_finite(out, "gelu");
  if (recording({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record([xn, on] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = grad_ptr(xn);
      const size_t m = on->data.size();
      for (size_t i = 0; i < m; ++i) {
        double v = xn->data[i];
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const size_t n = x.size();
  for (size_t i = 0; i < n; ++i) {
    double v = x.ptr()[i];
    // computed on the non-positive side to avoid exp overflow
    out.ptr()[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  detail::check_finite(out, "sigmoid");
  if (recording({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record([xn, on] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = grad_ptr(xn);
      const size_t m = on->data.size();
      for (size_t i = 0; i < m; ++i) {
        double s = on->data[i];
        gx[i] += g[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

Tensor detach(const Tensor& x) {
  Tensor out = Tensor::from_data(x.shape(), x.data());
  detail::check_finite(out, "detach");
  return out;
}

// ----------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x.ptr()[i];
  Tensor out = Tensor::scalar(s);
  detail::check_finite(out, "sum_all");
  if (recording({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record([xn, on] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = grad_ptr(xn);
      const size_t m = xn->data.size();
      for (size_t i = 0; i < m; ++i) gx[i] += g[0];
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------- shape

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  Tensor out = Tensor::from_data(std::move(shape), x.data());
  detail::check_finite(out, "reshape");
  if (recording({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record([xn, on] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = grad_ptr(xn);
      const size_t m = xn->data.size();
      for (size_t i = 0; i < m; ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const int M = x.dim(0), N = x.dim(1);
  Tensor out = Tensor::zeros({N, M});
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) out.ptr()[static_cast<size_t>(j) * M + i] = x.ptr()[static_cast<size_t>(i) * N + j];
  detail::check_finite(out, "transpose");
  if (recording({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record([xn, on, M, N] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = grad_ptr(xn);
      for (int j = 0; j < N; ++j)
        for (int i = 0; i < M; ++i) gx[static_cast<size_t>(i) * N + j] += g[static_cast<size_t>(j) * M + i];
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = xs[0].shape();
  if (axis < 0 || axis >= static_cast<int>(ref.size())) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(ref));
  }
  int axis_total = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != static_cast<int>(ref.size())) {
      throw DimensionError("concat: rank mismatch " + shape_str(t.shape()) + " vs " + shape_str(ref));
    }
    for (int d = 0; d < t.rank(); ++d) {
      if (d != axis && t.dim(d) != ref[static_cast<size_t>(d)]) {
        throw DimensionError("concat: shape mismatch " + shape_str(t.shape()) + " vs " +
                             shape_str(ref));
      }
    }
    axis_total += t.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[static_cast<size_t>(axis)] = axis_total;

  size_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<size_t>(ref[static_cast<size_t>(d)]);
  size_t inner = 1;
  for (size_t d = static_cast<size_t>(axis) + 1; d < ref.size(); ++d) inner *= static_cast<size_t>(ref[d]);

  Tensor out = Tensor::zeros(out_shape);
  size_t offset = 0;  // in axis units
  for (const Tensor& t : xs) {
    const size_t t_axis = static_cast<size_t>(t.dim(axis));
    for (size_t o = 0; o < outer; ++o) {
      const double* src = t.ptr() + o * t_axis * inner;
      double* dst = out.ptr() + (o * static_cast<size_t>(axis_total) + offset) * inner;
      std::memcpy(dst, src, t_axis * inner * sizeof(double));
    }
    offset += t_axis;
  }
  detail::check_finite(out, "concat");
  bool rec = false;
  for (const Tensor& t : xs) rec = rec || t.requires_grad();
  if (GradTape::active() && rec) {
    out.set_requires_grad(true);
    std::vector<NodePtr> in_nodes;
    std::vector<size_t> in_axis;
    for (const Tensor& t : xs) {
      in_nodes.push_back(t.node());
      in_axis.push_back(static_cast<size_t>(t.dim(axis)));
    }
    NodePtr on = out.node();
    const size_t total = static_cast<size_t>(axis_total);
    GradTape::active()->record([in_nodes, in_axis, on, outer, inner, total] {
      const double* g = out_grad(on);
      if (!g) return;
      size_t off = 0;
      for (size_t k = 0; k < in_nodes.size(); ++k) {
        const size_t ax = in_axis[k];
        if (in_nodes[k]->requires_grad) {
          double* gi = grad_ptr(in_nodes[k]);
          for (size_t o = 0; o < outer; ++o) {
            const double* src = g + (o * total + off) * inner;
            double* dst = gi + o * ax * inner;
            const size_t n = ax * inner;
            for (size_t i = 0; i < n; ++i) dst[i] += src[i];
          }
        }
        off += ax;
      }
    });
  }
  return out;
}

std::vector<Tensor> split(const Tensor& x, int axis, int parts) {
  if (axis < 0 || axis >= x.rank()) {
    throw DimensionError("split: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  }
  const int extent = x.dim(axis);
  if (parts <= 0 || extent % parts != 0) {
    throw DimensionError("split: axis extent " + std::to_string(extent) + " not divisible into " +
                         std::to_string(parts) + " parts");
  }
  const int piece = extent / parts;
  size_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<size_t>(x.dim(d));
  size_t inner = 1;
  for (int d = axis + 1; d < x.rank(); ++d) inner *= static_cast<size_t>(x.dim(d));

  Shape piece_shape = x.shape();
  piece_shape[static_cast<size_t>(axis)] = piece;

  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(parts));
  for (int p = 0; p < parts; ++p) {
    Tensor t = Tensor::zeros(piece_shape);
    for (size_t o = 0; o < outer; ++o) {
      const double* src = x.ptr() + (o * static_cast<size_t>(extent) + static_cast<size_t>(p) * piece) * inner;
      double* dst = t.ptr() + o * static_cast<size_t>(piece) * inner;
      std::memcpy(dst, src, static_cast<size_t>(piece) * inner * sizeof(double));
    }
    detail::check_finite(t, "split");
    outs.push_back(t);
  }
  if (recording({&x})) {
    NodePtr xn = x.node();
    for (int p = 0; p < parts; ++p) {
      outs[static_cast<size_t>(p)].set_requires_grad(true);
      NodePtr on = outs[static_cast<size_t>(p)].node();
      GradTape::active()->record([xn, on, outer, inner, extent, piece, p] {
        const double* g = out_grad(on);
        if (!g) return;
        double* gx = grad_ptr(xn);
        for (size_t o = 0; o < outer; ++o) {
          double* dst = gx + (o * static_cast<size_t>(extent) + static_cast<size_t>(p) * piece) * inner;
          const double* src = g + o * static_cast<size_t>(piece) * inner;
          const size_t n = static_cast<size_t>(piece) * inner;
          for (size_t i = 0; i < n; ++i) dst[i] += src[i];
        }
      });
    }
  }
  return outs;
}

// ------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out = Tensor::zeros({M, N});
  const double* A = a.ptr();
  const double* B = b.ptr();
  double* C = out.ptr();
  for (int i = 0; i < M; ++i) {
    double* Ci = C + static_cast<size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const double aik = A[static_cast<size_t>(i) * K + k];
      const double* Bk = B + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) Ci[j] += aik * Bk[j];
    }
  }
  detail::check_finite(out, "matmul");
  if (recording({&a, &b})) {
    out.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    GradTape::active()->record([an, bn, on, M, K, N] {
      const double* g = out_grad(on);
      if (!g) return;
      if (an->requires_grad) {
        // dA = dC · B^T
        double* ga = grad_ptr(an);
        for (int i = 0; i < M; ++i) {
          const double* gi = g + static_cast<size_t>(i) * N;
          double* gai = ga + static_cast<size_t>(i) * K;
          for (int k = 0; k < K; ++k) {
            const double* Bk = bn->data.data() + static_cast<size_t>(k) * N;
            double acc = 0.0;
            for (int j = 0; j < N; ++j) acc += gi[j] * Bk[j];
            gai[k] += acc;
          }
        }
      }
      if (bn->requires_grad) {
        // dB = A^T · dC
        double* gb = grad_ptr(bn);
        for (int i = 0; i < M; ++i) {
          const double* gi = g + static_cast<size_t>(i) * N;
          const double* Ai = an->data.data() + static_cast<size_t>(i) * K;
          for (int k = 0; k < K; ++k) {
            double* gbk = gb + static_cast<size_t>(k) * N;
            const double aik = Ai[k];
            for (int j = 0; j < N; ++j) gbk[j] += aik * gi[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) {
    throw DimensionError("softmax_rows: expected rank 2, got " + shape_str(x.shape()));
  }
  const int M = x.dim(0), N = x.dim(1);
  Tensor out = Tensor::zeros({M, N});
  for (int i = 0; i < M; ++i) {
    const double* xi = x.ptr() + static_cast<size_t>(i) * N;
    double* oi = out.ptr() + static_cast<size_t>(i) * N;
    double mx = xi[0];
    for (int j = 1; j < N; ++j) mx = std::max(mx, xi[j]);
    double denom = 0.0;
    for (int j = 0; j < N; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      denom += oi[j];
    }
    const double inv = 1.0 / denom;
    for (int j = 0; j < N; ++j) oi[j] *= inv;
  }
  detail::check_finite(out, "softmax_rows");
  if (recording({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record([xn, on, M, N] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = grad_ptr(xn);
      for (int i = 0; i < M; ++i) {
        const double* yi = on->data.data() + static_cast<size_t>(i) * N;
        const double* gi = g + static_cast<size_t>(i) * N;
        double dot = 0.0;
        for (int j = 0; j < N; ++j) dot += gi[j] * yi[j];
        double* gxi = gx + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) gxi[j] += yi[j] * (gi[j] - dot);
      }
    });
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  if (x.rank() != 2) {
    throw DimensionError("l2_normalize_rows: expected rank 2, got " + shape_str(x.shape()));
  }
  const int M = x.dim(0), N = x.dim(1);
  Tensor out = Tensor::zeros({M, N});
  std::vector<double> norms(static_cast<size_t>(M));
  for (int i = 0; i < M; ++i) {
    const double* xi = x.ptr() + static_cast<size_t>(i) * N;
    double s = 0.0;
    for (int j = 0; j < N; ++j) s += xi[j] * xi[j];
    double n = std::max(std::sqrt(s), eps);
    norms[static_cast<size_t>(i)] = n;
    double* oi = out.ptr() + static_cast<size_t>(i) * N;
    const double inv = 1.0 / n;
    for (int j = 0; j < N; ++j) oi[j] = xi[j] * inv;
  }
  detail::check_finite(out, "l2_normalize_rows");
  if (recording({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record([xn, on, norms, M, N] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = grad_ptr(xn);
      for (int i = 0; i < M; ++i) {
        const double* xi = xn->data.data() + static_cast<size_t>(i) * N;
        const double* gi = g + static_cast<size_t>(i) * N;
        const double n = norms[static_cast<size_t>(i)];
        double dot = 0.0;
        for (int j = 0; j < N; ++j) dot += gi[j] * xi[j];
        const double inv = 1.0 / n;
        const double inv3 = inv * inv * inv;
        double* gxi = gx + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) gxi[j] += gi[j] * inv - xi[j] * dot * inv3;
      }
    });
  }
  return out;
}

// -------------------------------------------------------- convolution/pooling

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  int B, H, W, C;
  as_nhwc(x, "conv2d", B, H, W, C);
  if (w.rank() != 4 || w.dim(2) != C) {
    throw DimensionError("conv2d: weight " + shape_str(w.shape()) + " does not match input " +
                         shape_str(x.shape()));
  }
  const int KH = w.dim(0), KW = w.dim(1), CO = w.dim(3);
  if (KH % 2 == 0 || KW % 2 == 0) {
    throw DimensionError("conv2d: kernel extents must be odd for same padding, got " +
                         shape_str(w.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != CO) {
    throw DimensionError("conv2d: bias " + shape_str(b.shape()) + " does not match Cout " +
                         std::to_string(CO));
  }
  const int PH = KH / 2, PW = KW / 2;
  Tensor out = Tensor::zeros(with_channels(x, CO));
  for (int bb = 0; bb < B; ++bb) {
    const double* xb = x.ptr() + static_cast<size_t>(bb) * H * W * C;
    double* ob = out.ptr() + static_cast<size_t>(bb) * H * W * CO;
    for (int oy = 0; oy < H; ++oy) {
      for (int ox = 0; ox < W; ++ox) {
        double* op = ob + (static_cast<size_t>(oy) * W + ox) * CO;
        for (int co = 0; co < CO; ++co) op[co] = b.ptr()[co];
        for (int ky = 0; ky < KH; ++ky) {
          const int iy = oy + ky - PH;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < KW; ++kx) {
            const int ix = ox + kx - PW;
            if (ix < 0 || ix >= W) continue;
            const double* ip = xb + (static_cast<size_t>(iy) * W + ix) * C;
            const double* wp = w.ptr() + ((static_cast<size_t>(ky) * KW + kx) * C) * CO;
            for (int ci = 0; ci < C; ++ci) {
              const double a = ip[ci];
              const double* wr = wp + static_cast<size_t>(ci) * CO;
              for (int co = 0; co < CO; ++co) op[co] += a * wr[co];
            }
          }
        }
      }
    }
  }
  detail::check_finite(out, "conv2d");
  if (recording({&x, &w, &b})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
    GradTape::active()->record([xn, wn, bn, on, B, H, W, C, KH, KW, CO, PH, PW] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = xn->requires_grad ? grad_ptr(xn) : nullptr;
      double* gw = wn->requires_grad ? grad_ptr(wn) : nullptr;
      double* gb = bn->requires_grad ? grad_ptr(bn) : nullptr;
      for (int bb = 0; bb < B; ++bb) {
        const double* xb = xn->data.data() + static_cast<size_t>(bb) * H * W * C;
        const double* ob = g + static_cast<size_t>(bb) * H * W * CO;
        double* gxb = gx ? gx + static_cast<size_t>(bb) * H * W * C : nullptr;
        for (int oy = 0; oy < H; ++oy) {
          for (int ox = 0; ox < W; ++ox) {
            const double* gp = ob + (static_cast<size_t>(oy) * W + ox) * CO;
            if (gb) {
              for (int co = 0; co < CO; ++co) gb[co] += gp[co];
            }
            for (int ky = 0; ky < KH; ++ky) {
              const int iy = oy + ky - PH;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < KW; ++kx) {
                const int ix = ox + kx - PW;
                if (ix < 0 || ix >= W) continue;
                const double* ip = xb + (static_cast<size_t>(iy) * W + ix) * C;
                const size_t wbase = (static_cast<size_t>(ky) * KW + kx) * C * CO;
                if (gw) {
                  for (int ci = 0; ci < C; ++ci) {
                    const double a = ip[ci];
                    double* gwr = gw + wbase + static_cast<size_t>(ci) * CO;
                    for (int co = 0; co < CO; ++co) gwr[co] += a * gp[co];
                  }
                }
                if (gx) {
                  double* gip = gxb + (static_cast<size_t>(iy) * W + ix) * C;
                  const double* wp = wn->data.data() + wbase;
                  for (int ci = 0; ci < C; ++ci) {
                    const double* wr = wp + static_cast<size_t>(ci) * CO;
                    double acc = 0.0;
                    for (int co = 0; co < CO; ++co) acc += wr[co] * gp[co];
                    gip[ci] += acc;
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  int B, H, W, C;
  as_nhwc(x, "pointwise_conv", B, H, W, C);
  if (w.rank() != 2 || w.dim(0) != C) {
    throw DimensionError("pointwise_conv: weight " + shape_str(w.shape()) +
                         " does not match input channels of " + shape_str(x.shape()));
  }
  const int CO = w.dim(1);
  if (b.rank() != 1 || b.dim(0) != CO) {
    throw DimensionError("pointwise_conv: bias " + shape_str(b.shape()) + " does not match Cout " +
                         std::to_string(CO));
  }
  // A per-pixel linear map is a matmul over the flattened pixel axis.
  const size_t P = static_cast<size_t>(B) * H * W;
  Tensor flat = reshape(x, {static_cast<int>(P), C});
  Tensor y = add_bias(matmul(flat, w), b);
  return reshape(y, with_channels(x, CO));
}

Tensor depthwise_conv(const Tensor& x, const Tensor& k, const Tensor& b) {
  int B, H, W, C;
  as_nhwc(x, "depthwise_conv", B, H, W, C);
  if (k.rank() != 3 || k.dim(2) != C) {
    throw DimensionError("depthwise_conv: kernel " + shape_str(k.shape()) +
                         " does not match input channels of " + shape_str(x.shape()));
  }
  const int KH = k.dim(0), KW = k.dim(1);
  const bool supported =
      (KH == 3 && KW == 3) || (KH == 1 && KW == 7) || (KH == 7 && KW == 1) || (KH == 1 && KW == 1);
  if (!supported) {
    throw DimensionError("depthwise_conv: unsupported kernel shape " + shape_str(k.shape()) +
                         " (expected 3x3, 1x7, or 7x1)");
  }
  const bool has_bias = b.size() > 0;
  if (has_bias && (b.rank() != 1 || b.dim(0) != C)) {
    throw DimensionError("depthwise_conv: bias " + shape_str(b.shape()) + " does not match C " +
                         std::to_string(C));
  }
  const int PH = KH / 2, PW = KW / 2;
  Tensor out = Tensor::zeros(x.shape());
  for (int bb = 0; bb < B; ++bb) {
    const double* xb = x.ptr() + static_cast<size_t>(bb) * H * W * C;
    double* ob = out.ptr() + static_cast<size_t>(bb) * H * W * C;
    for (int oy = 0; oy < H; ++oy) {
      for (int ox = 0; ox < W; ++ox) {
        double* op = ob + (static_cast<size_t>(oy) * W + ox) * C;
        if (has_bias) {
          for (int c = 0; c < C; ++c) op[c] = b.ptr()[c];
        }
        for (int ky = 0; ky < KH; ++ky) {
          const int iy = oy + ky - PH;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < KW; ++kx) {
            const int ix = ox + kx - PW;
            if (ix < 0 || ix >= W) continue;
            const double* ip = xb + (static_cast<size_t>(iy) * W + ix) * C;
            const double* kp = k.ptr() + (static_cast<size_t>(ky) * KW + kx) * C;
            for (int c = 0; c < C; ++c) op[c] += ip[c] * kp[c];
          }
        }
      }
    }
  }
  detail::check_finite(out, "depthwise_conv");
  const bool rec = GradTape::active() &&
                   (x.requires_grad() || k.requires_grad() || (has_bias && b.requires_grad()));
  if (rec) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), kn = k.node(), on = out.node();
    NodePtr bn = has_bias ? b.node() : nullptr;
    GradTape::active()->record([xn, kn, bn, on, B, H, W, C, KH, KW, PH, PW] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = xn->requires_grad ? grad_ptr(xn) : nullptr;
      double* gk = kn->requires_grad ? grad_ptr(kn) : nullptr;
      double* gb = (bn && bn->requires_grad) ? grad_ptr(bn) : nullptr;
      for (int bb = 0; bb < B; ++bb) {
        const double* xb = xn->data.data() + static_cast<size_t>(bb) * H * W * C;
        const double* ob = g + static_cast<size_t>(bb) * H * W * C;
        double* gxb = gx ? gx + static_cast<size_t>(bb) * H * W * C : nullptr;
        for (int oy = 0; oy < H; ++oy) {
          for (int ox = 0; ox < W; ++ox) {
            const double* gp = ob + (static_cast<size_t>(oy) * W + ox) * C;
            if (gb) {
              for (int c = 0; c < C; ++c) gb[c] += gp[c];
            }
            for (int ky = 0; ky < KH; ++ky) {
              const int iy = oy + ky - PH;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < KW; ++kx) {
                const int ix = ox + kx - PW;
                if (ix < 0 || ix >= W) continue;
                const double* ip = xb + (static_cast<size_t>(iy) * W + ix) * C;
                const size_t kbase = (static_cast<size_t>(ky) * KW + kx) * C;
                if (gk) {
                  for (int c = 0; c < C; ++c) gk[kbase + c] += ip[c] * gp[c];
                }
                if (gxb) {
                  double* gip = gxb + (static_cast<size_t>(iy) * W + ix) * C;
                  const double* kp = kn->data.data() + kbase;
                  for (int c = 0; c < C; ++c) gip[c] += kp[c] * gp[c];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor avg_pool2(const Tensor& x) {
  int B, H, W, C;
  as_nhwc(x, "avg_pool2", B, H, W, C);
  if (H % 2 != 0 || W % 2 != 0) {
    throw DimensionError("avg_pool2: spatial extents must be even, got " + shape_str(x.shape()));
  }
  const int OH = H / 2, OW = W / 2;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 3] = OH;
  out_shape[out_shape.size() - 2] = OW;
  Tensor out = Tensor::zeros(out_shape);
  for (int bb = 0; bb < B; ++bb) {
    const double* xb = x.ptr() + static_cast<size_t>(bb) * H * W * C;
    double* ob = out.ptr() + static_cast<size_t>(bb) * OH * OW * C;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        double* op = ob + (static_cast<size_t>(oy) * OW + ox) * C;
        const double* p00 = xb + (static_cast<size_t>(2 * oy) * W + 2 * ox) * C;
        const double* p01 = p00 + C;
        const double* p10 = p00 + static_cast<size_t>(W) * C;
        const double* p11 = p10 + C;
        for (int c = 0; c < C; ++c) op[c] = 0.25 * (p00[c] + p01[c] + p10[c] + p11[c]);
      }
    }
  }
  detail::check_finite(out, "avg_pool2");
  if (recording({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record([xn, on, B, H, W, C, OH, OW] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = grad_ptr(xn);
      for (int bb = 0; bb < B; ++bb) {
        const double* ob = g + static_cast<size_t>(bb) * OH * OW * C;
        double* gxb = gx + static_cast<size_t>(bb) * H * W * C;
        for (int oy = 0; oy < OH; ++oy) {
          for (int ox = 0; ox < OW; ++ox) {
            const double* gp = ob + (static_cast<size_t>(oy) * OW + ox) * C;
            double* p00 = gxb + (static_cast<size_t>(2 * oy) * W + 2 * ox) * C;
            double* p01 = p00 + C;
            double* p10 = p00 + static_cast<size_t>(W) * C;
            double* p11 = p10 + C;
            for (int c = 0; c < C; ++c) {
              const double v = 0.25 * gp[c];
              p00[c] += v;
              p01[c] += v;
              p10[c] += v;
              p11[c] += v;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  int B, H, W, C;
  as_nhwc(x, "global_avg_pool", B, H, W, C);
  const bool batched = x.rank() == 4;
  Tensor out = batched ? Tensor::zeros({B, C}) : Tensor::zeros({C});
  const double inv = 1.0 / (static_cast<double>(H) * W);
  for (int bb = 0; bb < B; ++bb) {
    const double* xb = x.ptr() + static_cast<size_t>(bb) * H * W * C;
    double* ob = out.ptr() + static_cast<size_t>(bb) * C;
    for (int p = 0; p < H * W; ++p) {
      const double* ip = xb + static_cast<size_t>(p) * C;
      for (int c = 0; c < C; ++c) ob[c] += ip[c];
    }
    for (int c = 0; c < C; ++c) ob[c] *= inv;
  }
  detail::check_finite(out, "global_avg_pool");
  if (recording({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record([xn, on, B, H, W, C, inv] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = grad_ptr(xn);
      for (int bb = 0; bb < B; ++bb) {
        const double* gp = g + static_cast<size_t>(bb) * C;
        double* gxb = gx + static_cast<size_t>(bb) * H * W * C;
        for (int p = 0; p < H * W; ++p) {
          double* ip = gxb + static_cast<size_t>(p) * C;
          for (int c = 0; c < C; ++c) ip[c] += gp[c] * inv;
        }
      }
    });
  }
  return out;
}

Tensor channel_mean(const Tensor& x) {
  int B, H, W, C;
  as_nhwc(x, "channel_mean", B, H, W, C);
  Tensor out = Tensor::zeros(with_channels(x, 1));
  const size_t P = static_cast<size_t>(B) * H * W;
  const double inv = 1.0 / C;
  for (size_t p = 0; p < P; ++p) {
    const double* ip = x.ptr() + p * C;
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += ip[c];
    out.ptr()[p] = s * inv;
  }
  detail::check_finite(out, "channel_mean");
  if (recording({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record([xn, on, P, C, inv] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = grad_ptr(xn);
      for (size_t p = 0; p < P; ++p) {
        double* ip = gx + p * C;
        for (int c = 0; c < C; ++c) ip[c] += g[p] * inv;
      }
    });
  }
  return out;
}

Tensor channel_max(const Tensor& x) {
  int B, H, W, C;
  as_nhwc(x, "channel_max", B, H, W, C);
  Tensor out = Tensor::zeros(with_channels(x, 1));
  const size_t P = static_cast<size_t>(B) * H * W;
  std::vector<int> argmax(P);
  for (size_t p = 0; p < P; ++p) {
    const double* ip = x.ptr() + p * C;
    int best = 0;
    for (int c = 1; c < C; ++c) {
      if (ip[c] > ip[best]) best = c;
    }
    argmax[p] = best;
    out.ptr()[p] = ip[best];
  }
  detail::check_finite(out, "channel_max");
  if (recording({&x})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), on = out.node();
    GradTape::active()->record([xn, on, argmax, P, C] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gx = grad_ptr(xn);
      for (size_t p = 0; p < P; ++p) gx[p * C + argmax[p]] += g[p];
    });
  }
  return out;
}

// -------------------------------------------------------------- normalization

void append_params(BatchNormState& bn, const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".gamma", bn.gamma});
  out.push_back({prefix + ".beta", bn.beta});
}

void append_buffers(BatchNormState& bn, const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".running_mean", bn.running_mean});
  out.push_back({prefix + ".running_var", bn.running_var});
}

BatchNormState BatchNormState::init(int channels) {
  BatchNormState bn;
  bn.gamma = Tensor::full({channels}, 1.0);
  bn.beta = Tensor::zeros({channels});
  bn.running_mean = Tensor::zeros({channels});
  bn.running_var = Tensor::full({channels}, 1.0);
  return bn;
}

Tensor batchnorm(const Tensor& x, BatchNormState& bn, bool training, bool update_running,
                 double eps, double momentum) {
  int C = x.shape().back();
  if (x.rank() != 2 && x.rank() != 3 && x.rank() != 4) {
    throw DimensionError("batchnorm: expected rank 2..4, got " + shape_str(x.shape()));
  }
  if (bn.gamma.dim(0) != C) {
    throw DimensionError("batchnorm: state for " + std::to_string(bn.gamma.dim(0)) +
                         " channels applied to " + shape_str(x.shape()));
  }
  const size_t M = x.size() / static_cast<size_t>(C);  // samples per channel
  Tensor out = Tensor::zeros(x.shape());

  std::vector<double> mean(static_cast<size_t>(C), 0.0);
  std::vector<double> var(static_cast<size_t>(C), 0.0);
  if (training) {
    if (M < 2) throw NumericError("batchnorm: training mode needs at least 2 samples per channel");
    for (size_t r = 0; r < M; ++r) {
      const double* ip = x.ptr() + r * C;
      for (int c = 0; c < C; ++c) mean[static_cast<size_t>(c)] += ip[c];
    }
    for (int c = 0; c < C; ++c) mean[static_cast<size_t>(c)] /= static_cast<double>(M);
    for (size_t r = 0; r < M; ++r) {
      const double* ip = x.ptr() + r * C;
      for (int c = 0; c < C; ++c) {
        const double d = ip[c] - mean[static_cast<size_t>(c)];
        var[static_cast<size_t>(c)] += d * d;
      }
    }
    for (int c = 0; c < C; ++c) var[static_cast<size_t>(c)] /= static_cast<double>(M);
    if (update_running) {
      // unbiased variance in the running buffer, conventional
      const double unb = static_cast<double>(M) / static_cast<double>(M - 1);
      for (int c = 0; c < C; ++c) {
        bn.running_mean.ptr()[c] =
            (1.0 - momentum) * bn.running_mean.ptr()[c] + momentum * mean[static_cast<size_t>(c)];
        bn.running_var.ptr()[c] = (1.0 - momentum) * bn.running_var.ptr()[c] +
                                  momentum * var[static_cast<size_t>(c)] * unb;
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = bn.running_mean.ptr()[c];
      var[static_cast<size_t>(c)] = bn.running_var.ptr()[c];
    }
  }

  std::vector<double> inv_std(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);

  for (size_t r = 0; r < M; ++r) {
    const double* ip = x.ptr() + r * C;
    double* op = out.ptr() + r * C;
    for (int c = 0; c < C; ++c) {
      const size_t cc = static_cast<size_t>(c);
      op[c] = bn.gamma.ptr()[c] * (ip[c] - mean[cc]) * inv_std[cc] + bn.beta.ptr()[c];
    }
  }
  detail::check_finite(out, "batchnorm");

  if (recording({&x, &bn.gamma, &bn.beta})) {
    out.set_requires_grad(true);
    NodePtr xn = x.node(), gn = bn.gamma.node(), btn = bn.beta.node(), on = out.node();
    GradTape::active()->record([xn, gn, btn, on, mean, inv_std, M, C, training] {
      const double* g = out_grad(on);
      if (!g) return;
      // xhat is recomputed from the captured statistics
      std::vector<double> sum_dy(static_cast<size_t>(C), 0.0);
      std::vector<double> sum_dy_xhat(static_cast<size_t>(C), 0.0);
      for (size_t r = 0; r < M; ++r) {
        const double* ip = xn->data.data() + r * C;
        const double* gp = g + r * C;
        for (int c = 0; c < C; ++c) {
          const size_t cc = static_cast<size_t>(c);
          const double xhat = (ip[c] - mean[cc]) * inv_std[cc];
          sum_dy[cc] += gp[c];
          sum_dy_xhat[cc] += gp[c] * xhat;
        }
      }
      if (gn->requires_grad) {
        double* gg = grad_ptr(gn);
        for (int c = 0; c < C; ++c) gg[c] += sum_dy_xhat[static_cast<size_t>(c)];
      }
      if (btn->requires_grad) {
        double* gb = grad_ptr(btn);
        for (int c = 0; c < C; ++c) gb[c] += sum_dy[static_cast<size_t>(c)];
      }
      if (xn->requires_grad) {
        double* gx = grad_ptr(xn);
        const double invM = 1.0 / static_cast<double>(M);
        for (size_t r = 0; r < M; ++r) {
          const double* ip = xn->data.data() + r * C;
          const double* gp = g + r * C;
          double* gxp = gx + r * C;
          for (int c = 0; c < C; ++c) {
            const size_t cc = static_cast<size_t>(c);
            const double gamma = gn->data[cc];
            if (training) {
              const double xhat = (ip[c] - mean[cc]) * inv_std[cc];
              gxp[c] += gamma * inv_std[cc] *
                        (gp[c] - invM * sum_dy[cc] - invM * xhat * sum_dy_xhat[cc]);
            } else {
              gxp[c] += gamma * inv_std[cc] * gp[c];
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace catface
