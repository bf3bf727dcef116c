#pragma once

// Reference implementations used only by tests. Everything here is written
// as plain loops over raw buffers, with long double accumulation where the
// library uses double, so agreement is evidence rather than tautology.

#include <cmath>
#include <vector>

#include "../src/tensor.hpp"

namespace oracles {

using catface::Shape;
using catface::Tensor;

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return 1e300;
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.ptr()[i] - b.ptr()[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a.ptr()[i] != b.ptr()[i]) return false;
  }
  return true;
}

// Classic i,j,k triple loop with a local accumulator. For each output
// element the summands arrive in the same ascending-k order as the library's
// i,k,j loop, so the two must agree bit for bit.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out = Tensor::zeros({M, N});
  for (int i = 0; i < M; ++i) {
    for (int j = 0; j < N; ++j) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) {
        acc += a.ptr()[static_cast<size_t>(i) * K + k] * b.ptr()[static_cast<size_t>(k) * N + j];
      }
      out.ptr()[static_cast<size_t>(i) * N + j] = acc;
    }
  }
  return out;
}

inline Tensor softmax_rows(const Tensor& x) {
  const int M = x.dim(0), N = x.dim(1);
  Tensor out = Tensor::zeros({M, N});
  for (int i = 0; i < M; ++i) {
    const double* xi = x.ptr() + static_cast<size_t>(i) * N;
    long double mx = xi[0];
    for (int j = 1; j < N; ++j) mx = std::max<long double>(mx, xi[j]);
    long double denom = 0.0L;
    std::vector<long double> e(static_cast<size_t>(N));
    for (int j = 0; j < N; ++j) {
      e[static_cast<size_t>(j)] = expl(static_cast<long double>(xi[j]) - mx);
      denom += e[static_cast<size_t>(j)];
    }
    for (int j = 0; j < N; ++j) {
      out.ptr()[static_cast<size_t>(i) * N + j] = static_cast<double>(e[static_cast<size_t>(j)] / denom);
    }
  }
  return out;
}

inline Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12) {
  const int M = x.dim(0), N = x.dim(1);
  Tensor out = Tensor::zeros({M, N});
  for (int i = 0; i < M; ++i) {
    const double* xi = x.ptr() + static_cast<size_t>(i) * N;
    long double s = 0.0L;
    for (int j = 0; j < N; ++j) s += static_cast<long double>(xi[j]) * xi[j];
    long double n = sqrtl(s);
    if (n < eps) n = eps;
    for (int j = 0; j < N; ++j) {
      out.ptr()[static_cast<size_t>(i) * N + j] = static_cast<double>(xi[j] / n);
    }
  }
  return out;
}

// Zero same padding, stride 1, accumulation over (ci, ky, kx) which differs
// from the library's (ky, kx, ci) nesting.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const bool batched = x.rank() == 4;
  const int B = batched ? x.dim(0) : 1;
  const int H = batched ? x.dim(1) : x.dim(0);
  const int W = batched ? x.dim(2) : x.dim(1);
  const int C = batched ? x.dim(3) : x.dim(2);
  const int KH = w.dim(0), KW = w.dim(1), CO = w.dim(3);
  Shape out_shape = x.shape();
  out_shape.back() = CO;
  Tensor out = Tensor::zeros(out_shape);
  for (int bb = 0; bb < B; ++bb) {
    for (int oy = 0; oy < H; ++oy) {
      for (int ox = 0; ox < W; ++ox) {
        for (int co = 0; co < CO; ++co) {
          long double acc = b.ptr()[co];
          for (int ci = 0; ci < C; ++ci) {
            for (int ky = 0; ky < KH; ++ky) {
              for (int kx = 0; kx < KW; ++kx) {
                const int iy = oy + ky - KH / 2;
                const int ix = ox + kx - KW / 2;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                const double xv =
                    x.ptr()[((static_cast<size_t>(bb) * H + iy) * W + ix) * C + ci];
                const double wv =
                    w.ptr()[((static_cast<size_t>(ky) * KW + kx) * C + ci) * CO + co];
                acc += static_cast<long double>(xv) * wv;
              }
            }
          }
          out.ptr()[((static_cast<size_t>(bb) * H + oy) * W + ox) * CO + co] =
              static_cast<double>(acc);
        }
      }
    }
  }
  return out;
}

inline Tensor depthwise_conv(const Tensor& x, const Tensor& k) {
  const bool batched = x.rank() == 4;
  const int B = batched ? x.dim(0) : 1;
  const int H = batched ? x.dim(1) : x.dim(0);
  const int W = batched ? x.dim(2) : x.dim(1);
  const int C = batched ? x.dim(3) : x.dim(2);
  const int KH = k.dim(0), KW = k.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  for (int bb = 0; bb < B; ++bb) {
    for (int oy = 0; oy < H; ++oy) {
      for (int ox = 0; ox < W; ++ox) {
        for (int c = 0; c < C; ++c) {
          long double acc = 0.0L;
          for (int ky = 0; ky < KH; ++ky) {
            for (int kx = 0; kx < KW; ++kx) {
              const int iy = oy + ky - KH / 2;
              const int ix = ox + kx - KW / 2;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += static_cast<long double>(
                         x.ptr()[((static_cast<size_t>(bb) * H + iy) * W + ix) * C + c]) *
                     k.ptr()[(static_cast<size_t>(ky) * KW + kx) * C + c];
            }
          }
          out.ptr()[((static_cast<size_t>(bb) * H + oy) * W + ox) * C + c] =
              static_cast<double>(acc);
        }
      }
    }
  }
  return out;
}

inline Tensor avg_pool2(const Tensor& x) {
  const bool batched = x.rank() == 4;
  const int B = batched ? x.dim(0) : 1;
  const int H = batched ? x.dim(1) : x.dim(0);
  const int W = batched ? x.dim(2) : x.dim(1);
  const int C = batched ? x.dim(3) : x.dim(2);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 3] = H / 2;
  out_shape[out_shape.size() - 2] = W / 2;
  Tensor out = Tensor::zeros(out_shape);
  for (int bb = 0; bb < B; ++bb) {
    for (int oy = 0; oy < H / 2; ++oy) {
      for (int ox = 0; ox < W / 2; ++ox) {
        for (int c = 0; c < C; ++c) {
          long double acc = 0.0L;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              acc += x.ptr()[((static_cast<size_t>(bb) * H + 2 * oy + dy) * W + 2 * ox + dx) * C + c];
            }
          }
          out.ptr()[((static_cast<size_t>(bb) * (H / 2) + oy) * (W / 2) + ox) * C + c] =
              static_cast<double>(acc / 4.0L);
        }
      }
    }
  }
  return out;
}

// Training-mode batch normalization with long double statistics.
inline Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              double eps = 1e-5) {
  const int C = x.shape().back();
  const size_t M = x.size() / static_cast<size_t>(C);
  Tensor out = Tensor::zeros(x.shape());
  for (int c = 0; c < C; ++c) {
    long double mean = 0.0L;
    for (size_t r = 0; r < M; ++r) mean += x.ptr()[r * C + c];
    mean /= static_cast<long double>(M);
    long double var = 0.0L;
    for (size_t r = 0; r < M; ++r) {
      const long double d = x.ptr()[r * C + c] - mean;
      var += d * d;
    }
    var /= static_cast<long double>(M);
    const long double inv = 1.0L / sqrtl(var + eps);
    for (size_t r = 0; r < M; ++r) {
      out.ptr()[r * C + c] = static_cast<double>(
          gamma.ptr()[c] * (x.ptr()[r * C + c] - mean) * inv + beta.ptr()[c]);
    }
  }
  return out;
}

inline double gelu_scalar(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

// Row-softmax in long double over an arbitrary matrix held as a flat vector.
inline std::vector<long double> softmax_rows_ld(const std::vector<long double>& s, int rows,
                                                int cols) {
  std::vector<long double> out(s.size());
  for (int i = 0; i < rows; ++i) {
    long double mx = s[static_cast<size_t>(i) * cols];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, s[static_cast<size_t>(i) * cols + j]);
    long double denom = 0.0L;
    for (int j = 0; j < cols; ++j) {
      out[static_cast<size_t>(i) * cols + j] = expl(s[static_cast<size_t>(i) * cols + j] - mx);
      denom += out[static_cast<size_t>(i) * cols + j];
    }
    for (int j = 0; j < cols; ++j) out[static_cast<size_t>(i) * cols + j] /= denom;
  }
  return out;
}

// Explicit-score spatial attention: A = softmax(Q·Kᵀ/√C)·V with Q=x·Wq etc.
// Queries and keys may come from different token matrices (cross attention).
inline Tensor attention(const Tensor& xq, const Tensor& xkv, const Tensor& wq, const Tensor& wk,
                        const Tensor& wv) {
  const int N = xq.dim(0), C = wq.dim(1);
  auto project = [&](const Tensor& x, const Tensor& w) {
    std::vector<long double> p(static_cast<size_t>(N) * C);
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < C; ++j) {
        long double acc = 0.0L;
        for (int k = 0; k < x.dim(1); ++k) {
          acc += static_cast<long double>(x.ptr()[static_cast<size_t>(i) * x.dim(1) + k]) *
                 w.ptr()[static_cast<size_t>(k) * C + j];
        }
        p[static_cast<size_t>(i) * C + j] = acc;
      }
    }
    return p;
  };
  auto q = project(xq, wq);
  auto k = project(xkv, wk);
  auto v = project(xkv, wv);
  const long double temp = 1.0L / sqrtl(static_cast<long double>(C));
  std::vector<long double> scores(static_cast<size_t>(N) * N);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      long double acc = 0.0L;
      for (int c = 0; c < C; ++c) {
        acc += q[static_cast<size_t>(i) * C + c] * k[static_cast<size_t>(j) * C + c];
      }
      scores[static_cast<size_t>(i) * N + j] = acc * temp;
    }
  }
  auto w8 = softmax_rows_ld(scores, N, N);
  Tensor out = Tensor::zeros({N, C});
  for (int i = 0; i < N; ++i) {
    for (int c = 0; c < C; ++c) {
      long double acc = 0.0L;
      for (int j = 0; j < N; ++j) {
        acc += w8[static_cast<size_t>(i) * N + j] * v[static_cast<size_t>(j) * C + c];
      }
      out.ptr()[static_cast<size_t>(i) * C + c] = static_cast<double>(acc);
    }
  }
  return out;
}

// Channel-grouped attention on one group: given already-projected q,k,v
// (N×C_c each), output = (softmax(qᵀk/√C_c)·vᵀ)ᵀ.
inline Tensor channel_group_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const int N = q.dim(0), CC = q.dim(1);
  const long double temp = 1.0L / sqrtl(static_cast<long double>(CC));
  std::vector<long double> scores(static_cast<size_t>(CC) * CC);
  for (int a = 0; a < CC; ++a) {
    for (int b = 0; b < CC; ++b) {
      long double dot = 0.0L;
      for (int n = 0; n < N; ++n) {
        dot += static_cast<long double>(q.ptr()[static_cast<size_t>(n) * CC + a]) *
               k.ptr()[static_cast<size_t>(n) * CC + b];
      }
      scores[static_cast<size_t>(a) * CC + b] = dot * temp;
    }
  }
  auto w8 = softmax_rows_ld(scores, CC, CC);
  Tensor out = Tensor::zeros({N, CC});
  for (int a = 0; a < CC; ++a) {
    for (int n = 0; n < N; ++n) {
      long double acc = 0.0L;
      for (int b = 0; b < CC; ++b) {
        acc += w8[static_cast<size_t>(a) * CC + b] *
               v.ptr()[static_cast<size_t>(n) * CC + b];
      }
      out.ptr()[static_cast<size_t>(n) * CC + a] = static_cast<double>(acc);
    }
  }
  return out;
}

// Channel mean/max pooling, 3×3 conv to one plane, sigmoid.
inline Tensor cbam_map(const Tensor& f, const Tensor& w, const Tensor& b) {
  const int H = f.dim(0), W = f.dim(1), C = f.dim(2);
  std::vector<long double> planes(static_cast<size_t>(H) * W * 2);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      long double mean = 0.0L;
      long double mx = f.ptr()[(static_cast<size_t>(y) * W + x) * C];
      for (int c = 0; c < C; ++c) {
        const double v = f.ptr()[(static_cast<size_t>(y) * W + x) * C + c];
        mean += v;
        mx = std::max<long double>(mx, v);
      }
      planes[(static_cast<size_t>(y) * W + x) * 2 + 0] = mean / C;
      planes[(static_cast<size_t>(y) * W + x) * 2 + 1] = mx;
    }
  }
  Tensor out = Tensor::zeros({H, W, 1});
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      long double acc = b.ptr()[0];
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int iy = y + ky - 1, ix = x + kx - 1;
          if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
          for (int c = 0; c < 2; ++c) {
            acc += planes[(static_cast<size_t>(iy) * W + ix) * 2 + c] *
                   w.ptr()[(static_cast<size_t>(ky) * 3 + kx) * 2 + c];
          }
        }
      }
      out.ptr()[static_cast<size_t>(y) * W + x] =
          static_cast<double>(1.0L / (1.0L + expl(-acc)));
    }
  }
  return out;
}

}  // namespace oracles
