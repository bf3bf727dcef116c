#include "losses.hpp"

#include <algorithm>
#include <cmath>

#include "errors.hpp"
#include "ops.hpp"

namespace catface {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

double* grad_ptr(const NodePtr& n) {
  if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
  return n->grad.data();
}

const double* out_grad(const NodePtr& n) { return n->grad.empty() ? nullptr : n->grad.data(); }

constexpr double kCosClamp = 1.0 - 1e-7;
constexpr double kProbClamp = 1e-7;

// Per-row softmax probabilities of a logit matrix, numerically shifted.
std::vector<double> row_softmax(const double* logits, int rows, int cols) {
  std::vector<double> p(static_cast<size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i) {
    const double* li = logits + static_cast<size_t>(i) * cols;
    double mx = li[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, li[j]);
    double denom = 0.0;
    double* pi = p.data() + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) {
      pi[j] = std::exp(li[j] - mx);
      denom += pi[j];
    }
    for (int j = 0; j < cols; ++j) pi[j] /= denom;
  }
  return p;
}

}  // namespace

Tensor ce_mean_logits(const Tensor& logits, const std::vector<int>& y) {
  if (logits.rank() != 2) {
    throw DimensionError("ce_mean_logits: expected B×N logits, got " + shape_str(logits.shape()));
  }
  const int B = logits.dim(0), N = logits.dim(1);
  if (static_cast<int>(y.size()) != B) {
    throw DimensionError("ce_mean_logits: " + std::to_string(y.size()) + " labels for batch " +
                         std::to_string(B));
  }
  for (int yi : y) {
    if (yi < 0 || yi >= N) {
      throw DataError("ce_mean_logits: class index " + std::to_string(yi) + " outside [0, " +
                      std::to_string(N) + ")");
    }
  }
  std::vector<double> p = row_softmax(logits.ptr(), B, N);
  double loss = 0.0;
  for (int i = 0; i < B; ++i) {
    loss -= std::log(std::max(p[static_cast<size_t>(i) * N + y[static_cast<size_t>(i)]], 1e-300));
  }
  Tensor out = Tensor::scalar(loss / B);
  detail::check_finite(out, "ce_mean_logits");
  if (GradTape::active() && logits.requires_grad()) {
    out.set_requires_grad(true);
    NodePtr ln = logits.node(), on = out.node();
    GradTape::active()->record([ln, on, p, y, B, N] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gl = grad_ptr(ln);
      const double scale = g[0] / B;
      for (int i = 0; i < B; ++i) {
        for (int j = 0; j < N; ++j) {
          const double onehot = (j == y[static_cast<size_t>(i)]) ? 1.0 : 0.0;
          gl[static_cast<size_t>(i) * N + j] += scale * (p[static_cast<size_t>(i) * N + j] - onehot);
        }
      }
    });
  }
  return out;
}

Tensor softmax_ce(const Tensor& z, const Tensor& W, const Tensor& b, int y) {
  if (z.rank() != 1 || W.rank() != 2 || z.dim(0) != W.dim(0)) {
    throw DimensionError("softmax_ce: embedding " + shape_str(z.shape()) +
                         " does not match weights " + shape_str(W.shape()));
  }
  Tensor logits = add_bias(matmul(reshape(z, {1, z.dim(0)}), W), b);
  return ce_mean_logits(logits, {y});
}

Tensor normalized_quality(const Tensor& norms, const AdaFaceConfig& cfg, AdaFaceStats* stats) {
  if (norms.rank() != 1) {
    throw DimensionError("normalized_quality: expected a norm vector, got " +
                         shape_str(norms.shape()));
  }
  const int B = norms.dim(0);
  double mu = 0.0, sigma = 0.0;
  if (cfg.ema_stats && stats && stats->initialized) {
    mu = stats->mu;
    sigma = stats->sigma;
  }
  double batch_mu = 0.0;
  for (int i = 0; i < B; ++i) batch_mu += norms.ptr()[i];
  batch_mu /= B;
  double batch_var = 0.0;
  for (int i = 0; i < B; ++i) {
    const double d = norms.ptr()[i] - batch_mu;
    batch_var += d * d;
  }
  const double batch_sigma = std::sqrt(batch_var / B);
  if (cfg.ema_stats && stats) {
    if (!stats->initialized) {
      stats->mu = batch_mu;
      stats->sigma = batch_sigma;
      stats->initialized = true;
    } else {
      stats->mu = (1.0 - cfg.ema_momentum) * stats->mu + cfg.ema_momentum * batch_mu;
      stats->sigma = (1.0 - cfg.ema_momentum) * stats->sigma + cfg.ema_momentum * batch_sigma;
    }
    mu = stats->mu;
    sigma = stats->sigma;
  } else {
    if (B < 2) throw DataError("normalized_quality: per-batch statistics need at least 2 samples");
    mu = batch_mu;
    sigma = batch_sigma;
  }
  sigma = std::max(sigma, 1e-6);
  Tensor out = Tensor::zeros({B});
  for (int i = 0; i < B; ++i) {
    out.ptr()[i] = std::clamp((norms.ptr()[i] - mu) / (sigma / cfg.h), -1.0, 1.0);
  }
  return out;
}

double adaface_g_angle(double zhat, const AdaFaceConfig& cfg) { return -cfg.m * zhat; }
double adaface_g_add(double zhat, const AdaFaceConfig& cfg) { return cfg.m * zhat + cfg.m; }

double adaface_margin(double theta_y, double zhat, const AdaFaceConfig& cfg) {
  return cfg.s * (std::cos(theta_y + adaface_g_angle(zhat, cfg)) - adaface_g_add(zhat, cfg));
}

namespace {

// Margin logits from a cosine matrix: target entries pass through the
// angular+additive margin, the rest are plainly scaled. Backward multiplies
// by s, with the target column picking up the arccos chain factor
// cos(g) + (c/√(1-c²))·sin(g).
Tensor adaface_logits(const Tensor& cosines, const std::vector<int>& y, const Tensor& zhat,
                      const AdaFaceConfig& cfg) {
  const int B = cosines.dim(0), N = cosines.dim(1);
  Tensor out = Tensor::zeros({B, N});
  std::vector<double> clamped(static_cast<size_t>(B));
  for (int i = 0; i < B; ++i) {
    const double zq = zhat.ptr()[i];
    const double g_angle = adaface_g_angle(zq, cfg);
    const double g_add = adaface_g_add(zq, cfg);
    for (int j = 0; j < N; ++j) {
      const double c = cosines.ptr()[static_cast<size_t>(i) * N + j];
      if (j == y[static_cast<size_t>(i)]) {
        const double cc = std::clamp(c, -kCosClamp, kCosClamp);
        clamped[static_cast<size_t>(i)] = cc;
        out.ptr()[static_cast<size_t>(i) * N + j] =
            cfg.s * (std::cos(std::acos(cc) + g_angle) - g_add);
      } else {
        out.ptr()[static_cast<size_t>(i) * N + j] = cfg.s * c;
      }
    }
  }
  detail::check_finite(out, "adaface_logits");
  if (GradTape::active() && cosines.requires_grad()) {
    out.set_requires_grad(true);
    NodePtr cn = cosines.node(), on = out.node();
    std::vector<double> zq(zhat.data());
    const double s = cfg.s, m = cfg.m;
    GradTape::active()->record([cn, on, y, zq, clamped, s, m, B, N] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gc = grad_ptr(cn);
      for (int i = 0; i < B; ++i) {
        const double g_angle = -m * zq[static_cast<size_t>(i)];
        for (int j = 0; j < N; ++j) {
          const size_t idx = static_cast<size_t>(i) * N + j;
          if (j == y[static_cast<size_t>(i)]) {
            const double c = clamped[static_cast<size_t>(i)];
            const double chain =
                std::cos(g_angle) + (c / std::sqrt(1.0 - c * c)) * std::sin(g_angle);
            gc[idx] += g[idx] * s * chain;
          } else {
            gc[idx] += g[idx] * s;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor adaface_loss_with_quality(const Tensor& z, const Tensor& W, const std::vector<int>& y,
                                 const Tensor& zhat, const AdaFaceConfig& cfg) {
  if (z.rank() != 2 || W.rank() != 2 || z.dim(1) != W.dim(0)) {
    throw DimensionError("adaface_loss: embeddings " + shape_str(z.shape()) +
                         " do not match prototypes " + shape_str(W.shape()));
  }
  if (static_cast<int>(y.size()) != z.dim(0) || zhat.dim(0) != z.dim(0)) {
    throw DimensionError("adaface_loss: batch size mismatch between z, labels, and quality");
  }
  // unit prototypes via row normalization of Wᵀ
  Tensor w_unit = transpose(l2_normalize_rows(transpose(W)));
  Tensor cosines = matmul(l2_normalize_rows(z), w_unit);
  return ce_mean_logits(adaface_logits(cosines, y, zhat, cfg), y);
}

Tensor adaface_loss(const Tensor& z, const Tensor& W, const std::vector<int>& y,
                    const AdaFaceConfig& cfg, AdaFaceStats* stats) {
  if (z.rank() != 2) {
    throw DimensionError("adaface_loss: expected B×d embeddings, got " + shape_str(z.shape()));
  }
  const int B = z.dim(0), d = z.dim(1);
  Tensor norms = Tensor::zeros({B});
  for (int i = 0; i < B; ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      const double v = z.ptr()[static_cast<size_t>(i) * d + j];
      s += v * v;
    }
    norms.ptr()[i] = std::sqrt(s);
  }
  Tensor zhat = normalized_quality(norms, cfg, stats);
  return adaface_loss_with_quality(z, W, y, zhat, cfg);
}

Tensor sb_loss(const Tensor& p, const Tensor& a, const SbWeights& w) {
  if (p.rank() != 2 || p.dim(1) != kNumAttributes) {
    throw DimensionError("sb_loss: expected B×" + std::to_string(kNumAttributes) +
                         " probabilities, got " + shape_str(p.shape()));
  }
  if (a.shape() != p.shape()) {
    throw DimensionError("sb_loss: targets " + shape_str(a.shape()) +
                         " do not match probabilities " + shape_str(p.shape()));
  }
  const int B = p.dim(0);
  const auto lambda = w.attribute_weights();
  for (double l : lambda) {
    if (l < 0.0) throw ConfigError("sb_loss: negative attribute weight");
  }
  std::vector<double> pc(p.size());
  double loss = 0.0;
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < kNumAttributes; ++j) {
      const size_t idx = static_cast<size_t>(i) * kNumAttributes + j;
      pc[idx] = std::clamp(p.ptr()[idx], kProbClamp, 1.0 - kProbClamp);
      const double t = a.ptr()[idx];
      loss -= lambda[static_cast<size_t>(j)] *
              (t * std::log(pc[idx]) + (1.0 - t) * std::log(1.0 - pc[idx]));
    }
  }
  Tensor out = Tensor::scalar(loss / B);
  detail::check_finite(out, "sb_loss");
  if (GradTape::active() && p.requires_grad()) {
    out.set_requires_grad(true);
    NodePtr pn = p.node(), on = out.node();
    std::vector<double> targets(a.data());
    GradTape::active()->record([pn, on, pc, targets, lambda, B] {
      const double* g = out_grad(on);
      if (!g) return;
      double* gp = grad_ptr(pn);
      const double scale = g[0] / B;
      for (int i = 0; i < B; ++i) {
        for (int j = 0; j < kNumAttributes; ++j) {
          const size_t idx = static_cast<size_t>(i) * kNumAttributes + j;
          const double raw = pn->data[idx];
          if (raw < kProbClamp || raw > 1.0 - kProbClamp) continue;  // clamped flat
          gp[idx] += scale * lambda[static_cast<size_t>(j)] * (pc[idx] - targets[idx]) /
                     (pc[idx] * (1.0 - pc[idx]));
        }
      }
    });
  }
  return out;
}

Tensor cosine_sim(const Tensor& u, const Tensor& v) {
  if (u.size() != v.size()) {
    throw DimensionError("cosine_sim: sizes differ, " + shape_str(u.shape()) + " vs " +
                         shape_str(v.shape()));
  }
  const size_t n = u.size();
  double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    dot += u.ptr()[i] * v.ptr()[i];
    nu2 += u.ptr()[i] * u.ptr()[i];
    nv2 += v.ptr()[i] * v.ptr()[i];
  }
  const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
  if (nu < 1e-12 || nv < 1e-12) {
    throw NumericError("cosine_sim: degenerate input with near-zero norm");
  }
  const double value = dot / (nu * nv);
  Tensor out = Tensor::scalar(value);
  detail::check_finite(out, "cosine_sim");
  if (GradTape::active() && (u.requires_grad() || v.requires_grad())) {
    out.set_requires_grad(true);
    NodePtr un = u.node(), vn = v.node(), on = out.node();
    GradTape::active()->record([un, vn, on, nu, nv, value, n] {
      const double* g = out_grad(on);
      if (!g) return;
      const double inv = 1.0 / (nu * nv);
      if (un->requires_grad) {
        double* gu = grad_ptr(un);
        for (size_t i = 0; i < n; ++i) {
          gu[i] += g[0] * (vn->data[i] * inv - un->data[i] * value / (nu * nu));
        }
      }
      if (vn->requires_grad) {
        double* gv = grad_ptr(vn);
        for (size_t i = 0; i < n; ++i) {
          gv[i] += g[0] * (un->data[i] * inv - vn->data[i] * value / (nv * nv));
        }
      }
    });
  }
  return out;
}

Tensor distill_loss(const AttentionBundle& lq, const AttentionBundle& hq) {
  Tensor cos_a = cosine_sim(lq.A, detach(hq.A));
  Tensor cos_v = cosine_sim(lq.V, detach(hq.V));
  return sub(Tensor::scalar(2.0), add(cos_a, cos_v));
}

Tensor distill_loss_l2(const AttentionBundle& lq, const AttentionBundle& hq) {
  Tensor da = sub(lq.A, detach(hq.A));
  Tensor dv = sub(lq.V, detach(hq.V));
  return add(mean_all(mul(da, da)), mean_all(mul(dv, dv)));
}

Tensor distill_loss_maps(const Tensor& lq, const Tensor& hq, bool use_l2) {
  Tensor teacher = detach(hq);
  if (use_l2) {
    Tensor d = sub(lq, teacher);
    return mean_all(mul(d, d));
  }
  return sub(Tensor::scalar(1.0), cosine_sim(lq, teacher));
}

Tensor total_step1_loss(const Tensor& fr_loss, const Tensor& sb, const Tensor& distill_total,
                        const SbWeights& w) {
  if (w.lambda_fr < 0.0 || w.lambda_distill < 0.0) {
    throw ConfigError("total_step1_loss: negative loss weight");
  }
  return add(add(scale(fr_loss, w.lambda_fr), sb), scale(distill_total, w.lambda_distill));
}

}  // namespace catface
