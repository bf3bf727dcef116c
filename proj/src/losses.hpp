#pragma once

#include <array>
#include <string>
#include <vector>

#include "attention.hpp"
#include "attributes.hpp"
#include "tensor.hpp"

namespace catface {

struct AdaFaceConfig {
  double s = 64.0;  // logit scale
  double m = 0.4;   // margin
  double h = 0.33;  // norm-concentration divisor
  // Feature-norm statistics come from the current batch unless EMA tracking
  // is enabled, in which case an AdaFaceStats object carries them across
  // batches.
  bool ema_stats = false;
  double ema_momentum = 0.1;
};

struct AdaFaceStats {
  double mu = 0.0;
  double sigma = 1.0;
  bool initialized = false;
};

struct SbWeights {
  double bald = 1.0;
  double big_nose = 0.5;
  double chubby = 0.5;
  double male = 1.0;
  double narrow_eye = 0.5;
  double lambda_fr = 3.0;
  double lambda_distill = 1.0;

  std::array<double, kNumAttributes> attribute_weights() const {
    return {bald, big_nose, chubby, male, narrow_eye};
  }
};

// -log softmax(Wᵀz + b)[y] for a single embedding z of width d.
Tensor softmax_ce(const Tensor& z, const Tensor& W, const Tensor& b, int y);

// Mean cross entropy over rows of a logit matrix. Backward is the analytic
// (softmax - onehot)/B.
Tensor ce_mean_logits(const Tensor& logits, const std::vector<int>& y);

// clip((‖z_i‖ - μ)/(σ/h), -1, 1) from raw per-sample feature norms. Carries
// no gradient; σ floored at 1e-6. Per-batch statistics need B ≥ 2.
Tensor normalized_quality(const Tensor& norms, const AdaFaceConfig& cfg,
                          AdaFaceStats* stats = nullptr);

double adaface_g_angle(double zhat, const AdaFaceConfig& cfg);  // -m·ẑ
double adaface_g_add(double zhat, const AdaFaceConfig& cfg);    // m·ẑ + m

// Target-class logit f = s·(cos(θ_y + g_angle) - g_add).
double adaface_margin(double theta_y, double zhat, const AdaFaceConfig& cfg);

// Margin loss over a batch: z rows are embeddings (used raw for norms and
// unit-normalized for cosines), W columns are class prototypes renormalized
// to unit length inside the op. The explicit-quality variant takes ẑ as a
// fixed per-sample vector; the main entry derives it from the batch.
Tensor adaface_loss_with_quality(const Tensor& z, const Tensor& W, const std::vector<int>& y,
                                 const Tensor& zhat, const AdaFaceConfig& cfg);
Tensor adaface_loss(const Tensor& z, const Tensor& W, const std::vector<int>& y,
                    const AdaFaceConfig& cfg, AdaFaceStats* stats = nullptr);

// Weighted multi-attribute binary cross entropy; p holds probabilities in
// (0,1) (clamped to [1e-7, 1-1e-7]), a holds 0/1 targets.
Tensor sb_loss(const Tensor& p, const Tensor& a, const SbWeights& w);

// u·v / (‖u‖·‖v‖) over fully flattened tensors; throws on near-zero norms.
Tensor cosine_sim(const Tensor& u, const Tensor& v);

// Per-branch attention distillation: 2 - cos(A_lq, A_hq) - cos(V_lq, V_hq),
// in [0, 4]. The high-quality bundle is a detached teacher.
Tensor distill_loss(const AttentionBundle& lq, const AttentionBundle& hq);

// Squared-error variant over the same pair of maps.
Tensor distill_loss_l2(const AttentionBundle& lq, const AttentionBundle& hq);

// Distillation between two plain maps (spatial-attention or raw features):
// 1 - cos, or mean squared error. Teacher detached.
Tensor distill_loss_maps(const Tensor& lq, const Tensor& hq, bool use_l2);

// λ_FR·fr + sb + λ_distill·distill (sb arrives already weighted per
// attribute).
Tensor total_step1_loss(const Tensor& fr_loss, const Tensor& sb, const Tensor& distill_total,
                        const SbWeights& w);

}  // namespace catface
