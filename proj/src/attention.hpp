#pragma once

#include <utility>

#include "ops.hpp"
#include "tensor.hpp"

namespace catface {

// Spatial attention over a feature map flattened to N tokens of width C.
// Q, K, V are the projected inputs, A = softmax(Q·Kᵀ/√C)·V is the attended
// output, and scores holds the row-stochastic N×N weight matrix.
struct AttentionBundle {
  Tensor Q, K, V, A, scores;
};

struct ProjectionSet {
  Tensor W_q, W_k, W_v;  // C×C

  static ProjectionSet init(int c, Rng& rng);
  static ProjectionSet identity_init(int c);
};

// F may be H×W×C (flattened internally) or already N×C.
AttentionBundle self_attention(const Tensor& f, const ProjectionSet& proj);

// Dual attention with exchanged queries: each branch queries the other's
// keys and values. Inputs are token matrices of equal shape N×C.
std::pair<Tensor, Tensor> cross_attention_pair(const Tensor& f_fr, const Tensor& f_sb,
                                               const ProjectionSet& proj_fr,
                                               const ProjectionSet& proj_sb);

struct McaParams {
  ProjectionSet fr, sb;   // full-width projections, sliced per head
  Tensor W_o_fr, W_o_sb;  // output projections after head concatenation
  int heads = 1;

  // Output projections start at identity, so heads=1 reduces to the
  // single-head pair exactly.
  static McaParams init(int c, int heads, Rng& rng);
};

// Per-head exchanged-query cross attention on C/heads-wide column slices of
// the projections, heads concatenated back to width C, then the output
// projection. Inputs and outputs are H×W×C maps.
std::pair<Tensor, Tensor> multi_head_cross_attention(const Tensor& f_fr, const Tensor& f_sb,
                                                     const McaParams& p);

struct CafParams {
  Tensor W_q, W_k, W_v;  // full concatenated width, 2C×2C

  static CafParams init(int width, Rng& rng);
  // Identity plus small noise: scores start diagonally dominant and values
  // pass through, so an untrained fusion stage begins near the concatenated
  // features instead of scrambling them.
  static CafParams near_identity_init(int width, Rng& rng, double noise = 0.02);
};

// Channel-grouped attention over a concatenated H×W×2C map: tokens are
// channels, so each group mixes its C_c channels with C_c×C_c attention
// computed from Q_gᵀ·K_g/√C_c over the N spatial positions. Output keeps the
// input shape.
Tensor caf(const Tensor& f_cat, const CafParams& p, int groups);

struct CbamParams {
  Tensor w;  // 3×3×2×1
  Tensor b;  // 1

  static CbamParams init(Rng& rng);
};

void append_params(ProjectionSet& p, const std::string& prefix, std::vector<NamedTensor>& out);
void append_params(McaParams& p, const std::string& prefix, std::vector<NamedTensor>& out);
void append_params(CafParams& p, const std::string& prefix, std::vector<NamedTensor>& out);
void append_params(CbamParams& p, const std::string& prefix, std::vector<NamedTensor>& out);

// Minimal spatial-attention map: channel mean and max pooled to two planes,
// a 3×3 convolution down to one, then a sigmoid. Used only as a baseline
// distillation target.
Tensor cbam_spatial_attention(const Tensor& f, const CbamParams& p);

}  // namespace catface
