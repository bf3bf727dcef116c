#pragma once

#include <string>
#include <vector>

#include "attention.hpp"
#include "ops.hpp"
#include "tensor.hpp"

namespace catface {

// Three parallel depthwise streams over an equal channel split: 3×3 on the
// first third, 1×7 on the second, 7×1 on the last.
struct MdconvParams {
  Tensor k3, k17, k71;  // kh×kw×(C_h/3)
  Tensor b3, b17, b71;  // C_h/3

  static MdconvParams init(int ch, Rng& rng);
  // Center-delta kernels with zero biases: each stream reproduces its group,
  // so mdconv becomes X + X.
  static MdconvParams delta_init(int ch);
};

// Split → streams → concat → shortcut. No activation or normalization here;
// the enclosing block applies them, which keeps this value testable.
Tensor mdconv(const Tensor& x, const MdconvParams& p);

struct MffnlParams {
  Tensor expand_w, expand_b;    // C×C_h pointwise, C_h = 3C
  MdconvParams md;
  Tensor project_w, project_b;  // C_h×C pointwise
  BatchNormState bn_expand, bn_md, bn_project;
  // Each convolution layer is followed by GELU then batch normalization.
  // Disabled, the block is a bare PConv→MDConv→PConv composition.
  bool norm_act = true;

  static MffnlParams init(int c, Rng& rng);
};

Tensor mffnl(const Tensor& x, MffnlParams& p, bool training);

struct CatfParams {
  McaParams mca;
  MffnlParams mffnl_fr, mffnl_sb;
  CafParams caf_proj;
  BatchNormState bn_mca_fr, bn_mca_sb, bn_mffnl_fr, bn_mffnl_sb;  // pre-norms
  int groups = 8;
  // Residual connections with pre-normalization around the cross-attention
  // and feed-forward sub-blocks. Off, the stages compose bare.
  bool residual = true;
  // Ablation switches: the fusion stage always cross-attends and
  // concatenates; these control the feed-forward and channel-attention
  // stages independently.
  bool use_mffnl = true;
  bool use_caf = true;

  static CatfParams init(int c, int heads, int groups, Rng& rng);
};

// Dual cross-attention with exchanged queries, per-branch feed-forward,
// channel concatenation, then channel-grouped attention. H×W×C per branch
// in, H×W×2C out.
Tensor catf_forward(const Tensor& f_fr, const Tensor& f_sb, CatfParams& p, bool training);

void append_params(MdconvParams& p, const std::string& prefix, std::vector<NamedTensor>& out);
void append_params(MffnlParams& p, const std::string& prefix, std::vector<NamedTensor>& out);
void append_params(CatfParams& p, const std::string& prefix, std::vector<NamedTensor>& out);
void append_buffers(MffnlParams& p, const std::string& prefix, std::vector<NamedTensor>& out);
void append_buffers(CatfParams& p, const std::string& prefix, std::vector<NamedTensor>& out);

}  // namespace catface
