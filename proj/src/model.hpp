#pragma once

#include <string>
#include <utility>
#include <vector>

#include "catf.hpp"
#include "losses.hpp"

namespace catface {

// Which teacher signal the low-quality branch is pulled toward during
// step-1 training. None disables distillation entirely.
enum class DistillKind { None, Feature, Cbam, SelfAttention };

struct ModelConfig {
  int height = 32;
  int width = 32;
  int channels = 1;
  // One stride-2 pooling per trunk block, so the final feature map is
  // height/2^k square with trunk_channels.back() channels.
  std::vector<int> trunk_channels = {12, 24, 48};
  int branch_blocks = 2;
  int embed_dim = 64;
  int n_classes = 2;
  int heads = 4;
  int caf_groups = 8;
  DistillKind distill = DistillKind::SelfAttention;
  bool distill_cosine = true;  // false: squared-error metric
  bool catf_residual = true;
  bool use_mffnl = true;
  bool use_caf = true;
  bool mffnl_norm_act = true;
  uint64_t init_seed = 0;

  int feature_channels() const { return trunk_channels.back(); }
  int feature_height() const { return height >> trunk_channels.size(); }
  int feature_width() const { return width >> trunk_channels.size(); }

  static ModelConfig desk(int n_classes, uint64_t seed);
  // Small channel widths and a narrow embedding for minutes-scale training.
  static ModelConfig toy(int n_classes, uint64_t seed);
  // 8×8 input, one trunk block: cheap enough for finite-difference sweeps
  // over every parameter.
  static ModelConfig micro(int n_classes, uint64_t seed);
};

struct ConvBlock {
  Tensor w, b;  // 3×3×Cin×Cout, Cout
  BatchNormState bn;

  static ConvBlock init(int cin, int cout, Rng& rng);
};

// Every parameter tensor is reachable through append_params in a fixed
// traversal order; optimizers and checkpoints rely on both the names and the
// order. Components draw their init values from per-component seed streams,
// so two configs sharing a seed get identical weights for the components
// they share regardless of ablation flags.
struct ModelState {
  ModelConfig config;
  int epoch = 0;

  std::vector<ConvBlock> trunk;
  std::vector<ConvBlock> fr_blocks, sb_blocks;
  ProjectionSet fr_attn, sb_attn;
  Tensor fr_fc_w, fr_fc_b;  // C→d embedding head
  Tensor fr_W;              // d×n_classes margin-classifier columns
  Tensor sb_fc_w, sb_fc_b;  // C→5, one column per attribute head
  CbamParams cbam;          // baseline spatial-attention distillation target
  CatfParams catf;
  Tensor fused_fc_w, fused_fc_b;  // 2C→d fused embedding head
  Tensor fused_W;                 // d×n_classes margin classifier for the fused head

  AdaFaceStats fr_stats, fused_stats;

  static ModelState init(const ModelConfig& cfg);
};

void append_params(ModelState& s, std::vector<NamedTensor>& out);
void append_buffers(ModelState& s, std::vector<NamedTensor>& out);

// Attention bundles over a batch stack per-sample fields on a leading axis:
// Q, K, V, A are B×N×C and scores B×N×N.
struct Step1Out {
  Tensor f_fr, f_sb;  // B×h×w×C branch features
  AttentionBundle fr_bundle, sb_bundle;
  Tensor fr_embed;    // B×d, unnormalized
  Tensor fr_cosines;  // B×n_classes margin-free cosine logits
  Tensor sb_probs;    // B×5 in (0,1)
};

Step1Out forward_step1(ModelState& s, const Tensor& imgs, bool training);

struct Step2Out {
  Tensor f_fr, f_sb;   // branch features feeding the fusion stage
  Tensor fused;        // B×h×w×2C
  Tensor fused_embed;  // B×d, unnormalized
};

Step2Out forward_step2(ModelState& s, const Tensor& imgs, bool training);

// Unit-norm embedding rows in eval mode; fused head when use_fused, step-1
// FR head otherwise. A single H×W×ch image yields a flat d-vector.
Tensor embed_for_verification(ModelState& s, const Tensor& imgs, bool use_fused);

// Eval-mode FR-branch features per stage: trunk output first, then each
// branch block's output. Feeds attention-map dumps.
std::vector<Tensor> fr_block_trace(ModelState& s, const Tensor& imgs);

// Checkpoints are tensor archives holding every parameter and buffer plus
// meta tensors (config, epoch, margin statistics). Round trips are bit
// exact.
void save_checkpoint(ModelState& s, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace catface
