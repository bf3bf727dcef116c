#pragma once

#include <string>
#include <vector>

#include "eval.hpp"
#include "trainer.hpp"

namespace catface {

// One ablation configuration. Two-step rows run the fusion fine-tune after
// step 1 and are evaluated on the fused embedding; the rest stop after
// step 1 and are evaluated on the FR branch embedding.
struct AblationSpec {
  std::string label;
  ModelConfig model;
  TrainConfig train;    // step 1
  TrainConfig train2;   // step 2, used only when two_step
  bool two_step = false;
};

// Distillation axis: baseline (no degraded images), degraded images with no
// distillation, then feature / spatial-attention-map / self-attention
// distillation on top.
std::vector<AblationSpec> distill_axis(const ModelConfig& model, const TrainConfig& train);

// Distillation metric axis: self-attention distillation with the L2 map
// distance versus the cosine form.
std::vector<AblationSpec> metric_axis(const ModelConfig& model, const TrainConfig& train);

// Fusion axis: neither refinement, MFFNL only, CAF only, both. All rows run
// the two-step schedule.
std::vector<AblationSpec> fusion_axis(const ModelConfig& model, const TrainConfig& train,
                                      const TrainConfig& train2);

struct AblationRun {
  std::string label;
  EvalReport report;
};

// Trains every row on the same dataset and evaluates with the same
// protocol. Rows differ only in their flags, so metric gaps are
// attributable to the flags alone.
std::vector<AblationRun> run_ablation(const std::vector<AblationSpec>& specs,
                                      const DatasetConfig& data, const EvalConfig& eval);

// Fixed-width text table: one row per run with AUC, TAR at each measurable
// target, rank-1 accuracy, and mean attribute accuracy.
std::string ablation_table(const std::vector<AblationRun>& runs);

}  // namespace catface
