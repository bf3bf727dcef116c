#pragma once

#include <string>
#include <vector>

#include "model.hpp"
#include "synthdata.hpp"

namespace catface {

struct TrainConfig {
  double lr0 = 0.1;
  std::vector<int> decay_epochs = {3, 7, 15};  // strictly increasing, < epochs
  double decay_factor = 0.1;
  double momentum = 0.9;
  int epochs = 25;
  int batch_size = 64;
  // 0 sizes an epoch as ceil(20 renders per identity / batch_size) batches.
  int batches_per_epoch = 0;
  // Degraded copies join every loss term; off trains on clean renders only,
  // which also disables distillation (it needs the paired view).
  bool aug = true;
  // Step 2 only: update just the fusion stage and the fused head.
  bool freeze_backbone = false;
  // Keep branch-bundle distillation active during step 2.
  bool step2_distill = false;
  AdaFaceConfig margin;
  SbWeights weights;
  DegradationConfig degradation;
  uint64_t seed = 0;
  std::string log_path;  // append one record per epoch when set
  std::string snapshot_path = "nonfinite-snapshot.bin";
};

// lr0 scaled by decay_factor once per decay epoch ≤ epoch.
double lr_at(const TrainConfig& cfg, int epoch);

struct EpochRecord {
  int step = 1;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double fr = 0.0;
  double sb = 0.0;
  double distill = 0.0;
  double grad_norm = 0.0;
  double wall_s = 0.0;
};

// Fixed field order, key=value, single line.
std::string format_record(const EpochRecord& r);

struct TrainLog {
  std::vector<EpochRecord> records;
};

// Parameters a training step updates. Step 1 trains everything upstream of
// the fusion stage; step 2 trains all of it unless freeze_backbone narrows
// the set to the fusion stage and fused head.
std::vector<NamedTensor> trainable_params(ModelState& s, int step, bool freeze_backbone);

// Loss terms for one paired batch, graph-live for backward. Terms a config
// disables are zero scalars outside the graph.
struct BatchLosses {
  Tensor total, fr, sb, distill;
};

BatchLosses step1_batch_loss(ModelState& s, const PairedBatch& b, const TrainConfig& cfg);
BatchLosses step2_batch_loss(ModelState& s, const PairedBatch& b, const TrainConfig& cfg);

// Two-step procedure: step 1 jointly trains the branches with margin,
// attribute, and distillation losses; step 2 optimizes the margin loss on
// the fused embedding. Training resumes from state.epoch and stops at
// cfg.epochs. Numeric failures save a diagnostic snapshot and rethrow.
TrainLog train_step1(ModelState& s, const Dataset& ds, const TrainConfig& cfg);
TrainLog train_step2(ModelState& s, const Dataset& ds, const TrainConfig& cfg);

}  // namespace catface
