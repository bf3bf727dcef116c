#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>
#include <vector>

#include "../src/ablation.hpp"
#include "../src/errors.hpp"

using namespace catface;

namespace {

ModelConfig tiny_model() { return ModelConfig::micro(4, 5); }

TrainConfig tiny_train() {
  TrainConfig tc;
  tc.lr0 = 0.05;
  tc.decay_epochs = {};
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.batches_per_epoch = 2;
  tc.seed = 3;
  return tc;
}

DatasetConfig tiny_data() {
  DatasetConfig dc;
  dc.height = 8;
  dc.width = 8;
  dc.channels = 1;
  dc.n_train_identities = 4;
  dc.n_eval_identities = 4;
  dc.seed = 1;
  return dc;
}

EvalConfig tiny_eval() {
  EvalConfig ec;
  ec.n_pairs = 8;
  ec.far_targets = {1e-4, 0.5, 1.0};  // first one unmeasurable with 4 negatives
  ec.rank_ks = {1};
  ec.bins = 4;
  ec.batch = 8;
  ec.seed = 6;
  return ec;
}

}  // namespace

TEST_CASE("axis builders lay out the expected rows") {
  ModelConfig m = tiny_model();
  m.use_mffnl = true;
  m.use_caf = true;
  TrainConfig t = tiny_train();

  SUBCASE("distillation axis: baseline, degraded, then three distillation kinds") {
    auto rows = distill_axis(m, t);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].label == "baseline");
    CHECK_FALSE(rows[0].train.aug);
    CHECK(rows[0].model.distill == DistillKind::None);
    CHECK(rows[1].label == "aug");
    CHECK(rows[1].train.aug);
    CHECK(rows[1].model.distill == DistillKind::None);
    CHECK(rows[2].model.distill == DistillKind::Feature);
    CHECK(rows[3].model.distill == DistillKind::Cbam);
    CHECK(rows[4].model.distill == DistillKind::SelfAttention);
    for (const auto& r : rows) {
      CHECK_FALSE(r.two_step);
      CHECK(r.model.use_mffnl == m.use_mffnl);  // axis leaves fusion flags alone
      CHECK(r.model.use_caf == m.use_caf);
      CHECK(r.model.init_seed == m.init_seed);
      CHECK(r.train.seed == t.seed);
    }
    for (size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].train.aug);
  }

  SUBCASE("metric axis: L2 versus cosine on self-attention distillation") {
    auto rows = metric_axis(m, t);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].label == "selfattn+l2");
    CHECK_FALSE(rows[0].model.distill_cosine);
    CHECK(rows[1].label == "selfattn+cosine");
    CHECK(rows[1].model.distill_cosine);
    for (const auto& r : rows) {
      CHECK(r.model.distill == DistillKind::SelfAttention);
      CHECK(r.train.aug);
      CHECK_FALSE(r.two_step);
    }
  }

  SUBCASE("fusion axis: neither, MFFNL, CAF, both; all two-step") {
    auto rows = fusion_axis(m, t, t);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].label == "neither");
    CHECK_FALSE(rows[0].model.use_mffnl);
    CHECK_FALSE(rows[0].model.use_caf);
    CHECK(rows[1].model.use_mffnl);
    CHECK_FALSE(rows[1].model.use_caf);
    CHECK_FALSE(rows[2].model.use_mffnl);
    CHECK(rows[2].model.use_caf);
    CHECK(rows[3].label == "mffnl+caf");
    CHECK(rows[3].model.use_mffnl);
    CHECK(rows[3].model.use_caf);
    for (const auto& r : rows) {
      CHECK(r.two_step);
      CHECK(r.model.distill == m.distill);
    }
  }
}

TEST_CASE("run_ablation trains each row and reports deterministically") {
  auto rows = distill_axis(tiny_model(), tiny_train());
  rows.resize(2);  // baseline and aug are the cheapest rows
  auto runs = run_ablation(rows, tiny_data(), tiny_eval());
  REQUIRE(runs.size() == 2);
  CHECK(runs[0].label == "baseline");
  CHECK(runs[1].label == "aug");
  for (const auto& r : runs) {
    CHECK(r.report.n_pos + r.report.n_neg == 8);
    CHECK(r.report.roc.auc >= 0.0);
    CHECK(r.report.roc.auc <= 1.0);
  }

  SUBCASE("identical flags and seeds reproduce the reports exactly") {
    auto again = run_ablation(rows, tiny_data(), tiny_eval());
    REQUIRE(again.size() == runs.size());
    for (size_t i = 0; i < runs.size(); ++i) {
      CHECK(again[i].label == runs[i].label);
      CHECK(report_json(again[i].report) == report_json(runs[i].report));
    }
  }

  SUBCASE("the rows saw different training, so the reports differ") {
    CHECK(report_json(runs[0].report) != report_json(runs[1].report));
  }
}

TEST_CASE("two-step rows fine-tune the fusion stage and score the fused embedding") {
  auto rows = fusion_axis(tiny_model(), tiny_train(), tiny_train());
  std::vector<AblationSpec> one = {rows[3]};
  auto runs = run_ablation(one, tiny_data(), tiny_eval());
  REQUIRE(runs.size() == 1);
  CHECK(runs[0].label == "mffnl+caf");
  CHECK(runs[0].report.roc.auc >= 0.0);
  CHECK(runs[0].report.roc.auc <= 1.0);
  CHECK(runs[0].report.n_pos > 0);
}

TEST_CASE("ablation_table formats one line per run") {
  auto rows = distill_axis(tiny_model(), tiny_train());
  rows.resize(2);
  auto runs = run_ablation(rows, tiny_data(), tiny_eval());
  std::string table = ablation_table(runs);

  int lines = 0;
  for (char c : table) lines += c == '\n' ? 1 : 0;
  CHECK(lines == 3);  // header + two rows
  CHECK(table.find("config") != std::string::npos);
  CHECK(table.find("auc") != std::string::npos);
  CHECK(table.find("baseline") != std::string::npos);
  CHECK(table.find("aug") != std::string::npos);
  CHECK(table.find("rank1") != std::string::npos);
  CHECK(table.find("n/a") != std::string::npos);  // the unmeasurable 1e-4 target
  CHECK(ablation_table({}).find("config") != std::string::npos);
}
