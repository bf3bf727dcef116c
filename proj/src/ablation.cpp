#include "ablation.hpp"

#include <iomanip>
#include <sstream>

namespace catface {

std::vector<AblationSpec> distill_axis(const ModelConfig& model, const TrainConfig& train) {
  std::vector<AblationSpec> rows;
  auto add = [&](const std::string& label, bool aug, DistillKind kind) {
    AblationSpec s;
    s.label = label;
    s.model = model;
    s.model.distill = kind;
    s.train = train;
    s.train.aug = aug;
    rows.push_back(s);
  };
  add("baseline", false, DistillKind::None);
  add("aug", true, DistillKind::None);
  add("aug+feature", true, DistillKind::Feature);
  add("aug+spatial", true, DistillKind::Cbam);
  add("aug+selfattn", true, DistillKind::SelfAttention);
  return rows;
}

std::vector<AblationSpec> metric_axis(const ModelConfig& model, const TrainConfig& train) {
  std::vector<AblationSpec> rows;
  for (bool cosine : {false, true}) {
    AblationSpec s;
    s.label = cosine ? "selfattn+cosine" : "selfattn+l2";
    s.model = model;
    s.model.distill = DistillKind::SelfAttention;
    s.model.distill_cosine = cosine;
    s.train = train;
    s.train.aug = true;
    rows.push_back(s);
  }
  return rows;
}

std::vector<AblationSpec> fusion_axis(const ModelConfig& model, const TrainConfig& train,
                                      const TrainConfig& train2) {
  std::vector<AblationSpec> rows;
  auto add = [&](const std::string& label, bool mffnl, bool caf) {
    AblationSpec s;
    s.label = label;
    s.model = model;
    s.model.use_mffnl = mffnl;
    s.model.use_caf = caf;
    s.train = train;
    s.train2 = train2;
    s.two_step = true;
    rows.push_back(s);
  };
  add("neither", false, false);
  add("mffnl", true, false);
  add("caf", false, true);
  add("mffnl+caf", true, true);
  return rows;
}

std::vector<AblationRun> run_ablation(const std::vector<AblationSpec>& specs,
                                      const DatasetConfig& data, const EvalConfig& eval) {
  Dataset ds = make_dataset(data);
  std::vector<AblationRun> out;
  for (const AblationSpec& spec : specs) {
    ModelState s = ModelState::init(spec.model);
    train_step1(s, ds, spec.train);
    if (spec.two_step) {
      s.epoch = 0;  // step 2 runs its own schedule from scratch
      train_step2(s, ds, spec.train2);
    }
    EvalConfig ec = eval;
    ec.use_fused = spec.two_step;
    out.push_back({spec.label, evaluate(s, ds, ec)});
  }
  return out;
}

std::string ablation_table(const std::vector<AblationRun>& runs) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::setw(18) << std::left << "config" << std::right << std::setw(8) << "auc";
  if (!runs.empty()) {
    for (const TarFar& tf : runs.front().report.tar) {
      std::ostringstream h;
      h << "tar@" << std::setprecision(tf.target < 0.001 ? 5 : 3) << std::defaultfloat
        << tf.target;
      os << std::setw(12) << h.str();
    }
    for (const auto& [k, acc] : runs.front().report.rank_k) {
      (void)acc;
      os << std::setw(10) << ("rank" + std::to_string(k));
    }
  }
  os << std::setw(10) << "attr" << "\n";
  for (const AblationRun& r : runs) {
    os << std::setw(18) << std::left << r.label << std::right << std::setw(8) << r.report.roc.auc;
    for (const TarFar& tf : r.report.tar) {
      if (tf.measurable) {
        os << std::setw(12) << tf.tar;
      } else {
        os << std::setw(12) << "n/a";
      }
    }
    for (const auto& [k, acc] : r.report.rank_k) {
      (void)k;
      os << std::setw(10) << acc;
    }
    double attr = 0.0;
    for (double a : r.report.attr_acc) attr += a;
    os << std::setw(10) << attr / kNumAttributes << "\n";
  }
  return os.str();
}

}  // namespace catface
