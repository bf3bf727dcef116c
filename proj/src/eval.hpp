#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"
#include "synthdata.hpp"

namespace catface {

// One verification operating point. A target below 1/|neg| cannot be
// measured empirically and is flagged rather than reported as 0.
struct TarFar {
  double target = 0.0;
  bool measurable = false;
  double tar = 0.0;
  double threshold = 0.0;
};

// Threshold per target: the smallest score value whose empirical FAR
// (fraction of negatives strictly above it) is ≤ the target; TAR is the
// fraction of positives strictly above that threshold.
std::vector<TarFar> tar_at_far(const std::vector<double>& pos, const std::vector<double>& neg,
                               const std::vector<double>& targets);

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (FAR, TAR), FAR nondecreasing
  double auc = 0.0;
};

// Threshold sweep over the pooled scores; AUC by trapezoid, which equals the
// tie-aware pairwise comparison statistic.
RocCurve roc_auc(const std::vector<double>& pos, const std::vector<double>& neg);

// Fraction of rows whose thresholded predictions match, per attribute
// column. probs B×5 in [0,1], labels B×5 in {0,1}.
std::array<double, kNumAttributes> attr_accuracy(const Tensor& probs, const Tensor& labels,
                                                 double threshold = 0.5);

// Fixed-width histograms over [-1, 1]; modal_bin is the first maximal bin.
struct ScoreHistogram {
  int bins = 0;
  std::vector<int> pos_counts, neg_counts;
  int pos_modal_bin = 0, neg_modal_bin = 0;
};

ScoreHistogram score_distribution_report(const std::vector<double>& pos,
                                         const std::vector<double>& neg, int bins);

struct EvalConfig {
  int n_pairs = 10000;
  double positive_fraction = 0.5;
  // Pairs are degraded before embedding when set; identity selection is
  // shared with the clean protocol, so clean and degraded runs compare the
  // same pairs.
  bool degrade_pairs = true;
  DegradationConfig degradation;
  bool use_fused = false;
  std::vector<double> far_targets = {1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  std::vector<int> rank_ks = {1, 5};
  int bins = 40;
  int batch = 64;  // embedding extraction chunk
  uint64_t seed = 0;
};

struct EvalReport {
  int n_pos = 0, n_neg = 0;
  double pos_mean = 0.0, neg_mean = 0.0;
  std::vector<TarFar> tar;
  RocCurve roc;
  std::vector<std::pair<int, double>> rank_k;
  std::array<double, kNumAttributes> attr_acc{};
  ScoreHistogram hist;
};

// Cosine scores for verification pairs, embedding in chunks.
void pair_scores(ModelState& s, const std::vector<EvalPair>& pairs, bool use_fused, int batch,
                 std::vector<double>& pos, std::vector<double>& neg);

// Closed-set identification over the eval split: one clean render per
// identity forms the gallery, one degraded render per identity probes it.
// rank = 1 + number of wrong gallery entries scoring strictly higher.
std::vector<std::pair<int, double>> rank_k_identification(ModelState& s, const Dataset& ds,
                                                          const std::vector<int>& ks,
                                                          const EvalConfig& cfg);

// Full verification + attribute report on the eval split.
EvalReport evaluate(ModelState& s, const Dataset& ds, const EvalConfig& cfg);

std::string report_json(const EvalReport& r);
std::string report_tsv(const EvalReport& r);
void write_text_file(const std::string& path, const std::string& text);

// Channel-summed absolute feature magnitudes for the first and last FR
// branch blocks of each image, min-max normalized to [0,1]: one PGM per
// (image, stage) plus an archive of the raw feature maps the PGMs derive
// from. Constant maps dump as zeros.
void dump_attention_maps(ModelState& s, const Tensor& imgs, const std::string& dir);

}  // namespace catface
