#include "eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "errors.hpp"
#include "io.hpp"
#include "json.hpp"
#include "rng.hpp"

namespace catface {

namespace {

int count_above(const std::vector<double>& xs, double t) {
  int c = 0;
  for (double x : xs) {
    if (x > t) ++c;
  }
  return c;
}

Tensor stack_images(const std::vector<Tensor>& imgs) {
  std::vector<Tensor> rows;
  rows.reserve(imgs.size());
  for (const Tensor& im : imgs) {
    rows.push_back(reshape(im, {1, im.dim(0), im.dim(1), im.dim(2)}));
  }
  return concat(rows, 0);
}

double dot_rows(const Tensor& a, int i, const Tensor& b, int j) {
  double s = 0.0;
  for (int k = 0; k < a.dim(1); ++k) s += a.at({i, k}) * b.at({j, k});
  return s;
}

// Embeds rank-3 images in chunks; rows are unit-norm.
Tensor embed_images(ModelState& s, const std::vector<Tensor>& imgs, bool use_fused, int batch) {
  std::vector<Tensor> chunks;
  for (size_t i = 0; i < imgs.size(); i += static_cast<size_t>(batch)) {
    const size_t hi = std::min(imgs.size(), i + static_cast<size_t>(batch));
    std::vector<Tensor> piece(imgs.begin() + static_cast<long>(i),
                              imgs.begin() + static_cast<long>(hi));
    chunks.push_back(embed_for_verification(s, stack_images(piece), use_fused));
  }
  return chunks.size() == 1 ? chunks[0] : concat(chunks, 0);
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

std::vector<TarFar> tar_at_far(const std::vector<double>& pos, const std::vector<double>& neg,
                               const std::vector<double>& targets) {
  if (pos.empty() || neg.empty()) throw DataError("tar_at_far: empty score list");
  std::vector<double> sneg = neg;
  std::sort(sneg.begin(), sneg.end());
  const int n = static_cast<int>(sneg.size());

  std::vector<TarFar> out;
  for (double target : targets) {
    if (target <= 0.0 || target > 1.0) throw ConfigError("tar_at_far: targets lie in (0,1]");
    TarFar tf;
    tf.target = target;
    const double scaled = target * n;
    if (scaled < 1.0 - 1e-9) {
      out.push_back(tf);  // below empirical resolution
      continue;
    }
    tf.measurable = true;
    const int allowed = std::min(n, static_cast<int>(std::floor(scaled + 1e-9)));
    tf.threshold = allowed >= n ? -std::numeric_limits<double>::infinity()
                                : sneg[static_cast<size_t>(n - 1 - allowed)];
    tf.tar = static_cast<double>(count_above(pos, tf.threshold)) /
             static_cast<double>(pos.size());
    out.push_back(tf);
  }
  return out;
}

RocCurve roc_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) throw DataError("roc_auc: empty score list");
  struct Item {
    double v;
    bool is_pos;
  };
  std::vector<Item> items;
  items.reserve(pos.size() + neg.size());
  for (double p : pos) items.push_back({p, true});
  for (double q : neg) items.push_back({q, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.v > b.v; });

  RocCurve rc;
  rc.points.push_back({0.0, 0.0});
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  size_t i = 0;
  int tp = 0, fp = 0;
  while (i < items.size()) {
    size_t j = i;
    while (j < items.size() && items[j].v == items[i].v) {
      (items[j].is_pos ? tp : fp) += 1;
      ++j;
    }
    rc.points.push_back({fp / nn, tp / np});
    i = j;
  }
  for (size_t k = 1; k < rc.points.size(); ++k) {
    const auto& [x0, y0] = rc.points[k - 1];
    const auto& [x1, y1] = rc.points[k];
    rc.auc += (x1 - x0) * (y0 + y1) * 0.5;
  }
  return rc;
}

std::array<double, kNumAttributes> attr_accuracy(const Tensor& probs, const Tensor& labels,
                                                 double threshold) {
  if (probs.rank() != 2 || probs.dim(1) != kNumAttributes || probs.shape() != labels.shape()) {
    throw DimensionError("attr_accuracy: need matching B×" + std::to_string(kNumAttributes) +
                         " probabilities and labels, got " + shape_str(probs.shape()) + " and " +
                         shape_str(labels.shape()));
  }
  const int b = probs.dim(0);
  if (b < 1) throw DataError("attr_accuracy: empty batch");
  std::array<double, kNumAttributes> acc{};
  for (int j = 0; j < kNumAttributes; ++j) {
    int hit = 0;
    for (int i = 0; i < b; ++i) {
      const bool pred = probs.at({i, j}) >= threshold;
      const bool truth = labels.at({i, j}) != 0.0;
      hit += pred == truth ? 1 : 0;
    }
    acc[static_cast<size_t>(j)] = static_cast<double>(hit) / b;
  }
  return acc;
}

ScoreHistogram score_distribution_report(const std::vector<double>& pos,
                                         const std::vector<double>& neg, int bins) {
  if (bins < 1) throw ConfigError("score_distribution_report: bins must be positive");
  if (pos.empty() || neg.empty()) throw DataError("score_distribution_report: empty score list");
  ScoreHistogram h;
  h.bins = bins;
  h.pos_counts.assign(static_cast<size_t>(bins), 0);
  h.neg_counts.assign(static_cast<size_t>(bins), 0);
  const double width = 2.0 / bins;
  auto bin_of = [&](double x) {
    const int i = static_cast<int>(std::floor((x + 1.0) / width));
    return std::clamp(i, 0, bins - 1);
  };
  for (double x : pos) h.pos_counts[static_cast<size_t>(bin_of(x))] += 1;
  for (double x : neg) h.neg_counts[static_cast<size_t>(bin_of(x))] += 1;
  h.pos_modal_bin = static_cast<int>(
      std::max_element(h.pos_counts.begin(), h.pos_counts.end()) - h.pos_counts.begin());
  h.neg_modal_bin = static_cast<int>(
      std::max_element(h.neg_counts.begin(), h.neg_counts.end()) - h.neg_counts.begin());
  return h;
}

void pair_scores(ModelState& s, const std::vector<EvalPair>& pairs, bool use_fused, int batch,
                 std::vector<double>& pos, std::vector<double>& neg) {
  if (pairs.empty()) throw DataError("pair_scores: no pairs");
  if (batch < 1) throw ConfigError("pair_scores: batch must be positive");
  std::vector<Tensor> a, b;
  a.reserve(pairs.size());
  b.reserve(pairs.size());
  for (const EvalPair& p : pairs) {
    a.push_back(p.a);
    b.push_back(p.b);
  }
  Tensor ea = embed_images(s, a, use_fused, batch);
  Tensor eb = embed_images(s, b, use_fused, batch);
  for (size_t i = 0; i < pairs.size(); ++i) {
    const double score = dot_rows(ea, static_cast<int>(i), eb, static_cast<int>(i));
    (pairs[i].same ? pos : neg).push_back(score);
  }
}

std::vector<std::pair<int, double>> rank_k_identification(ModelState& s, const Dataset& ds,
                                                          const std::vector<int>& ks,
                                                          const EvalConfig& cfg) {
  if (ds.eval.empty()) throw DataError("rank_k_identification: empty eval split");
  for (int k : ks) {
    if (k < 1) throw ConfigError("rank_k_identification: k must be positive");
  }
  const auto& dc = ds.config;
  const int e = static_cast<int>(ds.eval.size());
  std::vector<Tensor> gallery, probes;
  for (int i = 0; i < e; ++i) {
    const auto& spec = ds.eval[static_cast<size_t>(i)];
    gallery.push_back(render(spec, derive_seed(cfg.seed, "gallery", static_cast<uint64_t>(i)),
                             dc.height, dc.width, dc.channels));
    Tensor probe = render(spec, derive_seed(cfg.seed, "probe", static_cast<uint64_t>(i)),
                          dc.height, dc.width, dc.channels);
    if (cfg.degrade_pairs) {
      probe = degrade(probe, cfg.degradation,
                      derive_seed(cfg.seed, "probe-deg", static_cast<uint64_t>(i)));
    }
    probes.push_back(probe);
  }
  Tensor eg = embed_images(s, gallery, cfg.use_fused, cfg.batch);
  Tensor ep = embed_images(s, probes, cfg.use_fused, cfg.batch);

  std::vector<int> rank(static_cast<size_t>(e), 1);
  for (int i = 0; i < e; ++i) {
    const double own = dot_rows(ep, i, eg, i);
    for (int j = 0; j < e; ++j) {
      if (j != i && dot_rows(ep, i, eg, j) > own) rank[static_cast<size_t>(i)] += 1;
    }
  }
  std::vector<std::pair<int, double>> out;
  for (int k : ks) {
    int hit = 0;
    for (int r : rank) hit += r <= k ? 1 : 0;
    out.push_back({k, static_cast<double>(hit) / e});
  }
  return out;
}

EvalReport evaluate(ModelState& s, const Dataset& ds, const EvalConfig& cfg) {
  EvalReport r;
  auto pairs = make_eval_pairs(ds, cfg.n_pairs, cfg.positive_fraction,
                               cfg.degrade_pairs ? &cfg.degradation : nullptr, cfg.seed);
  std::vector<double> pos, neg;
  pair_scores(s, pairs, cfg.use_fused, cfg.batch, pos, neg);
  r.n_pos = static_cast<int>(pos.size());
  r.n_neg = static_cast<int>(neg.size());
  r.pos_mean = mean_of(pos);
  r.neg_mean = mean_of(neg);
  r.tar = tar_at_far(pos, neg, cfg.far_targets);
  r.roc = roc_auc(pos, neg);
  r.hist = score_distribution_report(pos, neg, cfg.bins);
  r.rank_k = rank_k_identification(s, ds, cfg.rank_ks, cfg);

  const auto& dc = ds.config;
  std::vector<Tensor> imgs;
  Tensor labels = Tensor::zeros({static_cast<int>(ds.eval.size()), kNumAttributes});
  for (size_t i = 0; i < ds.eval.size(); ++i) {
    const auto& spec = ds.eval[i];
    Tensor img = render(spec, derive_seed(cfg.seed, "attr", i), dc.height, dc.width, dc.channels);
    if (cfg.degrade_pairs) {
      img = degrade(img, cfg.degradation, derive_seed(cfg.seed, "attr-deg", i));
    }
    imgs.push_back(img);
    for (int j = 0; j < kNumAttributes; ++j) {
      labels.ptr()[i * kNumAttributes + static_cast<size_t>(j)] =
          spec.attributes[static_cast<size_t>(j)] ? 1.0 : 0.0;
    }
  }
  std::vector<Tensor> prob_chunks;
  for (size_t i = 0; i < imgs.size(); i += static_cast<size_t>(cfg.batch)) {
    const size_t hi = std::min(imgs.size(), i + static_cast<size_t>(cfg.batch));
    std::vector<Tensor> piece(imgs.begin() + static_cast<long>(i),
                              imgs.begin() + static_cast<long>(hi));
    prob_chunks.push_back(forward_step1(s, stack_images(piece), false).sb_probs);
  }
  Tensor probs = prob_chunks.size() == 1 ? prob_chunks[0] : concat(prob_chunks, 0);
  r.attr_acc = attr_accuracy(probs, labels);
  return r;
}

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  j["n_pos"] = r.n_pos;
  j["n_neg"] = r.n_neg;
  j["pos_mean"] = r.pos_mean;
  j["neg_mean"] = r.neg_mean;
  j["auc"] = r.roc.auc;
  for (const TarFar& tf : r.tar) {
    nlohmann::json e;
    e["far"] = tf.target;
    e["measurable"] = tf.measurable;
    if (tf.measurable) {
      e["tar"] = tf.tar;
      e["threshold"] = tf.threshold;
    }
    j["tar_at_far"].push_back(e);
  }
  for (const auto& [k, acc] : r.rank_k) j["rank_k"][std::to_string(k)] = acc;
  for (int i = 0; i < kNumAttributes; ++i) {
    j["attr_acc"][kAttributeNames[static_cast<size_t>(i)]] = r.attr_acc[static_cast<size_t>(i)];
  }
  j["hist"]["bins"] = r.hist.bins;
  j["hist"]["pos_counts"] = r.hist.pos_counts;
  j["hist"]["neg_counts"] = r.hist.neg_counts;
  j["hist"]["pos_modal_bin"] = r.hist.pos_modal_bin;
  j["hist"]["neg_modal_bin"] = r.hist.neg_modal_bin;
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& [far, tar] : r.roc.points) roc.push_back({far, tar});
  j["roc"] = roc;
  return j.dump(2);
}

std::string report_tsv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << "metric\tkey\tvalue\n";
  os << "auc\t-\t" << r.roc.auc << "\n";
  os << "pos_mean\t-\t" << r.pos_mean << "\n";
  os << "neg_mean\t-\t" << r.neg_mean << "\n";
  for (const TarFar& tf : r.tar) {
    os << "tar_at_far\t" << tf.target << "\t";
    if (tf.measurable) {
      os << tf.tar;
    } else {
      os << "unmeasurable";
    }
    os << "\n";
  }
  for (const auto& [k, acc] : r.rank_k) os << "rank_k\t" << k << "\t" << acc << "\n";
  for (int i = 0; i < kNumAttributes; ++i) {
    os << "attr_acc\t" << kAttributeNames[static_cast<size_t>(i)] << "\t"
       << r.attr_acc[static_cast<size_t>(i)] << "\n";
  }
  os << "pos_modal_bin\t-\t" << r.hist.pos_modal_bin << "\n";
  os << "neg_modal_bin\t-\t" << r.hist.neg_modal_bin << "\n";
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.is_open()) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out.good()) throw IoError("failed writing " + path);
}

void dump_attention_maps(ModelState& s, const Tensor& imgs, const std::string& dir) {
  Tensor batch = imgs.rank() == 3
                     ? reshape(imgs, {1, imgs.dim(0), imgs.dim(1), imgs.dim(2)})
                     : imgs;
  std::filesystem::create_directories(dir);
  auto trace = fr_block_trace(s, batch);
  const Tensor& first = trace[1];
  const Tensor& last = trace.back();
  const int b = batch.dim(0);

  std::vector<NamedTensor> archive;
  const std::array<std::pair<const char*, Tensor>, 2> stages = {{{"first", first}, {"last", last}}};
  for (int i = 0; i < b; ++i) {
    for (const auto& [stage, feat] : stages) {
      const int h = feat.dim(1), w = feat.dim(2), c = feat.dim(3);
      Tensor fmap = reshape(split(feat, 0, b)[static_cast<size_t>(i)], {h, w, c});
      Tensor m = Tensor::zeros({h, w});
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double sum = 0.0;
          for (int ch = 0; ch < c; ++ch) sum += std::abs(fmap.at({y, x, ch}));
          m.ptr()[y * w + x] = sum;
        }
      }
      const auto [lo_it, hi_it] = std::minmax_element(m.ptr(), m.ptr() + m.size());
      const double lo = *lo_it, span = *hi_it - *lo_it;
      for (size_t k = 0; k < m.size(); ++k) {
        m.ptr()[k] = span > 0.0 ? (m.ptr()[k] - lo) / span : 0.0;
      }
      const std::string base = "img" + std::to_string(i) + "_" + stage;
      write_pgm(m, dir + "/" + base + ".pgm");
      archive.push_back({"img" + std::to_string(i) + "." + stage + ".features", fmap});
      archive.push_back({"img" + std::to_string(i) + "." + stage + ".map", m});
    }
  }
  save_archive(archive, dir + "/attention_maps.bin");
}

}  // namespace catface
