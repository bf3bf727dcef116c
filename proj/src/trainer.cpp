#include "trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace catface {

namespace {

bool starts_with(const std::string& s, const char* p) { return s.rfind(p, 0) == 0; }

void validate_train(const TrainConfig& cfg, const ModelState& s, const Dataset& ds) {
  if (cfg.lr0 <= 0.0) throw ConfigError("trainer: lr0 must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("trainer: momentum in [0,1)");
  if (cfg.decay_factor <= 0.0 || cfg.decay_factor > 1.0) {
    throw ConfigError("trainer: decay factor in (0,1]");
  }
  if (cfg.epochs < 1) throw ConfigError("trainer: epochs must be positive");
  if (cfg.batch_size < 2) throw ConfigError("trainer: batch normalization and margin statistics need batch >= 2");
  for (size_t i = 0; i < cfg.decay_epochs.size(); ++i) {
    if (cfg.decay_epochs[i] >= cfg.epochs) {
      throw ConfigError("trainer: decay epochs must precede the final epoch");
    }
    if (i > 0 && cfg.decay_epochs[i] <= cfg.decay_epochs[i - 1]) {
      throw ConfigError("trainer: decay epochs must be strictly increasing");
    }
  }
  if (ds.train.empty()) throw DataError("trainer: empty training split");
  if (s.config.n_classes < static_cast<int>(ds.train.size())) {
    throw ConfigError("trainer: classifier narrower than the identity count");
  }
  if (s.epoch > cfg.epochs) throw ConfigError("trainer: state is past the requested epoch count");
}

struct Sgd {
  double momentum;
  std::vector<std::vector<double>> velocity;

  void step(std::vector<NamedTensor>& params, double lr) {
    if (velocity.empty()) velocity.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i].t;
      if (!p.has_grad() && velocity[i].empty()) continue;
      if (velocity[i].empty()) velocity[i].assign(p.size(), 0.0);
      const std::vector<double>& g = p.grad();
      for (size_t j = 0; j < p.size(); ++j) {
        velocity[i][j] = momentum * velocity[i][j] - lr * g[j];
        p.ptr()[j] += velocity[i][j];
      }
      p.zero_grad();
    }
  }
};

double grad_norm(const std::vector<NamedTensor>& params) {
  double sq = 0.0;
  for (const auto& nt : params) {
    if (!nt.t.has_grad()) continue;
    for (double g : nt.t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

// Mean over samples of the per-sample distillation term; the flattened-batch
// cosine would not equal it, so the batch is split explicitly.
Tensor batch_distill(const Step1Out& lq, const Step1Out& hq, ModelState& s) {
  const ModelConfig& mc = s.config;
  if (mc.distill == DistillKind::None) return Tensor::scalar(0.0);
  const int B = lq.f_fr.dim(0);
  const bool l2 = !mc.distill_cosine;
  std::vector<Tensor> terms;

  if (mc.distill == DistillKind::Feature) {
    auto sl = split(lq.f_fr, 0, B), sh = split(hq.f_fr, 0, B);
    for (int i = 0; i < B; ++i) {
      terms.push_back(distill_loss_maps(sl[static_cast<size_t>(i)], sh[static_cast<size_t>(i)], l2));
    }
  } else if (mc.distill == DistillKind::Cbam) {
    Tensor ml = cbam_spatial_attention(lq.f_fr, s.cbam);
    Tensor mh = cbam_spatial_attention(hq.f_fr, s.cbam);
    auto sl = split(ml, 0, B), sh = split(mh, 0, B);
    for (int i = 0; i < B; ++i) {
      terms.push_back(distill_loss_maps(sl[static_cast<size_t>(i)], sh[static_cast<size_t>(i)], l2));
    }
  } else {
    const int N = lq.fr_bundle.A.dim(1), C = lq.fr_bundle.A.dim(2);
    auto al = split(lq.fr_bundle.A, 0, B), vl = split(lq.fr_bundle.V, 0, B);
    auto ah = split(hq.fr_bundle.A, 0, B), vh = split(hq.fr_bundle.V, 0, B);
    for (int i = 0; i < B; ++i) {
      const auto k = static_cast<size_t>(i);
      AttentionBundle bl, bh;
      bl.A = reshape(al[k], {N, C});
      bl.V = reshape(vl[k], {N, C});
      bh.A = reshape(ah[k], {N, C});
      bh.V = reshape(vh[k], {N, C});
      terms.push_back(mc.distill_cosine ? distill_loss(bl, bh) : distill_loss_l2(bl, bh));
    }
  }

  Tensor sum = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) sum = add(sum, terms[i]);
  return scale(sum, 1.0 / B);
}

std::vector<int> doubled(const std::vector<int>& y) {
  std::vector<int> yy = y;
  yy.insert(yy.end(), y.begin(), y.end());
  return yy;
}

TrainLog run_training(ModelState& s, const Dataset& ds, const TrainConfig& cfg, int step) {
  validate_train(cfg, s, ds);
  auto params = trainable_params(s, step, cfg.freeze_backbone);
  for (auto& nt : params) nt.t.set_requires_grad(true);
  Sgd opt{cfg.momentum, {}};
  TrainLog log;

  const int bpe = cfg.batches_per_epoch > 0
                      ? cfg.batches_per_epoch
                      : static_cast<int>((20 * ds.train.size() + static_cast<size_t>(cfg.batch_size) - 1) /
                                         static_cast<size_t>(cfg.batch_size));
  const char* tag = step == 1 ? "step1-batch" : "step2-batch";

  std::ofstream logf;
  if (!cfg.log_path.empty()) {
    logf.open(cfg.log_path, std::ios::app);
    if (!logf.is_open()) throw IoError("trainer: cannot open log " + cfg.log_path);
  }

  for (int epoch = s.epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(cfg, epoch);
    EpochRecord r;
    r.step = step;
    r.epoch = epoch;
    r.lr = lr;

    for (int bi = 0; bi < bpe; ++bi) {
      const uint64_t bseed = derive_seed(
          cfg.seed, tag, static_cast<uint64_t>(epoch) * static_cast<uint64_t>(bpe) +
                             static_cast<uint64_t>(bi));
      PairedBatch pb = make_batch(ds, cfg.batch_size, cfg.degradation, bseed);
      try {
        GradTape tape;
        GradTape::Scope scope(tape);
        BatchLosses bl = step == 1 ? step1_batch_loss(s, pb, cfg) : step2_batch_loss(s, pb, cfg);
        if (!std::isfinite(bl.total.value())) {
          throw NumericError("trainer: non-finite loss at epoch " + std::to_string(epoch) +
                             " batch " + std::to_string(bi));
        }
        tape.backward(bl.total);
        r.loss += bl.total.value();
        r.fr += bl.fr.value();
        r.sb += bl.sb.value();
        r.distill += bl.distill.value();
        r.grad_norm += grad_norm(params);
      } catch (const NumericError& e) {
        for (auto& nt : params) {
          nt.t.zero_grad();
          nt.t.set_requires_grad(false);
        }
        save_checkpoint(s, cfg.snapshot_path);
        throw NumericError(std::string(e.what()) + "; state saved to " + cfg.snapshot_path);
      }
      opt.step(params, lr);
    }

    r.loss /= bpe;
    r.fr /= bpe;
    r.sb /= bpe;
    r.distill /= bpe;
    r.grad_norm /= bpe;
    r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    s.epoch = epoch + 1;
    log.records.push_back(r);
    if (logf.is_open()) logf << format_record(r) << '\n' << std::flush;
  }

  for (auto& nt : params) {
    nt.t.zero_grad();
    nt.t.set_requires_grad(false);
  }
  return log;
}

}  // namespace

double lr_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr0;
  for (int d : cfg.decay_epochs) {
    if (d <= epoch) lr *= cfg.decay_factor;
  }
  return lr;
}

std::string format_record(const EpochRecord& r) {
  std::ostringstream os;
  os.precision(9);
  os << "step=" << r.step << " epoch=" << r.epoch << " lr=" << r.lr << " loss=" << r.loss
     << " fr=" << r.fr << " sb=" << r.sb << " distill=" << r.distill
     << " grad_norm=" << r.grad_norm << " wall_s=" << r.wall_s;
  return os.str();
}

std::vector<NamedTensor> trainable_params(ModelState& s, int step, bool freeze_backbone) {
  std::vector<NamedTensor> all;
  append_params(s, all);
  std::vector<NamedTensor> out;
  for (auto& nt : all) {
    const bool fusion = starts_with(nt.name, "catf.") || starts_with(nt.name, "fused.");
    const bool keep = step == 1 ? !fusion : (!freeze_backbone || fusion);
    if (keep) out.push_back(nt);
  }
  return out;
}

BatchLosses step1_batch_loss(ModelState& s, const PairedBatch& b, const TrainConfig& cfg) {
  Step1Out hq = forward_step1(s, b.hq, true);
  BatchLosses out;
  if (cfg.aug) {
    Step1Out lq = forward_step1(s, b.lq, true);
    out.fr = adaface_loss(concat({hq.fr_embed, lq.fr_embed}, 0), s.fr_W, doubled(b.id_list),
                          cfg.margin, &s.fr_stats);
    out.sb = sb_loss(concat({hq.sb_probs, lq.sb_probs}, 0), concat({b.attrs, b.attrs}, 0),
                     cfg.weights);
    out.distill = batch_distill(lq, hq, s);
  } else {
    out.fr = adaface_loss(hq.fr_embed, s.fr_W, b.id_list, cfg.margin, &s.fr_stats);
    out.sb = sb_loss(hq.sb_probs, b.attrs, cfg.weights);
    out.distill = Tensor::scalar(0.0);
  }
  out.total = total_step1_loss(out.fr, out.sb, out.distill, cfg.weights);
  return out;
}

BatchLosses step2_batch_loss(ModelState& s, const PairedBatch& b, const TrainConfig& cfg) {
  Step2Out hq = forward_step2(s, b.hq, true);
  BatchLosses out;
  if (cfg.aug) {
    Step2Out lq = forward_step2(s, b.lq, true);
    out.fr = adaface_loss(concat({hq.fused_embed, lq.fused_embed}, 0), s.fused_W,
                          doubled(b.id_list), cfg.margin, &s.fused_stats);
  } else {
    out.fr = adaface_loss(hq.fused_embed, s.fused_W, b.id_list, cfg.margin, &s.fused_stats);
  }
  out.sb = Tensor::scalar(0.0);
  if (cfg.step2_distill && cfg.aug && s.config.distill != DistillKind::None) {
    Step1Out h1 = forward_step1(s, b.hq, true);
    Step1Out l1 = forward_step1(s, b.lq, true);
    out.distill = batch_distill(l1, h1, s);
    out.total = add(out.fr, scale(out.distill, cfg.weights.lambda_distill));
  } else {
    out.distill = Tensor::scalar(0.0);
    out.total = out.fr;
  }
  return out;
}

TrainLog train_step1(ModelState& s, const Dataset& ds, const TrainConfig& cfg) {
  return run_training(s, ds, cfg, 1);
}

TrainLog train_step2(ModelState& s, const Dataset& ds, const TrainConfig& cfg) {
  return run_training(s, ds, cfg, 2);
}

}  // namespace catface
