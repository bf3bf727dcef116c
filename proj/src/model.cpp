#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace catface {

namespace {

void validate_config(const ModelConfig& cfg) {
  if (cfg.trunk_channels.empty()) throw ConfigError("model: trunk needs at least one block");
  if (cfg.channels != 1 && cfg.channels != 3) throw ConfigError("model: 1 or 3 input channels");
  const int k = static_cast<int>(cfg.trunk_channels.size());
  if (cfg.height % (1 << k) != 0 || cfg.width % (1 << k) != 0) {
    throw ConfigError("model: image size must be divisible by 2^" + std::to_string(k));
  }
  if (cfg.feature_height() < 1 || cfg.feature_width() < 1) {
    throw ConfigError("model: trunk pools the image away");
  }
  if (cfg.branch_blocks < 1) throw ConfigError("model: branches need at least one block");
  if (cfg.embed_dim < 1) throw ConfigError("model: embedding dim must be positive");
  if (cfg.n_classes < 2) throw ConfigError("model: margin classifier needs >= 2 classes");
}

void append_params(ConvBlock& b, const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".w", b.w});
  out.push_back({prefix + ".b", b.b});
  append_params(b.bn, prefix + ".bn", out);
}

void append_buffers(ConvBlock& b, const std::string& prefix, std::vector<NamedTensor>& out) {
  append_buffers(b.bn, prefix + ".bn", out);
}

void check_images(const ModelConfig& cfg, const Tensor& imgs, const char* op) {
  if (imgs.rank() != 4 || imgs.dim(1) != cfg.height || imgs.dim(2) != cfg.width ||
      imgs.dim(3) != cfg.channels) {
    throw DimensionError(std::string(op) + ": expected B×" + std::to_string(cfg.height) + "×" +
                         std::to_string(cfg.width) + "×" + std::to_string(cfg.channels) +
                         " images, got " + shape_str(imgs.shape()));
  }
}

Tensor conv_block(ConvBlock& blk, const Tensor& x, bool training, bool pool) {
  Tensor h = gelu(batchnorm(conv2d(x, blk.w, blk.b), blk.bn, training));
  return pool ? avg_pool2(h) : h;
}

std::pair<Tensor, Tensor> branch_features(ModelState& s, const Tensor& imgs, bool training) {
  Tensor h = imgs;
  for (auto& blk : s.trunk) h = conv_block(blk, h, training, true);
  Tensor f_fr = h, f_sb = h;
  for (auto& blk : s.fr_blocks) f_fr = conv_block(blk, f_fr, training, false);
  for (auto& blk : s.sb_blocks) f_sb = conv_block(blk, f_sb, training, false);
  return {f_fr, f_sb};
}

// Stacks per-sample self-attention results along a new leading axis.
AttentionBundle attention_over_batch(const Tensor& f, const ProjectionSet& proj) {
  const int B = f.dim(0), h = f.dim(1), w = f.dim(2), c = f.dim(3);
  const int n = h * w;
  auto pieces = split(f, 0, B);
  std::vector<Tensor> q, k, v, a, sc;
  for (int i = 0; i < B; ++i) {
    AttentionBundle b = self_attention(reshape(pieces[static_cast<size_t>(i)], {h, w, c}), proj);
    q.push_back(reshape(b.Q, {1, n, c}));
    k.push_back(reshape(b.K, {1, n, c}));
    v.push_back(reshape(b.V, {1, n, c}));
    a.push_back(reshape(b.A, {1, n, c}));
    sc.push_back(reshape(b.scores, {1, n, n}));
  }
  AttentionBundle out;
  out.Q = concat(q, 0);
  out.K = concat(k, 0);
  out.V = concat(v, 0);
  out.A = concat(a, 0);
  out.scores = concat(sc, 0);
  return out;
}

Tensor unit_columns(const Tensor& W) { return transpose(l2_normalize_rows(transpose(W))); }

std::vector<double> config_blob(const ModelConfig& c) {
  std::vector<double> v = {1.0,
                           static_cast<double>(c.height),
                           static_cast<double>(c.width),
                           static_cast<double>(c.channels),
                           static_cast<double>(c.branch_blocks),
                           static_cast<double>(c.embed_dim),
                           static_cast<double>(c.n_classes),
                           static_cast<double>(c.heads),
                           static_cast<double>(c.caf_groups),
                           static_cast<double>(static_cast<int>(c.distill)),
                           c.distill_cosine ? 1.0 : 0.0,
                           c.catf_residual ? 1.0 : 0.0,
                           c.use_mffnl ? 1.0 : 0.0,
                           c.use_caf ? 1.0 : 0.0,
                           c.mffnl_norm_act ? 1.0 : 0.0,
                           static_cast<double>(c.init_seed & 0xFFFFFFFFull),
                           static_cast<double>(c.init_seed >> 32),
                           static_cast<double>(c.trunk_channels.size())};
  for (int tc : c.trunk_channels) v.push_back(static_cast<double>(tc));
  return v;
}

ModelConfig config_from_blob(const Tensor& t) {
  if (t.rank() != 1 || t.size() < 18 || t.ptr()[0] != 1.0) {
    throw IoError("checkpoint config record is malformed");
  }
  const double* p = t.ptr();
  ModelConfig c;
  c.height = static_cast<int>(p[1]);
  c.width = static_cast<int>(p[2]);
  c.channels = static_cast<int>(p[3]);
  c.branch_blocks = static_cast<int>(p[4]);
  c.embed_dim = static_cast<int>(p[5]);
  c.n_classes = static_cast<int>(p[6]);
  c.heads = static_cast<int>(p[7]);
  c.caf_groups = static_cast<int>(p[8]);
  c.distill = static_cast<DistillKind>(static_cast<int>(p[9]));
  c.distill_cosine = p[10] != 0.0;
  c.catf_residual = p[11] != 0.0;
  c.use_mffnl = p[12] != 0.0;
  c.use_caf = p[13] != 0.0;
  c.mffnl_norm_act = p[14] != 0.0;
  c.init_seed = static_cast<uint64_t>(p[15]) | (static_cast<uint64_t>(p[16]) << 32);
  const int k = static_cast<int>(p[17]);
  if (t.size() != static_cast<size_t>(18 + k)) {
    throw IoError("checkpoint config record is malformed");
  }
  c.trunk_channels.clear();
  for (int i = 0; i < k; ++i) c.trunk_channels.push_back(static_cast<int>(p[18 + i]));
  return c;
}

Tensor stats_tensor(const AdaFaceStats& st) {
  return Tensor::from_data({3}, {st.mu, st.sigma, st.initialized ? 1.0 : 0.0});
}

AdaFaceStats stats_from(const Tensor& t) {
  AdaFaceStats st;
  st.mu = t.ptr()[0];
  st.sigma = t.ptr()[1];
  st.initialized = t.ptr()[2] != 0.0;
  return st;
}

}  // namespace

ModelConfig ModelConfig::desk(int n_classes, uint64_t seed) {
  ModelConfig c;
  c.n_classes = n_classes;
  c.init_seed = seed;
  return c;
}

ModelConfig ModelConfig::toy(int n_classes, uint64_t seed) {
  ModelConfig c;
  c.trunk_channels = {6, 12, 24};
  c.embed_dim = 32;
  c.n_classes = n_classes;
  c.init_seed = seed;
  return c;
}

ModelConfig ModelConfig::micro(int n_classes, uint64_t seed) {
  ModelConfig c;
  c.height = 8;
  c.width = 8;
  c.trunk_channels = {6};
  c.embed_dim = 8;
  c.heads = 2;
  c.caf_groups = 4;
  c.n_classes = n_classes;
  c.init_seed = seed;
  return c;
}

ConvBlock ConvBlock::init(int cin, int cout, Rng& rng) {
  ConvBlock b;
  b.w = Tensor::randn({3, 3, cin, cout}, rng, 1.0 / std::sqrt(9.0 * cin));
  b.b = Tensor::zeros({cout});
  b.bn = BatchNormState::init(cout);
  return b;
}

ModelState ModelState::init(const ModelConfig& cfg) {
  validate_config(cfg);
  ModelState s;
  s.config = cfg;
  const int C = cfg.feature_channels();
  const int d = cfg.embed_dim;

  int cin = cfg.channels;
  for (size_t i = 0; i < cfg.trunk_channels.size(); ++i) {
    Rng rng(derive_seed(cfg.init_seed, "trunk", i));
    s.trunk.push_back(ConvBlock::init(cin, cfg.trunk_channels[i], rng));
    cin = cfg.trunk_channels[i];
  }
  for (int i = 0; i < cfg.branch_blocks; ++i) {
    Rng rf(derive_seed(cfg.init_seed, "fr-block", static_cast<uint64_t>(i)));
    s.fr_blocks.push_back(ConvBlock::init(C, C, rf));
    Rng rs(derive_seed(cfg.init_seed, "sb-block", static_cast<uint64_t>(i)));
    s.sb_blocks.push_back(ConvBlock::init(C, C, rs));
  }
  {
    Rng r(derive_seed(cfg.init_seed, "fr-attn"));
    s.fr_attn = ProjectionSet::init(C, r);
  }
  {
    Rng r(derive_seed(cfg.init_seed, "sb-attn"));
    s.sb_attn = ProjectionSet::init(C, r);
  }
  {
    Rng r(derive_seed(cfg.init_seed, "fr-head"));
    s.fr_fc_w = Tensor::randn({C, d}, r, 1.0 / std::sqrt(static_cast<double>(C)));
    s.fr_fc_b = Tensor::zeros({d});
  }
  {
    Rng r(derive_seed(cfg.init_seed, "fr-classifier"));
    s.fr_W = Tensor::randn({d, cfg.n_classes}, r, 1.0 / std::sqrt(static_cast<double>(d)));
  }
  {
    Rng r(derive_seed(cfg.init_seed, "sb-head"));
    s.sb_fc_w = Tensor::randn({C, kNumAttributes}, r, 1.0 / std::sqrt(static_cast<double>(C)));
    s.sb_fc_b = Tensor::zeros({kNumAttributes});
  }
  {
    Rng r(derive_seed(cfg.init_seed, "cbam"));
    s.cbam = CbamParams::init(r);
  }
  {
    Rng r(derive_seed(cfg.init_seed, "catf"));
    s.catf = CatfParams::init(C, cfg.heads, cfg.caf_groups, r);
    s.catf.residual = cfg.catf_residual;
    s.catf.use_mffnl = cfg.use_mffnl;
    s.catf.use_caf = cfg.use_caf;
    s.catf.mffnl_fr.norm_act = cfg.mffnl_norm_act;
    s.catf.mffnl_sb.norm_act = cfg.mffnl_norm_act;
  }
  {
    Rng r(derive_seed(cfg.init_seed, "fused-head"));
    s.fused_fc_w = Tensor::randn({2 * C, d}, r, 1.0 / std::sqrt(2.0 * C));
    s.fused_fc_b = Tensor::zeros({d});
  }
  {
    Rng r(derive_seed(cfg.init_seed, "fused-classifier"));
    s.fused_W = Tensor::randn({d, cfg.n_classes}, r, 1.0 / std::sqrt(static_cast<double>(d)));
  }
  return s;
}

void append_params(ModelState& s, std::vector<NamedTensor>& out) {
  for (size_t i = 0; i < s.trunk.size(); ++i) {
    append_params(s.trunk[i], "trunk." + std::to_string(i), out);
  }
  for (size_t i = 0; i < s.fr_blocks.size(); ++i) {
    append_params(s.fr_blocks[i], "fr.block" + std::to_string(i), out);
  }
  for (size_t i = 0; i < s.sb_blocks.size(); ++i) {
    append_params(s.sb_blocks[i], "sb.block" + std::to_string(i), out);
  }
  append_params(s.fr_attn, "fr.attn", out);
  append_params(s.sb_attn, "sb.attn", out);
  out.push_back({"fr.fc.w", s.fr_fc_w});
  out.push_back({"fr.fc.b", s.fr_fc_b});
  out.push_back({"fr.W", s.fr_W});
  out.push_back({"sb.fc.w", s.sb_fc_w});
  out.push_back({"sb.fc.b", s.sb_fc_b});
  append_params(s.cbam, "cbam", out);
  append_params(s.catf, "catf", out);
  out.push_back({"fused.fc.w", s.fused_fc_w});
  out.push_back({"fused.fc.b", s.fused_fc_b});
  out.push_back({"fused.W", s.fused_W});
}

void append_buffers(ModelState& s, std::vector<NamedTensor>& out) {
  for (size_t i = 0; i < s.trunk.size(); ++i) {
    append_buffers(s.trunk[i], "trunk." + std::to_string(i), out);
  }
  for (size_t i = 0; i < s.fr_blocks.size(); ++i) {
    append_buffers(s.fr_blocks[i], "fr.block" + std::to_string(i), out);
  }
  for (size_t i = 0; i < s.sb_blocks.size(); ++i) {
    append_buffers(s.sb_blocks[i], "sb.block" + std::to_string(i), out);
  }
  append_buffers(s.catf, "catf", out);
}

Step1Out forward_step1(ModelState& s, const Tensor& imgs, bool training) {
  check_images(s.config, imgs, "forward_step1");
  const int B = imgs.dim(0);
  const int fh = s.config.feature_height(), fw = s.config.feature_width();
  const int C = s.config.feature_channels();

  Step1Out out;
  std::tie(out.f_fr, out.f_sb) = branch_features(s, imgs, training);
  out.fr_bundle = attention_over_batch(out.f_fr, s.fr_attn);
  out.sb_bundle = attention_over_batch(out.f_sb, s.sb_attn);

  Tensor a_fr = reshape(out.fr_bundle.A, {B, fh, fw, C});
  out.fr_embed = add_bias(matmul(global_avg_pool(a_fr), s.fr_fc_w), s.fr_fc_b);
  Tensor a_sb = reshape(out.sb_bundle.A, {B, fh, fw, C});
  out.sb_probs = sigmoid(add_bias(matmul(global_avg_pool(a_sb), s.sb_fc_w), s.sb_fc_b));
  out.fr_cosines = matmul(l2_normalize_rows(out.fr_embed), unit_columns(s.fr_W));
  return out;
}

Step2Out forward_step2(ModelState& s, const Tensor& imgs, bool training) {
  check_images(s.config, imgs, "forward_step2");
  Step2Out out;
  std::tie(out.f_fr, out.f_sb) = branch_features(s, imgs, training);
  out.fused = catf_forward(out.f_fr, out.f_sb, s.catf, training);
  out.fused_embed = add_bias(matmul(global_avg_pool(out.fused), s.fused_fc_w), s.fused_fc_b);
  return out;
}

std::vector<Tensor> fr_block_trace(ModelState& s, const Tensor& imgs) {
  check_images(s.config, imgs, "fr_block_trace");
  std::vector<Tensor> trace;
  Tensor h = imgs;
  for (auto& blk : s.trunk) h = conv_block(blk, h, false, true);
  trace.push_back(h);
  for (auto& blk : s.fr_blocks) {
    h = conv_block(blk, h, false, false);
    trace.push_back(h);
  }
  return trace;
}

Tensor embed_for_verification(ModelState& s, const Tensor& imgs, bool use_fused) {
  const bool single = imgs.rank() == 3;
  Tensor batch = single ? reshape(imgs, {1, imgs.dim(0), imgs.dim(1), imgs.dim(2)}) : imgs;
  Tensor z = use_fused ? forward_step2(s, batch, false).fused_embed
                       : forward_step1(s, batch, false).fr_embed;
  for (int i = 0; i < z.dim(0); ++i) {
    double sq = 0.0;
    for (int j = 0; j < z.dim(1); ++j) sq += z.at({i, j}) * z.at({i, j});
    if (sq < 1e-18) throw NumericError("verification embedding has vanishing norm");
  }
  Tensor unit = l2_normalize_rows(z);
  return single ? reshape(unit, {unit.dim(1)}) : unit;
}

void save_checkpoint(ModelState& s, const std::string& path) {
  std::vector<NamedTensor> all;
  all.push_back({"meta.version", Tensor::scalar(1.0)});
  all.push_back({"meta.epoch", Tensor::scalar(static_cast<double>(s.epoch))});
  all.push_back({"meta.config", Tensor::from_data({static_cast<int>(config_blob(s.config).size())},
                                                  config_blob(s.config))});
  all.push_back({"meta.fr_stats", stats_tensor(s.fr_stats)});
  all.push_back({"meta.fused_stats", stats_tensor(s.fused_stats)});
  append_params(s, all);
  append_buffers(s, all);
  save_archive(all, path);
}

ModelState load_checkpoint(const std::string& path) {
  auto tensors = load_archive(path);
  std::map<std::string, Tensor> by_name;
  for (auto& nt : tensors) {
    if (!by_name.emplace(nt.name, nt.t).second) {
      throw IoError("checkpoint has duplicate tensor " + nt.name);
    }
  }
  auto need = [&](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint missing tensor " + name);
    return it->second;
  };

  if (need("meta.version").value() != 1.0) {
    throw IoError("unsupported checkpoint version");
  }
  ModelState s = ModelState::init(config_from_blob(need("meta.config")));
  s.epoch = static_cast<int>(need("meta.epoch").value());
  s.fr_stats = stats_from(need("meta.fr_stats"));
  s.fused_stats = stats_from(need("meta.fused_stats"));

  std::vector<NamedTensor> expected;
  append_params(s, expected);
  append_buffers(s, expected);
  for (auto& e : expected) {
    const Tensor& src = need(e.name);
    if (src.shape() != e.t.shape()) {
      throw IoError("checkpoint tensor " + e.name + " has shape " + shape_str(src.shape()) +
                    ", expected " + shape_str(e.t.shape()));
    }
    std::copy(src.ptr(), src.ptr() + src.size(), e.t.ptr());
  }
  if (expected.size() + 5 != tensors.size()) {
    throw IoError("checkpoint holds unexpected tensors");
  }
  return s;
}

}  // namespace catface
