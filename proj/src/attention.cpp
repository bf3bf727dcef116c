#include "attention.hpp"

#include <cmath>

#include "errors.hpp"

namespace catface {

namespace {

// H×W×C -> N×C token matrix; N×C passes through.
Tensor tokens(const Tensor& f, const char* op) {
  if (f.rank() == 2) return f;
  if (f.rank() == 3) return reshape(f, {f.dim(0) * f.dim(1), f.dim(2)});
  throw DimensionError(std::string(op) + ": expected H×W×C or N×C, got " + shape_str(f.shape()));
}

Tensor scaled_row_attention(const Tensor& q, const Tensor& k) {
  const double temp = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return softmax_rows(scale(matmul(q, transpose(k)), temp));
}

}  // namespace

ProjectionSet ProjectionSet::init(int c, Rng& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(c));
  ProjectionSet p;
  p.W_q = Tensor::randn({c, c}, rng, stddev);
  p.W_k = Tensor::randn({c, c}, rng, stddev);
  p.W_v = Tensor::randn({c, c}, rng, stddev);
  return p;
}

ProjectionSet ProjectionSet::identity_init(int c) {
  ProjectionSet p;
  p.W_q = Tensor::identity(c);
  p.W_k = Tensor::identity(c);
  p.W_v = Tensor::identity(c);
  return p;
}

AttentionBundle self_attention(const Tensor& f, const ProjectionSet& proj) {
  Tensor x = tokens(f, "self_attention");
  if (x.dim(1) != proj.W_q.dim(0)) {
    throw DimensionError("self_attention: tokens " + shape_str(x.shape()) +
                         " do not match projection " + shape_str(proj.W_q.shape()));
  }
  AttentionBundle b;
  b.Q = matmul(x, proj.W_q);
  b.K = matmul(x, proj.W_k);
  b.V = matmul(x, proj.W_v);
  b.scores = scaled_row_attention(b.Q, b.K);
  b.A = matmul(b.scores, b.V);
  return b;
}

std::pair<Tensor, Tensor> cross_attention_pair(const Tensor& f_fr, const Tensor& f_sb,
                                               const ProjectionSet& proj_fr,
                                               const ProjectionSet& proj_sb) {
  if (f_fr.shape() != f_sb.shape()) {
    throw DimensionError("cross_attention_pair: branch shapes differ, " + shape_str(f_fr.shape()) +
                         " vs " + shape_str(f_sb.shape()));
  }
  Tensor q_fr = matmul(f_fr, proj_fr.W_q);
  Tensor k_fr = matmul(f_fr, proj_fr.W_k);
  Tensor v_fr = matmul(f_fr, proj_fr.W_v);
  Tensor q_sb = matmul(f_sb, proj_sb.W_q);
  Tensor k_sb = matmul(f_sb, proj_sb.W_k);
  Tensor v_sb = matmul(f_sb, proj_sb.W_v);
  Tensor ca_fr = matmul(scaled_row_attention(q_fr, k_sb), v_sb);
  Tensor ca_sb = matmul(scaled_row_attention(q_sb, k_fr), v_fr);
  return {ca_fr, ca_sb};
}

McaParams McaParams::init(int c, int heads, Rng& rng) {
  if (heads <= 0 || c % heads != 0) {
    throw ConfigError("multi-head attention: " + std::to_string(heads) +
                      " heads do not divide width " + std::to_string(c));
  }
  McaParams p;
  p.fr = ProjectionSet::init(c, rng);
  p.sb = ProjectionSet::init(c, rng);
  p.W_o_fr = Tensor::identity(c);
  p.W_o_sb = Tensor::identity(c);
  p.heads = heads;
  return p;
}

std::pair<Tensor, Tensor> multi_head_cross_attention(const Tensor& f_fr, const Tensor& f_sb,
                                                     const McaParams& p) {
  if (f_fr.shape() != f_sb.shape()) {
    throw DimensionError("multi_head_cross_attention: branch shapes differ, " +
                         shape_str(f_fr.shape()) + " vs " + shape_str(f_sb.shape()));
  }
  Tensor x_fr = tokens(f_fr, "multi_head_cross_attention");
  Tensor x_sb = tokens(f_sb, "multi_head_cross_attention");
  const int c = x_fr.dim(1);
  if (p.heads <= 0 || c % p.heads != 0) {
    throw DimensionError("multi_head_cross_attention: " + std::to_string(p.heads) +
                         " heads do not divide width " + std::to_string(c));
  }

  auto qf = split(p.fr.W_q, 1, p.heads);
  auto kf = split(p.fr.W_k, 1, p.heads);
  auto vf = split(p.fr.W_v, 1, p.heads);
  auto qs = split(p.sb.W_q, 1, p.heads);
  auto ks = split(p.sb.W_k, 1, p.heads);
  auto vs = split(p.sb.W_v, 1, p.heads);

  std::vector<Tensor> heads_fr, heads_sb;
  heads_fr.reserve(static_cast<size_t>(p.heads));
  heads_sb.reserve(static_cast<size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    ProjectionSet pf{qf[static_cast<size_t>(h)], kf[static_cast<size_t>(h)], vf[static_cast<size_t>(h)]};
    ProjectionSet ps{qs[static_cast<size_t>(h)], ks[static_cast<size_t>(h)], vs[static_cast<size_t>(h)]};
    auto [ca_fr, ca_sb] = cross_attention_pair(x_fr, x_sb, pf, ps);
    heads_fr.push_back(ca_fr);
    heads_sb.push_back(ca_sb);
  }
  Tensor out_fr = matmul(concat(heads_fr, 1), p.W_o_fr);
  Tensor out_sb = matmul(concat(heads_sb, 1), p.W_o_sb);
  if (f_fr.rank() == 3) {
    out_fr = reshape(out_fr, f_fr.shape());
    out_sb = reshape(out_sb, f_sb.shape());
  }
  return {out_fr, out_sb};
}

CafParams CafParams::init(int width, Rng& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(width));
  CafParams p;
  p.W_q = Tensor::randn({width, width}, rng, stddev);
  p.W_k = Tensor::randn({width, width}, rng, stddev);
  p.W_v = Tensor::randn({width, width}, rng, stddev);
  return p;
}

CafParams CafParams::near_identity_init(int width, Rng& rng, double noise) {
  CafParams p;
  auto jittered = [&] {
    Tensor w = Tensor::identity(width);
    for (size_t i = 0; i < w.size(); ++i) w.ptr()[i] += rng.normal(0.0, noise);
    return w;
  };
  p.W_q = jittered();
  p.W_k = jittered();
  p.W_v = jittered();
  return p;
}

Tensor caf(const Tensor& f_cat, const CafParams& p, int groups) {
  Tensor x = tokens(f_cat, "caf");
  const int width = x.dim(1);
  if (groups <= 0 || width % groups != 0) {
    throw DimensionError("caf: " + std::to_string(groups) + " groups do not divide width " +
                         std::to_string(width));
  }
  if (p.W_q.dim(0) != width) {
    throw DimensionError("caf: projection " + shape_str(p.W_q.shape()) + " does not match width " +
                         std::to_string(width));
  }
  const int cc = width / groups;
  const double temp = 1.0 / std::sqrt(static_cast<double>(cc));

  Tensor q = matmul(x, p.W_q);
  Tensor k = matmul(x, p.W_k);
  Tensor v = matmul(x, p.W_v);
  auto qg = split(q, 1, groups);
  auto kg = split(k, 1, groups);
  auto vg = split(v, 1, groups);

  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(groups));
  for (int g = 0; g < groups; ++g) {
    const size_t gi = static_cast<size_t>(g);
    // channel tokens: C_c×C_c scores from the spatial inner product
    Tensor s = softmax_rows(scale(matmul(transpose(qg[gi]), kg[gi]), temp));
    outs.push_back(transpose(matmul(s, transpose(vg[gi]))));
  }
  Tensor out = concat(outs, 1);
  if (f_cat.rank() == 3) out = reshape(out, f_cat.shape());
  return out;
}

CbamParams CbamParams::init(Rng& rng) {
  CbamParams p;
  p.w = Tensor::randn({3, 3, 2, 1}, rng, 1.0 / std::sqrt(18.0));
  p.b = Tensor::zeros({1});
  return p;
}

Tensor cbam_spatial_attention(const Tensor& f, const CbamParams& p) {
  Tensor pooled = concat({channel_mean(f), channel_max(f)}, f.rank() - 1);
  return sigmoid(conv2d(pooled, p.w, p.b));
}

void append_params(ProjectionSet& p, const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".wq", p.W_q});
  out.push_back({prefix + ".wk", p.W_k});
  out.push_back({prefix + ".wv", p.W_v});
}

void append_params(McaParams& p, const std::string& prefix, std::vector<NamedTensor>& out) {
  append_params(p.fr, prefix + ".fr", out);
  append_params(p.sb, prefix + ".sb", out);
  out.push_back({prefix + ".wo_fr", p.W_o_fr});
  out.push_back({prefix + ".wo_sb", p.W_o_sb});
}

void append_params(CafParams& p, const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".wq", p.W_q});
  out.push_back({prefix + ".wk", p.W_k});
  out.push_back({prefix + ".wv", p.W_v});
}

void append_params(CbamParams& p, const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".w", p.w});
  out.push_back({prefix + ".b", p.b});
}

}  // namespace catface
