#include "catf.hpp"

#include <cmath>
#include <functional>

#include "errors.hpp"

namespace catface {

MdconvParams MdconvParams::init(int ch, Rng& rng) {
  if (ch % 3 != 0) {
    throw ConfigError("mdconv: hidden width " + std::to_string(ch) + " not divisible by 3");
  }
  const int cg = ch / 3;
  MdconvParams p;
  p.k3 = Tensor::randn({3, 3, cg}, rng, 1.0 / 3.0);
  p.k17 = Tensor::randn({1, 7, cg}, rng, 1.0 / std::sqrt(7.0));
  p.k71 = Tensor::randn({7, 1, cg}, rng, 1.0 / std::sqrt(7.0));
  p.b3 = Tensor::zeros({cg});
  p.b17 = Tensor::zeros({cg});
  p.b71 = Tensor::zeros({cg});
  return p;
}

MdconvParams MdconvParams::delta_init(int ch) {
  if (ch % 3 != 0) {
    throw ConfigError("mdconv: hidden width " + std::to_string(ch) + " not divisible by 3");
  }
  const int cg = ch / 3;
  MdconvParams p;
  p.k3 = Tensor::zeros({3, 3, cg});
  p.k17 = Tensor::zeros({1, 7, cg});
  p.k71 = Tensor::zeros({7, 1, cg});
  for (int c = 0; c < cg; ++c) {
    p.k3.ptr()[(1 * 3 + 1) * cg + c] = 1.0;
    p.k17.ptr()[3 * cg + c] = 1.0;
    p.k71.ptr()[3 * cg + c] = 1.0;
  }
  p.b3 = Tensor::zeros({cg});
  p.b17 = Tensor::zeros({cg});
  p.b71 = Tensor::zeros({cg});
  return p;
}

Tensor mdconv(const Tensor& x, const MdconvParams& p) {
  const int ch = x.shape().back();
  if (ch % 3 != 0) {
    throw DimensionError("mdconv: channel width of " + shape_str(x.shape()) +
                         " not divisible by 3");
  }
  auto groups = split(x, x.rank() - 1, 3);
  Tensor streams = concat({depthwise_conv(groups[0], p.k3, p.b3),
                           depthwise_conv(groups[1], p.k17, p.b17),
                           depthwise_conv(groups[2], p.k71, p.b71)},
                          x.rank() - 1);
  return add(streams, x);
}

MffnlParams MffnlParams::init(int c, Rng& rng) {
  const int ch = 3 * c;
  MffnlParams p;
  p.expand_w = Tensor::randn({c, ch}, rng, 1.0 / std::sqrt(static_cast<double>(c)));
  p.expand_b = Tensor::zeros({ch});
  p.md = MdconvParams::init(ch, rng);
  p.project_w = Tensor::randn({ch, c}, rng, 1.0 / std::sqrt(static_cast<double>(ch)));
  p.project_b = Tensor::zeros({c});
  p.bn_expand = BatchNormState::init(ch);
  p.bn_md = BatchNormState::init(ch);
  p.bn_project = BatchNormState::init(c);
  return p;
}

Tensor mffnl(const Tensor& x, MffnlParams& p, bool training) {
  if (x.shape().back() != p.expand_w.dim(0)) {
    throw DimensionError("mffnl: input " + shape_str(x.shape()) + " does not match expansion " +
                         shape_str(p.expand_w.shape()));
  }
  Tensor h = pointwise_conv(x, p.expand_w, p.expand_b);
  if (p.norm_act) h = batchnorm(gelu(h), p.bn_expand, training);
  h = mdconv(h, p.md);
  if (p.norm_act) h = batchnorm(gelu(h), p.bn_md, training);
  h = pointwise_conv(h, p.project_w, p.project_b);
  if (p.norm_act) h = batchnorm(gelu(h), p.bn_project, training);
  return h;
}

CatfParams CatfParams::init(int c, int heads, int groups, Rng& rng) {
  if (groups <= 0 || (2 * c) % groups != 0) {
    throw ConfigError("catf: " + std::to_string(groups) + " groups do not divide fused width " +
                      std::to_string(2 * c));
  }
  CatfParams p;
  p.mca = McaParams::init(c, heads, rng);
  p.mffnl_fr = MffnlParams::init(c, rng);
  p.mffnl_sb = MffnlParams::init(c, rng);
  p.caf_proj = CafParams::near_identity_init(2 * c, rng);
  p.bn_mca_fr = BatchNormState::init(c);
  p.bn_mca_sb = BatchNormState::init(c);
  p.bn_mffnl_fr = BatchNormState::init(c);
  p.bn_mffnl_sb = BatchNormState::init(c);
  p.groups = groups;
  return p;
}

namespace {

// Attention stages are defined per sample; a batch maps over the leading
// axis. Normalization and feed-forward stages handle rank 4 natively.
Tensor map_samples(const Tensor& x, const std::function<Tensor(const Tensor&)>& fn) {
  const int b = x.dim(0);
  Shape inner(x.shape().begin() + 1, x.shape().end());
  auto pieces = split(x, 0, b);
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    Tensor y = fn(reshape(pieces[static_cast<size_t>(i)], inner));
    Shape lead = y.shape();
    lead.insert(lead.begin(), 1);
    out.push_back(reshape(y, lead));
  }
  return concat(out, 0);
}

std::pair<Tensor, Tensor> mca_over_batch(const Tensor& a, const Tensor& b,
                                         const McaParams& p) {
  const int n = a.dim(0);
  Shape inner(a.shape().begin() + 1, a.shape().end());
  auto as = split(a, 0, n);
  auto bs = split(b, 0, n);
  std::vector<Tensor> oa, ob;
  oa.reserve(static_cast<size_t>(n));
  ob.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto [x, y] = multi_head_cross_attention(reshape(as[static_cast<size_t>(i)], inner),
                                             reshape(bs[static_cast<size_t>(i)], inner), p);
    Shape lead = x.shape();
    lead.insert(lead.begin(), 1);
    oa.push_back(reshape(x, lead));
    ob.push_back(reshape(y, lead));
  }
  return {concat(oa, 0), concat(ob, 0)};
}

}  // namespace

Tensor catf_forward(const Tensor& f_fr, const Tensor& f_sb, CatfParams& p, bool training) {
  if (f_fr.shape() != f_sb.shape()) {
    throw DimensionError("catf_forward: branch shapes differ, " + shape_str(f_fr.shape()) +
                         " vs " + shape_str(f_sb.shape()));
  }
  const bool batched = f_fr.rank() == 4;
  Tensor a_in_fr = p.residual ? batchnorm(f_fr, p.bn_mca_fr, training) : f_fr;
  Tensor a_in_sb = p.residual ? batchnorm(f_sb, p.bn_mca_sb, training) : f_sb;
  auto [mca_fr, mca_sb] = batched ? mca_over_batch(a_in_fr, a_in_sb, p.mca)
                                  : multi_head_cross_attention(a_in_fr, a_in_sb, p.mca);
  Tensor x_fr = p.residual ? add(f_fr, mca_fr) : mca_fr;
  Tensor x_sb = p.residual ? add(f_sb, mca_sb) : mca_sb;

  Tensor y_fr = x_fr, y_sb = x_sb;
  if (p.use_mffnl) {
    Tensor m_in_fr = p.residual ? batchnorm(x_fr, p.bn_mffnl_fr, training) : x_fr;
    Tensor m_in_sb = p.residual ? batchnorm(x_sb, p.bn_mffnl_sb, training) : x_sb;
    Tensor m_fr = mffnl(m_in_fr, p.mffnl_fr, training);
    Tensor m_sb = mffnl(m_in_sb, p.mffnl_sb, training);
    y_fr = p.residual ? add(x_fr, m_fr) : m_fr;
    y_sb = p.residual ? add(x_sb, m_sb) : m_sb;
  }

  Tensor cat = concat({y_fr, y_sb}, f_fr.rank() - 1);
  if (p.use_caf) {
    if (batched) {
      cat = map_samples(cat, [&](const Tensor& t) { return caf(t, p.caf_proj, p.groups); });
    } else {
      cat = caf(cat, p.caf_proj, p.groups);
    }
  }
  return cat;
}

void append_params(MdconvParams& p, const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".k3", p.k3});
  out.push_back({prefix + ".k17", p.k17});
  out.push_back({prefix + ".k71", p.k71});
  out.push_back({prefix + ".b3", p.b3});
  out.push_back({prefix + ".b17", p.b17});
  out.push_back({prefix + ".b71", p.b71});
}

void append_params(MffnlParams& p, const std::string& prefix, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".expand_w", p.expand_w});
  out.push_back({prefix + ".expand_b", p.expand_b});
  append_params(p.md, prefix + ".md", out);
  out.push_back({prefix + ".project_w", p.project_w});
  out.push_back({prefix + ".project_b", p.project_b});
  append_params(p.bn_expand, prefix + ".bn_expand", out);
  append_params(p.bn_md, prefix + ".bn_md", out);
  append_params(p.bn_project, prefix + ".bn_project", out);
}

void append_params(CatfParams& p, const std::string& prefix, std::vector<NamedTensor>& out) {
  append_params(p.mca, prefix + ".mca", out);
  append_params(p.mffnl_fr, prefix + ".mffnl_fr", out);
  append_params(p.mffnl_sb, prefix + ".mffnl_sb", out);
  append_params(p.caf_proj, prefix + ".caf", out);
  append_params(p.bn_mca_fr, prefix + ".bn_mca_fr", out);
  append_params(p.bn_mca_sb, prefix + ".bn_mca_sb", out);
  append_params(p.bn_mffnl_fr, prefix + ".bn_mffnl_fr", out);
  append_params(p.bn_mffnl_sb, prefix + ".bn_mffnl_sb", out);
}

void append_buffers(MffnlParams& p, const std::string& prefix, std::vector<NamedTensor>& out) {
  append_buffers(p.bn_expand, prefix + ".bn_expand", out);
  append_buffers(p.bn_md, prefix + ".bn_md", out);
  append_buffers(p.bn_project, prefix + ".bn_project", out);
}

void append_buffers(CatfParams& p, const std::string& prefix, std::vector<NamedTensor>& out) {
  append_buffers(p.mffnl_fr, prefix + ".mffnl_fr", out);
  append_buffers(p.mffnl_sb, prefix + ".mffnl_sb", out);
  append_buffers(p.bn_mca_fr, prefix + ".bn_mca_fr", out);
  append_buffers(p.bn_mca_sb, prefix + ".bn_mca_sb", out);
  append_buffers(p.bn_mffnl_fr, prefix + ".bn_mffnl_fr", out);
  append_buffers(p.bn_mffnl_sb, prefix + ".bn_mffnl_sb", out);
}

}  // namespace catface
