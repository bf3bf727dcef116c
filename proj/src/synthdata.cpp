#include "synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "errors.hpp"
#include "rng.hpp"

namespace catface {

namespace {

double smoothstep(double a, double b, double x) {
  const double t = std::clamp((x - a) / (b - a), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Soft ellipse membership: 1 inside, 0 outside, cubic falloff across a halo
// that ends at sqrt(1.18) of the radii.
double ellipse_alpha(double u, double v, double cu, double cv, double ru, double rv) {
  const double du = (u - cu) / ru, dv = (v - cv) / rv;
  return 1.0 - smoothstep(1.0, 1.18, du * du + dv * dv);
}

double box_alpha(double u, double v, double cu, double cv, double hw, double hh,
                 double soft) {
  const double au = 1.0 - smoothstep(hw, hw + soft, std::abs(u - cu));
  const double av = 1.0 - smoothstep(hh, hh + soft, std::abs(v - cv));
  return au * av;
}

void paint(double& base, double color, double alpha) {
  base += (color - base) * alpha;
}

std::vector<double> gaussian_blur(const std::vector<double>& src, int H, int W, int C,
                                  double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> w(static_cast<size_t>(radius) + 1);
  double total = 0.0;
  for (int k = 0; k <= radius; ++k) {
    w[static_cast<size_t>(k)] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += (k == 0 ? 1.0 : 2.0) * w[static_cast<size_t>(k)];
  }
  for (auto& x : w) x /= total;

  auto idx = [&](int y, int x, int c) {
    return (static_cast<size_t>(y) * W + x) * C + c;
  };
  std::vector<double> mid(src.size()), out(src.size());
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < C; ++c) {
        double acc = w[0] * src[idx(y, x, c)];
        for (int k = 1; k <= radius; ++k) {
          const int xl = std::max(0, x - k), xr = std::min(W - 1, x + k);
          acc += w[static_cast<size_t>(k)] * (src[idx(y, xl, c)] + src[idx(y, xr, c)]);
        }
        mid[idx(y, x, c)] = acc;
      }
    }
  }
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < C; ++c) {
        double acc = w[0] * mid[idx(y, x, c)];
        for (int k = 1; k <= radius; ++k) {
          const int yu = std::max(0, y - k), yd = std::min(H - 1, y + k);
          acc += w[static_cast<size_t>(k)] * (mid[idx(yu, x, c)] + mid[idx(yd, x, c)]);
        }
        out[idx(y, x, c)] = acc;
      }
    }
  }
  return out;
}

double sample_bilinear(const std::vector<double>& src, int H, int W, int C, double sy,
                       double sx, int c) {
  sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
  const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
  const int y1 = std::min(H - 1, y0 + 1), x1 = std::min(W - 1, x0 + 1);
  const double fy = sy - y0, fx = sx - x0;
  auto at = [&](int y, int x) { return src[(static_cast<size_t>(y) * W + x) * C + c]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
         fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

std::vector<double> resize_bilinear(const std::vector<double>& src, int H, int W, int C,
                                    int H2, int W2) {
  std::vector<double> out(static_cast<size_t>(H2) * W2 * C);
  for (int y = 0; y < H2; ++y) {
    const double sy = (y + 0.5) * static_cast<double>(H) / H2 - 0.5;
    for (int x = 0; x < W2; ++x) {
      const double sx = (x + 0.5) * static_cast<double>(W) / W2 - 0.5;
      for (int c = 0; c < C; ++c) {
        out[(static_cast<size_t>(y) * W2 + x) * C + c] =
            sample_bilinear(src, H, W, C, sy, sx, c);
      }
    }
  }
  return out;
}

void validate_degradation(const DegradationConfig& cfg) {
  if (cfg.strength < 0.0 || cfg.strength_min < 0.0 ||
      cfg.strength_max < cfg.strength_min) {
    throw ConfigError("degradation strengths must be nonnegative and ordered");
  }
  if (cfg.gan_fraction < 0.0 || cfg.gan_fraction > 1.0) {
    throw ConfigError("gan_fraction must lie in [0,1]");
  }
}

}  // namespace

std::array<bool, kNumAttributes> derive_attributes(
    const std::array<double, kNumFaceParams>& params) {
  return {params[kBaldLevel] > 0.7, params[kNoseSize] > 0.7, params[kFaceWidth] > 0.7,
          params[kGender] > 0.5, params[kEyeSize] < 0.3};
}

IdentitySpec make_identity(int id, uint64_t base_seed) {
  IdentitySpec spec;
  spec.id = id;
  Rng rng(derive_seed(base_seed, "identity", static_cast<uint64_t>(id)));
  for (int p = 0; p < kNumFaceParams; ++p) spec.params[static_cast<size_t>(p)] = rng.uniform();
  spec.attributes = derive_attributes(spec.params);
  return spec;
}

Tensor render(const IdentitySpec& spec, uint64_t variation_seed, int height, int width,
              int channels) {
  if (height < 8 || width < 8 || (channels != 1 && channels != 3)) {
    throw ConfigError("render: need height,width >= 8 and 1 or 3 channels");
  }
  const auto& p = spec.params;
  Rng rng(variation_seed);
  const double illum = 0.92 + 0.08 * rng.uniform();
  const double grad = 0.10 * (rng.uniform() - 0.5);
  const double dx = 0.04 * (rng.uniform() - 0.5);
  const double dy = 0.04 * (rng.uniform() - 0.5);
  double tint = 0.0;
  if (channels == 3) tint = 0.05 * (rng.uniform() - 0.5);

  const bool male = p[kGender] > 0.5;
  const double rx = 0.50 + 0.22 * p[kFaceWidth], ry = 0.78;
  const double head_cv = dy + 0.02;
  const double ex_off = 0.16 + 0.14 * p[kEyeSpacing];
  const double ew = 0.085 + 0.035 * p[kEyeSize], eh = 0.025 + 0.085 * p[kEyeSize];
  const double nw = 0.035 + 0.095 * p[kNoseSize], nh = 0.06 + 0.12 * p[kNoseSize];
  const double bw = 0.09 + 0.03 * p[kBrowShape];
  const double bh = 0.016 + 0.012 * p[kBrowShape] + (male ? 0.022 : 0.0);
  const double brow_cv = dy - 0.30 - 0.04 * p[kBrowShape];
  // hair band shrinks to nothing exactly at the Bald threshold
  const double hair_frac = std::clamp((0.7 - p[kBaldLevel]) / 0.7, 0.0, 1.0);
  const double head_top = head_cv - ry;
  const double hair_bottom = head_top - 0.08 + (0.55 * ry + 0.08) * hair_frac;
  const double chin_cut = head_cv + 0.90 * ry;

  std::vector<double> pix(static_cast<size_t>(height) * width * channels);
  for (int y = 0; y < height; ++y) {
    const double v = 2.0 * (y + 0.5) / height - 1.0;
    for (int x = 0; x < width; ++x) {
      const double u = 2.0 * (x + 0.5) / width - 1.0;
      double val = 0.12;

      double head = ellipse_alpha(u, v, dx, head_cv, rx, ry);
      if (male) head *= 1.0 - smoothstep(chin_cut, chin_cut + 0.05, v);
      paint(val, 0.80, head);

      const double hair = head * (1.0 - smoothstep(hair_bottom - 0.04, hair_bottom + 0.04, v));
      paint(val, 0.22, hair);
      if (!male) {
        const double side = head * smoothstep(rx * 0.74, rx * 0.82, std::abs(u - dx)) *
                            (1.0 - smoothstep(dy + 0.40, dy + 0.48, v));
        paint(val, 0.22, side);
      }

      for (int s = -1; s <= 1; s += 2) {
        paint(val, 0.18, box_alpha(u, v, dx + s * ex_off, brow_cv, bw, bh, 0.03));
        paint(val, 0.10, ellipse_alpha(u, v, dx + s * ex_off, dy - 0.16, ew, eh));
      }
      paint(val, 0.55, ellipse_alpha(u, v, dx, dy + 0.18, nw, nh));
      paint(val, male ? 0.34 : 0.22, ellipse_alpha(u, v, dx, dy + 0.50, 0.17, 0.045));

      val = std::clamp(val * illum + grad * u, 0.0, 1.0);
      for (int c = 0; c < channels; ++c) {
        const double t = channels == 3 ? 1.0 + tint * (c - 1) : 1.0;
        pix[(static_cast<size_t>(y) * width + x) * channels + c] =
            std::clamp(val * t, 0.0, 1.0);
      }
    }
  }
  return Tensor::from_data({height, width, channels}, std::move(pix));
}

PixelBox nose_pixel_bounds(int height, int width) {
  // max nose halo ±0.141, jitter ±0.02, margin to ±0.18 in u; v likewise
  auto px = [](double coord, int n) { return (coord + 1.0) / 2.0 * n - 0.5; };
  PixelBox b;
  b.x0 = std::max(0, static_cast<int>(std::floor(px(-0.18, width))));
  b.x1 = std::min(width - 1, static_cast<int>(std::ceil(px(0.18, width))));
  b.y0 = std::max(0, static_cast<int>(std::floor(px(-0.06, height))));
  b.y1 = std::min(height - 1, static_cast<int>(std::ceil(px(0.42, height))));
  return b;
}

Tensor degrade(const Tensor& img, const DegradationConfig& cfg, uint64_t seed) {
  if (img.rank() != 3) throw DimensionError("degrade: expected H×W×ch image");
  validate_degradation(cfg);
  const int H = img.dim(0), W = img.dim(1), C = img.dim(2);
  if (cfg.strength == 0.0) return img.clone();

  std::vector<double> work(img.ptr(), img.ptr() + img.size());
  Rng rng(seed);
  if (cfg.kind == DegradationKind::GanProxy) {
    work = gaussian_blur(work, H, W, C, 0.55 * cfg.strength);
    const int H2 = std::max(2, static_cast<int>(std::lround(H / (1.0 + 0.75 * cfg.strength))));
    const int W2 = std::max(2, static_cast<int>(std::lround(W / (1.0 + 0.75 * cfg.strength))));
    work = resize_bilinear(resize_bilinear(work, H, W, C, H2, W2), H2, W2, C, H, W);
    const double noise = 0.055 * cfg.strength;
    for (auto& x : work) x += noise * rng.normal();
  } else {
    // coarse displacement grid, bilinearly upsampled per pixel
    constexpr int G = 5;
    double disp[G][G][2];
    const double amp = 1.15 * cfg.strength;
    for (int gy = 0; gy < G; ++gy) {
      for (int gx = 0; gx < G; ++gx) {
        disp[gy][gx][0] = amp * rng.normal();
        disp[gy][gx][1] = amp * rng.normal();
      }
    }
    std::vector<double> warped(work.size());
    for (int y = 0; y < H; ++y) {
      const double gv = static_cast<double>(y) / (H - 1) * (G - 1);
      const int g0 = std::min(G - 2, static_cast<int>(gv));
      const double fv = gv - g0;
      for (int x = 0; x < W; ++x) {
        const double gu = static_cast<double>(x) / (W - 1) * (G - 1);
        const int h0 = std::min(G - 2, static_cast<int>(gu));
        const double fu = gu - h0;
        double d[2];
        for (int k = 0; k < 2; ++k) {
          d[k] = (1 - fv) * ((1 - fu) * disp[g0][h0][k] + fu * disp[g0][h0 + 1][k]) +
                 fv * ((1 - fu) * disp[g0 + 1][h0][k] + fu * disp[g0 + 1][h0 + 1][k]);
        }
        for (int c = 0; c < C; ++c) {
          warped[(static_cast<size_t>(y) * W + x) * C + c] =
              sample_bilinear(work, H, W, C, y + d[1], x + d[0], c);
        }
      }
    }
    work = gaussian_blur(warped, H, W, C, 0.22 * cfg.strength);
  }
  for (auto& x : work) x = std::clamp(x, 0.0, 1.0);
  return Tensor::from_data({H, W, C}, std::move(work));
}

Dataset make_dataset(const DatasetConfig& cfg) {
  if (cfg.n_train_identities < 0 || cfg.n_eval_identities < 0) {
    throw ConfigError("identity counts must be nonnegative");
  }
  if (cfg.height < 8 || cfg.width < 8 || (cfg.channels != 1 && cfg.channels != 3)) {
    throw ConfigError("dataset images need height,width >= 8 and 1 or 3 channels");
  }
  Dataset ds;
  ds.config = cfg;
  ds.train.reserve(static_cast<size_t>(cfg.n_train_identities));
  for (int i = 0; i < cfg.n_train_identities; ++i) {
    ds.train.push_back(make_identity(i, cfg.seed));
  }
  ds.eval.reserve(static_cast<size_t>(cfg.n_eval_identities));
  for (int i = 0; i < cfg.n_eval_identities; ++i) {
    ds.eval.push_back(make_identity(cfg.n_train_identities + i, cfg.seed));
  }
  return ds;
}

PairedBatch make_batch(const Dataset& ds, int batch, const DegradationConfig& cfg,
                       uint64_t seed) {
  if (ds.train.empty()) throw DataError("make_batch: dataset has no train identities");
  if (batch <= 0 || static_cast<size_t>(batch) > ds.train.size()) {
    throw DataError("make_batch: batch size must be in [1, train size]");
  }
  validate_degradation(cfg);
  const int H = ds.config.height, W = ds.config.width, C = ds.config.channels;

  std::vector<int> order(ds.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng sel(derive_seed(seed, "batch-sel"));
  sel.shuffle(order);

  const int n_gan = static_cast<int>(std::lround(batch * cfg.gan_fraction));
  std::vector<DegradationKind> kinds(static_cast<size_t>(batch), DegradationKind::WarpProxy);
  std::fill(kinds.begin(), kinds.begin() + n_gan, DegradationKind::GanProxy);
  Rng kind_rng(derive_seed(seed, "batch-kind"));
  kind_rng.shuffle(kinds);

  PairedBatch out;
  out.hq = Tensor::zeros({batch, H, W, C});
  out.lq = Tensor::zeros({batch, H, W, C});
  out.ids = Tensor::zeros({batch});
  out.attrs = Tensor::zeros({batch, kNumAttributes});
  out.id_list.resize(static_cast<size_t>(batch));
  out.kinds = kinds;
  const size_t img_sz = static_cast<size_t>(H) * W * C;

  for (int i = 0; i < batch; ++i) {
    const IdentitySpec& spec = ds.train[static_cast<size_t>(order[static_cast<size_t>(i)])];
    Tensor hq = render(spec, derive_seed(seed, "var", static_cast<uint64_t>(i)), H, W, C);
    DegradationConfig dc = cfg;
    dc.kind = kinds[static_cast<size_t>(i)];
    if (cfg.sample_strength) {
      Rng sr(derive_seed(seed, "str", static_cast<uint64_t>(i)));
      dc.strength = sr.uniform(cfg.strength_min, cfg.strength_max);
    }
    Tensor lq = degrade(hq, dc, derive_seed(seed, "deg", static_cast<uint64_t>(i)));

    std::copy(hq.ptr(), hq.ptr() + img_sz, out.hq.ptr() + static_cast<size_t>(i) * img_sz);
    std::copy(lq.ptr(), lq.ptr() + img_sz, out.lq.ptr() + static_cast<size_t>(i) * img_sz);
    out.ids.ptr()[i] = spec.id;
    out.id_list[static_cast<size_t>(i)] = spec.id;
    for (int a = 0; a < kNumAttributes; ++a) {
      out.attrs.ptr()[static_cast<size_t>(i) * kNumAttributes + a] =
          spec.attributes[static_cast<size_t>(a)] ? 1.0 : 0.0;
    }
  }
  return out;
}

std::vector<EvalPair> make_eval_pairs(const Dataset& ds, int n_pairs,
                                      double positive_fraction,
                                      const DegradationConfig* deg, uint64_t seed) {
  if (n_pairs <= 0) throw ConfigError("make_eval_pairs: n_pairs must be positive");
  if (positive_fraction < 0.0 || positive_fraction > 1.0) {
    throw ConfigError("make_eval_pairs: positive_fraction must lie in [0,1]");
  }
  if (ds.eval.empty()) throw DataError("make_eval_pairs: dataset has no eval identities");
  const int n_pos = static_cast<int>(std::lround(n_pairs * positive_fraction));
  const int n_neg = n_pairs - n_pos;
  if (n_neg > 0 && ds.eval.size() < 2) {
    throw DataError("make_eval_pairs: negatives need at least two eval identities");
  }
  if (deg) validate_degradation(*deg);
  const int H = ds.config.height, W = ds.config.width, C = ds.config.channels;
  const int E = static_cast<int>(ds.eval.size());

  // identity selection and degradation use separate streams, so the same
  // (seed, n_pairs) yields the same pairs with or without degradation
  Rng rng(derive_seed(seed, "pairs"));
  Rng deg_rng(derive_seed(seed, "pair-deg"));
  uint64_t deg_counter = 0;
  auto maybe_degrade = [&](Tensor img) {
    if (!deg) return img;
    DegradationConfig dc = *deg;
    dc.kind = deg_rng.uniform() < deg->gan_fraction ? DegradationKind::GanProxy
                                                    : DegradationKind::WarpProxy;
    if (deg->sample_strength) {
      dc.strength = deg_rng.uniform(deg->strength_min, deg->strength_max);
    }
    return degrade(img, dc, derive_seed(seed, "pdeg", deg_counter++));
  };

  std::vector<EvalPair> pairs;
  pairs.reserve(static_cast<size_t>(n_pairs));
  for (int i = 0; i < n_pos; ++i) {
    const IdentitySpec& spec = ds.eval[static_cast<size_t>(rng.uniform_int(E))];
    EvalPair p;
    p.a = maybe_degrade(render(spec, derive_seed(seed, "pa", static_cast<uint64_t>(i)), H, W, C));
    p.b = maybe_degrade(render(spec, derive_seed(seed, "pb", static_cast<uint64_t>(i)), H, W, C));
    p.same = true;
    p.id_a = p.id_b = spec.id;
    pairs.push_back(std::move(p));
  }
  for (int i = 0; i < n_neg; ++i) {
    const int ia = rng.uniform_int(E);
    int ib = rng.uniform_int(E - 1);
    if (ib >= ia) ++ib;
    EvalPair p;
    p.a = maybe_degrade(
        render(ds.eval[static_cast<size_t>(ia)], derive_seed(seed, "na", static_cast<uint64_t>(i)), H, W, C));
    p.b = maybe_degrade(
        render(ds.eval[static_cast<size_t>(ib)], derive_seed(seed, "nb", static_cast<uint64_t>(i)), H, W, C));
    p.same = false;
    p.id_a = ds.eval[static_cast<size_t>(ia)].id;
    p.id_b = ds.eval[static_cast<size_t>(ib)].id;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void export_manifest(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out.is_open()) throw IoError("cannot open manifest for writing: " + path);
  out << "# columns: id " << kAttributeNames[0];
  for (int a = 1; a < kNumAttributes; ++a) out << "," << kAttributeNames[a] << "";
  out << " param_seed\n";
  out << "# train: 0.." << ds.config.n_train_identities - 1 << "  eval: "
      << ds.config.n_train_identities << ".."
      << ds.config.n_train_identities + ds.config.n_eval_identities - 1 << "\n";
  auto write_split = [&](const std::vector<IdentitySpec>& specs) {
    for (const auto& spec : specs) {
      out << spec.id << ' ';
      for (int a = 0; a < kNumAttributes; ++a) out << (spec.attributes[static_cast<size_t>(a)] ? '1' : '0');
      out << ' ' << derive_seed(ds.config.seed, "identity", static_cast<uint64_t>(spec.id)) << '\n';
    }
  };
  write_split(ds.train);
  write_split(ds.eval);
  out.flush();
  if (!out.good()) throw IoError("manifest write failed: " + path);
}

}  // namespace catface
