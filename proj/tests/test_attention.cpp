#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "../src/attention.hpp"
#include "../src/grad_check.hpp"
#include "../src/rng.hpp"
#include "oracles.hpp"

using namespace catface;

namespace {

Tensor rand_t(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return Tensor::rand_uniform(std::move(shape), rng, lo, hi);
}

// Per-pixel channel values separated enough that finite differences cannot
// flip the max-pool argmax.
Tensor rand_separated_cbam(uint64_t seed) {
  for (uint64_t attempt = 0;; ++attempt) {
    Tensor t = rand_t({4, 4, 3}, seed + 1000 * attempt);
    bool ok = true;
    for (size_t p = 0; p < 16 && ok; ++p) {
      for (int i = 0; i < 3 && ok; ++i) {
        for (int j = i + 1; j < 3; ++j) {
          if (std::abs(t.ptr()[p * 3 + i] - t.ptr()[p * 3 + j]) < 1e-3) {
            ok = false;
            break;
          }
        }
      }
    }
    if (ok) return t;
  }
}

Tensor permute_rows(const Tensor& x, const std::vector<int>& perm) {
  const int N = x.dim(0), C = x.dim(1);
  Tensor out = Tensor::zeros({N, C});
  for (int i = 0; i < N; ++i) {
    for (int c = 0; c < C; ++c) {
      out.ptr()[static_cast<size_t>(i) * C + c] =
          x.ptr()[static_cast<size_t>(perm[static_cast<size_t>(i)]) * C + c];
    }
  }
  return out;
}

}  // namespace

TEST_CASE("self attention: single token reduces to V") {
  Rng rng(1);
  ProjectionSet proj = ProjectionSet::init(6, rng);
  Tensor f = rand_t({1, 1, 6}, 2);
  AttentionBundle b = self_attention(f, proj);
  CHECK(b.A.shape() == Shape{1, 6});
  CHECK(b.scores.at({0, 0}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(oracles::max_abs_diff(b.A, b.V) < 1e-12);
}

TEST_CASE("self attention: zero queries give uniform weights over V") {
  ProjectionSet proj = ProjectionSet::identity_init(4);
  proj.W_q = Tensor::zeros({4, 4});
  proj.W_k = Tensor::zeros({4, 4});
  Tensor f = rand_t({2, 3, 4}, 3);
  AttentionBundle b = self_attention(f, proj);
  const int N = 6;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      CHECK(b.scores.at({i, j}) == doctest::Approx(1.0 / N).epsilon(1e-12));
    }
  }
  for (int c = 0; c < 4; ++c) {
    double mean = 0.0;
    for (int j = 0; j < N; ++j) mean += b.V.at({j, c});
    mean /= N;
    for (int i = 0; i < N; ++i) CHECK(b.A.at({i, c}) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("self attention matches the explicit-score oracle") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, "sa-proj"));
    ProjectionSet proj = ProjectionSet::init(8, rng);
    Tensor f = rand_t({4, 8}, derive_seed(seed, "sa-x"));
    AttentionBundle b = self_attention(f, proj);
    Tensor ref = oracles::attention(f, f, proj.W_q, proj.W_k, proj.W_v);
    CHECK(oracles::max_abs_diff(b.A, ref) < 1e-10);
    // row stochasticity
    for (int i = 0; i < 4; ++i) {
      double s = 0.0;
      for (int j = 0; j < 4; ++j) s += b.scores.at({i, j});
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("cross attention: identical branches with shared projections collapse to self attention") {
  Rng rng(7);
  ProjectionSet proj = ProjectionSet::init(5, rng);
  Tensor f = rand_t({6, 5}, 8);
  auto [ca_fr, ca_sb] = cross_attention_pair(f, f, proj, proj);
  AttentionBundle b = self_attention(f, proj);
  CHECK(oracles::max_abs_diff(ca_fr, ca_sb) < 1e-14);
  CHECK(oracles::max_abs_diff(ca_fr, b.A) < 1e-14);
}

TEST_CASE("cross attention: single token returns the other branch's value") {
  Rng rng(9);
  ProjectionSet pf = ProjectionSet::init(4, rng);
  ProjectionSet ps = ProjectionSet::init(4, rng);
  Tensor f_fr = rand_t({1, 4}, 10);
  Tensor f_sb = rand_t({1, 4}, 11);
  auto [ca_fr, ca_sb] = cross_attention_pair(f_fr, f_sb, pf, ps);
  Tensor v_sb = matmul(f_sb, ps.W_v);
  Tensor v_fr = matmul(f_fr, pf.W_v);
  CHECK(oracles::max_abs_diff(ca_fr, v_sb) < 1e-12);
  CHECK(oracles::max_abs_diff(ca_sb, v_fr) < 1e-12);
}

TEST_CASE("cross attention matches exchanged-query oracles") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, "ca-proj"));
    ProjectionSet pf = ProjectionSet::init(6, rng);
    ProjectionSet ps = ProjectionSet::init(6, rng);
    Tensor f_fr = rand_t({5, 6}, derive_seed(seed, "ca-fr"));
    Tensor f_sb = rand_t({5, 6}, derive_seed(seed, "ca-sb"));
    auto [ca_fr, ca_sb] = cross_attention_pair(f_fr, f_sb, pf, ps);
    // the fr branch queries sb's keys and values; only the query projection
    // (and its source tokens) comes from fr
    Tensor ref_fr = oracles::attention(f_fr, f_sb, pf.W_q, ps.W_k, ps.W_v);
    Tensor ref_sb = oracles::attention(f_sb, f_fr, ps.W_q, pf.W_k, pf.W_v);
    CHECK(oracles::max_abs_diff(ca_fr, ref_fr) < 1e-10);
    CHECK(oracles::max_abs_diff(ca_sb, ref_sb) < 1e-10);
  }
  CHECK_THROWS_AS(cross_attention_pair(rand_t({4, 6}, 1), rand_t({5, 6}, 2),
                                       ProjectionSet::identity_init(6),
                                       ProjectionSet::identity_init(6)),
                  DimensionError);
}

TEST_CASE("permutation equivariance of cross attention") {
  Rng rng(13);
  ProjectionSet pf = ProjectionSet::init(4, rng);
  ProjectionSet ps = ProjectionSet::init(4, rng);
  Tensor f_fr = rand_t({6, 4}, 14);
  Tensor f_sb = rand_t({6, 4}, 15);
  std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  auto [a, b] = cross_attention_pair(f_fr, f_sb, pf, ps);
  auto [ap, bp] = cross_attention_pair(permute_rows(f_fr, perm), permute_rows(f_sb, perm), pf, ps);
  CHECK(oracles::max_abs_diff(ap, permute_rows(a, perm)) < 1e-12);
  CHECK(oracles::max_abs_diff(bp, permute_rows(b, perm)) < 1e-12);
}

TEST_CASE("scale law: scaling queries equals shrinking the temperature") {
  Rng rng(17);
  ProjectionSet proj = ProjectionSet::init(4, rng);
  Tensor f = rand_t({5, 4}, 18);
  const double alpha = 2.5;
  ProjectionSet scaled = proj;
  scaled.W_q = scale(proj.W_q, alpha);
  AttentionBundle b = self_attention(f, scaled);

  // reference: same scores computed with temperature √C/α
  Tensor q = matmul(f, proj.W_q);
  Tensor k = matmul(f, proj.W_k);
  Tensor v = matmul(f, proj.W_v);
  Tensor s = softmax_rows(scale(matmul(q, transpose(k)), alpha / std::sqrt(4.0)));
  CHECK(oracles::max_abs_diff(b.A, matmul(s, v)) < 1e-12);
}

TEST_CASE("multi-head with one head and identity output equals the single-head pair") {
  Rng rng(21);
  McaParams p = McaParams::init(6, 1, rng);
  Tensor f_fr = rand_t({2, 3, 6}, 22);
  Tensor f_sb = rand_t({2, 3, 6}, 23);
  auto [m_fr, m_sb] = multi_head_cross_attention(f_fr, f_sb, p);
  auto [c_fr, c_sb] = cross_attention_pair(reshape(f_fr, {6, 6}), reshape(f_sb, {6, 6}), p.fr, p.sb);
  CHECK(m_fr.shape() == Shape{2, 3, 6});
  CHECK(oracles::max_abs_diff(reshape(m_fr, {6, 6}), c_fr) < 1e-12);
  CHECK(oracles::max_abs_diff(reshape(m_sb, {6, 6}), c_sb) < 1e-12);
}

TEST_CASE("two heads concatenate two independent half-width attentions") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(derive_seed(seed, "mh"));
    McaParams p = McaParams::init(8, 2, rng);
    Tensor f_fr = rand_t({3, 2, 8}, derive_seed(seed, "mh-fr"));
    Tensor f_sb = rand_t({3, 2, 8}, derive_seed(seed, "mh-sb"));
    auto [m_fr, m_sb] = multi_head_cross_attention(f_fr, f_sb, p);

    Tensor x_fr = reshape(f_fr, {6, 8});
    Tensor x_sb = reshape(f_sb, {6, 8});
    std::vector<Tensor> parts_fr, parts_sb;
    for (int h = 0; h < 2; ++h) {
      ProjectionSet pf{split(p.fr.W_q, 1, 2)[h], split(p.fr.W_k, 1, 2)[h], split(p.fr.W_v, 1, 2)[h]};
      ProjectionSet ps{split(p.sb.W_q, 1, 2)[h], split(p.sb.W_k, 1, 2)[h], split(p.sb.W_v, 1, 2)[h]};
      parts_fr.push_back(oracles::attention(x_fr, x_sb, pf.W_q, ps.W_k, ps.W_v));
      parts_sb.push_back(oracles::attention(x_sb, x_fr, ps.W_q, pf.W_k, pf.W_v));
    }
    // output projections are identity at init
    CHECK(oracles::max_abs_diff(reshape(m_fr, {6, 8}), concat(parts_fr, 1)) < 1e-10);
    CHECK(oracles::max_abs_diff(reshape(m_sb, {6, 8}), concat(parts_sb, 1)) < 1e-10);
  }
}

TEST_CASE("multi-head shape law and head divisibility errors") {
  Tensor f = rand_t({4, 4, 8}, 31);
  for (int heads : {1, 2, 4, 8}) {
    Rng rng(derive_seed(static_cast<uint64_t>(heads), "mh-shape"));
    McaParams p = McaParams::init(8, heads, rng);
    auto [a, b] = multi_head_cross_attention(f, f, p);
    CHECK(a.shape() == Shape{4, 4, 8});
    CHECK(b.shape() == Shape{4, 4, 8});
  }
  Rng rng(33);
  CHECK_THROWS_AS(McaParams::init(8, 3, rng), ConfigError);
  McaParams p = McaParams::init(8, 2, rng);
  p.heads = 3;
  CHECK_THROWS_AS(multi_head_cross_attention(f, f, p), DimensionError);
}

TEST_CASE("caf with width-1 groups returns the value projection") {
  Rng rng(41);
  CafParams p = CafParams::init(6, rng);
  Tensor f = rand_t({2, 2, 6}, 42);
  Tensor out = caf(f, p, 6);  // C_c = 1
  Tensor v = reshape(matmul(reshape(f, {4, 6}), p.W_v), {2, 2, 6});
  CHECK(oracles::max_abs_diff(out, v) < 1e-12);
}

TEST_CASE("caf with zero query/key projections mixes each group uniformly") {
  Rng rng(43);
  CafParams p = CafParams::init(8, rng);
  p.W_q = Tensor::zeros({8, 8});
  p.W_k = Tensor::zeros({8, 8});
  Tensor f = rand_t({2, 2, 8}, 44);
  Tensor out = caf(f, p, 2);  // two groups of four channels
  Tensor v = matmul(reshape(f, {4, 8}), p.W_v);
  for (int n = 0; n < 4; ++n) {
    for (int g = 0; g < 2; ++g) {
      double mean = 0.0;
      for (int c = 0; c < 4; ++c) mean += v.at({n, g * 4 + c});
      mean /= 4.0;
      for (int c = 0; c < 4; ++c) {
        CHECK(out.ptr()[static_cast<size_t>(n) * 8 + g * 4 + c] ==
              doctest::Approx(mean).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("caf matches the channel-grouped oracle") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, "caf"));
    CafParams p = CafParams::init(8, rng);
    Tensor f = rand_t({4, 4, 8}, derive_seed(seed, "caf-x"));
    Tensor out = caf(f, p, 2);  // G_c=2, C_c=4, N=16
    Tensor x = reshape(f, {16, 8});
    Tensor q = matmul(x, p.W_q), k = matmul(x, p.W_k), v = matmul(x, p.W_v);
    std::vector<Tensor> groups;
    for (int g = 0; g < 2; ++g) {
      groups.push_back(oracles::channel_group_attention(split(q, 1, 2)[g], split(k, 1, 2)[g],
                                                        split(v, 1, 2)[g]));
    }
    CHECK(oracles::max_abs_diff(out, reshape(concat(groups, 1), {4, 4, 8})) < 1e-10);
  }
}

TEST_CASE("caf shape law over factorizations, divisibility error") {
  Tensor f = rand_t({3, 4, 12}, 51);
  for (int groups : {1, 2, 3, 4, 6, 12}) {
    Rng rng(derive_seed(static_cast<uint64_t>(groups), "caf-shape"));
    CafParams p = CafParams::init(12, rng);
    CHECK(caf(f, p, groups).shape() == Shape{3, 4, 12});
  }
  Rng rng(52);
  CafParams p = CafParams::init(12, rng);
  CHECK_THROWS_AS(caf(f, p, 5), DimensionError);
}

TEST_CASE("cbam spatial attention: constants, bounds, oracle") {
  Rng rng(61);
  CbamParams p = CbamParams::init(rng);

  Tensor flat = Tensor::full({5, 5, 3}, 0.7);
  Tensor m = cbam_spatial_attention(flat, p);
  CHECK(m.shape() == Shape{5, 5, 1});
  // interior pixels see identical neighborhoods
  const double center = m.at({2, 2, 0});
  CHECK(m.at({1, 2, 0}) == doctest::Approx(center).epsilon(1e-12));
  CHECK(m.at({3, 3, 0}) == doctest::Approx(center).epsilon(1e-12));

  for (uint64_t seed = 0; seed < 10; ++seed) {
    Tensor f = rand_t({6, 5, 4}, derive_seed(seed, "cbam"), -2.0, 2.0);
    Tensor map = cbam_spatial_attention(f, p);
    for (size_t i = 0; i < map.size(); ++i) {
      CHECK(map.ptr()[i] > 0.0);
      CHECK(map.ptr()[i] < 1.0);
    }
    CHECK(oracles::max_abs_diff(map, oracles::cbam_map(f, p.w, p.b)) < 1e-10);
  }
}

TEST_CASE("gradients flow through every attention path") {
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto s = [&](const char* tag) { return derive_seed(seed, tag); };

    // self attention: inputs are tokens and all three projections
    {
      auto res = grad_check(
          [](const std::vector<Tensor>& in) {
            ProjectionSet p{in[1], in[2], in[3]};
            AttentionBundle b = self_attention(in[0], p);
            return sum_all(mul(b.A, b.A));
          },
          {rand_t({4, 3}, s("g-sa")), rand_t({3, 3}, s("g-sq")), rand_t({3, 3}, s("g-sk")),
           rand_t({3, 3}, s("g-sv"))});
      CHECK(res.passed(1e-4));
      worst = std::max(worst, res.max_rel_err);
    }

    // multi-head cross attention with non-identity output projections
    {
      auto res = grad_check(
          [](const std::vector<Tensor>& in) {
            McaParams p;
            p.fr = ProjectionSet{in[2], in[3], in[4]};
            p.sb = ProjectionSet{in[5], in[6], in[7]};
            p.W_o_fr = in[8];
            p.W_o_sb = in[9];
            p.heads = 2;
            auto [a, b] = multi_head_cross_attention(in[0], in[1], p);
            return sum_all(mul(a, b));
          },
          {rand_t({2, 2, 4}, s("g-mf")), rand_t({2, 2, 4}, s("g-ms")), rand_t({4, 4}, s("g-m1")),
           rand_t({4, 4}, s("g-m2")), rand_t({4, 4}, s("g-m3")), rand_t({4, 4}, s("g-m4")),
           rand_t({4, 4}, s("g-m5")), rand_t({4, 4}, s("g-m6")), rand_t({4, 4}, s("g-m7")),
           rand_t({4, 4}, s("g-m8"))});
      CHECK(res.passed(1e-4));
      worst = std::max(worst, res.max_rel_err);
    }

    // caf
    {
      auto res = grad_check(
          [](const std::vector<Tensor>& in) {
            CafParams p{in[1], in[2], in[3]};
            return sum_all(mul(caf(in[0], p, 2), in[0]));
          },
          {rand_t({2, 3, 4}, s("g-cf")), rand_t({4, 4}, s("g-c1")), rand_t({4, 4}, s("g-c2")),
           rand_t({4, 4}, s("g-c3"))});
      CHECK(res.passed(1e-4));
      worst = std::max(worst, res.max_rel_err);
    }

    // cbam (channel_max needs separated channels; pooling over 3 channels)
    {
      auto res = grad_check(
          [](const std::vector<Tensor>& in) {
            CbamParams p{in[1], in[2]};
            return sum_all(cbam_spatial_attention(in[0], p));
          },
          {rand_separated_cbam(s("g-cb")), rand_t({3, 3, 2, 1}, s("g-cw")), rand_t({1}, s("g-cbb"))});
      CHECK(res.passed(1e-4));
      worst = std::max(worst, res.max_rel_err);
    }
  }
  MESSAGE("worst rel err across attention gradient checks: " << worst);
}
