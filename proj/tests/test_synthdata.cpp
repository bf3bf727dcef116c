#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "../src/rng.hpp"
#include "../src/synthdata.hpp"
#include "oracles.hpp"

using namespace catface;

namespace {

double mse(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a.ptr()[i] - b.ptr()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

bool in_unit_range(const Tensor& t) {
  for (size_t i = 0; i < t.size(); ++i) {
    if (t.ptr()[i] < 0.0 || t.ptr()[i] > 1.0) return false;
  }
  return true;
}

IdentitySpec spec_with(std::array<double, kNumFaceParams> params, int id = 0) {
  IdentitySpec s;
  s.id = id;
  s.params = params;
  s.attributes = derive_attributes(params);
  return s;
}

}  // namespace

TEST_CASE("rendering is deterministic, bounded, and seed-sensitive") {
  IdentitySpec spec = make_identity(3, 42);
  Tensor a = render(spec, 7);
  Tensor b = render(spec, 7);
  CHECK(oracles::bitwise_equal(a, b));
  CHECK(a.dim(0) == 32);
  CHECK(a.dim(1) == 32);
  CHECK(a.dim(2) == 1);
  CHECK(in_unit_range(a));

  Tensor c = render(spec, 8);
  CHECK(oracles::max_abs_diff(a, c) > 0.0);

  IdentitySpec other = make_identity(4, 42);
  CHECK(oracles::max_abs_diff(a, render(other, 7)) > 0.0);

  Tensor rgb = render(spec, 7, 32, 32, 3);
  CHECK(rgb.dim(2) == 3);
  CHECK(in_unit_range(rgb));
  // per-channel tint separates the channels
  double chan_diff = 0.0;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      chan_diff = std::max(chan_diff, std::abs(rgb.at({y, x, 0}) - rgb.at({y, x, 2})));
    }
  }
  CHECK(chan_diff > 0.0);

  CHECK_THROWS_AS(render(spec, 7, 4, 32, 1), ConfigError);
  CHECK_THROWS_AS(render(spec, 7, 32, 32, 2), ConfigError);
}

TEST_CASE("changing only the nose changes only the nose region") {
  const PixelBox box = nose_pixel_bounds(32, 32);
  CHECK(box.x0 == 12);
  CHECK(box.x1 == 19);
  CHECK(box.y0 == 14);
  CHECK(box.y1 == 23);

  std::array<double, kNumFaceParams> base = {0.5, 0.6, 0.05, 0.4, 0.2, 0.5, 0.8};
  std::array<double, kNumFaceParams> big = base;
  big[kNoseSize] = 0.95;

  for (uint64_t seed : {1ull, 9ull, 77ull}) {
    Tensor small_nose = render(spec_with(base), seed);
    Tensor big_nose = render(spec_with(big), seed);
    double inside = 0.0;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const double d = std::abs(small_nose.at({y, x, 0}) - big_nose.at({y, x, 0}));
        const bool in_box = x >= box.x0 && x <= box.x1 && y >= box.y0 && y <= box.y1;
        if (in_box) {
          inside = std::max(inside, d);
        } else {
          CHECK(d == 0.0);
        }
      }
    }
    CHECK(inside > 0.05);
  }

  // identical specs differ nowhere
  CHECK(oracles::bitwise_equal(render(spec_with(base), 5), render(spec_with(base), 5)));
}

TEST_CASE("zero-strength degradation is the identity map") {
  Tensor img = render(make_identity(1, 11), 3);
  for (DegradationKind kind : {DegradationKind::GanProxy, DegradationKind::WarpProxy}) {
    DegradationConfig cfg;
    cfg.kind = kind;
    cfg.strength = 0.0;
    CHECK(oracles::bitwise_equal(degrade(img, cfg, 99), img));
  }
}

TEST_CASE("degradation is deterministic, bounded, seed-sensitive") {
  Tensor img = render(make_identity(2, 11), 4);
  for (DegradationKind kind : {DegradationKind::GanProxy, DegradationKind::WarpProxy}) {
    DegradationConfig cfg;
    cfg.kind = kind;
    cfg.strength = 1.0;
    Tensor a = degrade(img, cfg, 5);
    CHECK(oracles::bitwise_equal(a, degrade(img, cfg, 5)));
    CHECK(in_unit_range(a));
    CHECK(oracles::max_abs_diff(a, degrade(img, cfg, 6)) > 0.0);
    CHECK(oracles::max_abs_diff(a, img) > 0.0);
  }

  DegradationConfig bad;
  bad.strength = -0.5;
  CHECK_THROWS_AS(degrade(img, bad, 0), ConfigError);
  CHECK_THROWS_AS(degrade(Tensor::zeros({4, 4}), DegradationConfig{}, 0), DimensionError);
}

TEST_CASE("mean squared error is nondecreasing in strength") {
  const double strengths[] = {0.25, 0.5, 1.0, 2.0};
  for (DegradationKind kind : {DegradationKind::GanProxy, DegradationKind::WarpProxy}) {
    double avg[4] = {0, 0, 0, 0};
    int n_seeds = 0;
    for (uint64_t seed = 0; seed < 60; ++seed) {
      Tensor img = render(make_identity(static_cast<int>(seed), 123), seed);
      for (int k = 0; k < 4; ++k) {
        DegradationConfig cfg;
        cfg.kind = kind;
        cfg.strength = strengths[k];
        avg[k] += mse(degrade(img, cfg, derive_seed(seed, "t")), img);
      }
      ++n_seeds;
    }
    CHECK(n_seeds >= 50);
    for (int k = 0; k < 3; ++k) {
      INFO("kind " << (kind == DegradationKind::GanProxy ? "gan" : "warp") << " step " << k);
      CHECK(avg[k + 1] >= avg[k]);
    }
    CHECK(avg[0] > 0.0);
  }
}

TEST_CASE("dataset split ids and attribute prevalence") {
  DatasetConfig cfg;
  cfg.n_train_identities = 3000;
  cfg.n_eval_identities = 500;
  cfg.seed = 77;
  Dataset ds = make_dataset(cfg);
  REQUIRE(ds.train.size() == 3000);
  REQUIRE(ds.eval.size() == 500);
  for (size_t i = 0; i < ds.train.size(); ++i) CHECK(ds.train[i].id == static_cast<int>(i));
  for (size_t i = 0; i < ds.eval.size(); ++i) CHECK(ds.eval[i].id == 3000 + static_cast<int>(i));

  // expected prevalence: quantile thresholds on uniform latents
  const double expected[kNumAttributes] = {0.3, 0.3, 0.3, 0.5, 0.3};
  int counts[kNumAttributes] = {0, 0, 0, 0, 0};
  auto tally = [&](const std::vector<IdentitySpec>& split) {
    for (const auto& s : split) {
      for (int a = 0; a < kNumAttributes; ++a) counts[a] += s.attributes[static_cast<size_t>(a)];
    }
  };
  tally(ds.train);
  tally(ds.eval);
  for (int a = 0; a < kNumAttributes; ++a) {
    const double prevalence = counts[a] / 3500.0;
    INFO(kAttributeNames[a] << " prevalence " << prevalence);
    CHECK(std::abs(prevalence - expected[a]) < 0.02);
  }

  // same config → identical latents
  Dataset again = make_dataset(cfg);
  for (size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(ds.train[i].params == again.train[i].params);
  }

  DatasetConfig bad = cfg;
  bad.channels = 2;
  CHECK_THROWS_AS(make_dataset(bad), ConfigError);
}

TEST_CASE("paired batches: shapes, labels, kind mix, determinism") {
  DatasetConfig dcfg;
  dcfg.n_train_identities = 10;
  dcfg.n_eval_identities = 2;
  dcfg.seed = 5;
  Dataset ds = make_dataset(dcfg);
  DegradationConfig cfg;

  PairedBatch batch = make_batch(ds, 6, cfg, 31);
  CHECK(batch.hq.shape() == Shape{6, 32, 32, 1});
  CHECK(batch.lq.shape() == Shape{6, 32, 32, 1});
  CHECK(batch.ids.shape() == Shape{6});
  CHECK(batch.attrs.shape() == Shape{6, kNumAttributes});
  CHECK(in_unit_range(batch.hq));
  CHECK(in_unit_range(batch.lq));

  // ids are distinct train identities; attributes come from the latent spec,
  // not from the (degraded) pixels
  std::vector<bool> seen(10, false);
  for (int i = 0; i < 6; ++i) {
    const int id = batch.id_list[static_cast<size_t>(i)];
    CHECK(batch.ids.ptr()[i] == id);
    REQUIRE(id >= 0);
    REQUIRE(id < 10);
    CHECK_FALSE(seen[static_cast<size_t>(id)]);
    seen[static_cast<size_t>(id)] = true;
    for (int a = 0; a < kNumAttributes; ++a) {
      const double want = ds.train[static_cast<size_t>(id)].attributes[static_cast<size_t>(a)] ? 1.0 : 0.0;
      CHECK(batch.attrs.at({i, a}) == want);
    }
  }

  int n_gan = 0;
  for (auto k : batch.kinds) n_gan += k == DegradationKind::GanProxy;
  CHECK(n_gan == 3);

  DegradationConfig all_gan = cfg;
  all_gan.gan_fraction = 1.0;
  for (auto k : make_batch(ds, 6, all_gan, 31).kinds) CHECK(k == DegradationKind::GanProxy);
  DegradationConfig all_warp = cfg;
  all_warp.gan_fraction = 0.0;
  for (auto k : make_batch(ds, 6, all_warp, 31).kinds) CHECK(k == DegradationKind::WarpProxy);

  PairedBatch same = make_batch(ds, 6, cfg, 31);
  CHECK(oracles::bitwise_equal(batch.hq, same.hq));
  CHECK(oracles::bitwise_equal(batch.lq, same.lq));
  CHECK(batch.id_list == same.id_list);
  PairedBatch other = make_batch(ds, 6, cfg, 32);
  CHECK(oracles::max_abs_diff(batch.hq, other.hq) > 0.0);

  CHECK_THROWS_AS(make_batch(ds, 0, cfg, 1), DataError);
  CHECK_THROWS_AS(make_batch(ds, 11, cfg, 1), DataError);
  Dataset empty = make_dataset(DatasetConfig{});
  CHECK_THROWS_AS(make_batch(empty, 1, cfg, 1), DataError);
  DegradationConfig bad_mix = cfg;
  bad_mix.gan_fraction = 1.5;
  CHECK_THROWS_AS(make_batch(ds, 2, bad_mix, 1), ConfigError);
}

TEST_CASE("eval pairs: balance, train disjointness, stream separation") {
  DatasetConfig dcfg;
  dcfg.n_train_identities = 10;
  dcfg.n_eval_identities = 6;
  dcfg.seed = 9;
  Dataset ds = make_dataset(dcfg);

  auto pairs = make_eval_pairs(ds, 40, 0.5, nullptr, 17);
  REQUIRE(pairs.size() == 40);
  int n_pos = 0;
  for (const auto& p : pairs) {
    n_pos += p.same;
    // eval ids start above every train id
    CHECK(p.id_a >= 10);
    CHECK(p.id_b >= 10);
    if (p.same) {
      CHECK(p.id_a == p.id_b);
      CHECK(oracles::max_abs_diff(p.a, p.b) > 0.0);  // two distinct variations
    } else {
      CHECK(p.id_a != p.id_b);
    }
  }
  CHECK(n_pos == 20);

  auto again = make_eval_pairs(ds, 40, 0.5, nullptr, 17);
  for (size_t i = 0; i < pairs.size(); ++i) {
    CHECK(pairs[i].id_a == again[i].id_a);
    CHECK(oracles::bitwise_equal(pairs[i].a, again[i].a));
  }

  // degradation changes pixels but reuses the identity/variation streams
  DegradationConfig deg;
  auto degraded = make_eval_pairs(ds, 40, 0.5, &deg, 17);
  double diff = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    CHECK(degraded[i].id_a == pairs[i].id_a);
    CHECK(degraded[i].id_b == pairs[i].id_b);
    CHECK(in_unit_range(degraded[i].a));
    diff = std::max(diff, oracles::max_abs_diff(degraded[i].a, pairs[i].a));
  }
  CHECK(diff > 0.0);

  CHECK_THROWS_AS(make_eval_pairs(ds, 0, 0.5, nullptr, 1), ConfigError);
  CHECK_THROWS_AS(make_eval_pairs(ds, 10, 1.5, nullptr, 1), ConfigError);
  Dataset no_eval = make_dataset([] {
    DatasetConfig c;
    c.n_train_identities = 4;
    return c;
  }());
  CHECK_THROWS_AS(make_eval_pairs(no_eval, 10, 0.5, nullptr, 1), DataError);
  Dataset one_eval = make_dataset([] {
    DatasetConfig c;
    c.n_train_identities = 4;
    c.n_eval_identities = 1;
    return c;
  }());
  CHECK_THROWS_AS(make_eval_pairs(one_eval, 10, 0.5, nullptr, 1), DataError);
  CHECK(make_eval_pairs(one_eval, 10, 1.0, nullptr, 1).size() == 10);
}

TEST_CASE("manifest export lists every identity with its label bits") {
  DatasetConfig dcfg;
  dcfg.n_train_identities = 10;
  dcfg.n_eval_identities = 6;
  dcfg.seed = 21;
  Dataset ds = make_dataset(dcfg);
  const std::string path = "test_manifest_tmp.txt";
  export_manifest(ds, path);

  std::ifstream in(path);
  REQUIRE(in.is_open());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  in.close();
  std::remove(path.c_str());

  REQUIRE(lines.size() == 2 + 16);
  CHECK(lines[0][0] == '#');
  CHECK(lines[1][0] == '#');
  // record format: id <5 bits> <seed>
  for (int i = 0; i < 16; ++i) {
    const IdentitySpec& spec = i < 10 ? ds.train[static_cast<size_t>(i)]
                                      : ds.eval[static_cast<size_t>(i - 10)];
    std::istringstream rec(lines[static_cast<size_t>(2 + i)]);
    int id;
    std::string bits, seed_str;
    rec >> id >> bits >> seed_str;
    CHECK(id == spec.id);
    REQUIRE(bits.size() == kNumAttributes);
    for (int a = 0; a < kNumAttributes; ++a) {
      CHECK(bits[static_cast<size_t>(a)] == (spec.attributes[static_cast<size_t>(a)] ? '1' : '0'));
    }
    CHECK_FALSE(seed_str.empty());
  }

  CHECK_THROWS_AS(export_manifest(ds, "/nonexistent-dir/x/manifest.txt"), IoError);
}
