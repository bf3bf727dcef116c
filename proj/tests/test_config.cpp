#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include <json.hpp>

#include "../src/config.hpp"
#include "../src/errors.hpp"

using namespace catface;
using nlohmann::json;

TEST_CASE("json and key=value documents parse to the same tree") {
  const std::string as_json = R"({
    "model": {"preset": "toy", "heads": 2},
    "train": {"lr0": 0.05, "decay_epochs": [2, 4], "aug": true},
    "data": {"n_train_identities": 12}
  })";
  const std::string as_text =
      "# comment line\n"
      "model.preset = toy   # trailing comment\n"
      "model.heads = 2\n"
      "\n"
      "train.lr0 = 0.05\n"
      "train.decay_epochs = [2, 4]\n"
      "train.aug = true\n"
      "data.n_train_identities = 12\n";
  CHECK(parse_config_text(as_json) == parse_config_text(as_text));
}

TEST_CASE("text values keep their natural types") {
  json doc = parse_config_text(
      "a.str = hello\n"
      "a.num = 1.5\n"
      "a.int = 7\n"
      "a.flag = false\n"
      "a.list = [1e-3, 1e-2]\n");
  CHECK(doc["a"]["str"] == json("hello"));
  CHECK(doc["a"]["num"] == json(1.5));
  CHECK(doc["a"]["int"] == json(7));
  CHECK(doc["a"]["flag"] == json(false));
  CHECK(doc["a"]["list"] == json({1e-3, 1e-2}));
}

TEST_CASE("malformed documents are rejected") {
  CHECK_THROWS_AS(parse_config_text("{ not json"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("just a line without equals\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(".bad = 1\n"), ConfigError);
}

TEST_CASE("overrides layer on top of a parsed document") {
  json doc = parse_config_text("model.heads = 2\n");
  apply_override(doc, "model.heads=4");
  apply_override(doc, "train.lr0=0.01");
  apply_override(doc, "model.distill=cbam");
  CHECK(doc["model"]["heads"] == json(4));
  CHECK(doc["train"]["lr0"] == json(0.01));
  CHECK(doc["model"]["distill"] == json("cbam"));

  CHECK_THROWS_AS(apply_override(doc, "no-equals-sign"), ConfigError);
  apply_override(doc, "model=5");
  CHECK_THROWS_AS(apply_override(doc, "model.heads=4"), ConfigError);
}

TEST_CASE("only the known top-level sections are accepted") {
  json ok = parse_config_text(
      "model.heads = 2\n"
      "data.seed = 1\n"
      "train.epochs = 3\n"
      "train2.epochs = 2\n"
      "eval.bins = 10\n");
  CHECK_NOTHROW(check_sections(ok));
  json bad = ok;
  bad["modle"] = json::object();
  CHECK_THROWS_AS(check_sections(bad), ConfigError);
  CHECK_THROWS_AS(check_sections(json(3)), ConfigError);
}

TEST_CASE("model decoding applies presets then explicit keys") {
  ModelConfig def;
  CHECK(model_to_json(model_from_json(json::object())) == model_to_json(def));

  ModelConfig micro = ModelConfig::micro(def.n_classes, def.init_seed);
  json j = {{"preset", "micro"}};
  CHECK(model_to_json(model_from_json(j)) == model_to_json(micro));

  j["n_classes"] = 9;
  j["heads"] = 1;
  j["distill"] = "feature";
  j["distill_cosine"] = false;
  j["use_caf"] = false;
  j["trunk_channels"] = {4, 8};
  j["init_seed"] = 77;
  ModelConfig c = model_from_json(j);
  CHECK(c.height == micro.height);
  CHECK(c.n_classes == 9);
  CHECK(c.heads == 1);
  CHECK(c.distill == DistillKind::Feature);
  CHECK_FALSE(c.distill_cosine);
  CHECK_FALSE(c.use_caf);
  CHECK(c.trunk_channels == std::vector<int>{4, 8});
  CHECK(c.init_seed == 77);

  CHECK_THROWS_AS(model_from_json(json({{"preset", "huge"}})), ConfigError);
  CHECK_THROWS_AS(model_from_json(json({{"distill", "spatial"}})), ConfigError);
  CHECK_THROWS_AS(model_from_json(json({{"heads", "two"}})), ConfigError);
  CHECK_THROWS_AS(model_from_json(json(42)), ConfigError);
  try {
    model_from_json(json({{"head_count", 2}}));
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.head_count") != std::string::npos);
  }
}

TEST_CASE("model config survives a json round trip") {
  ModelConfig c = ModelConfig::toy(5, 123);
  c.distill = DistillKind::Cbam;
  c.distill_cosine = false;
  c.use_mffnl = false;
  c.caf_groups = 4;
  CHECK(model_to_json(model_from_json(model_to_json(c))) == model_to_json(c));
}

TEST_CASE("distill kinds map to stable names") {
  CHECK(std::string(distill_name(DistillKind::None)) == "none");
  CHECK(std::string(distill_name(DistillKind::Feature)) == "feature");
  CHECK(std::string(distill_name(DistillKind::Cbam)) == "cbam");
  CHECK(std::string(distill_name(DistillKind::SelfAttention)) == "selfattn");
}

TEST_CASE("dataset decoding") {
  json j = {{"height", 16}, {"width", 16}, {"n_train_identities", 3}, {"seed", 11}};
  DatasetConfig c = dataset_from_json(j);
  CHECK(c.height == 16);
  CHECK(c.width == 16);
  CHECK(c.n_train_identities == 3);
  CHECK(c.seed == 11);
  CHECK(c.n_eval_identities == DatasetConfig().n_eval_identities);
  CHECK_THROWS_AS(dataset_from_json(json({{"identities", 3}})), ConfigError);
}

TEST_CASE("degradation decoding") {
  DegradationConfig c = degradation_from_json(
      json({{"kind", "warp"}, {"strength", 0.5}, {"sample_strength", false}}));
  CHECK(c.kind == DegradationKind::WarpProxy);
  CHECK(c.strength == 0.5);
  CHECK_FALSE(c.sample_strength);
  CHECK(degradation_from_json(json({{"kind", "gan"}})).kind == DegradationKind::GanProxy);
  CHECK_THROWS_AS(degradation_from_json(json({{"kind", "blur"}})), ConfigError);
  CHECK_THROWS_AS(degradation_from_json(json({{"power", 2.0}})), ConfigError);
}

TEST_CASE("train decoding reaches nested margin, weights, and degradation") {
  json j = parse_config_text(
      "lr0 = 0.2\n"
      "decay_epochs = [1, 2]\n"
      "epochs = 4\n"
      "aug = false\n"
      "margin.s = 16\n"
      "margin.ema_stats = true\n"
      "weights.lambda_fr = 2.5\n"
      "weights.narrow_eye = 0.3\n"
      "degradation.kind = warp\n"
      "degradation.strength = 1.5\n"
      "log_path = out/log.jsonl\n");
  TrainConfig c = train_from_json(j);
  CHECK(c.lr0 == 0.2);
  CHECK(c.decay_epochs == std::vector<int>{1, 2});
  CHECK(c.epochs == 4);
  CHECK_FALSE(c.aug);
  CHECK(c.margin.s == 16.0);
  CHECK(c.margin.ema_stats);
  CHECK(c.weights.lambda_fr == 2.5);
  CHECK(c.weights.narrow_eye == 0.3);
  CHECK(c.degradation.kind == DegradationKind::WarpProxy);
  CHECK(c.degradation.strength == 1.5);
  CHECK(c.log_path == "out/log.jsonl");
  CHECK(c.momentum == TrainConfig().momentum);

  CHECK_THROWS_AS(train_from_json(json({{"margin", json({{"scale", 16}})}})), ConfigError);
  CHECK_THROWS_AS(train_from_json(json({{"weights", json({{"nose", 1.0}})}})), ConfigError);
  CHECK_THROWS_AS(train_from_json(json({{"learning_rate", 0.1}})), ConfigError);
}

TEST_CASE("eval decoding") {
  json j = parse_config_text(
      "n_pairs = 200\n"
      "far_targets = [1e-3, 1e-2]\n"
      "rank_ks = [1, 5, 10]\n"
      "use_fused = true\n"
      "degradation.strength = 0.25\n");
  EvalConfig c = eval_from_json(j);
  CHECK(c.n_pairs == 200);
  CHECK(c.far_targets == std::vector<double>{1e-3, 1e-2});
  CHECK(c.rank_ks == std::vector<int>{1, 5, 10});
  CHECK(c.use_fused);
  CHECK(c.degradation.strength == 0.25);
  CHECK(c.bins == EvalConfig().bins);

  CHECK(EvalConfig().n_pairs == 10000);
  CHECK_THROWS_AS(eval_from_json(json({{"pairs", 200}})), ConfigError);
}

TEST_CASE("config files load through the same parser") {
  const std::string path = "test_config_tmp.cfg";
  {
    std::ofstream out(path);
    out << "model.preset = micro\nmodel.n_classes = 3\n";
  }
  json doc = load_config_file(path);
  CHECK(doc["model"]["preset"] == json("micro"));
  CHECK(model_from_json(doc["model"]).n_classes == 3);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_config_file("no-such-file.cfg"), IoError);
}
