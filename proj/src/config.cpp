#include "config.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <utility>

#include "errors.hpp"

namespace catface {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// JSON scalar/array when it parses, bare string otherwise.
json parse_value(const std::string& raw) {
  const std::string v = trim(raw);
  json parsed = json::parse(v, nullptr, false);
  if (!parsed.is_discarded()) return parsed;
  return json(v);
}

void set_path(json& doc, const std::string& dotted, const json& value) {
  json* node = &doc;
  size_t pos = 0;
  while (true) {
    if (!node->is_object() && !node->is_null()) {
      throw ConfigError("config key '" + dotted + "' descends into a non-object value");
    }
    const size_t dot = dotted.find('.', pos);
    const std::string part = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (part.empty()) throw ConfigError("bad config key '" + dotted + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

// Field decoding with key-qualified errors.
template <typename T>
T field(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

class Section {
 public:
  Section(const json& j, std::string prefix) : prefix_(std::move(prefix)) {
    if (!j.is_object()) throw ConfigError("config section '" + prefix_ + "' must be an object");
    for (const auto& [k, v] : j.items()) pending_[k] = v;
  }

  bool has(const std::string& key) const { return pending_.count(key) > 0; }

  template <typename T>
  void take(const std::string& key, T& out) {
    auto it = pending_.find(key);
    if (it == pending_.end()) return;
    out = field<T>(it->second, prefix_ + key);
    pending_.erase(it);
  }

  json take_raw(const std::string& key) {
    auto it = pending_.find(key);
    json v = it->second;
    pending_.erase(it);
    return v;
  }

  void finish() const {
    if (pending_.empty()) return;
    throw ConfigError("unknown config key '" + prefix_ + pending_.begin()->first + "'");
  }

 private:
  std::string prefix_;
  std::map<std::string, json> pending_;
};

DistillKind distill_from_name(const std::string& name, const std::string& key) {
  if (name == "none") return DistillKind::None;
  if (name == "feature") return DistillKind::Feature;
  if (name == "cbam") return DistillKind::Cbam;
  if (name == "selfattn") return DistillKind::SelfAttention;
  throw ConfigError("config key '" + key +
                    "' must be one of none/feature/cbam/selfattn, got '" + name + "'");
}

}  // namespace

json parse_config_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config is not valid JSON");
    return doc;
  }
  json doc = json::object();
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " is not 'key = value'");
    }
    set_path(doc, trim(line.substr(0, eq)), parse_value(line.substr(eq + 1)));
  }
  return doc;
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.is_open()) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not 'key=value'");
  }
  set_path(doc, trim(assignment.substr(0, eq)), parse_value(assignment.substr(eq + 1)));
}

void check_sections(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config root must be an object");
  for (const auto& [k, v] : doc.items()) {
    (void)v;
    if (k != "model" && k != "data" && k != "train" && k != "train2" && k != "eval") {
      throw ConfigError("unknown config section '" + k + "'");
    }
  }
}

ModelConfig model_from_json(const json& j) {
  Section sec(j, "model.");
  ModelConfig c;
  if (sec.has("preset")) {
    const std::string name = field<std::string>(sec.take_raw("preset"), "model.preset");
    if (name == "desk") {
      c = ModelConfig::desk(c.n_classes, c.init_seed);
    } else if (name == "toy") {
      c = ModelConfig::toy(c.n_classes, c.init_seed);
    } else if (name == "micro") {
      c = ModelConfig::micro(c.n_classes, c.init_seed);
    } else {
      throw ConfigError("config key 'model.preset' must be desk/toy/micro, got '" + name + "'");
    }
  }
  sec.take("height", c.height);
  sec.take("width", c.width);
  sec.take("channels", c.channels);
  sec.take("trunk_channels", c.trunk_channels);
  sec.take("branch_blocks", c.branch_blocks);
  sec.take("embed_dim", c.embed_dim);
  sec.take("n_classes", c.n_classes);
  sec.take("heads", c.heads);
  sec.take("caf_groups", c.caf_groups);
  if (sec.has("distill")) {
    c.distill = distill_from_name(
        field<std::string>(sec.take_raw("distill"), "model.distill"), "model.distill");
  }
  sec.take("distill_cosine", c.distill_cosine);
  sec.take("catf_residual", c.catf_residual);
  sec.take("use_mffnl", c.use_mffnl);
  sec.take("use_caf", c.use_caf);
  sec.take("mffnl_norm_act", c.mffnl_norm_act);
  sec.take("init_seed", c.init_seed);
  sec.finish();
  return c;
}

DatasetConfig dataset_from_json(const json& j) {
  Section sec(j, "data.");
  DatasetConfig c;
  sec.take("height", c.height);
  sec.take("width", c.width);
  sec.take("channels", c.channels);
  sec.take("n_train_identities", c.n_train_identities);
  sec.take("n_eval_identities", c.n_eval_identities);
  sec.take("seed", c.seed);
  sec.finish();
  return c;
}

DegradationConfig degradation_from_json(const json& j) {
  Section sec(j, "degradation.");
  DegradationConfig c;
  if (sec.has("kind")) {
    const std::string name = field<std::string>(sec.take_raw("kind"), "degradation.kind");
    if (name == "gan") {
      c.kind = DegradationKind::GanProxy;
    } else if (name == "warp") {
      c.kind = DegradationKind::WarpProxy;
    } else {
      throw ConfigError("config key 'degradation.kind' must be gan/warp, got '" + name + "'");
    }
  }
  sec.take("strength", c.strength);
  sec.take("gan_fraction", c.gan_fraction);
  sec.take("sample_strength", c.sample_strength);
  sec.take("strength_min", c.strength_min);
  sec.take("strength_max", c.strength_max);
  sec.finish();
  return c;
}

TrainConfig train_from_json(const json& j) {
  Section sec(j, "train.");
  TrainConfig c;
  sec.take("lr0", c.lr0);
  sec.take("decay_epochs", c.decay_epochs);
  sec.take("decay_factor", c.decay_factor);
  sec.take("momentum", c.momentum);
  sec.take("epochs", c.epochs);
  sec.take("batch_size", c.batch_size);
  sec.take("batches_per_epoch", c.batches_per_epoch);
  sec.take("aug", c.aug);
  sec.take("freeze_backbone", c.freeze_backbone);
  sec.take("step2_distill", c.step2_distill);
  sec.take("seed", c.seed);
  sec.take("log_path", c.log_path);
  sec.take("snapshot_path", c.snapshot_path);
  if (sec.has("degradation")) {
    c.degradation = degradation_from_json(sec.take_raw("degradation"));
  }
  if (sec.has("margin")) {
    Section m(sec.take_raw("margin"), "train.margin.");
    m.take("s", c.margin.s);
    m.take("m", c.margin.m);
    m.take("h", c.margin.h);
    m.take("ema_stats", c.margin.ema_stats);
    m.take("ema_momentum", c.margin.ema_momentum);
    m.finish();
  }
  if (sec.has("weights")) {
    Section w(sec.take_raw("weights"), "train.weights.");
    w.take("bald", c.weights.bald);
    w.take("big_nose", c.weights.big_nose);
    w.take("chubby", c.weights.chubby);
    w.take("male", c.weights.male);
    w.take("narrow_eye", c.weights.narrow_eye);
    w.take("lambda_fr", c.weights.lambda_fr);
    w.take("lambda_distill", c.weights.lambda_distill);
    w.finish();
  }
  sec.finish();
  return c;
}

EvalConfig eval_from_json(const json& j) {
  Section sec(j, "eval.");
  EvalConfig c;
  sec.take("n_pairs", c.n_pairs);
  sec.take("positive_fraction", c.positive_fraction);
  sec.take("degrade_pairs", c.degrade_pairs);
  if (sec.has("degradation")) {
    c.degradation = degradation_from_json(sec.take_raw("degradation"));
  }
  sec.take("use_fused", c.use_fused);
  sec.take("far_targets", c.far_targets);
  sec.take("rank_ks", c.rank_ks);
  sec.take("bins", c.bins);
  sec.take("batch", c.batch);
  sec.take("seed", c.seed);
  sec.finish();
  return c;
}

json model_to_json(const ModelConfig& c) {
  json j;
  j["height"] = c.height;
  j["width"] = c.width;
  j["channels"] = c.channels;
  j["trunk_channels"] = c.trunk_channels;
  j["branch_blocks"] = c.branch_blocks;
  j["embed_dim"] = c.embed_dim;
  j["n_classes"] = c.n_classes;
  j["heads"] = c.heads;
  j["caf_groups"] = c.caf_groups;
  j["distill"] = distill_name(c.distill);
  j["distill_cosine"] = c.distill_cosine;
  j["catf_residual"] = c.catf_residual;
  j["use_mffnl"] = c.use_mffnl;
  j["use_caf"] = c.use_caf;
  j["mffnl_norm_act"] = c.mffnl_norm_act;
  j["init_seed"] = c.init_seed;
  return j;
}

const char* distill_name(DistillKind k) {
  switch (k) {
    case DistillKind::None: return "none";
    case DistillKind::Feature: return "feature";
    case DistillKind::Cbam: return "cbam";
    case DistillKind::SelfAttention: return "selfattn";
  }
  return "none";
}

}  // namespace catface
