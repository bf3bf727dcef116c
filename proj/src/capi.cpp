#include "catface.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ablation.hpp"
#include "config.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "gradsuite.hpp"
#include "io.hpp"
#include "model.hpp"
#include "synthdata.hpp"
#include "trainer.hpp"

using nlohmann::json;

struct catface_session {
  json doc;
  catface::ModelState state;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p == nullptr) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

template <typename F>
catface_status guard(F&& body) {
  g_last_error.clear();
  try {
    body();
    return CATFACE_OK;
  } catch (const catface::ConfigError& e) {
    g_last_error = e.what();
    return CATFACE_ERROR_CONFIG;
  } catch (const catface::DataError& e) {
    g_last_error = e.what();
    return CATFACE_ERROR_DATA;
  } catch (const catface::NumericError& e) {
    g_last_error = e.what();
    return CATFACE_ERROR_NUMERIC;
  } catch (const catface::IoError& e) {
    g_last_error = e.what();
    return CATFACE_ERROR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CATFACE_ERROR_UNKNOWN;
  }
}

catface_status bad_handle(const char* what) {
  g_last_error = what;
  return CATFACE_ERROR_BAD_HANDLE;
}

json section(const json& doc, const char* name) {
  return doc.contains(name) ? doc.at(name) : json::object();
}

/* Step-2 training reads the train section with train2 entries layered on
   top, so a config only states what step 2 changes. */
json step2_section(const json& doc) {
  json merged = section(doc, "train");
  merged.merge_patch(section(doc, "train2"));
  return merged;
}

std::string join_records(const catface::TrainLog& log) {
  std::string out;
  for (const auto& r : log.records) {
    out += catface::format_record(r);
    out += '\n';
  }
  return out;
}

}  // namespace

extern "C" {

const char* catface_version(void) { return "0.1.0"; }

const char* catface_last_error(void) { return g_last_error.c_str(); }

void catface_string_free(char* s) { std::free(s); }

catface_status catface_session_create(const char* config_text, catface_session** out) {
  if (out == nullptr) return bad_handle("null session out-pointer");
  return guard([&] {
    json doc = catface::parse_config_text(config_text ? config_text : "");
    catface::check_sections(doc);
    auto s = std::make_unique<catface_session>();
    s->state = catface::ModelState::init(catface::model_from_json(section(doc, "model")));
    s->doc = std::move(doc);
    *out = s.release();
  });
}

catface_status catface_session_open(const char* checkpoint_path, const char* config_text,
                                    catface_session** out) {
  if (out == nullptr) return bad_handle("null session out-pointer");
  if (checkpoint_path == nullptr) return bad_handle("null checkpoint path");
  return guard([&] {
    json doc = catface::parse_config_text(config_text ? config_text : "");
    catface::check_sections(doc);
    auto s = std::make_unique<catface_session>();
    s->state = catface::load_checkpoint(checkpoint_path);
    doc["model"] = catface::model_to_json(s->state.config);
    s->doc = std::move(doc);
    *out = s.release();
  });
}

catface_status catface_session_save(catface_session* s, const char* checkpoint_path) {
  if (s == nullptr) return bad_handle("null session");
  if (checkpoint_path == nullptr) return bad_handle("null checkpoint path");
  return guard([&] { catface::save_checkpoint(s->state, checkpoint_path); });
}

void catface_session_free(catface_session* s) { delete s; }

catface_status catface_session_set(catface_session* s, const char* assignment) {
  if (s == nullptr) return bad_handle("null session");
  if (assignment == nullptr) return bad_handle("null assignment");
  return guard([&] {
    json doc = s->doc;
    catface::apply_override(doc, assignment);
    catface::check_sections(doc);
    s->doc = std::move(doc);
  });
}

catface_status catface_session_info(catface_session* s, char** json_out) {
  if (s == nullptr) return bad_handle("null session");
  if (json_out == nullptr) return bad_handle("null info out-pointer");
  return guard([&] {
    std::vector<catface::NamedTensor> params, buffers;
    catface::append_params(s->state, params);
    catface::append_buffers(s->state, buffers);
    size_t n_params = 0, n_buffers = 0;
    for (const auto& nt : params) n_params += nt.t.size();
    for (const auto& nt : buffers) n_buffers += nt.t.size();
    json j;
    j["version"] = catface_version();
    j["epoch"] = s->state.epoch;
    j["model"] = catface::model_to_json(s->state.config);
    j["n_parameters"] = n_params;
    j["n_buffer_values"] = n_buffers;
    *json_out = dup_string(j.dump(2));
  });
}

catface_status catface_train_step1(catface_session* s, char** log_out) {
  if (s == nullptr) return bad_handle("null session");
  return guard([&] {
    catface::Dataset ds =
        catface::make_dataset(catface::dataset_from_json(section(s->doc, "data")));
    catface::TrainConfig cfg = catface::train_from_json(section(s->doc, "train"));
    catface::TrainLog log = catface::train_step1(s->state, ds, cfg);
    if (log_out != nullptr) *log_out = dup_string(join_records(log));
  });
}

catface_status catface_train_step2(catface_session* s, int resume, char** log_out) {
  if (s == nullptr) return bad_handle("null session");
  return guard([&] {
    catface::Dataset ds =
        catface::make_dataset(catface::dataset_from_json(section(s->doc, "data")));
    catface::TrainConfig cfg = catface::train_from_json(step2_section(s->doc));
    if (resume == 0) s->state.epoch = 0;
    catface::TrainLog log = catface::train_step2(s->state, ds, cfg);
    if (log_out != nullptr) *log_out = dup_string(join_records(log));
  });
}

catface_status catface_evaluate(catface_session* s, char** json_out, char** tsv_out) {
  if (s == nullptr) return bad_handle("null session");
  return guard([&] {
    catface::Dataset ds =
        catface::make_dataset(catface::dataset_from_json(section(s->doc, "data")));
    catface::EvalConfig cfg = catface::eval_from_json(section(s->doc, "eval"));
    catface::EvalReport rep = catface::evaluate(s->state, ds, cfg);
    if (json_out != nullptr) *json_out = dup_string(catface::report_json(rep));
    if (tsv_out != nullptr) *tsv_out = dup_string(catface::report_tsv(rep));
  });
}

catface_status catface_ablate(catface_session* s, const char* axis, char** table_out,
                              char** json_out) {
  if (s == nullptr) return bad_handle("null session");
  if (axis == nullptr) return bad_handle("null axis");
  return guard([&] {
    const catface::ModelConfig model = catface::model_from_json(section(s->doc, "model"));
    const catface::TrainConfig train = catface::train_from_json(section(s->doc, "train"));
    std::vector<catface::AblationSpec> specs;
    const std::string ax = axis;
    if (ax == "distill") {
      specs = catface::distill_axis(model, train);
    } else if (ax == "metric") {
      specs = catface::metric_axis(model, train);
    } else if (ax == "fusion") {
      specs = catface::fusion_axis(model, train,
                                   catface::train_from_json(step2_section(s->doc)));
    } else {
      throw catface::ConfigError("unknown ablation axis '" + ax +
                                 "', expected distill/metric/fusion");
    }
    std::vector<catface::AblationRun> runs = catface::run_ablation(
        specs, catface::dataset_from_json(section(s->doc, "data")),
        catface::eval_from_json(section(s->doc, "eval")));
    if (table_out != nullptr) *table_out = dup_string(catface::ablation_table(runs));
    if (json_out != nullptr) {
      json rows = json::array();
      for (const auto& run : runs) {
        json row;
        row["label"] = run.label;
        row["report"] = json::parse(catface::report_json(run.report));
        rows.push_back(std::move(row));
      }
      *json_out = dup_string(rows.dump(2));
    }
  });
}

catface_status catface_grad_suite(uint64_t base_seed, int n_seeds, double tol,
                                  char** summary_out, int* passed_out) {
  return guard([&] {
    if (n_seeds < 1) throw catface::ConfigError("gradcheck needs at least one seed");
    if (!(tol > 0.0)) throw catface::ConfigError("gradcheck tolerance must be positive");
    std::vector<catface::GradSuiteReport> reports;
    reports.reserve(static_cast<size_t>(n_seeds));
    bool all = true;
    for (int i = 0; i < n_seeds; ++i) {
      reports.push_back(catface::run_grad_suite(base_seed + static_cast<uint64_t>(i)));
      all = all && reports.back().passed(tol);
    }
    if (summary_out != nullptr) {
      *summary_out = dup_string(catface::grad_suite_summary(reports, tol));
    }
    if (passed_out != nullptr) *passed_out = all ? 1 : 0;
  });
}

catface_status catface_dump_attention(catface_session* s, const char* dir, int n_images) {
  if (s == nullptr) return bad_handle("null session");
  if (dir == nullptr) return bad_handle("null output directory");
  return guard([&] {
    if (n_images < 1) throw catface::ConfigError("dump-attention needs at least one image");
    catface::Dataset ds =
        catface::make_dataset(catface::dataset_from_json(section(s->doc, "data")));
    if (static_cast<size_t>(n_images) > ds.eval.size()) {
      throw catface::DataError("asked for " + std::to_string(n_images) +
                               " images but the eval split has " +
                               std::to_string(ds.eval.size()) + " identities");
    }
    const catface::EvalConfig ec = catface::eval_from_json(section(s->doc, "eval"));
    const catface::ModelConfig& mc = s->state.config;
    catface::Tensor batch =
        catface::Tensor::zeros({n_images, mc.height, mc.width, mc.channels});
    for (int i = 0; i < n_images; ++i) {
      catface::Tensor img =
          catface::render(ds.eval[static_cast<size_t>(i)],
                          catface::derive_seed(ec.seed, "dump", static_cast<uint64_t>(i)),
                          mc.height, mc.width, mc.channels);
      std::copy(img.ptr(), img.ptr() + img.size(),
                batch.ptr() + static_cast<size_t>(i) * img.size());
    }
    catface::dump_attention_maps(s->state, batch, dir);
  });
}

catface_status catface_export_dataset(catface_session* s, const char* dir,
                                      int samples_per_identity, int with_degraded) {
  if (s == nullptr) return bad_handle("null session");
  if (dir == nullptr) return bad_handle("null output directory");
  return guard([&] {
    if (samples_per_identity < 1) {
      throw catface::ConfigError("gen-data needs at least one sample per identity");
    }
    catface::Dataset ds =
        catface::make_dataset(catface::dataset_from_json(section(s->doc, "data")));
    const catface::DegradationConfig deg =
        catface::train_from_json(section(s->doc, "train")).degradation;
    std::filesystem::create_directories(dir);
    const std::string base = std::string(dir) + "/";
    catface::export_manifest(ds, base + "manifest.tsv");
    const auto write_split = [&](const std::vector<catface::IdentitySpec>& specs,
                                 const char* split) {
      for (const auto& spec : specs) {
        for (int k = 0; k < samples_per_identity; ++k) {
          const uint64_t seed = catface::derive_seed(
              catface::derive_seed(ds.config.seed, "export", static_cast<uint64_t>(spec.id)),
              "sample", static_cast<uint64_t>(k));
          catface::Tensor img = catface::render(spec, seed, ds.config.height,
                                                ds.config.width, ds.config.channels);
          const std::string stem =
              base + split + "_id" + std::to_string(spec.id) + "_s" + std::to_string(k);
          catface::write_pgm(img, stem + ".pgm");
          if (with_degraded != 0) {
            catface::write_pgm(catface::degrade(img, deg, catface::derive_seed(seed, "deg")),
                               stem + "_deg.pgm");
          }
        }
      }
    };
    write_split(ds.train, "train");
    write_split(ds.eval, "eval");
  });
}

catface_status catface_checkpoint_info(const char* path, char** json_out) {
  if (path == nullptr) return bad_handle("null checkpoint path");
  if (json_out == nullptr) return bad_handle("null info out-pointer");
  return guard([&] {
    catface::ModelState st = catface::load_checkpoint(path);
    const auto tensors = catface::load_archive(path);
    json j;
    j["path"] = path;
    j["epoch"] = st.epoch;
    j["model"] = catface::model_to_json(st.config);
    json list = json::array();
    size_t total = 0;
    for (const auto& nt : tensors) {
      json e;
      e["name"] = nt.name;
      e["shape"] = nt.t.shape();
      e["elements"] = nt.t.size();
      list.push_back(std::move(e));
      total += nt.t.size();
    }
    j["tensors"] = std::move(list);
    j["total_elements"] = total;
    *json_out = dup_string(j.dump(2));
  });
}

}  // extern "C"
