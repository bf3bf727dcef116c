#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "catface.h"

namespace {

struct StringFree {
  void operator()(char* p) const { catface_string_free(p); }
};
using ApiString = std::unique_ptr<char, StringFree>;

struct SessionFree {
  void operator()(catface_session* s) const { catface_session_free(s); }
};
using Session = std::unique_ptr<catface_session, SessionFree>;

int fail(catface_status st) {
  std::fprintf(stderr, "error: %s\n", catface_last_error());
  return static_cast<int>(st);
}

bool read_file(const std::string& path, std::string& out) {
  std::ifstream in(path);
  if (!in.is_open()) return false;
  std::stringstream buf;
  buf << in.rdbuf();
  out = buf.str();
  return true;
}

bool write_file(const std::string& path, const char* text) {
  std::ofstream out(path);
  if (!out.is_open()) return false;
  out << text;
  return out.good();
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  uint64_t seed = 0;
  bool seed_given = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "Config file (JSON or key = value lines)");
    cmd->add_option("--set", sets, "Override one config key, e.g. --set train.lr0=0.05")
        ->take_all();
    cmd->add_option("--seed", seed, "Seed for this run")->each([this](const std::string&) {
      seed_given = true;
    });
  }

  // Applies file-level config plus overrides; seed_keys name the config
  // entries an explicit --seed replaces.
  int open(Session& session, const std::string& ckpt,
           const std::vector<std::string>& seed_keys) const {
    std::string text;
    if (!config_path.empty() && !read_file(config_path, text)) {
      std::fprintf(stderr, "error: cannot read config file %s\n", config_path.c_str());
      return CATFACE_ERROR_IO;
    }
    catface_session* raw = nullptr;
    const catface_status st =
        ckpt.empty() ? catface_session_create(text.empty() ? nullptr : text.c_str(), &raw)
                     : catface_session_open(ckpt.c_str(), text.empty() ? nullptr : text.c_str(),
                                            &raw);
    if (st != CATFACE_OK) return fail(st);
    session.reset(raw);
    std::vector<std::string> assignments = sets;
    if (seed_given) {
      for (const std::string& key : seed_keys) {
        assignments.push_back(key + "=" + std::to_string(seed));
      }
    }
    for (const std::string& a : assignments) {
      const catface_status set_st = catface_session_set(session.get(), a.c_str());
      if (set_st != CATFACE_OK) return fail(set_st);
    }
    return CATFACE_OK;
  }
};

int save_session(catface_session* s, const std::string& path) {
  const catface_status st = catface_session_save(s, path.c_str());
  if (st != CATFACE_OK) return fail(st);
  std::printf("checkpoint written to %s\n", path.c_str());
  return CATFACE_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face/attribute network with attention-guided fusion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(catface_version()));

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset to a directory");
  Common gen_c;
  gen_c.attach(gen);
  std::string gen_out = "dataset";
  int gen_samples = 1;
  bool gen_degraded = false;
  gen->add_option("-o,--out", gen_out, "Output directory")->capture_default_str();
  gen->add_option("--samples", gen_samples, "Renders per identity")->capture_default_str();
  gen->add_flag("--degraded", gen_degraded, "Also write degraded copies");

  // train-step1
  auto* t1 = app.add_subcommand("train-step1", "Train the branch networks");
  Common t1_c;
  t1_c.attach(t1);
  std::string t1_out = "step1.ckpt";
  t1->add_option("-o,--out", t1_out, "Checkpoint to write")->capture_default_str();

  // train-step2
  auto* t2 = app.add_subcommand("train-step2", "Train the fusion stage");
  Common t2_c;
  t2_c.attach(t2);
  std::string t2_ckpt, t2_out = "step2.ckpt";
  bool t2_resume = false;
  t2->add_option("--ckpt", t2_ckpt, "Checkpoint to start from (default: fresh model)");
  t2->add_option("-o,--out", t2_out, "Checkpoint to write")->capture_default_str();
  t2->add_flag("--resume", t2_resume, "Continue the epoch counter instead of restarting");

  // eval
  auto* ev = app.add_subcommand("eval", "Verification and identification metrics");
  Common ev_c;
  ev_c.attach(ev);
  std::string ev_ckpt, ev_report = "eval_report.json";
  long long ev_pairs = 10000;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint to evaluate (default: fresh model)");
  ev->add_option("--pairs", ev_pairs, "Verification pairs")->capture_default_str();
  ev->add_option("--report", ev_report, "JSON report path")->capture_default_str();

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and evaluate one ablation axis");
  Common ab_c;
  ab_c.attach(ab);
  std::string ab_axis = "distill", ab_report = "ablation.json";
  ab->add_option("--axis", ab_axis, "distill, metric, or fusion")->capture_default_str();
  ab->add_option("--report", ab_report, "JSON report path")->capture_default_str();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  uint64_t gc_base = 0;
  int gc_seeds = 20;
  double gc_tol = 1e-4;
  gc->add_option("--seed", gc_base, "First seed")->capture_default_str();
  gc->add_option("--seeds", gc_seeds, "Number of seeds")->capture_default_str();
  gc->add_option("--tol", gc_tol, "Relative-error tolerance")->capture_default_str();

  // dump-attention
  auto* da = app.add_subcommand("dump-attention", "Write attention magnitude maps");
  Common da_c;
  da_c.attach(da);
  std::string da_ckpt, da_out = "attention";
  int da_images = 4;
  da->add_option("--ckpt", da_ckpt, "Checkpoint to visualize (default: fresh model)");
  da->add_option("-o,--out", da_out, "Output directory")->capture_default_str();
  da->add_option("--images", da_images, "Eval identities to render")->capture_default_str();

  // inspect-ckpt
  auto* ic = app.add_subcommand("inspect-ckpt", "Validate and describe a checkpoint");
  std::string ic_path;
  ic->add_option("path", ic_path, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return CATFACE_ERROR_CONFIG;
  }

  if (gen->parsed()) {
    Session s;
    if (int rc = gen_c.open(s, "", {"data.seed"}); rc != 0) return rc;
    const catface_status st =
        catface_export_dataset(s.get(), gen_out.c_str(), gen_samples, gen_degraded ? 1 : 0);
    if (st != CATFACE_OK) return fail(st);
    std::printf("dataset written to %s\n", gen_out.c_str());
    return 0;
  }

  if (t1->parsed()) {
    Session s;
    if (int rc = t1_c.open(s, "", {"train.seed"}); rc != 0) return rc;
    char* log = nullptr;
    const catface_status st = catface_train_step1(s.get(), &log);
    ApiString log_owner(log);
    if (st != CATFACE_OK) return fail(st);
    std::fputs(log, stdout);
    return save_session(s.get(), t1_out);
  }

  if (t2->parsed()) {
    Session s;
    if (int rc = t2_c.open(s, t2_ckpt, {"train.seed", "train2.seed"}); rc != 0) return rc;
    char* log = nullptr;
    const catface_status st = catface_train_step2(s.get(), t2_resume ? 1 : 0, &log);
    ApiString log_owner(log);
    if (st != CATFACE_OK) return fail(st);
    std::fputs(log, stdout);
    return save_session(s.get(), t2_out);
  }

  if (ev->parsed()) {
    Session s;
    if (int rc = ev_c.open(s, ev_ckpt, {"eval.seed"}); rc != 0) return rc;
    if (ev->count("--pairs") > 0) {
      const std::string a = "eval.n_pairs=" + std::to_string(ev_pairs);
      if (catface_session_set(s.get(), a.c_str()) != CATFACE_OK) {
        return fail(CATFACE_ERROR_CONFIG);
      }
    }
    char *json = nullptr, *tsv = nullptr;
    const catface_status st = catface_evaluate(s.get(), &json, &tsv);
    ApiString json_owner(json), tsv_owner(tsv);
    if (st != CATFACE_OK) return fail(st);
    std::fputs(tsv, stdout);
    if (!write_file(ev_report, json)) {
      std::fprintf(stderr, "error: cannot write report %s\n", ev_report.c_str());
      return CATFACE_ERROR_IO;
    }
    std::printf("report written to %s\n", ev_report.c_str());
    return 0;
  }

  if (ab->parsed()) {
    Session s;
    if (int rc = ab_c.open(s, "", {"train.seed", "train2.seed", "eval.seed"}); rc != 0) {
      return rc;
    }
    char *table = nullptr, *json = nullptr;
    const catface_status st = catface_ablate(s.get(), ab_axis.c_str(), &table, &json);
    ApiString table_owner(table), json_owner(json);
    if (st != CATFACE_OK) return fail(st);
    std::fputs(table, stdout);
    if (!write_file(ab_report, json)) {
      std::fprintf(stderr, "error: cannot write report %s\n", ab_report.c_str());
      return CATFACE_ERROR_IO;
    }
    std::printf("report written to %s\n", ab_report.c_str());
    return 0;
  }

  if (gc->parsed()) {
    char* summary = nullptr;
    int passed = 0;
    const catface_status st = catface_grad_suite(gc_base, gc_seeds, gc_tol, &summary, &passed);
    ApiString summary_owner(summary);
    if (st != CATFACE_OK) return fail(st);
    std::fputs(summary, stdout);
    return passed ? 0 : CATFACE_ERROR_NUMERIC;
  }

  if (da->parsed()) {
    Session s;
    if (int rc = da_c.open(s, da_ckpt, {"eval.seed"}); rc != 0) return rc;
    const catface_status st = catface_dump_attention(s.get(), da_out.c_str(), da_images);
    if (st != CATFACE_OK) return fail(st);
    std::printf("attention maps written to %s\n", da_out.c_str());
    return 0;
  }

  if (ic->parsed()) {
    char* info = nullptr;
    const catface_status st = catface_checkpoint_info(ic_path.c_str(), &info);
    ApiString info_owner(info);
    if (st != CATFACE_OK) return fail(st);
    std::puts(info);
    return 0;
  }

  return CATFACE_ERROR_CONFIG;
}
