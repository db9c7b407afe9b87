// C ABI wrapper: opaque handles, status codes, and a thread-local error
// message around the C++ core. All heap strings crossing the boundary are
// malloc'd so any C caller can free them.
#include "chessread.h"

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "experiments.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "notation.hpp"
#include "synth.hpp"
#include "train.hpp"
#include "util.hpp"

extern "C" char** environ;

struct csr_config {
  std::string json;  // canonical serialized document
};

namespace {

using namespace csr;

// Stream id for per-stage seeds of an incremental schedule (the train module
// owns 14-16, model init is 13).
constexpr uint64_t kStreamSchedule = 17;

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

csr_status fail(csr_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

template <typename Fn>
csr_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return CSR_OK;
  } catch (const UsageError& e) {
    return fail(CSR_USAGE_ERROR, e.what());
  } catch (const NumericError& e) {
    return fail(CSR_NUMERIC_ERROR, e.what());
  } catch (const DataError& e) {
    return fail(CSR_DATA_ERROR, e.what());
  } catch (const std::exception& e) {
    return fail(CSR_DATA_ERROR, e.what());
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw UsageError(what);
}

// "key=value" report accumulated by the commands.
class Summary {
 public:
  void add(const std::string& key, const std::string& value) {
    text_ += key + "=" + value + "\n";
  }
  void add(const std::string& key, int64_t value) {
    add(key, std::to_string(value));
  }
  void add(const std::string& key, uint64_t value) {
    add(key, std::to_string(value));
  }
  void add(const std::string& key, int value) { add(key, int64_t{value}); }
  void add(const std::string& key, bool value) {
    add(key, std::string(value ? "true" : "false"));
  }
  void add(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", value);
    add(key, std::string(buf));
  }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

void deliver(const Summary& summary, char** out_summary) {
  if (!out_summary) return;
  *out_summary = dup_string(summary.text());
  if (!*out_summary) throw std::bad_alloc();
}

RunConfig parse_rc(const csr_config* cfg) {
  require(cfg != nullptr, "null configuration handle");
  return run_config_from_json(cfg->json);
}

// Every command records the exact document it ran from next to its outputs.
void write_resolved(const RunConfig& rc) {
  ensure_dir(rc.out_dir);
  write_text_file(path_join(rc.out_dir, "resolved.json"), run_config_to_json(rc));
}

LoadedDataset gen_and_load(const DatasetSpec& spec, const Vocabulary& vocab,
                           const std::string& dir) {
  generate_dataset(spec, vocab, dir);
  return load_dataset(dir);
}

std::vector<int> all_indices(const LoadedDataset& ds) {
  std::vector<int> idx(ds.manifests.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

void add_eval(Summary& s, const std::string& prefix, const EvalResult& ev) {
  s.add(prefix + "position_accuracy", ev.metrics.position_accuracy);
  s.add(prefix + "first_position_accuracy", ev.metrics.first_position_accuracy);
  s.add(prefix + "exact_match_rate", ev.metrics.exact_match_rate);
  s.add(prefix + "cer", ev.metrics.cer);
  s.add(prefix + "samples", int64_t{ev.metrics.sample_count});
  s.add(prefix + "alignment_hit_rate", ev.alignment.hit_rate);
  s.add(prefix + "mean_attention_entropy", ev.alignment.mean_entropy);
}

Vocabulary checked_vocab(const RunConfig& rc) {
  validate_experiment_preset(rc.experiment);
  return run_vocabulary(rc);
}

}  // namespace

extern "C" {

const char* csr_version(void) { return "0.1.0"; }

const char* csr_last_error(void) { return g_last_error.c_str(); }

void csr_string_free(char* s) { std::free(s); }

csr_status csr_config_preset(const char* name, csr_config** out) {
  return guarded([&] {
    require(name != nullptr, "null preset name");
    require(out != nullptr, "null output pointer");
    *out = new csr_config{run_config_to_json(preset_run_config(name))};
  });
}

csr_status csr_config_read(const char* path, csr_config** out) {
  return guarded([&] {
    require(path != nullptr, "null path");
    require(out != nullptr, "null output pointer");
    RunConfig rc = run_config_from_json(read_text_file(path));
    *out = new csr_config{run_config_to_json(rc)};
  });
}

csr_status csr_config_parse(const char* json_text, csr_config** out) {
  return guarded([&] {
    require(json_text != nullptr, "null document");
    require(out != nullptr, "null output pointer");
    RunConfig rc = run_config_from_json(json_text);
    *out = new csr_config{run_config_to_json(rc)};
  });
}

csr_status csr_config_set(csr_config* cfg, const char* assignment) {
  return guarded([&] {
    require(cfg != nullptr, "null configuration handle");
    require(assignment != nullptr, "null assignment");
    cfg->json = apply_override(cfg->json, assignment);
  });
}

csr_status csr_config_apply_env(csr_config* cfg) {
  return guarded([&] {
    require(cfg != nullptr, "null configuration handle");
    std::vector<std::pair<std::string, std::string>> env;
    for (char** e = environ; e && *e; ++e) {
      const char* eq = std::strchr(*e, '=');
      if (!eq) continue;
      env.emplace_back(std::string(*e, static_cast<size_t>(eq - *e)),
                       std::string(eq + 1));
    }
    cfg->json = apply_env_overrides(cfg->json, env);
  });
}

csr_status csr_config_json(const csr_config* cfg, char** out_json) {
  return guarded([&] {
    require(cfg != nullptr, "null configuration handle");
    require(out_json != nullptr, "null output pointer");
    *out_json = dup_string(cfg->json);
    if (!*out_json) throw std::bad_alloc();
  });
}

csr_status csr_config_write(const csr_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg != nullptr, "null configuration handle");
    require(path != nullptr, "null path");
    write_text_file(path, cfg->json);
  });
}

void csr_config_free(csr_config* cfg) { delete cfg; }

csr_status csr_run_synth(const csr_config* cfg, char** out_summary) {
  return guarded([&] {
    RunConfig rc = parse_rc(cfg);
    Vocabulary vocab = checked_vocab(rc);
    write_resolved(rc);
    std::string train_dir = path_join(rc.out_dir, "data_train");
    std::string test_dir = path_join(rc.out_dir, "data_test");
    LoadedDataset train_ds = gen_and_load(rc.experiment.train_data, vocab, train_dir);
    LoadedDataset test_ds = gen_and_load(rc.experiment.test_data, vocab, test_dir);

    Summary s;
    s.add("train_dir", train_dir);
    s.add("test_dir", test_dir);
    s.add("train_size", int64_t{static_cast<int64_t>(train_ds.manifests.size())});
    s.add("test_size", int64_t{static_cast<int64_t>(test_ds.manifests.size())});
    s.add("image_h", int64_t{train_ds.images.empty() ? 0 : train_ds.images[0].dim(0)});
    s.add("image_w", int64_t{train_ds.images.empty() ? 0 : train_ds.images[0].dim(1)});
    s.add("rows", int64_t{rc.experiment.train_data.layout.rows});
    s.add("sequence_length", int64_t{train_ds.sequence_length});
    s.add("vocab_size", int64_t{vocab.size()});
    deliver(s, out_summary);
  });
}

csr_status csr_run_train(const csr_config* cfg, char** out_summary) {
  return guarded([&] {
    RunConfig rc = parse_rc(cfg);
    Vocabulary vocab = checked_vocab(rc);
    write_resolved(rc);
    LoadedDataset train_ds = gen_and_load(rc.experiment.train_data, vocab,
                                          path_join(rc.out_dir, "data_train"));
    LoadedDataset test_ds = gen_and_load(rc.experiment.test_data, vocab,
                                         path_join(rc.out_dir, "data_test"));

    Model<float> model(rc.experiment.model, vocab.content_hash(), rc.seed);
    TrainConfig tc = rc.experiment.train;
    tc.seed = rc.seed;
    FitResult fr = fit(model, train_ds, tc);

    write_curves_csv(path_join(rc.out_dir, "curves.csv"), fr.log);
    write_text_file(path_join(rc.out_dir, "curves_det.csv"),
                    curves_csv_deterministic(fr.log));
    write_text_file(path_join(rc.out_dir, "metadata.txt"),
                    run_metadata(tc, model,
                                 dataset_spec_to_json(rc.experiment.train_data)));
    std::string ckpt = path_join(rc.out_dir, "checkpoint.bin");
    save_checkpoint(model, ckpt);

    EvalResult ev = evaluate_model(model, test_ds, all_indices(test_ds),
                                   rc.experiment.alignment_tolerance_px);

    Summary s;
    s.add("converged", fr.converged);
    s.add("epochs", int64_t{static_cast<int64_t>(fr.log.size())});
    if (!fr.log.empty()) {
      const EpochStats& last = fr.log.back();
      s.add("train_loss", last.train_loss);
      s.add("train_acc", last.train_acc);
      s.add("val_loss", last.val_loss);
      s.add("val_acc", last.val_acc);
    }
    add_eval(s, "test_", ev);
    s.add("checkpoint", ckpt);
    s.add("curves", path_join(rc.out_dir, "curves.csv"));
    write_text_file(path_join(rc.out_dir, "summary.txt"), s.text());
    deliver(s, out_summary);
  });
}

csr_status csr_run_eval(const csr_config* cfg, const char* checkpoint_path,
                        char** out_summary) {
  return guarded([&] {
    require(checkpoint_path != nullptr, "null checkpoint path");
    RunConfig rc = parse_rc(cfg);
    Vocabulary vocab = checked_vocab(rc);
    write_resolved(rc);
    Model<float> model = load_checkpoint(checkpoint_path, vocab.content_hash());
    LoadedDataset test_ds = gen_and_load(rc.experiment.test_data, vocab,
                                         path_join(rc.out_dir, "data_test"));
    EvalResult ev = evaluate_model(model, test_ds, all_indices(test_ds),
                                   rc.experiment.alignment_tolerance_px);
    Summary s;
    s.add("checkpoint", std::string(checkpoint_path));
    add_eval(s, "", ev);
    deliver(s, out_summary);
  });
}

csr_status csr_run_ablation(const csr_config* cfg, char** out_summary) {
  return guarded([&] {
    RunConfig rc = parse_rc(cfg);
    write_resolved(rc);
    AblationSuite suite = suite_from_run_config(rc);
    AblationTable table = run_ablation(suite);

    int errors = 0;
    for (const AblationRow& r : table.rows)
      if (!r.error.empty()) ++errors;
    std::vector<DirectionCheck> checks = ablation_direction_checks(table);
    int passed = 0;
    for (const DirectionCheck& c : checks)
      if (c.passed) ++passed;

    Summary s;
    s.add("rows", int64_t{static_cast<int64_t>(table.rows.size())});
    s.add("errors", int64_t{errors});
    s.add("csv", path_join(suite.out_dir, "ablation.csv"));
    s.add("checks_passed",
          std::to_string(passed) + "/" + std::to_string(checks.size()));
    for (const DirectionCheck& c : checks) {
      s.add("check." + c.name, std::string(c.passed ? "pass" : "fail"));
      s.add("votes." + c.name,
            std::to_string(c.votes_for) + "/" + std::to_string(c.votes_total));
    }
    deliver(s, out_summary);
  });
}

csr_status csr_run_sweep(const csr_config* cfg, char** out_summary) {
  return guarded([&] {
    RunConfig rc = parse_rc(cfg);
    write_resolved(rc);
    SweepSpec spec = sweep_from_run_config(rc);
    std::vector<SweepRow> rows = run_length_sweep(spec);
    int errors = 0;
    for (const SweepRow& r : rows)
      if (!r.error.empty()) ++errors;
    Summary s;
    s.add("rows", int64_t{static_cast<int64_t>(rows.size())});
    s.add("errors", int64_t{errors});
    s.add("csv", path_join(spec.out_dir, "sweep.csv"));
    deliver(s, out_summary);
  });
}

csr_status csr_run_incremental(const csr_config* cfg, char** out_summary) {
  return guarded([&] {
    RunConfig rc = parse_rc(cfg);
    require(!rc.schedule.empty(), "incremental: the schedule is empty");
    Vocabulary vocab = checked_vocab(rc);
    // Each stage must agree with the model and keep its styles disjoint from
    // the held-out pool; validating a stand-in preset per stage reuses the
    // preset rules.
    for (const ScheduleStep& step : rc.schedule) {
      ExperimentPreset p = rc.experiment;
      p.train_data = step.data;
      p.train = step.train;
      validate_experiment_preset(p);
    }
    write_resolved(rc);

    LoadedDataset test_ds = gen_and_load(rc.experiment.test_data, vocab,
                                         path_join(rc.out_dir, "data_test"));
    std::vector<LoadedDataset> stage_data;
    std::vector<std::string> stage_dirs;
    stage_data.reserve(rc.schedule.size());
    for (size_t i = 0; i < rc.schedule.size(); ++i) {
      std::string dir = path_join(
          rc.out_dir, "step" + std::to_string(i + 1) + "_" + rc.schedule[i].name);
      ensure_dir(dir);
      stage_dirs.push_back(dir);
      stage_data.push_back(
          gen_and_load(rc.schedule[i].data, vocab, path_join(dir, "data")));
    }

    Model<float> model(rc.experiment.model, vocab.content_hash(), rc.seed);
    std::vector<RefinementStep> steps;
    for (size_t i = 0; i < rc.schedule.size(); ++i) {
      RefinementStep step;
      step.data = &stage_data[i];
      step.config = rc.schedule[i].train;
      step.config.seed = derive_seed(rc.seed, kStreamSchedule, i);
      step.name = rc.schedule[i].name;
      steps.push_back(std::move(step));
    }
    std::vector<RefinementResult> results =
        incremental_fit(model, steps, test_ds);

    Summary s;
    s.add("steps", int64_t{static_cast<int64_t>(results.size())});
    for (size_t i = 0; i < results.size(); ++i) {
      const RefinementResult& r = results[i];
      std::string key = "step" + std::to_string(i + 1) + ".";
      s.add(key + "name", r.name);
      s.add(key + "converged", r.fit.converged);
      s.add(key + "epochs", int64_t{static_cast<int64_t>(r.fit.log.size())});
      s.add(key + "test_acc", r.test_acc);
      write_curves_csv(path_join(stage_dirs[i], "curves.csv"), r.fit.log);
      write_text_file(path_join(stage_dirs[i], "curves_det.csv"),
                      curves_csv_deterministic(r.fit.log));
      write_text_file(path_join(stage_dirs[i], "metadata.txt"),
                      run_metadata(steps[i].config, model,
                                   dataset_spec_to_json(rc.schedule[i].data)));
    }
    s.add("first_test_acc", results.front().test_acc);
    s.add("final_test_acc", results.back().test_acc);
    s.add("improvement", results.back().test_acc - results.front().test_acc);
    std::string ckpt = path_join(rc.out_dir, "checkpoint.bin");
    save_checkpoint(model, ckpt);
    s.add("checkpoint", ckpt);
    write_text_file(path_join(rc.out_dir, "summary.txt"), s.text());
    deliver(s, out_summary);
  });
}

csr_status csr_run_attention_map(const csr_config* cfg,
                                 const char* checkpoint_path, int sample_index,
                                 char** out_summary) {
  return guarded([&] {
    require(checkpoint_path != nullptr, "null checkpoint path");
    RunConfig rc = parse_rc(cfg);
    Vocabulary vocab = checked_vocab(rc);
    write_resolved(rc);
    Model<float> model = load_checkpoint(checkpoint_path, vocab.content_hash());
    LoadedDataset test_ds = gen_and_load(rc.experiment.test_data, vocab,
                                         path_join(rc.out_dir, "data_test"));
    require(sample_index >= 0 &&
                sample_index < static_cast<int>(test_ds.images.size()),
            "sample index out of range for the held-out set");

    const Image& img = test_ds.images[sample_index];
    auto rec = model.forward_free_running(ink_input<float>(img),
                                          test_ds.sequence_length + 1);
    std::string prefix =
        path_join(rc.out_dir, "attn_sample" + std::to_string(sample_index));
    export_attention_maps(rec.attention, model.geom(), img.dim(0), img.dim(1),
                          prefix);

    std::string decoded;
    for (const std::string& tok : vocab.decode(rec.codes)) {
      if (!decoded.empty()) decoded += ' ';
      decoded += tok;
    }
    std::string truth;
    for (const std::string& tok :
         vocab.decode(test_ds.manifests[sample_index].codes)) {
      if (!truth.empty()) truth += ' ';
      truth += tok;
    }

    Summary s;
    s.add("sample", int64_t{sample_index});
    s.add("steps", int64_t{rec.attention.dim(0)});
    s.add("ended", rec.ended);
    s.add("decoded", decoded);
    s.add("truth", truth);
    s.add("prefix", prefix);
    deliver(s, out_summary);
  });
}

csr_status csr_run_baseline(const csr_config* cfg, char** out_summary) {
  return guarded([&] {
    RunConfig rc = parse_rc(cfg);
    Vocabulary vocab = checked_vocab(rc);
    write_resolved(rc);
    LoadedDataset train_ds = gen_and_load(rc.experiment.train_data, vocab,
                                          path_join(rc.out_dir, "data_train"));
    LoadedDataset test_ds = gen_and_load(rc.experiment.test_data, vocab,
                                         path_join(rc.out_dir, "data_test"));
    BaselineConfig bc;
    bc.vocab_size = vocab.size();
    bc.seed = rc.seed;
    BaselineReport report = run_predictability_baseline(
        dataset_code_sequences(train_ds), dataset_code_sequences(test_ds), bc);
    Summary s;
    s.add("accuracy", report.accuracy);
    s.add("chance", report.chance);
    s.add("eval_positions", int64_t{report.eval_positions});
    deliver(s, out_summary);
  });
}

csr_status csr_run_gradcheck(unsigned long long seed, int points_per_check,
                             double tolerance, char** out_summary) {
  return guarded([&] {
    int points = points_per_check > 0 ? points_per_check : 10;
    double tol = tolerance > 0 ? tolerance : 1e-4;

    std::vector<GradCheck> checks = standard_grad_checks(seed);
    std::vector<GradCheck> composed = composed_grad_checks(seed);
    for (GradCheck& c : composed) checks.push_back(std::move(c));
    GradCheckReport report = run_grad_check_suite(checks, seed, points);

    Summary s;
    s.add("checks", int64_t{static_cast<int64_t>(report.rows.size())});
    s.add("points", int64_t{report.total_points});
    s.add("max_rel_err", report.max_rel_err);
    s.add("seconds", report.seconds);
    s.add("passed", report.passed(tol));
    for (const GradCheckRow& row : report.rows)
      s.add("check." + row.name, row.max_rel_err);
    deliver(s, out_summary);

    if (!report.passed(tol)) {
      std::string worst;
      for (const GradCheckRow& row : report.rows)
        if (row.max_rel_err == report.max_rel_err) worst = row.name;
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "gradient check failed: max relative error %.3g >= %.3g (%s)",
                    report.max_rel_err, tol, worst.c_str());
      throw NumericError(buf);
    }
  });
}

csr_status csr_parse_pgn_file(const char* path, const char* language,
                              char** out_text) {
  return guarded([&] {
    require(path != nullptr, "null path");
    require(out_text != nullptr, "null output pointer");
    std::string lang = language ? language : "en";
    require(lang == "en" || lang == "pt",
            "unsupported language (expected \"en\" or \"pt\")");

    std::vector<GameRecord> games =
        parse_pgn_collection(read_text_file(path), lang);
    LangMap map;
    if (lang == "pt") map = LangMap::from_text(builtin_langmap_pt(), "pt");

    std::string out;
    for (const GameRecord& game : games) {
      std::vector<SanMove> moves =
          lang == "pt" ? map.to_english(game.moves) : game.moves;
      std::string line;
      for (const SanMove& m : moves) {
        if (!line.empty()) line += ' ';
        line += m.text;
      }
      out += line + "\n";
    }
    *out_text = dup_string(out);
    if (!*out_text) throw std::bad_alloc();
  });
}

}  // extern "C"
