#include "experiments.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace csr {

using json = nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string sanitize_csv(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c == ',') c = ';';
    if (c == '\n') c = ' ';
  }
  return out;
}

void flatten_json(const json& j, const std::string& prefix,
                  std::map<std::string, std::string>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten_json(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(),
                   out);
  } else {
    out[prefix] = j.dump();
  }
}

json preset_to_json_obj(const ExperimentPreset& p) {
  json j;
  j["train_data"] = json::parse(dataset_spec_to_json(p.train_data));
  j["test_data"] = json::parse(dataset_spec_to_json(p.test_data));
  j["model"] = json::parse(model_config_to_json(p.model));
  j["train"] = json::parse(train_config_to_json(p.train));
  j["alignment_tolerance_px"] = p.alignment_tolerance_px;
  return j;
}

ExperimentPreset preset_from_json_obj(const json& j) {
  std::set<std::string> known = {"train_data", "test_data", "model", "train",
                                 "alignment_tolerance_px"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw DataError("experiment preset: unknown key '" + it.key() + "'");
  ExperimentPreset p;
  try {
    p.train_data = dataset_spec_from_json(j.at("train_data").dump());
    p.test_data = dataset_spec_from_json(j.at("test_data").dump());
    p.model = model_config_from_json(j.at("model").dump());
    p.train = train_config_from_json(j.at("train").dump());
    p.alignment_tolerance_px = j.at("alignment_tolerance_px").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("experiment preset: ") + e.what());
  }
  return p;
}

int expected_image_h(const DatasetSpec& d) {
  int h = d.layout.height();
  return d.resolution == Resolution::Half ? h / 2 : h;
}
int expected_image_w(const DatasetSpec& d) {
  int w = d.layout.width();
  return d.resolution == Resolution::Half ? w / 2 : w;
}

int effective_length(const DatasetSpec& d) {
  return d.sequence_length > 0 ? d.sequence_length : d.layout.sequence_length();
}

std::vector<int> all_indices(const LoadedDataset& ds) {
  std::vector<int> idx(ds.manifests.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// Epochs usable for ordering runs: an unconverged run sorts after any
// converged one.
long long effective_epochs(const AblationRow& r) {
  return r.converged ? r.epochs : LLONG_MAX;
}

void vote(std::vector<DirectionCheck>& checks, const std::string& name,
          const std::map<std::string, std::map<uint64_t, AblationRow>>& by_config,
          const std::string& lhs, const std::string& rhs,
          bool (*cmp)(const AblationRow&, const AblationRow&)) {
  DirectionCheck c;
  c.name = name;
  auto li = by_config.find(lhs);
  auto ri = by_config.find(rhs);
  if (li != by_config.end() && ri != by_config.end()) {
    for (const auto& [seed, lrow] : li->second) {
      auto rit = ri->second.find(seed);
      if (rit == ri->second.end()) continue;
      if (!lrow.error.empty() || !rit->second.error.empty()) continue;
      ++c.votes_total;
      if (cmp(lrow, rit->second)) ++c.votes_for;
    }
  }
  c.passed = c.votes_total > 0 && 2 * c.votes_for > c.votes_total;
  checks.push_back(c);
}

}  // namespace

std::string experiment_preset_to_json(const ExperimentPreset& p) {
  return preset_to_json_obj(p).dump(2) + "\n";
}

ExperimentPreset experiment_preset_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("experiment preset: invalid JSON");
  return preset_from_json_obj(j);
}

void validate_experiment_preset(const ExperimentPreset& p) {
  validate_model_config(p.model);
  validate_train_config(p.train);
  p.train_data.layout.validate();
  p.test_data.layout.validate();
  if (p.model.image_h != expected_image_h(p.train_data) ||
      p.model.image_w != expected_image_w(p.train_data))
    throw UsageError("experiment preset: model input " +
                     std::to_string(p.model.image_h) + "x" +
                     std::to_string(p.model.image_w) +
                     " does not match the training layout/resolution " +
                     std::to_string(expected_image_h(p.train_data)) + "x" +
                     std::to_string(expected_image_w(p.train_data)));
  if (expected_image_h(p.test_data) != expected_image_h(p.train_data) ||
      expected_image_w(p.test_data) != expected_image_w(p.train_data))
    throw UsageError("experiment preset: train and test image sizes differ");
  if (!p.train_data.styles.disjoint_seeds(p.test_data.styles))
    throw UsageError("experiment preset: test styles must be held out "
                     "(train/test style seeds overlap)");
  int longest = std::max(effective_length(p.train_data), effective_length(p.test_data));
  if (longest + 1 > p.model.max_decode_len)
    throw UsageError("experiment preset: sequence length " + std::to_string(longest) +
                     " + END exceeds max_decode_len " +
                     std::to_string(p.model.max_decode_len));
  if (!(p.alignment_tolerance_px >= 0))
    throw UsageError("experiment preset: alignment tolerance must be >= 0");
}

std::vector<std::string> config_diff(const std::string& json_a,
                                     const std::string& json_b) {
  json a = json::parse(json_a, nullptr, false);
  json b = json::parse(json_b, nullptr, false);
  if (a.is_discarded() || b.is_discarded())
    throw DataError("config diff: invalid JSON");
  std::map<std::string, std::string> fa, fb;
  flatten_json(a, "", fa);
  flatten_json(b, "", fb);
  std::vector<std::string> out;
  for (const auto& [k, v] : fa) {
    auto it = fb.find(k);
    if (it == fb.end() || it->second != v) out.push_back(k);
  }
  for (const auto& [k, v] : fb)
    if (!fa.count(k)) out.push_back(k);
  std::sort(out.begin(), out.end());
  return out;
}

ModelConfig half_model_config(const ModelConfig& cfg) {
  ModelConfig h = cfg;
  h.image_h = cfg.image_h / 2;
  h.image_w = cfg.image_w / 2;
  validate_model_config(h);  // throws if the feature grid collapses
  return h;
}

std::vector<std::pair<std::string, ExperimentPreset>> ablation_variants(
    const ExperimentPreset& reference) {
  std::vector<std::pair<std::string, ExperimentPreset>> out;
  out.emplace_back("a", reference);

  ExperimentPreset b = reference;
  b.train.teacher_forcing = false;
  out.emplace_back("b", b);

  ExperimentPreset c = reference;
  c.train_data.size = std::max(
      1, static_cast<int>(std::llround(0.4 * reference.train_data.size)));
  out.emplace_back("c", c);

  ExperimentPreset d = c;
  d.train_data.source.kind = SourceKind::UniformRandom;
  out.emplace_back("d", d);

  ExperimentPreset e = reference;
  e.train_data.resolution = Resolution::Half;
  e.test_data.resolution = Resolution::Half;
  e.model = half_model_config(reference.model);
  out.emplace_back("e", e);

  ExperimentPreset f = e;
  f.train.teacher_forcing = false;
  out.emplace_back("f", f);
  return out;
}

std::string ablation_suite_to_json(const AblationSuite& suite) {
  json j;
  j["reference"] = preset_to_json_obj(suite.reference);
  j["vocab"] = suite.vocab.to_text();
  j["seeds"] = suite.seeds;
  j["out_dir"] = suite.out_dir;
  return j.dump(2) + "\n";
}

AblationSuite ablation_suite_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("ablation suite: invalid JSON");
  std::set<std::string> known = {"reference", "vocab", "seeds", "out_dir"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw DataError("ablation suite: unknown key '" + it.key() + "'");
  AblationSuite s;
  try {
    s.reference = preset_from_json_obj(j.at("reference"));
    s.vocab = Vocabulary::from_text(j.at("vocab").get<std::string>());
    s.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    s.out_dir = j.at("out_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("ablation suite: ") + e.what());
  }
  return s;
}

AblationRow run_one_experiment(const ExperimentPreset& preset, const Vocabulary& vocab,
                               uint64_t seed, const std::string& run_dir,
                               const LoadedDataset& train_ds,
                               const LoadedDataset& test_ds) {
  if (preset.model.vocab_size != vocab.size())
    throw DataError("experiment: model vocab_size " +
                    std::to_string(preset.model.vocab_size) +
                    " != vocabulary size " + std::to_string(vocab.size()));
  ensure_dir(run_dir);
  Model<float> model(preset.model, vocab.content_hash(), seed);
  TrainConfig tc = preset.train;
  tc.seed = seed;

  FitResult fr = fit(model, train_ds, tc);
  write_curves_csv(path_join(run_dir, "curves.csv"), fr.log);
  write_text_file(path_join(run_dir, "metadata.txt"),
                  run_metadata(tc, model, dataset_spec_to_json(preset.train_data)));
  save_checkpoint(model, path_join(run_dir, "checkpoint.bin"));

  EvalResult ev =
      evaluate_model(model, test_ds, all_indices(test_ds), preset.alignment_tolerance_px);
  // Attention maps for the first held-out sample, as a visual artifact.
  auto rec = model.forward_free_running(ink_input<float>(test_ds.images[0]),
                                        test_ds.sequence_length + 1);
  if (rec.attention.size() > 0)
    export_attention_maps(rec.attention, model.geom(), preset.model.image_h,
                          preset.model.image_w, path_join(run_dir, "attn"));

  AblationRow row;
  row.seed = seed;
  row.converged = fr.converged;
  row.epochs = static_cast<int>(fr.log.size());
  row.final_val_gap = std::nan("");
  row.max_val_gap = std::nan("");
  for (const EpochStats& s : fr.log) {
    if (!std::isfinite(s.val_loss)) continue;
    double gap = s.val_loss - s.train_loss;
    if (!std::isfinite(row.max_val_gap) || gap > row.max_val_gap)
      row.max_val_gap = gap;
    row.final_val_gap = gap;
  }
  row.test_acc = ev.metrics.position_accuracy;
  row.hit_rate = ev.alignment.hit_rate;
  row.entropy = ev.alignment.mean_entropy;
  return row;
}

AblationTable run_ablation(const AblationSuite& suite) {
  if (suite.out_dir.empty()) throw UsageError("ablation: out_dir is required");
  if (suite.seeds.empty()) throw UsageError("ablation: at least one seed");
  validate_experiment_preset(suite.reference);
  ensure_dir(suite.out_dir);
  write_text_file(path_join(suite.out_dir, "suite.json"),
                  ablation_suite_to_json(suite));

  AblationTable table;
  for (const auto& [name, preset] : ablation_variants(suite.reference)) {
    std::string cdir = path_join(suite.out_dir, name);
    std::string data_error;
    LoadedDataset train_ds, test_ds;
    try {
      std::string tr = path_join(cdir, "data_train");
      std::string te = path_join(cdir, "data_test");
      generate_dataset(preset.train_data, suite.vocab, tr);
      generate_dataset(preset.test_data, suite.vocab, te);
      train_ds = load_dataset(tr);
      test_ds = load_dataset(te);
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    for (uint64_t seed : suite.seeds) {
      AblationRow row;
      row.config = name;
      row.seed = seed;
      if (!data_error.empty()) {
        row.error = data_error;
      } else {
        try {
          row = run_one_experiment(preset, suite.vocab, seed,
                                   path_join(cdir, "seed_" + std::to_string(seed)),
                                   train_ds, test_ds);
          row.config = name;
          row.seed = seed;
        } catch (const std::exception& e) {
          row.error = e.what();
        }
      }
      table.rows.push_back(std::move(row));
    }
  }
  write_text_file(path_join(suite.out_dir, "ablation.csv"), ablation_csv(table));
  return table;
}

std::string ablation_csv(const AblationTable& table) {
  std::string out =
      "config,seed,converged,epochs,final_val_gap,max_val_gap,test_acc,hit_rate,"
      "entropy,error\n";
  for (const AblationRow& r : table.rows) {
    out += r.config;
    out += ',' + std::to_string(r.seed);
    out += ',' + std::string(r.converged ? "1" : "0");
    out += ',' + std::to_string(r.epochs);
    out += ',' + fmt_double(r.final_val_gap);
    out += ',' + fmt_double(r.max_val_gap);
    out += ',' + fmt_double(r.test_acc);
    out += ',' + fmt_double(r.hit_rate);
    out += ',' + fmt_double(r.entropy);
    out += ',' + sanitize_csv(r.error);
    out += '\n';
  }
  return out;
}

AblationTable read_ablation_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) ||
      line != "config,seed,converged,epochs,final_val_gap,max_val_gap,test_acc,"
              "hit_rate,entropy,error")
    throw DataError("ablation csv: bad header in " + path);
  AblationTable table;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    while (f.size() < 10) f.push_back("");
    if (f.size() != 10) throw DataError("ablation csv: bad row in " + path);
    AblationRow r;
    try {
      r.config = f[0];
      r.seed = std::stoull(f[1]);
      r.converged = f[2] == "1";
      r.epochs = std::stoi(f[3]);
      r.final_val_gap = std::stod(f[4]);
      r.max_val_gap = std::stod(f[5]);
      r.test_acc = std::stod(f[6]);
      r.hit_rate = std::stod(f[7]);
      r.entropy = std::stod(f[8]);
      r.error = f[9];
    } catch (const std::exception&) {
      throw DataError("ablation csv: bad number in " + path);
    }
    table.rows.push_back(std::move(r));
  }
  return table;
}

std::vector<DirectionCheck> ablation_direction_checks(const AblationTable& table) {
  std::map<std::string, std::map<uint64_t, AblationRow>> by_config;
  for (const AblationRow& r : table.rows) by_config[r.config][r.seed] = r;

  std::vector<DirectionCheck> checks;
  vote(checks, "b-converges-slower-than-a", by_config, "b", "a",
       [](const AblationRow& l, const AblationRow& r) {
         return effective_epochs(l) > effective_epochs(r);
       });
  vote(checks, "c-gap-exceeds-a", by_config, "c", "a",
       [](const AblationRow& l, const AblationRow& r) {
         return l.max_val_gap > r.max_val_gap;
       });
  vote(checks, "c-hit-rate-below-a", by_config, "c", "a",
       [](const AblationRow& l, const AblationRow& r) {
         return l.hit_rate < r.hit_rate;
       });
  vote(checks, "d-hit-rate-above-c", by_config, "d", "c",
       [](const AblationRow& l, const AblationRow& r) {
         return l.hit_rate > r.hit_rate;
       });
  vote(checks, "d-acc-above-c", by_config, "d", "c",
       [](const AblationRow& l, const AblationRow& r) {
         return l.test_acc > r.test_acc;
       });
  vote(checks, "e-acc-below-a", by_config, "e", "a",
       [](const AblationRow& l, const AblationRow& r) {
         return l.test_acc < r.test_acc;
       });
  vote(checks, "f-converges-slower-than-e", by_config, "f", "e",
       [](const AblationRow& l, const AblationRow& r) {
         return effective_epochs(l) > effective_epochs(r);
       });
  vote(checks, "f-hit-rate-above-e", by_config, "f", "e",
       [](const AblationRow& l, const AblationRow& r) {
         return l.hit_rate > r.hit_rate;
       });
  return checks;
}

std::string sweep_spec_to_json(const SweepSpec& spec) {
  json j;
  j["base"] = preset_to_json_obj(spec.base);
  j["vocab"] = spec.vocab.to_text();
  j["lengths"] = spec.lengths;
  j["sizes"] = spec.sizes;
  j["seeds"] = spec.seeds;
  j["out_dir"] = spec.out_dir;
  return j.dump(2) + "\n";
}

SweepSpec sweep_spec_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("sweep spec: invalid JSON");
  std::set<std::string> known = {"base", "vocab", "lengths", "sizes", "seeds",
                                 "out_dir"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw DataError("sweep spec: unknown key '" + it.key() + "'");
  SweepSpec s;
  try {
    s.base = preset_from_json_obj(j.at("base"));
    s.vocab = Vocabulary::from_text(j.at("vocab").get<std::string>());
    s.lengths = j.at("lengths").get<std::vector<int>>();
    s.sizes = j.at("sizes").get<std::vector<int>>();
    s.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    s.out_dir = j.at("out_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("sweep spec: ") + e.what());
  }
  return s;
}

void validate_sweep_spec(const SweepSpec& spec) {
  validate_experiment_preset(spec.base);
  if (spec.lengths.empty()) throw UsageError("sweep: lengths must be non-empty");
  if (spec.sizes.empty()) throw UsageError("sweep: sizes must be non-empty");
  if (spec.seeds.empty()) throw UsageError("sweep: seeds must be non-empty");
  int cells = spec.base.train_data.layout.sequence_length();
  for (int l : spec.lengths)
    if (l < 1 || l > cells)
      throw UsageError("sweep: length " + std::to_string(l) +
                       " outside [1, " + std::to_string(cells) +
                       "] supported by the layout");
  for (int s : spec.sizes)
    if (s < 2) throw UsageError("sweep: sizes must be >= 2 (train/val split)");
}

std::vector<SweepRow> run_length_sweep(const SweepSpec& spec) {
  validate_sweep_spec(spec);
  if (spec.out_dir.empty()) throw UsageError("sweep: out_dir is required");
  ensure_dir(spec.out_dir);
  write_text_file(path_join(spec.out_dir, "sweep.json"), sweep_spec_to_json(spec));

  std::vector<SweepRow> rows;
  for (int length : spec.lengths) {
    // The held-out set is per length; sizes share it.
    ExperimentPreset lp = spec.base;
    lp.train_data.sequence_length = length;
    lp.test_data.sequence_length = length;
    std::string ldir = path_join(spec.out_dir, "len" + std::to_string(length));
    std::string test_error;
    LoadedDataset test_ds;
    try {
      generate_dataset(lp.test_data, spec.vocab, path_join(ldir, "data_test"));
      test_ds = load_dataset(path_join(ldir, "data_test"));
    } catch (const std::exception& e) {
      test_error = e.what();
    }
    for (int size : spec.sizes) {
      ExperimentPreset sp = lp;
      sp.train_data.size = size;
      std::string sdir = path_join(ldir, "size" + std::to_string(size));
      std::string train_error = test_error;
      LoadedDataset train_ds;
      if (train_error.empty()) {
        try {
          generate_dataset(sp.train_data, spec.vocab, path_join(sdir, "data_train"));
          train_ds = load_dataset(path_join(sdir, "data_train"));
        } catch (const std::exception& e) {
          train_error = e.what();
        }
      }
      for (uint64_t seed : spec.seeds) {
        SweepRow row;
        row.length = length;
        row.size = size;
        row.seed = seed;
        if (!train_error.empty()) {
          row.error = train_error;
          rows.push_back(std::move(row));
          continue;
        }
        try {
          std::string rdir = path_join(sdir, "seed_" + std::to_string(seed));
          ensure_dir(rdir);
          Model<float> model(sp.model, spec.vocab.content_hash(), seed);
          TrainConfig tc = sp.train;
          tc.seed = seed;
          FitResult fr = fit(model, train_ds, tc);
          write_curves_csv(path_join(rdir, "curves.csv"), fr.log);
          write_text_file(
              path_join(rdir, "metadata.txt"),
              run_metadata(tc, model, dataset_spec_to_json(sp.train_data)));
          row.train_acc = fr.log.back().train_acc;
          row.val_acc = fr.log.back().val_acc;
          row.test_acc =
              free_running_position_accuracy(model, test_ds, all_indices(test_ds));
        } catch (const std::exception& e) {
          row.error = e.what();
        }
        rows.push_back(std::move(row));
      }
    }
  }
  write_text_file(path_join(spec.out_dir, "sweep.csv"), sweep_csv(rows));
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "length,size,seed,train_acc,val_acc,test_acc,error\n";
  for (const SweepRow& r : rows) {
    out += std::to_string(r.length);
    out += ',' + std::to_string(r.size);
    out += ',' + std::to_string(r.seed);
    out += ',' + fmt_double(r.train_acc);
    out += ',' + fmt_double(r.val_acc);
    out += ',' + fmt_double(r.test_acc);
    out += ',' + sanitize_csv(r.error);
    out += '\n';
  }
  return out;
}

// ---- decoder-only predictability baseline ----

namespace {

void validate_baseline_config(const BaselineConfig& cfg) {
  if (cfg.vocab_size < Vocabulary::kNumSpecials + 1)
    throw UsageError("baseline: vocab_size must exceed the special codes");
  if (cfg.embed_dim < 1 || cfg.hidden_dim < 1)
    throw UsageError("baseline: dimensions must be >= 1");
  if (!(cfg.learning_rate >= 0) || !std::isfinite(cfg.learning_rate))
    throw UsageError("baseline: learning_rate must be finite and >= 0");
  if (cfg.epochs < 1 || cfg.batch_size < 1)
    throw UsageError("baseline: epochs and batch_size must be >= 1");
}

}  // namespace

SequenceBaseline::SequenceBaseline(const BaselineConfig& cfg) : cfg_(cfg) {
  validate_baseline_config(cfg_);
  Rng rng(derive_seed(cfg_.seed, kStreamModelInit, 1));
  int v = cfg_.vocab_size, e = cfg_.embed_dim, h = cfg_.hidden_dim;
  auto add = [&](const std::string& name, std::vector<int> shape, int fi, int fo) {
    params_.emplace_back(name, glorot_uniform<float>(std::move(shape), fi, fo, rng));
  };
  auto add_zero = [&](const std::string& name, std::vector<int> shape) {
    params_.emplace_back(name, Tensor<float>(std::move(shape)));
  };
  add("embed", {v, e}, v, e);
  add("wz", {e, h}, e, h);
  add("uz", {h, h}, h, h);
  add_zero("bz", {1, h});
  add("wr", {e, h}, e, h);
  add("ur", {h, h}, h, h);
  add_zero("br", {1, h});
  add("wh", {e, h}, e, h);
  add("uh", {h, h}, h, h);
  add_zero("bh", {1, h});
  add("out_w", {h, v}, h, v);
  add_zero("out_b", {1, v});
}

// One recurrent step: embeds prev_code, updates the GRU state, and returns the
// logits var; *next_state receives the new state var.
int SequenceBaseline::teacher_step(Tape<float>& tape, const std::vector<int>& leaves,
                                   int prev_code, int state, int* next_state) const {
  enum { kEmbed, kWz, kUz, kBz, kWr, kUr, kBr, kWh, kUh, kBh, kOutW, kOutB };
  if (prev_code < 0 || prev_code >= cfg_.vocab_size)
    throw DataError("baseline: code " + std::to_string(prev_code) +
                    " outside the vocabulary");
  int x = tape.row(leaves[kEmbed], prev_code);
  int z = tape.sigmoid(tape.add(
      tape.add(tape.matmul(x, leaves[kWz]), tape.matmul(state, leaves[kUz])),
      leaves[kBz]));
  int r = tape.sigmoid(tape.add(
      tape.add(tape.matmul(x, leaves[kWr]), tape.matmul(state, leaves[kUr])),
      leaves[kBr]));
  int cand = tape.tanh_op(tape.add(
      tape.add(tape.matmul(x, leaves[kWh]),
               tape.matmul(tape.mul(r, state), leaves[kUh])),
      leaves[kBh]));
  *next_state =
      tape.add(tape.mul(tape.one_minus(z), state), tape.mul(z, cand));
  return tape.add(tape.matmul(*next_state, leaves[kOutW]), leaves[kOutB]);
}

void SequenceBaseline::train(const std::vector<std::vector<int>>& sequences) {
  if (sequences.empty()) throw UsageError("baseline: no training sequences");
  std::vector<Parameter<float>*> params;
  for (auto& p : params_) params.push_back(&p);
  AdamConfig<float> adam;
  adam.lr = static_cast<float>(cfg_.learning_rate);

  std::vector<int> order(sequences.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    Rng shuffle_rng(
        derive_seed(cfg_.seed, kStreamShuffle, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    size_t n = order.size();
    for (size_t start = 0; start < n; start += static_cast<size_t>(cfg_.batch_size)) {
      size_t stop = std::min(n, start + static_cast<size_t>(cfg_.batch_size));
      zero_grads(params);
      size_t positions = 0;
      for (size_t k = start; k < stop; ++k) {
        const std::vector<int>& seq = sequences[static_cast<size_t>(order[k])];
        std::vector<int> targets = seq;
        targets.push_back(Vocabulary::kEnd);
        Tape<float> tape;
        std::vector<int> leaves;
        for (auto& p : params_) leaves.push_back(tape.param(p));
        int state = tape.leaf(Tensor<float>({1, cfg_.hidden_dim}), false);
        std::vector<int> logit_rows;
        int prev = Vocabulary::kStart;
        for (size_t t = 0; t < targets.size(); ++t) {
          logit_rows.push_back(teacher_step(tape, leaves, prev, state, &state));
          prev = targets[t];
        }
        std::vector<uint8_t> mask(targets.size(), 1);
        int loss = tape.masked_cross_entropy_with_logits(
            tape.stack_rows(logit_rows), targets, mask, Reduction::Sum);
        positions += targets.size();
        tape.backward(loss);
      }
      auto scale = static_cast<float>(1.0 / static_cast<double>(positions));
      for (Parameter<float>* p : params)
        for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= scale;
      clip_grad_global_norm(params, 5.0);
      adam_step(params, adam, ++adam_steps_);
    }
  }
}

std::vector<int> SequenceBaseline::generate(int length) {
  if (length < 1) throw UsageError("baseline: generation length must be >= 1");
  Tape<float> tape;
  std::vector<int> leaves;
  for (auto& p : params_) leaves.push_back(tape.param(p));
  int state = tape.leaf(Tensor<float>({1, cfg_.hidden_dim}), false);
  std::vector<int> out;
  int prev = Vocabulary::kStart;
  for (int t = 0; t < length; ++t) {
    int logits = teacher_step(tape, leaves, prev, state, &state);
    int code = argmax_row(tape.value(logits), 0);
    if (code == Vocabulary::kEnd) break;
    out.push_back(code);
    prev = code;
  }
  return out;
}

double SequenceBaseline::position_accuracy(
    const std::vector<std::vector<int>>& sequences) {
  if (sequences.empty()) throw UsageError("baseline: no evaluation sequences");
  size_t longest = 0;
  for (const auto& s : sequences) longest = std::max(longest, s.size());
  if (longest == 0) throw UsageError("baseline: empty evaluation sequences");
  std::vector<int> gen = generate(static_cast<int>(longest));
  size_t correct = 0, total = 0;
  for (const auto& seq : sequences) {
    for (size_t i = 0; i < seq.size(); ++i) {
      ++total;
      if (i < gen.size() && gen[i] == seq[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

BaselineReport run_predictability_baseline(
    const std::vector<std::vector<int>>& train_sequences,
    const std::vector<std::vector<int>>& eval_sequences, const BaselineConfig& cfg) {
  SequenceBaseline lm(cfg);
  lm.train(train_sequences);
  BaselineReport report;
  report.accuracy = lm.position_accuracy(eval_sequences);
  report.chance = 1.0 / static_cast<double>(cfg.vocab_size - Vocabulary::kNumSpecials);
  for (const auto& s : eval_sequences)
    report.eval_positions += static_cast<int>(s.size());
  return report;
}

std::vector<std::vector<int>> dataset_code_sequences(const LoadedDataset& ds) {
  std::vector<std::vector<int>> out;
  out.reserve(ds.manifests.size());
  for (const SampleManifest& m : ds.manifests) out.push_back(m.codes);
  return out;
}

}  // namespace csr
