#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "experiments.hpp"

using namespace csr;

namespace {

// Four move tokens -> codes 4..7 on top of the 4 special codes.
Vocabulary quad_vocab() {
  std::vector<GameRecord> corpus(1);
  corpus[0].moves.push_back({"e4", "en"});
  corpus[0].moves.push_back({"e5", "en"});
  corpus[0].moves.push_back({"d4", "en"});
  corpus[0].moves.push_back({"d5", "en"});
  return build_vocabulary(corpus, 4);
}

// 2-row sheet, 31x56 px: big enough for two conv+pool stages at full and
// half resolution, small enough to train in milliseconds.
SheetLayout tiny_layout() {
  SheetLayout l;
  l.rows = 2;
  l.cell_w = 20;
  l.cell_h = 12;
  l.number_col_width = 8;
  l.grid_thickness = 1;
  l.margin_left = 2;
  l.margin_right = 2;
  l.margin_top = 2;
  l.margin_bottom = 2;
  return l;
}

ModelConfig tiny_model_config() {
  SheetLayout l = tiny_layout();
  ModelConfig c;
  c.image_h = l.height();
  c.image_w = l.width();
  c.backbone = {{2, 2, 2}, {4, 2, 2}};
  c.hidden_dim = 8;
  c.attention_dim = 6;
  c.embed_dim = 4;
  c.vocab_size = 8;
  c.max_decode_len = 6;
  c.dropout_rate = 0.0;
  return c;
}

DatasetSpec tiny_data(int size, uint64_t seed, bool held_out_styles) {
  DatasetSpec d;
  d.size = size;
  d.seed = seed;
  d.layout = tiny_layout();
  d.resolution = Resolution::Full;
  d.glyphs_per_token = 2;
  d.sequence_length = 0;  // all four cells
  d.source.kind = SourceKind::TemplateWithMutation;
  d.source.templates = {{4, 5, 6, 7}, {5, 4, 7, 6}};
  d.source.mutation_prob = 0.2;
  d.source.vocab_size = 8;
  d.styles.style_seeds =
      held_out_styles ? std::vector<uint64_t>{21, 22} : std::vector<uint64_t>{1, 2, 3};
  return d;
}

ExperimentPreset tiny_preset() {
  ExperimentPreset p;
  p.train_data = tiny_data(10, 500, false);
  p.test_data = tiny_data(4, 900, true);
  p.model = tiny_model_config();
  p.train.batch_size = 4;
  p.train.max_epochs = 2;
  p.train.dropout = 0.0;
  p.train.seed = 7;
  return p;
}

bool exists(const std::string& p) { return std::filesystem::exists(p); }

AblationRow mk(const std::string& cfg, uint64_t seed, bool conv, int epochs,
               double gap, double acc, double hit, const std::string& err = "") {
  AblationRow r;
  r.config = cfg;
  r.seed = seed;
  r.converged = conv;
  r.epochs = epochs;
  r.final_val_gap = gap;
  r.max_val_gap = gap;
  r.test_acc = acc;
  r.hit_rate = hit;
  r.entropy = 1.0;
  r.error = err;
  return r;
}

const DirectionCheck& find_check(const std::vector<DirectionCheck>& checks,
                                 const std::string& name) {
  for (const DirectionCheck& c : checks)
    if (c.name == name) return c;
  REQUIRE(false);
  return checks.front();
}

}  // namespace

TEST_CASE("config diff flattens to dotted keys") {
  CHECK(config_diff(R"({"a":1,"b":{"c":2}})", R"({"a":1,"b":{"c":2}})").empty());
  auto d = config_diff(R"({"a":{"b":1,"c":2},"d":[1,2]})",
                       R"({"a":{"b":9},"d":[1,3]})");
  CHECK(d == std::vector<std::string>{"a.b", "a.c", "d"});
  auto one_sided = config_diff(R"({"x":{"y":1}})", R"({})");
  CHECK(one_sided == std::vector<std::string>{"x.y"});
  CHECK_THROWS_AS(config_diff("{", "{}"), DataError);
}

TEST_CASE("ablation variants change exactly the stated factors") {
  ExperimentPreset ref = tiny_preset();
  auto vars = ablation_variants(ref);
  REQUIRE(vars.size() == 6);
  const char* names[] = {"a", "b", "c", "d", "e", "f"};
  for (int i = 0; i < 6; ++i) CHECK(vars[i].first == names[i]);

  std::string ref_json = experiment_preset_to_json(ref);
  auto diff = [&](int i) {
    return config_diff(ref_json, experiment_preset_to_json(vars[i].second));
  };
  CHECK(diff(0).empty());
  CHECK(diff(1) == std::vector<std::string>{"train.teacher_forcing"});
  CHECK(diff(2) == std::vector<std::string>{"train_data.size"});
  CHECK(diff(3) ==
        std::vector<std::string>{"train_data.size", "train_data.source.kind"});
  CHECK(diff(4) == std::vector<std::string>{"model.image_h", "model.image_w",
                                            "test_data.resolution",
                                            "train_data.resolution"});
  CHECK(diff(5) == std::vector<std::string>{"model.image_h", "model.image_w",
                                            "test_data.resolution",
                                            "train.teacher_forcing",
                                            "train_data.resolution"});

  CHECK(vars[2].second.train_data.size == 4);  // 40% of 10
  CHECK(vars[3].second.train_data.source.kind == SourceKind::UniformRandom);
  CHECK(vars[4].second.model.image_h == ref.model.image_h / 2);
  for (auto& [name, v] : vars) {
    INFO("variant ", name);
    CHECK_NOTHROW(validate_experiment_preset(v));
  }
}

TEST_CASE("halving the model input can invalidate the backbone") {
  ModelConfig ok = tiny_model_config();
  ModelConfig half = half_model_config(ok);
  CHECK(half.image_h == ok.image_h / 2);
  CHECK(half.image_w == ok.image_w / 2);
  CHECK_NOTHROW(validate_model_config(half));

  ModelConfig small = ok;
  small.image_h = 12;
  small.image_w = 12;
  CHECK_NOTHROW(validate_model_config(small));  // 1x1 grid, barely valid
  CHECK_THROWS_AS(half_model_config(small), UsageError);
}

TEST_CASE("experiment preset json round trips and rejects unknown keys") {
  ExperimentPreset p = tiny_preset();
  p.alignment_tolerance_px = 3.5;
  std::string j1 = experiment_preset_to_json(p);
  ExperimentPreset q = experiment_preset_from_json(j1);
  CHECK(experiment_preset_to_json(q) == j1);
  CHECK(q.alignment_tolerance_px == 3.5);
  CHECK(q.train_data.source.templates == p.train_data.source.templates);

  std::string typo = j1;
  typo.insert(typo.find('{') + 1, "\"typo\": 1,");
  CHECK_THROWS_AS(experiment_preset_from_json(typo), DataError);

  // Unknown keys buried in a sub-config are rejected by the sub-parser.
  std::string nested = j1;
  nested.insert(nested.find("\"size\""), "\"bogus\": 1, ");
  CHECK_THROWS_AS(experiment_preset_from_json(nested), DataError);
  CHECK_THROWS_AS(experiment_preset_from_json("not json"), DataError);
}

TEST_CASE("suite and sweep specs round trip through json") {
  AblationSuite s;
  s.reference = tiny_preset();
  s.vocab = quad_vocab();
  s.seeds = {1, 2};
  s.out_dir = "somewhere";
  std::string j = ablation_suite_to_json(s);
  AblationSuite t = ablation_suite_from_json(j);
  CHECK(ablation_suite_to_json(t) == j);
  CHECK(t.vocab.size() == 8);
  CHECK(t.seeds == std::vector<uint64_t>{1, 2});
  CHECK_THROWS_AS(ablation_suite_from_json(R"({"seeds":[1]})"), DataError);

  SweepSpec w;
  w.base = tiny_preset();
  w.vocab = quad_vocab();
  w.lengths = {2, 4};
  w.sizes = {6};
  w.seeds = {1};
  w.out_dir = "elsewhere";
  std::string wj = sweep_spec_to_json(w);
  SweepSpec w2 = sweep_spec_from_json(wj);
  CHECK(sweep_spec_to_json(w2) == wj);
  std::string extra = wj;
  extra.insert(extra.find('{') + 1, "\"surprise\": [],");
  CHECK_THROWS_AS(sweep_spec_from_json(extra), DataError);
}

TEST_CASE("preset validation catches held-out and geometry violations") {
  CHECK_NOTHROW(validate_experiment_preset(tiny_preset()));

  ExperimentPreset overlap = tiny_preset();
  overlap.test_data.styles.style_seeds = {2, 21};  // 2 is a training style
  CHECK_THROWS_AS(validate_experiment_preset(overlap), UsageError);

  ExperimentPreset wrong_dims = tiny_preset();
  wrong_dims.model.image_h += 1;
  CHECK_THROWS_AS(validate_experiment_preset(wrong_dims), UsageError);

  ExperimentPreset short_decode = tiny_preset();
  short_decode.model.max_decode_len = 4;  // needs 4 moves + END
  CHECK_THROWS_AS(validate_experiment_preset(short_decode), UsageError);

  ExperimentPreset res_mismatch = tiny_preset();
  res_mismatch.test_data.resolution = Resolution::Half;
  CHECK_THROWS_AS(validate_experiment_preset(res_mismatch), UsageError);

  ExperimentPreset bad_tol = tiny_preset();
  bad_tol.alignment_tolerance_px = -1.0;
  CHECK_THROWS_AS(validate_experiment_preset(bad_tol), UsageError);
}

TEST_CASE("sweep validation enforces layout capacity") {
  SweepSpec w;
  w.base = tiny_preset();
  w.vocab = quad_vocab();
  w.lengths = {2, 4};
  w.sizes = {6};
  w.seeds = {1};
  CHECK_NOTHROW(validate_sweep_spec(w));

  SweepSpec too_long = w;
  too_long.lengths = {5};  // the 2-row sheet holds 4 moves
  CHECK_THROWS_AS(validate_sweep_spec(too_long), UsageError);
  SweepSpec zero_len = w;
  zero_len.lengths = {0};
  CHECK_THROWS_AS(validate_sweep_spec(zero_len), UsageError);
  SweepSpec tiny_size = w;
  tiny_size.sizes = {1};
  CHECK_THROWS_AS(validate_sweep_spec(tiny_size), UsageError);
  SweepSpec no_sizes = w;
  no_sizes.sizes = {};
  CHECK_THROWS_AS(validate_sweep_spec(no_sizes), UsageError);
}

TEST_CASE("ablation csv round trips including failure rows") {
  AblationTable t;
  t.rows.push_back(mk("a", 1, true, 10, 0.375, 0.875, 0.5));
  t.rows.push_back(mk("b", 2, false, 50, std::numeric_limits<double>::quiet_NaN(),
                      0.25, 0.125, "bad, thing\nhere"));
  std::string csv = ablation_csv(t);
  std::filesystem::create_directories("exp_tmp");
  write_text_file("exp_tmp/roundtrip.csv", csv);
  AblationTable rt = read_ablation_csv("exp_tmp/roundtrip.csv");
  REQUIRE(rt.rows.size() == 2);
  CHECK(rt.rows[0].config == "a");
  CHECK(rt.rows[0].converged);
  CHECK(rt.rows[0].epochs == 10);
  CHECK(rt.rows[0].final_val_gap == 0.375);
  CHECK(rt.rows[0].test_acc == 0.875);
  CHECK(rt.rows[0].error.empty());
  CHECK(rt.rows[1].seed == 2);
  CHECK_FALSE(rt.rows[1].converged);
  CHECK(std::isnan(rt.rows[1].final_val_gap));
  CHECK(rt.rows[1].hit_rate == 0.125);
  CHECK(rt.rows[1].error == "bad; thing here");  // delimiters sanitized
  CHECK(ablation_csv(rt) == csv);
  write_text_file("exp_tmp/badheader.csv", "config,seed\n");
  CHECK_THROWS_AS(read_ablation_csv("exp_tmp/badheader.csv"), DataError);
}

TEST_CASE("direction checks vote by per-seed majority") {
  AblationTable t;
  for (uint64_t s : {1, 2, 3})
    t.rows.push_back(mk("a", s, true, s == 2 ? 12 : (s == 3 ? 11 : 10), 0.10, 0.90, 0.80));
  t.rows.push_back(mk("b", 1, true, 20, 0.1, 0.8, 0.8));
  t.rows.push_back(mk("b", 2, true, 15, 0.1, 0.8, 0.8));
  t.rows.push_back(mk("b", 3, true, 1, 0.1, 0.8, 0.8, "boom"));
  t.rows.push_back(mk("c", 1, true, 10, 0.50, 0.70, 0.50));
  t.rows.push_back(mk("c", 2, true, 10, 0.50, 0.70, 0.50));
  t.rows.push_back(mk("c", 3, true, 10, 0.05, 0.70, 0.90));
  t.rows.push_back(mk("d", 1, true, 10, 0.40, 0.75, 0.60));
  t.rows.push_back(mk("d", 2, true, 10, 0.40, 0.65, 0.60));
  t.rows.push_back(mk("d", 3, true, 10, 0.40, 0.72, 0.20));
  t.rows.push_back(mk("e", 1, true, 11, 0.10, 0.80, 0.70));
  t.rows.push_back(mk("e", 2, true, 11, 0.10, 0.80, 0.70));
  t.rows.push_back(mk("e", 3, true, 11, 0.10, 0.95, 0.70));
  t.rows.push_back(mk("f", 1, false, 2, 0.10, 0.50, 0.75));
  t.rows.push_back(mk("f", 2, false, 2, 0.10, 0.50, 0.75));
  t.rows.push_back(mk("f", 3, false, 2, 0.10, 0.50, 0.60));

  auto checks = ablation_direction_checks(t);
  REQUIRE(checks.size() == 8);
  for (const DirectionCheck& c : checks) {
    INFO(c.name, " ", c.votes_for, "/", c.votes_total);
    CHECK(c.passed);
  }
  const DirectionCheck& b = find_check(checks, "b-converges-slower-than-a");
  CHECK(b.votes_total == 2);  // the errored seed is excluded
  CHECK(b.votes_for == 2);
  CHECK(find_check(checks, "c-gap-exceeds-a").votes_for == 2);
  CHECK(find_check(checks, "f-converges-slower-than-e").votes_for == 3);

  // A 1-1 split is not a majority, and a missing config cannot pass.
  AblationTable tie;
  tie.rows.push_back(mk("a", 1, true, 10, 0.1, 0.9, 0.8));
  tie.rows.push_back(mk("a", 2, true, 10, 0.1, 0.9, 0.8));
  tie.rows.push_back(mk("b", 1, true, 20, 0.1, 0.9, 0.8));
  tie.rows.push_back(mk("b", 2, true, 5, 0.1, 0.9, 0.8));
  auto tie_checks = ablation_direction_checks(tie);
  const DirectionCheck& tb = find_check(tie_checks, "b-converges-slower-than-a");
  CHECK(tb.votes_total == 2);
  CHECK(tb.votes_for == 1);
  CHECK_FALSE(tb.passed);
  const DirectionCheck& missing = find_check(tie_checks, "e-acc-below-a");
  CHECK(missing.votes_total == 0);
  CHECK_FALSE(missing.passed);

  // Two unconverged runs tie on effective epochs: no "slower" vote.
  AblationTable both;
  both.rows.push_back(mk("a", 1, false, 30, 0.1, 0.9, 0.8));
  both.rows.push_back(mk("b", 1, false, 30, 0.1, 0.9, 0.8));
  const DirectionCheck& ub =
      find_check(ablation_direction_checks(both), "b-converges-slower-than-a");
  CHECK(ub.votes_total == 1);
  CHECK(ub.votes_for == 0);
}

TEST_CASE("length sweep trains every cell and reproduces its csv") {
  SweepSpec w;
  w.base = tiny_preset();
  w.vocab = quad_vocab();
  w.lengths = {2, 4};
  w.sizes = {6};
  w.seeds = {1};
  w.out_dir = "exp_tmp/sweep_run1";
  auto rows = run_length_sweep(w);
  REQUIRE(rows.size() == 2);
  for (const SweepRow& r : rows) {
    INFO("length ", r.length, " size ", r.size, ": ", r.error);
    CHECK(r.error.empty());
    CHECK(r.size == 6);
    CHECK(r.seed == 1);
    CHECK(r.train_acc >= 0.0);
    CHECK(r.train_acc <= 1.0);
    CHECK(r.test_acc >= 0.0);
    CHECK(r.test_acc <= 1.0);
  }
  CHECK(rows[0].length == 2);
  CHECK(rows[1].length == 4);
  CHECK(exists("exp_tmp/sweep_run1/sweep.csv"));
  CHECK(exists("exp_tmp/sweep_run1/sweep.json"));
  CHECK(exists("exp_tmp/sweep_run1/len2/data_test/manifest.jsonl"));
  CHECK(exists("exp_tmp/sweep_run1/len2/size6/seed_1/curves.csv"));
  CHECK(read_text_file("exp_tmp/sweep_run1/sweep.csv") == sweep_csv(rows));

  // The generated manifests really carry the shortened sequences.
  LoadedDataset short_ds = load_dataset("exp_tmp/sweep_run1/len2/size6/data_train");
  CHECK(short_ds.sequence_length == 2);

  SweepSpec w2 = w;
  w2.out_dir = "exp_tmp/sweep_run2";
  auto rows2 = run_length_sweep(w2);
  CHECK(sweep_csv(rows2) == sweep_csv(rows));  // bit-identical rerun
}

TEST_CASE("ablation suite runs all configs and reproduces its table") {
  AblationSuite s;
  s.reference = tiny_preset();
  s.vocab = quad_vocab();
  s.seeds = {1};
  s.out_dir = "exp_tmp/abl_run1";
  AblationTable table = run_ablation(s);
  REQUIRE(table.rows.size() == 6);
  const char* names[] = {"a", "b", "c", "d", "e", "f"};
  for (int i = 0; i < 6; ++i) {
    const AblationRow& r = table.rows[static_cast<size_t>(i)];
    INFO("config ", r.config, ": ", r.error);
    CHECK(r.config == names[i]);
    CHECK(r.seed == 1);
    CHECK(r.error.empty());
    CHECK(r.epochs >= 1);
    CHECK(r.epochs <= 2);
    CHECK(r.test_acc >= 0.0);
    CHECK(r.test_acc <= 1.0);
    CHECK(r.hit_rate >= 0.0);
    CHECK(r.hit_rate <= 1.0);
    CHECK(r.entropy >= 0.0);
    CHECK(std::isfinite(r.final_val_gap));
  }
  CHECK(exists("exp_tmp/abl_run1/suite.json"));
  CHECK(exists("exp_tmp/abl_run1/ablation.csv"));
  CHECK(exists("exp_tmp/abl_run1/a/data_train/manifest.jsonl"));
  CHECK(exists("exp_tmp/abl_run1/a/seed_1/curves.csv"));
  CHECK(exists("exp_tmp/abl_run1/a/seed_1/metadata.txt"));
  CHECK(exists("exp_tmp/abl_run1/a/seed_1/checkpoint.bin"));
  CHECK(exists("exp_tmp/abl_run1/a/seed_1/attn_weights.csv"));
  CHECK(exists("exp_tmp/abl_run1/a/seed_1/attn_step0.pgm"));
  CHECK(exists("exp_tmp/abl_run1/f/seed_1/checkpoint.bin"));

  AblationTable reread = read_ablation_csv("exp_tmp/abl_run1/ablation.csv");
  CHECK(ablation_csv(reread) == ablation_csv(table));

  AblationSuite s2 = s;
  s2.out_dir = "exp_tmp/abl_run2";
  AblationTable table2 = run_ablation(s2);
  CHECK(ablation_csv(table2) == ablation_csv(table));  // bit-identical rerun

  AblationSuite no_dir = s;
  no_dir.out_dir = "";
  CHECK_THROWS_AS(run_ablation(no_dir), UsageError);
}

TEST_CASE("baseline reproduces a constant template exactly") {
  std::vector<std::vector<int>> train(30, {4, 5, 6, 7});
  std::vector<std::vector<int>> eval_set(10, {4, 5, 6, 7});
  BaselineConfig cfg;
  cfg.vocab_size = 8;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 16;
  cfg.epochs = 60;
  cfg.batch_size = 8;
  cfg.seed = 3;
  BaselineReport rep = run_predictability_baseline(train, eval_set, cfg);
  CHECK(rep.accuracy >= 0.99);
  CHECK(rep.chance == doctest::Approx(0.25));
  CHECK(rep.eval_positions == 40);

  SequenceBaseline lm(cfg);
  lm.train(train);
  CHECK(lm.generate(4) == std::vector<int>{4, 5, 6, 7});
}

TEST_CASE("baseline stays at chance on uniform sequences") {
  SequenceSource src;
  src.kind = SourceKind::UniformRandom;
  src.vocab_size = 8;
  std::vector<std::vector<int>> train, eval_set;
  for (uint64_t i = 0; i < 50; ++i)
    train.push_back(sample_sequence(src, 8, i).codes);
  for (uint64_t i = 0; i < 100; ++i)
    eval_set.push_back(sample_sequence(src, 8, 1000 + i).codes);
  BaselineConfig cfg;
  cfg.vocab_size = 8;
  cfg.seed = 5;
  BaselineReport rep = run_predictability_baseline(train, eval_set, cfg);
  CHECK(rep.eval_positions == 800);
  CHECK(rep.chance == doctest::Approx(0.25));
  // A fixed greedy sequence scored on independent uniform positions is
  // Binomial(800, 1/4): 3 sigma = 3 * sqrt(.25 * .75 / 800) = 0.046.
  CHECK(rep.accuracy > 0.25 - 0.046);
  CHECK(rep.accuracy < 0.25 + 0.046);
}

TEST_CASE("baseline lands between chance and perfect on mutated templates") {
  SequenceSource src;
  src.kind = SourceKind::TemplateWithMutation;
  src.templates = {{4, 5, 6, 7}, {4, 5, 7, 6}, {4, 5, 6, 6}};
  src.mutation_prob = 0.3;
  src.vocab_size = 8;
  std::vector<std::vector<int>> train, eval_set;
  for (uint64_t i = 0; i < 60; ++i)
    train.push_back(sample_sequence(src, 4, i).codes);
  for (uint64_t i = 0; i < 60; ++i)
    eval_set.push_back(sample_sequence(src, 4, 2000 + i).codes);
  BaselineConfig cfg;
  cfg.vocab_size = 8;
  cfg.seed = 9;
  BaselineReport rep = run_predictability_baseline(train, eval_set, cfg);
  // Shared prefix + mutation noise: clearly above chance, clearly below 1.
  CHECK(rep.accuracy > 0.35);
  CHECK(rep.accuracy < 0.92);
}

TEST_CASE("dataset code sequences mirror the manifests") {
  LoadedDataset ds;
  ds.sequence_length = 2;
  SampleManifest a;
  a.codes = {4, 5};
  SampleManifest b;
  b.codes = {6, 7};
  ds.manifests = {a, b};
  auto seqs = dataset_code_sequences(ds);
  REQUIRE(seqs.size() == 2);
  CHECK(seqs[0] == std::vector<int>{4, 5});
  CHECK(seqs[1] == std::vector<int>{6, 7});

  BaselineConfig bad;
  bad.vocab_size = 8;
  SequenceBaseline lm(bad);
  CHECK_THROWS_AS(lm.train({}), UsageError);
  CHECK_THROWS_AS(lm.generate(0), UsageError);
  BaselineConfig tiny;
  tiny.vocab_size = 4;  // no room for real moves
  CHECK_THROWS_AS(SequenceBaseline{tiny}, UsageError);
}
