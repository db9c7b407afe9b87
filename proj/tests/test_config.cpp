#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <string>
#include <vector>

#include "config.hpp"
#include "doctest.h"
#include "notation.hpp"

using namespace csr;

TEST_CASE("builtin corpus mirrors the data files byte for byte") {
  CHECK(builtin_openings_pgn() ==
        read_text_file(std::string(CSR_SOURCE_DIR) + "/data/openings.pgn"));
  CHECK(builtin_langmap_pt() ==
        read_text_file(std::string(CSR_SOURCE_DIR) + "/data/langmap_pt.txt"));
}

TEST_CASE("builtin openings parse into a compact early vocabulary") {
  auto corpus = parse_pgn_collection(builtin_openings_pgn());
  REQUIRE(corpus.size() == 27);
  for (const GameRecord& g : corpus) CHECK(g.moves.size() == 16);

  Vocabulary early = build_vocabulary(corpus, 8);
  CHECK(early.size() == 54);
  CHECK(early.size() <= 60);
  Vocabulary full = build_vocabulary(corpus, 16);
  CHECK(full.size() > early.size());
  for (int c = Vocabulary::kNumSpecials; c < early.size(); ++c)
    CHECK(is_drawable(early.token(c)));

  LangMap pt = LangMap::from_text(builtin_langmap_pt(), "pt");
  std::vector<SanMove> local = {{"Cc3", "pt"}};
  CHECK(pt.to_english(local)[0].text == "Nc3");
}

TEST_CASE("desk preset is complete, valid, and fully in-vocabulary") {
  RunConfig rc = preset_run_config("desk");
  CHECK_NOTHROW(validate_experiment_preset(rc.experiment));
  Vocabulary vocab = run_vocabulary(rc);
  CHECK(vocab.size() == 54);
  CHECK(rc.experiment.model.vocab_size == 54);

  CHECK(rc.experiment.train_data.size == 2000);
  CHECK(rc.experiment.train_data.layout.rows == 4);
  CHECK(rc.experiment.train_data.source.kind == SourceKind::TemplateWithMutation);
  CHECK(rc.experiment.train_data.source.mutation_prob == 0.2);
  REQUIRE(rc.experiment.train_data.source.templates.size() == 20);
  for (const auto& t : rc.experiment.train_data.source.templates) {
    REQUIRE(t.size() == 8);
    for (int code : t) CHECK(code >= Vocabulary::kNumSpecials);  // no UNK/specials
  }
  CHECK(rc.experiment.test_data.size == 200);
  CHECK(rc.experiment.train_data.styles.disjoint_seeds(rc.experiment.test_data.styles));

  REQUIRE(rc.schedule.size() == 3);
  CHECK(rc.schedule[0].name == "easy");
  CHECK(rc.schedule[2].name == "hard");
  for (const ScheduleStep& s : rc.schedule) {
    CHECK(s.data.styles.disjoint_seeds(rc.experiment.test_data.styles));
    CHECK(s.data.size == 700);
  }
  CHECK(rc.sweep_lengths == std::vector<int>{2, 4, 6, 8});

  CHECK_THROWS_AS(preset_run_config("giant"), UsageError);
}

TEST_CASE("paper preset pins the reference hyperparameters") {
  RunConfig rc = preset_run_config("paper");
  CHECK(rc.experiment.train.batch_size == 16);
  CHECK(rc.experiment.train.learning_rate == 0.0005);
  CHECK(rc.experiment.train.dropout == 0.2);
  CHECK(rc.experiment.train.convergence_loss == 0.25);
  CHECK(rc.experiment.train.convergence_acc == 0.9);
  CHECK(rc.experiment.model.hidden_dim == 512);
  CHECK(rc.experiment.model.embed_dim == 256);
  CHECK(rc.experiment.model.image_w == 800);
  CHECK(rc.experiment.model.image_h == 862);
  CHECK(rc.experiment.train_data.layout.rows == 8);
  CHECK(run_vocabulary(rc).size() > 60);
  CHECK_NOTHROW(validate_experiment_preset(rc.experiment));

  // Preset construction is deterministic.
  CHECK(run_config_to_json(preset_run_config("paper")) == run_config_to_json(rc));
}

TEST_CASE("run config json round trips and rejects unknown keys") {
  RunConfig rc = preset_run_config("desk");
  std::string j = run_config_to_json(rc);
  RunConfig back = run_config_from_json(j);
  CHECK(run_config_to_json(back) == j);
  CHECK(back.schedule.size() == 3);
  CHECK(back.suite_seeds == std::vector<uint64_t>{1, 2, 3});

  std::string typo = j;
  typo.insert(typo.find('{') + 1, "\"sede\": 1,");
  CHECK_THROWS_AS(run_config_from_json(typo), DataError);
  CHECK_THROWS_AS(run_config_from_json("]["), DataError);

  std::string bad_suite = j;
  bad_suite.insert(bad_suite.find("\"seeds\""), "\"extra\": 0, ");
  CHECK_THROWS_AS(run_config_from_json(bad_suite), DataError);
}

TEST_CASE("dotted overrides rewrite existing keys only") {
  std::string j = run_config_to_json(preset_run_config("desk"));

  std::string lr = apply_override(j, "experiment.train.learning_rate=0.001");
  CHECK(run_config_from_json(lr).experiment.train.learning_rate == 0.001);

  std::string dir = apply_override(j, "out_dir=elsewhere/run7");
  CHECK(run_config_from_json(dir).out_dir == "elsewhere/run7");

  std::string lens = apply_override(j, "sweep.lengths=[2,4]");
  CHECK(run_config_from_json(lens).sweep_lengths == std::vector<int>{2, 4});

  std::string sched = apply_override(j, "schedule.0.train.max_epochs=9");
  CHECK(run_config_from_json(sched).schedule[0].train.max_epochs == 9);
  CHECK(run_config_from_json(sched).schedule[1].train.max_epochs == 15);

  CHECK_THROWS_AS(apply_override(j, "schedule.5.name=x"), UsageError);
  CHECK_THROWS_AS(apply_override(j, "nope.x=1"), UsageError);
  CHECK_THROWS_AS(apply_override(j, "experiment.train.max_epochsss=3"), UsageError);
  CHECK_THROWS_AS(apply_override(j, "no-equals-sign"), UsageError);
  CHECK_THROWS_AS(apply_override(j, "experiment.train.max_epochs=banana"),
                  UsageError);
  // The override must still satisfy the schema when parsed back.
  std::string wrong_type = apply_override(j, "experiment.train.max_epochs=[1]");
  CHECK_THROWS_AS(run_config_from_json(wrong_type), DataError);
}

TEST_CASE("environment overrides address keys case-insensitively") {
  std::string j = run_config_to_json(preset_run_config("desk"));
  std::vector<std::pair<std::string, std::string>> env = {
      {"PATH", "/usr/bin"},
      {"CHESSREAD_SEED", "9"},
      {"CHESSREAD_experiment_train_Batch_Size", "8"},
  };
  RunConfig rc = run_config_from_json(apply_env_overrides(j, env));
  CHECK(rc.seed == 9);
  CHECK(rc.experiment.train.batch_size == 8);

  CHECK_THROWS_AS(apply_env_overrides(j, {{"CHESSREAD_NOPE", "1"}}), UsageError);

  // Underscore folding can genuinely collide; that must be an error, not a pick.
  std::string tricky = R"({"a":{"b_c":1},"a_b":{"c":2}})";
  CHECK_THROWS_AS(apply_env_overrides(tricky, {{"CHESSREAD_A_B_C", "3"}}),
                  UsageError);
}

TEST_CASE("suite and sweep builders derive from the run config") {
  RunConfig rc = preset_run_config("desk");
  rc.out_dir = "runs/x";
  AblationSuite suite = suite_from_run_config(rc);
  CHECK(suite.seeds == rc.suite_seeds);
  CHECK(suite.out_dir == "runs/x/ablation");
  CHECK(suite.vocab.size() == 54);

  SweepSpec sweep = sweep_from_run_config(rc);
  CHECK(sweep.lengths == rc.sweep_lengths);
  CHECK(sweep.out_dir == "runs/x/sweep");

  RunConfig no_vocab = rc;
  no_vocab.vocab.clear();
  CHECK_THROWS_AS(run_vocabulary(no_vocab), DataError);
}
