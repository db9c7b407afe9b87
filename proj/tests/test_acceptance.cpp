// Acceptance gate: every primary requirement verified end to end, one
// pass/fail line per criterion, with tolerances pinned below. The learning
// criteria run real training (no stubs), so the full gate takes tens of
// minutes on a single core.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "config.hpp"
#include "experiments.hpp"
#include "gradcheck.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "notation.hpp"
#include "synth.hpp"
#include "train.hpp"
#include "util.hpp"

namespace fs = std::filesystem;
using namespace csr;

namespace {

// ---- pinned tolerances and budgets ----
constexpr double kGradTol = 1e-4;          // max relative error, all checks
constexpr int kGradPoints = 10;            // coordinates probed per check
constexpr double kGradBudgetSec = 120.0;   // whole-suite runtime budget
constexpr int kAttnTrials = 1000;          // random parameterizations
constexpr double kAttnSumTol = 1e-5;       // |sum(alpha_t) - 1| bound
constexpr double kEntropySlack = 1e-6;     // ln L upper-bound slack (float)
constexpr int kVocabCap = 60;              // compact-vocabulary ceiling
constexpr double kDeskAccFloor = 0.90;     // held-out per-position accuracy
constexpr double kDeskHitFloor = 0.80;     // attention alignment hit-rate
constexpr double kDeskBudgetSec = 1800.0;  // end-to-end wall budget
constexpr double kPredictableFloor = 0.99; // baseline on a deterministic source
constexpr double kLiftFloor = 0.10;        // model accuracy over baseline
constexpr double kIncrGainFloor = 0.05;    // schedule gain over its first stage
constexpr double kIncrDipTol = 0.01;       // allowed per-stage accuracy dip
// A previously reported character error rate for the frozen transcription
// pair; shown below to be unreachable under every standard normalization.
constexpr double kReportedCer = 0.1145;
constexpr double kReportedCerMargin = 0.005;

// Scaled-down ablation grid: large enough for the qualitative orderings to
// emerge, small enough to keep the gate affordable.
constexpr int kAblationTrainSize = 500;
constexpr int kAblationTestSize = 100;
constexpr int kAblationEpochs = 12;

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

Outcome pass(std::string detail) { return {true, std::move(detail)}; }
Outcome failed(std::string detail) { return {false, std::move(detail)}; }

double now_minus(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

std::vector<int> all_indices(const LoadedDataset& ds) {
  std::vector<int> idx(ds.manifests.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// State shared by the learning criteria: the reference training run's model
// and data are reused by the baseline-lift comparison.
struct SharedState {
  std::string work_dir;
  RunConfig desk;
  Vocabulary vocab;
  LoadedDataset train_ds, test_ds;
  bool data_ready = false;
  Model<float> model{desk_model_config(8), 0, 0};  // replaced by criterion 6
  double model_test_acc = -1.0;
  bool model_ready = false;
};

// ---- criterion 1: gradient correctness ----
Outcome c1_gradients() {
  std::vector<GradCheck> checks = standard_grad_checks(1);
  std::vector<GradCheck> composed = composed_grad_checks(1);
  size_t primitives = checks.size();
  for (GradCheck& c : composed) checks.push_back(std::move(c));
  GradCheckReport r = run_grad_check_suite(checks, 1, kGradPoints);
  std::string detail = fmt(
      "%zu primitive + %zu composed checks, max rel err %.3g (tol %.0e), "
      "%.1f s (budget %.0f s)",
      primitives, composed.size(), r.max_rel_err, kGradTol, r.seconds,
      kGradBudgetSec);
  if (!r.passed(kGradTol)) return failed(detail);
  if (r.seconds >= kGradBudgetSec) return failed(detail);
  return pass(detail);
}

// ---- criterion 2: attention normalization and bounds ----
Outcome c2_attention() {
  ModelConfig base;
  base.image_h = 4;
  base.image_w = 5;
  base.backbone = {{2, 1, 1}};  // grid 2x3 -> L = 6
  base.hidden_dim = 4;
  base.attention_dim = 3;
  base.embed_dim = 2;
  base.vocab_size = 5;
  base.max_decode_len = 6;
  base.dropout_rate = 0.0;

  double worst_sum_err = 0.0, min_entry = 0.0, worst_entropy_excess = -1e9;
  for (int trial = 0; trial < kAttnTrials; ++trial) {
    ModelConfig cfg = base;
    cfg.bidirectional = (trial % 2 == 1);
    Model<float> m(cfg, 0, derive_seed(2, 41, static_cast<uint64_t>(trial)));
    Rng rng(derive_seed(2, 42, static_cast<uint64_t>(trial)));
    Tensor<float> img({cfg.image_h, cfg.image_w, 1});
    for (size_t i = 0; i < img.size(); ++i)
      img[i] = static_cast<float>(rng.uniform());
    auto rec = m.forward_teacher_forced(img, {4, 4, Vocabulary::kEnd});

    const Tensor<float>& a = rec.attention;
    int l = a.dim(1);
    double ln_l = std::log(static_cast<double>(l));
    for (int t = 0; t < a.dim(0); ++t) {
      double sum = 0.0, entropy = 0.0;
      for (int i = 0; i < l; ++i) {
        double v = a.at(t, i);
        min_entry = std::min(min_entry, v);
        sum += v;
        if (v > 0.0) entropy -= v * std::log(v);
      }
      worst_sum_err = std::max(worst_sum_err, std::fabs(sum - 1.0));
      worst_entropy_excess =
          std::max(worst_entropy_excess,
                   std::max(entropy - ln_l, -entropy));  // outside [0, ln L]
    }
  }
  std::string detail = fmt(
      "%d parameterizations: worst |sum-1| %.2g (tol %.0e), min entry %.2g, "
      "worst entropy excursion %.2g (slack %.0e)",
      kAttnTrials, worst_sum_err, kAttnSumTol, min_entry, worst_entropy_excess,
      kEntropySlack);
  if (worst_sum_err > kAttnSumTol) return failed(detail);
  if (min_entry < 0.0) return failed(detail);
  if (worst_entropy_excess > kEntropySlack) return failed(detail);
  return pass(detail);
}

// ---- criterion 3: analytic recurrence of the zeroed encoder ----
Outcome c3_recurrence() {
  ModelConfig cfg;
  cfg.image_h = 4;
  cfg.image_w = 5;
  cfg.backbone = {{2, 1, 1}};
  cfg.hidden_dim = 6;
  cfg.attention_dim = 3;
  cfg.embed_dim = 2;
  cfg.vocab_size = 5;
  cfg.max_decode_len = 6;
  cfg.dropout_rate = 0.0;
  Model<float> m(cfg, 0, 7);
  for (auto* p : m.parameters()) p->value.fill(0.0f);

  Rng rng(301);
  Tensor<float> h({1, cfg.hidden_dim});
  Tensor<float> x({1, m.config().feature_channels()});
  for (size_t i = 0; i < h.size(); ++i)
    h[i] = static_cast<float>(rng.uniform(-2.0, 2.0));
  for (size_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>(rng.uniform(-2.0, 2.0));

  Tape<float> tape;
  auto b = m.bind(tape);
  int xv = tape.leaf(x);
  int hv = tape.leaf(h);
  int steps = 6, exact = 0;
  for (int t = 0; t < steps; ++t) {
    int next = m.gru_cell(b, Model<float>::GruKind::Encoder, xv, hv);
    bool ok = true;
    for (size_t i = 0; i < h.size(); ++i)
      ok = ok && (tape.value(next)[i] == 0.5f * tape.value(hv)[i]);
    exact += ok ? 1 : 0;
    hv = next;
  }
  std::string detail =
      fmt("zeroed encoder: %d/%d chained steps satisfy h_t == 0.5*h_{t-1} "
          "bit-exactly",
          exact, steps);
  return exact == steps ? pass(detail) : failed(detail);
}

// ---- criterion 4: notation fidelity ----
Outcome c4_notation() {
  GameRecord g = parse_pgn(
      "1. e4 e5 2. Nf3 Nc6 3. Bb5 a6 4. Ba4 Nf6 5. O-O Be7 6. Ke1 b5 7. Bb3 d6 "
      "8. c3 O-O 9. h3 Nb8 10. d4 Nbd7");
  const std::vector<std::string> expected{
      "e4",  "e5",  "Nf3", "Nc6", "Bb5", "a6",  "Ba4", "Nf6", "O-O", "Be7",
      "Ke1", "b5",  "Bb3", "d6",  "c3",  "O-O", "h3",  "Nb8", "d4",  "Nbd7"};
  std::vector<std::string> got;
  for (const SanMove& m : g.moves) got.push_back(m.text);
  if (got != expected)
    return failed(fmt("inline example parsed to %zu moves, wanted 20 exact",
                      got.size()));

  LangMap pt = LangMap::from_text(builtin_langmap_pt(), "pt");
  std::vector<SanMove> local = {{"Cc3", "pt"}};
  std::vector<SanMove> english = pt.to_english(local);
  if (english.size() != 1 || english[0].text != "Nc3")
    return failed("Cc3 did not translate to Nc3");

  std::vector<std::string> uniq;
  for (const std::string& t : expected)
    if (std::find(uniq.begin(), uniq.end(), t) == uniq.end()) uniq.push_back(t);
  Vocabulary vocab(uniq);
  std::vector<int> codes = vocab.encode(expected);
  if (codes.size() != expected.size() + 1 || codes.back() != Vocabulary::kEnd)
    return failed("encode did not append exactly one END");
  if (vocab.decode(codes) != expected)
    return failed("encode/decode round trip altered the move list");
  std::vector<int> oov = vocab.encode(std::vector<std::string>{"Qh5", "e4"});
  if (oov[0] != Vocabulary::kUnk || oov[1] != vocab.code("e4"))
    return failed("out-of-vocabulary token did not map to UNK");
  return pass(
      "20/20 moves exact; Cc3->Nc3; round trip intact with OOV->UNK");
}

// ---- criterion 5: frozen metric vector ----
size_t oracle_distance(const std::string& a, const std::string& b) {
  std::vector<std::vector<size_t>> d(a.size() + 1,
                                     std::vector<size_t>(b.size() + 1, 0));
  for (size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (size_t i = 1; i <= a.size(); ++i)
    for (size_t j = 1; j <= b.size(); ++j) {
      size_t best = d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      best = std::min(best, d[i - 1][j] + 1);
      best = std::min(best, d[i][j - 1] + 1);
      d[i][j] = best;
    }
  return d[a.size()][b.size()];
}

Outcome c5_metrics() {
  const std::vector<std::string> target = split_ws(
      "Nf3 e5 b3 d5 e3 Nf6 Bb2 e6 d4 Nc6 Bb5 a6 Bxc6 bxc6 O-O cxd4");
  const std::vector<std::string> pred = split_ws(
      "Nf3 c5 b3 d4 e3 Nf6 Be2 g6 d4 Nc6 Bb5 a6 Bxc6 bxc6 O-O cxd4");
  if (position_accuracy_tokens(pred, target) != 0.75)
    return failed("frozen pair: position accuracy is not exactly 12/16");

  std::string jt, jp;
  for (size_t i = 0; i < target.size(); ++i) {
    jt += (i ? " " : "") + target[i];
    jp += (i ? " " : "") + pred[i];
  }
  size_t dist = edit_distance(jp, jt);
  if (dist != 4) return failed(fmt("frozen pair: edit distance %zu != 4", dist));

  Rng rng(505);
  const std::string alphabet = "abcdNKQRx 123";
  for (int trial = 0; trial < 1000; ++trial) {
    auto make = [&](int cap) {
      int len = rng.uniform_int(cap + 1);
      std::string s;
      for (int i = 0; i < len; ++i)
        s += alphabet[static_cast<size_t>(
            rng.uniform_int(static_cast<int>(alphabet.size())))];
      return s;
    };
    std::string a = make(24), b = make(24);
    if (edit_distance(a, b) != oracle_distance(a, b))
      return failed(fmt("distance oracle mismatch on trial %d", trial));
  }

  // Every standard normalization of the frozen pair's 4 errors misses the
  // previously reported 0.1145: chars with spaces 4/59, chars only 4/44,
  // tokens 4/16, positions 4/16.
  double frozen = cer(pred, target);
  if (frozen != 4.0 / 59.0)
    return failed("frozen definition no longer yields 4/59");
  for (double candidate : {4.0 / 59.0, 4.0 / 44.0, 4.0 / 16.0}) {
    if (std::fabs(candidate - kReportedCer) <= kReportedCerMargin)
      return failed(
          fmt("normalization %.4f unexpectedly matches the reported %.4f",
              candidate, kReportedCer));
  }
  return pass(fmt(
      "accuracy 12/16, distance 4, 1000/1000 oracle matches; frozen CER "
      "4/59=%.4f while the reported %.4f matches no standard normalization",
      frozen, kReportedCer));
}

// ---- criterion 6: reference end-to-end learning run ----
Outcome c6_desk_learning(SharedState& st) {
  auto start = std::chrono::steady_clock::now();
  st.desk = preset_run_config("desk");
  st.desk.seed = 1;
  st.vocab = run_vocabulary(st.desk);
  validate_experiment_preset(st.desk.experiment);
  if (st.vocab.size() > kVocabCap)
    return failed(fmt("vocabulary %d exceeds cap %d", st.vocab.size(), kVocabCap));
  if (st.desk.experiment.train_data.layout.rows != 4)
    return failed("reference layout is not 4 rows");

  std::string dir = path_join(st.work_dir, "reference");
  generate_dataset(st.desk.experiment.train_data, st.vocab,
                   path_join(dir, "data_train"));
  generate_dataset(st.desk.experiment.test_data, st.vocab,
                   path_join(dir, "data_test"));
  st.train_ds = load_dataset(path_join(dir, "data_train"));
  st.test_ds = load_dataset(path_join(dir, "data_test"));
  st.data_ready = true;

  st.model = Model<float>(st.desk.experiment.model, st.vocab.content_hash(),
                          st.desk.seed);
  TrainConfig tc = st.desk.experiment.train;
  tc.seed = st.desk.seed;
  FitResult fr = fit(st.model, st.train_ds, tc);
  write_curves_csv(path_join(dir, "curves.csv"), fr.log);

  EvalResult ev = evaluate_model(st.model, st.test_ds, all_indices(st.test_ds),
                                 st.desk.experiment.alignment_tolerance_px);
  st.model_test_acc = ev.metrics.position_accuracy;
  st.model_ready = true;
  double secs = now_minus(start);

  std::string detail = fmt(
      "vocab %d<=%d, %zu train samples, converged=%s in %zu/%d epochs, "
      "held-out acc %.4f (floor %.2f), hit-rate %.4f (floor %.2f), %.0f s "
      "(budget %.0f s)",
      st.vocab.size(), kVocabCap, st.train_ds.manifests.size(),
      fr.converged ? "yes" : "no", fr.log.size(), tc.max_epochs,
      ev.metrics.position_accuracy, kDeskAccFloor, ev.alignment.hit_rate,
      kDeskHitFloor, secs, kDeskBudgetSec);
  if (!fr.converged) return failed(detail);
  if (ev.metrics.position_accuracy < kDeskAccFloor) return failed(detail);
  if (ev.alignment.hit_rate < kDeskHitFloor) return failed(detail);
  if (secs >= kDeskBudgetSec) return failed(detail);
  return pass(detail);
}

// ---- criterion 7: ablation direction checks ----
Outcome c7_ablation(SharedState& st) {
  RunConfig desk = st.desk.vocab.empty() ? preset_run_config("desk") : st.desk;
  AblationSuite suite;
  suite.reference = desk.experiment;
  suite.reference.train_data.size = kAblationTrainSize;
  suite.reference.test_data.size = kAblationTestSize;
  suite.reference.train.max_epochs = kAblationEpochs;
  suite.vocab = run_vocabulary(desk);
  suite.seeds = {1, 2, 3};
  suite.out_dir = path_join(st.work_dir, "ablation");
  AblationTable table = run_ablation(suite);

  int errors = 0;
  for (const AblationRow& r : table.rows)
    if (!r.error.empty()) ++errors;

  // The gate's orderings; the module also reports d-acc-above-c as extra
  // diagnostic signal.
  const std::vector<std::string> gating = {
      "b-converges-slower-than-a", "c-gap-exceeds-a", "c-hit-rate-below-a",
      "d-hit-rate-above-c",        "e-acc-below-a",   "f-converges-slower-than-e",
      "f-hit-rate-above-e"};
  std::vector<DirectionCheck> checks = ablation_direction_checks(table);
  int passed_count = 0;
  std::string detail = fmt("%zu runs (%d failed):", table.rows.size(), errors);
  bool all = errors == 0;
  for (const std::string& name : gating) {
    bool found = false;
    for (const DirectionCheck& c : checks) {
      if (c.name != name) continue;
      found = true;
      detail += fmt(" %s=%s(%d/%d)", c.name.c_str(), c.passed ? "pass" : "FAIL",
                    c.votes_for, c.votes_total);
      if (c.passed) ++passed_count;
      all = all && c.passed;
    }
    if (!found) {
      detail += " " + name + "=missing";
      all = false;
    }
  }
  detail = fmt("%d/%zu orderings hold by seed-majority; ", passed_count,
               gating.size()) +
           detail;
  return all ? pass(detail) : failed(detail);
}

// ---- criterion 8: predictability isolation ----
Outcome c8_predictability(SharedState& st) {
  RunConfig desk = st.desk.vocab.empty() ? preset_run_config("desk") : st.desk;
  Vocabulary vocab = run_vocabulary(desk);
  int moves = vocab.size() - Vocabulary::kNumSpecials;

  // (a) fully predictable source: one template, no mutation.
  const std::vector<int>& tmpl = desk.experiment.train_data.source.templates.at(0);
  std::vector<std::vector<int>> fixed(40, tmpl);
  BaselineConfig bc;
  bc.vocab_size = vocab.size();
  bc.epochs = 60;
  bc.seed = 11;
  BaselineReport predictable = run_predictability_baseline(fixed, fixed, bc);

  // (b) uniform-random source: accuracy must sit within 3 sigma of chance.
  SequenceSource uniform;
  uniform.kind = SourceKind::UniformRandom;
  uniform.vocab_size = vocab.size();
  std::vector<std::vector<int>> utrain, ueval;
  for (uint64_t i = 0; i < 50; ++i)
    utrain.push_back(sample_sequence(uniform, 8, derive_seed(8, 50, i)).codes);
  for (uint64_t i = 0; i < 100; ++i)
    ueval.push_back(sample_sequence(uniform, 8, derive_seed(8, 51, i)).codes);
  BaselineConfig ub = bc;
  ub.epochs = 30;
  ub.seed = 12;
  BaselineReport chance_run = run_predictability_baseline(utrain, ueval, ub);
  double p = 1.0 / static_cast<double>(moves);
  double sigma3 =
      3.0 * std::sqrt(p * (1.0 - p) /
                      static_cast<double>(chance_run.eval_positions));

  // (c) the recognizer's lift over the strongest sequence-only baseline on
  // the reference data.
  if (!st.data_ready || !st.model_ready)
    return failed("reference model unavailable (criterion 6 did not complete)");
  BaselineConfig rb;
  rb.vocab_size = vocab.size();
  rb.seed = 13;
  BaselineReport ref = run_predictability_baseline(
      dataset_code_sequences(st.train_ds), dataset_code_sequences(st.test_ds),
      rb);
  double lift = st.model_test_acc - ref.accuracy;

  std::string detail = fmt(
      "predictable source %.4f (floor %.2f); uniform source %.4f vs chance "
      "%.4f +/- %.4f; reference lift %.4f = model %.4f - baseline %.4f "
      "(floor %.2f)",
      predictable.accuracy, kPredictableFloor, chance_run.accuracy, p, sigma3,
      lift, st.model_test_acc, ref.accuracy, kLiftFloor);
  if (predictable.accuracy < kPredictableFloor) return failed(detail);
  if (std::fabs(chance_run.accuracy - p) > sigma3) return failed(detail);
  if (lift < kLiftFloor) return failed(detail);
  return pass(detail);
}

// ---- criterion 9: incremental schedule ----
Outcome c9_incremental(SharedState& st) {
  if (!st.data_ready)
    return failed("reference data unavailable (criterion 6 did not complete)");
  const RunConfig& desk = st.desk;
  if (desk.schedule.size() != 3) return failed("schedule is not three stages");

  std::string dir = path_join(st.work_dir, "incremental");
  std::vector<LoadedDataset> stage_data;
  for (size_t i = 0; i < desk.schedule.size(); ++i) {
    std::string sdir = path_join(dir, "stage" + std::to_string(i + 1));
    generate_dataset(desk.schedule[i].data, st.vocab, sdir);
    stage_data.push_back(load_dataset(sdir));
  }
  Model<float> model(desk.experiment.model, st.vocab.content_hash(), desk.seed);
  std::vector<RefinementStep> steps;
  for (size_t i = 0; i < desk.schedule.size(); ++i) {
    RefinementStep step;
    step.data = &stage_data[i];
    step.config = desk.schedule[i].train;
    step.config.seed = derive_seed(desk.seed, 17, i);
    step.name = desk.schedule[i].name;
    steps.push_back(std::move(step));
  }
  std::vector<RefinementResult> results =
      incremental_fit(model, steps, st.test_ds);

  double gain = results.back().test_acc - results.front().test_acc;
  bool monotone = true;
  std::string traj;
  for (size_t i = 0; i < results.size(); ++i) {
    traj += fmt("%s%.4f", i ? " -> " : "", results[i].test_acc);
    if (i > 0 && results[i].test_acc < results[i - 1].test_acc - kIncrDipTol)
      monotone = false;
  }
  std::string detail =
      fmt("held-out accuracy %s; gain %.4f (floor %.2f); dips bounded by %.2f: "
          "%s",
          traj.c_str(), gain, kIncrGainFloor, kIncrDipTol,
          monotone ? "yes" : "no");
  if (gain < kIncrGainFloor) return failed(detail);
  if (!monotone) return failed(detail);
  return pass(detail);
}

// ---- criterion 10: bit-exact rerun from the resolved artifact ----
Outcome c10_reproducibility(SharedState& st) {
  RunConfig rc = preset_run_config("desk");
  rc.seed = 21;
  rc.out_dir = path_join(st.work_dir, "repro");
  rc.experiment.train_data.size = 24;
  rc.experiment.test_data.size = 6;
  rc.experiment.train.batch_size = 8;
  rc.experiment.train.max_epochs = 3;

  // Serialize, then rerun twice from the parsed artifact exactly as the
  // command path does (one worker, nothing shared).
  std::string artifact = run_config_to_json(rc);
  std::vector<std::string> logs;
  for (int run = 0; run < 2; ++run) {
    RunConfig from_artifact = run_config_from_json(artifact);
    Vocabulary vocab = run_vocabulary(from_artifact);
    std::string dir =
        path_join(from_artifact.out_dir, "run" + std::to_string(run));
    generate_dataset(from_artifact.experiment.train_data, vocab,
                     path_join(dir, "data_train"));
    LoadedDataset train_ds = load_dataset(path_join(dir, "data_train"));
    Model<float> model(from_artifact.experiment.model, vocab.content_hash(),
                       from_artifact.seed);
    TrainConfig tc = from_artifact.experiment.train;
    tc.seed = from_artifact.seed;
    FitResult fr = fit(model, train_ds, tc);
    logs.push_back(curves_csv_deterministic(fr.log));
  }
  if (logs[0] != logs[1])
    return failed("identical artifacts produced different curve logs");
  return pass(fmt(
      "two executions of one resolved artifact: %zu-epoch curve logs byte-"
      "identical (wall-time column excluded by construction)",
      static_cast<size_t>(3)));
}

}  // namespace

int main() {
  SharedState st;
  st.work_dir = "acceptance_tmp";
  fs::remove_all(st.work_dir);
  fs::create_directories(st.work_dir);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", [&] { return c1_gradients(); }},
      {2, "attention normalization and bounds", [&] { return c2_attention(); }},
      {3, "analytic encoder recurrence", [&] { return c3_recurrence(); }},
      {4, "notation fidelity", [&] { return c4_notation(); }},
      {5, "frozen metric vector", [&] { return c5_metrics(); }},
      {6, "reference end-to-end learning", [&] { return c6_desk_learning(st); }},
      {7, "ablation direction checks", [&] { return c7_ablation(st); }},
      {8, "predictability isolation", [&] { return c8_predictability(st); }},
      {9, "incremental schedule", [&] { return c9_incremental(st); }},
      {10, "bit-exact rerun", [&] { return c10_reproducibility(st); }},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = failed(std::string("exception: ") + e.what());
    }
    double secs = now_minus(start);
    std::printf("[%2d] %s %s (%.1f s) - %s\n", c.id,
                out.passed ? "PASS" : "FAIL", c.name, secs,
                out.detail.c_str());
    std::fflush(stdout);
    failures += out.passed ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n",
              static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
