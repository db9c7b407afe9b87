#pragma once
// Experiment harness: the six-config ablation grid, the sequence-length vs
// training-set-size sweep, and a decoder-only baseline that measures how much
// of the task is solvable from sequence statistics alone (no image input).

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "metrics.hpp"
#include "model.hpp"
#include "synth.hpp"
#include "train.hpp"

namespace csr {

// Everything one training run needs. The vocabulary is carried by the suite
// (all configs of a suite share it).
struct ExperimentPreset {
  DatasetSpec train_data;
  DatasetSpec test_data;  // held-out style seeds, same source distribution
  ModelConfig model;
  TrainConfig train;
  double alignment_tolerance_px = 4.0;
};

std::string experiment_preset_to_json(const ExperimentPreset& p);
ExperimentPreset experiment_preset_from_json(const std::string& text);
// Rejects presets whose train/test style pools share seeds, or whose model
// input size disagrees with the dataset layout/resolution.
void validate_experiment_preset(const ExperimentPreset& p);

// Flattens two JSON documents to dotted keys and returns the sorted keys whose
// values differ (including keys present on only one side).
std::vector<std::string> config_diff(const std::string& json_a,
                                     const std::string& json_b);

// The ablation grid, each entry derived from the reference by the named
// factor change only:
//   a: reference
//   b: teacher forcing off
//   c: training set reduced to 40% of the reference size
//   d: reduced + uniform-random sequences (template structure removed)
//   e: half-resolution inputs (model input halved to match)
//   f: half resolution + teacher forcing off
std::vector<std::pair<std::string, ExperimentPreset>> ablation_variants(
    const ExperimentPreset& reference);

// Halves the model's input dimensions (the rest of the architecture is
// unchanged); throws if the feature grid would collapse.
ModelConfig half_model_config(const ModelConfig& cfg);

struct AblationSuite {
  ExperimentPreset reference;
  Vocabulary vocab;
  std::vector<uint64_t> seeds = {1, 2, 3};
  std::string out_dir;
};

std::string ablation_suite_to_json(const AblationSuite& suite);
AblationSuite ablation_suite_from_json(const std::string& text);

struct AblationRow {
  std::string config;
  uint64_t seed = 0;
  bool converged = false;
  int epochs = 0;              // epochs actually run
  double final_val_gap = 0.0;  // last epoch's val_loss - train_loss
  double max_val_gap = 0.0;    // max over epochs (the overfitting signal)
  double test_acc = 0.0;       // free-running position accuracy, held-out set
  double hit_rate = 0.0;       // attention alignment
  double entropy = 0.0;        // mean attention entropy
  std::string error;           // non-empty = the run failed; other fields unset
};

struct AblationTable {
  std::vector<AblationRow> rows;
};

// Trains every (config, seed) pair; a failing run contributes a row with its
// error message instead of aborting the suite. Artifacts (datasets, curve
// logs, metadata, checkpoint, attention maps, ablation.csv, suite.json) are
// written under suite.out_dir.
AblationTable run_ablation(const AblationSuite& suite);

std::string ablation_csv(const AblationTable& table);
AblationTable read_ablation_csv(const std::string& path);

// One run with full artifacts; the building block of the suite drivers.
AblationRow run_one_experiment(const ExperimentPreset& preset, const Vocabulary& vocab,
                               uint64_t seed, const std::string& run_dir,
                               const LoadedDataset& train_ds,
                               const LoadedDataset& test_ds);

struct DirectionCheck {
  std::string name;
  bool passed = false;
  int votes_for = 0;
  int votes_total = 0;
};

// The expected qualitative orderings, each decided by per-seed majority:
//   b-converges-slower-than-a, c-gap-exceeds-a, c-hit-rate-below-a,
//   d-hit-rate-above-c, d-acc-above-c, e-acc-below-a,
//   f-converges-slower-than-e, f-hit-rate-above-e.
std::vector<DirectionCheck> ablation_direction_checks(const AblationTable& table);

struct SweepSpec {
  ExperimentPreset base;  // layout must hold the longest sequence
  Vocabulary vocab;
  std::vector<int> lengths = {4, 8, 12, 16};
  std::vector<int> sizes;
  std::vector<uint64_t> seeds = {1};
  std::string out_dir;
};

std::string sweep_spec_to_json(const SweepSpec& spec);
SweepSpec sweep_spec_from_json(const std::string& text);
void validate_sweep_spec(const SweepSpec& spec);

struct SweepRow {
  int length = 0;
  int size = 0;
  uint64_t seed = 0;
  double train_acc = 0.0;  // final epoch, training pass
  double val_acc = 0.0;    // final epoch, validation split
  double test_acc = 0.0;   // free-running, held-out set
  std::string error;
};

// Trains one run per (length, size, seed) on a fixed sheet layout; shorter
// sequences leave trailing cells blank. CSV + artifacts under spec.out_dir.
std::vector<SweepRow> run_length_sweep(const SweepSpec& spec);

std::string sweep_csv(const std::vector<SweepRow>& rows);

// ---- decoder-only predictability baseline ----

// A recurrent language model over move codes. By construction there is no
// image anywhere in this interface: it sees code sequences only, so its
// accuracy is the floor that visual recognition must beat.
struct BaselineConfig {
  int vocab_size = 0;
  int embed_dim = 16;
  int hidden_dim = 32;
  double learning_rate = 0.01;
  int epochs = 50;
  int batch_size = 16;
  uint64_t seed = 0;
};

class SequenceBaseline {
 public:
  explicit SequenceBaseline(const BaselineConfig& cfg);

  // Teacher-forced next-code prediction (END appended) with Adam.
  void train(const std::vector<std::vector<int>>& sequences);

  // Greedy generation from START; stops early on END.
  std::vector<int> generate(int length);

  // Mean per-position accuracy of the greedy generation against each
  // sequence (a missing position counts as wrong).
  double position_accuracy(const std::vector<std::vector<int>>& sequences);

 private:
  BaselineConfig cfg_;
  std::vector<Parameter<float>> params_;
  int64_t adam_steps_ = 0;

  int teacher_step(Tape<float>& tape, const std::vector<int>& leaves, int prev_code,
                   int state, int* next_state) const;
};

struct BaselineReport {
  double accuracy = 0.0;    // greedy baseline accuracy on the eval sequences
  double chance = 0.0;      // 1 / (#non-special codes)
  int eval_positions = 0;   // positions scored
};

// Trains the baseline on the training sequences and scores it on the eval
// sequences (both are code sequences without END).
BaselineReport run_predictability_baseline(
    const std::vector<std::vector<int>>& train_sequences,
    const std::vector<std::vector<int>>& eval_sequences, const BaselineConfig& cfg);

// Manifest codes of a loaded dataset, the shared route from an image
// experiment's data to the image-free baseline.
std::vector<std::vector<int>> dataset_code_sequences(const LoadedDataset& ds);

}  // namespace csr
