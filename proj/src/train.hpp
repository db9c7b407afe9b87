#pragma once
// Training loop: seeded splits, batched Adam with gradient clipping,
// teacher-forced or self-fed sequence loss, convergence tracking, and
// incremental refinement over a schedule of datasets.

#include <cstdint>
#include <string>
#include <vector>

#include "model.hpp"
#include "synth.hpp"

namespace csr {

inline constexpr uint64_t kStreamSplit = 14;
inline constexpr uint64_t kStreamShuffle = 15;
inline constexpr uint64_t kStreamDropout = 16;

struct TrainConfig {
  int batch_size = 16;
  double learning_rate = 5e-4;
  double dropout = 0.2;  // applied to the model for the run's training passes
  bool teacher_forcing = true;
  int max_epochs = 50;
  double train_fraction = 0.8;     // remainder is validation
  double convergence_loss = 0.25;  // stop when train loss <= this ...
  double convergence_acc = 0.9;    // ... or train accuracy >= this
  double grad_clip_norm = 5.0;     // global L2 cap; <= 0 disables clipping
  uint64_t seed = 0;
};

void validate_train_config(const TrainConfig& cfg);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// Seeded shuffle of [0, sample_count), then a prefix/suffix cut. Train size is
// round(fraction * count) clamped to [1, count]; the two halves are disjoint
// and cover every index. Same (count, fraction, seed) -> same split.
struct SplitIndices {
  std::vector<int> train;
  std::vector<int> val;
};
SplitIndices split_dataset(int sample_count, double train_fraction, uint64_t seed);

struct EpochStats {
  int epoch = 0;            // 1-based
  double train_loss = 0.0;  // mean cross-entropy per unmasked position
  double val_loss = 0.0;
  double train_acc = 0.0;   // per-position argmax accuracy on the training pass
  double val_acc = 0.0;     // teacher-forced accuracy on the validation split
  double test_acc = -1.0;   // free-running accuracy on a held-out set; < 0 = absent
  double seconds = 0.0;     // wall time of the epoch (excluded from comparisons)
};

// CSV with header epoch,train_loss,val_loss,train_acc,val_acc,test_acc,seconds.
// Doubles are printed with %.17g so equal runs produce byte-equal files; an
// absent test_acc is an empty field.
std::string curves_csv(const std::vector<EpochStats>& log);
void write_curves_csv(const std::string& path, const std::vector<EpochStats>& log);
std::vector<EpochStats> read_curves_csv(const std::string& path);
// The same CSV minus the wall-time column, for reproducibility comparisons.
std::string curves_csv_deterministic(const std::vector<EpochStats>& log);

// Optimizer progress carried across epochs (and across refinement steps):
// Adam's bias-correction step count. Moments live in the parameters.
struct TrainState {
  int64_t adam_steps = 0;
};

struct EvalStats {
  double loss = 0.0;
  double acc = 0.0;
};

// Teacher-forced loss/accuracy in eval mode (no dropout, no updates) over the
// given sample indices. PAD positions are masked out.
EvalStats evaluate_teacher_forced(Model<float>& model, const LoadedDataset& ds,
                                  const std::vector<int>& indices);

// Greedy free-running decode scored per position against the manifest codes.
double free_running_position_accuracy(Model<float>& model, const LoadedDataset& ds,
                                      const std::vector<int>& indices);

// One pass over train_indices in a freshly shuffled order (shuffle and dropout
// streams are derived from (cfg.seed, epoch)). Per batch: accumulate gradients
// of the summed masked cross-entropy, normalize by the batch's unmasked
// position count, clip, and take one Adam step. A trailing short batch is
// processed the same way. Raises NumericError naming (epoch, batch, loss) on a
// non-finite loss. Fills the train_* fields of the returned stats; validation
// and test fields are left for the caller.
EpochStats train_epoch(Model<float>& model, const LoadedDataset& ds,
                       const std::vector<int>& train_indices,
                       const TrainConfig& cfg, int epoch, TrainState& state);

struct FitResult {
  std::vector<EpochStats> log;
  bool converged = false;
  int convergence_epoch = -1;  // 1-based; -1 when max_epochs ran out first
};

struct FitOptions {
  // When set, each epoch also records free-running accuracy on these samples
  // (all of test_ds when test_indices is empty).
  const LoadedDataset* test_ds = nullptr;
  std::vector<int> test_indices;
};

// Splits ds with (cfg.seed, split stream), then runs epochs until the training
// metrics meet the convergence criterion (loss <= convergence_loss or
// accuracy >= convergence_acc, checked after each epoch) or max_epochs. An
// already-converged model therefore runs exactly one epoch. `state` may be
// null for a fresh optimizer.
FitResult fit(Model<float>& model, const LoadedDataset& ds, const TrainConfig& cfg,
              TrainState* state = nullptr, const FitOptions& opts = {});

// One stage of an incremental schedule: a dataset plus the budget to spend on
// it. Parameters and optimizer state carry over between stages.
struct RefinementStep {
  const LoadedDataset* data = nullptr;
  TrainConfig config;
  std::string name;
};

struct RefinementResult {
  std::string name;
  FitResult fit;
  double test_acc = -1.0;  // free-running accuracy on the held-out set after the step
};

// Runs the steps in order on one model, evaluating the held-out set after each
// step. With a single step this is `fit` plus one final evaluation.
std::vector<RefinementResult> incremental_fit(Model<float>& model,
                                              const std::vector<RefinementStep>& steps,
                                              const LoadedDataset& test_ds,
                                              const std::vector<int>& test_indices = {});

// Text header written next to a curve log: config dump, model summary, seeds,
// and a content hash of the dataset spec the run consumed.
std::string run_metadata(const TrainConfig& cfg, const Model<float>& model,
                         const std::string& dataset_spec_json);

}  // namespace csr
