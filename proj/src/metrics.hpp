// Transcription metrics and attention diagnostics: per-position accuracy,
// exact match, character error rate (space-joined Levenshtein over tokens,
// normalized by target character count), attention alignment hit-rate with
// per-step entropy, and attention-map export (bilinear heat maps + raw CSV).
#pragma once

#include <string>
#include <vector>

#include "model.hpp"
#include "notation.hpp"
#include "synth.hpp"
#include "tensor.hpp"

namespace csr {

// Fraction of target positions i with pred[i] == target[i]; a missing
// position (pred shorter) counts as wrong. Throws UsageError on empty target.
double position_accuracy(const std::vector<int>& pred,
                         const std::vector<int>& target);
double position_accuracy_tokens(const std::vector<std::string>& pred,
                                const std::vector<std::string>& target);

// Levenshtein distance over characters.
size_t edit_distance(const std::string& a, const std::string& b);

// Character error rate: tokens joined with single spaces on both sides, then
// edit_distance(joined_pred, joined_target) / |joined_target|. Throws
// UsageError on an empty target.
double cer(const std::vector<std::string>& pred,
           const std::vector<std::string>& target);

struct MetricsReport {
  double position_accuracy = 0.0;
  double first_position_accuracy = 0.0;
  double exact_match_rate = 0.0;
  double cer = 0.0;
  int sample_count = 0;
};

std::string metrics_report_to_json(const MetricsReport& r);

// Position-weighted aggregation: total correct positions / total positions;
// corpus CER = total edit distance / total target characters; first-position
// and exact-match rates are per-sample means. Decoded through `vocab` for CER.
MetricsReport aggregate_metrics(const std::vector<std::vector<int>>& preds,
                                const std::vector<std::vector<int>>& targets,
                                const Vocabulary& vocab);

struct StepAlignment {
  int step = 0;
  int argmax_index = 0;
  double center_x = 0.0, center_y = 0.0;
  bool hit = false;
  double entropy = 0.0;  // nats
};

struct AlignmentReport {
  double hit_rate = 0.0;
  double mean_entropy = 0.0;
  std::vector<StepAlignment> steps;
};

// For each step t (attention row), back-maps argmax_i alpha[t][i] to its
// receptive-field center and scores a hit iff the center lies inside
// bboxes[t] expanded by tolerance_px on every side. Also reports per-step
// entropy -sum alpha ln alpha. Requires one bbox per attention row and
// attention columns matching geom.positions(); an empty bbox counts as a miss.
AlignmentReport alignment_hit_rate(const Tensor<float>& attention,
                                   const std::vector<Rect>& bboxes,
                                   const FeatureGeom& geom, double tolerance_px);

// Per-step heat maps: alpha reshaped to the feature grid, bilinearly
// interpolated to image size, normalized so the maximum weight maps to white,
// written as <prefix>_step<k>.pgm; raw weights go to <prefix>_weights.csv with
// rows (step, grid_row, grid_col, weight).
void export_attention_maps(const Tensor<float>& attention, const FeatureGeom& geom,
                           int image_h, int image_w, const std::string& prefix);

// Reads back a <prefix>_weights.csv written by export_attention_maps.
Tensor<float> read_attention_weights_csv(const std::string& path,
                                         const FeatureGeom& geom);

struct EvalResult {
  MetricsReport metrics;
  AlignmentReport alignment;  // pooled over all compared decode steps
};

// Free-running evaluation over the given sample indices: greedy decode, score
// predictions against manifest codes, and pool alignment over the steps that
// emitted codes (each step compared against its ground-truth cell bbox).
EvalResult evaluate_model(Model<float>& model, const LoadedDataset& ds,
                          const std::vector<int>& indices, double tolerance_px);

}  // namespace csr
