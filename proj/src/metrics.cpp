#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace csr {

double position_accuracy(const std::vector<int>& pred,
                         const std::vector<int>& target) {
  if (target.empty()) throw UsageError("position_accuracy: empty target");
  size_t correct = 0;
  for (size_t i = 0; i < target.size(); ++i)
    if (i < pred.size() && pred[i] == target[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(target.size());
}

double position_accuracy_tokens(const std::vector<std::string>& pred,
                                const std::vector<std::string>& target) {
  if (target.empty()) throw UsageError("position_accuracy: empty target");
  size_t correct = 0;
  for (size_t i = 0; i < target.size(); ++i)
    if (i < pred.size() && pred[i] == target[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(target.size());
}

size_t edit_distance(const std::string& a, const std::string& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<size_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = j;
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= m; ++j) {
      size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

static std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

double cer(const std::vector<std::string>& pred,
           const std::vector<std::string>& target) {
  if (target.empty()) throw UsageError("cer: empty target");
  std::string jt = join_tokens(target);
  return static_cast<double>(edit_distance(join_tokens(pred), jt)) /
         static_cast<double>(jt.size());
}

std::string metrics_report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["position_accuracy"] = r.position_accuracy;
  j["first_position_accuracy"] = r.first_position_accuracy;
  j["exact_match_rate"] = r.exact_match_rate;
  j["cer"] = r.cer;
  j["sample_count"] = r.sample_count;
  return j.dump(2);
}

MetricsReport aggregate_metrics(const std::vector<std::vector<int>>& preds,
                                const std::vector<std::vector<int>>& targets,
                                const Vocabulary& vocab) {
  if (preds.size() != targets.size())
    throw UsageError("aggregate_metrics: preds/targets size mismatch");
  if (targets.empty()) throw UsageError("aggregate_metrics: empty set");
  size_t correct = 0, total = 0, first_correct = 0, exact = 0;
  size_t dist_total = 0, chars_total = 0;
  for (size_t s = 0; s < targets.size(); ++s) {
    const auto& t = targets[s];
    const auto& p = preds[s];
    if (t.empty()) throw UsageError("aggregate_metrics: empty target sequence");
    for (size_t i = 0; i < t.size(); ++i)
      if (i < p.size() && p[i] == t[i]) ++correct;
    total += t.size();
    if (!p.empty() && p[0] == t[0]) ++first_correct;
    if (p == t) ++exact;
    std::string jp = join_tokens(vocab.decode(p));
    std::string jt = join_tokens(vocab.decode(t));
    dist_total += edit_distance(jp, jt);
    chars_total += jt.size();
  }
  MetricsReport r;
  r.position_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  r.first_position_accuracy =
      static_cast<double>(first_correct) / static_cast<double>(targets.size());
  r.exact_match_rate =
      static_cast<double>(exact) / static_cast<double>(targets.size());
  r.cer = chars_total == 0
              ? 0.0
              : static_cast<double>(dist_total) / static_cast<double>(chars_total);
  r.sample_count = static_cast<int>(targets.size());
  return r;
}

AlignmentReport alignment_hit_rate(const Tensor<float>& attention,
                                   const std::vector<Rect>& bboxes,
                                   const FeatureGeom& geom, double tolerance_px) {
  if (attention.rank() != 2 || attention.dim(1) != geom.positions())
    throw ShapeError("alignment: attention is " + attention.shape_str() +
                     " but the grid has " + std::to_string(geom.positions()) +
                     " positions");
  if (static_cast<size_t>(attention.dim(0)) != bboxes.size())
    throw ShapeError("alignment: " + std::to_string(attention.dim(0)) +
                     " attention rows vs " + std::to_string(bboxes.size()) +
                     " boxes");
  AlignmentReport rep;
  int steps = attention.dim(0);
  int hits = 0;
  double entropy_sum = 0.0;
  for (int t = 0; t < steps; ++t) {
    int best = 0;
    double entropy = 0.0;
    for (int i = 0; i < geom.positions(); ++i) {
      float w = attention.at(t, i);
      if (w > attention.at(t, best)) best = i;
      if (w > 0.0f) entropy -= static_cast<double>(w) * std::log(static_cast<double>(w));
    }
    auto [cy, cx] = geom.center(best);
    const Rect& box = bboxes[static_cast<size_t>(t)];
    bool hit = false;
    if (!box.empty()) {
      Rect grown{box.x - tolerance_px, box.y - tolerance_px,
                 box.w + 2 * tolerance_px, box.h + 2 * tolerance_px};
      hit = grown.contains_point(cx, cy);
    }
    if (hit) ++hits;
    entropy_sum += entropy;
    rep.steps.push_back({t, best, cx, cy, hit, entropy});
  }
  rep.hit_rate = steps == 0 ? 0.0 : static_cast<double>(hits) / steps;
  rep.mean_entropy = steps == 0 ? 0.0 : entropy_sum / steps;
  return rep;
}

void export_attention_maps(const Tensor<float>& attention, const FeatureGeom& geom,
                           int image_h, int image_w, const std::string& prefix) {
  if (attention.rank() != 2 || attention.dim(1) != geom.positions())
    throw ShapeError("attention export: weights do not match the grid");
  std::string csv = "step,grid_row,grid_col,weight\n";
  for (int t = 0; t < attention.dim(0); ++t) {
    float peak = 0.0f;
    for (int i = 0; i < geom.positions(); ++i)
      peak = std::max(peak, attention.at(t, i));
    if (peak <= 0.0f) peak = 1.0f;
    Image heat({image_h, image_w});
    for (int y = 0; y < image_h; ++y) {
      double gy = (y - geom.offset_y) / geom.scale_y;
      gy = std::clamp(gy, 0.0, static_cast<double>(geom.grid_h - 1));
      int y0 = static_cast<int>(gy);
      int y1 = std::min(y0 + 1, geom.grid_h - 1);
      double fy = gy - y0;
      for (int x = 0; x < image_w; ++x) {
        double gx = (x - geom.offset_x) / geom.scale_x;
        gx = std::clamp(gx, 0.0, static_cast<double>(geom.grid_w - 1));
        int x0 = static_cast<int>(gx);
        int x1 = std::min(x0 + 1, geom.grid_w - 1);
        double fx = gx - x0;
        double v00 = attention.at(t, geom.flatten(y0, x0));
        double v01 = attention.at(t, geom.flatten(y0, x1));
        double v10 = attention.at(t, geom.flatten(y1, x0));
        double v11 = attention.at(t, geom.flatten(y1, x1));
        double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                   fy * ((1 - fx) * v10 + fx * v11);
        heat.at(y, x) = static_cast<float>(v / peak);
      }
    }
    write_pgm(prefix + "_step" + std::to_string(t) + ".pgm", heat);
    for (int gy = 0; gy < geom.grid_h; ++gy)
      for (int gx = 0; gx < geom.grid_w; ++gx)
        csv += std::to_string(t) + "," + std::to_string(gy) + "," +
               std::to_string(gx) + "," +
               format_double(attention.at(t, geom.flatten(gy, gx))) + "\n";
  }
  write_text_file(prefix + "_weights.csv", csv);
}

Tensor<float> read_attention_weights_csv(const std::string& path,
                                         const FeatureGeom& geom) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "step,grid_row,grid_col,weight")
    throw DataError("attention csv: bad header in " + path);
  std::vector<std::vector<float>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    int step, gy, gx;
    double w;
    if (!(ls >> step >> gy >> gx >> w))
      throw DataError("attention csv: malformed row in " + path);
    if (step < 0 || gy < 0 || gy >= geom.grid_h || gx < 0 || gx >= geom.grid_w)
      throw DataError("attention csv: index out of range in " + path);
    if (static_cast<size_t>(step) >= rows.size())
      rows.resize(static_cast<size_t>(step) + 1,
                  std::vector<float>(static_cast<size_t>(geom.positions())));
    rows[static_cast<size_t>(step)][static_cast<size_t>(geom.flatten(gy, gx))] =
        static_cast<float>(w);
  }
  Tensor<float> out({static_cast<int>(rows.size()), geom.positions()});
  for (size_t t = 0; t < rows.size(); ++t)
    for (int i = 0; i < geom.positions(); ++i)
      out.at(static_cast<int>(t), i) = rows[t][static_cast<size_t>(i)];
  return out;
}

EvalResult evaluate_model(Model<float>& model, const LoadedDataset& ds,
                          const std::vector<int>& indices, double tolerance_px) {
  if (indices.empty()) throw UsageError("evaluate_model: no samples selected");
  std::vector<std::vector<int>> preds, targets;
  int pooled_steps = 0, pooled_hits = 0;
  double pooled_entropy = 0.0;
  AlignmentReport pooled;
  for (int idx : indices) {
    const SampleManifest& m = ds.manifests.at(static_cast<size_t>(idx));
    Tensor<float> input = ink_input<float>(ds.images.at(static_cast<size_t>(idx)));
    auto rec = model.forward_free_running(input, ds.sequence_length + 1);
    preds.push_back(rec.codes);
    targets.push_back(m.codes);
    // Alignment over the steps that emitted codes (END step excluded).
    int compare = std::min(static_cast<int>(rec.codes.size()),
                           static_cast<int>(m.bboxes.size()));
    if (compare > 0) {
      Tensor<float> att({compare, model.geom().positions()});
      for (int t = 0; t < compare; ++t)
        for (int i = 0; i < model.geom().positions(); ++i)
          att.at(t, i) = rec.attention.at(t, i);
      std::vector<Rect> boxes(m.bboxes.begin(), m.bboxes.begin() + compare);
      AlignmentReport r =
          alignment_hit_rate(att, boxes, model.geom(), tolerance_px);
      for (const auto& s : r.steps) {
        if (s.hit) ++pooled_hits;
        pooled_entropy += s.entropy;
        ++pooled_steps;
      }
    }
  }
  EvalResult result;
  result.metrics = aggregate_metrics(preds, targets, ds.vocab);
  result.alignment.hit_rate =
      pooled_steps == 0 ? 0.0 : static_cast<double>(pooled_hits) / pooled_steps;
  result.alignment.mean_entropy =
      pooled_steps == 0 ? 0.0 : pooled_entropy / pooled_steps;
  return result;
}

}  // namespace csr
