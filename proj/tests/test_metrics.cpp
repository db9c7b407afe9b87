// Metric tests: the frozen worked transcription pair, edit-distance oracle
// equivalence, aggregation weighting, alignment hit-rate with entropy bounds,
// the geometric chance baseline for random attention, and export round trips.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "metrics.hpp"

using namespace csr;

namespace {

std::vector<std::string> toks(const std::string& joined) {
  return split_ws(joined);
}

// Independent full-matrix Levenshtein used as the oracle.
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

}  // namespace

TEST_CASE("worked pair: four substituted moves over sixteen positions") {
  // Expected sheet transcription and a prediction that misreads positions
  // 2, 4, 7, 8 (1-based): e5->c5, d5->d4, Bb2->Be2, e6->g6.
  auto target = toks("Nf3 e5 b3 d5 e3 Nf6 Bb2 e6 d4 Nc6 Bb5 a6 Bxc6 bxc6 O-O cxd4");
  auto pred = toks("Nf3 c5 b3 d4 e3 Nf6 Be2 g6 d4 Nc6 Bb5 a6 Bxc6 bxc6 O-O cxd4");
  REQUIRE(target.size() == 16);
  REQUIRE(pred.size() == 16);

  CHECK(position_accuracy_tokens(pred, target) == 0.75);  // 12/16 exactly

  // Each bad move differs by one character; joined target has 44 move chars
  // + 15 spaces = 59.
  std::string jt, jp;
  for (size_t i = 0; i < target.size(); ++i) {
    jt += (i ? " " : "") + target[i];
    jp += (i ? " " : "") + pred[i];
  }
  CHECK(jt.size() == 59);
  CHECK(edit_distance(jp, jt) == 4);
  CHECK(cer(pred, target) == doctest::Approx(4.0 / 59.0).epsilon(1e-12));
}

TEST_CASE("position accuracy: identity, truncation, and empty prediction") {
  std::vector<int> t = {4, 5, 6, 7};
  CHECK(position_accuracy(t, t) == 1.0);
  CHECK(position_accuracy({}, t) == 0.0);
  CHECK(position_accuracy({4, 5}, t) == 0.5);      // missing tail is wrong
  CHECK(position_accuracy({4, 9, 6, 7, 8}, t) == 0.75);  // extra tail ignored
  CHECK_THROWS_AS(position_accuracy({1}, {}), UsageError);
}

TEST_CASE("cer: zero on identity, normalized by target characters") {
  auto t = toks("e4 e5 Nf3");
  CHECK(cer(t, t) == 0.0);
  // prediction "e4" vs "e4 e5 Nf3": distance = 7 deletions; target length 9.
  CHECK(cer(toks("e4"), t) == doctest::Approx(7.0 / 9.0));
  CHECK_THROWS_AS(cer(t, {}), UsageError);
}

TEST_CASE("edit distance agrees with a brute-force oracle on 1000 random pairs") {
  Rng rng(20240817);
  const std::string alphabet = "abcNKQ ";
  for (int trial = 0; trial < 1000; ++trial) {
    auto make = [&](int max_len) {
      int len = rng.uniform_int(max_len + 1);
      std::string s;
      for (int i = 0; i < len; ++i)
        s += alphabet[static_cast<size_t>(rng.uniform_int(
            static_cast<int>(alphabet.size())))];
      return s;
    };
    std::string a = make(24), b = make(24);
    CHECK(edit_distance(a, b) == oracle_distance(a, b));
  }
}

TEST_CASE("aggregate metrics are position-weighted, not per-sample means") {
  Vocabulary vocab({"e4", "e5", "Nf3", "Nc6"});
  // Sample 1: 2/2 correct; sample 2: 0/6 -> pooled 2/8, not (1.0+0.0)/2.
  std::vector<std::vector<int>> targets = {{4, 5}, {6, 7, 6, 7, 6, 7}};
  std::vector<std::vector<int>> preds = {{4, 5}, {4, 4, 4, 4, 4, 4}};
  MetricsReport r = aggregate_metrics(preds, targets, vocab);
  CHECK(r.position_accuracy == 0.25);
  CHECK(r.first_position_accuracy == 0.5);
  CHECK(r.exact_match_rate == 0.5);
  CHECK(r.sample_count == 2);
  // Corpus CER pools distances over pooled target characters.
  // Sample 1 identical (0); sample 2: "e4 e4 e4 e4 e4 e4" vs
  // "Nf3 Nc6 Nf3 Nc6 Nf3 Nc6" -> distance 18 over 23 target chars + 0 over 5.
  CHECK(r.cer == doctest::Approx(18.0 / 28.0));

  // Exact match forces per-sample accuracy 1: single identical pair.
  MetricsReport one = aggregate_metrics({{4, 5}}, {{4, 5}}, vocab);
  CHECK(one.exact_match_rate == 1.0);
  CHECK(one.position_accuracy == 1.0);
  CHECK(one.cer == 0.0);
}

TEST_CASE("alignment: constructed one-hot attention on true cells hits 100%") {
  ModelConfig cfg = desk_model_config(12);
  FeatureGeom g = compute_feature_geom(cfg);
  SheetLayout layout = desk_layout();
  std::vector<Rect> boxes;
  Tensor<float> att({8, g.positions()});
  for (int step = 0; step < 8; ++step) {
    Rect cell = layout.cell_box(step / 2, step % 2);
    boxes.push_back(cell);
    // One-hot at the grid position whose center is nearest the cell center.
    double tx = cell.x + cell.w / 2, ty = cell.y + cell.h / 2;
    int best = 0;
    double best_d = 1e18;
    for (int i = 0; i < g.positions(); ++i) {
      auto [cy, cx] = g.center(i);
      double d = (cx - tx) * (cx - tx) + (cy - ty) * (cy - ty);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    att.at(step, best) = 1.0f;
  }
  AlignmentReport rep = alignment_hit_rate(att, boxes, g, 0.0);
  CHECK(rep.hit_rate == 1.0);
  // One-hot rows have exactly zero entropy.
  for (const auto& s : rep.steps) CHECK(s.entropy == 0.0);
}

TEST_CASE("alignment: uniform attention has entropy ln L; bounds hold") {
  ModelConfig cfg = desk_model_config(12);
  FeatureGeom g = compute_feature_geom(cfg);
  int l = g.positions();
  Tensor<float> att({1, l});
  att.fill(1.0f / static_cast<float>(l));
  std::vector<Rect> boxes = {desk_layout().cell_box(0, 0)};
  AlignmentReport rep = alignment_hit_rate(att, boxes, g, 0.0);
  CHECK(rep.steps[0].entropy == doctest::Approx(std::log(static_cast<double>(l)))
                                    .epsilon(1e-6));

  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<float> a({1, l});
    double sum = 0.0;
    for (int i = 0; i < l; ++i) {
      a.at(0, i) = static_cast<float>(rng.uniform());
      sum += a.at(0, i);
    }
    for (int i = 0; i < l; ++i) a.at(0, i) = static_cast<float>(a.at(0, i) / sum);
    AlignmentReport r = alignment_hit_rate(a, boxes, g, 0.0);
    CHECK(r.steps[0].entropy >= 0.0);
    CHECK(r.steps[0].entropy <= std::log(static_cast<double>(l)) + 1e-9);
  }
}

TEST_CASE("alignment: random attention hits at the geometric chance rate") {
  ModelConfig cfg = desk_model_config(12);
  FeatureGeom g = compute_feature_geom(cfg);
  SheetLayout layout = desk_layout();
  double chance = (layout.cell_w * static_cast<double>(layout.cell_h)) /
                  (layout.width() * static_cast<double>(layout.height()));
  Rng rng(424242);
  int trials = 500, hits = 0;
  for (int trial = 0; trial < trials; ++trial) {
    Tensor<float> att({1, g.positions()});
    for (int i = 0; i < g.positions(); ++i)
      att.at(0, i) = static_cast<float>(rng.uniform());
    int step = trial % 8;
    std::vector<Rect> boxes = {layout.cell_box(step / 2, step % 2)};
    AlignmentReport r = alignment_hit_rate(att, boxes, g, 0.0);
    if (r.steps[0].hit) ++hits;
  }
  double rate = static_cast<double>(hits) / trials;
  double sigma = std::sqrt(chance * (1 - chance) / trials);
  CHECK(std::abs(rate - chance) <= 3 * sigma + 1e-12);
}

TEST_CASE("alignment: shape mismatches are rejected") {
  ModelConfig cfg = desk_model_config(12);
  FeatureGeom g = compute_feature_geom(cfg);
  Tensor<float> att({2, g.positions()});
  std::vector<Rect> one_box = {desk_layout().cell_box(0, 0)};
  CHECK_THROWS_AS(alignment_hit_rate(att, one_box, g, 0.0), ShapeError);
  Tensor<float> bad({1, g.positions() + 1});
  CHECK_THROWS_AS(alignment_hit_rate(bad, one_box, g, 0.0), ShapeError);
}

TEST_CASE("attention export: uniform map is constant, csv round-trips") {
  ModelConfig cfg = desk_model_config(12);
  FeatureGeom g = compute_feature_geom(cfg);
  Tensor<float> att({2, g.positions()});
  att.fill(1.0f / static_cast<float>(g.positions()));
  Rng rng(99);
  for (int i = 0; i < g.positions(); ++i)
    att.at(1, i) = static_cast<float>(rng.uniform());

  std::string prefix = "attn_export_test";
  export_attention_maps(att, g, cfg.image_h, cfg.image_w, prefix);

  Image map0 = read_pgm(prefix + "_step0.pgm");
  CHECK(map0.dim(0) == cfg.image_h);
  CHECK(map0.dim(1) == cfg.image_w);
  float lo = 1.0f, hi = 0.0f;
  for (size_t i = 0; i < map0.size(); ++i) {
    lo = std::min(lo, map0[i]);
    hi = std::max(hi, map0[i]);
  }
  CHECK(lo == hi);  // uniform weights -> constant map
  CHECK(hi == 1.0f);

  Tensor<float> back = read_attention_weights_csv(prefix + "_weights.csv", g);
  REQUIRE(back.shape() == att.shape());
  for (size_t i = 0; i < att.size(); ++i)
    CHECK(std::abs(back[i] - att[i]) < 1e-6f);

  std::remove((prefix + "_step0.pgm").c_str());
  std::remove((prefix + "_step1.pgm").c_str());
  std::remove((prefix + "_weights.csv").c_str());
}

TEST_CASE("attention export: heat-map maximum lands in the argmax cell") {
  ModelConfig cfg = desk_model_config(12);
  FeatureGeom g = compute_feature_geom(cfg);
  Tensor<float> att({1, g.positions()});
  int target = g.flatten(4, 7);
  att.at(0, target) = 1.0f;
  std::string prefix = "attn_peak_test";
  export_attention_maps(att, g, cfg.image_h, cfg.image_w, prefix);
  Image heat = read_pgm(prefix + "_step0.pgm");
  int by = 0, bx = 0;
  for (int y = 0; y < heat.dim(0); ++y)
    for (int x = 0; x < heat.dim(1); ++x)
      if (heat.at(y, x) > heat.at(by, bx)) {
        by = y;
        bx = x;
      }
  auto [cy, cx] = g.center(target);
  CHECK(std::abs(by - cy) <= g.scale_y / 2 + 1);
  CHECK(std::abs(bx - cx) <= g.scale_x / 2 + 1);
  std::remove((prefix + "_step0.pgm").c_str());
  std::remove((prefix + "_weights.csv").c_str());
}

TEST_CASE("evaluate_model: runs free decode over a generated dataset") {
  Vocabulary vocab({"e4", "e5", "Nf3", "Nc6", "Bb5", "a6", "Ba4", "Nf6"});
  DatasetSpec spec;
  spec.size = 3;
  spec.layout = desk_layout();
  spec.styles = StylePool::make(StylePool::Difficulty::Easy, 2, 51);
  spec.source.kind = SourceKind::UniformRandom;
  spec.glyphs_per_token = 1;
  spec.seed = 9001;
  std::string dir = "eval_smoke_dataset";
  generate_dataset(spec, vocab, dir);
  LoadedDataset ds = load_dataset(dir);

  Model<float> m(desk_model_config(vocab.size()), vocab.content_hash(), 5);
  EvalResult res = evaluate_model(m, ds, {0, 1, 2}, 2.0);
  CHECK(res.metrics.sample_count == 3);
  CHECK(res.metrics.position_accuracy >= 0.0);
  CHECK(res.metrics.position_accuracy <= 1.0);
  CHECK(res.metrics.cer >= 0.0);
  CHECK(res.alignment.hit_rate >= 0.0);
  CHECK(res.alignment.hit_rate <= 1.0);
  ModelConfig cfg = desk_model_config(vocab.size());
  double lnl = std::log(static_cast<double>(compute_feature_geom(cfg).positions()));
  CHECK(res.alignment.mean_entropy <= lnl + 1e-9);
}
