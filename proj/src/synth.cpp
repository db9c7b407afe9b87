#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace csr {

using json = nlohmann::json;

namespace {

using Polyline = std::vector<std::pair<float, float>>;
using CharSkeleton = std::vector<Polyline>;

// Per-character stroke skeletons in a unit box (x right, y down, y=0 top).
const std::map<char, CharSkeleton>& skeleton_table() {
  static const std::map<char, CharSkeleton> table = {
      {'0', {{{0.5f, 0.1f}, {0.76f, 0.26f}, {0.78f, 0.7f}, {0.58f, 0.9f},
              {0.42f, 0.9f}, {0.22f, 0.7f}, {0.24f, 0.26f}, {0.5f, 0.1f}}}},
      {'1', {{{0.35f, 0.22f}, {0.55f, 0.1f}, {0.55f, 0.9f}}}},
      {'2', {{{0.22f, 0.26f}, {0.32f, 0.1f}, {0.68f, 0.1f}, {0.78f, 0.3f},
              {0.2f, 0.9f}, {0.8f, 0.9f}}}},
      {'3', {{{0.2f, 0.15f}, {0.7f, 0.1f}, {0.78f, 0.3f}, {0.45f, 0.48f},
              {0.78f, 0.68f}, {0.7f, 0.9f}, {0.2f, 0.85f}}}},
      {'4', {{{0.65f, 0.9f}, {0.65f, 0.1f}, {0.2f, 0.62f}, {0.85f, 0.62f}}}},
      {'5', {{{0.78f, 0.1f}, {0.26f, 0.1f}, {0.22f, 0.48f}, {0.66f, 0.44f},
              {0.8f, 0.66f}, {0.66f, 0.9f}, {0.2f, 0.86f}}}},
      {'6', {{{0.7f, 0.1f}, {0.32f, 0.42f}, {0.22f, 0.68f}, {0.36f, 0.9f},
              {0.64f, 0.9f}, {0.76f, 0.7f}, {0.6f, 0.52f}, {0.26f, 0.6f}}}},
      {'7', {{{0.2f, 0.1f}, {0.8f, 0.1f}, {0.45f, 0.9f}}}},
      {'8', {{{0.5f, 0.1f}, {0.74f, 0.2f}, {0.6f, 0.44f}, {0.32f, 0.56f},
              {0.26f, 0.8f}, {0.5f, 0.9f}, {0.74f, 0.8f}, {0.66f, 0.56f},
              {0.36f, 0.44f}, {0.26f, 0.2f}, {0.5f, 0.1f}}}},
      {'9', {{{0.74f, 0.36f}, {0.5f, 0.48f}, {0.26f, 0.32f}, {0.4f, 0.1f},
              {0.68f, 0.1f}, {0.74f, 0.36f}, {0.58f, 0.9f}}}},
      {'a', {{{0.7f, 0.46f}, {0.36f, 0.4f}, {0.24f, 0.66f}, {0.38f, 0.88f},
              {0.7f, 0.84f}},
             {{0.7f, 0.42f}, {0.7f, 0.9f}}}},
      {'b', {{{0.26f, 0.1f}, {0.26f, 0.9f}},
             {{0.26f, 0.46f}, {0.6f, 0.4f}, {0.76f, 0.64f}, {0.6f, 0.9f},
              {0.26f, 0.84f}}}},
      {'c', {{{0.74f, 0.46f}, {0.46f, 0.38f}, {0.26f, 0.62f}, {0.46f, 0.9f},
              {0.74f, 0.82f}}}},
      {'d', {{{0.72f, 0.1f}, {0.72f, 0.9f}},
             {{0.72f, 0.46f}, {0.4f, 0.4f}, {0.24f, 0.64f}, {0.4f, 0.9f},
              {0.72f, 0.84f}}}},
      {'e', {{{0.26f, 0.62f}, {0.74f, 0.58f}, {0.62f, 0.4f}, {0.32f, 0.42f},
              {0.24f, 0.66f}, {0.42f, 0.9f}, {0.74f, 0.84f}}}},
      {'f', {{{0.68f, 0.16f}, {0.5f, 0.1f}, {0.4f, 0.3f}, {0.4f, 0.9f}},
             {{0.24f, 0.46f}, {0.6f, 0.46f}}}},
      {'g', {{{0.7f, 0.42f}, {0.4f, 0.38f}, {0.26f, 0.6f}, {0.4f, 0.8f},
              {0.7f, 0.76f}},
             {{0.7f, 0.4f}, {0.72f, 0.92f}, {0.4f, 0.97f}}}},
      {'h', {{{0.26f, 0.1f}, {0.26f, 0.9f}},
             {{0.26f, 0.52f}, {0.56f, 0.4f}, {0.72f, 0.56f}, {0.72f, 0.9f}}}},
      {'x', {{{0.28f, 0.4f}, {0.72f, 0.9f}}, {{0.72f, 0.4f}, {0.28f, 0.9f}}}},
      {'K', {{{0.26f, 0.1f}, {0.26f, 0.9f}},
             {{0.74f, 0.1f}, {0.3f, 0.54f}},
             {{0.46f, 0.44f}, {0.78f, 0.9f}}}},
      {'Q', {{{0.5f, 0.1f}, {0.74f, 0.24f}, {0.78f, 0.58f}, {0.6f, 0.86f},
              {0.4f, 0.86f}, {0.22f, 0.58f}, {0.26f, 0.24f}, {0.5f, 0.1f}},
             {{0.58f, 0.7f}, {0.85f, 0.94f}}}},
      {'R', {{{0.26f, 0.1f}, {0.26f, 0.9f}},
             {{0.26f, 0.12f}, {0.64f, 0.1f}, {0.76f, 0.3f}, {0.6f, 0.5f},
              {0.26f, 0.5f}},
             {{0.54f, 0.5f}, {0.8f, 0.9f}}}},
      {'B', {{{0.26f, 0.1f}, {0.26f, 0.9f}},
             {{0.26f, 0.1f}, {0.6f, 0.12f}, {0.72f, 0.28f}, {0.6f, 0.47f},
              {0.26f, 0.47f}},
             {{0.26f, 0.47f}, {0.64f, 0.5f}, {0.78f, 0.7f}, {0.62f, 0.9f},
              {0.26f, 0.88f}}}},
      {'N', {{{0.26f, 0.9f}, {0.26f, 0.1f}, {0.72f, 0.9f}, {0.72f, 0.1f}}}},
      {'T', {{{0.2f, 0.1f}, {0.8f, 0.1f}}, {{0.5f, 0.1f}, {0.5f, 0.9f}}}},
      {'D', {{{0.26f, 0.1f}, {0.26f, 0.9f}},
             {{0.26f, 0.1f}, {0.6f, 0.14f}, {0.76f, 0.5f}, {0.6f, 0.86f},
              {0.26f, 0.9f}}}},
      {'C', {{{0.78f, 0.24f}, {0.55f, 0.1f}, {0.3f, 0.24f}, {0.22f, 0.5f},
              {0.3f, 0.76f}, {0.55f, 0.9f}, {0.78f, 0.76f}}}},
      {'O', {{{0.5f, 0.1f}, {0.73f, 0.24f}, {0.78f, 0.55f}, {0.6f, 0.88f},
              {0.4f, 0.88f}, {0.22f, 0.55f}, {0.27f, 0.24f}, {0.5f, 0.1f}}}},
      {'U', {{{0.26f, 0.1f}, {0.26f, 0.68f}, {0.4f, 0.9f}, {0.6f, 0.9f},
              {0.74f, 0.68f}, {0.74f, 0.1f}}}},
      {'-', {{{0.25f, 0.5f}, {0.75f, 0.5f}}}},
      {'=', {{{0.25f, 0.42f}, {0.75f, 0.42f}}, {{0.25f, 0.62f}, {0.75f, 0.62f}}}},
      {'+', {{{0.5f, 0.25f}, {0.5f, 0.75f}}, {{0.25f, 0.5f}, {0.75f, 0.5f}}}},
      {'#', {{{0.4f, 0.2f}, {0.35f, 0.8f}},
             {{0.65f, 0.2f}, {0.6f, 0.8f}},
             {{0.25f, 0.42f}, {0.78f, 0.38f}},
             {{0.22f, 0.62f}, {0.75f, 0.58f}}}},
  };
  return table;
}

double dist_point_segment(double px, double py, double x0, double y0, double x1,
                          double y1) {
  double dx = x1 - x0, dy = y1 - y0;
  double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - x0) * dx + (py - y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double cx = x0 + t * dx, cy = y0 + t * dy;
  return std::hypot(px - cx, py - cy);
}

void rasterize_segment(Image& img, double x0, double y0, double x1, double y1,
                       double radius) {
  int h = img.dim(0), w = img.dim(1);
  int ymin = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - radius - 1)));
  int ymax = std::min(h - 1, static_cast<int>(std::ceil(std::max(y0, y1) + radius + 1)));
  int xmin = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - radius - 1)));
  int xmax = std::min(w - 1, static_cast<int>(std::ceil(std::max(x0, x1) + radius + 1)));
  for (int y = ymin; y <= ymax; ++y)
    for (int x = xmin; x <= xmax; ++x) {
      double d = dist_point_segment(x + 0.5, y + 0.5, x0, y0, x1, y1);
      double cov = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      if (cov <= 0) continue;
      float v = static_cast<float>(1.0 - cov);
      float& px = img[static_cast<size_t>(y) * w + x];
      px = std::min(px, v);
    }
}

Rect measure_ink(const Image& img, float threshold = 0.995f) {
  int h = img.dim(0), w = img.dim(1);
  int minx = w, miny = h, maxx = -1, maxy = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (img[static_cast<size_t>(y) * w + x] < threshold) {
        minx = std::min(minx, x);
        miny = std::min(miny, y);
        maxx = std::max(maxx, x);
        maxy = std::max(maxy, y);
      }
  if (maxx < 0) return Rect{0, 0, 0, 0};
  return Rect{static_cast<double>(minx), static_cast<double>(miny),
              static_cast<double>(maxx - minx + 1),
              static_cast<double>(maxy - miny + 1)};
}

bool is_special_token(const std::string& t) {
  return t == "START" || t == "END" || t == "PAD" || t == "UNK";
}

void fill_rect_min(Image& img, int x0, int y0, int w, int h, float v) {
  int H = img.dim(0), W = img.dim(1);
  for (int y = std::max(0, y0); y < std::min(H, y0 + h); ++y)
    for (int x = std::max(0, x0); x < std::min(W, x0 + w); ++x) {
      float& p = img[static_cast<size_t>(y) * W + x];
      p = std::min(p, v);
    }
}

constexpr float kGridGray = 0.55f;
constexpr uint64_t kStreamBank = 11;
constexpr uint64_t kStreamSample = 12;

GlyphStyle printed_style() {
  GlyphStyle s;
  s.slant = 0.0;
  s.stroke_width = 1.3;
  s.baseline_wobble = 0.0;
  s.scale = 0.92;
  s.seed = 424242;
  return s;
}

json rect_to_json(const Rect& r) { return json::array({r.x, r.y, r.w, r.h}); }

Rect rect_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("manifest: bad bbox");
  return Rect{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
              j[3].get<double>()};
}

}  // namespace

bool is_drawable(const std::string& token) {
  if (token.empty()) return false;
  const auto& table = skeleton_table();
  for (char c : token)
    if (!table.count(c)) return false;
  return true;
}

Glyph render_glyph(const std::string& token, const GlyphStyle& style, int cell_w,
                   int cell_h) {
  const auto& table = skeleton_table();
  for (char c : token)
    if (!table.count(c))
      throw DataError("render_glyph: no skeleton for character '" +
                      std::string(1, c) + "' in token '" + token + "'");
  if (token.empty()) throw DataError("render_glyph: empty token");
  if (style.stroke_width < 1.0)
    throw DataError("render_glyph: stroke_width must be >= 1");
  if (style.scale <= 0.5 || style.scale > 1.5)
    throw DataError("render_glyph: scale must be in (0.5, 1.5]");

  Image img({cell_h, cell_w});
  img.fill(1.0f);
  const double stroke = style.stroke_width;
  const double radius = stroke / 2.0;
  const double margin = radius + 2.0;  // hard clamp keeps all ink inside
  const int len = static_cast<int>(token.size());
  const double pad = 1.5 + radius;
  const double adv =
      std::min((cell_w - 2.0 * pad) / len, cell_h * 0.62);
  const double base_w = adv * 0.90;
  const double base_h = cell_h * 0.70;
  const double cy = cell_h * 0.52;
  const double shear = std::tan(style.slant);

  Rng rng(derive_seed(style.seed, fnv1a64(token)));
  const double wob_phase = rng.uniform(0.0, 6.28318530718);
  const double wob_freq = rng.uniform(0.12, 0.40);
  const double jit = 0.30;

  for (int i = 0; i < len; ++i) {
    const CharSkeleton& sk = table.at(token[static_cast<size_t>(i)]);
    const double cx = pad + (i + 0.5) * adv;
    const double s = style.scale * (1.0 + 0.05 * rng.normal());
    for (const Polyline& line : sk) {
      double prev_x = 0, prev_y = 0;
      for (size_t p = 0; p < line.size(); ++p) {
        double px = cx + (line[p].first - 0.5) * base_w * s;
        double py = cy + (line[p].second - 0.5) * base_h * s;
        px += (cy - py) * shear;
        py += style.baseline_wobble * std::sin(wob_phase + px * wob_freq);
        px += rng.normal() * jit;
        py += rng.normal() * jit;
        px = std::clamp(px, margin, cell_w - margin);
        py = std::clamp(py, margin, cell_h - margin);
        if (p > 0) rasterize_segment(img, prev_x, prev_y, px, py, radius);
        prev_x = px;
        prev_y = py;
      }
    }
  }
  Glyph g;
  g.ink_bbox = measure_ink(img);
  g.image = std::move(img);
  return g;
}

Rect SheetLayout::cell_box(int row, int col) const {
  double x = margin_left + 2.0 * grid_thickness + number_col_width +
             col * (cell_w + grid_thickness);
  double y = margin_top + grid_thickness + row * (cell_h + grid_thickness);
  return Rect{x, y, static_cast<double>(cell_w), static_cast<double>(cell_h)};
}

Rect SheetLayout::number_box(int row) const {
  double x = margin_left + grid_thickness;
  double y = margin_top + grid_thickness + row * (cell_h + grid_thickness);
  return Rect{x, y, static_cast<double>(number_col_width),
              static_cast<double>(cell_h)};
}

void SheetLayout::validate() const {
  if (rows < 1 || cell_w < 8 || cell_h < 8 || number_col_width < 4 ||
      grid_thickness < 1 || margin_left < 0 || margin_top < 0 || margin_right < 0 ||
      margin_bottom < 0)
    throw UsageError("sheet layout: dimensions out of range");
}

SheetLayout reference_layout() {
  SheetLayout l;
  l.rows = 8;
  l.cell_w = 330;
  l.cell_h = 102;
  l.number_col_width = 60;
  l.grid_thickness = 2;
  l.margin_left = 36;
  l.margin_right = 36;
  l.margin_top = 14;
  l.margin_bottom = 14;
  return l;
}

SheetLayout desk_layout() {
  SheetLayout l;
  l.rows = 4;
  l.cell_w = 46;
  l.cell_h = 22;
  l.number_col_width = 12;
  l.grid_thickness = 1;
  l.margin_left = 2;
  l.margin_right = 2;
  l.margin_top = 2;
  l.margin_bottom = 3;
  return l;
}

GlyphStyle StylePool::style_for(uint64_t style_seed) const {
  Rng rng(style_seed);
  GlyphStyle s;
  s.slant = rng.uniform(slant_min, slant_max);
  s.stroke_width = rng.uniform(stroke_min, stroke_max);
  s.baseline_wobble = rng.uniform(wobble_min, wobble_max);
  s.scale = rng.uniform(scale_min, scale_max);
  s.seed = style_seed;
  return s;
}

bool StylePool::disjoint_seeds(const StylePool& other) const {
  std::set<uint64_t> mine(style_seeds.begin(), style_seeds.end());
  for (uint64_t s : other.style_seeds)
    if (mine.count(s)) return false;
  return true;
}

StylePool StylePool::make(Difficulty d, int count, uint64_t stream_seed) {
  if (count < 1) throw UsageError("style pool: count must be >= 1");
  StylePool p;
  switch (d) {
    case Difficulty::Easy:
      p.slant_min = -0.06; p.slant_max = 0.06;
      p.stroke_min = 1.6; p.stroke_max = 2.1;
      p.wobble_min = 0.0; p.wobble_max = 0.3;
      p.scale_min = 0.95; p.scale_max = 1.08;
      break;
    case Difficulty::Standard:
      p.slant_min = -0.20; p.slant_max = 0.20;
      p.stroke_min = 1.2; p.stroke_max = 2.3;
      p.wobble_min = 0.2; p.wobble_max = 0.8;
      p.scale_min = 0.85; p.scale_max = 1.15;
      break;
    case Difficulty::Hard:
      p.slant_min = -0.32; p.slant_max = 0.32;
      p.stroke_min = 1.0; p.stroke_max = 2.6;
      p.wobble_min = 0.6; p.wobble_max = 1.5;
      p.scale_min = 0.72; p.scale_max = 1.28;
      break;
  }
  for (int i = 0; i < count; ++i)
    p.style_seeds.push_back(derive_seed(stream_seed, 7001, static_cast<uint64_t>(i)));
  return p;
}

GlyphBank GlyphBank::build(const Vocabulary& vocab, const StylePool& pool,
                           int variants_per_token, int cell_w, int cell_h,
                           uint64_t seed) {
  if (variants_per_token < 1)
    throw UsageError("glyph bank: variants_per_token must be >= 1");
  if (pool.style_seeds.empty()) throw UsageError("glyph bank: empty style pool");
  GlyphBank bank;
  for (int c = Vocabulary::kNumSpecials; c < vocab.size(); ++c) {
    const std::string& token = vocab.token(c);
    if (!is_drawable(token))
      throw DataError("glyph bank: token '" + token + "' is not drawable");
    std::vector<Glyph> variants;
    for (int v = 0; v < variants_per_token; ++v) {
      uint64_t pick = derive_seed(seed, static_cast<uint64_t>(c),
                                  static_cast<uint64_t>(v));
      uint64_t style_seed =
          pool.style_seeds[static_cast<size_t>(pick % pool.style_seeds.size())];
      variants.push_back(render_glyph(token, pool.style_for(style_seed), cell_w,
                                      cell_h));
    }
    bank.glyphs_[token] = std::move(variants);
  }
  return bank;
}

const Glyph& GlyphBank::pick(const std::string& token, Rng& rng) const {
  auto it = glyphs_.find(token);
  if (it == glyphs_.end())
    throw DataError("compose: no glyph for token '" + token + "'");
  return it->second[static_cast<size_t>(
      rng.uniform_int(static_cast<int>(it->second.size())))];
}

int GlyphBank::variants(const std::string& token) const {
  auto it = glyphs_.find(token);
  return it == glyphs_.end() ? 0 : static_cast<int>(it->second.size());
}

SampledSequence sample_sequence(const SequenceSource& src, int length,
                                uint64_t seed) {
  if (length < 1) throw UsageError("sample_sequence: length must be >= 1");
  if (src.mutation_prob < 0.0 || src.mutation_prob > 1.0)
    throw UsageError("sample_sequence: mutation_prob must be in [0,1]");
  if (src.vocab_size < Vocabulary::kNumSpecials + 1)
    throw UsageError("sample_sequence: vocab_size too small");
  const int lo = Vocabulary::kNumSpecials;
  const int span = src.vocab_size - lo;
  Rng rng(seed);
  SampledSequence out;
  if (src.kind == SourceKind::TemplateWithMutation) {
    if (src.templates.empty())
      throw DataError("sample_sequence: template mode with no templates");
    int ti = rng.uniform_int(static_cast<int>(src.templates.size()));
    const std::vector<int>& tpl = src.templates[static_cast<size_t>(ti)];
    if (static_cast<size_t>(length) > tpl.size())
      throw DataError("sample_sequence: template shorter than requested length " +
                      std::to_string(length));
    out.codes.assign(tpl.begin(), tpl.begin() + length);
    out.template_id = ti;
    for (int& c : out.codes)
      if (rng.bernoulli(src.mutation_prob)) c = lo + rng.uniform_int(span);
  } else {
    out.codes.reserve(static_cast<size_t>(length));
    for (int i = 0; i < length; ++i) out.codes.push_back(lo + rng.uniform_int(span));
  }
  return out;
}

ComposedSheet compose_sheet(const std::vector<std::string>& tokens,
                            const SheetLayout& layout, const GlyphBank& bank,
                            uint64_t seed) {
  layout.validate();
  if (static_cast<int>(tokens.size()) != layout.sequence_length())
    throw ShapeError("compose: expected " + std::to_string(layout.sequence_length()) +
                     " tokens, got " + std::to_string(tokens.size()));
  const int W = layout.width(), H = layout.height();
  ComposedSheet sheet;
  sheet.image = Image({H, W});
  sheet.image.fill(1.0f);

  // Grid lines over the table area.
  const int t = layout.grid_thickness;
  const int table_w = 4 * t + layout.number_col_width + 2 * layout.cell_w;
  const int table_h = (layout.rows + 1) * t + layout.rows * layout.cell_h;
  const int x0 = layout.margin_left, y0 = layout.margin_top;
  const int xs[4] = {x0, x0 + t + layout.number_col_width,
                     x0 + 2 * t + layout.number_col_width + layout.cell_w,
                     x0 + 3 * t + layout.number_col_width + 2 * layout.cell_w};
  for (int x : xs) fill_rect_min(sheet.image, x, y0, t, table_h, kGridGray);
  for (int r = 0; r <= layout.rows; ++r)
    fill_rect_min(sheet.image, x0, y0 + r * (t + layout.cell_h), table_w, t,
                  kGridGray);

  // Printed row numbers (distractor ink outside the move cells).
  for (int r = 0; r < layout.rows; ++r) {
    Rect nb = layout.number_box(r);
    Glyph num = render_glyph(std::to_string(r + 1), printed_style(),
                             static_cast<int>(nb.w), static_cast<int>(nb.h));
    for (int y = 0; y < num.image.dim(0); ++y)
      for (int x = 0; x < num.image.dim(1); ++x) {
        float& p = sheet.image[(static_cast<size_t>(y + static_cast<int>(nb.y))) * W +
                               x + static_cast<int>(nb.x)];
        p = std::min(p, num.image[static_cast<size_t>(y) * num.image.dim(1) + x]);
      }
  }

  Rng rng(seed);
  for (int i = 0; i < layout.sequence_length(); ++i) {
    const int row = i / 2, col = i % 2;
    Rect cell = layout.cell_box(row, col);
    const std::string& token = tokens[static_cast<size_t>(i)];
    if (is_special_token(token)) {
      sheet.bboxes.push_back(Rect{cell.x, cell.y, 0, 0});
      continue;
    }
    const Glyph& g = bank.pick(token, rng);
    if (g.image.dim(0) != layout.cell_h || g.image.dim(1) != layout.cell_w)
      throw ShapeError("compose: glyph size does not match layout cell");
    const int cx = static_cast<int>(cell.x), cy2 = static_cast<int>(cell.y);
    for (int y = 0; y < layout.cell_h; ++y)
      for (int x = 0; x < layout.cell_w; ++x) {
        float& p = sheet.image[static_cast<size_t>(y + cy2) * W + x + cx];
        p = std::min(p, g.image[static_cast<size_t>(y) * layout.cell_w + x]);
      }
    Rect bbox{cell.x + g.ink_bbox.x, cell.y + g.ink_bbox.y, g.ink_bbox.w,
              g.ink_bbox.h};
    if (g.ink_bbox.empty() || !bbox.inside(cell))
      throw NumericError("compose: ink bbox escapes its cell for '" + token + "'");
    sheet.bboxes.push_back(bbox);
  }
  return sheet;
}

Image downsample_half(const Image& img) {
  int oh = img.dim(0) / 2, ow = img.dim(1) / 2, w = img.dim(1);
  Image out({oh, ow});
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      float s = img[static_cast<size_t>(2 * y) * w + 2 * x] +
                img[static_cast<size_t>(2 * y) * w + 2 * x + 1] +
                img[static_cast<size_t>(2 * y + 1) * w + 2 * x] +
                img[static_cast<size_t>(2 * y + 1) * w + 2 * x + 1];
      out[static_cast<size_t>(y) * ow + x] = s * 0.25f;
    }
  return out;
}

void write_pgm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image: " + path);
  int h = img.dim(0), w = img.dim(1);
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float v = img[static_cast<size_t>(y) * w + x];
      int b = static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      row[static_cast<size_t>(x)] = static_cast<unsigned char>(b);
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw DataError("write failed: " + path);
}

Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path);
  auto next_token = [&]() -> std::string {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n') {}
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok += static_cast<char>(c);
    }
    return tok;
  };
  if (next_token() != "P5") throw DataError("not a binary PGM: " + path);
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw DataError("bad PGM header: " + path);
  }
  if (w < 1 || h < 1 || maxval != 255)
    throw DataError("unsupported PGM dimensions: " + path);
  std::vector<unsigned char> bytes(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw DataError("truncated PGM: " + path);
  Image img({h, w});
  for (size_t i = 0; i < bytes.size(); ++i)
    img[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

std::string manifest_to_json_line(const SampleManifest& m) {
  json j;
  j["image"] = m.image_path;
  j["codes"] = m.codes;
  json boxes = json::array();
  for (const Rect& r : m.bboxes) boxes.push_back(rect_to_json(r));
  j["bboxes"] = boxes;
  j["source"] = m.source;
  j["seed"] = m.seed;
  return j.dump();
}

SampleManifest manifest_from_json_line(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) throw DataError("manifest: invalid JSON line");
  SampleManifest m;
  try {
    m.image_path = j.at("image").get<std::string>();
    m.codes = j.at("codes").get<std::vector<int>>();
    for (const json& b : j.at("bboxes")) m.bboxes.push_back(rect_from_json(b));
    m.source = j.at("source").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  if (m.codes.size() != m.bboxes.size())
    throw DataError("manifest: codes/bboxes length mismatch");
  return m;
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw DataError(std::string("dataset spec: unknown key '") + it.key() +
                      "' in " + where);
  }
}

json style_pool_to_json(const StylePool& p) {
  json j;
  j["seeds"] = p.style_seeds;
  j["slant"] = {p.slant_min, p.slant_max};
  j["stroke"] = {p.stroke_min, p.stroke_max};
  j["wobble"] = {p.wobble_min, p.wobble_max};
  j["scale"] = {p.scale_min, p.scale_max};
  return j;
}

StylePool style_pool_from_json(const json& j) {
  reject_unknown(j, {"seeds", "slant", "stroke", "wobble", "scale"}, "styles");
  StylePool p;
  p.style_seeds = j.at("seeds").get<std::vector<uint64_t>>();
  p.slant_min = j.at("slant")[0].get<double>();
  p.slant_max = j.at("slant")[1].get<double>();
  p.stroke_min = j.at("stroke")[0].get<double>();
  p.stroke_max = j.at("stroke")[1].get<double>();
  p.wobble_min = j.at("wobble")[0].get<double>();
  p.wobble_max = j.at("wobble")[1].get<double>();
  p.scale_min = j.at("scale")[0].get<double>();
  p.scale_max = j.at("scale")[1].get<double>();
  return p;
}

json layout_to_json(const SheetLayout& l) {
  json j;
  j["rows"] = l.rows;
  j["cell_w"] = l.cell_w;
  j["cell_h"] = l.cell_h;
  j["number_col_width"] = l.number_col_width;
  j["grid_thickness"] = l.grid_thickness;
  j["margin_left"] = l.margin_left;
  j["margin_top"] = l.margin_top;
  j["margin_right"] = l.margin_right;
  j["margin_bottom"] = l.margin_bottom;
  return j;
}

SheetLayout layout_from_json(const json& j) {
  reject_unknown(j,
                 {"rows", "cell_w", "cell_h", "number_col_width", "grid_thickness",
                  "margin_left", "margin_top", "margin_right", "margin_bottom"},
                 "layout");
  SheetLayout l;
  l.rows = j.at("rows").get<int>();
  l.cell_w = j.at("cell_w").get<int>();
  l.cell_h = j.at("cell_h").get<int>();
  l.number_col_width = j.at("number_col_width").get<int>();
  l.grid_thickness = j.at("grid_thickness").get<int>();
  l.margin_left = j.at("margin_left").get<int>();
  l.margin_top = j.at("margin_top").get<int>();
  l.margin_right = j.at("margin_right").get<int>();
  l.margin_bottom = j.at("margin_bottom").get<int>();
  return l;
}

}  // namespace

std::string dataset_spec_to_json(const DatasetSpec& spec) {
  json j;
  j["size"] = spec.size;
  j["seed"] = spec.seed;
  j["resolution"] = spec.resolution == Resolution::Half ? "half" : "full";
  j["glyphs_per_token"] = spec.glyphs_per_token;
  j["sequence_length"] = spec.sequence_length;
  j["layout"] = layout_to_json(spec.layout);
  j["styles"] = style_pool_to_json(spec.styles);
  json src;
  src["kind"] =
      spec.source.kind == SourceKind::TemplateWithMutation ? "template" : "random";
  src["mutation_prob"] = spec.source.mutation_prob;
  src["vocab_size"] = spec.source.vocab_size;
  src["templates"] = spec.source.templates;
  j["source"] = src;
  return j.dump(2) + "\n";
}

DatasetSpec dataset_spec_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("dataset spec: invalid JSON");
  reject_unknown(j,
                 {"size", "seed", "resolution", "glyphs_per_token",
                  "sequence_length", "layout", "styles", "source"},
                 "dataset spec");
  DatasetSpec spec;
  try {
    spec.size = j.at("size").get<int>();
    spec.seed = j.at("seed").get<uint64_t>();
    std::string res = j.at("resolution").get<std::string>();
    if (res != "full" && res != "half")
      throw DataError("dataset spec: resolution must be full|half");
    spec.resolution = res == "half" ? Resolution::Half : Resolution::Full;
    spec.glyphs_per_token = j.at("glyphs_per_token").get<int>();
    spec.sequence_length = j.at("sequence_length").get<int>();
    spec.layout = layout_from_json(j.at("layout"));
    spec.styles = style_pool_from_json(j.at("styles"));
    const json& src = j.at("source");
    reject_unknown(src, {"kind", "mutation_prob", "vocab_size", "templates"},
                   "source");
    std::string kind = src.at("kind").get<std::string>();
    if (kind != "template" && kind != "random")
      throw DataError("dataset spec: source.kind must be template|random");
    spec.source.kind = kind == "template" ? SourceKind::TemplateWithMutation
                                          : SourceKind::UniformRandom;
    spec.source.mutation_prob = src.at("mutation_prob").get<double>();
    spec.source.vocab_size = src.at("vocab_size").get<int>();
    spec.source.templates = src.at("templates").get<std::vector<std::vector<int>>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset spec: ") + e.what());
  }
  return spec;
}

std::vector<SampleManifest> generate_dataset(const DatasetSpec& spec,
                                             const Vocabulary& vocab,
                                             const std::string& out_dir) {
  if (spec.size < 1) throw UsageError("dataset spec: size must be >= 1");
  if (spec.glyphs_per_token < 1)
    throw UsageError("dataset spec: glyphs_per_token must be >= 1");
  spec.layout.validate();
  if (spec.sequence_length < 0 ||
      spec.sequence_length > spec.layout.sequence_length())
    throw UsageError("dataset spec: sequence_length must lie in [0, " +
                     std::to_string(spec.layout.sequence_length()) + "]");
  int seq_len = spec.sequence_length > 0 ? spec.sequence_length
                                         : spec.layout.sequence_length();
  SequenceSource source = spec.source;
  if (source.vocab_size == 0) source.vocab_size = vocab.size();
  if (source.vocab_size != vocab.size())
    throw DataError("dataset spec: source.vocab_size disagrees with vocabulary");
  for (const auto& tpl : source.templates)
    for (int c : tpl)
      if (c < Vocabulary::kNumSpecials || c >= vocab.size())
        throw DataError("dataset spec: template code " + std::to_string(c) +
                        " outside the move range");

  ensure_dir(path_join(out_dir, "images"));
  GlyphBank bank =
      GlyphBank::build(vocab, spec.styles, spec.glyphs_per_token, spec.layout.cell_w,
                       spec.layout.cell_h, derive_seed(spec.seed, kStreamBank));

  std::vector<SampleManifest> manifests;
  manifests.reserve(static_cast<size_t>(spec.size));
  std::string manifest_text;
  for (int i = 0; i < spec.size; ++i) {
    uint64_t sample_seed =
        derive_seed(spec.seed, kStreamSample, static_cast<uint64_t>(i));
    SampledSequence seq =
        sample_sequence(source, seq_len, derive_seed(sample_seed, 0));
    std::vector<std::string> tokens;
    tokens.reserve(static_cast<size_t>(spec.layout.sequence_length()));
    for (int c : seq.codes) tokens.push_back(vocab.token(c));
    // Trailing cells beyond the sampled sequence stay blank.
    while (static_cast<int>(tokens.size()) < spec.layout.sequence_length())
      tokens.push_back(vocab.token(Vocabulary::kPad));
    ComposedSheet sheet =
        compose_sheet(tokens, spec.layout, bank, derive_seed(sample_seed, 1));

    SampleManifest m;
    m.codes = seq.codes;
    m.seed = sample_seed;
    m.source = seq.template_id >= 0 ? "template:" + std::to_string(seq.template_id)
                                    : "random";
    char name[64];
    std::snprintf(name, sizeof(name), "images/sample_%06d.pgm", i);
    m.image_path = name;

    Image img = std::move(sheet.image);
    m.bboxes = std::move(sheet.bboxes);
    m.bboxes.resize(m.codes.size());  // drop boxes of trailing blank cells
    if (spec.resolution == Resolution::Half) {
      img = downsample_half(img);
      for (Rect& r : m.bboxes) r = r.scaled(0.5);
    }
    write_pgm(path_join(out_dir, m.image_path), img);
    manifest_text += manifest_to_json_line(m);
    manifest_text += '\n';
    manifests.push_back(std::move(m));
  }
  write_text_file(path_join(out_dir, "manifest.jsonl"), manifest_text);
  vocab.save(path_join(out_dir, "vocab.tsv"));
  DatasetSpec resolved = spec;
  resolved.source = source;
  write_text_file(path_join(out_dir, "dataset_spec.json"),
                  dataset_spec_to_json(resolved));
  return manifests;
}

LoadedDataset load_dataset(const std::string& dir) {
  LoadedDataset ds;
  ds.vocab = Vocabulary::load(path_join(dir, "vocab.tsv"));
  std::istringstream in(read_text_file(path_join(dir, "manifest.jsonl")));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ds.manifests.push_back(manifest_from_json_line(line));
  }
  if (ds.manifests.empty()) throw DataError("dataset: empty manifest in " + dir);
  ds.sequence_length = static_cast<int>(ds.manifests[0].codes.size());
  ds.images.reserve(ds.manifests.size());
  for (const SampleManifest& m : ds.manifests) {
    if (static_cast<int>(m.codes.size()) != ds.sequence_length)
      throw DataError("dataset: inconsistent sequence lengths in " + dir);
    ds.images.push_back(read_pgm(path_join(dir, m.image_path)));
  }
  return ds;
}

}  // namespace csr
