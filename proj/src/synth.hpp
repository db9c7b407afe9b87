#pragma once
// Synthetic scoresheet generation: procedural handwriting-like glyphs,
// tabular sheet composition with exact per-move geometry, sequence sampling,
// and dataset materialization (PGM images + JSON-lines manifest).

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "notation.hpp"
#include "tensor.hpp"
#include "util.hpp"

namespace csr {

// Grayscale image in [0,1], 0 = black ink, row-major (H,W).
using Image = Tensor<float>;

struct Rect {
  double x = 0, y = 0, w = 0, h = 0;

  bool empty() const { return w <= 0 || h <= 0; }
  bool contains_point(double px, double py) const {
    return px >= x && px < x + w && py >= y && py < y + h;
  }
  bool inside(const Rect& outer) const {
    return x >= outer.x && y >= outer.y && x + w <= outer.x + outer.w &&
           y + h <= outer.y + outer.h;
  }
  Rect scaled(double f) const { return {x * f, y * f, w * f, h * f}; }
};

struct GlyphStyle {
  double slant = 0.0;           // radians, positive leans right
  double stroke_width = 1.5;    // px
  double baseline_wobble = 0.0; // px
  double scale = 1.0;           // in (0.5, 1.5]
  uint64_t seed = 0;
};

// A rendered token image sized to a layout cell interior, with its measured
// ink bounding box in local pixel coordinates.
struct Glyph {
  Image image;
  Rect ink_bbox;
};

// Renders a move string with per-character polyline skeletons under the
// style's jitter/slant/wobble. Deterministic in (token, style). Throws
// DataError on a character with no skeleton.
Glyph render_glyph(const std::string& token, const GlyphStyle& style, int cell_w,
                   int cell_h);

bool is_drawable(const std::string& token);

// Tabular sheet geometry: a row-number column plus two move columns over N
// rows. Reading order: left column, right column, next row.
struct SheetLayout {
  int rows = 4;
  int cell_w = 46, cell_h = 22;
  int number_col_width = 12;
  int grid_thickness = 1;
  int margin_left = 2, margin_top = 2, margin_right = 2, margin_bottom = 3;

  int width() const {
    return margin_left + 4 * grid_thickness + number_col_width + 2 * cell_w +
           margin_right;
  }
  int height() const {
    return margin_top + (rows + 1) * grid_thickness + rows * cell_h + margin_bottom;
  }
  int sequence_length() const { return 2 * rows; }

  // Interior content rect of a move cell; col is 0 (left) or 1 (right).
  Rect cell_box(int row, int col) const;
  Rect number_box(int row) const;

  void validate() const;  // throws UsageError on nonsense dimensions
};

// Paper-scale N=8 sheet, 800x862.
SheetLayout reference_layout();
// Small N=4 sheet for fast experiments, 112x98.
SheetLayout desk_layout();

// A family of glyph styles: explicit seed set (for held-out splits) plus
// parameter ranges the seed expands into.
struct StylePool {
  std::vector<uint64_t> style_seeds;
  double slant_min = 0, slant_max = 0;
  double stroke_min = 1.5, stroke_max = 1.5;
  double wobble_min = 0, wobble_max = 0;
  double scale_min = 1.0, scale_max = 1.0;

  GlyphStyle style_for(uint64_t style_seed) const;
  bool disjoint_seeds(const StylePool& other) const;

  enum class Difficulty { Easy, Standard, Hard };
  static StylePool make(Difficulty d, int count, uint64_t stream_seed);
};

// Pre-rendered glyph variants per vocabulary token ("a fixed set of
// individual move images"); composition picks one variant per cell.
class GlyphBank {
 public:
  static GlyphBank build(const Vocabulary& vocab, const StylePool& pool,
                         int variants_per_token, int cell_w, int cell_h,
                         uint64_t seed);

  const Glyph& pick(const std::string& token, Rng& rng) const;
  bool has(const std::string& token) const { return glyphs_.count(token) > 0; }
  int variants(const std::string& token) const;

 private:
  std::map<std::string, std::vector<Glyph>> glyphs_;
};

enum class SourceKind { TemplateWithMutation, UniformRandom };

struct SequenceSource {
  SourceKind kind = SourceKind::UniformRandom;
  std::vector<std::vector<int>> templates;  // template mode: base code sequences
  double mutation_prob = 0.0;               // per-position replacement chance
  int vocab_size = 0;                       // uniform draws cover [4, vocab_size)
};

struct SampledSequence {
  std::vector<int> codes;
  int template_id = -1;  // -1 for uniform-random
};

// Deterministic in (src, length, seed). Template mode copies a seeded pick
// of `templates` truncated to `length`, then mutates each position
// independently with probability mutation_prob.
SampledSequence sample_sequence(const SequenceSource& src, int length, uint64_t seed);

struct ComposedSheet {
  Image image;
  std::vector<Rect> bboxes;  // one per position; zero-sized for blank cells
};

// Renders grid, printed row numbers, and one glyph per move cell. Special
// tokens produce blank cells. Asserts by construction that each move's ink
// lies inside its returned bbox and each bbox inside its cell.
ComposedSheet compose_sheet(const std::vector<std::string>& tokens,
                            const SheetLayout& layout, const GlyphBank& bank,
                            uint64_t seed);

// 2x2 integer box filter; odd trailing row/column is dropped.
Image downsample_half(const Image& img);

enum class Resolution { Full, Half };

struct DatasetSpec {
  int size = 0;
  SequenceSource source;
  SheetLayout layout;
  Resolution resolution = Resolution::Full;
  StylePool styles;
  int glyphs_per_token = 3;
  // Moves per sheet; 0 fills every cell (2N). Shorter sequences leave the
  // trailing cells blank, for length-vs-size studies on a fixed sheet.
  int sequence_length = 0;
  uint64_t seed = 0;
};

struct SampleManifest {
  std::string image_path;  // relative to the dataset directory
  std::vector<int> codes;  // length 2N, no END/PAD
  std::vector<Rect> bboxes;
  std::string source;  // "random" or "template:<id>"
  uint64_t seed = 0;
};

// Writes images/, manifest.jsonl, vocab.tsv, and dataset_spec.json under
// out_dir. Pure function of (spec, vocab): regeneration is bit-identical.
std::vector<SampleManifest> generate_dataset(const DatasetSpec& spec,
                                             const Vocabulary& vocab,
                                             const std::string& out_dir);

struct LoadedDataset {
  Vocabulary vocab;
  std::vector<SampleManifest> manifests;
  std::vector<Image> images;  // parallel to manifests
  int sequence_length = 0;    // 2N from the manifests
};

LoadedDataset load_dataset(const std::string& dir);

// Binary 8-bit PGM (P5).
void write_pgm(const std::string& path, const Image& img);
Image read_pgm(const std::string& path);

// JSON helpers shared by the manifest and run configs.
std::string manifest_to_json_line(const SampleManifest& m);
SampleManifest manifest_from_json_line(const std::string& line);
std::string dataset_spec_to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const std::string& text);

}  // namespace csr
