// Attention encoder-decoder network for scoresheet transcription.
//
// Pipeline: conv backbone over the ink image -> row-major flattened feature
// grid -> GRU encoder over grid positions -> GRU decoder that attends over
// encoder outputs with additive (tanh) attention and emits one move code per
// step. The model is templated on the scalar type so the same graph code runs
// in float for training/inference and in double for finite-difference checks.
//
// All graph builders read parameter values exclusively through a Bound handle
// (per-tape variable ids), never through Parameter storage directly; this
// keeps one code path for training, inference, and derivative verification.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "gradcheck.hpp"
#include "notation.hpp"
#include "tensor.hpp"
#include "util.hpp"

namespace csr {

// Seed-derivation stream for parameter initialization.
inline constexpr uint64_t kStreamModelInit = 13;

// One backbone stage: 3x3 valid convolution (stride 1) + ReLU + max pool.
// The pool window equals the pool stride, so each stage divides the spatial
// dims by (pool_h, pool_w) after the 3x3 shrink.
struct ConvBlockSpec {
  int channels = 0;
  int pool_h = 1;
  int pool_w = 1;
};

inline constexpr int kConvKernel = 3;

struct ModelConfig {
  int image_h = 0;
  int image_w = 0;
  std::vector<ConvBlockSpec> backbone;
  int hidden_dim = 512;
  int attention_dim = 512;
  int embed_dim = 256;
  int vocab_size = 0;
  int max_decode_len = 17;
  double dropout_rate = 0.2;
  bool bidirectional = false;
  bool freeze_backbone = false;

  int encoder_dim() const { return bidirectional ? 2 * hidden_dim : hidden_dim; }
  int feature_channels() const {
    return backbone.empty() ? 0 : backbone.back().channels;
  }
};

// Throws UsageError when a field is out of range or the backbone collapses the
// image below 1x1.
void validate_model_config(const ModelConfig& cfg);

// Full-size configuration matching the reference sheet resolution.
ModelConfig reference_model_config(int vocab_size);
// Small configuration sized for the desk-scale sheet and single-core budgets.
ModelConfig desk_model_config(int vocab_size);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Geometry of the flattened feature grid. Grid position (gy, gx) flattens to
// index gy * grid_w + gx, and maps back to the center of its receptive field
// in input pixels via a per-axis affine map composed over the backbone.
struct FeatureGeom {
  int grid_h = 0;
  int grid_w = 0;
  int channels = 0;
  double scale_y = 1.0, scale_x = 1.0;
  double offset_y = 0.0, offset_x = 0.0;

  int positions() const { return grid_h * grid_w; }
  int flatten(int gy, int gx) const { return gy * grid_w + gx; }
  std::pair<int, int> unflatten(int idx) const {
    return {idx / grid_w, idx % grid_w};
  }
  double center_y(int gy) const { return scale_y * gy + offset_y; }
  double center_x(int gx) const { return scale_x * gx + offset_x; }
  // (y, x) pixel center for a flattened index.
  std::pair<double, double> center(int idx) const {
    auto [gy, gx] = unflatten(idx);
    return {center_y(gy), center_x(gx)};
  }
};

FeatureGeom compute_feature_geom(const std::vector<ConvBlockSpec>& backbone,
                                 int image_h, int image_w);
inline FeatureGeom compute_feature_geom(const ModelConfig& cfg) {
  return compute_feature_geom(cfg.backbone, cfg.image_h, cfg.image_w);
}

// Converts a grayscale sheet image (H,W), 0=black ink on 1=white paper, into
// the (H,W,1) ink-intensity tensor the network consumes (1 - gray, so ink is
// the signal and blank paper is exactly zero).
template <typename T>
Tensor<T> ink_input(const Tensor<float>& gray) {
  if (gray.rank() != 2) throw ShapeError("ink_input: expected rank-2 image");
  Tensor<T> out({gray.dim(0), gray.dim(1), 1});
  for (size_t i = 0; i < gray.size(); ++i)
    out[i] = T(1) - static_cast<T>(gray[i]);
  return out;
}

template <typename T>
int argmax_row(const Tensor<T>& m, int row) {
  int best = 0;
  for (int j = 1; j < m.dim(1); ++j)
    if (m.at(row, j) > m.at(row, best)) best = j;
  return best;
}

template <typename T>
class Model {
 public:
  using Tp = Tape<T>;
  using Var = int;

  Model(const ModelConfig& cfg, uint64_t vocab_hash, uint64_t init_seed)
      : cfg_(cfg), vocab_hash_(vocab_hash), init_seed_(init_seed) {
    validate_model_config(cfg_);
    geom_ = compute_feature_geom(cfg_);
    Rng rng(derive_seed(init_seed, kStreamModelInit, 0));
    int cin = 1;
    for (size_t i = 0; i < cfg_.backbone.size(); ++i) {
      int cout = cfg_.backbone[i].channels;
      int fan = kConvKernel * kConvKernel;
      std::string base = "conv" + std::to_string(i);
      conv_w_.push_back(add(base + ".w", {kConvKernel, kConvKernel, cin, cout},
                            fan * cin, fan * cout, rng, /*backbone=*/true));
      conv_b_.push_back(add_zero(base + ".b", {1, cout}, /*backbone=*/true));
      cin = cout;
    }
    int h = cfg_.hidden_dim, a = cfg_.attention_dim, e = cfg_.embed_dim;
    int c = cfg_.feature_channels(), d = cfg_.encoder_dim(), v = cfg_.vocab_size;
    enc_ = add_gru("enc", c, h, rng);
    if (cfg_.bidirectional) enc_rev_ = add_gru("enc_rev", c, h, rng);
    dec_ = add_gru("dec", e + d, h, rng);
    att_wq_ = add("att.wq", {h, a}, h, a, rng);
    att_wk_ = add("att.wk", {d, a}, d, a, rng);
    att_v_ = add("att.v", {a, 1}, a, 1, rng);
    init_w_ = add("init.w", {d, h}, d, h, rng);
    init_b_ = add_zero("init.b", {1, h});
    embed_ = add("embed.table", {v, e}, v, e, rng);
    out_w_ = add("out.w", {h, v}, h, v, rng);
    out_b_ = add_zero("out.b", {1, v});
  }

  const ModelConfig& config() const { return cfg_; }
  // The training loop owns the dropout rate at run time.
  void set_dropout_rate(double rate) {
    if (!(rate >= 0.0) || rate >= 1.0)
      throw UsageError("dropout rate must lie in [0, 1)");
    cfg_.dropout_rate = rate;
  }
  uint64_t vocab_hash() const { return vocab_hash_; }
  uint64_t init_seed() const { return init_seed_; }
  const FeatureGeom& geom() const { return geom_; }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }
  // Excludes backbone parameters when the config freezes them.
  std::vector<Parameter<T>*> trainable_parameters() {
    std::vector<Parameter<T>*> out;
    for (size_t i = 0; i < params_.size(); ++i)
      if (!(cfg_.freeze_backbone && is_backbone_[i])) out.push_back(&params_[i]);
    return out;
  }
  Parameter<T>& param(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw DataError("model: no parameter named '" + name + "'");
  }
  size_t parameter_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }
  size_t num_parameters() const { return params_.size(); }
  const Parameter<T>& parameter(size_t i) const { return params_.at(i); }
  Parameter<T>& parameter(size_t i) { return params_.at(i); }

  // Per-tape parameter handles. `train` enables gradient tracking (minus the
  // backbone when frozen) and dropout; eval binds read-only copies.
  struct Bound {
    Tp* tape = nullptr;
    bool train = false;
    Rng* rng = nullptr;
    std::vector<Var> v;
  };

  Bound bind(Tp& tape, bool train = false, Rng* dropout_rng = nullptr) {
    Bound b;
    b.tape = &tape;
    b.train = train;
    b.rng = dropout_rng;
    b.v.reserve(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      bool track = train && !(cfg_.freeze_backbone && is_backbone_[i]);
      b.v.push_back(track ? tape.param(params_[i])
                          : tape.leaf(params_[i].value, false));
    }
    return b;
  }

  // Binds externally created variables (aligned with parameters() order) so a
  // derivative checker can differentiate with respect to its own leaves.
  Bound bind_vars(Tp& tape, std::vector<Var> vars, bool train = false,
                  Rng* dropout_rng = nullptr) const {
    if (vars.size() != params_.size())
      throw UsageError("bind_vars: expected " + std::to_string(params_.size()) +
                       " variables, got " + std::to_string(vars.size()));
    Bound b;
    b.tape = &tape;
    b.train = train;
    b.rng = dropout_rng;
    b.v = std::move(vars);
    return b;
  }

  // ---- Graph builders ----

  // (H,W,1) ink image -> (L, C) feature rows, L = grid_h * grid_w flattened
  // row-major (grid row gy contributes positions gy*grid_w .. gy*grid_w+W'-1).
  Var features(Bound& b, const Tensor<T>& image) const {
    if (image.rank() != 3 || image.dim(0) != cfg_.image_h ||
        image.dim(1) != cfg_.image_w || image.dim(2) != 1)
      throw ShapeError("features: image is " + image.shape_str() +
                       ", config expects (" + std::to_string(cfg_.image_h) + "," +
                       std::to_string(cfg_.image_w) + ",1)");
    Tp& t = *b.tape;
    Var x = t.leaf(image, false);
    for (size_t i = 0; i < cfg_.backbone.size(); ++i) {
      x = t.conv2d(x, b.v[conv_w_[i]], b.v[conv_b_[i]], 1, 1);
      x = t.relu(x);
      const ConvBlockSpec& blk = cfg_.backbone[i];
      if (blk.pool_h > 1 || blk.pool_w > 1)
        x = t.maxpool2d(x, blk.pool_h, blk.pool_w, blk.pool_h, blk.pool_w);
    }
    return t.reshape(x, {geom_.positions(), geom_.channels});
  }

  enum class GruKind { Encoder, EncoderReverse, Decoder };

  // One GRU update: z/r gates and candidate from (x, h), then
  // h' = (1 - z) * h + z * cand. With all-zero parameters this halves the
  // state exactly (z = 0.5, cand = 0).
  Var gru_cell(Bound& b, GruKind kind, Var x, Var h) const {
    const GruIdx& g = kind == GruKind::Decoder
                          ? dec_
                          : (kind == GruKind::EncoderReverse ? enc_rev_ : enc_);
    Tp& t = *b.tape;
    Var z = t.sigmoid(
        t.add(t.add(t.matmul(x, b.v[g.wz]), t.matmul(h, b.v[g.uz])), b.v[g.bz]));
    Var r = t.sigmoid(
        t.add(t.add(t.matmul(x, b.v[g.wr]), t.matmul(h, b.v[g.ur])), b.v[g.br]));
    Var cand = t.tanh_op(t.add(
        t.add(t.matmul(x, b.v[g.wh]), t.matmul(t.mul(r, h), b.v[g.uh])),
        b.v[g.bh]));
    return t.add(t.mul(t.one_minus(z), h), t.mul(z, cand));
  }

  struct Encoded {
    Var outputs;      // (L, encoder_dim)
    Var final_state;  // (1, encoder_dim)
  };

  // Runs the recurrent encoder over feature rows in flatten order (and in
  // reverse for the bidirectional variant, concatenated per position).
  Encoded encode(Bound& b, Var feats) const {
    Tp& t = *b.tape;
    int l = t.value(feats).dim(0);
    if (l < 1) throw ShapeError("encode: empty feature sequence");
    std::vector<Var> fwd(static_cast<size_t>(l));
    Var h = t.leaf(Tensor<T>({1, cfg_.hidden_dim}), false);
    for (int i = 0; i < l; ++i) {
      h = gru_cell(b, GruKind::Encoder, t.row(feats, i), h);
      fwd[static_cast<size_t>(i)] = h;
    }
    if (!cfg_.bidirectional) {
      return {t.stack_rows(fwd), fwd.back()};
    }
    std::vector<Var> bwd(static_cast<size_t>(l));
    Var hb = t.leaf(Tensor<T>({1, cfg_.hidden_dim}), false);
    for (int i = l - 1; i >= 0; --i) {
      hb = gru_cell(b, GruKind::EncoderReverse, t.row(feats, i), hb);
      bwd[static_cast<size_t>(i)] = hb;
    }
    std::vector<Var> both(static_cast<size_t>(l));
    for (int i = 0; i < l; ++i)
      both[static_cast<size_t>(i)] =
          t.concat(fwd[static_cast<size_t>(i)], bwd[static_cast<size_t>(i)], 1);
    return {t.stack_rows(both), t.concat(fwd.back(), bwd.front(), 1)};
  }

  // Initial decoder state: affine projection of the encoder's final state.
  Var decoder_init(Bound& b, Var enc_final) const {
    Tp& t = *b.tape;
    return t.add(t.matmul(enc_final, b.v[init_w_]), b.v[init_b_]);
  }

  // Precomputed W_k * enc_i rows, reused by every decode step. (L, A)
  Var attention_keys(Bound& b, Var enc_outputs) const {
    return b.tape->matmul(enc_outputs, b.v[att_wk_]);
  }

  struct Attended {
    Var context;  // (1, encoder_dim)
    Var alpha;    // (1, L)
  };

  // Additive attention: e_i = v^T tanh(W_q q + W_k enc_i); alpha = softmax(e);
  // context = sum_i alpha_i enc_i.
  Attended attend(Bound& b, Var query, Var enc_outputs, Var keys) const {
    Tp& t = *b.tape;
    int l = t.value(enc_outputs).dim(0);
    Var q = t.matmul(query, b.v[att_wq_]);                      // (1, A)
    Var scores = t.matmul(t.tanh_op(t.add_rowvec(keys, q)), b.v[att_v_]);
    Var alpha = t.softmax(t.reshape(scores, {1, l}));
    return {t.matmul(alpha, enc_outputs), alpha};
  }

  struct Step {
    Var logits;  // (1, vocab)
    Var state;   // (1, hidden)
  };

  // Embeds the previous code, concatenates the attention context, advances the
  // decoder GRU, and projects to vocabulary logits. Dropout on the state feeds
  // the projection at train time only.
  Step decode_step(Bound& b, int prev_code, Var prev_state, Var context) const {
    if (prev_code < 0 || prev_code >= cfg_.vocab_size)
      throw DataError("decode_step: code " + std::to_string(prev_code) +
                      " outside vocabulary of size " +
                      std::to_string(cfg_.vocab_size));
    Tp& t = *b.tape;
    Var emb = t.embedding_gather(b.v[embed_], {prev_code});
    Var x = t.concat(emb, context, 1);
    Var state = gru_cell(b, GruKind::Decoder, x, prev_state);
    Var projected = state;
    if (b.train && cfg_.dropout_rate > 0.0) {
      if (b.rng == nullptr)
        throw UsageError("decode_step: train-mode dropout needs an rng");
      projected = t.dropout(state, cfg_.dropout_rate, true, *b.rng);
    }
    Var logits = t.add(t.matmul(projected, b.v[out_w_]), b.v[out_b_]);
    return {logits, state};
  }

  struct StepFull {
    Var logits;
    Var state;
    Var alpha;
  };

  // decode_step with the attention lookup folded in: attends from the previous
  // state, then advances one step.
  StepFull decode_step(Bound& b, int prev_code, Var prev_state, Var enc_outputs,
                       Var keys) const {
    Attended a = attend(b, prev_state, enc_outputs, keys);
    Step s = decode_step(b, prev_code, prev_state, a.context);
    return {s.logits, s.state, a.alpha};
  }

  struct TeacherForcedGraph {
    Var loss;                 // scalar
    Var logits;               // (T, vocab)
    std::vector<Var> alphas;  // T entries, each (1, L)
  };

  // Teacher forcing: at step t the decoder input is targets[t-1] (START at
  // t = 0); emits exactly T logit rows and T attention vectors for a length-T
  // target. Loss is masked cross-entropy over the target codes.
  TeacherForcedGraph build_teacher_forced(
      Bound& b, const Tensor<T>& image, const std::vector<int>& targets,
      const std::vector<uint8_t>& mask = {},
      Reduction reduction = Reduction::Mean) const {
    return build_sequence(b, image, targets, mask, reduction, true);
  }

  // Training-time free feed: same T-step graph and loss against `targets`,
  // but step t consumes the argmax of the model's own step-(t-1) logits.
  TeacherForcedGraph build_self_feeding(
      Bound& b, const Tensor<T>& image, const std::vector<int>& targets,
      const std::vector<uint8_t>& mask = {},
      Reduction reduction = Reduction::Mean) const {
    return build_sequence(b, image, targets, mask, reduction, false);
  }

  struct ForwardRecord {
    Tensor<T> logits;     // (T, vocab)
    Tensor<T> attention;  // (T, L)
    std::vector<int> argmax;
  };

  // Eval-mode teacher-forced pass returning plain values.
  ForwardRecord forward_teacher_forced(const Tensor<T>& image,
                                       const std::vector<int>& targets) {
    Tp tape;
    Bound b = bind(tape, false, nullptr);
    TeacherForcedGraph g = build_teacher_forced(b, image, targets);
    ForwardRecord rec;
    rec.logits = tape.value(g.logits);
    rec.attention = gather_alphas(tape, g.alphas);
    for (int i = 0; i < rec.logits.dim(0); ++i)
      rec.argmax.push_back(argmax_row(rec.logits, i));
    return rec;
  }

  struct FreeRunRecord {
    std::vector<int> codes;  // emitted codes, END excluded
    Tensor<T> logits;        // (steps, vocab), includes the END-emitting step
    Tensor<T> attention;     // (steps, L)
    bool ended = false;      // true when END was emitted before the length cap
  };

  // Free-running greedy decode: feed back the argmax of each step, stop when
  // END is emitted or max_len codes have been produced.
  FreeRunRecord forward_free_running(const Tensor<T>& image, int max_len = 0) {
    int cap = max_len > 0 ? max_len : cfg_.max_decode_len;
    Tp tape;
    Bound b = bind(tape, false, nullptr);
    Var feats = features(b, image);
    Encoded enc = encode(b, feats);
    Var keys = attention_keys(b, enc.outputs);
    Var state = decoder_init(b, enc.final_state);
    FreeRunRecord rec;
    std::vector<Var> logit_rows;
    std::vector<Var> alpha_rows;
    int prev = Vocabulary::kStart;
    while (static_cast<int>(rec.codes.size()) < cap) {
      Attended att = attend(b, state, enc.outputs, keys);
      Step s = decode_step(b, prev, state, att.context);
      state = s.state;
      logit_rows.push_back(s.logits);
      alpha_rows.push_back(att.alpha);
      int code = argmax_row(tape.value(s.logits), 0);
      if (code == Vocabulary::kEnd) {
        rec.ended = true;
        break;
      }
      rec.codes.push_back(code);
      prev = code;
    }
    rec.logits = gather_alphas(tape, logit_rows);
    rec.attention = gather_alphas(tape, alpha_rows);
    return rec;
  }

 private:
  TeacherForcedGraph build_sequence(Bound& b, const Tensor<T>& image,
                                    const std::vector<int>& targets,
                                    const std::vector<uint8_t>& mask,
                                    Reduction reduction, bool feed_targets) const {
    int steps = static_cast<int>(targets.size());
    if (steps < 1) throw UsageError("sequence graph: empty target");
    if (steps > cfg_.max_decode_len)
      throw UsageError("sequence graph: target length " + std::to_string(steps) +
                       " exceeds max_decode_len " +
                       std::to_string(cfg_.max_decode_len));
    // Default mask excludes PAD positions, so appending PAD to the targets
    // can never change the loss.
    std::vector<uint8_t> m = mask;
    if (m.empty()) {
      m.assign(targets.size(), 1);
      for (size_t i = 0; i < targets.size(); ++i)
        if (targets[i] == Vocabulary::kPad) m[i] = 0;
    }
    Tp& t = *b.tape;
    Var feats = features(b, image);
    Encoded enc = encode(b, feats);
    Var keys = attention_keys(b, enc.outputs);
    Var state = decoder_init(b, enc.final_state);
    std::vector<Var> logit_rows;
    TeacherForcedGraph out;
    int prev = Vocabulary::kStart;
    for (int step = 0; step < steps; ++step) {
      Attended att = attend(b, state, enc.outputs, keys);
      Step s = decode_step(b, prev, state, att.context);
      state = s.state;
      logit_rows.push_back(s.logits);
      out.alphas.push_back(att.alpha);
      prev = feed_targets ? targets[static_cast<size_t>(step)]
                          : argmax_row(t.value(s.logits), 0);
    }
    out.logits = t.stack_rows(logit_rows);
    out.loss = t.masked_cross_entropy_with_logits(out.logits, targets, m, reduction);
    return out;
  }

  struct GruIdx {
    int wz = -1, uz = -1, bz = -1;
    int wr = -1, ur = -1, br = -1;
    int wh = -1, uh = -1, bh = -1;
  };

  int add(const std::string& name, std::vector<int> shape, int fan_in,
          int fan_out, Rng& rng, bool backbone = false) {
    params_.emplace_back(name,
                         glorot_uniform<T>(std::move(shape), fan_in, fan_out, rng));
    is_backbone_.push_back(backbone);
    return static_cast<int>(params_.size()) - 1;
  }
  int add_zero(const std::string& name, std::vector<int> shape,
               bool backbone = false) {
    params_.emplace_back(name, Tensor<T>(std::move(shape)));
    is_backbone_.push_back(backbone);
    return static_cast<int>(params_.size()) - 1;
  }
  GruIdx add_gru(const std::string& base, int in_dim, int h, Rng& rng) {
    GruIdx g;
    g.wz = add(base + ".wz", {in_dim, h}, in_dim, h, rng);
    g.uz = add(base + ".uz", {h, h}, h, h, rng);
    g.bz = add_zero(base + ".bz", {1, h});
    g.wr = add(base + ".wr", {in_dim, h}, in_dim, h, rng);
    g.ur = add(base + ".ur", {h, h}, h, h, rng);
    g.br = add_zero(base + ".br", {1, h});
    g.wh = add(base + ".wh", {in_dim, h}, in_dim, h, rng);
    g.uh = add(base + ".uh", {h, h}, h, h, rng);
    g.bh = add_zero(base + ".bh", {1, h});
    return g;
  }

  Tensor<T> gather_alphas(Tp& tape, const std::vector<Var>& rows) const {
    if (rows.empty()) return Tensor<T>({0, 0});
    int c = tape.value(rows[0]).dim(1);
    Tensor<T> out({static_cast<int>(rows.size()), c});
    for (size_t i = 0; i < rows.size(); ++i) {
      const Tensor<T>& v = tape.value(rows[i]);
      for (int j = 0; j < c; ++j) out.at(static_cast<int>(i), j) = v[static_cast<size_t>(j)];
    }
    return out;
  }

  ModelConfig cfg_;
  uint64_t vocab_hash_ = 0;
  uint64_t init_seed_ = 0;
  FeatureGeom geom_;
  std::vector<Parameter<T>> params_;
  std::vector<char> is_backbone_;
  std::vector<int> conv_w_, conv_b_;
  GruIdx enc_, enc_rev_, dec_;
  int att_wq_ = -1, att_wk_ = -1, att_v_ = -1;
  int init_w_ = -1, init_b_ = -1;
  int embed_ = -1, out_w_ = -1, out_b_ = -1;
};

// ---- Checkpointing (float models) ----
//
// Binary layout: magic "CSRMDL01", u32 version, u64 vocabulary hash, u64
// config-JSON length + bytes, u64 parameter count, then per parameter:
// u64 name length, name bytes, u32 rank, u32 dims[rank], little-endian f32
// data. Round trips are bit-exact.
void save_checkpoint(const Model<float>& model, const std::string& path);
Model<float> load_checkpoint(const std::string& path);
// Throws DataError when the stored vocabulary hash differs from expected.
Model<float> load_checkpoint(const std::string& path, uint64_t expected_vocab_hash);

// ---- Composed finite-difference checks ----
//
// Gradient checks over assembled graphs rather than single primitives: the
// recurrent encoder driven from a feature grid, one attention+decode step as
// a function of the embedding table, and the teacher-forced loss end to end
// (plain, pooled-backbone, and bidirectional variants). Complements
// standard_grad_checks; run both through run_grad_check_suite.
std::vector<GradCheck> composed_grad_checks(uint64_t seed);

}  // namespace csr
