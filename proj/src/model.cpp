#include "model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "synth.hpp"

namespace csr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

void validate_model_config(const ModelConfig& cfg) {
  if (cfg.image_h < 1 || cfg.image_w < 1)
    throw UsageError("model config: image dimensions must be positive");
  if (cfg.backbone.empty())
    throw UsageError("model config: backbone needs at least one block");
  for (const auto& b : cfg.backbone) {
    if (b.channels < 1) throw UsageError("model config: block channels must be >= 1");
    if (b.pool_h < 1 || b.pool_w < 1)
      throw UsageError("model config: pool factors must be >= 1");
  }
  if (cfg.hidden_dim < 1 || cfg.attention_dim < 1 || cfg.embed_dim < 1)
    throw UsageError("model config: hidden/attention/embed dims must be >= 1");
  if (cfg.vocab_size < Vocabulary::kNumSpecials + 1)
    throw UsageError("model config: vocab_size must cover the specials plus at "
                     "least one move");
  if (cfg.max_decode_len < 1)
    throw UsageError("model config: max_decode_len must be >= 1");
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0))
    throw UsageError("model config: dropout_rate must lie in [0, 1)");
  compute_feature_geom(cfg);  // throws when the image collapses below 1x1
}

FeatureGeom compute_feature_geom(const std::vector<ConvBlockSpec>& backbone,
                                 int image_h, int image_w) {
  FeatureGeom g;
  int h = image_h, w = image_w;
  double sy = 1.0, sx = 1.0, oy = 0.0, ox = 0.0;
  for (size_t i = 0; i < backbone.size(); ++i) {
    const ConvBlockSpec& blk = backbone[i];
    if (h < kConvKernel || w < kConvKernel)
      throw UsageError("feature geometry: image too small for conv block " +
                       std::to_string(i));
    h -= kConvKernel - 1;
    w -= kConvKernel - 1;
    oy += sy * ((kConvKernel - 1) / 2.0);
    ox += sx * ((kConvKernel - 1) / 2.0);
    if (h < blk.pool_h || w < blk.pool_w)
      throw UsageError("feature geometry: image too small for pool in block " +
                       std::to_string(i));
    oy += sy * ((blk.pool_h - 1) / 2.0);
    ox += sx * ((blk.pool_w - 1) / 2.0);
    sy *= blk.pool_h;
    sx *= blk.pool_w;
    h = (h - blk.pool_h) / blk.pool_h + 1;
    w = (w - blk.pool_w) / blk.pool_w + 1;
  }
  g.grid_h = h;
  g.grid_w = w;
  g.channels = backbone.back().channels;
  g.scale_y = sy;
  g.scale_x = sx;
  g.offset_y = oy;
  g.offset_x = ox;
  return g;
}

ModelConfig reference_model_config(int vocab_size) {
  ModelConfig cfg;
  SheetLayout layout = reference_layout();
  cfg.image_h = layout.height();
  cfg.image_w = layout.width();
  cfg.backbone = {{16, 2, 2}, {32, 2, 2}, {64, 2, 2}, {64, 2, 2}};
  cfg.hidden_dim = 512;
  cfg.attention_dim = 512;
  cfg.embed_dim = 256;
  cfg.vocab_size = vocab_size;
  cfg.max_decode_len = 2 * layout.rows + 1;  // one END past a full sheet
  cfg.dropout_rate = 0.2;
  return cfg;
}

ModelConfig desk_model_config(int vocab_size) {
  ModelConfig cfg;
  SheetLayout layout = desk_layout();
  cfg.image_h = layout.height();
  cfg.image_w = layout.width();
  cfg.backbone = {{6, 2, 2}, {12, 2, 2}, {24, 2, 2}};
  cfg.hidden_dim = 96;
  cfg.attention_dim = 64;
  cfg.embed_dim = 32;
  cfg.vocab_size = vocab_size;
  cfg.max_decode_len = 2 * layout.rows + 1;
  cfg.dropout_rate = 0.2;
  return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["image_h"] = cfg.image_h;
  j["image_w"] = cfg.image_w;
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : cfg.backbone)
    blocks.push_back({{"channels", b.channels},
                      {"pool_h", b.pool_h},
                      {"pool_w", b.pool_w}});
  j["backbone"] = blocks;
  j["hidden_dim"] = cfg.hidden_dim;
  j["attention_dim"] = cfg.attention_dim;
  j["embed_dim"] = cfg.embed_dim;
  j["vocab_size"] = cfg.vocab_size;
  j["max_decode_len"] = cfg.max_decode_len;
  j["dropout_rate"] = cfg.dropout_rate;
  j["bidirectional"] = cfg.bidirectional;
  j["freeze_backbone"] = cfg.freeze_backbone;
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config json: ") + e.what());
  }
  static const char* known[] = {"image_h",       "image_w",     "backbone",
                                "hidden_dim",    "attention_dim", "embed_dim",
                                "vocab_size",    "max_decode_len", "dropout_rate",
                                "bidirectional", "freeze_backbone"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw DataError("model config json: unknown key '" + it.key() + "'");
  }
  ModelConfig cfg;
  try {
    cfg.image_h = j.at("image_h").get<int>();
    cfg.image_w = j.at("image_w").get<int>();
    for (const auto& b : j.at("backbone")) {
      ConvBlockSpec blk;
      blk.channels = b.at("channels").get<int>();
      blk.pool_h = b.at("pool_h").get<int>();
      blk.pool_w = b.at("pool_w").get<int>();
      cfg.backbone.push_back(blk);
    }
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.attention_dim = j.at("attention_dim").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_decode_len = j.at("max_decode_len").get<int>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.bidirectional = j.at("bidirectional").get<bool>();
    cfg.freeze_backbone = j.at("freeze_backbone").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config json: ") + e.what());
  }
  validate_model_config(cfg);
  return cfg;
}

namespace {

constexpr char kMagic[8] = {'C', 'S', 'R', 'M', 'D', 'L', '0', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_u64(std::ofstream& f, uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

struct Reader {
  std::ifstream f;
  std::string path;
  explicit Reader(const std::string& p) : f(p, std::ios::binary), path(p) {
    if (!f) throw DataError("checkpoint: cannot open '" + p + "'");
  }
  void bytes(void* dst, size_t n) {
    f.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n)
      throw DataError("checkpoint: truncated file '" + path + "'");
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
};

}  // namespace

void save_checkpoint(const Model<float>& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("checkpoint: cannot write '" + path + "'");
  f.write(kMagic, sizeof kMagic);
  put_u32(f, kVersion);
  put_u64(f, model.vocab_hash());
  std::string cfg = model_config_to_json(model.config());
  put_u64(f, cfg.size());
  f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put_u64(f, model.num_parameters());
  for (size_t i = 0; i < model.num_parameters(); ++i) {
    const Parameter<float>& p = model.parameter(i);
    put_u64(f, p.name.size());
    f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(f, static_cast<uint32_t>(p.value.rank()));
    for (int d = 0; d < p.value.rank(); ++d)
      put_u32(f, static_cast<uint32_t>(p.value.dim(d)));
    f.write(reinterpret_cast<const char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(float)));
  }
  if (!f) throw DataError("checkpoint: write failed for '" + path + "'");
}

Model<float> load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw DataError("checkpoint: bad magic in '" + path + "'");
  uint32_t version = r.u32();
  if (version != kVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  uint64_t vocab_hash = r.u64();
  uint64_t cfg_len = r.u64();
  if (cfg_len > (1u << 20))
    throw DataError("checkpoint: implausible config length");
  std::string cfg_text(cfg_len, '\0');
  r.bytes(cfg_text.data(), cfg_len);
  ModelConfig cfg = model_config_from_json(cfg_text);
  Model<float> model(cfg, vocab_hash, /*init_seed=*/0);
  uint64_t n = r.u64();
  if (n != model.num_parameters())
    throw DataError("checkpoint: parameter count " + std::to_string(n) +
                    " does not match config (" +
                    std::to_string(model.num_parameters()) + ")");
  std::vector<char> seen(model.num_parameters(), 0);
  for (uint64_t i = 0; i < n; ++i) {
    uint64_t name_len = r.u64();
    if (name_len > 4096) throw DataError("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    uint32_t rank = r.u32();
    if (rank > 8) throw DataError("checkpoint: implausible tensor rank");
    std::vector<int> dims(rank);
    size_t count = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      dims[d] = static_cast<int>(r.u32());
      if (dims[d] < 1) throw DataError("checkpoint: non-positive dimension");
      count *= static_cast<size_t>(dims[d]);
    }
    Parameter<float>& p = model.param(name);
    size_t idx = 0;
    for (; idx < model.num_parameters(); ++idx)
      if (model.parameter(idx).name == name) break;
    if (seen[idx]) throw DataError("checkpoint: duplicate parameter '" + name + "'");
    seen[idx] = 1;
    if (p.value.shape() != dims) {
      std::string got = "(";
      for (size_t d = 0; d < dims.size(); ++d)
        got += (d ? "," : "") + std::to_string(dims[d]);
      throw DataError("checkpoint: shape mismatch for '" + name + "': file has " +
                      got + "), model expects " + p.value.shape_str());
    }
    r.bytes(p.value.data(), count * sizeof(float));
  }
  return model;
}

Model<float> load_checkpoint(const std::string& path,
                             uint64_t expected_vocab_hash) {
  Model<float> model = load_checkpoint(path);
  if (model.vocab_hash() != expected_vocab_hash)
    throw DataError("checkpoint: vocabulary hash " + hex64(model.vocab_hash()) +
                    " does not match expected " + hex64(expected_vocab_hash) +
                    "; the checkpoint was trained with a different vocabulary");
  return model;
}

// ---- Composed finite-difference checks ----

namespace {

// Small double-precision configuration: image 4x5, one conv block without
// pooling -> grid 2x3, so L = 6 flattened positions.
ModelConfig composed_check_config() {
  ModelConfig cfg;
  cfg.image_h = 4;
  cfg.image_w = 5;
  cfg.backbone = {{2, 1, 1}};
  cfg.hidden_dim = 4;
  cfg.attention_dim = 3;
  cfg.embed_dim = 2;
  cfg.vocab_size = 5;
  cfg.max_decode_len = 6;
  cfg.dropout_rate = 0.0;
  return cfg;
}

Tensor<double> random_unit_image(const ModelConfig& cfg, Rng& rng) {
  Tensor<double> img({cfg.image_h, cfg.image_w, 1});
  for (size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  return img;
}

Tensor<double> random_signed(std::vector<int> shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

GradCheck teacher_forced_check(const std::string& name, const ModelConfig& cfg,
                               uint64_t model_seed, uint64_t image_seed,
                               std::vector<int> targets) {
  auto model = std::make_shared<Model<double>>(cfg, 0, model_seed);
  Rng rng(image_seed);
  Tensor<double> img = random_unit_image(cfg, rng);
  GradCheck check;
  check.name = name;
  for (size_t i = 0; i < model->num_parameters(); ++i)
    check.inputs.push_back(model->parameter(i).value);
  check.build = [model, img, targets = std::move(targets)](
                    Tape<double>& t, const std::vector<int>& leaves) {
    auto b = model->bind_vars(t, leaves);
    return model->build_teacher_forced(b, img, targets).loss;
  };
  return check;
}

}  // namespace

std::vector<GradCheck> composed_grad_checks(uint64_t seed) {
  std::vector<GradCheck> checks;

  {  // Encoder outputs and final state as a function of the feature grid.
    auto model = std::make_shared<Model<double>>(composed_check_config(), 0,
                                                 derive_seed(seed, 31, 0));
    Rng rng(derive_seed(seed, 31, 1));
    int l = 5;
    Tensor<double> feats =
        random_signed({l, model->config().feature_channels()}, rng);
    Tensor<double> w_out = random_signed({l, model->config().hidden_dim}, rng);
    Tensor<double> w_fin = random_signed({1, model->config().hidden_dim}, rng);
    GradCheck check;
    check.name = "encoder_wrt_features";
    check.inputs = {feats};
    check.build = [model, w_out, w_fin](Tape<double>& t,
                                        const std::vector<int>& leaves) {
      std::vector<int> vars;
      for (size_t i = 0; i < model->num_parameters(); ++i)
        vars.push_back(t.leaf(model->parameter(i).value, false));
      auto b = model->bind_vars(t, std::move(vars));
      auto enc = model->encode(b, leaves[0]);
      int lw = t.leaf(w_out), fw = t.leaf(w_fin);
      return t.add(t.sum(t.mul(enc.outputs, lw)),
                   t.sum(t.mul(enc.final_state, fw)));
    };
    checks.push_back(std::move(check));
  }

  {  // One attention + decode step as a function of the embedding table.
    auto model = std::make_shared<Model<double>>(composed_check_config(), 0,
                                                 derive_seed(seed, 32, 0));
    Rng rng(derive_seed(seed, 32, 1));
    Tensor<double> enc = random_signed({4, model->config().encoder_dim()}, rng);
    Tensor<double> state = random_signed({1, model->config().hidden_dim}, rng);
    Tensor<double> w = random_signed({1, model->config().vocab_size}, rng);
    size_t embed_idx = 0;
    for (size_t i = 0; i < model->num_parameters(); ++i)
      if (model->parameter(i).name == "embed.table") embed_idx = i;
    GradCheck check;
    check.name = "step_logits_wrt_embedding";
    check.inputs = {model->param("embed.table").value};
    check.build = [model, enc, state, w, embed_idx](
                      Tape<double>& t, const std::vector<int>& leaves) {
      std::vector<int> vars;
      for (size_t i = 0; i < model->num_parameters(); ++i)
        vars.push_back(i == embed_idx
                           ? leaves[0]
                           : t.leaf(model->parameter(i).value, false));
      auto b = model->bind_vars(t, std::move(vars));
      int ev = t.leaf(enc);
      auto s = model->decode_step(b, 4, t.leaf(state), ev,
                                  model->attention_keys(b, ev));
      return t.sum(t.mul(s.logits, t.leaf(w)));
    };
    checks.push_back(std::move(check));
  }

  checks.push_back(teacher_forced_check(
      "teacher_forced_e2e", composed_check_config(), derive_seed(seed, 33, 0),
      derive_seed(seed, 33, 1), {4, 4, Vocabulary::kEnd}));

  {
    ModelConfig cfg = composed_check_config();
    cfg.image_h = 8;
    cfg.image_w = 10;
    cfg.backbone = {{2, 2, 2}};  // 8x10 -> 6x8 -> 3x4: L = 12
    checks.push_back(teacher_forced_check(
        "teacher_forced_conv_pool", cfg, derive_seed(seed, 34, 0),
        derive_seed(seed, 34, 1), {4, Vocabulary::kEnd}));
  }

  {
    ModelConfig cfg = composed_check_config();
    cfg.bidirectional = true;
    checks.push_back(teacher_forced_check(
        "teacher_forced_bidirectional", cfg, derive_seed(seed, 35, 0),
        derive_seed(seed, 35, 1), {4, Vocabulary::kEnd}));
  }

  return checks;
}

}  // namespace csr
