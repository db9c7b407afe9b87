#include "train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace csr {

using json = nlohmann::json;

namespace {

std::vector<uint8_t> pad_mask(const std::vector<int>& targets) {
  std::vector<uint8_t> m(targets.size(), 1);
  for (size_t i = 0; i < targets.size(); ++i)
    if (targets[i] == Vocabulary::kPad) m[i] = 0;
  return m;
}

// Manifest codes plus an END marker: the sequence the decoder must emit.
std::vector<int> targets_for(const SampleManifest& m) {
  std::vector<int> t = m.codes;
  t.push_back(Vocabulary::kEnd);
  return t;
}

void check_compatible(const Model<float>& model, const LoadedDataset& ds) {
  if (ds.vocab.size() != model.config().vocab_size)
    throw DataError("train: dataset vocabulary size " +
                    std::to_string(ds.vocab.size()) + " != model vocab_size " +
                    std::to_string(model.config().vocab_size));
  if (ds.sequence_length + 1 > model.config().max_decode_len)
    throw DataError("train: sequence length " + std::to_string(ds.sequence_length) +
                    " + END exceeds max_decode_len " +
                    std::to_string(model.config().max_decode_len));
  if (!ds.images.empty() &&
      (ds.images[0].dim(0) != model.config().image_h ||
       ds.images[0].dim(1) != model.config().image_w))
    throw ShapeError("train: dataset image " + std::to_string(ds.images[0].dim(0)) +
                     "x" + std::to_string(ds.images[0].dim(1)) +
                     " != model input " + std::to_string(model.config().image_h) +
                     "x" + std::to_string(model.config().image_w));
}

struct PassCounts {
  double loss_sum = 0.0;  // summed masked cross-entropy
  size_t positions = 0;   // unmasked target positions
  size_t correct = 0;     // argmax matches at unmasked positions
};

// Accuracy/loss bookkeeping shared by the train and eval passes.
void tally(PassCounts& c, const Tensor<float>& logits, const std::vector<int>& targets,
           const std::vector<uint8_t>& mask, double loss) {
  c.loss_sum += loss;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (!mask[i]) continue;
    ++c.positions;
    if (argmax_row(logits, static_cast<int>(i)) == targets[i]) ++c.correct;
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
  if (!(cfg.learning_rate >= 0) || !std::isfinite(cfg.learning_rate))
    throw UsageError("train config: learning_rate must be finite and >= 0");
  if (!(cfg.dropout >= 0.0) || cfg.dropout >= 1.0)
    throw UsageError("train config: dropout must lie in [0, 1)");
  if (cfg.max_epochs < 1) throw UsageError("train config: max_epochs must be >= 1");
  if (!(cfg.train_fraction > 0.0) || cfg.train_fraction > 1.0)
    throw UsageError("train config: train_fraction must lie in (0, 1]");
  if (!std::isfinite(cfg.convergence_loss) || !std::isfinite(cfg.convergence_acc))
    throw UsageError("train config: convergence thresholds must be finite");
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["dropout"] = cfg.dropout;
  j["teacher_forcing"] = cfg.teacher_forcing;
  j["max_epochs"] = cfg.max_epochs;
  j["train_fraction"] = cfg.train_fraction;
  j["convergence_loss"] = cfg.convergence_loss;
  j["convergence_acc"] = cfg.convergence_acc;
  j["grad_clip_norm"] = cfg.grad_clip_norm;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("train config: bad JSON: ") + e.what());
  }
  TrainConfig cfg;
  std::set<std::string> known = {"batch_size",       "learning_rate",
                                 "dropout",          "teacher_forcing",
                                 "max_epochs",       "train_fraction",
                                 "convergence_loss", "convergence_acc",
                                 "grad_clip_norm",   "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw DataError("train config: unknown key '" + it.key() + "'");
  try {
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("learning_rate")) cfg.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("dropout")) cfg.dropout = j["dropout"].get<double>();
    if (j.contains("teacher_forcing"))
      cfg.teacher_forcing = j["teacher_forcing"].get<bool>();
    if (j.contains("max_epochs")) cfg.max_epochs = j["max_epochs"].get<int>();
    if (j.contains("train_fraction"))
      cfg.train_fraction = j["train_fraction"].get<double>();
    if (j.contains("convergence_loss"))
      cfg.convergence_loss = j["convergence_loss"].get<double>();
    if (j.contains("convergence_acc"))
      cfg.convergence_acc = j["convergence_acc"].get<double>();
    if (j.contains("grad_clip_norm"))
      cfg.grad_clip_norm = j["grad_clip_norm"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("train config: bad value: ") + e.what());
  }
  validate_train_config(cfg);
  return cfg;
}

SplitIndices split_dataset(int sample_count, double train_fraction, uint64_t seed) {
  if (sample_count < 1) throw UsageError("split: sample_count must be >= 1");
  if (!(train_fraction > 0.0) || train_fraction > 1.0)
    throw UsageError("split: train_fraction must lie in (0, 1]");
  std::vector<int> order(static_cast<size_t>(sample_count));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  auto train_n = static_cast<size_t>(
      std::llround(train_fraction * static_cast<double>(sample_count)));
  if (train_n < 1) train_n = 1;
  if (train_n > order.size()) train_n = order.size();
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<long>(train_n));
  s.val.assign(order.begin() + static_cast<long>(train_n), order.end());
  return s;
}

std::string curves_csv(const std::vector<EpochStats>& log) {
  std::string out = "epoch,train_loss,val_loss,train_acc,val_acc,test_acc,seconds\n";
  for (const EpochStats& s : log) {
    out += std::to_string(s.epoch);
    out += ',';
    out += fmt_double(s.train_loss);
    out += ',';
    out += fmt_double(s.val_loss);
    out += ',';
    out += fmt_double(s.train_acc);
    out += ',';
    out += fmt_double(s.val_acc);
    out += ',';
    if (s.test_acc >= 0) out += fmt_double(s.test_acc);
    out += ',';
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", s.seconds);
    out += buf;
    out += '\n';
  }
  return out;
}

std::string curves_csv_deterministic(const std::vector<EpochStats>& log) {
  std::istringstream in(curves_csv(log));
  std::string line, out;
  while (std::getline(in, line)) {
    size_t cut = line.rfind(',');
    out += line.substr(0, cut);
    out += '\n';
  }
  return out;
}

void write_curves_csv(const std::string& path, const std::vector<EpochStats>& log) {
  write_text_file(path, curves_csv(log));
}

std::vector<EpochStats> read_curves_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) ||
      line != "epoch,train_loss,val_loss,train_acc,val_acc,test_acc,seconds")
    throw DataError("curves csv: bad header in " + path);
  std::vector<EpochStats> log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.push_back("");
    if (f.size() != 7) throw DataError("curves csv: bad row in " + path);
    EpochStats s;
    try {
      s.epoch = std::stoi(f[0]);
      s.train_loss = std::stod(f[1]);
      s.val_loss = std::stod(f[2]);
      s.train_acc = std::stod(f[3]);
      s.val_acc = std::stod(f[4]);
      s.test_acc = f[5].empty() ? -1.0 : std::stod(f[5]);
      s.seconds = std::stod(f[6]);
    } catch (const std::exception&) {
      throw DataError("curves csv: bad number in " + path);
    }
    log.push_back(s);
  }
  return log;
}

EvalStats evaluate_teacher_forced(Model<float>& model, const LoadedDataset& ds,
                                  const std::vector<int>& indices) {
  if (indices.empty()) throw UsageError("evaluate: no sample indices");
  check_compatible(model, ds);
  PassCounts c;
  for (int idx : indices) {
    const SampleManifest& m = ds.manifests.at(static_cast<size_t>(idx));
    std::vector<int> targets = targets_for(m);
    std::vector<uint8_t> mask = pad_mask(targets);
    Tape<float> tape;
    auto b = model.bind(tape, false, nullptr);
    auto g = model.build_teacher_forced(
        b, ink_input<float>(ds.images[static_cast<size_t>(idx)]), targets, mask,
        Reduction::Sum);
    tally(c, tape.value(g.logits), targets, mask,
          static_cast<double>(tape.value(g.loss)[0]));
  }
  EvalStats out;
  out.loss = c.loss_sum / static_cast<double>(c.positions);
  out.acc = static_cast<double>(c.correct) / static_cast<double>(c.positions);
  return out;
}

double free_running_position_accuracy(Model<float>& model, const LoadedDataset& ds,
                                      const std::vector<int>& indices) {
  if (indices.empty()) throw UsageError("evaluate: no sample indices");
  check_compatible(model, ds);
  size_t correct = 0, total = 0;
  for (int idx : indices) {
    const SampleManifest& m = ds.manifests.at(static_cast<size_t>(idx));
    auto rec = model.forward_free_running(
        ink_input<float>(ds.images[static_cast<size_t>(idx)]),
        static_cast<int>(m.codes.size()) + 1);
    for (size_t i = 0; i < m.codes.size(); ++i) {
      ++total;
      if (i < rec.codes.size() && rec.codes[i] == m.codes[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

EpochStats train_epoch(Model<float>& model, const LoadedDataset& ds,
                       const std::vector<int>& train_indices,
                       const TrainConfig& cfg, int epoch, TrainState& state) {
  validate_train_config(cfg);
  if (train_indices.empty()) throw UsageError("train_epoch: no training samples");
  if (epoch < 1) throw UsageError("train_epoch: epoch numbering starts at 1");
  check_compatible(model, ds);
  model.set_dropout_rate(cfg.dropout);
  auto t0 = std::chrono::steady_clock::now();

  std::vector<int> order = train_indices;
  Rng shuffle_rng(derive_seed(cfg.seed, kStreamShuffle, static_cast<uint64_t>(epoch)));
  shuffle_rng.shuffle(order);
  Rng dropout_rng(derive_seed(cfg.seed, kStreamDropout, static_cast<uint64_t>(epoch)));

  std::vector<Parameter<float>*> params = model.trainable_parameters();
  AdamConfig<float> adam;
  adam.lr = static_cast<float>(cfg.learning_rate);
  PassCounts epoch_counts;

  size_t n = order.size();
  size_t batch_index = 0;
  for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
    size_t stop = std::min(n, start + static_cast<size_t>(cfg.batch_size));
    zero_grads(params);
    PassCounts batch_counts;
    for (size_t k = start; k < stop; ++k) {
      int idx = order[k];
      const SampleManifest& m = ds.manifests.at(static_cast<size_t>(idx));
      std::vector<int> targets = targets_for(m);
      std::vector<uint8_t> mask = pad_mask(targets);
      try {
        Tape<float> tape;
        auto b = model.bind(tape, true, &dropout_rng);
        Tensor<float> input = ink_input<float>(ds.images[static_cast<size_t>(idx)]);
        auto g = cfg.teacher_forcing
                     ? model.build_teacher_forced(b, input, targets, mask,
                                                  Reduction::Sum)
                     : model.build_self_feeding(b, input, targets, mask,
                                                Reduction::Sum);
        double loss = static_cast<double>(tape.value(g.loss)[0]);
        if (!std::isfinite(loss))
          throw NumericError("loss=" + std::to_string(loss));
        tally(batch_counts, tape.value(g.logits), targets, mask, loss);
        tape.backward(g.loss);
      } catch (const NumericError& e) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index) + " (" + e.what() +
                           ")");
      }
    }
    // Mean-per-position normalization of the summed batch gradient.
    auto scale = static_cast<float>(1.0 / static_cast<double>(batch_counts.positions));
    for (Parameter<float>* p : params)
      for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= scale;
    if (cfg.grad_clip_norm > 0) clip_grad_global_norm(params, cfg.grad_clip_norm);
    adam_step(params, adam, ++state.adam_steps);
    epoch_counts.loss_sum += batch_counts.loss_sum;
    epoch_counts.positions += batch_counts.positions;
    epoch_counts.correct += batch_counts.correct;
    ++batch_index;
  }

  EpochStats s;
  s.epoch = epoch;
  s.train_loss = epoch_counts.loss_sum / static_cast<double>(epoch_counts.positions);
  s.train_acc =
      static_cast<double>(epoch_counts.correct) / static_cast<double>(epoch_counts.positions);
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

FitResult fit(Model<float>& model, const LoadedDataset& ds, const TrainConfig& cfg,
              TrainState* state, const FitOptions& opts) {
  validate_train_config(cfg);
  check_compatible(model, ds);
  SplitIndices split =
      split_dataset(static_cast<int>(ds.manifests.size()), cfg.train_fraction,
                    derive_seed(cfg.seed, kStreamSplit));
  TrainState local;
  TrainState& st = state ? *state : local;
  std::vector<int> test_idx = opts.test_indices;
  if (opts.test_ds && test_idx.empty()) {
    test_idx.resize(opts.test_ds->manifests.size());
    std::iota(test_idx.begin(), test_idx.end(), 0);
  }

  FitResult out;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    EpochStats s = train_epoch(model, ds, split.train, cfg, epoch, st);
    if (!split.val.empty()) {
      EvalStats v = evaluate_teacher_forced(model, ds, split.val);
      s.val_loss = v.loss;
      s.val_acc = v.acc;
    } else {
      s.val_loss = std::nan("");
      s.val_acc = std::nan("");
    }
    if (opts.test_ds)
      s.test_acc = free_running_position_accuracy(model, *opts.test_ds, test_idx);
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.log.push_back(s);
    if (s.train_loss <= cfg.convergence_loss || s.train_acc >= cfg.convergence_acc) {
      out.converged = true;
      out.convergence_epoch = epoch;
      break;
    }
  }
  return out;
}

std::vector<RefinementResult> incremental_fit(Model<float>& model,
                                              const std::vector<RefinementStep>& steps,
                                              const LoadedDataset& test_ds,
                                              const std::vector<int>& test_indices) {
  if (steps.empty()) throw UsageError("incremental_fit: empty schedule");
  std::vector<int> test_idx = test_indices;
  if (test_idx.empty()) {
    test_idx.resize(test_ds.manifests.size());
    std::iota(test_idx.begin(), test_idx.end(), 0);
  }
  TrainState state;
  std::vector<RefinementResult> out;
  for (const RefinementStep& step : steps) {
    if (!step.data) throw UsageError("incremental_fit: step without data");
    RefinementResult r;
    r.name = step.name;
    r.fit = fit(model, *step.data, step.config, &state);
    r.test_acc = free_running_position_accuracy(model, test_ds, test_idx);
    out.push_back(std::move(r));
  }
  return out;
}

std::string run_metadata(const TrainConfig& cfg, const Model<float>& model,
                         const std::string& dataset_spec_json) {
  std::string out;
  out += "# run metadata\n";
  out += "train_config: ";
  json j = json::parse(train_config_to_json(cfg));
  out += j.dump();
  out += '\n';
  out += "model_config: ";
  out += json::parse(model_config_to_json(model.config())).dump();
  out += '\n';
  out += "model_init_seed: " + std::to_string(model.init_seed()) + '\n';
  out += "vocab_hash: " + std::to_string(model.vocab_hash()) + '\n';
  out += "dataset_spec_hash: " + std::to_string(fnv1a64(dataset_spec_json)) + '\n';
  return out;
}

}  // namespace csr

