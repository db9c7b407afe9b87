#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "json.hpp"
#include "notation.hpp"

namespace csr {

using json = nlohmann::json;

const std::string& builtin_openings_pgn() {
  static const std::string text = R"PGN([Event "Ruy Lopez, Closed"]
1. e4 e5 2. Nf3 Nc6 3. Bb5 a6 4. Ba4 Nf6 5. O-O Be7 6. Re1 b5 7. Bb3 d6 8. c3 O-O

[Event "Italian Game, Giuoco Piano"]
1. e4 e5 2. Nf3 Nc6 3. Bc4 Bc5 4. c3 Nf6 5. d3 d6 6. O-O O-O 7. Re1 a6 8. h3 Ba7

[Event "Two Knights Defence"]
1. e4 e5 2. Nf3 Nc6 3. Bc4 Nf6 4. d3 Be7 5. O-O O-O 6. Re1 d6 7. a4 Na5 8. Ba2 c5

[Event "Scotch Game"]
1. e4 e5 2. Nf3 Nc6 3. d4 exd4 4. Nxd4 Nf6 5. Nc3 Bb4 6. Nxc6 bxc6 7. Bd3 d5 8. exd5 cxd5

[Event "Petroff Defence"]
1. e4 e5 2. Nf3 Nf6 3. Nxe5 d6 4. Nf3 Nxe4 5. d4 d5 6. Bd3 Be7 7. O-O Nc6 8. c4 Nb4

[Event "Four Knights Game"]
1. e4 e5 2. Nf3 Nc6 3. Nc3 Nf6 4. Bb5 Bb4 5. O-O O-O 6. d3 d6 7. Bg5 Bxc3 8. bxc3 Qe7

[Event "Sicilian Najdorf"]
1. e4 c5 2. Nf3 d6 3. d4 cxd4 4. Nxd4 Nf6 5. Nc3 a6 6. Be2 e5 7. Nb3 Be7 8. O-O O-O

[Event "Sicilian Dragon"]
1. e4 c5 2. Nf3 d6 3. d4 cxd4 4. Nxd4 Nf6 5. Nc3 g6 6. Be3 Bg7 7. f3 O-O 8. Qd2 Nc6

[Event "Sicilian Sveshnikov"]
1. e4 c5 2. Nf3 Nc6 3. d4 cxd4 4. Nxd4 Nf6 5. Nc3 e5 6. Ndb5 d6 7. Bg5 a6 8. Na3 b5

[Event "Sicilian Taimanov"]
1. e4 c5 2. Nf3 e6 3. d4 cxd4 4. Nxd4 Nc6 5. Nc3 Qc7 6. Be3 a6 7. Qd2 Nf6 8. O-O-O Bb4

[Event "French Winawer"]
1. e4 e6 2. d4 d5 3. Nc3 Bb4 4. e5 c5 5. a3 Bxc3+ 6. bxc3 Ne7 7. Qg4 Qc7 8. Qxg7 Rg8

[Event "French Tarrasch"]
1. e4 e6 2. d4 d5 3. Nd2 Nf6 4. e5 Nfd7 5. Bd3 c5 6. c3 Nc6 7. Ne2 cxd4 8. cxd4 f6

[Event "Caro-Kann Classical"]
1. e4 c6 2. d4 d5 3. Nc3 dxe4 4. Nxe4 Bf5 5. Ng3 Bg6 6. h4 h6 7. Nf3 Nd7 8. h5 Bh7

[Event "Caro-Kann Advance"]
1. e4 c6 2. d4 d5 3. e5 Bf5 4. Nf3 e6 5. Be2 Nd7 6. O-O Bg6 7. Nbd2 Nh6 8. Nb3 Nf5

[Event "Pirc Defence"]
1. e4 d6 2. d4 Nf6 3. Nc3 g6 4. f4 Bg7 5. Nf3 c5 6. Bb5+ Bd7 7. e5 Ng4 8. e6 fxe6

[Event "Scandinavian Defence"]
1. e4 d5 2. exd5 Qxd5 3. Nc3 Qa5 4. d4 Nf6 5. Nf3 c6 6. Bc4 Bf5 7. Bd2 e6 8. Qe2 Bb4

[Event "Alekhine Defence"]
1. e4 Nf6 2. e5 Nd5 3. d4 d6 4. Nf3 Bg4 5. Be2 e6 6. O-O Be7 7. c4 Nb6 8. Nc3 O-O

[Event "Queens Gambit Declined"]
1. d4 d5 2. c4 e6 3. Nc3 Nf6 4. Bg5 Be7 5. e3 O-O 6. Nf3 h6 7. Bh4 b6 8. cxd5 Nxd5

[Event "Slav Defence"]
1. d4 d5 2. c4 c6 3. Nf3 Nf6 4. Nc3 dxc4 5. a4 Bf5 6. e3 e6 7. Bxc4 Bb4 8. O-O O-O

[Event "Queens Gambit Accepted"]
1. d4 d5 2. c4 dxc4 3. Nf3 Nf6 4. e3 e6 5. Bxc4 c5 6. O-O a6 7. dxc5 Bxc5 8. Qe2 b5

[Event "Nimzo-Indian Defence"]
1. d4 Nf6 2. c4 e6 3. Nc3 Bb4 4. e3 O-O 5. Bd3 d5 6. Nf3 c5 7. O-O Nc6 8. a3 Bxc3

[Event "Queens Indian Defence"]
1. d4 Nf6 2. c4 e6 3. Nf3 b6 4. g3 Ba6 5. b3 Bb4+ 6. Bd2 Be7 7. Bg2 c6 8. Bc3 d5

[Event "Kings Indian Defence"]
1. d4 Nf6 2. c4 g6 3. Nc3 Bg7 4. e4 d6 5. Nf3 O-O 6. Be2 e5 7. O-O Nc6 8. d5 Ne7

[Event "Gruenfeld Defence"]
1. d4 Nf6 2. c4 g6 3. Nc3 d5 4. cxd5 Nxd5 5. e4 Nxc3 6. bxc3 Bg7 7. Nf3 c5 8. Rb1 O-O

[Event "Catalan Opening"]
1. d4 Nf6 2. c4 e6 3. g3 d5 4. Bg2 Be7 5. Nf3 O-O 6. O-O dxc4 7. Qc2 a6 8. Qxc4 b5

[Event "English Symmetrical"]
1. c4 c5 2. Nf3 Nf6 3. d4 cxd4 4. Nxd4 e6 5. Nc3 Bb4 6. g3 O-O 7. Bg2 d5 8. cxd5 Nxd5

[Event "London System"]
1. d4 d5 2. Nf3 Nf6 3. Bf4 c5 4. e3 Nc6 5. Nbd2 e6 6. c3 Bd6 7. Bg3 O-O 8. Bd3 b6
)PGN";
  return text;
}

const std::string& builtin_langmap_pt() {
  static const std::string text = R"MAP(# Portuguese piece letters -> English
R K
D Q
T R
B B
C N
)MAP";
  return text;
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
      throw DataError(std::string("run config: unknown key '") + it.key() +
                      "' in " + where);
  }
}

json schedule_step_to_json(const ScheduleStep& s) {
  json j;
  j["name"] = s.name;
  j["data"] = json::parse(dataset_spec_to_json(s.data));
  j["train"] = json::parse(train_config_to_json(s.train));
  return j;
}

ScheduleStep schedule_step_from_json(const json& j) {
  reject_unknown(j, {"name", "data", "train"}, "schedule step");
  ScheduleStep s;
  try {
    s.name = j.at("name").get<std::string>();
    s.data = dataset_spec_from_json(j.at("data").dump());
    s.train = train_config_from_json(j.at("train").dump());
  } catch (const json::exception& e) {
    throw DataError(std::string("run config: schedule step: ") + e.what());
  }
  return s;
}

void flatten_keys(const json& j, const std::string& prefix,
                  std::vector<std::string>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten_keys(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(),
                   out);
  } else {
    out.push_back(prefix);
  }
}

std::string env_form(const std::string& dotted) {
  std::string out;
  for (char c : dotted)
    out += c == '.' ? '_'
                    : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string upper(const std::string& s) {
  std::string out;
  for (char c : s)
    out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_dotted(const std::string& key) {
  std::vector<std::string> segs;
  std::string cur;
  for (char c : key) {
    if (c == '.') {
      segs.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  segs.push_back(cur);
  for (const std::string& s : segs)
    if (s.empty()) throw UsageError("override: malformed key '" + key + "'");
  return segs;
}

bool all_digits(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  return true;
}

json* navigate(json* node, const std::string& seg, const std::string& key) {
  if (node->is_object() && node->contains(seg)) return &(*node)[seg];
  if (node->is_array() && all_digits(seg)) {
    size_t idx = std::stoul(seg);
    if (idx < node->size()) return &(*node)[idx];
    throw UsageError("override: index " + seg + " out of range in '" + key + "'");
  }
  throw UsageError("override: unknown key '" + key + "' (no such field '" + seg +
                   "')");
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["vocab"] = cfg.vocab;
  j["experiment"] = json::parse(experiment_preset_to_json(cfg.experiment));
  j["suite"]["seeds"] = cfg.suite_seeds;
  j["sweep"]["lengths"] = cfg.sweep_lengths;
  j["sweep"]["sizes"] = cfg.sweep_sizes;
  j["sweep"]["seeds"] = cfg.sweep_seeds;
  j["schedule"] = json::array();
  for (const ScheduleStep& s : cfg.schedule)
    j["schedule"].push_back(schedule_step_to_json(s));
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("run config: invalid JSON");
  reject_unknown(
      j, {"seed", "out_dir", "vocab", "experiment", "suite", "sweep", "schedule"},
      "run config");
  RunConfig cfg;
  try {
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.out_dir = j.at("out_dir").get<std::string>();
    cfg.vocab = j.at("vocab").get<std::string>();
    cfg.experiment = experiment_preset_from_json(j.at("experiment").dump());
    const json& suite = j.at("suite");
    reject_unknown(suite, {"seeds"}, "suite");
    cfg.suite_seeds = suite.at("seeds").get<std::vector<uint64_t>>();
    const json& sweep = j.at("sweep");
    reject_unknown(sweep, {"lengths", "sizes", "seeds"}, "sweep");
    cfg.sweep_lengths = sweep.at("lengths").get<std::vector<int>>();
    cfg.sweep_sizes = sweep.at("sizes").get<std::vector<int>>();
    cfg.sweep_seeds = sweep.at("seeds").get<std::vector<uint64_t>>();
    cfg.schedule.clear();
    for (const json& s : j.at("schedule"))
      cfg.schedule.push_back(schedule_step_from_json(s));
  } catch (const json::exception& e) {
    throw DataError(std::string("run config: ") + e.what());
  }
  return cfg;
}

namespace {

// Shared scaffolding for both presets: vocabulary and mutation templates from
// the built-in openings, style pools with disjoint train/test seed streams.
RunConfig preset_common(int positions, int template_games, const SheetLayout& layout,
                        ModelConfig (*model_for)(int)) {
  auto corpus = parse_pgn_collection(builtin_openings_pgn());
  Vocabulary vocab = build_vocabulary(corpus, positions);

  SequenceSource src;
  src.kind = SourceKind::TemplateWithMutation;
  src.mutation_prob = 0.2;
  src.vocab_size = vocab.size();
  int games = std::min<int>(template_games, static_cast<int>(corpus.size()));
  for (int g = 0; g < games; ++g) {
    std::vector<int> codes = vocab.encode(corpus[static_cast<size_t>(g)].moves);
    codes.resize(static_cast<size_t>(positions));  // END sits past the prefix
    src.templates.push_back(std::move(codes));
  }

  RunConfig rc;
  rc.vocab = vocab.to_text();
  rc.experiment.train_data.source = src;
  rc.experiment.train_data.layout = layout;
  rc.experiment.train_data.styles =
      StylePool::make(StylePool::Difficulty::Standard, 12, 501);
  rc.experiment.test_data = rc.experiment.train_data;
  rc.experiment.test_data.styles =
      StylePool::make(StylePool::Difficulty::Standard, 4, 777);
  rc.experiment.model = model_for(vocab.size());
  return rc;
}

ScheduleStep make_step(const std::string& name, const DatasetSpec& base, int size,
                       uint64_t seed, StylePool::Difficulty d, int styles,
                       uint64_t style_stream) {
  ScheduleStep s;
  s.name = name;
  s.data = base;
  s.data.size = size;
  s.data.seed = seed;
  s.data.styles = StylePool::make(d, styles, style_stream);
  s.train.max_epochs = 15;
  return s;
}

}  // namespace

RunConfig preset_run_config(const std::string& name) {
  if (name == "desk") {
    RunConfig rc = preset_common(8, 20, desk_layout(), desk_model_config);
    rc.out_dir = "runs/desk";
    rc.experiment.train_data.size = 2000;
    rc.experiment.train_data.seed = 101;
    rc.experiment.test_data.size = 200;
    rc.experiment.test_data.seed = 102;
    rc.sweep_lengths = {2, 4, 6, 8};
    rc.sweep_sizes = {250, 500, 1000, 2000};
    const DatasetSpec& base = rc.experiment.train_data;
    rc.schedule = {
        make_step("easy", base, 700, 111, StylePool::Difficulty::Easy, 8, 601),
        make_step("broader", base, 700, 112, StylePool::Difficulty::Standard, 12,
                  602),
        make_step("hard", base, 700, 113, StylePool::Difficulty::Hard, 12, 603),
    };
    return rc;
  }
  if (name == "paper") {
    RunConfig rc = preset_common(16, 27, reference_layout(), reference_model_config);
    rc.out_dir = "runs/paper";
    rc.experiment.train_data.size = 4000;
    rc.experiment.train_data.seed = 201;
    rc.experiment.test_data.size = 400;
    rc.experiment.test_data.seed = 202;
    rc.sweep_lengths = {4, 8, 12, 16};
    rc.sweep_sizes = {1000, 2000, 4000};
    const DatasetSpec& base = rc.experiment.train_data;
    rc.schedule = {
        make_step("easy", base, 1500, 211, StylePool::Difficulty::Easy, 8, 601),
        make_step("broader", base, 1500, 212, StylePool::Difficulty::Standard, 12,
                  602),
        make_step("hard", base, 1500, 213, StylePool::Difficulty::Hard, 12, 603),
    };
    return rc;
  }
  throw UsageError("preset: unknown preset '" + name + "' (desk|paper)");
}

std::string apply_override(const std::string& config_json,
                           const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw UsageError("override: expected dotted.key=value, got '" + assignment +
                     "'");
  std::string key = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  json doc = json::parse(config_json, nullptr, false);
  if (doc.is_discarded()) throw DataError("override: config is not valid JSON");

  std::vector<std::string> segs = split_dotted(key);
  json* node = &doc;
  for (const std::string& seg : segs) node = navigate(node, seg, key);

  if (node->is_string()) {
    *node = raw;  // strings take the value verbatim, no quoting needed
  } else {
    json val = json::parse(raw, nullptr, false);
    if (val.is_discarded())
      throw UsageError("override: value for '" + key +
                       "' is not valid JSON: " + raw);
    *node = val;
  }
  return doc.dump(2) + "\n";
}

std::string apply_env_overrides(
    const std::string& config_json,
    const std::vector<std::pair<std::string, std::string>>& env) {
  static const std::string prefix = "CHESSREAD_";
  std::string current = config_json;
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    std::string suffix = upper(name.substr(prefix.size()));
    json doc = json::parse(current, nullptr, false);
    if (doc.is_discarded()) throw DataError("override: config is not valid JSON");
    std::vector<std::string> keys;
    flatten_keys(doc, "", keys);
    std::vector<std::string> matches;
    for (const std::string& k : keys)
      if (env_form(k) == suffix) matches.push_back(k);
    if (matches.empty())
      throw UsageError("env override " + name + " matches no config key");
    if (matches.size() > 1)
      throw UsageError("env override " + name + " is ambiguous (" + matches[0] +
                       ", " + matches[1] + ")");
    current = apply_override(current, matches[0] + "=" + value);
  }
  return current;
}

Vocabulary run_vocabulary(const RunConfig& cfg) {
  if (cfg.vocab.empty())
    throw DataError("run config: vocabulary is empty; start from a preset or set "
                    "'vocab'");
  return Vocabulary::from_text(cfg.vocab);
}

AblationSuite suite_from_run_config(const RunConfig& cfg) {
  AblationSuite s;
  s.reference = cfg.experiment;
  s.vocab = run_vocabulary(cfg);
  s.seeds = cfg.suite_seeds;
  s.out_dir = path_join(cfg.out_dir, "ablation");
  return s;
}

SweepSpec sweep_from_run_config(const RunConfig& cfg) {
  SweepSpec w;
  w.base = cfg.experiment;
  w.vocab = run_vocabulary(cfg);
  w.lengths = cfg.sweep_lengths;
  w.sizes = cfg.sweep_sizes;
  w.seeds = cfg.sweep_seeds;
  w.out_dir = path_join(cfg.out_dir, "sweep");
  return w;
}

}  // namespace csr
