#pragma once
// Run configuration: a single JSON document that fully determines a run
// (data, model, training, sweep, suite, incremental schedule), named presets,
// and dotted-key overrides from the command line or the environment. Every
// command writes its resolved document next to its outputs so any run can be
// reproduced from that artifact alone.

#include <string>
#include <utility>
#include <vector>

#include "experiments.hpp"

namespace csr {

// Built-in corpus mirrors, byte-identical to the files under data/. The
// presets use these so the binaries are self-contained.
const std::string& builtin_openings_pgn();
const std::string& builtin_langmap_pt();

// One stage of an incremental schedule: continue training the same model on
// this data with these settings.
struct ScheduleStep {
  std::string name;
  DatasetSpec data;
  TrainConfig train;
};

struct RunConfig {
  uint64_t seed = 0;
  std::string out_dir = "runs/out";
  std::string vocab;  // vocabulary text (code<TAB>token lines), inline
  ExperimentPreset experiment;
  std::vector<uint64_t> suite_seeds = {1, 2, 3};
  std::vector<int> sweep_lengths;
  std::vector<int> sweep_sizes;
  std::vector<uint64_t> sweep_seeds = {1};
  std::vector<ScheduleStep> schedule;
};

// Serialization is total: every field appears in the document, so overrides
// can always navigate to an existing key. Unknown keys anywhere are a hard
// error on parse.
std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);

// Named complete configurations: "desk" (minutes-scale, the acceptance
// workhorse) and "paper" (fidelity-scale dimensions, slow).
RunConfig preset_run_config(const std::string& name);

// Applies one `dotted.key=value` assignment to the document. The key must
// already exist (array elements are addressed by index). The value is parsed
// as JSON unless the existing leaf is a string. Unknown key -> UsageError.
std::string apply_override(const std::string& config_json,
                           const std::string& assignment);

// Applies every CHESSREAD_* variable in `env` (full "NAME" + value pairs) as
// an override; the suffix after the prefix matches a dotted key
// case-insensitively with '.' equivalent to '_'. Array interiors are not
// addressable from the environment.
std::string apply_env_overrides(
    const std::string& config_json,
    const std::vector<std::pair<std::string, std::string>>& env);

// The vocabulary carried inline by the config. Throws DataError when empty.
Vocabulary run_vocabulary(const RunConfig& cfg);

// Suite/sweep assembled from the config (out_dir gets a subdirectory each).
AblationSuite suite_from_run_config(const RunConfig& cfg);
SweepSpec sweep_from_run_config(const RunConfig& cfg);

}  // namespace csr
