// Command-line front end. Everything goes through the C API: this file
// includes no core header and links only the shared library, so it doubles
// as a living example of driving the toolkit from C.
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "chessread.h"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string preset = "desk";
  std::vector<std::string> sets;
  std::string seed;
  std::string out_dir;
  int jobs = 1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path,
                  "Run-configuration JSON file (written back as resolved.json)");
  cmd->add_option("--preset", o.preset,
                  "Built-in configuration used when no --config is given")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--set", o.sets,
                  "Override one dotted.key=value in the configuration "
                  "(repeatable, applied in order)");
  cmd->add_option("--seed", o.seed, "Master seed (shorthand for --set seed=N)");
  cmd->add_option("--out-dir", o.out_dir,
                  "Output directory (shorthand for --set out_dir=DIR)");
  cmd->add_option("--jobs", o.jobs,
                  "Worker cap; the default 1 keeps runs deterministic")
      ->check(CLI::PositiveNumber);
}

int fail_status(csr_status st) {
  std::fprintf(stderr, "error: %s\n", csr_last_error());
  return static_cast<int>(st);
}

// Resolution order: preset or file, then CHESSREAD_* environment variables,
// then --set assignments, then the --seed/--out-dir shorthands.
csr_status build_config(const CommonOpts& o, csr_config** out) {
  csr_status st = o.config_path.empty()
                      ? csr_config_preset(o.preset.c_str(), out)
                      : csr_config_read(o.config_path.c_str(), out);
  if (st != CSR_OK) return st;
  st = csr_config_apply_env(*out);
  for (const std::string& kv : o.sets)
    if (st == CSR_OK) st = csr_config_set(*out, kv.c_str());
  if (st == CSR_OK && !o.seed.empty())
    st = csr_config_set(*out, ("seed=" + o.seed).c_str());
  if (st == CSR_OK && !o.out_dir.empty())
    st = csr_config_set(*out, ("out_dir=" + o.out_dir).c_str());
  if (st != CSR_OK) {
    csr_config_free(*out);
    *out = nullptr;
  }
  return st;
}

// Runs `invoke(config, &summary)`, printing the summary to stdout and any
// failure to stderr. The summary is printed even when the command fails so
// partial reports (e.g. a failed self-check) stay visible.
template <typename Invoke>
int run_command(const CommonOpts& o, Invoke&& invoke) {
  csr_config* cfg = nullptr;
  csr_status st = build_config(o, &cfg);
  if (st != CSR_OK) return fail_status(st);
  char* summary = nullptr;
  st = invoke(cfg, &summary);
  csr_config_free(cfg);
  if (summary) std::fputs(summary, stdout);
  csr_string_free(summary);
  return st == CSR_OK ? 0 : fail_status(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Handwritten chess scoresheet recognition toolkit"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string checkpoint;
  int sample = 0;
  unsigned long long gc_seed = 0;
  int gc_points = 10;
  double gc_tol = 1e-4;
  std::string pgn_file;
  std::string pgn_lang = "en";

  CLI::App* synth =
      app.add_subcommand("synth", "Generate the training and held-out datasets");
  add_common(synth, o);

  CLI::App* train = app.add_subcommand(
      "train", "Train one model, evaluate it on the held-out set, and save a "
               "checkpoint");
  add_common(train, o);

  CLI::App* eval =
      app.add_subcommand("eval", "Evaluate a checkpoint on the held-out set");
  add_common(eval, o);
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint file")
      ->required();

  CLI::App* ablate = app.add_subcommand(
      "ablate", "Run the six-configuration ablation grid with direction checks");
  add_common(ablate, o);

  CLI::App* sweep = app.add_subcommand(
      "sweep", "Run the sequence-length vs training-set-size sweep");
  add_common(sweep, o);

  CLI::App* incremental = app.add_subcommand(
      "incremental", "Train one model through the configured schedule of "
                     "datasets");
  add_common(incremental, o);

  CLI::App* attn = app.add_subcommand(
      "attn-map", "Decode one held-out sample and export attention heat maps");
  add_common(attn, o);
  attn->add_option("--checkpoint", checkpoint, "Model checkpoint file")
      ->required();
  attn->add_option("--sample", sample, "Held-out sample index");

  CLI::App* baseline = app.add_subcommand(
      "baseline", "Image-free sequence-predictability baseline on the "
                  "configured data");
  add_common(baseline, o);

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference validation of every gradient primitive "
                   "and the composed model graphs");
  gradcheck->add_option("--seed", gc_seed, "Seed for check inputs and points");
  gradcheck->add_option("--points", gc_points, "Coordinates probed per check")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--tol", gc_tol, "Maximum allowed relative error")
      ->check(CLI::PositiveNumber);

  CLI::App* pgn = app.add_subcommand("pgn", "Notation utilities");
  pgn->require_subcommand(1);
  CLI::App* pgn_parse = pgn->add_subcommand(
      "parse", "Print each game's moves as space-separated English SAN");
  pgn_parse->add_option("file", pgn_file, "PGN file")->required();
  pgn_parse
      ->add_option("--lang", pgn_lang, "Piece-letter language of the input")
      ->check(CLI::IsMember({"en", "pt"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(CSR_USAGE_ERROR);
  }

  if (app.got_subcommand(synth)) return run_command(o, csr_run_synth);
  if (app.got_subcommand(train)) return run_command(o, csr_run_train);
  if (app.got_subcommand(eval))
    return run_command(o, [&](const csr_config* c, char** s) {
      return csr_run_eval(c, checkpoint.c_str(), s);
    });
  if (app.got_subcommand(ablate)) return run_command(o, csr_run_ablation);
  if (app.got_subcommand(sweep)) return run_command(o, csr_run_sweep);
  if (app.got_subcommand(incremental))
    return run_command(o, csr_run_incremental);
  if (app.got_subcommand(attn))
    return run_command(o, [&](const csr_config* c, char** s) {
      return csr_run_attention_map(c, checkpoint.c_str(), sample, s);
    });
  if (app.got_subcommand(baseline)) return run_command(o, csr_run_baseline);

  if (app.got_subcommand(gradcheck)) {
    char* summary = nullptr;
    csr_status st = csr_run_gradcheck(gc_seed, gc_points, gc_tol, &summary);
    if (summary) std::fputs(summary, stdout);
    csr_string_free(summary);
    return st == CSR_OK ? 0 : fail_status(st);
  }

  if (app.got_subcommand(pgn)) {
    char* text = nullptr;
    csr_status st =
        csr_parse_pgn_file(pgn_file.c_str(), pgn_lang.c_str(), &text);
    if (st != CSR_OK) return fail_status(st);
    std::fputs(text, stdout);
    csr_string_free(text);
    return 0;
  }

  return static_cast<int>(CSR_USAGE_ERROR);
}
