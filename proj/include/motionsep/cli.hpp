#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "motionsep/config.hpp"
#include "motionsep/probe.hpp"
#include "motionsep/trainer.hpp"

namespace motionsep::cli {

// One distinct nonzero exit code per error kind, so scripts can branch on
// the failure class without parsing stderr.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,   // anything not covered below
  kExitConfig = 2,
  kExitShape = 3,
  kExitPlan = 4,
  kExitVocab = 5,
  kExitDependency = 6,
  kExitFileFormat = 7,
  kExitDiverged = 8,
  kExitMetricGate = 9,
};

int exit_code_for(const std::exception& e);

// Parsed command line: one subcommand plus flag overrides that map onto
// RunConfig fields (see effective_config).
struct Options {
  std::string command;  // synth|pretrain|customize|sample|probe|ablate|help
  std::optional<std::string> config_path;  // --config FILE
  std::optional<uint64_t> seed;            // --seed N          -> seed
  std::optional<std::string> out_dir;      // --out-dir DIR     -> out_dir
  std::optional<std::string> suite;        // --suite NAME      (ablate only)
  std::optional<int> tau;                  // --tau N           -> sample.tau
  std::optional<double> beta;              // --beta X          -> net.beta
  std::optional<std::string> plan;         // --plan P          -> temporal.plan
  std::optional<std::string> skip_mode;    // --skip-mode M     -> net.skip_mode
  std::optional<std::string> ah_phase;     // --ah-phase train|post
                                           //                   -> temporal.ah_in_training
};

// argv[1:] -> Options. Flags accept "--flag value" and "--flag=value".
// Unknown flags, missing values, malformed numbers, stray positionals and
// flag/command mismatches are ConfigError; an unknown command or suite name
// is VocabError. "help", "--help" and "-h" parse as the help command.
Options parse_args(const std::vector<std::string>& args);

// The run configuration the command executes: the config file (or defaults
// when --config is absent) with the flag overrides applied, validated.
config::RunConfig effective_config(const Options& opt);

std::string usage();

// Phase-level progress messages; commands stay silent without one.
using InfoLog = std::function<void(const std::string&)>;

// The evaluation prompt grid: probe.eval_specs artifact-free appearance
// targets for the customized motion, drawn from a dedicated seed stream and
// redrawn until distinct from every reference-set appearance (shape and
// foreground bin), so the metrics measure generalization rather than recall.
std::vector<synthvid::AppearanceSpec> eval_specs(const config::RunConfig& rc);

// Process-wide judge cache keyed by the full JudgeConfig; training the judge
// is deterministic, so sharing it across commands changes nothing but time.
const probe::MotionJudge& shared_judge(const probe::JudgeConfig& cfg);

// Judge settings implied by a run config: clip geometry from [synth], grid
// and corpus sizes from [probe], the fixed default validity gate and seed.
// The judge is part of the metric definition, so it deliberately does not
// vary with the run seed.
probe::JudgeConfig judge_config(const config::RunConfig& rc);

// Commands. Out-dir layout: <out_dir>/dataset (synth), <out_dir>/train
// (pretrain/customize checkpoints), <out_dir>/samples, <out_dir>/probe and
// <out_dir>/ablate-<suite>. pretrain and customize reuse checkpoints already
// in <out_dir>/train when the stored config's phase fingerprints match;
// deterministic training makes reuse byte-equivalent to retraining.
std::filesystem::path cmd_synth(const config::RunConfig& rc, const InfoLog& info = {});
trainer::CheckpointSet cmd_pretrain(const config::RunConfig& rc, const InfoLog& info = {});
trainer::CheckpointSet cmd_customize(const config::RunConfig& rc, const InfoLog& info = {});
std::filesystem::path cmd_sample(const config::RunConfig& rc, const InfoLog& info = {});
std::filesystem::path cmd_probe(const config::RunConfig& rc, const InfoLog& info = {});
std::filesystem::path cmd_ablate(const config::RunConfig& rc, const std::string& suite,
                                 const InfoLog& info = {});

// Suite vocabulary, in the order help lists it:
// table1, beta_sweep, ah_train_vs_post, pli, components.
const std::vector<std::string>& ablate_suites();

// Minimal standalone SVG line chart: one polyline per series over shared
// categorical x labels. Every series must have one value per label
// (ShapeError otherwise; ConfigError when there is nothing to plot). The y
// axis spans at least [0, 1] and stretches to cover the data.
struct ChartSeries {
  std::string label;
  std::vector<double> values;
};
void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::vector<std::string>& x_labels,
                      const std::vector<ChartSeries>& series);

// Full dispatch: parse, load config, run the command. Progress goes to
// `out`, diagnostics to `err`; the return value is the ExitCode mapping of
// whatever the command threw (0 on success).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace motionsep::cli
