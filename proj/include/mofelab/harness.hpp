#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mofelab/baselines.hpp"
#include "mofelab/data.hpp"
#include "mofelab/train.hpp"

namespace mofelab {

// Everything a run needs, read from a flat `key = value` text file (one pair
// per line, '#' comments). Unknown keys are rejected by name; every command
// echoes the fully resolved values next to its outputs.
struct ExperimentConfig {
  SynthConfig data;
  TrainConfig train;

  std::vector<std::size_t> expert_hidden = {16};
  std::vector<std::size_t> gate_hidden = {16};
  GateInput gate_input = GateInput::raw;
  bool gate_sees_mask = false;
  std::size_t task_count = 1;

  std::size_t bins = 20;
  ScoreMode score = ScoreMode::correctness;
  Variant variant = Variant::simmlm;
  std::string out_dir = "mofelab_out";

  ExperimentConfig();  // fills the standard synthetic-task defaults
  void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::filesystem::path& path);

// The resolved `key = value` echo; parse_config_text(render_config(c))
// reproduces c.
std::string render_config(const ExperimentConfig& cfg);

// Applies the variant's loss rewrite to cfg.train.loss. Called once after
// CLI overrides; rendering afterwards records what actually ran.
void resolve_variant(ExperimentConfig& cfg);

// Freshly initialized model matching the config (uniform gating wired in for
// the static-fusion variant).
DmomeModel build_model(const ExperimentConfig& cfg);

// In-memory pipeline shared by the train/eval/sweep commands and the
// baseline comparisons: build, two-stage train, evaluate the full mask grid.
struct VariantRun {
  DmomeModel model;
  TrainLog log;
  EvaluationReport report;
};
VariantRun run_variant(Variant v, ExperimentConfig cfg,
                       const SynthBundle& data);

// Dataset files live at <prefix>train.mmds / val / test.
std::filesystem::path split_path(const std::string& prefix, Split split);

// Written as `manifest` next to every command's outputs. Everything in it is
// reproducible from (command, config, seed) except wall_clock_ms.
struct RunManifest {
  std::string run_id;  // deterministic: command + seed digest
  std::string command;
  std::uint64_t seed = 0;
  Variant variant = Variant::simmlm;
  std::int64_t wall_clock_ms = 0;
  // (key, value) rows, in order: artifact paths plus free-form notes.
  std::vector<std::pair<std::string, std::string>> entries;

  void add(const std::string& key, const std::filesystem::path& path);
  void note(const std::string& key, const std::string& value);
  std::string render() const;
};

std::string make_run_id(const std::string& command, std::uint64_t seed);

// Commands. Each writes its outputs plus `config.resolved` and `manifest`
// under out_dir and returns the paths of the primary artifacts. Errors:
// ConfigError / DataError / NumericError, mapped to exit codes by the CLI.
std::vector<std::filesystem::path> cmd_gen(const ExperimentConfig& cfg,
                                           const std::filesystem::path& out);

struct TrainArtifacts {
  std::filesystem::path checkpoint;
  std::filesystem::path trainlog;
  std::filesystem::path manifest;
};
TrainArtifacts cmd_train(const ExperimentConfig& cfg,
                         const std::string& data_prefix,
                         const std::filesystem::path& out);

std::filesystem::path cmd_eval(const ExperimentConfig& cfg,
                               const std::filesystem::path& checkpoint,
                               const std::string& data_prefix,
                               const std::filesystem::path& out);

// One train+eval per lambda with a shared seed; stage-1 experts are trained
// once and reused (stage 1 never sees lambda). data_prefix may be empty, in
// which case the splits are generated from the config in memory.
std::filesystem::path cmd_sweep(const ExperimentConfig& cfg,
                                const std::vector<double>& lambdas,
                                const std::string& data_prefix,
                                const std::filesystem::path& out);

std::vector<double> default_sweep_lambdas();
std::vector<double> parse_lambda_list(const std::string& csv);

// Analytic-vs-finite-difference sweep over small mixture instances
// (M in {2,3}, K in {1,2}, both pair modes, hinge active and inactive).
// Prints one line per checked configuration; returns 0 iff every relative
// error stays under 1e-4. corrupt_hook deliberately breaks one gradient to
// prove the gate trips (used by tests).
int run_gradcheck(std::uint64_t seed, std::ostream& out,
                  bool corrupt_hook = false);

}  // namespace mofelab
