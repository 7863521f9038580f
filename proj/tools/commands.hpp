#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gmot/datagen.hpp"
#include "gmot/oracle.hpp"
#include "gmot/trainer.hpp"

namespace gmot::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kSolver = 3,
  kOracle = 4,
  kIo = 5,
};

// Raised when an oracle or gradient check does not hold.
class CheckFailed : public Error {
 public:
  using Error::Error;
};

// Maps the error hierarchy onto exit codes.
int exit_code_for(const std::exception& e);

struct GenerateOptions {
  TripodSpec data;
  fs::path out;
  bool ply = true;
};

// X, Z, Y and their holdout splits as CSV (and PLY), plus transforms.json.
void cmd_generate(const GenerateOptions& opts);

enum class TrainMode { composition, direct, both };

std::string_view to_string(TrainMode m);
TrainMode parse_train_mode(std::string_view name);

struct TrainOptions {
  TripodSpec data;
  train::TrainConfig config = train::TrainConfig::desk();
  std::string preset = "desk";
  TrainMode mode = TrainMode::both;
  fs::path out;
  bool ply = true;
};

// One seed: data/, config.json, then one directory per mode holding
// checkpoints, train_log.csv, mapped point files and summary.json. A
// manifest is written when both modes are present.
void cmd_train(const TrainOptions& opts);

// Runs cmd_train once per seed in out/seed_<s>, with at most `jobs` worker
// processes. Returns the first nonzero child exit code, or 0.
int cmd_train_seeds(const TrainOptions& opts, const std::vector<std::uint64_t>& seeds, int jobs);

// Per-seed output directory used by cmd_train_seeds.
fs::path seed_dir(const fs::path& out, std::uint64_t seed);

struct OracleCheckOptions {
  std::uint64_t seed = 0;
  Index n = 6;
  int instances = 50;
  oracle::TargetKind target = oracle::TargetKind::random;
  double tolerance = 1e-9;
  fs::path out;
};

struct OracleCheckSummary {
  int instances = 0;
  int failures = 0;
  double max_invariance_residual = 0.0;
  double max_decomposition_residual = 0.0;
  std::string report_json;
};

// Both tripod checks on every seeded instance. Throws CheckFailed after
// writing the report when any instance fails.
OracleCheckSummary cmd_oracle_check(const OracleCheckOptions& opts);

struct GradCheck {
  std::string name;
  double rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Analytic gradients against central finite differences: distortion,
// entropic OT and Sinkhorn divergence envelopes, and MLP backprop on the
// architectures used in training.
std::vector<GradCheck> gradient_checks(std::uint64_t seed);

struct GradcheckOptions {
  std::uint64_t seed = 0;
  fs::path out;  // optional JSON report
};

std::vector<GradCheck> cmd_gradcheck(const GradcheckOptions& opts);

enum class PointFormat { csv, ply };

struct ExportOptions {
  fs::path run_dir;
  PointFormat format = PointFormat::ply;
};

// Converts every point file of a run directory to `format` and writes
// manifest.json. Missing inputs raise IoError naming what was expected.
void cmd_export(const ExportOptions& opts);

// manifest.json for a run directory that holds data/ and both modes.
std::string build_manifest(const fs::path& run_dir);

}  // namespace gmot::cli
