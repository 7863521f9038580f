#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gmot/datagen.hpp"
#include "gmot/neural.hpp"
#include "gmot/ot.hpp"

namespace gmot::train {

// Iteration budgets and tolerances of the inner solvers used inside the losses.
struct SolverSettings {
  int sinkhorn_max_iter = 2000;
  double sinkhorn_tol = 1e-6;
  int gw_outer_iter = 100;
  double gw_tol = 1e-6;
  ot::SinkhornMethod method = ot::SinkhornMethod::log_domain;
  double scaling_decay = 0.0;  // epsilon annealing factor, 0 disables

  // Looser budget used by the presets for per-step training losses.
  static SolverSettings training();
};

struct TrainConfig {
  double lambda_gm = 1.0;
  double eps_fit_phi = 0.01;  // Sinkhorn divergence for phi
  double eps_fit_T = 0.001;   // entropic Wasserstein for T and T'
  double eps_gw = 0.001;      // GW inside the GM gap
  double eps_eval = 0.1;      // evaluation divergence
  double eta_phi = 1e-3;
  double eta_T = 1e-4;
  Index batch_n = 1024;
  int k_outer = 5;
  int k_inner = 2000;
  int pretrain_iters = 5000;
  int direct_iters = 5000;
  std::vector<Index> hidden = {128, 64, 64};
  std::uint64_t seed = 0;
  Scaling scaling_fit = Scaling::mean;
  Scaling scaling_intra = Scaling::max;
  SolverSettings solver{};
  SolverSettings eval_solver{};
  double divergence_limit = 1e6;

  static TrainConfig paper();
  static TrainConfig desk();

  // Total optimizer steps of the composition schedule.
  int composition_steps() const { return pretrain_iters + k_outer * (1 + k_inner); }

  void validate() const;  // throws ConfigError
};

TrainConfig preset(const std::string& name);

std::string config_to_json(const TrainConfig& cfg);
// Missing fields keep the values of `base`; unknown fields are rejected.
TrainConfig config_from_json(const std::string& text, const TrainConfig& base = TrainConfig::paper());

struct LogRecord {
  std::string loop;  // pretrain_phi, outer_phi, inner_T, direct
  int iteration = 0;
  double fitting = 0.0;
  double gap = 0.0;
  double total = 0.0;
  bool converged = true;
  double wall_time = 0.0;  // seconds since the start of the phase
};

struct TrainLog {
  std::vector<LogRecord> records;
  int unconverged_steps = 0;

  void append(const TrainLog& other);
};

// CSV with columns loop,iteration,fitting_loss,gm_gap,total_loss,converged and,
// with `with_timing`, wall_time. Without timing the output is a pure function
// of config and seeds.
std::string log_to_csv(const TrainLog& log, bool with_timing = false);

struct LossEval {
  double total = 0.0;
  double fitting = 0.0;
  double gap = 0.0;
  double distortion = 0.0;
  double gw_cost = 0.0;
  bool converged = true;
  Vector grads;  // d total / d params
};

// Loss for the isomorphism network: Sinkhorn divergence (squared Euclidean,
// cross-cost scaling) between phi(x) and z plus lambda times the GM gap of
// x -> phi(x) under max-scaled Euclidean intra costs.
LossEval loss_phi(const nn::MlpMap& phi, const Matrix& x_batch, const Matrix& z_batch,
                  const TrainConfig& cfg);

// Loss for a transport network: entropic Wasserstein cost (Euclidean,
// cross-cost scaling) between T(z') and y plus lambda times the GM gap of
// z' -> T(z').
LossEval loss_T(const nn::MlpMap& tmap, const Matrix& zprime_batch, const Matrix& y_batch,
                const TrainConfig& cfg);

class TrainingAborted : public SolverError {
 public:
  TrainingAborted(const std::string& what, std::vector<nn::MlpMap> last_good, TrainLog log)
      : SolverError(what), last_good_(std::move(last_good)), log_(std::move(log)) {}

  const std::vector<nn::MlpMap>& last_good() const { return last_good_; }
  const TrainLog& log() const { return log_; }

 private:
  std::vector<nn::MlpMap> last_good_;
  TrainLog log_;
};

// Rows sampled uniformly with replacement.
Matrix sample_batch(const Matrix& points, Index n, std::mt19937_64& rng);

// Adam steps on loss_phi with fresh batches of source and reference each step.
TrainLog pretrain_phi(nn::MlpMap& phi, nn::AdamState& opt, const PointCloud& source,
                      const PointCloud& reference, const TrainConfig& cfg, int iters,
                      std::mt19937_64& rng);

struct CompositionModel {
  nn::MlpMap phi;
  nn::MlpMap tmap;
  nn::AdamState phi_opt;
  nn::AdamState t_opt;

  Matrix apply(const Matrix& x) const { return tmap.apply(phi.apply(x)); }
};

// Fresh networks: residual phi (d_x -> d_z) and plain T (d_z -> d_y).
CompositionModel make_composition(Index dim_x, Index dim_z, Index dim_y, const TrainConfig& cfg);
nn::MlpMap make_direct(Index dim_x, Index dim_y, const TrainConfig& cfg);

// The nested loops: k_outer times { one phi step, then k_inner T steps on
// z' = phi(x) for freshly resampled x }.
TrainLog train_composition(CompositionModel& model, const PointCloud& source,
                           const PointCloud& reference, const PointCloud& target,
                           const TrainConfig& cfg, std::mt19937_64& rng);

// Single-loop training of a direct map with loss_T semantics from source to target.
TrainLog train_direct(nn::MlpMap& tdirect, nn::AdamState& opt, const PointCloud& source,
                      const PointCloud& target, const TrainConfig& cfg, int iters,
                      std::mt19937_64& rng);

// Squared-Euclidean Sinkhorn divergence at eps_eval on unscaled costs.
double evaluate(const PointCloud& mapped, const PointCloud& target, const TrainConfig& cfg);

struct RunResult {
  std::string mode;  // composition | direct
  std::vector<std::pair<std::string, nn::MlpMap>> networks;
  TrainLog log;
  Matrix mapped_train;
  Matrix mapped_holdout;
  double eval_train = 0.0;
  double eval_holdout = 0.0;
  double eval_untrained = 0.0;  // holdout value of the initial networks
  int steps = 0;
  double seconds = 0.0;
};

// Full pretrain + composition schedule on a tripod.
RunResult run_composition(const Tripod& data, const TrainConfig& cfg);
// Direct map trained for cfg.direct_iters steps.
RunResult run_direct(const Tripod& data, const TrainConfig& cfg);

}  // namespace gmot::train
