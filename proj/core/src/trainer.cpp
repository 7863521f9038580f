#include "gmot/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "gmot/io.hpp"

namespace gmot::train {

using nlohmann::json;

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 of (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t {
  kInitPhi = 1,
  kInitT = 2,
  kInitDirect = 3,
  kBatchComposition = 10,
  kBatchDirect = 11,
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

ot::SinkhornOptions sinkhorn_options(const SolverSettings& s, double eps) {
  ot::SinkhornOptions o;
  o.epsilon = eps;
  o.max_iter = s.sinkhorn_max_iter;
  o.tol = s.sinkhorn_tol;
  o.method = s.method;
  o.scaling_decay = s.scaling_decay;
  return o;
}

ot::GwOptions gw_options(const SolverSettings& s, double eps) {
  ot::GwOptions o;
  o.epsilon = eps;
  o.outer_iter = s.gw_outer_iter;
  o.tol = s.gw_tol;
  o.inner = sinkhorn_options(s, eps);
  return o;
}

enum class FitKind { divergence, wasserstein };

LossEval composite_loss(const nn::MlpMap& net, const Matrix& input, const Matrix& target,
                        FitKind kind, double eps_fit, const TrainConfig& cfg) {
  if (input.rows() != target.rows()) {
    throw SizeError("loss: input and target batches must have the same size");
  }
  const nn::ForwardPass pass = net.forward(input);
  const PointCloud mapped = PointCloud::uniform(pass.output());
  const PointCloud tgt = PointCloud::uniform(target);
  const PointCloud src = PointCloud::uniform(input);

  LossEval ev;
  Matrix upstream;
  const ot::SinkhornOptions fit_opts = sinkhorn_options(cfg.solver, eps_fit);
  if (kind == FitKind::divergence) {
    const ot::DivergenceResult d =
        ot::sinkhorn_divergence(mapped, tgt, Metric::sq_euclidean, cfg.scaling_fit, fit_opts);
    ev.fitting = d.value;
    ev.converged = d.converged;
    upstream = d.grad_source;
  } else {
    const ot::OtResult r =
        ot::entropic_ot(mapped, tgt, Metric::euclidean, cfg.scaling_fit, fit_opts);
    ev.fitting = r.cost;
    ev.converged = r.coupling.converged;
    upstream = r.grad_source;
  }

  const ot::GmGapResult gap = ot::gm_gap(src, mapped, Metric::euclidean, cfg.scaling_intra,
                                         gw_options(cfg.solver, cfg.eps_gw));
  ev.gap = gap.gap;
  ev.distortion = gap.distortion;
  ev.gw_cost = gap.gw.cost;
  ev.converged = ev.converged && gap.gw.converged;
  ev.total = ev.fitting + cfg.lambda_gm * ev.gap;
  if (cfg.lambda_gm != 0.0) upstream += cfg.lambda_gm * gap.grad_mapped;
  ev.grads = net.backward(pass, upstream).params;
  return ev;
}

void check_finite(const LossEval& ev, const TrainConfig& cfg, const std::string& loop,
                  int iteration, std::vector<nn::MlpMap> last_good, const TrainLog& log) {
  if (std::isfinite(ev.total) && std::abs(ev.total) <= cfg.divergence_limit &&
      ev.grads.allFinite()) {
    return;
  }
  std::ostringstream os;
  os << loop << " iteration " << iteration << ": loss diverged (total = " << ev.total
     << ", fitting = " << ev.fitting << ", gap = " << ev.gap << ")";
  throw TrainingAborted(os.str(), std::move(last_good), log);
}

void record(TrainLog& log, const std::string& loop, int iteration, const LossEval& ev,
            Clock::time_point t0) {
  log.records.push_back({loop, iteration, ev.fitting, ev.gap, ev.total, ev.converged,
                         seconds_since(t0)});
  if (!ev.converged) ++log.unconverged_steps;
}

std::vector<Index> dims(Index in, const std::vector<Index>& hidden, Index out) {
  std::vector<Index> d{in};
  d.insert(d.end(), hidden.begin(), hidden.end());
  d.push_back(out);
  return d;
}

}  // namespace

SolverSettings SolverSettings::training() {
  SolverSettings s;
  s.method = ot::SinkhornMethod::stabilized;
  s.sinkhorn_max_iter = 1000;
  s.sinkhorn_tol = 1e-4;
  s.gw_outer_iter = 10;
  s.gw_tol = 1e-4;
  s.scaling_decay = 0.5;
  return s;
}

TrainConfig TrainConfig::paper() {
  TrainConfig cfg;
  cfg.solver = SolverSettings::training();
  cfg.eval_solver.method = ot::SinkhornMethod::stabilized;
  return cfg;
}

TrainConfig TrainConfig::desk() {
  TrainConfig cfg = paper();
  cfg.batch_n = 256;
  cfg.k_inner = 400;
  cfg.pretrain_iters = 1500;
  cfg.direct_iters = cfg.composition_steps();
  return cfg;
}

TrainConfig preset(const std::string& name) {
  if (name == "paper") return TrainConfig::paper();
  if (name == "desk") return TrainConfig::desk();
  throw ConfigError("unknown preset '" + name + "' (expected paper or desk)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
  if (!(eps_fit_phi > 0.0 && eps_fit_T > 0.0 && eps_gw > 0.0 && eps_eval > 0.0)) {
    fail("every epsilon must be positive");
  }
  if (!(lambda_gm >= 0.0)) fail("lambda_gm must be nonnegative");
  if (!(eta_phi > 0.0 && eta_T > 0.0)) fail("learning rates must be positive");
  if (batch_n < 2) fail("batch_n must be at least 2");
  if (k_outer < 0 || k_inner < 0 || pretrain_iters < 0 || direct_iters < 0) {
    fail("iteration counts must be nonnegative");
  }
  for (Index h : hidden) {
    if (h < 1) fail("hidden sizes must be positive");
  }
  if (solver.sinkhorn_max_iter < 1 || solver.gw_outer_iter < 1 || eval_solver.sinkhorn_max_iter < 1) {
    fail("solver iteration budgets must be positive");
  }
}

namespace {

json solver_to_json(const SolverSettings& s) {
  return {{"sinkhorn_max_iter", s.sinkhorn_max_iter},
          {"sinkhorn_tol", s.sinkhorn_tol},
          {"gw_outer_iter", s.gw_outer_iter},
          {"gw_tol", s.gw_tol},
          {"method", s.method == ot::SinkhornMethod::stabilized ? "stabilized" : "log_domain"},
          {"scaling_decay", s.scaling_decay}};
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

SolverSettings solver_from_json(const json& j, SolverSettings s) {
  static const char* known[] = {"sinkhorn_max_iter", "sinkhorn_tol", "gw_outer_iter",
                                "gw_tol", "method", "scaling_decay"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw ConfigError("unknown solver field '" + key + "'");
    }
  }
  read_field(j, "sinkhorn_max_iter", s.sinkhorn_max_iter);
  read_field(j, "sinkhorn_tol", s.sinkhorn_tol);
  read_field(j, "gw_outer_iter", s.gw_outer_iter);
  read_field(j, "gw_tol", s.gw_tol);
  read_field(j, "scaling_decay", s.scaling_decay);
  if (j.contains("method")) {
    const auto m = j.at("method").get<std::string>();
    if (m == "stabilized") {
      s.method = ot::SinkhornMethod::stabilized;
    } else if (m == "log_domain") {
      s.method = ot::SinkhornMethod::log_domain;
    } else {
      throw ConfigError("unknown sinkhorn method '" + m + "'");
    }
  }
  return s;
}

}  // namespace

std::string config_to_json(const TrainConfig& cfg) {
  json j;
  j["lambda_gm"] = cfg.lambda_gm;
  j["eps_fit_phi"] = cfg.eps_fit_phi;
  j["eps_fit_T"] = cfg.eps_fit_T;
  j["eps_gw"] = cfg.eps_gw;
  j["eps_eval"] = cfg.eps_eval;
  j["eta_phi"] = cfg.eta_phi;
  j["eta_T"] = cfg.eta_T;
  j["batch_n"] = cfg.batch_n;
  j["k_outer"] = cfg.k_outer;
  j["k_inner"] = cfg.k_inner;
  j["pretrain_iters"] = cfg.pretrain_iters;
  j["direct_iters"] = cfg.direct_iters;
  j["hidden"] = cfg.hidden;
  j["seed"] = cfg.seed;
  j["scaling_fit"] = std::string(to_string(cfg.scaling_fit));
  j["scaling_intra"] = std::string(to_string(cfg.scaling_intra));
  j["solver"] = solver_to_json(cfg.solver);
  j["eval_solver"] = solver_to_json(cfg.eval_solver);
  j["divergence_limit"] = cfg.divergence_limit;
  return j.dump(2);
}

TrainConfig config_from_json(const std::string& text, const TrainConfig& base) {
  TrainConfig cfg = base;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const char* known[] = {"lambda_gm", "eps_fit_phi", "eps_fit_T", "eps_gw",
                                  "eps_eval", "eta_phi", "eta_T", "batch_n", "k_outer",
                                  "k_inner", "pretrain_iters", "direct_iters", "hidden",
                                  "seed", "scaling_fit", "scaling_intra", "solver",
                                  "eval_solver", "divergence_limit"};
    for (const auto& [key, _] : j.items()) {
      if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
        throw ConfigError("unknown config field '" + key + "'");
      }
    }
    read_field(j, "lambda_gm", cfg.lambda_gm);
    read_field(j, "eps_fit_phi", cfg.eps_fit_phi);
    read_field(j, "eps_fit_T", cfg.eps_fit_T);
    read_field(j, "eps_gw", cfg.eps_gw);
    read_field(j, "eps_eval", cfg.eps_eval);
    read_field(j, "eta_phi", cfg.eta_phi);
    read_field(j, "eta_T", cfg.eta_T);
    read_field(j, "batch_n", cfg.batch_n);
    read_field(j, "k_outer", cfg.k_outer);
    read_field(j, "k_inner", cfg.k_inner);
    read_field(j, "pretrain_iters", cfg.pretrain_iters);
    read_field(j, "direct_iters", cfg.direct_iters);
    read_field(j, "hidden", cfg.hidden);
    read_field(j, "seed", cfg.seed);
    read_field(j, "divergence_limit", cfg.divergence_limit);
    if (j.contains("scaling_fit")) cfg.scaling_fit = parse_scaling(j.at("scaling_fit").get<std::string>());
    if (j.contains("scaling_intra")) {
      cfg.scaling_intra = parse_scaling(j.at("scaling_intra").get<std::string>());
    }
    if (j.contains("solver")) cfg.solver = solver_from_json(j.at("solver"), cfg.solver);
    if (j.contains("eval_solver")) {
      cfg.eval_solver = solver_from_json(j.at("eval_solver"), cfg.eval_solver);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

void TrainLog::append(const TrainLog& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
  unconverged_steps += other.unconverged_steps;
}

std::string log_to_csv(const TrainLog& log, bool with_timing) {
  std::ostringstream os;
  os << "loop,iteration,fitting_loss,gm_gap,total_loss,converged";
  if (with_timing) os << ",wall_time";
  os << '\n';
  for (const auto& r : log.records) {
    os << r.loop << ',' << r.iteration << ',' << io::format_double(r.fitting) << ','
       << io::format_double(r.gap) << ',' << io::format_double(r.total) << ','
       << (r.converged ? 1 : 0);
    if (with_timing) os << ',' << io::format_double(r.wall_time);
    os << '\n';
  }
  return os.str();
}

LossEval loss_phi(const nn::MlpMap& phi, const Matrix& x_batch, const Matrix& z_batch,
                  const TrainConfig& cfg) {
  return composite_loss(phi, x_batch, z_batch, FitKind::divergence, cfg.eps_fit_phi, cfg);
}

LossEval loss_T(const nn::MlpMap& tmap, const Matrix& zprime_batch, const Matrix& y_batch,
                const TrainConfig& cfg) {
  return composite_loss(tmap, zprime_batch, y_batch, FitKind::wasserstein, cfg.eps_fit_T, cfg);
}

Matrix sample_batch(const Matrix& points, Index n, std::mt19937_64& rng) {
  if (points.rows() < 1) throw InvalidInput("sample_batch: empty cloud");
  std::uniform_int_distribution<Index> pick(0, points.rows() - 1);
  Matrix out(n, points.cols());
  for (Index i = 0; i < n; ++i) out.row(i) = points.row(pick(rng));
  return out;
}

TrainLog pretrain_phi(nn::MlpMap& phi, nn::AdamState& opt, const PointCloud& source,
                      const PointCloud& reference, const TrainConfig& cfg, int iters,
                      std::mt19937_64& rng) {
  if (iters < 0) throw ConfigError("pretrain_phi: iters must be nonnegative");
  TrainLog log;
  const auto t0 = Clock::now();
  for (int it = 0; it < iters; ++it) {
    const Matrix x = sample_batch(source.points, cfg.batch_n, rng);
    const Matrix z = sample_batch(reference.points, cfg.batch_n, rng);
    const LossEval ev = loss_phi(phi, x, z, cfg);
    check_finite(ev, cfg, "pretrain_phi", it, {phi}, log);
    record(log, "pretrain_phi", it, ev, t0);
    nn::adam_step(phi, ev.grads, opt);
  }
  return log;
}

CompositionModel make_composition(Index dim_x, Index dim_z, Index dim_y, const TrainConfig& cfg) {
  nn::MlpMap phi = nn::init_orthogonal(dims(dim_x, cfg.hidden, dim_z), dim_x == dim_z,
                                       derive_seed(cfg.seed, kInitPhi));
  nn::MlpMap tmap =
      nn::init_orthogonal(dims(dim_z, cfg.hidden, dim_y), false, derive_seed(cfg.seed, kInitT));
  nn::AdamState phi_opt = nn::AdamState::for_map(phi, cfg.eta_phi);
  nn::AdamState t_opt = nn::AdamState::for_map(tmap, cfg.eta_T);
  return {std::move(phi), std::move(tmap), std::move(phi_opt), std::move(t_opt)};
}

nn::MlpMap make_direct(Index dim_x, Index dim_y, const TrainConfig& cfg) {
  return nn::init_orthogonal(dims(dim_x, cfg.hidden, dim_y), false,
                             derive_seed(cfg.seed, kInitDirect));
}

TrainLog train_composition(CompositionModel& model, const PointCloud& source,
                           const PointCloud& reference, const PointCloud& target,
                           const TrainConfig& cfg, std::mt19937_64& rng) {
  if (model.phi.input_dim() != source.dim() || model.phi.output_dim() != reference.dim() ||
      model.tmap.input_dim() != reference.dim() || model.tmap.output_dim() != target.dim()) {
    throw SizeError("train_composition: network dimensions do not chain X -> Z -> Y");
  }
  TrainLog log;
  const auto t0 = Clock::now();
  for (int k = 0; k < cfg.k_outer; ++k) {
    const Matrix x = sample_batch(source.points, cfg.batch_n, rng);
    const Matrix z = sample_batch(reference.points, cfg.batch_n, rng);
    const LossEval ev = loss_phi(model.phi, x, z, cfg);
    check_finite(ev, cfg, "outer_phi", k, {model.phi, model.tmap}, log);
    record(log, "outer_phi", k, ev, t0);
    nn::adam_step(model.phi, ev.grads, model.phi_opt);

    for (int j = 0; j < cfg.k_inner; ++j) {
      const Matrix xs = sample_batch(source.points, cfg.batch_n, rng);
      const Matrix zprime = model.phi.apply(xs);
      const Matrix y = sample_batch(target.points, cfg.batch_n, rng);
      const LossEval et = loss_T(model.tmap, zprime, y, cfg);
      const int iteration = k * cfg.k_inner + j;
      check_finite(et, cfg, "inner_T", iteration, {model.phi, model.tmap}, log);
      record(log, "inner_T", iteration, et, t0);
      nn::adam_step(model.tmap, et.grads, model.t_opt);
    }
  }
  return log;
}

TrainLog train_direct(nn::MlpMap& tdirect, nn::AdamState& opt, const PointCloud& source,
                      const PointCloud& target, const TrainConfig& cfg, int iters,
                      std::mt19937_64& rng) {
  if (iters < 0) throw ConfigError("train_direct: iters must be nonnegative");
  TrainLog log;
  const auto t0 = Clock::now();
  for (int it = 0; it < iters; ++it) {
    const Matrix x = sample_batch(source.points, cfg.batch_n, rng);
    const Matrix y = sample_batch(target.points, cfg.batch_n, rng);
    const LossEval ev = loss_T(tdirect, x, y, cfg);
    check_finite(ev, cfg, "direct", it, {tdirect}, log);
    record(log, "direct", it, ev, t0);
    nn::adam_step(tdirect, ev.grads, opt);
  }
  return log;
}

double evaluate(const PointCloud& mapped, const PointCloud& target, const TrainConfig& cfg) {
  if (mapped.dim() != target.dim()) {
    std::ostringstream os;
    os << "evaluate: mapped dimension " << mapped.dim() << " vs target dimension "
       << target.dim();
    throw SizeError(os.str());
  }
  const ot::DivergenceResult d =
      ot::sinkhorn_divergence(mapped, target, Metric::sq_euclidean, Scaling::none,
                              sinkhorn_options(cfg.eval_solver, cfg.eps_eval));
  return d.value;
}

namespace {

void finish(RunResult& res, const Tripod& data, const TrainConfig& cfg,
            const std::function<Matrix(const Matrix&)>& map) {
  res.mapped_train = map(data.source.points);
  res.eval_train = evaluate(PointCloud::uniform(res.mapped_train), data.target, cfg);
  if (data.source_holdout.size() > 0) {
    res.mapped_holdout = map(data.source_holdout.points);
    res.eval_holdout =
        evaluate(PointCloud::uniform(res.mapped_holdout), data.target_holdout, cfg);
  } else {
    res.mapped_holdout = res.mapped_train;
    res.eval_holdout = res.eval_train;
  }
}

const PointCloud& eval_source(const Tripod& data) {
  return data.source_holdout.size() > 0 ? data.source_holdout : data.source;
}

const PointCloud& eval_target(const Tripod& data) {
  return data.source_holdout.size() > 0 ? data.target_holdout : data.target;
}

}  // namespace

RunResult run_composition(const Tripod& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto t0 = Clock::now();
  RunResult res;
  res.mode = "composition";
  CompositionModel model =
      make_composition(data.source.dim(), data.reference.dim(), data.target.dim(), cfg);
  res.eval_untrained = evaluate(PointCloud::uniform(model.apply(eval_source(data).points)),
                                eval_target(data), cfg);
  std::mt19937_64 rng(derive_seed(cfg.seed, kBatchComposition));
  res.log = pretrain_phi(model.phi, model.phi_opt, data.source, data.reference, cfg,
                         cfg.pretrain_iters, rng);
  res.log.append(train_composition(model, data.source, data.reference, data.target, cfg, rng));
  res.steps = cfg.composition_steps();
  finish(res, data, cfg, [&](const Matrix& x) { return model.apply(x); });
  res.networks.emplace_back("phi", model.phi);
  res.networks.emplace_back("T", model.tmap);
  res.seconds = seconds_since(t0);
  return res;
}

RunResult run_direct(const Tripod& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto t0 = Clock::now();
  RunResult res;
  res.mode = "direct";
  nn::MlpMap net = make_direct(data.source.dim(), data.target.dim(), cfg);
  nn::AdamState opt = nn::AdamState::for_map(net, cfg.eta_T);
  res.eval_untrained =
      evaluate(PointCloud::uniform(net.apply(eval_source(data).points)), eval_target(data), cfg);
  std::mt19937_64 rng(derive_seed(cfg.seed, kBatchDirect));
  res.log = train_direct(net, opt, data.source, data.target, cfg, cfg.direct_iters, rng);
  res.steps = cfg.direct_iters;
  finish(res, data, cfg, [&](const Matrix& x) { return net.apply(x); });
  res.networks.emplace_back("direct", net);
  res.seconds = seconds_since(t0);
  return res;
}

}  // namespace gmot::train
