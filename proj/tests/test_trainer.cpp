#include "gmot/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "gmot/oracle.hpp"
#include "support.hpp"

namespace gmot::train {
namespace {

using testing::flat;
using testing::gaussian_cloud;

// Single affine layer x -> W x + b.
nn::MlpMap affine_map(const Matrix& w, const Vector& b) {
  nn::MlpMap m({w.cols(), w.rows()}, false);
  Vector p(w.size() + b.size());
  p << flat(w), b;
  m.set_parameters(p);
  return m;
}

TrainConfig small_config() {
  TrainConfig cfg = TrainConfig::desk();
  cfg.batch_n = 48;
  cfg.hidden = {16, 16};
  cfg.pretrain_iters = 20;
  cfg.k_outer = 2;
  cfg.k_inner = 10;
  cfg.direct_iters = cfg.composition_steps();
  return cfg;
}

TripodSpec small_data(std::uint64_t seed) {
  TripodSpec s;
  s.n_total = 256;
  s.n_holdout = 128;
  s.data_seed = seed;
  return s;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Presets and configuration

TEST(Preset, PaperValues) {
  const TrainConfig cfg = preset("paper");
  EXPECT_EQ(cfg.lambda_gm, 1.0);
  EXPECT_EQ(cfg.eps_fit_phi, 0.01);
  EXPECT_EQ(cfg.eps_fit_T, 0.001);
  EXPECT_EQ(cfg.eps_gw, 0.001);
  EXPECT_EQ(cfg.eps_eval, 0.1);
  EXPECT_EQ(cfg.eta_phi, 1e-3);
  EXPECT_EQ(cfg.eta_T, 1e-4);
  EXPECT_EQ(cfg.batch_n, 1024);
  EXPECT_EQ(cfg.hidden, (std::vector<Index>{128, 64, 64}));
  EXPECT_EQ(cfg.k_outer, 5);
  EXPECT_EQ(cfg.k_inner, 2000);
  EXPECT_EQ(cfg.pretrain_iters, 5000);
  EXPECT_EQ(cfg.direct_iters, 5000);
  EXPECT_EQ(cfg.scaling_fit, Scaling::mean);
  EXPECT_EQ(cfg.scaling_intra, Scaling::max);
}

TEST(Preset, DeskShrinksBatchAndLoopsOnly) {
  const TrainConfig paper = preset("paper");
  const TrainConfig desk = preset("desk");
  EXPECT_EQ(desk.batch_n, 256);
  EXPECT_EQ(desk.k_inner, 400);
  EXPECT_EQ(desk.pretrain_iters, 1500);
  EXPECT_EQ(desk.k_outer, 5);
  EXPECT_EQ(desk.composition_steps(), 1500 + 5 * 401);
  EXPECT_EQ(desk.direct_iters, desk.composition_steps());
  EXPECT_EQ(desk.lambda_gm, paper.lambda_gm);
  EXPECT_EQ(desk.eps_fit_phi, paper.eps_fit_phi);
  EXPECT_EQ(desk.eps_fit_T, paper.eps_fit_T);
  EXPECT_EQ(desk.eps_gw, paper.eps_gw);
  EXPECT_EQ(desk.eps_eval, paper.eps_eval);
  EXPECT_EQ(desk.eta_phi, paper.eta_phi);
  EXPECT_EQ(desk.eta_T, paper.eta_T);
  EXPECT_EQ(desk.hidden, paper.hidden);
}

TEST(Preset, UnknownNameIsConfigError) { EXPECT_THROW(preset("laptop"), ConfigError); }

TEST(Config, JsonEchoOfPaperPreset) {
  const auto j = nlohmann::json::parse(config_to_json(TrainConfig::paper()));
  EXPECT_EQ(j.at("lambda_gm").get<double>(), 1.0);
  EXPECT_EQ(j.at("eps_fit_phi").get<double>(), 0.01);
  EXPECT_EQ(j.at("eps_fit_T").get<double>(), 0.001);
  EXPECT_EQ(j.at("eps_gw").get<double>(), 0.001);
  EXPECT_EQ(j.at("eps_eval").get<double>(), 0.1);
  EXPECT_EQ(j.at("eta_phi").get<double>(), 1e-3);
  EXPECT_EQ(j.at("eta_T").get<double>(), 1e-4);
  EXPECT_EQ(j.at("batch_n").get<int>(), 1024);
  EXPECT_EQ(j.at("k_outer").get<int>(), 5);
  EXPECT_EQ(j.at("k_inner").get<int>(), 2000);
  EXPECT_EQ(j.at("pretrain_iters").get<int>(), 5000);
  EXPECT_EQ(j.at("hidden").get<std::vector<int>>(), (std::vector<int>{128, 64, 64}));
}

TEST(Config, JsonRoundTrip) {
  TrainConfig cfg = TrainConfig::desk();
  cfg.seed = 17;
  cfg.lambda_gm = 0.25;
  cfg.hidden = {7, 5};
  cfg.scaling_intra = Scaling::mean;
  cfg.solver.method = ot::SinkhornMethod::log_domain;
  cfg.solver.gw_tol = 3e-5;
  const TrainConfig back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));
}

TEST(Config, MissingFieldsKeepBase) {
  const TrainConfig cfg = config_from_json(R"({"k_inner": 7, "solver": {"gw_outer_iter": 3}})",
                                           TrainConfig::desk());
  EXPECT_EQ(cfg.k_inner, 7);
  EXPECT_EQ(cfg.solver.gw_outer_iter, 3);
  EXPECT_EQ(cfg.batch_n, 256);
  EXPECT_EQ(cfg.solver.gw_tol, TrainConfig::desk().solver.gw_tol);
}

TEST(Config, RejectsUnknownMalformedAndInvalid) {
  EXPECT_THROW(config_from_json(R"({"lamda_gm": 1})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"solver": {"iters": 1}})"), ConfigError);
  EXPECT_THROW(config_from_json("{"), ConfigError);
  EXPECT_THROW(config_from_json("[1, 2]"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"eps_gw": 0})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"lambda_gm": -1})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"batch_n": 1})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"k_inner": -1})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"scaling_fit": "median"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"solver": {"method": "fast"}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"batch_n": "many"})"), ConfigError);
}

// Losses

// The entropic GW term carries a bias that grows with the batch; 64 points
// is where the rigid-map gap bound is pinned.
TEST(LossPhi, ExactRigidMapHasNearZeroLoss) {
  const PointCloud x = gaussian_cloud(64, 3, 1);
  const RigidTransform r = random_rigid(3, 2, 1.0);
  const Matrix z = apply_rigid(x, r).points;
  const TrainConfig cfg = TrainConfig::paper();
  const LossEval ev = loss_phi(affine_map(r.rotation, r.translation), x.points, z, cfg);
  EXPECT_LE(ev.fitting, 1e-3);
  EXPECT_LE(std::abs(ev.gap), 1e-3);
  EXPECT_NEAR(ev.distortion, 0.0, 1e-12);
}

TEST(LossPhi, ZeroLambdaGivesFittingOnly) {
  TrainConfig cfg = TrainConfig::paper();
  cfg.lambda_gm = 0.0;
  const nn::MlpMap phi = nn::init_orthogonal({3, 16, 3}, true, 4);
  const Matrix x = gaussian_cloud(40, 3, 5).points;
  const Matrix z = gaussian_cloud(40, 3, 6).points;
  const LossEval ev = loss_phi(phi, x, z, cfg);
  EXPECT_EQ(ev.total, ev.fitting);
}

TEST(LossPhi, IdentityResidualNetOnEqualBatches) {
  const TrainConfig cfg = TrainConfig::paper();
  const nn::MlpMap phi = nn::init_orthogonal({3, 128, 64, 64, 3}, true, 9, true);
  const Matrix x = gaussian_cloud(128, 3, 10).points;
  ASSERT_EQ(phi.apply(x), x);
  const LossEval ev = loss_phi(phi, x, x, cfg);
  EXPECT_LE(ev.total, 1e-6);
  EXPECT_LE(std::abs(ev.fitting), 1e-8);
}

TEST(LossPhi, FittingGradientMatchesFiniteDifferences) {
  TrainConfig cfg = TrainConfig::paper();
  cfg.lambda_gm = 0.0;
  cfg.eps_fit_phi = 0.1;
  cfg.solver = SolverSettings{};
  cfg.solver.sinkhorn_tol = 1e-10;
  cfg.solver.sinkhorn_max_iter = 100000;
  cfg.solver.gw_outer_iter = 1;  // gap is reported but carries no weight
  const nn::MlpMap phi = nn::init_orthogonal({3, 6, 3}, true, 11);
  const Matrix x = gaussian_cloud(7, 3, 12).points;
  const Matrix z = gaussian_cloud(7, 3, 13).points;
  const LossEval ev = loss_phi(phi, x, z, cfg);
  nn::MlpMap probe = phi;
  auto loss = [&](const Vector& p) {
    probe.set_parameters(p);
    return loss_phi(probe, x, z, cfg).total;
  };
  EXPECT_LE(oracle::relative_error(ev.grads, oracle::finite_diff(loss, phi.parameters())), 1e-3);
}

TEST(LossT, ExactShearHasSmallFitAndGap) {
  const PointCloud z = gaussian_cloud(256, 3, 21);
  const ShearTransform a = random_shear(3, 0.8, 22);
  const Matrix y = apply_linear(z, a).points;
  const TrainConfig cfg = TrainConfig::paper();
  const LossEval ev = loss_T(affine_map(a.matrix, Vector::Zero(3)), z.points, y, cfg);
  EXPECT_LE(ev.fitting, 5e-3);
  EXPECT_LE(std::abs(ev.gap), 5e-3);

  // The distortion term is the shear's own distortion between max-scaled costs.
  const Matrix cz = pairwise_distances(z.points, Metric::euclidean);
  const Matrix cy = pairwise_distances(y, Metric::euclidean);
  const double sz = cz.maxCoeff();
  const double sy = cy.maxCoeff();
  double dis = 0.0;
  for (Index i = 0; i < 256; ++i)
    for (Index j = 0; j < 256; ++j) dis += std::pow(cz(i, j) / sz - cy(i, j) / sy, 2);
  dis /= 256.0 * 256.0;
  EXPECT_GT(dis, 0.0);
  EXPECT_NEAR(ev.distortion, dis, 1e-12);
}

TEST(LossT, ZeroLambdaGivesFittingOnly) {
  TrainConfig cfg = TrainConfig::paper();
  cfg.lambda_gm = 0.0;
  const nn::MlpMap t = nn::init_orthogonal({3, 16, 3}, false, 24);
  const LossEval ev = loss_T(t, gaussian_cloud(40, 3, 25).points, gaussian_cloud(40, 3, 26).points, cfg);
  EXPECT_EQ(ev.total, ev.fitting);
}

TEST(LossT, IdentityMapOnEqualBatches) {
  const TrainConfig cfg = TrainConfig::paper();
  const Matrix z = gaussian_cloud(128, 3, 27).points;
  const LossEval ev = loss_T(affine_map(Matrix::Identity(3, 3), Vector::Zero(3)), z, z, cfg);
  EXPECT_LE(ev.total, 1e-6);
}

TEST(LossT, FittingGradientMatchesFiniteDifferences) {
  TrainConfig cfg = TrainConfig::paper();
  cfg.lambda_gm = 0.0;
  cfg.eps_fit_T = 0.05;
  cfg.solver = SolverSettings{};
  cfg.solver.sinkhorn_tol = 1e-10;
  cfg.solver.sinkhorn_max_iter = 100000;
  const nn::MlpMap t = nn::init_orthogonal({3, 6, 2}, false, 31);
  const Matrix z = gaussian_cloud(7, 3, 32).points;
  const Matrix y = gaussian_cloud(7, 2, 33).points;
  const LossEval ev = loss_T(t, z, y, cfg);
  ot::SinkhornOptions o;
  o.epsilon = cfg.eps_fit_T;
  o.tol = 1e-10;
  o.max_iter = 100000;
  nn::MlpMap probe = t;
  auto loss = [&](const Vector& p) {
    probe.set_parameters(p);
    return ot::entropic_ot(PointCloud::uniform(probe.apply(z)), PointCloud::uniform(y),
                           Metric::euclidean, Scaling::mean, o)
        .regularized_cost;
  };
  EXPECT_LE(oracle::relative_error(ev.grads, oracle::finite_diff(loss, t.parameters())), 1e-3);
}

TEST(Loss, BatchSizeMismatchThrows) {
  const TrainConfig cfg = TrainConfig::paper();
  const nn::MlpMap t = nn::init_orthogonal({3, 4, 3}, false, 1);
  EXPECT_THROW(loss_T(t, gaussian_cloud(5, 3, 1).points, gaussian_cloud(6, 3, 2).points, cfg),
               SizeError);
}

// Logs

TEST(TrainLog, CsvLayout) {
  TrainLog log;
  log.records.push_back({"pretrain_phi", 0, 0.5, -0.25, 0.25, true, 1.5});
  log.records.push_back({"inner_T", 3, 0.1, 0.2, 0.3, false, 2.0});
  EXPECT_EQ(log_to_csv(log),
            "loop,iteration,fitting_loss,gm_gap,total_loss,converged\n"
            "pretrain_phi,0,0.5,-0.25,0.25,1\n"
            "inner_T,3,0.1,0.2,0.3,0\n");
  EXPECT_EQ(log_to_csv(log, true).substr(0, 66),
            "loop,iteration,fitting_loss,gm_gap,total_loss,converged,wall_time\n");
}

TEST(TrainLog, AppendSumsUnconverged) {
  TrainLog a;
  a.records.resize(2);
  a.unconverged_steps = 1;
  TrainLog b;
  b.records.resize(3);
  b.unconverged_steps = 2;
  a.append(b);
  EXPECT_EQ(a.records.size(), 5u);
  EXPECT_EQ(a.unconverged_steps, 3);
}

TEST(SampleBatch, RowsComeFromTheCloudAndAreSeeded) {
  const Matrix pts = gaussian_cloud(10, 2, 3).points;
  std::mt19937_64 r1(5);
  std::mt19937_64 r2(5);
  const Matrix a = sample_batch(pts, 25, r1);
  EXPECT_EQ(a, sample_batch(pts, 25, r2));
  for (Index i = 0; i < a.rows(); ++i) {
    bool found = false;
    for (Index k = 0; k < pts.rows(); ++k) found = found || a.row(i) == pts.row(k);
    EXPECT_TRUE(found);
  }
  EXPECT_THROW(sample_batch(Matrix(0, 2), 3, r1), InvalidInput);
}

// Training loops

TEST(Pretrain, ZeroItersLeavesPhiUnchanged) {
  const Tripod t = make_tripod(small_data(0));
  const TrainConfig cfg = small_config();
  CompositionModel m = make_composition(3, 3, 3, cfg);
  const Vector before = m.phi.parameters();
  std::mt19937_64 rng(1);
  const TrainLog log = pretrain_phi(m.phi, m.phi_opt, t.source, t.reference, cfg, 0, rng);
  EXPECT_TRUE(log.records.empty());
  EXPECT_EQ(m.phi.parameters(), before);
  EXPECT_THROW(pretrain_phi(m.phi, m.phi_opt, t.source, t.reference, cfg, -1, rng), ConfigError);
}

TEST(Pretrain, SameSeedGivesIdenticalLog) {
  const Tripod t = make_tripod(small_data(1));
  const TrainConfig cfg = small_config();
  std::string csv[2];
  Vector params[2];
  for (int k = 0; k < 2; ++k) {
    CompositionModel m = make_composition(3, 3, 3, cfg);
    std::mt19937_64 rng(7);
    csv[k] = log_to_csv(pretrain_phi(m.phi, m.phi_opt, t.source, t.reference, cfg, 15, rng));
    params[k] = m.phi.parameters();
  }
  EXPECT_EQ(csv[0], csv[1]);
  EXPECT_EQ(params[0], params[1]);
}

TEST(Pretrain, LogIdentityHoldsAtEveryRecord) {
  const Tripod t = make_tripod(small_data(2));
  for (double lambda : {0.0, 0.5, 1.0, 3.0}) {
    TrainConfig cfg = small_config();
    cfg.lambda_gm = lambda;
    CompositionModel m = make_composition(3, 3, 3, cfg);
    std::mt19937_64 rng(3);
    const TrainLog log = pretrain_phi(m.phi, m.phi_opt, t.source, t.reference, cfg, 10, rng);
    ASSERT_EQ(log.records.size(), 10u);
    for (const LogRecord& r : log.records) {
      EXPECT_NEAR(r.total, r.fitting + lambda * r.gap, 1e-9);
      EXPECT_EQ(r.loop, "pretrain_phi");
    }
  }
}

TEST(Pretrain, MedianLossDecreasesOnSeededSuite) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Tripod t = make_tripod(small_data(seed));
    TrainConfig cfg = small_config();
    cfg.seed = seed;
    CompositionModel m = make_composition(3, 3, 3, cfg);
    std::mt19937_64 rng(seed + 100);
    const int iters = 200;
    const TrainLog log = pretrain_phi(m.phi, m.phi_opt, t.source, t.reference, cfg, iters, rng);
    std::vector<double> head;
    std::vector<double> tail;
    for (int i = 0; i < iters / 10; ++i) {
      head.push_back(log.records[static_cast<std::size_t>(i)].total);
      tail.push_back(log.records[static_cast<std::size_t>(iters - 1 - i)].total);
    }
    EXPECT_LT(median(tail), median(head)) << "seed " << seed;
  }
}

TEST(Pretrain, DivergenceAbortsWithLastGoodNetwork) {
  const Tripod t = make_tripod(small_data(3));
  TrainConfig cfg = small_config();
  cfg.divergence_limit = 1e-9;
  CompositionModel m = make_composition(3, 3, 3, cfg);
  const Vector before = m.phi.parameters();
  std::mt19937_64 rng(1);
  try {
    pretrain_phi(m.phi, m.phi_opt, t.source, t.reference, cfg, 5, rng);
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    ASSERT_EQ(e.last_good().size(), 1u);
    EXPECT_EQ(e.last_good()[0].parameters(), before);
    EXPECT_TRUE(e.log().records.empty());
    EXPECT_NE(std::string(e.what()).find("pretrain_phi iteration 0"), std::string::npos);
  }
  EXPECT_THROW(pretrain_phi(m.phi, m.phi_opt, t.source, t.reference, cfg, 5, rng), SolverError);
}

TEST(Composition, ZeroOuterLeavesNetworksUnchanged) {
  const Tripod t = make_tripod(small_data(4));
  TrainConfig cfg = small_config();
  cfg.k_outer = 0;
  CompositionModel m = make_composition(3, 3, 3, cfg);
  const Vector phi0 = m.phi.parameters();
  const Vector t0 = m.tmap.parameters();
  std::mt19937_64 rng(1);
  const TrainLog log = train_composition(m, t.source, t.reference, t.target, cfg, rng);
  EXPECT_TRUE(log.records.empty());
  EXPECT_EQ(m.phi.parameters(), phi0);
  EXPECT_EQ(m.tmap.parameters(), t0);
}

TEST(Composition, LoopStructure) {
  const Tripod t = make_tripod(small_data(5));
  TrainConfig cfg = small_config();
  cfg.k_outer = 3;
  cfg.k_inner = 4;
  CompositionModel m = make_composition(3, 3, 3, cfg);
  std::mt19937_64 rng(2);
  const TrainLog log = train_composition(m, t.source, t.reference, t.target, cfg, rng);
  ASSERT_EQ(log.records.size(), 3u * 5u);
  for (int k = 0; k < 3; ++k) {
    const LogRecord& outer = log.records[static_cast<std::size_t>(5 * k)];
    EXPECT_EQ(outer.loop, "outer_phi");
    EXPECT_EQ(outer.iteration, k);
    for (int j = 0; j < 4; ++j) {
      const LogRecord& inner = log.records[static_cast<std::size_t>(5 * k + 1 + j)];
      EXPECT_EQ(inner.loop, "inner_T");
      EXPECT_EQ(inner.iteration, 4 * k + j);
    }
  }
  EXPECT_EQ(m.phi_opt.step, 3);
  EXPECT_EQ(m.t_opt.step, 12);
}

TEST(Composition, DimensionMismatchThrows) {
  const Tripod t = make_tripod(small_data(6));
  const TrainConfig cfg = small_config();
  CompositionModel m = make_composition(3, 2, 3, cfg);
  std::mt19937_64 rng(1);
  EXPECT_THROW(train_composition(m, t.source, t.reference, t.target, cfg, rng), SizeError);
}

TEST(Direct, ZeroItersUnchangedAndSeeded) {
  const Tripod t = make_tripod(small_data(7));
  const TrainConfig cfg = small_config();
  nn::MlpMap net = make_direct(3, 3, cfg);
  const Vector before = net.parameters();
  nn::AdamState opt = nn::AdamState::for_map(net, cfg.eta_T);
  std::mt19937_64 rng(1);
  EXPECT_TRUE(train_direct(net, opt, t.source, t.target, cfg, 0, rng).records.empty());
  EXPECT_EQ(net.parameters(), before);

  std::string csv[2];
  for (int k = 0; k < 2; ++k) {
    nn::MlpMap n = make_direct(3, 3, cfg);
    nn::AdamState o = nn::AdamState::for_map(n, cfg.eta_T);
    std::mt19937_64 r(9);
    csv[k] = log_to_csv(train_direct(n, o, t.source, t.target, cfg, 12, r));
  }
  EXPECT_EQ(csv[0], csv[1]);
}

// Evaluation

TEST(Evaluate, SelfIsZero) {
  const Tripod t = make_tripod(small_data(8));
  EXPECT_NEAR(evaluate(t.target, t.target, TrainConfig::desk()), 0.0, 1e-8);
}

TEST(Evaluate, GroundTruthCompositionMatchesTarget) {
  const Tripod t = make_tripod(small_data(9));
  const PointCloud mapped = apply_linear(apply_rigid(t.source_holdout, t.rigid), t.shear);
  EXPECT_LE(evaluate(mapped, t.target_holdout, TrainConfig::desk()), 1e-6);
}

TEST(Evaluate, UsesUnscaledSquaredEuclidean) {
  const PointCloud a = gaussian_cloud(64, 3, 1);
  Matrix shifted = a.points;
  shifted.col(0).array() += 0.5;
  const double v = evaluate(PointCloud::uniform(shifted), a, TrainConfig::desk());
  EXPECT_NEAR(v, 0.25, 0.02);
}

TEST(Evaluate, DimensionMismatchNamesBoth) {
  try {
    evaluate(gaussian_cloud(5, 3, 1), gaussian_cloud(5, 2, 2), TrainConfig::desk());
    FAIL();
  } catch (const SizeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('3'), std::string::npos);
    EXPECT_NE(msg.find('2'), std::string::npos);
  }
}

// Full runs at toy scale

TEST(Run, CompositionAndDirectAtMatchedBudget) {
  const Tripod t = make_tripod(small_data(10));
  TrainConfig cfg = small_config();
  cfg.pretrain_iters = 60;
  cfg.k_inner = 40;
  cfg.eta_phi = 1e-2;
  cfg.eta_T = 1e-2;
  cfg.direct_iters = cfg.composition_steps();
  const RunResult comp = run_composition(t, cfg);
  const RunResult dir = run_direct(t, cfg);
  EXPECT_EQ(comp.steps, dir.steps);
  EXPECT_EQ(comp.log.records.size(), static_cast<std::size_t>(comp.steps));
  EXPECT_EQ(dir.log.records.size(), static_cast<std::size_t>(dir.steps));
  ASSERT_EQ(comp.networks.size(), 2u);
  EXPECT_EQ(comp.networks[0].first, "phi");
  EXPECT_EQ(comp.networks[1].first, "T");
  EXPECT_TRUE(comp.networks[0].second.residual());
  EXPECT_FALSE(comp.networks[1].second.residual());
  ASSERT_EQ(dir.networks.size(), 1u);
  EXPECT_EQ(comp.mapped_holdout.rows(), 128);
  EXPECT_EQ(comp.mapped_train.rows(), 256);
  EXPECT_LT(comp.eval_holdout, comp.eval_untrained);
  EXPECT_TRUE(std::isfinite(dir.eval_holdout));
}

TEST(Run, DeterministicUnderFixedSeed) {
  const Tripod t = make_tripod(small_data(11));
  const TrainConfig cfg = small_config();
  const RunResult a = run_composition(t, cfg);
  const RunResult b = run_composition(t, cfg);
  EXPECT_EQ(log_to_csv(a.log), log_to_csv(b.log));
  EXPECT_EQ(a.networks[1].second.parameters(), b.networks[1].second.parameters());
  EXPECT_EQ(a.eval_holdout, b.eval_holdout);
  TrainConfig other = cfg;
  other.seed = cfg.seed + 1;
  EXPECT_NE(log_to_csv(run_composition(t, other).log), log_to_csv(a.log));
}

// Desk-scale pre-training on the rigid pair. Per-batch fitting values carry
// the sampling noise between two independent 256-point batches, so the
// fitting threshold is checked on the full clouds.
TEST(PretrainDesk, RigidPairReachesSmallFitAndGap) {
  TripodSpec spec;
  spec.data_seed = 0;
  const Tripod t = make_tripod(spec);
  const TrainConfig cfg = TrainConfig::desk();
  CompositionModel m = make_composition(3, 3, 3, cfg);
  std::mt19937_64 rng(42);
  const TrainLog log =
      pretrain_phi(m.phi, m.phi_opt, t.source, t.reference, cfg, cfg.pretrain_iters, rng);
  ASSERT_EQ(log.records.size(), 1500u);

  ot::SinkhornOptions o;
  o.epsilon = cfg.eps_fit_phi;
  o.method = ot::SinkhornMethod::stabilized;
  o.scaling_decay = 0.5;
  const ot::DivergenceResult full =
      ot::sinkhorn_divergence(PointCloud::uniform(m.phi.apply(t.source.points)), t.reference,
                              Metric::sq_euclidean, Scaling::mean, o);
  EXPECT_LE(full.value, 0.01);

  std::vector<double> gaps;
  for (std::size_t i = log.records.size() - 150; i < log.records.size(); ++i) {
    gaps.push_back(log.records[i].gap);
  }
  EXPECT_LE(std::abs(median(gaps)), 0.01);
}

}  // namespace
}  // namespace gmot::train
