#include "commands.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "gmot/io.hpp"
#include "gmot/neural.hpp"
#include "gmot/ot.hpp"

namespace gmot::cli {

using nlohmann::json;
using nlohmann::ordered_json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InvalidInput*>(&e)) return kConfig;
  if (dynamic_cast<const SolverError*>(&e)) return kSolver;
  if (dynamic_cast<const CheckFailed*>(&e)) return kOracle;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) {
    return kIo;
  }
  return kInternal;
}

namespace {

ordered_json matrix_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

ordered_json vector_json(const Vector& v) {
  ordered_json out = ordered_json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

ordered_json data_json(const TripodSpec& s) {
  ordered_json j;
  j["shape"] = std::string(to_string(s.shape));
  j["n_total"] = s.n_total;
  j["n_holdout"] = s.n_holdout;
  j["noise"] = s.noise;
  j["data_seed"] = s.data_seed;
  j["rigid_seed"] = s.rigid_seed;
  j["translation_scale"] = s.translation_scale;
  j["shear_seed"] = s.shear_seed;
  j["shear_magnitude"] = s.shear_magnitude;
  j["anisotropic_shear"] = s.anisotropic_shear;
  return j;
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_points(const fs::path& stem, const PointCloud& cloud, bool ply) {
  io::write_points_csv(fs::path(stem).replace_extension(".csv"), cloud);
  if (ply) io::write_points_ply(fs::path(stem).replace_extension(".ply"), cloud);
}

struct DataFile {
  const char* name;
  const PointCloud Tripod::*cloud;
};

constexpr DataFile kDataFiles[] = {
    {"X", &Tripod::source},
    {"Z", &Tripod::reference},
    {"Y", &Tripod::target},
    {"X_holdout", &Tripod::source_holdout},
    {"Z_holdout", &Tripod::reference_holdout},
    {"Y_holdout", &Tripod::target_holdout},
};

void write_tripod(const fs::path& dir, const TripodSpec& spec, const Tripod& t, bool ply) {
  make_dirs(dir);
  for (const DataFile& f : kDataFiles) {
    const PointCloud& cloud = t.*f.cloud;
    if (cloud.size() > 0) write_points(dir / f.name, cloud, ply);
  }
  ordered_json j;
  j["data"] = data_json(spec);
  j["rotation"] = matrix_json(t.rigid.rotation);
  j["translation"] = vector_json(t.rigid.translation);
  j["shear"] = matrix_json(t.shear.matrix);
  io::write_text(dir / "transforms.json", j.dump(2) + "\n");
}

ordered_json summary_json(const train::RunResult& r, const TrainOptions& opts) {
  ordered_json j;
  j["mode"] = r.mode;
  j["preset"] = opts.preset;
  j["seed"] = opts.config.seed;
  j["eval_holdout"] = r.eval_holdout;
  j["eval_train"] = r.eval_train;
  j["eval_untrained"] = r.eval_untrained;
  j["steps"] = r.steps;
  j["unconverged_steps"] = r.log.unconverged_steps;
  if (!r.log.records.empty()) {
    const train::LogRecord& last = r.log.records.back();
    j["final"] = {{"loop", last.loop},
                  {"fitting_loss", last.fitting},
                  {"gm_gap", last.gap},
                  {"total_loss", last.total}};
  }
  j["runtime_seconds"] = r.seconds;
  j["config"] = ordered_json::parse(train::config_to_json(opts.config));
  j["data"] = data_json(opts.data);
  ordered_json files = ordered_json::array();
  for (const auto& [name, _] : r.networks) files.push_back(name + ".json");
  j["checkpoints"] = files;
  return j;
}

void write_run(const fs::path& dir, const train::RunResult& r, const TrainOptions& opts) {
  make_dirs(dir);
  for (const auto& [name, net] : r.networks) {
    io::save_checkpoint(dir / (name + ".json"), net,
                        {opts.config.seed, static_cast<std::int64_t>(r.steps), name});
  }
  io::write_text(dir / "train_log.csv", train::log_to_csv(r.log));
  write_points(dir / "mapped_points", PointCloud::uniform(r.mapped_train), opts.ply);
  write_points(dir / "mapped_holdout", PointCloud::uniform(r.mapped_holdout), opts.ply);
  io::write_text(dir / "summary.json", summary_json(r, opts).dump(2) + "\n");
}

json read_json(const fs::path& path) {
  try {
    return json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

void cmd_generate(const GenerateOptions& opts) {
  if (opts.out.empty()) throw ConfigError("generate: an output directory is required");
  const Tripod t = make_tripod(opts.data);
  write_tripod(opts.out, opts.data, t, opts.ply);
}

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::composition:
      return "composition";
    case TrainMode::direct:
      return "direct";
    case TrainMode::both:
      return "both";
  }
  return "?";
}

TrainMode parse_train_mode(std::string_view name) {
  if (name == "composition") return TrainMode::composition;
  if (name == "direct") return TrainMode::direct;
  if (name == "both") return TrainMode::both;
  throw ConfigError("unknown mode '" + std::string(name) + "' (expected composition, direct or both)");
}

void cmd_train(const TrainOptions& opts) {
  if (opts.out.empty()) throw ConfigError("train: an output directory is required");
  opts.config.validate();
  const Tripod t = make_tripod(opts.data);
  make_dirs(opts.out);
  write_tripod(opts.out / "data", opts.data, t, opts.ply);
  io::write_text(opts.out / "config.json", train::config_to_json(opts.config) + "\n");

  if (opts.mode != TrainMode::direct) {
    write_run(opts.out / "composition", train::run_composition(t, opts.config), opts);
  }
  if (opts.mode != TrainMode::composition) {
    write_run(opts.out / "direct", train::run_direct(t, opts.config), opts);
  }
  if (opts.mode == TrainMode::both) {
    io::write_text(opts.out / "manifest.json", build_manifest(opts.out));
  }
}

fs::path seed_dir(const fs::path& out, std::uint64_t seed) {
  return out / ("seed_" + std::to_string(seed));
}

namespace {

int run_seed(const TrainOptions& base, std::uint64_t seed) {
  TrainOptions o = base;
  o.config.seed = seed;
  o.data.data_seed = seed;
  o.out = seed_dir(base.out, seed);
  try {
    const auto t0 = std::chrono::steady_clock::now();
    cmd_train(o);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream os;
    os << "seed " << seed << ": done in " << secs << " s";
    for (const char* mode : {"composition", "direct"}) {
      const fs::path summary = o.out / mode / "summary.json";
      if (fs::exists(summary)) {
        os << ", " << mode << " eval " << read_json(summary).at("eval_holdout").get<double>();
      }
    }
    std::cout << os.str() << std::endl;
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "seed " << seed << ": " << e.what() << std::endl;
    return exit_code_for(e);
  }
}

}  // namespace

int cmd_train_seeds(const TrainOptions& opts, const std::vector<std::uint64_t>& seeds, int jobs) {
  if (seeds.empty()) throw ConfigError("train: at least one seed is required");
  if (jobs < 1) throw ConfigError("train: --jobs must be at least 1");
  if (jobs == 1) {
    int code = kOk;
    for (std::uint64_t s : seeds) {
      const int c = run_seed(opts, s);
      if (code == kOk) code = c;
    }
    return code;
  }

  std::cout.flush();
  std::cerr.flush();
  std::map<pid_t, std::uint64_t> running;
  std::size_t next = 0;
  int code = kOk;
  auto reap_one = [&] {
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, 0);
    if (pid <= 0) throw Error("waitpid failed");
    running.erase(pid);
    const int c = WIFEXITED(status) ? WEXITSTATUS(status) : kInternal;
    if (code == kOk) code = c;
  };
  while (next < seeds.size() || !running.empty()) {
    if (next < seeds.size() && static_cast<int>(running.size()) < jobs) {
      const std::uint64_t s = seeds[next++];
      const pid_t pid = ::fork();
      if (pid < 0) throw Error("fork failed");
      if (pid == 0) {
        const int c = run_seed(opts, s);
        std::cout.flush();
        std::cerr.flush();
        std::_Exit(c);
      }
      running.emplace(pid, s);
    } else {
      reap_one();
    }
  }
  return code;
}

OracleCheckSummary cmd_oracle_check(const OracleCheckOptions& opts) {
  if (opts.instances < 1) throw ConfigError("oracle-check: --instances must be positive");
  const auto instances = oracle::seeded_instances(opts.seed, opts.n, opts.instances, opts.target);

  OracleCheckSummary sum;
  ordered_json rows = ordered_json::array();
  for (const oracle::TripodInstance& inst : instances) {
    const auto inv = oracle::check_isomorphism_invariance(inst.source, inst.rigid, inst.target,
                                                          opts.tolerance);
    const auto dec = oracle::check_decomposition(inst.source, inst.rigid, inst.target, opts.tolerance);
    const bool pass = inv.pass && dec.pass;
    ++sum.instances;
    if (!pass) ++sum.failures;
    sum.max_invariance_residual = std::max(sum.max_invariance_residual, inv.residual);
    sum.max_decomposition_residual = std::max(sum.max_decomposition_residual, dec.residual);

    ordered_json r;
    r["seed"] = inst.seed;
    r["gm_source_target"] = inv.gm_source_target;
    r["gm_reference_target"] = inv.gm_reference_target;
    r["invariance_residual"] = inv.residual;
    r["best_source_target"] = inv.best_source_target;
    r["best_reference_target"] = inv.best_reference_target;
    r["direct_optimum"] = dec.direct_optimum;
    r["composed_distortion"] = dec.composed_distortion;
    r["decomposition_residual"] = dec.residual;
    r["composed_permutation"] = dec.composed_permutation;
    r["pass"] = pass;
    rows.push_back(std::move(r));
  }

  ordered_json report;
  report["seed"] = opts.seed;
  report["n"] = opts.n;
  report["instances"] = opts.instances;
  report["target"] = std::string(oracle::to_string(opts.target));
  report["tolerance"] = opts.tolerance;
  report["costs"] = "euclidean, unscaled";
  report["failures"] = sum.failures;
  report["max_invariance_residual"] = sum.max_invariance_residual;
  report["max_decomposition_residual"] = sum.max_decomposition_residual;
  report["pass"] = sum.failures == 0;
  report["results"] = std::move(rows);
  sum.report_json = report.dump(2) + "\n";

  if (!opts.out.empty()) {
    if (opts.out.has_parent_path()) make_dirs(opts.out.parent_path());
    io::write_text(opts.out, sum.report_json);
  }
  if (sum.failures > 0) {
    throw CheckFailed("oracle-check: " + std::to_string(sum.failures) + " of " +
                      std::to_string(sum.instances) + " instances failed");
  }
  return sum;
}

namespace {

PointCloud normal_cloud(Index n, Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix p(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) p(i, k) = normal(rng);
  return PointCloud::uniform(std::move(p));
}

Vector flat(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

Matrix unflat(const Vector& v, Index rows, Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

GradCheck make_check(std::string name, const Vector& analytic, const Vector& numeric, double tol) {
  const double err = oracle::relative_error(analytic, numeric);
  return {std::move(name), err, tol, err <= tol};
}

ot::SinkhornOptions tight(double eps) {
  ot::SinkhornOptions o;
  o.epsilon = eps;
  o.tol = 1e-9;
  o.max_iter = 100000;
  return o;
}

}  // namespace

std::vector<GradCheck> gradient_checks(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheck> out;

  {
    const PointCloud src = normal_cloud(9, 3, rng);
    const PointCloud mapped = normal_cloud(9, 3, rng);
    for (Metric m : {Metric::euclidean, Metric::sq_euclidean}) {
      const Matrix cx = pairwise_cost(src, m, Scaling::max).values;
      auto loss = [&](const Vector& v) {
        return ot::distortion_p2(cx, PointCloud::uniform(unflat(v, 9, 3)), m, Scaling::max).value;
      };
      out.push_back(make_check("distortion_p2/" + std::string(to_string(m)),
                               flat(ot::distortion_p2(cx, mapped, m, Scaling::max).grad_mapped),
                               oracle::finite_diff(loss, flat(mapped.points)), 1e-6));
    }
  }

  {
    const PointCloud a = normal_cloud(7, 3, rng);
    const PointCloud b = normal_cloud(6, 3, rng);
    const ot::SinkhornOptions o = tight(0.05);
    for (Metric m : {Metric::euclidean, Metric::sq_euclidean}) {
      auto loss = [&](const Vector& v) {
        return ot::entropic_ot(PointCloud::uniform(unflat(v, 7, 3)), b, m, Scaling::mean, o)
            .regularized_cost;
      };
      out.push_back(make_check("entropic_ot/" + std::string(to_string(m)),
                               flat(ot::entropic_ot(a, b, m, Scaling::mean, o).grad_source),
                               oracle::finite_diff(loss, flat(a.points)), 1e-3));
    }
  }

  {
    const PointCloud a = normal_cloud(8, 3, rng);
    const PointCloud b = normal_cloud(7, 3, rng);
    const ot::SinkhornOptions o = tight(0.1);
    for (Scaling s : {Scaling::none, Scaling::mean}) {
      auto loss = [&](const Vector& v) {
        return ot::sinkhorn_divergence(PointCloud::uniform(unflat(v, 8, 3)), b,
                                       Metric::sq_euclidean, s, o)
            .value;
      };
      out.push_back(make_check(
          "sinkhorn_divergence/" + std::string(to_string(s)),
          flat(ot::sinkhorn_divergence(a, b, Metric::sq_euclidean, s, o).grad_source),
          oracle::finite_diff(loss, flat(a.points)), 1e-3));
    }
  }

  {
    const PointCloud x = normal_cloud(10, 3, rng);
    const PointCloud m = normal_cloud(10, 3, rng);
    ot::GwOptions o;
    o.epsilon = 1e-2;
    const ot::GmGapResult g = ot::gm_gap(x, m, Metric::euclidean, Scaling::max, o);
    const Matrix cx = pairwise_cost(x, Metric::euclidean, Scaling::max).values;
    const Matrix plan = g.gw.coupling.plan;
    auto loss = [&](const Vector& v) {
      const PointCloud mm = PointCloud::uniform(unflat(v, 10, 3));
      const Matrix cy = pairwise_cost(mm, Metric::euclidean, Scaling::max).values;
      return ot::distortion_p2(cx, mm, Metric::euclidean, Scaling::max).value -
             ot::gw_cost(cx, cy, plan);
    };
    out.push_back(make_check("gm_gap/fixed_plan", flat(g.grad_mapped),
                             oracle::finite_diff(loss, flat(m.points)), 1e-6));
  }

  {
    const train::TrainConfig cfg = train::TrainConfig::paper();
    struct Arch {
      const char* name;
      Index in;
      Index out;
      bool residual;
    };
    for (const Arch& arch : {Arch{"mlp/phi", 3, 3, true}, Arch{"mlp/T", 3, 3, false}}) {
      std::vector<Index> dims{arch.in};
      dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
      dims.push_back(arch.out);
      nn::MlpMap net = nn::init_orthogonal(dims, arch.residual, rng());
      Vector p = net.parameters();
      std::normal_distribution<double> normal(0.0, 0.1);
      for (Index k = 0; k < p.size(); ++k) p(k) += normal(rng);
      net.set_parameters(p);
      const Matrix xb = normal_cloud(16, arch.in, rng).points;
      const Matrix up = normal_cloud(16, arch.out, rng).points;
      const nn::ForwardPass pass = net.forward(xb);
      const Vector analytic = net.backward(pass, up).params;

      std::vector<Index> coords(static_cast<std::size_t>(p.size()));
      std::iota(coords.begin(), coords.end(), Index{0});
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(20);
      nn::MlpMap probe = net;
      auto loss = [&](const Vector& v) {
        probe.set_parameters(v);
        return (probe.apply(xb).array() * up.array()).sum();
      };
      const Vector numeric = oracle::finite_diff(loss, p, 1e-5, coords);
      Vector a(20);
      Vector n(20);
      for (std::size_t k = 0; k < coords.size(); ++k) {
        a(static_cast<Index>(k)) = analytic(coords[k]);
        n(static_cast<Index>(k)) = numeric(coords[k]);
      }
      out.push_back(make_check(arch.name, a, n, 1e-5));
    }
  }
  return out;
}

std::vector<GradCheck> cmd_gradcheck(const GradcheckOptions& opts) {
  const std::vector<GradCheck> checks = gradient_checks(opts.seed);
  ordered_json rows = ordered_json::array();
  int failures = 0;
  for (const GradCheck& c : checks) {
    if (!c.pass) ++failures;
    rows.push_back({{"name", c.name}, {"rel_error", c.rel_error}, {"tolerance", c.tolerance},
                    {"pass", c.pass}});
  }
  if (!opts.out.empty()) {
    ordered_json report;
    report["seed"] = opts.seed;
    report["failures"] = failures;
    report["checks"] = std::move(rows);
    if (opts.out.has_parent_path()) make_dirs(opts.out.parent_path());
    io::write_text(opts.out, report.dump(2) + "\n");
  }
  if (failures > 0) {
    throw CheckFailed("gradcheck: " + std::to_string(failures) + " of " +
                      std::to_string(checks.size()) + " checks failed");
  }
  return checks;
}

namespace {

const char* const kModes[] = {"composition", "direct"};
const char* const kPointStems[] = {"mapped_points", "mapped_holdout"};

std::vector<fs::path> point_stems(const fs::path& run_dir) {
  std::vector<fs::path> stems;
  for (const DataFile& f : kDataFiles) stems.push_back(run_dir / "data" / f.name);
  for (const char* mode : kModes)
    for (const char* stem : kPointStems) stems.push_back(run_dir / mode / stem);
  return stems;
}

std::string rel(const fs::path& p, const fs::path& base) {
  return fs::relative(p, base).generic_string();
}

}  // namespace

std::string build_manifest(const fs::path& run_dir) {
  std::vector<std::string> missing;
  auto need = [&](const fs::path& p) {
    if (!fs::exists(p)) missing.push_back(rel(p, run_dir));
    return p;
  };
  const fs::path data = run_dir / "data";
  need(run_dir / "config.json");
  need(data / "transforms.json");
  for (const char* stem : {"X", "Z", "Y", "Y_holdout"}) need(data / (std::string(stem) + ".csv"));
  for (const char* mode : kModes) {
    need(run_dir / mode / "summary.json");
    need(run_dir / mode / "train_log.csv");
    need(run_dir / mode / "mapped_holdout.csv");
  }
  if (!missing.empty()) {
    std::string msg = "run directory " + run_dir.string() + " is missing:";
    for (const auto& m : missing) msg += " " + m;
    throw IoError(msg);
  }

  const json transforms = read_json(data / "transforms.json");
  ordered_json m;
  m["seed"] = read_json(run_dir / "composition" / "summary.json").at("seed");
  m["data"] = transforms.at("data");
  m["config"] = "config.json";
  m["transforms"] = "data/transforms.json";
  m["tripod"] = {{"X", "data/X.csv"}, {"Z", "data/Z.csv"}, {"Y", "data/Y.csv"}};
  ordered_json panels = ordered_json::array();
  panels.push_back({{"name", "target"}, {"points", "data/Y_holdout.csv"}});
  for (const auto& [name, mode] : {std::pair{"composed", "composition"}, std::pair{"direct", "direct"}}) {
    const json s = read_json(run_dir / mode / "summary.json");
    panels.push_back({{"name", name},
                      {"points", std::string(mode) + "/mapped_holdout.csv"},
                      {"summary", std::string(mode) + "/summary.json"},
                      {"eval_holdout", s.at("eval_holdout")}});
  }
  m["panels"] = std::move(panels);
  m["train_logs"] = {{"composition", "composition/train_log.csv"},
                     {"direct", "direct/train_log.csv"}};
  return m.dump(2) + "\n";
}

void cmd_export(const ExportOptions& opts) {
  if (!fs::is_directory(opts.run_dir)) {
    throw IoError("export: run directory " + opts.run_dir.string() + " does not exist");
  }
  const char* from = opts.format == PointFormat::ply ? ".csv" : ".ply";
  const char* to = opts.format == PointFormat::ply ? ".ply" : ".csv";
  int converted = 0;
  for (const fs::path& stem : point_stems(opts.run_dir)) {
    const fs::path src = fs::path(stem).replace_extension(from);
    if (!fs::exists(src)) continue;
    const PointCloud cloud = opts.format == PointFormat::ply ? io::read_points_csv(src)
                                                             : io::read_points_ply(src);
    const fs::path dst = fs::path(stem).replace_extension(to);
    if (opts.format == PointFormat::ply) {
      io::write_points_ply(dst, cloud);
    } else {
      io::write_points_csv(dst, cloud);
    }
    ++converted;
  }
  if (converted == 0) {
    throw IoError("export: no " + std::string(from) + " point files in " + opts.run_dir.string() +
                  "; expected data/{X,Z,Y}" + from + " and {composition,direct}/mapped_points" +
                  from);
  }
  io::write_text(opts.run_dir / "manifest.json", build_manifest(opts.run_dir));
}

}  // namespace gmot::cli
