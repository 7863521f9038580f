#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "gmot/io.hpp"

using namespace gmot;
using namespace gmot::cli;

namespace {

struct DataFlags {
  std::string shape = "s_curve";
  TripodSpec spec;
};

void add_data_flags(CLI::App* cmd, DataFlags& d) {
  cmd->add_option("--shape", d.shape, "Source generator: s_curve, spiral or gaussian_mixture")
      ->capture_default_str();
  cmd->add_option("--n-total", d.spec.n_total, "Training points per cloud")->capture_default_str();
  cmd->add_option("--n-holdout", d.spec.n_holdout, "Held-out points per cloud")->capture_default_str();
  cmd->add_option("--noise", d.spec.noise, "Gaussian jitter on the source")->capture_default_str();
  cmd->add_option("--rigid-seed", d.spec.rigid_seed)->capture_default_str();
  cmd->add_option("--translation-scale", d.spec.translation_scale)->capture_default_str();
  cmd->add_option("--shear-seed", d.spec.shear_seed)->capture_default_str();
  cmd->add_option("--shear-magnitude", d.spec.shear_magnitude)->capture_default_str();
  cmd->add_flag("--anisotropic", d.spec.anisotropic_shear, "Compose the shear with a diagonal scaling");
}

TripodSpec resolve(const DataFlags& d, std::uint64_t seed) {
  TripodSpec s = d.spec;
  s.shape = parse_shape(d.shape);
  s.data_seed = seed;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gromov-Monge composition maps: data generation, training and oracle checks"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write the X, Z, Y tripod and its transforms");
  DataFlags gen_data;
  std::uint64_t gen_seed = 0;
  GenerateOptions gen_opts;
  bool gen_no_ply = false;
  gen->add_option("--seed", gen_seed, "Data seed")->required();
  gen->add_option("--out", gen_opts.out, "Output directory")->required();
  gen->add_flag("--no-ply", gen_no_ply, "Skip PLY copies");
  add_data_flags(gen, gen_data);

  // train
  auto* tr = app.add_subcommand("train", "Train composition and/or direct maps");
  DataFlags tr_data;
  std::vector<std::uint64_t> tr_seeds;
  std::string tr_preset = "desk";
  std::string tr_config;
  std::string tr_mode = "both";
  std::string tr_out;
  int tr_jobs = 1;
  bool tr_no_ply = false;
  tr->add_option("--seed", tr_seeds, "Seed(s); several seeds go to <out>/seed_<s>")->required();
  tr->add_option("--preset", tr_preset, "paper or desk")->capture_default_str();
  tr->add_option("--config", tr_config, "JSON file overriding preset fields");
  tr->add_option("--mode", tr_mode, "composition, direct or both")->capture_default_str();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--jobs", tr_jobs, "Worker processes for several seeds")->capture_default_str();
  tr->add_flag("--no-ply", tr_no_ply, "Skip PLY copies");
  add_data_flags(tr, tr_data);

  // oracle-check
  auto* oc = app.add_subcommand("oracle-check", "Brute-force tripod checks on small instances");
  OracleCheckOptions oc_opts;
  std::string oc_target = "random";
  oc->add_option("--seed", oc_opts.seed, "Base seed")->capture_default_str();
  oc->add_option("--n", oc_opts.n, "Points per instance (at most 8)")->capture_default_str();
  oc->add_option("--instances", oc_opts.instances)->capture_default_str();
  oc->add_option("--target", oc_target, "random, sheared or isomorphic")->capture_default_str();
  oc->add_option("--tolerance", oc_opts.tolerance)->capture_default_str();
  oc->add_option("--out", oc_opts.out, "JSON report path")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Analytic gradients against finite differences");
  GradcheckOptions gc_opts;
  gc->add_option("--seed", gc_opts.seed)->capture_default_str();
  gc->add_option("--out", gc_opts.out, "Optional JSON report path");

  // export
  auto* ex = app.add_subcommand("export", "Convert point files and write manifest.json");
  ExportOptions ex_opts;
  std::string ex_format = "ply";
  ex->add_option("run_dir", ex_opts.run_dir, "Run directory from `train --mode both`")->required();
  ex->add_option("--format", ex_format, "Target format: ply or csv")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) {
      gen_opts.data = resolve(gen_data, gen_seed);
      gen_opts.ply = !gen_no_ply;
      cmd_generate(gen_opts);
      std::cout << "wrote tripod to " << gen_opts.out.string() << "\n";
    } else if (*tr) {
      TrainOptions o;
      o.preset = tr_preset;
      o.config = train::preset(tr_preset);
      if (!tr_config.empty()) {
        o.config = train::config_from_json(io::read_text(tr_config), o.config);
      }
      o.mode = parse_train_mode(tr_mode);
      o.out = tr_out;
      o.ply = !tr_no_ply;
      o.data = resolve(tr_data, tr_seeds.front());
      if (tr_seeds.size() == 1 && tr_jobs == 1) {
        o.config.seed = tr_seeds.front();
        cmd_train(o);
        std::cout << "wrote run to " << o.out.string() << "\n";
        return kOk;
      }
      return cmd_train_seeds(o, tr_seeds, tr_jobs);
    } else if (*oc) {
      oc_opts.target = oracle::parse_target_kind(oc_target);
      const OracleCheckSummary s = cmd_oracle_check(oc_opts);
      std::cout << s.instances << " instances, max residuals " << s.max_invariance_residual << " / "
                << s.max_decomposition_residual << ", all pass\n";
    } else if (*gc) {
      for (const GradCheck& c : cmd_gradcheck(gc_opts)) {
        std::cout << c.name << ": rel err " << c.rel_error << " (tol " << c.tolerance << ")\n";
      }
    } else if (*ex) {
      if (ex_format == "ply") {
        ex_opts.format = PointFormat::ply;
      } else if (ex_format == "csv") {
        ex_opts.format = PointFormat::csv;
      } else {
        throw ConfigError("unknown format '" + ex_format + "' (expected ply or csv)");
      }
      cmd_export(ex_opts);
      std::cout << "wrote " << (ex_opts.run_dir / "manifest.json").string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kOk;
}
