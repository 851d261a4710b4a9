// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dupfm/common.hpp"
#include "dupfm/fim.hpp"
#include "dupfm/harness.hpp"
#include "dupfm/io.hpp"

namespace fs = std::filesystem;
using namespace dupfm;

namespace {

struct CommonOpts {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> workers;
  std::string out;
  bool dump_tensors = false;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config, "JSON config file (comments allowed)");
  sub->add_option("--seed", o.seed, "master seed override");
  sub->add_option("--trials", o.trials, "trials per grid point override");
  sub->add_option("--workers", o.workers, "worker threads override");
  sub->add_option("--out", o.out, "output directory (default: config output)");
  sub->add_flag("--dump-tensors", o.dump_tensors, "write binary tensors of the first trial");
}

ExperimentConfig resolve(const CommonOpts& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.trials) cfg.n_trials = *o.trials;
  if (o.workers) cfg.workers = *o.workers;
  if (!o.out.empty()) cfg.output = o.out;
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const ExperimentConfig& cfg) {
  const fs::path p(cfg.output);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << content;
}

void write_manifest(const fs::path& dir, const ExperimentConfig& cfg, const std::string& cmd,
                    const std::vector<std::string>& outputs, double seconds) {
  nlohmann::json m = run_manifest(cfg, cmd, outputs);
  m["wall_seconds"] = seconds;
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

std::vector<double> parse_range(const std::string& s) {
  std::vector<double> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad range '" + s + "': expected start:stop:step");
    }
  }
  if (parts.size() == 1) return parts;
  if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0]) {
    throw ConfigError("bad range '" + s + "': expected start:stop:step with step > 0");
  }
  std::vector<double> out;
  const auto n = static_cast<long long>(std::floor((parts[1] - parts[0]) / parts[2] + 1e-9));
  for (long long i = 0; i <= n; ++i) out.push_back(parts[0] + static_cast<double>(i) * parts[2]);
  return out;
}

SystemDims parse_dims(const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (const std::exception&) {
      throw ConfigError("bad --dims '" + s + "'");
    }
  }
  if (v.size() != 4) throw ConfigError("--dims expects n_f,n_t,t_s,n_r");
  SystemDims d;
  d.n_f = v[0];
  d.n_t = v[1];
  d.t_s = v[2];
  d.n_r = v[3];
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return d;
}

int cmd_simulate(const CommonOpts& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = resolve(o);
  const fs::path dir = prepare_out(cfg);
  const GridPoint point = grid_points(cfg).front();
  PointSetup setup = make_point(cfg, point);
  if (cfg.pfm.tune_beta) tune_beta(cfg, setup);
  const auto trials = run_point(cfg, setup, cfg.n_trials, cfg.seed);
  {
    std::ofstream f(dir / "trials.csv", std::ios::binary);
    write_trials_csv(f, trials);
  }
  {
    std::ofstream f(dir / "summary.csv", std::ios::binary);
    write_sweep_csv(f, aggregate(setup, trials));
  }
  // PFM trace of the first trial against its ground truth.
  const std::uint64_t seed = split_seed(split_seed(cfg.seed, point.index + 1), 0);
  const TrialTruth truth = draw_trial(setup, seed, std::numeric_limits<double>::infinity());
  const LikelihoodModel lm = likelihood_model(setup, truth.y);
  const PfmResult res = pfm_decode(lm, setup.priors, pfm_config(cfg, setup, split_seed(seed, 4)),
                                   GroundTruth{truth.h, truth.x});
  {
    std::ofstream f(dir / "trace.csv", std::ios::binary);
    write_trace_csv(f, res.trace);
  }
  std::vector<std::string> outputs{"trials.csv", "summary.csv", "trace.csv"};
  if (o.dump_tensors) {
    const std::vector<CTensor3> t{truth.h.h, truth.x.x, truth.y.y, res.h.h, build_transmit(lm, res.s).x};
    io::write_tensors(dir / "trial0.bin", {{"names", {"h", "x", "y", "h_hat", "x_hat"}}}, t);
    outputs.push_back("trial0.bin");
  }
  std::size_t failed = 0;
  for (const auto& t : trials) failed += t.failed ? 1 : 0;
  write_manifest(dir, cfg, "simulate", outputs,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << "simulate: " << trials.size() << " results (" << failed << " failed) -> " << dir.string()
            << "\n";
  return 0;
}

int cmd_sweep(const CommonOpts& o, bool with_bcrb) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = resolve(o);
  const fs::path dir = prepare_out(cfg);
  const SweepResult r = run_sweep(cfg, with_bcrb);
  {
    std::ofstream f(dir / "sweep.csv", std::ios::binary);
    write_sweep_csv(f, r.rows);
  }
  {
    std::ofstream f(dir / "trials.csv", std::ios::binary);
    write_trials_csv(f, r.trials);
  }
  write_manifest(dir, cfg, with_bcrb ? "sweep --with-bcrb" : "sweep", {"sweep.csv", "trials.csv"},
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << "sweep: " << r.rows.size() << " rows -> " << (dir / "sweep.csv").string() << "\n";
  return 0;
}

int cmd_bcrb(const CommonOpts& o, const std::string& range) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = resolve(o);
  const std::vector<double> csnr = range.empty() ? cfg.sweep.csnr_db : parse_range(range);
  const fs::path dir = prepare_out(cfg);
  const auto rows = bcrb_sweep(cfg, csnr);
  std::ostringstream os;
  write_bcrb_csv(os, rows);
  write_file(dir / "bcrb.csv", os.str());
  write_manifest(dir, cfg, "bcrb", {"bcrb.csv"},
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << os.str();
  return 0;
}

int cmd_rank_check(const std::string& dims_str, std::size_t trials, std::uint64_t seed) {
  const SystemDims d = parse_dims(dims_str);
  std::size_t pass = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng(split_seed(seed, i));
    TransmitTensor x{CTensor3(d.n_f, d.t_s, d.n_t)};
    ChannelTensor h{CTensor3(d.n_f, d.n_t, d.n_r)};
    for (std::size_t j = 0; j < x.x.size(); ++j) x.x.data()[j] = rng.complex_normal(1.0);
    for (std::size_t j = 0; j < h.h.size(); ++j) h.h.data()[j] = rng.complex_normal(1.0);
    const RankCheck rc = verify_rank_deficiency(x, h, 1.0);
    pass += rc.pass ? 1 : 0;
    worst = std::max(worst, rc.max_null_residual);
  }
  std::cout << pass << "/" << trials << " pass, bound " << d.rank_bound() << "\n";
  std::cout << "fim side " << d.fim_side() << ", max null residual " << format_double(worst) << "\n";
  return pass == trials ? 0 : 3;
}

int cmd_train_prior(const CommonOpts& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = resolve(o);
  const fs::path dir = prepare_out(cfg);
  const TrainPriorResult r = train_prior(cfg, cfg.seed);
  save_checkpoint(dir / "prior.ckpt", r.net, {cfg.seed, r.final_loss});
  std::ostringstream os;
  os << "checkpoint,delta\n";
  for (std::size_t i = 0; i < r.delta_checkpoints.size(); ++i) {
    os << i + 1 << ',' << format_double(r.delta_checkpoints[i]) << '\n';
  }
  write_file(dir / "train_prior.csv", os.str());
  write_manifest(dir, cfg, "train-prior", {"prior.ckpt", "train_prior.csv"},
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << "final loss " << format_double(r.final_loss) << "\n" << os.str();
  return 0;
}

int cmd_emit_plots(const CommonOpts& o, const std::string& input) {
  const ExperimentConfig cfg = resolve(o);
  const fs::path dir(cfg.output);
  const fs::path in_path = input.empty() ? dir / "sweep.csv" : fs::path(input);
  std::ifstream in(in_path);
  if (!in) throw ConfigError("cannot read " + in_path.string());
  fs::create_directories(dir);
  std::ofstream out(dir / "plots.csv", std::ios::binary);
  emit_plot_table(in, out);
  std::cout << "plots -> " << (dir / "plots.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dupfm: pilot-free joint channel and source estimation experiments"};
  app.require_subcommand(1);

  CommonOpts simulate_o, sweep_o, bcrb_o, train_o, plots_o;
  auto* simulate = app.add_subcommand("simulate", "run the first grid point of a config");
  add_common(simulate, simulate_o);

  auto* sweep = app.add_subcommand("sweep", "run the full CSNR x CBR x pilot grid");
  add_common(sweep, sweep_o);
  bool with_bcrb = false;
  sweep->add_flag("--with-bcrb", with_bcrb, "attach BCRB columns per grid point");

  auto* bcrb_cmd = app.add_subcommand("bcrb", "BCRB curves over CSNR");
  add_common(bcrb_cmd, bcrb_o);
  std::string range;
  bcrb_cmd->add_option("--csnr", range, "start:stop:step in dB (inclusive)");

  auto* rank = app.add_subcommand("rank-check", "verify FIM rank deficiency on random instances");
  std::string dims = "1,2,3,2";
  std::size_t rank_trials = 100;
  std::uint64_t rank_seed = 1;
  rank->add_option("--dims", dims, "n_f,n_t,t_s,n_r");
  rank->add_option("--trials", rank_trials, "number of random instances");
  rank->add_option("--seed", rank_seed, "seed");

  auto* train = app.add_subcommand("train-prior", "train an MLP velocity field by flow matching");
  add_common(train, train_o);

  auto* plots = app.add_subcommand("emit-plots", "convert a sweep CSV into a long-format table");
  add_common(plots, plots_o);
  std::string plots_in;
  plots->add_option("--in", plots_in, "sweep CSV (default: <out>/sweep.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*simulate) return cmd_simulate(simulate_o);
    if (*sweep) return cmd_sweep(sweep_o, with_bcrb);
    if (*bcrb_cmd) return cmd_bcrb(bcrb_o, range);
    if (*rank) return cmd_rank_check(dims, rank_trials, rank_seed);
    if (*train) return cmd_train_prior(train_o);
    if (*plots) return cmd_emit_plots(plots_o, plots_in);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << app.help();
  return 2;
}
