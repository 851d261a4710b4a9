// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dupfm/harness.hpp"

using namespace dupfm;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.dims.n_f = 2;
  c.dims.n_t = 2;
  c.dims.t_s = 4;
  c.dims.n_r = 3;
  c.sweep.csnr_db = {10.0};
  c.sweep.cbr = {1.0};
  c.sweep.alpha = {0.5};
  c.pilots.schemes = {PilotKind::kOrthogonal};
  c.pfm.delta_tau = 0.05;
  c.n_trials = 3;
  c.calibration_blocks = 20;
  return c;
}

CTensor3 zeros_like(const CTensor3& t) {
  const auto& d = t.dims();
  return CTensor3(d[0], d[1], d[2]);
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_SUITE("harness_cli") {
  TEST_CASE("metrics clamp exact recovery and score a zero estimate at 0 dB") {
    const ExperimentConfig cfg = tiny_config();
    const PointSetup setup = make_point(cfg, grid_points(cfg).front());
    const TrialTruth t = draw_trial(setup, 5, 1e9);
    const TrialResult same = compute_metrics(t, {t.h, t.s, t.x});
    CHECK(same.nmse_h_db == kNmseClampDb);
    CHECK(same.nmse_x_db == kNmseClampDb);
    CHECK(same.nmse_s_db == kNmseClampDb);

    Estimates zero{{zeros_like(t.h.h)}, {}, {zeros_like(t.x.x)}};
    for (const auto& s : t.s) zero.s.push_back(RVector::Zero(s.size()));
    const TrialResult z = compute_metrics(t, zero);
    CHECK(z.nmse_h_db == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(z.nmse_x_db == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(z.nmse_s_db == doctest::Approx(0.0).epsilon(1e-12));

    TrialTruth blank = t;
    blank.h.h = zeros_like(t.h.h);
    CHECK_THROWS_AS(compute_metrics(blank, {t.h, t.s, t.x}), std::invalid_argument);
    Estimates bad = zero;
    bad.s.pop_back();
    CHECK_THROWS_AS(compute_metrics(t, bad), std::invalid_argument);
  }

  TEST_CASE("bandwidth ratio arithmetic") {
    SystemDims d;
    d.n_f = 74;
    d.t_s = 14;
    const double cbr = 1036.0 / 196608.0;
    CHECK(1.0 / cbr == doctest::Approx(189.77).epsilon(1e-4));
    CHECK(source_dim(d, cbr) == 196608);
    SystemDims small;
    CHECK(source_dim(small, 1.0) == 24);
    CHECK(source_dim(small, 0.25) == 96);
    CHECK_THROWS_AS(source_dim(small, 0.0), ConfigError);
  }

  TEST_CASE("grid expansion") {
    ExperimentConfig c;
    c.sweep.csnr_db = {0.0, 10.0};
    c.sweep.cbr = {0.5, 1.0};
    c.sweep.alpha = {1.0 / 3.0, 0.5};
    c.pilots.pilot_power_fraction = 0.2;
    const auto g = grid_points(c);
    // Per (csnr, cbr): none, two orthogonal alphas, superimposed.
    REQUIRE(g.size() == 2 * 2 * 4);
    CHECK(g[0].scheme == PilotKind::kNone);
    CHECK(g[0].alpha == 0.0);
    CHECK(g[2].alpha == 0.5);
    CHECK(g[3].scheme == PilotKind::kSuperimposed);
    CHECK(g[3].alpha == 0.2);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i].index == i);
  }

  TEST_CASE("source prior geometry") {
    SourcePriorSpec spec;
    spec.intrinsic_fraction = 0.25;
    spec.offset = 2.0;
    const GmmPrior p = make_source_prior(spec, 24, 3);
    const auto& c = p.components().front();
    CHECK(c.rank() == 6);
    CHECK(c.mean.norm() == doctest::Approx(2.0 * std::sqrt(6.0)));
    CHECK((c.basis.transpose() * c.basis - RMatrix::Identity(6, 6)).norm() < 1e-12);
    spec.intrinsic_fraction = 0.0;
    CHECK(make_source_prior(spec, 24, 3).components().front().rank() == 1);
  }

  TEST_CASE("noise calibration meets the CSNR target") {
    ExperimentConfig cfg = tiny_config();
    cfg.calibration_blocks = 1000;
    for (double target : {0.0, 10.0}) {
      cfg.sweep.csnr_db = {target};
      const PointSetup setup = make_point(cfg, grid_points(cfg).front());
      double sig = 0.0, noise = 0.0;
      for (std::uint64_t b = 0; b < 1000; ++b) {
        const TrialTruth t = draw_trial(setup, split_seed(77, b), 1e9);
        sig += (t.y.y - t.y.w).squared_norm();
        noise += t.y.w.squared_norm();
      }
      CHECK(std::abs(to_db(sig / noise) - target) < 0.2);
    }
  }

  TEST_CASE("single-point single-trial sweep") {
    ExperimentConfig cfg = tiny_config();
    cfg.n_trials = 1;
    cfg.run_baselines = false;
    const SweepResult r = run_sweep(cfg, false);
    REQUIRE(r.rows.size() == 1);
    CHECK(r.rows[0].method == "pfm");
    CHECK(r.rows[0].n_trials == 1);
    CHECK(r.trials.size() == 1);
    std::ostringstream os;
    write_sweep_csv(os, r.rows);
    CHECK(count_lines(os.str()) == 2);
  }

  TEST_CASE("sweeps are reproducible across worker counts") {
    ExperimentConfig cfg = tiny_config();
    cfg.pilots.schemes = {PilotKind::kNone, PilotKind::kOrthogonal};
    auto csv = [](const SweepResult& r) {
      std::ostringstream a, b;
      write_sweep_csv(a, r.rows);
      write_trials_csv(b, r.trials);
      return a.str() + b.str();
    };
    cfg.workers = 1;
    const std::string one = csv(run_sweep(cfg, false));
    cfg.workers = 4;
    const std::string four = csv(run_sweep(cfg, false));
    CHECK(one == four);
    CHECK(one == csv(run_sweep(cfg, false)));
    cfg.seed = 2;
    CHECK(one != csv(run_sweep(cfg, false)));
  }

  TEST_CASE("baseline rows accompany pilot schemes") {
    ExperimentConfig cfg = tiny_config();
    cfg.pilots.schemes = {PilotKind::kNone, PilotKind::kOrthogonal, PilotKind::kSuperimposed};
    const SweepResult r = run_sweep(cfg, false);
    std::size_t lmmse = 0;
    for (const auto& row : r.rows) lmmse += row.method == "lmmse" ? 1 : 0;
    CHECK(lmmse == 2);
    CHECK(r.rows.size() == 5);
    for (const auto& t : r.trials) CHECK_FALSE(t.failed);
  }

  TEST_CASE("widespread trial failures abort the sweep") {
    ExperimentConfig cfg = tiny_config();
    cfg.encoder.overflow_factor = 1.0;
    cfg.n_trials = 10;
    CHECK_THROWS_AS(run_sweep(cfg, false), NumericalError);
  }

  TEST_CASE("analytic LMMSE error is available for pilot schemes only") {
    ExperimentConfig cfg = tiny_config();
    cfg.pilots.schemes = {PilotKind::kNone, PilotKind::kOrthogonal};
    const auto g = grid_points(cfg);
    CHECK_FALSE(baseline_analytic_nmse_h(make_point(cfg, g[0])).has_value());
    const auto v = baseline_analytic_nmse_h(make_point(cfg, g[1]));
    REQUIRE(v.has_value());
    CHECK(*v > 0.0);
    CHECK(*v < 1.0);
  }

  TEST_CASE("config parsing is strict") {
    const ExperimentConfig c = tiny_config();
    nlohmann::json j = config_to_json(c);
    CHECK(config_hash(config_from_json(j)) == config_hash(c));
    ExperimentConfig other = c;
    other.seed = 99;
    CHECK(config_hash(other) != config_hash(c));

    nlohmann::json unknown = j;
    unknown["pfm"]["bogus"] = 1;
    CHECK_THROWS_AS(config_from_json(unknown), ConfigError);
    nlohmann::json wrong = j;
    wrong["n_trials"] = "many";
    CHECK_THROWS_AS(config_from_json(wrong), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/dupfm.json"), ConfigError);
  }

  TEST_CASE("run manifest") {
    const ExperimentConfig c = tiny_config();
    const nlohmann::json m = run_manifest(c, "sweep", {"sweep.csv"});
    CHECK(m.at("schema_version") == 1);
    CHECK(m.at("config_hash") == config_hash(c));
    CHECK(m.at("seeds").at("master") == c.seed);
    CHECK(m.at("outputs").size() == 1);
  }

  TEST_CASE("plot table from a sweep CSV") {
    ExperimentConfig cfg = tiny_config();
    cfg.n_trials = 2;
    const SweepResult r = run_sweep(cfg, false);
    std::stringstream sweep;
    write_sweep_csv(sweep, r.rows);
    std::ostringstream out;
    emit_plot_table(sweep, out);
    const std::string s = out.str();
    CHECK(s.rfind("csnr_db,cbr,alpha,scheme,method,metric,value,se\n", 0) == 0);
    // pfm and lmmse rows, each with NMSE_H, NMSE_X and NMSE_S.
    CHECK(count_lines(s) == 1 + 2 * 3);
    std::istringstream empty;
    CHECK_THROWS_AS(emit_plot_table(empty, out), ConfigError);
  }

  TEST_CASE("prior training reports three checkpoints") {
    ExperimentConfig cfg;
    cfg.train_prior.steps = 300;
    cfg.train_prior.n_data = 512;
    const TrainPriorResult r = train_prior(cfg, 4);
    CHECK(r.delta_checkpoints.size() == 3);
    CHECK(std::isfinite(r.final_loss));
    cfg.train_prior.steps = 2;
    CHECK_THROWS_AS(train_prior(cfg, 4), ConfigError);
  }
}
