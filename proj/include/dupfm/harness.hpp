// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dupfm/baselines.hpp"
#include "dupfm/config.hpp"
#include "dupfm/fim.hpp"
#include "dupfm/mlp.hpp"
#include "dupfm/pfm.hpp"

namespace dupfm {

inline constexpr double kNmseClampDb = -120.0;

struct GridPoint {
  std::size_t index = 0;
  double csnr_db = 0.0;
  double cbr = 1.0;
  double alpha = 0.0;  // orthogonal: pilot ratio; superimposed: pilot power fraction
  PilotKind scheme = PilotKind::kNone;
};

std::vector<GridPoint> grid_points(const ExperimentConfig& cfg);

// Source dimension m = round(n_f * t_s / cbr).
std::size_t source_dim(const SystemDims& dims, double cbr);
GmmPrior make_source_prior(const SourcePriorSpec& spec, std::size_t m, std::uint64_t seed);

// Everything held fixed across the trials of one grid point.
struct PointSetup {
  GridPoint point;
  SystemDims dims;  // noise_var calibrated to the CSNR target
  std::size_t m = 0;
  GmmPrior channel_prior = GmmPrior::standard_normal(1);
  ComplexGaussian channel_gauss;
  std::vector<GmmPrior> source_priors;
  std::vector<LinearEncoder> encoders;
  PilotScheme scheme;
  PriorSet priors;
  double beta_h = 0.3;
  double beta_s = 0.3;
  double channel_energy = 1.0;  // E|h|^2 per entry
};

PointSetup make_point(const ExperimentConfig& cfg, const GridPoint& point);

struct TrialTruth {
  ChannelTensor h;
  std::vector<SourceVector> s;
  TransmitTensor x;
  ReceiveTensor y;
};

TrialTruth draw_trial(const PointSetup& setup, std::uint64_t seed, double overflow_factor);

struct Estimates {
  ChannelTensor h;
  std::vector<SourceVector> s;
  TransmitTensor x;
};

struct TrialResult {
  std::string scheme;
  std::string method;
  double csnr_target_db = 0.0;
  double csnr_db = 0.0;
  double cbr = 0.0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::size_t trial = 0;
  double nmse_h_db = 0.0;
  double nmse_x_db = 0.0;
  double nmse_s_db = 0.0;  // NaN without sources
  double err_h = 0.0, ref_h = 0.0;
  double err_x = 0.0, ref_x = 0.0;
  double err_s = 0.0, ref_s = 0.0;
  double runtime_ms = 0.0;
  bool failed = false;
  std::string error;
};

// NMSEs in dB clamped at kNmseClampDb; X is the re-encoded estimate.
TrialResult compute_metrics(const TrialTruth& truth, const Estimates& est);

LikelihoodModel likelihood_model(const PointSetup& setup, const ReceiveTensor& y);
PfmConfig pfm_config(const ExperimentConfig& cfg, const PointSetup& setup, std::uint64_t seed);

// Separate pilot-based pipeline; nullopt for the pilot-free scheme.
std::optional<Estimates> baseline_estimate(const PointSetup& setup, const ReceiveTensor& y);
// Analytic LMMSE NMSE_H for the point (pilot schemes only).
std::optional<double> baseline_analytic_nmse_h(const PointSetup& setup);

// Grid search over cfg.pfm.tune_grid on independent tuning trials; sets setup.beta_h / beta_s.
void tune_beta(const ExperimentConfig& cfg, PointSetup& setup);

// PFM and baseline results of n_trials independent trials, in trial order.
std::vector<TrialResult> run_point(const ExperimentConfig& cfg, const PointSetup& setup,
                                   std::size_t n_trials, std::uint64_t stream);

struct PointBound {
  BcrbResult bound;
  double min_eig = 0.0;
  std::size_t n_samples = 0;
};

PointBound point_bcrb(const ExperimentConfig& cfg, const PointSetup& setup);

struct Aggregate {
  double ratio = 0.0;  // sum err / sum ref
  double se = 0.0;     // delta-method standard error of ratio (linear)
  double pertrial = 0.0;  // mean of per-trial linear NMSE
};

struct AggregateRow {
  GridPoint point;
  std::size_t m = 0;
  std::string method;
  std::size_t n_trials = 0;
  std::size_t n_failed = 0;
  double csnr_db = 0.0;  // mean realized
  double beta_h = 0.0;
  double beta_s = 0.0;
  Aggregate h, x, s;
  std::optional<PointBound> bcrb;
};

std::vector<AggregateRow> aggregate(const PointSetup& setup, const std::vector<TrialResult>& trials);

struct SweepResult {
  std::vector<AggregateRow> rows;
  std::vector<TrialResult> trials;
};

// Aborts with NumericalError when more than 10% of a point's trials fail.
SweepResult run_sweep(const ExperimentConfig& cfg, bool with_bcrb);

void write_sweep_csv(std::ostream& os, const std::vector<AggregateRow>& rows);
void write_trials_csv(std::ostream& os, const std::vector<TrialResult>& trials);

struct BcrbRow {
  double csnr_db;
  double bcrb_h_db;
  double bcrb_x_db;
  double bfim_min_eig;
  std::size_t n_samples;
};
std::vector<BcrbRow> bcrb_sweep(const ExperimentConfig& cfg, const std::vector<double>& csnr_db);
void write_bcrb_csv(std::ostream& os, const std::vector<BcrbRow>& rows);

struct TrainPriorResult {
  MlpVf net;
  double final_loss;
  std::vector<double> delta_checkpoints;
};
TrainPriorResult train_prior(const ExperimentConfig& cfg, std::uint64_t seed);
GmmPrior train_prior_target(const ExperimentConfig& cfg);

nlohmann::json run_manifest(const ExperimentConfig& cfg, const std::string& command,
                            const std::vector<std::string>& outputs);

// Long-format plot table from a sweep CSV.
void emit_plot_table(std::istream& sweep_csv, std::ostream& out);

std::string format_double(double v);

}  // namespace dupfm
