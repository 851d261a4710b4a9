// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dupfm/channel.hpp"
#include "dupfm/encoder.hpp"
#include "dupfm/types.hpp"

namespace dupfm {

// Per-user source prior: mixture of affine-subspace Gaussians on R^m. Component c has
// intrinsic dimension r = max(1, round(intrinsic_fraction * m)), a seeded orthonormal basis,
// unit eigenvalues and an offset of norm offset * sqrt(r) in a seeded direction.
struct SourcePriorSpec {
  double intrinsic_fraction = 0.25;
  double offset = 1.0;
  std::size_t n_components = 1;
  std::uint64_t seed = 12;
};

struct EncoderSpec {
  std::uint64_t seed = 13;
  double overflow_factor = 4.0;
};

struct PilotSpec {
  std::vector<PilotKind> schemes{PilotKind::kNone, PilotKind::kOrthogonal, PilotKind::kSuperimposed};
  double pilot_power_fraction = 0.5;
  std::uint64_t seed = 14;
};

struct PfmSpec {
  double delta_tau = 0.02;
  double beta_h = 0.3;
  double beta_s = 0.3;
  bool normalize_beta = true;
  std::size_t n_average = 1;
  bool tune_beta = false;
  std::vector<double> tune_grid{0.1, 0.3, 1.0, 3.0};
  std::size_t tune_trials = 8;
  std::string channel_vf_checkpoint;
  std::string source_vf_checkpoint;
};

struct SweepSpec {
  std::vector<double> csnr_db{0.0, 10.0};
  std::vector<double> cbr{1.0};
  std::vector<double> alpha{0.5};
};

struct BcrbSpec {
  double eps = 0.05;
  std::size_t n_fim_samples = 64;
  std::size_t n_prior_samples = 20000;  // only used for mixture priors
};

struct TrainPriorSpec {
  std::string target = "gaussian2d";  // gaussian2d | source
  std::vector<std::size_t> hidden{16, 16};
  std::size_t steps = 3000;
  double lr = 5e-3;
  std::size_t batch = 256;
  std::size_t n_data = 4096;
  double eps = 0.1;
};

struct ExperimentConfig {
  SystemDims dims;
  ChannelPriorSpec channel_prior{0.7, 0.5, 0.0, 0, 11};
  SourcePriorSpec source_prior;
  EncoderSpec encoder;
  PilotSpec pilots;
  PfmSpec pfm;
  SweepSpec sweep;
  BcrbSpec bcrb;
  TrainPriorSpec train_prior;
  std::size_t n_trials = 20;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::size_t calibration_blocks = 200;
  bool run_baselines = true;
  std::string output = "results";

  void validate() const;
};

// Unknown keys and type errors raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);
// FNV-1a of the canonical JSON dump, hex.
std::string config_hash(const ExperimentConfig& c);

}  // namespace dupfm
