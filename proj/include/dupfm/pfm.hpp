// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "dupfm/encoder.hpp"
#include "dupfm/flow.hpp"
#include "dupfm/types.hpp"

namespace dupfm {

struct LikelihoodModel {
  SystemDims dims;
  ReceiveTensor y;
  std::vector<LinearEncoder> encoders;  // empty for a pilot-only block
  PilotScheme scheme;
  double noise_var = 1.0;

  void validate() const;
};

// Transmit block for the given sources; no power check (Tweedie points may exceed budget).
TransmitTensor build_transmit(const LikelihoodModel& lm, std::span<const SourceVector> s);

// -||Y - X(s) H||^2 / noise_var - N_y log(pi noise_var): the exact CN log density.
double log_likelihood(const LikelihoodModel& lm, const ChannelTensor& h,
                      std::span<const SourceVector> s);
// Real-embedding gradients of log_likelihood.
RVector likelihood_score_h(const LikelihoodModel& lm, const ChannelTensor& h,
                           std::span<const SourceVector> s);
RVector likelihood_score_s(const LikelihoodModel& lm, const ChannelTensor& h,
                           std::span<const SourceVector> s, std::size_t k);

struct PriorSet {
  std::shared_ptr<const VelocityField> channel;
  std::vector<std::shared_ptr<const VelocityField>> sources;
};

struct PfmConfig {
  double delta_tau = 0.02;
  double beta_h = 1.0;
  std::vector<double> beta_s{1.0};  // one per user; a single entry is broadcast
  std::uint64_t seed = 0;
  // Independent chains averaged into the point estimate (1 = single posterior sample).
  std::size_t n_average = 1;
  // Scale beta by noise_var / (mean likelihood-Hessian diagonal). false = raw beta.
  bool normalize_beta = true;
  // E|h|^2 per channel entry, used by the normalization.
  double channel_energy = 1.0;

  std::size_t n_steps() const;
  void validate(std::size_t n_users) const;
  double beta_for(std::size_t k) const;
};

// Multipliers applied to beta for each variable.
struct GuidanceScales {
  double h = 1.0;
  std::vector<double> s;
};
GuidanceScales guidance_scales(const LikelihoodModel& lm, const PfmConfig& cfg);

struct FlowState {
  RVector h_tau;
  std::vector<RVector> s_tau;
  double tau = 1.0;
  std::size_t step = 0;  // tau = 1 - step * delta_tau
};

// One parallel Euler step: Tweedie estimates, likelihood scores at the Tweedie
// points, then every variable updated from the same pre-step quantities. At tau = 1 the
// guidance term is zero.
FlowState pfm_step(const FlowState& state, const LikelihoodModel& lm, const PriorSet& priors,
                   const PfmConfig& cfg);

struct TraceRow {
  std::size_t step;
  double tau;
  double residual_norm;
  double nmse_h_vs_truth;  // NaN without ground truth
  double nmse_x_vs_truth;
};

struct GroundTruth {
  ChannelTensor h;
  TransmitTensor x;
};

struct PfmResult {
  ChannelTensor h;
  std::vector<SourceVector> s;
  std::vector<TraceRow> trace;
  std::size_t nfe_per_variable = 0;
};

PfmResult pfm_decode(const LikelihoodModel& lm, const PriorSet& priors, const PfmConfig& cfg,
                     const std::optional<GroundTruth>& truth = std::nullopt);

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace);

}  // namespace dupfm
