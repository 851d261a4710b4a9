// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dupfm/channel.hpp"
#include "dupfm/types.hpp"

namespace dupfm {

// Linear operator A with vec(Y_p) = A vec(H) for pilots P (n_f x t_p x n_t),
// both vectors in tensor column-major order.
CMatrix pilot_observation_operator(const CTensor3& pilots, std::size_t n_r);

// Known-covariance LMMSE: H_hat = mu + C A^H (A C A^H + noise_var I)^{-1} (y - A mu).
class LmmseEstimator {
 public:
  LmmseEstimator(ComplexGaussian channel_prior, const CTensor3& pilots, std::size_t n_r,
                 double noise_var);

  const CMatrix& channel_covariance() const { return prior_.cov; }
  const CVector& channel_mean() const { return prior_.mean; }
  const CMatrix& pilot_operator() const { return a_; }
  double noise_var() const { return noise_var_; }
  std::array<std::size_t, 3> h_shape() const { return h_shape_; }

  ChannelTensor estimate(const CTensor3& y_pilot) const;
  // tr(C - C A^H (A C A^H + noise_var I)^{-1} A C).
  double mmse_trace() const { return mmse_trace_; }
  // mmse_trace / E||H||^2.
  double analytic_nmse() const;

 private:
  ComplexGaussian prior_;
  CMatrix a_;
  double noise_var_;
  std::array<std::size_t, 3> h_shape_;
  CMatrix gain_;
  double mmse_trace_ = 0.0;
};

ChannelTensor lmmse_channel_estimate(const CTensor3& y_pilot, const LmmseEstimator& est);

// Per-subcarrier least squares X_f = Y_f H_f^H (H_f H_f^H)^{-1}; y_data is n_f x t x n_r.
CTensor3 ls_detect(const CTensor3& y_data, const ChannelTensor& h_hat);

}  // namespace dupfm
