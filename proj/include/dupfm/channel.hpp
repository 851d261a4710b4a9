// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "dupfm/gmm.hpp"
#include "dupfm/types.hpp"

namespace dupfm {

// Kronecker-correlated channel: C = R_rx (x) I_nt (x) R_f with exponential correlation,
// optional Rician line-of-sight mean, optional eigen-truncation to `rank` complex directions.
// Normalized so that E||H||^2 = n_f * n_t * n_r.
struct ChannelPriorSpec {
  double freq_corr = 0.7;
  double rx_corr = 0.5;
  double rician_k = 0.0;
  std::size_t rank = 0;  // 0 keeps all directions
  std::uint64_t seed = 0;
};

struct ComplexGaussian {
  CVector mean;
  CMatrix cov;
};

ComplexGaussian channel_moments(const ChannelPriorSpec& spec, const SystemDims& dims);
// Real-embedding prior of CN(mean, cov): N([Re m; Im m], real_embed(cov) / 2).
GmmPrior circular_gaussian_prior(const ComplexGaussian& g);
GmmPrior make_channel_prior(const ChannelPriorSpec& spec, const SystemDims& dims);

// Complex mean and covariance of the vector encoded by a real-embedding prior.
ComplexGaussian complex_moments(const GmmPrior& prior);

ChannelTensor generate_channel(const GmmPrior& prior, const SystemDims& dims, std::uint64_t seed);

// Y_f = X_f H_f + W_f, W i.i.d. CN(0, noise_var). noise_var = 0 is allowed.
ReceiveTensor transmit(const TransmitTensor& x, const ChannelTensor& h, double noise_var,
                       std::uint64_t seed);

// 10 log10(||Y - W||^2 / ||W||^2).
double csnr(const ReceiveTensor& y);

}  // namespace dupfm
