// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>

#include "dupfm/tensor.hpp"

namespace dupfm {

struct SystemDims {
  std::size_t n_f = 4;
  std::size_t n_t = 2;
  std::size_t n_r = 8;
  std::size_t t_s = 6;
  double power_p = 1.0;
  double noise_var = 1.0;

  void validate() const;

  std::array<std::size_t, 3> h_shape() const { return {n_f, n_t, n_r}; }
  std::array<std::size_t, 3> x_shape() const { return {n_f, t_s, n_t}; }
  std::array<std::size_t, 3> y_shape() const { return {n_f, t_s, n_r}; }
  std::size_t h_size() const { return n_f * n_t * n_r; }
  std::size_t x_size() const { return n_f * t_s * n_t; }
  // FIM side length and its rank bound.
  std::size_t fim_side() const { return n_f * n_t * (t_s + n_r); }
  std::size_t rank_bound() const { return fim_side() - n_f * n_t * n_t; }
};

// H[f, k, n]: gain from transmitter k to receive antenna n on subcarrier f.
struct ChannelTensor {
  CTensor3 h;
};

// X[f, t, k]: symbol of transmitter k at OFDM symbol t on subcarrier f.
struct TransmitTensor {
  CTensor3 x;

  // Per-transmitter Frobenius-squared norm.
  double user_power(std::size_t k) const;
  // Throws std::runtime_error when any user exceeds factor * n_f * t_s * power_p.
  void check_power(double power_p, double factor) const;
};

// Y = X H + W per subcarrier; the noise realization is retained for CSNR.
struct ReceiveTensor {
  CTensor3 y;
  CTensor3 w;
};

}  // namespace dupfm
