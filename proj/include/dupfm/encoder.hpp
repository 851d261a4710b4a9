// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dupfm/gmm.hpp"
#include "dupfm/types.hpp"

namespace dupfm {

using SourceVector = RVector;

// Pairs consecutive real entries as (Re, Im); odd lengths are zero-padded.
CVector complexify(const SourceVector& s);
SourceVector realify(const CVector& c, std::size_t m);
// E[c c^H] of c = complexify(s) given E[s s^T].
CMatrix complexified_second_moment(const RMatrix& second_moment);

// Codeword vec(X_k) = scale * G * complexify(s), reshaped column-major to n_f x t_data.
class LinearEncoder {
 public:
  LinearEncoder(CMatrix g, std::size_t m, std::size_t n_f, std::size_t t_data, double scale,
                double power_p, double overflow_factor = 1.5);

  // Scale chosen so E||G c||^2 = n_f * t_data * power_p exactly under the source prior.
  static LinearEncoder calibrated(CMatrix g, std::size_t m, std::size_t n_f, std::size_t t_data,
                                  double power_p, const GmmPrior& source_prior,
                                  double overflow_factor = 1.5);
  // Random orthonormal columns when ceil(m/2) <= n_f * t_data; otherwise a lossy PCA map onto
  // the top n_f * t_data directions of the source second moment.
  static LinearEncoder random(const GmmPrior& source_prior, std::size_t n_f, std::size_t t_data,
                              double power_p, std::uint64_t seed, double overflow_factor = 1.5);

  std::size_t m() const { return m_; }
  std::size_t n_f() const { return n_f_; }
  std::size_t t_data() const { return t_data_; }
  std::size_t n_codeword() const { return n_f_ * t_data_; }
  const CMatrix& g() const { return g_; }
  double scale() const { return scale_; }
  double power_p() const { return power_p_; }
  double overflow_factor() const { return overflow_factor_; }
  double budget() const { return static_cast<double>(n_codeword()) * power_p_; }
  bool lossless() const;

  // Real-linear map s -> [Re vec(X); Im vec(X)], shape 2N x m.
  RMatrix real_map() const;
  // Least-squares inverse of encode (exact when lossless).
  SourceVector decode_pinv(const CMatrix& codeword) const;

 private:
  CMatrix g_;
  std::size_t m_;
  std::size_t n_f_;
  std::size_t t_data_;
  double scale_;
  double power_p_;
  double overflow_factor_;
};

// Throws std::runtime_error("power overflow ...") above overflow_factor * budget.
CMatrix encode(const LinearEncoder& enc, const SourceVector& s);
// Complex N x m Jacobian dvec(X)/ds; column 2j = scale G_j, column 2j+1 = i scale G_j.
CMatrix encoder_jacobian(const LinearEncoder& enc, const SourceVector& s);

void save_encoder(const std::filesystem::path& path, const LinearEncoder& enc);
LinearEncoder load_encoder(const std::filesystem::path& path);

enum class PilotKind { kNone, kOrthogonal, kSuperimposed, kPilotOnly };

PilotKind parse_pilot_kind(const std::string& s);
std::string to_string(PilotKind k);

struct PilotScheme {
  PilotKind kind = PilotKind::kNone;
  double alpha = 0.0;
  double rho = 0.5;  // superimposed pilot power fraction
  std::size_t t_s = 0;
  CTensor3 pilots;  // n_f x t_pilot x n_t

  std::size_t t_pilot() const { return pilots.dim(1); }
  std::size_t t_data() const;
  bool has_users() const { return kind != PilotKind::kPilotOnly; }
  // Pilot part of the block on the full n_f x t_s x n_t grid (scaled by sqrt(rho) for SP).
  CTensor3 pilot_grid(std::size_t n_t) const;
  // Factor applied to data symbols inside the block.
  double data_gain() const;
};

// DFT columns times sqrt(P) with a seeded unit phase per (f, t). pilot_only uses the full block.
PilotScheme make_pilot_scheme(PilotKind kind, double alpha, double rho, const SystemDims& dims,
                              std::uint64_t seed);

TransmitTensor assemble_block(std::span<const CMatrix> codewords, const PilotScheme& scheme,
                              const SystemDims& dims, double overflow_factor = 1.5);

}  // namespace dupfm
