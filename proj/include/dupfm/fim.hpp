// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dupfm/flow.hpp"
#include "dupfm/types.hpp"

namespace dupfm {

// Parameter ordering for all FIM objects: phi = [x; h] with
// x = [vec(X_1); ...; vec(X_nf)] (vec(X_f) is t_s x n_t column-major) and
// h = [vec(H_1); ...; vec(H_nf)] (vec(H_f) is n_t x n_r column-major).
// Real coordinates are [Re phi; Im phi].
CVector fim_vector_x(const TransmitTensor& x);
CVector fim_vector_h(const ChannelTensor& h);
// Map tensor column-major index -> FIM block index.
std::vector<std::size_t> fim_perm_x(const SystemDims& dims);
std::vector<std::size_t> fim_perm_h(const SystemDims& dims);
// Reorder a real prior-FIM in tensor coordinates [Re t; Im t] into FIM coordinates.
RMatrix permute_real_block(const RMatrix& m, const std::vector<std::size_t>& perm);

struct FimMatrix {
  CMatrix m;
  std::size_t n_x = 0;
  std::size_t n_h = 0;
};

// Complex FIM of vec(Y) assembled from Kronecker products and direct sums over subcarriers.
FimMatrix assemble_fim(const TransmitTensor& x, const ChannelTensor& h, double noise_var);

struct NullBasis {
  std::vector<CVector> vectors;  // index f * n_t^2 + kappa * n_t + ell
  bool degenerate = false;       // a zero column of X_f or zero row of H_f was involved
};

NullBasis null_vectors(const TransmitTensor& x, const ChannelTensor& h);

struct RankCheck {
  std::size_t rank = 0;
  std::size_t bound = 0;
  std::size_t dim = 0;
  bool pass = false;
  double max_null_residual = 0.0;  // max ||F w|| / (||F|| ||w||) over the null basis
};

RankCheck verify_rank_deficiency(const TransmitTensor& x, const ChannelTensor& h, double noise_var);

using ScoreFn = std::function<RVector(const RVector&)>;
using Sampler = std::function<RVector(Rng&)>;

// E[g g^T] of the real score g at the eps-smoothed point x(eps) = (1 - eps) x0 + eps z.
RMatrix prior_fim_real(const ScoreFn& score_at_eps, const Sampler& sampler, double eps,
                       std::size_t n_samples, std::uint64_t seed);
// Complex prior FIM E[s s^H] with s the conjugate-Wirtinger score, for a prior stated on
// [Re v; Im v]; prior_fim_real = real_embed(2 F) when the prior is circular.
CMatrix prior_fim(const ScoreFn& score_at_eps, const Sampler& sampler, double eps,
                  std::size_t n_samples, std::uint64_t seed);
// Closed form S_eps^{-1} for a single-component prior.
RMatrix gaussian_prior_fim_real(const GmmPrior& prior, double eps);

struct BfimOptions {
  bool exclude_x = false;      // known X: keep only the h block
  bool allow_singular = false;  // return instead of throwing on a singular BFIM
};

struct BayesianFim {
  RMatrix j;  // real coordinates
  std::size_t n_x = 0;  // complex dims (0 when excluded)
  std::size_t n_h = 0;
  double min_eig = 0.0;
  double max_eig = 0.0;
  double eps = 0.0;
  std::size_t n_samples = 0;
};

// embed(E[F]) + blockdiag(prior_x, prior_h). Prior FIMs are real, in FIM coordinates
// [Re x; Im x] and [Re h; Im h]; pass an empty matrix for no prior information.
BayesianFim bfim(std::span<const TransmitTensor> xs, std::span<const ChannelTensor> hs,
                 double noise_var, const RMatrix& prior_x, const RMatrix& prior_h, double eps,
                 const BfimOptions& opts = {});

struct BcrbResult {
  double bcrb_h = 0.0;
  double bcrb_x = 0.0;  // NaN when x is excluded
  double bfim_condition = 0.0;
  double eps = 0.0;
};

BcrbResult bcrb(const BayesianFim& b, double mean_h_energy, double mean_x_energy);

struct SmoothingRow {
  double eps = 0.0;
  double projected_error = 0.0;     // mean ||P_T s_eps(x(eps)) - P_T s_0(x)||
  double constant_per_sample = 0.0;  // mean of error / (eps ||x1 - x0||)
  double constant_averaged = 0.0;    // mean error / eps
};

struct SmoothingTable {
  std::vector<SmoothingRow> rows;
  double slope = 0.0;  // log-log fit over eps > 0
  double delta = 0.0;  // score_error of the supplied VF at the smallest positive eps
};

// field == nullptr uses the exact smoothed score (delta = 0).
SmoothingTable smoothing_diagnostics(const GmmPrior& prior, const VelocityField* field,
                                      std::span<const double> eps_list, std::size_t n_samples,
                                      std::uint64_t seed);

}  // namespace dupfm
