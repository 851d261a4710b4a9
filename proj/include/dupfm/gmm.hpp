// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dupfm/common.hpp"
#include "dupfm/tensor.hpp"

namespace dupfm {

// Gaussian component N(mean, U diag(eigvals) U^T). U has orthonormal columns;
// r = U.cols() < d means the component lives on an affine subspace.
struct GmmComponent {
  double weight = 1.0;
  RVector mean;
  RMatrix basis;
  RVector eigvals;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t rank() const { return static_cast<std::size_t>(basis.cols()); }
  RMatrix covariance() const { return basis * eigvals.asDiagonal() * basis.transpose(); }
};

// Gaussian mixture prior on R^d. All closed forms refer to the OT path
// x(tau) = (1 - tau) x0 + tau x1, x1 ~ N(0, I).
class GmmPrior {
 public:
  explicit GmmPrior(std::vector<GmmComponent> components);

  static GmmPrior standard_normal(std::size_t d);
  // Eigenvalues below rel_floor * max are dropped, giving subspace support.
  static GmmPrior gaussian(const RVector& mean, const RMatrix& cov, double rel_floor = 1e-12);
  static GmmPrior subspace(const RVector& offset, const RMatrix& basis, const RVector& eigvals);

  std::size_t dim() const { return dim_; }
  const std::vector<GmmComponent>& components() const { return components_; }
  bool full_support() const;

  RVector sample(Rng& rng, std::size_t* component = nullptr) const;
  RVector mean() const;
  RMatrix second_moment() const;
  RMatrix covariance() const;

  // Log density of the tau-smoothed marginal. tau = 0 requires full support.
  double log_density(const RVector& x, double tau) const;
  // Score of the tau-smoothed marginal.
  RVector score(const RVector& x, double tau) const;
  // Analytic E[x0 | x(tau) = x].
  RVector posterior_mean(const RVector& x, double tau) const;
  // Component responsibilities at (x, tau).
  std::vector<double> responsibilities(const RVector& x, double tau) const;

  // Law of a x + offset.
  GmmPrior affine_map(const RMatrix& a, const RVector& offset) const;

 private:
  struct Eval {
    double log_weighted;  // log w + log N
    RVector precision_diff;  // S^-1 (x - (1 - tau) mu)
    RVector proj_ratio;  // lambda * proj / a, in basis coordinates
  };
  Eval eval_component(const GmmComponent& c, const RVector& x, double tau, bool need_vectors) const;

  std::size_t dim_ = 0;
  std::vector<GmmComponent> components_;
};

// Independent concatenation of priors: law of [x_1; x_2; ...].
GmmPrior product_prior(std::span<const GmmPrior> parts);

}  // namespace dupfm
