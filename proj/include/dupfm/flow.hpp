// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <memory>

#include "dupfm/gmm.hpp"

namespace dupfm {

struct FlowSample {
  RVector x_tau;
  double tau = 0.0;
};

// (1 - tau) x0 + tau x1 with x1 ~ N(0, I) drawn from seed.
FlowSample ot_path_sample(const RVector& x0, double tau, std::uint64_t seed);
FlowSample ot_path_sample(const RVector& x0, double tau, Rng& rng);

// V = (x + tau * score) / (tau - 1). Rejects tau = 1.
RVector vf_from_score(const FlowSample& fs, const RVector& score);
// score = ((tau - 1) V - x) / tau. Rejects tau = 0.
RVector score_from_vf(const FlowSample& fs, const RVector& vf);
// x_hat(0 | tau) = x - tau V.
RVector tweedie_mmse(const FlowSample& fs, const RVector& vf);

class VelocityField {
 public:
  virtual ~VelocityField() = default;
  virtual std::size_t dim() const = 0;
  virtual RVector velocity(const RVector& x, double tau) const = 0;
};

// Exact prior VF from the closed-form GMM score. At tau = 1 the limit x - E[x0] is used.
class GmmVelocityField final : public VelocityField {
 public:
  explicit GmmVelocityField(GmmPrior prior) : prior_(std::move(prior)) {}
  std::size_t dim() const override { return prior_.dim(); }
  RVector velocity(const RVector& x, double tau) const override;
  const GmmPrior& prior() const { return prior_; }

 private:
  GmmPrior prior_;
};

// Counts evaluations of a wrapped field (NFE accounting).
class CountingVelocityField final : public VelocityField {
 public:
  explicit CountingVelocityField(std::shared_ptr<const VelocityField> inner)
      : inner_(std::move(inner)) {}
  std::size_t dim() const override { return inner_->dim(); }
  RVector velocity(const RVector& x, double tau) const override {
    count_.fetch_add(1, std::memory_order_relaxed);
    return inner_->velocity(x, tau);
  }
  std::size_t count() const { return count_.load(); }

 private:
  std::shared_ptr<const VelocityField> inner_;
  mutable std::atomic<std::size_t> count_{0};
};

// eps * E || score_from_vf(field) - exact smoothed score || at tau = eps.
double score_error(const VelocityField& field, const GmmPrior& prior, double eps,
                   std::size_t n_samples, std::uint64_t seed);

}  // namespace dupfm
