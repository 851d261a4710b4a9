// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dupfm/flow.hpp"

#include <stdexcept>

namespace dupfm {

FlowSample ot_path_sample(const RVector& x0, double tau, Rng& rng) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::domain_error("ot_path_sample: tau outside [0, 1]");
  const RVector x1 = rng.normal_vector(x0.size());
  if (tau == 0.0) return {x0, 0.0};
  if (tau == 1.0) return {x1, 1.0};
  return {(1.0 - tau) * x0 + tau * x1, tau};
}

FlowSample ot_path_sample(const RVector& x0, double tau, std::uint64_t seed) {
  Rng rng(seed);
  return ot_path_sample(x0, tau, rng);
}

RVector vf_from_score(const FlowSample& fs, const RVector& score) {
  if (fs.tau == 1.0) throw std::domain_error("vf_from_score: tau = 1");
  return (fs.x_tau + fs.tau * score) / (fs.tau - 1.0);
}

RVector score_from_vf(const FlowSample& fs, const RVector& vf) {
  if (fs.tau == 0.0) throw std::domain_error("score_from_vf: tau = 0");
  return ((fs.tau - 1.0) * vf - fs.x_tau) / fs.tau;
}

RVector tweedie_mmse(const FlowSample& fs, const RVector& vf) { return fs.x_tau - fs.tau * vf; }

RVector GmmVelocityField::velocity(const RVector& x, double tau) const {
  if (tau == 1.0) return x - prior_.mean();
  return vf_from_score({x, tau}, prior_.score(x, tau));
}

double score_error(const VelocityField& field, const GmmPrior& prior, double eps,
                   std::size_t n_samples, std::uint64_t seed) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::domain_error("score_error: eps outside (0, 1)");
  if (n_samples == 0) throw std::invalid_argument("score_error: no samples");
  Rng rng(seed);
  double acc = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const RVector x0 = prior.sample(rng);
    const FlowSample fs = ot_path_sample(x0, eps, rng);
    const RVector s_net = score_from_vf(fs, field.velocity(fs.x_tau, eps));
    acc += (s_net - prior.score(fs.x_tau, eps)).norm();
  }
  return eps * acc / static_cast<double>(n_samples);
}

}  // namespace dupfm
