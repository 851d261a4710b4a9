// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dupfm/baselines.hpp"

#include <stdexcept>

#include "dupfm/common.hpp"

namespace dupfm {

CMatrix pilot_observation_operator(const CTensor3& pilots, std::size_t n_r) {
  const std::size_t nf = pilots.dim(0), tp = pilots.dim(1), nt = pilots.dim(2);
  CMatrix a = CMatrix::Zero(static_cast<Eigen::Index>(nf * tp * n_r),
                            static_cast<Eigen::Index>(nf * nt * n_r));
  for (std::size_t n = 0; n < n_r; ++n) {
    for (std::size_t t = 0; t < tp; ++t) {
      for (std::size_t f = 0; f < nf; ++f) {
        for (std::size_t k = 0; k < nt; ++k) {
          a(static_cast<Eigen::Index>(f + nf * (t + tp * n)),
            static_cast<Eigen::Index>(f + nf * (k + nt * n))) = pilots(f, t, k);
        }
      }
    }
  }
  return a;
}

LmmseEstimator::LmmseEstimator(ComplexGaussian channel_prior, const CTensor3& pilots,
                               std::size_t n_r, double noise_var)
    : prior_(std::move(channel_prior)),
      a_(pilot_observation_operator(pilots, n_r)),
      noise_var_(noise_var),
      h_shape_{pilots.dim(0), pilots.dim(2), n_r} {
  if (!(noise_var >= 0.0)) throw std::invalid_argument("LmmseEstimator: noise_var < 0");
  if (prior_.cov.rows() != a_.cols()) throw std::invalid_argument("LmmseEstimator: covariance size");
  if (pilots.dim(1) == 0) throw std::invalid_argument("LmmseEstimator: no pilot symbols");
  for (std::size_t f = 0; f < pilots.dim(0); ++f) {
    Eigen::ColPivHouseholderQR<CMatrix> qr(pilots.slice(f));
    if (static_cast<std::size_t>(qr.rank()) < pilots.dim(2)) {
      throw std::invalid_argument("LmmseEstimator: pilot matrix rank-deficient on a subcarrier");
    }
  }
  const CMatrix ca = prior_.cov * a_.adjoint();
  CMatrix innov = a_ * ca;
  innov.diagonal().array() += noise_var_;
  Eigen::LDLT<CMatrix> ldlt(innov);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().real().minCoeff() > 0.0)) {
    throw NumericalError("LMMSE: singular innovation matrix");
  }
  gain_ = ldlt.solve(ca.adjoint()).adjoint();
  mmse_trace_ = (prior_.cov - gain_ * ca.adjoint()).trace().real();
}

double LmmseEstimator::analytic_nmse() const {
  return mmse_trace_ / (prior_.cov.trace().real() + prior_.mean.squaredNorm());
}

ChannelTensor LmmseEstimator::estimate(const CTensor3& y_pilot) const {
  const CVector y = vectorize(y_pilot);
  if (y.size() != a_.rows()) throw std::invalid_argument("LMMSE: pilot observation size");
  const CVector h = prior_.mean + gain_ * (y - a_ * prior_.mean);
  return {devectorize(h, h_shape_)};
}

ChannelTensor lmmse_channel_estimate(const CTensor3& y_pilot, const LmmseEstimator& est) {
  return est.estimate(y_pilot);
}

CTensor3 ls_detect(const CTensor3& y_data, const ChannelTensor& h_hat) {
  const std::size_t nf = y_data.dim(0), td = y_data.dim(1), nr = y_data.dim(2);
  const std::size_t nt = h_hat.h.dim(1);
  if (h_hat.h.dim(0) != nf || h_hat.h.dim(2) != nr) throw std::invalid_argument("ls_detect: shapes");
  CTensor3 out(nf, td, nt);
  for (std::size_t f = 0; f < nf; ++f) {
    const CMatrix hf = h_hat.h.slice(f);  // n_t x n_r
    const CMatrix gram = hf * hf.adjoint();
    Eigen::LDLT<CMatrix> ldlt(gram);
    Eigen::JacobiSVD<CMatrix> svd(hf);
    const RVector& sv = svd.singularValues();
    if (sv.size() == 0 || static_cast<std::size_t>(sv.size()) < nt || !(sv(sv.size() - 1) > 1e-12 * sv(0))) {
      throw NumericalError("ls_detect: rank-deficient channel estimate on subcarrier " + std::to_string(f));
    }
    // X_f^T solves gram^T X_f^T = (Y_f H_f^H)^T, i.e. X_f = Y_f H_f^H gram^{-1}.
    const CMatrix rhs = y_data.slice(f) * hf.adjoint();
    const CMatrix xf = ldlt.solve(rhs.adjoint()).adjoint();
    out.set_slice(f, xf);
  }
  return out;
}

}  // namespace dupfm
