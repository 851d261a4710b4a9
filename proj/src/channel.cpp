// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dupfm/channel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dupfm {

void SystemDims::validate() const {
  if (n_f < 1 || n_t < 1 || n_r < 1 || t_s < 1) {
    throw std::invalid_argument("SystemDims: counts must be >= 1");
  }
  if (!(power_p > 0.0)) throw std::invalid_argument("SystemDims: power_p must be > 0");
  if (!(noise_var > 0.0)) throw std::invalid_argument("SystemDims: noise_var must be > 0");
}

double TransmitTensor::user_power(std::size_t k) const {
  double acc = 0.0;
  for (std::size_t t = 0; t < x.dim(1); ++t) {
    for (std::size_t f = 0; f < x.dim(0); ++f) acc += std::norm(x(f, t, k));
  }
  return acc;
}

void TransmitTensor::check_power(double power_p, double factor) const {
  const double budget = static_cast<double>(x.dim(0) * x.dim(1)) * power_p;
  for (std::size_t k = 0; k < x.dim(2); ++k) {
    if (user_power(k) > factor * budget) {
      throw std::runtime_error("power overflow: transmitter " + std::to_string(k) + " uses " +
                               std::to_string(user_power(k)) + " > " +
                               std::to_string(factor * budget));
    }
  }
}

namespace {

CMatrix exp_corr(std::size_t n, double rho) {
  CMatrix r(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::pow(rho, std::abs(static_cast<double>(i) - static_cast<double>(j)));
    }
  }
  return r;
}

}  // namespace

ComplexGaussian channel_moments(const ChannelPriorSpec& spec, const SystemDims& dims) {
  if (!(spec.freq_corr >= 0.0 && spec.freq_corr < 1.0) ||
      !(spec.rx_corr >= 0.0 && spec.rx_corr < 1.0)) {
    throw std::invalid_argument("channel prior: correlations must lie in [0, 1)");
  }
  if (!(spec.rician_k >= 0.0)) throw std::invalid_argument("channel prior: rician_k < 0");
  const std::size_t n = dims.h_size();
  const double k = spec.rician_k;
  const double scatter = 1.0 / (k + 1.0);
  // Index f + n_f (k + n_t n) => C = R_rx (x) I_nt (x) R_f.
  CMatrix cov = scatter * kron(exp_corr(dims.n_r, spec.rx_corr),
                               kron(CMatrix::Identity(static_cast<Eigen::Index>(dims.n_t),
                                                      static_cast<Eigen::Index>(dims.n_t)),
                                    exp_corr(dims.n_f, spec.freq_corr)));
  if (spec.rank > 0 && spec.rank < n) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(cov);
    const double total = es.eigenvalues().sum();
    const auto r = static_cast<Eigen::Index>(spec.rank);
    const CMatrix u = es.eigenvectors().rightCols(r);
    RVector lam = es.eigenvalues().tail(r);
    lam *= total / lam.sum();
    cov = u * lam.cast<cdouble>().asDiagonal() * u.adjoint();
  }
  CVector mean = CVector::Zero(static_cast<Eigen::Index>(n));
  if (k > 0.0) {
    Rng rng(spec.seed);
    const double amp = std::sqrt(k / (k + 1.0));
    for (std::size_t tx = 0; tx < dims.n_t; ++tx) {
      const double theta = (rng.uniform() - 0.5) * std::numbers::pi;
      const double delay = 0.25 * rng.uniform();
      for (std::size_t rx = 0; rx < dims.n_r; ++rx) {
        for (std::size_t f = 0; f < dims.n_f; ++f) {
          const double phase = std::numbers::pi * static_cast<double>(rx) * std::sin(theta) -
                               2.0 * std::numbers::pi * static_cast<double>(f) * delay;
          mean(static_cast<Eigen::Index>(f + dims.n_f * (tx + dims.n_t * rx))) =
              amp * std::polar(1.0, phase);
        }
      }
    }
  }
  return {mean, cov};
}

GmmPrior circular_gaussian_prior(const ComplexGaussian& g) {
  const CMatrix herm = 0.5 * (g.cov + g.cov.adjoint());
  return GmmPrior::gaussian(to_real(g.mean), 0.5 * real_embed(herm), 1e-10);
}

GmmPrior make_channel_prior(const ChannelPriorSpec& spec, const SystemDims& dims) {
  return circular_gaussian_prior(channel_moments(spec, dims));
}

ComplexGaussian complex_moments(const GmmPrior& prior) {
  if (prior.dim() % 2 != 0) throw std::invalid_argument("complex_moments: odd real dim");
  const auto n = static_cast<Eigen::Index>(prior.dim() / 2);
  const RMatrix s = prior.covariance();
  CMatrix c(n, n);
  c.real() = s.topLeftCorner(n, n) + s.bottomRightCorner(n, n);
  c.imag() = s.bottomLeftCorner(n, n) - s.topRightCorner(n, n);
  return {from_real(prior.mean()), c};
}

ChannelTensor generate_channel(const GmmPrior& prior, const SystemDims& dims, std::uint64_t seed) {
  if (prior.dim() != 2 * dims.h_size()) {
    throw std::invalid_argument("generate_channel: prior dim " + std::to_string(prior.dim()) +
                                " != 2 * n_f * n_t * n_r = " + std::to_string(2 * dims.h_size()));
  }
  Rng rng(seed);
  return {tensor_from_real(prior.sample(rng), dims.h_shape())};
}

ReceiveTensor transmit(const TransmitTensor& x, const ChannelTensor& h, double noise_var,
                       std::uint64_t seed) {
  const auto& xd = x.x.dims();
  const auto& hd = h.h.dims();
  if (xd[0] != hd[0] || xd[2] != hd[1]) throw std::invalid_argument("transmit: shape mismatch");
  if (!(noise_var >= 0.0)) throw std::invalid_argument("transmit: negative noise_var");
  const std::size_t nf = xd[0], ts = xd[1], nt = xd[2], nr = hd[2];
  ReceiveTensor out{CTensor3(nf, ts, nr), CTensor3(nf, ts, nr)};
  Rng rng(seed);
  for (std::size_t n = 0; n < nr; ++n) {
    for (std::size_t t = 0; t < ts; ++t) {
      for (std::size_t f = 0; f < nf; ++f) {
        cdouble acc = 0.0;
        for (std::size_t k = 0; k < nt; ++k) acc += x.x(f, t, k) * h.h(f, k, n);
        const cdouble w = noise_var > 0.0 ? rng.complex_normal(noise_var) : cdouble(0.0, 0.0);
        out.w(f, t, n) = w;
        out.y(f, t, n) = acc + w;
      }
    }
  }
  return out;
}

double csnr(const ReceiveTensor& y) {
  const double noise = y.w.squared_norm();
  if (noise == 0.0) throw std::domain_error("CSNR undefined: zero noise realization");
  return to_db((y.y - y.w).squared_norm() / noise);
}

}  // namespace dupfm
