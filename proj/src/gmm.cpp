// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dupfm/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dupfm/kernels.hpp"

namespace dupfm {

namespace {

void check_tau(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::domain_error("tau outside [0, 1]");
}

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

}  // namespace

GmmPrior::GmmPrior(std::vector<GmmComponent> components) : components_(std::move(components)) {
  if (components_.empty()) throw std::invalid_argument("GmmPrior: no components");
  dim_ = components_.front().dim();
  double wsum = 0.0;
  for (const auto& c : components_) {
    if (c.dim() != dim_ || static_cast<std::size_t>(c.basis.rows()) != dim_ ||
        c.basis.cols() != c.eigvals.size()) {
      throw std::invalid_argument("GmmPrior: inconsistent component shapes");
    }
    if (!(c.weight >= 0.0)) throw std::invalid_argument("GmmPrior: negative weight");
    if (c.rank() > 0) {
      if ((c.eigvals.array() <= 0.0).any()) {
        throw std::invalid_argument("GmmPrior: eigenvalues must be positive");
      }
      const RMatrix gram = c.basis.transpose() * c.basis;
      const double err = (gram - RMatrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
      if (err > 1e-8) throw std::invalid_argument("GmmPrior: basis is not orthonormal");
    }
    wsum += c.weight;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("GmmPrior: weights must sum to 1");
}

GmmPrior GmmPrior::standard_normal(std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  return GmmPrior({GmmComponent{1.0, RVector::Zero(n), RMatrix::Identity(n, n), RVector::Ones(n)}});
}

GmmPrior GmmPrior::gaussian(const RVector& mean, const RMatrix& cov, double rel_floor) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw std::invalid_argument("GmmPrior::gaussian: covariance shape");
  }
  const RMatrix sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<RMatrix> es(sym);
  const RVector& ev = es.eigenvalues();
  const double top = ev.size() > 0 ? ev.maxCoeff() : 0.0;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = ev.size() - 1; i >= 0; --i) {
    if (ev(i) > rel_floor * top && ev(i) > 0.0) keep.push_back(i);
  }
  RMatrix basis(mean.size(), static_cast<Eigen::Index>(keep.size()));
  RVector lam(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    basis.col(static_cast<Eigen::Index>(j)) = es.eigenvectors().col(keep[j]);
    lam(static_cast<Eigen::Index>(j)) = ev(keep[j]);
  }
  return GmmPrior({GmmComponent{1.0, mean, basis, lam}});
}

GmmPrior GmmPrior::subspace(const RVector& offset, const RMatrix& basis, const RVector& eigvals) {
  return GmmPrior({GmmComponent{1.0, offset, basis, eigvals}});
}

bool GmmPrior::full_support() const {
  return std::all_of(components_.begin(), components_.end(),
                     [&](const GmmComponent& c) { return c.rank() == dim_; });
}

RVector GmmPrior::sample(Rng& rng, std::size_t* component) const {
  std::size_t idx = 0;
  if (components_.size() > 1) {
    double u = rng.uniform();
    idx = components_.size() - 1;
    for (std::size_t i = 0; i < components_.size(); ++i) {
      if (u < components_[i].weight) {
        idx = i;
        break;
      }
      u -= components_[i].weight;
    }
  }
  if (component != nullptr) *component = idx;
  const auto& c = components_[idx];
  RVector z = rng.normal_vector(c.eigvals.size());
  return c.mean + c.basis * (c.eigvals.array().sqrt() * z.array()).matrix();
}

RVector GmmPrior::mean() const {
  RVector m = RVector::Zero(static_cast<Eigen::Index>(dim_));
  for (const auto& c : components_) m += c.weight * c.mean;
  return m;
}

RMatrix GmmPrior::second_moment() const {
  const auto n = static_cast<Eigen::Index>(dim_);
  RMatrix m = RMatrix::Zero(n, n);
  for (const auto& c : components_) {
    m += c.weight * (c.covariance() + c.mean * c.mean.transpose());
  }
  return m;
}

RMatrix GmmPrior::covariance() const {
  const RVector mu = mean();
  return second_moment() - mu * mu.transpose();
}

GmmPrior::Eval GmmPrior::eval_component(const GmmComponent& c, const RVector& x, double tau,
                                        bool need_vectors) const {
  const std::size_t d = dim_;
  const std::size_t r = c.rank();
  const double one_m = 1.0 - tau;
  const double cvar = tau * tau;
  if (r < d && cvar == 0.0) throw std::domain_error("score undefined on manifold");

  RVector diff(static_cast<Eigen::Index>(d));
  kernels::lincomb(1.0, x.data(), -one_m, c.mean.data(), diff.data(), d);

  RVector proj(static_cast<Eigen::Index>(r));
  RVector a(static_cast<Eigen::Index>(r));
  double quad = 0.0;
  double logdet = 0.0;
  if (r > 0) {
    kernels::gemv_t(c.basis.data(), d, r, diff.data(), proj.data());
    for (std::size_t i = 0; i < r; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      a(ii) = one_m * one_m * c.eigvals(ii) + cvar;
      quad += proj(ii) * proj(ii) / a(ii);
      logdet += std::log(a(ii));
    }
  }
  RVector resid;
  if (r < d) {
    resid = diff;
    if (r > 0) {
      RVector back(static_cast<Eigen::Index>(d));
      kernels::gemv_n(c.basis.data(), d, r, proj.data(), back.data());
      kernels::axpy(-1.0, back.data(), resid.data(), d);
    }
    quad += kernels::sqnorm(resid.data(), d) / cvar;
    logdet += static_cast<double>(d - r) * std::log(cvar);
  }
  Eval e;
  e.log_weighted = std::log(c.weight) -
                   0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + logdet + quad);
  if (need_vectors) {
    RVector scaled(static_cast<Eigen::Index>(r));
    e.proj_ratio.resize(static_cast<Eigen::Index>(r));
    for (std::size_t i = 0; i < r; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      scaled(ii) = proj(ii) / a(ii);
      e.proj_ratio(ii) = c.eigvals(ii) * scaled(ii);
    }
    e.precision_diff = RVector::Zero(static_cast<Eigen::Index>(d));
    if (r > 0) kernels::gemv_n(c.basis.data(), d, r, scaled.data(), e.precision_diff.data());
    if (r < d) kernels::axpy(1.0 / cvar, resid.data(), e.precision_diff.data(), d);
  }
  return e;
}

std::vector<double> GmmPrior::responsibilities(const RVector& x, double tau) const {
  check_tau(tau);
  std::vector<double> lw(components_.size());
  for (std::size_t i = 0; i < components_.size(); ++i) {
    lw[i] = eval_component(components_[i], x, tau, false).log_weighted;
  }
  const double lse = log_sum_exp(lw);
  for (auto& v : lw) v = std::exp(v - lse);
  return lw;
}

double GmmPrior::log_density(const RVector& x, double tau) const {
  check_tau(tau);
  if (static_cast<std::size_t>(x.size()) != dim_) throw std::invalid_argument("log_density: dim");
  std::vector<double> lw(components_.size());
  for (std::size_t i = 0; i < components_.size(); ++i) {
    lw[i] = eval_component(components_[i], x, tau, false).log_weighted;
  }
  return log_sum_exp(lw);
}

RVector GmmPrior::score(const RVector& x, double tau) const {
  check_tau(tau);
  if (static_cast<std::size_t>(x.size()) != dim_) throw std::invalid_argument("score: dim");
  if (components_.size() == 1) {
    return -eval_component(components_.front(), x, tau, true).precision_diff;
  }
  std::vector<Eval> evals;
  std::vector<double> lw;
  evals.reserve(components_.size());
  for (const auto& c : components_) {
    evals.push_back(eval_component(c, x, tau, true));
    lw.push_back(evals.back().log_weighted);
  }
  const double lse = log_sum_exp(lw);
  RVector s = RVector::Zero(x.size());
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const double resp = std::exp(lw[i] - lse);
    kernels::axpy(-resp, evals[i].precision_diff.data(), s.data(), dim_);
  }
  return s;
}

RVector GmmPrior::posterior_mean(const RVector& x, double tau) const {
  check_tau(tau);
  std::vector<Eval> evals;
  std::vector<double> lw;
  for (const auto& c : components_) {
    evals.push_back(eval_component(c, x, tau, true));
    lw.push_back(evals.back().log_weighted);
  }
  const double lse = log_sum_exp(lw);
  RVector m = RVector::Zero(x.size());
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const auto& c = components_[i];
    const double resp = std::exp(lw[i] - lse);
    RVector comp = c.mean;
    if (c.rank() > 0) {
      RVector back(x.size());
      kernels::gemv_n(c.basis.data(), dim_, c.rank(), evals[i].proj_ratio.data(), back.data());
      comp += (1.0 - tau) * back;
    }
    m += resp * comp;
  }
  return m;
}

GmmPrior GmmPrior::affine_map(const RMatrix& a, const RVector& offset) const {
  if (a.cols() != static_cast<Eigen::Index>(dim_) || a.rows() != offset.size()) {
    throw std::invalid_argument("affine_map: shape mismatch");
  }
  std::vector<GmmComponent> out;
  for (const auto& c : components_) {
    GmmComponent n;
    n.weight = c.weight;
    n.mean = a * c.mean + offset;
    if (c.rank() == 0) {
      n.basis = RMatrix(a.rows(), 0);
      n.eigvals = RVector(0);
    } else {
      const RMatrix factor = a * c.basis * c.eigvals.array().sqrt().matrix().asDiagonal();
      Eigen::BDCSVD<RMatrix> svd(factor, Eigen::ComputeThinU);
      const RVector& sv = svd.singularValues();
      const double top = sv.size() > 0 ? sv(0) : 0.0;
      Eigen::Index keep = 0;
      while (keep < sv.size() && sv(keep) > 1e-12 * top && sv(keep) > 0.0) ++keep;
      n.basis = svd.matrixU().leftCols(keep);
      n.eigvals = sv.head(keep).array().square();
    }
    out.push_back(std::move(n));
  }
  return GmmPrior(std::move(out));
}

GmmPrior product_prior(std::span<const GmmPrior> parts) {
  if (parts.empty()) throw std::invalid_argument("product_prior: no parts");
  std::vector<GmmComponent> acc = parts.front().components();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    std::vector<GmmComponent> next;
    for (const auto& a : acc) {
      for (const auto& b : parts[p].components()) {
        GmmComponent c;
        c.weight = a.weight * b.weight;
        const Eigen::Index da = a.mean.size(), db = b.mean.size();
        const Eigen::Index ra = a.basis.cols(), rb = b.basis.cols();
        c.mean.resize(da + db);
        c.mean << a.mean, b.mean;
        c.basis = RMatrix::Zero(da + db, ra + rb);
        c.basis.topLeftCorner(da, ra) = a.basis;
        c.basis.bottomRightCorner(db, rb) = b.basis;
        c.eigvals.resize(ra + rb);
        c.eigvals << a.eigvals, b.eigvals;
        next.push_back(std::move(c));
      }
    }
    acc = std::move(next);
  }
  // Renormalize against rounding in the weight products.
  double wsum = 0.0;
  for (const auto& c : acc) wsum += c.weight;
  for (auto& c : acc) c.weight /= wsum;
  return GmmPrior(std::move(acc));
}

}  // namespace dupfm
