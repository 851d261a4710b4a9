// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dupfm/fim.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dupfm {

namespace {

SystemDims dims_of(const TransmitTensor& x, const ChannelTensor& h) {
  const auto& xd = x.x.dims();
  const auto& hd = h.h.dims();
  if (xd[0] != hd[0] || xd[2] != hd[1]) throw std::invalid_argument("FIM: X/H shape mismatch");
  SystemDims d;
  d.n_f = xd[0];
  d.t_s = xd[1];
  d.n_t = xd[2];
  d.n_r = hd[2];
  return d;
}

}  // namespace

std::vector<std::size_t> fim_perm_x(const SystemDims& d) {
  std::vector<std::size_t> p(d.x_size());
  for (std::size_t k = 0; k < d.n_t; ++k) {
    for (std::size_t t = 0; t < d.t_s; ++t) {
      for (std::size_t f = 0; f < d.n_f; ++f) {
        p[f + d.n_f * (t + d.t_s * k)] = f * d.t_s * d.n_t + t + d.t_s * k;
      }
    }
  }
  return p;
}

std::vector<std::size_t> fim_perm_h(const SystemDims& d) {
  std::vector<std::size_t> p(d.h_size());
  for (std::size_t n = 0; n < d.n_r; ++n) {
    for (std::size_t k = 0; k < d.n_t; ++k) {
      for (std::size_t f = 0; f < d.n_f; ++f) {
        p[f + d.n_f * (k + d.n_t * n)] = f * d.n_t * d.n_r + k + d.n_t * n;
      }
    }
  }
  return p;
}

CVector fim_vector_x(const TransmitTensor& x) {
  SystemDims d;
  d.n_f = x.x.dim(0);
  d.t_s = x.x.dim(1);
  d.n_t = x.x.dim(2);
  const auto p = fim_perm_x(d);
  CVector v(static_cast<Eigen::Index>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) v(static_cast<Eigen::Index>(p[i])) = x.x.data()[i];
  return v;
}

CVector fim_vector_h(const ChannelTensor& h) {
  SystemDims d;
  d.n_f = h.h.dim(0);
  d.n_t = h.h.dim(1);
  d.n_r = h.h.dim(2);
  const auto p = fim_perm_h(d);
  CVector v(static_cast<Eigen::Index>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) v(static_cast<Eigen::Index>(p[i])) = h.h.data()[i];
  return v;
}

RMatrix permute_real_block(const RMatrix& m, const std::vector<std::size_t>& perm) {
  const auto n = static_cast<Eigen::Index>(perm.size());
  if (m.rows() != 2 * n || m.cols() != 2 * n) throw std::invalid_argument("permute_real_block: shape");
  std::vector<Eigen::Index> q(static_cast<std::size_t>(2 * n));
  for (Eigen::Index i = 0; i < n; ++i) {
    q[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]);
    q[static_cast<std::size_t>(n + i)] = n + static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]);
  }
  RMatrix out(2 * n, 2 * n);
  for (Eigen::Index j = 0; j < 2 * n; ++j) {
    for (Eigen::Index i = 0; i < 2 * n; ++i) {
      out(q[static_cast<std::size_t>(i)], q[static_cast<std::size_t>(j)]) = m(i, j);
    }
  }
  return out;
}

FimMatrix assemble_fim(const TransmitTensor& x, const ChannelTensor& h, double noise_var) {
  const SystemDims d = dims_of(x, h);
  if (!(noise_var > 0.0)) throw std::invalid_argument("assemble_fim: noise_var must be > 0");
  const auto t = static_cast<Eigen::Index>(d.t_s);
  const auto nr = static_cast<Eigen::Index>(d.n_r);
  std::vector<CMatrix> xx, xh, hx, hh;
  for (std::size_t f = 0; f < d.n_f; ++f) {
    const CMatrix xf = x.x.slice(f);  // T x n_t
    const CMatrix hf = h.h.slice(f);  // n_t x n_r
    xx.push_back(kron(hf.conjugate() * hf.transpose(), CMatrix::Identity(t, t)));
    xh.push_back(kron(hf.conjugate(), xf));
    hx.push_back(kron(hf.transpose(), xf.adjoint()));
    hh.push_back(kron(CMatrix::Identity(nr, nr), xf.adjoint() * xf));
  }
  FimMatrix out;
  out.n_x = d.x_size();
  out.n_h = d.h_size();
  const auto nx = static_cast<Eigen::Index>(out.n_x);
  const auto nh = static_cast<Eigen::Index>(out.n_h);
  out.m.resize(nx + nh, nx + nh);
  out.m.topLeftCorner(nx, nx) = direct_sum(xx);
  out.m.topRightCorner(nx, nh) = direct_sum(xh);
  out.m.bottomLeftCorner(nh, nx) = direct_sum(hx);
  out.m.bottomRightCorner(nh, nh) = direct_sum(hh);
  out.m *= 2.0 / noise_var;
  return out;
}

NullBasis null_vectors(const TransmitTensor& x, const ChannelTensor& h) {
  const SystemDims d = dims_of(x, h);
  const std::size_t nx = d.x_size();
  const std::size_t bx = d.t_s * d.n_t;
  const std::size_t bh = d.n_t * d.n_r;
  NullBasis out;
  for (std::size_t f = 0; f < d.n_f; ++f) {
    for (std::size_t kappa = 0; kappa < d.n_t; ++kappa) {
      for (std::size_t ell = 0; ell < d.n_t; ++ell) {
        CVector w = CVector::Zero(static_cast<Eigen::Index>(nx + d.h_size()));
        double col = 0.0, row = 0.0;
        // A_f = X_f[:, kappa] e_ell^T.
        for (std::size_t t = 0; t < d.t_s; ++t) {
          w(static_cast<Eigen::Index>(f * bx + t + d.t_s * ell)) = x.x(f, t, kappa);
          col += std::norm(x.x(f, t, kappa));
        }
        // B_f = -e_kappa H_f[ell, :].
        for (std::size_t n = 0; n < d.n_r; ++n) {
          w(static_cast<Eigen::Index>(nx + f * bh + kappa + d.n_t * n)) = -h.h(f, ell, n);
          row += std::norm(h.h(f, ell, n));
        }
        if (col == 0.0 || row == 0.0) out.degenerate = true;
        out.vectors.push_back(std::move(w));
      }
    }
  }
  return out;
}

RankCheck verify_rank_deficiency(const TransmitTensor& x, const ChannelTensor& h, double noise_var) {
  const SystemDims d = dims_of(x, h);
  const FimMatrix f = assemble_fim(x, h, noise_var);
  Eigen::SelfAdjointEigenSolver<CMatrix> es(f.m, Eigen::EigenvaluesOnly);
  const RVector sv = es.eigenvalues().cwiseAbs();
  const double smax = sv.maxCoeff();
  RankCheck rc;
  rc.dim = d.fim_side();
  rc.bound = d.rank_bound();
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > 1e-8 * smax) ++rc.rank;
  }
  const double fnorm = f.m.operatorNorm();
  for (const auto& w : null_vectors(x, h).vectors) {
    const double wn = w.norm();
    if (wn == 0.0) continue;
    rc.max_null_residual = std::max(rc.max_null_residual, (f.m * w).norm() / (fnorm * wn));
  }
  rc.pass = rc.rank <= rc.bound && rc.max_null_residual <= 1e-10;
  return rc;
}

RMatrix prior_fim_real(const ScoreFn& score_at_eps, const Sampler& sampler, double eps,
                       std::size_t n_samples, std::uint64_t seed) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::domain_error("prior_fim: eps outside (0, 1)");
  if (n_samples == 0) throw std::invalid_argument("prior_fim: no samples");
  Rng rng(seed);
  RMatrix acc;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const RVector x0 = sampler(rng);
    const RVector z = rng.normal_vector(x0.size());
    const RVector g = score_at_eps((1.0 - eps) * x0 + eps * z);
    if (!g.allFinite()) throw NumericalError("prior_fim: non-finite score at sample " + std::to_string(i));
    if (i == 0) acc = RMatrix::Zero(g.size(), g.size());
    acc.selfadjointView<Eigen::Lower>().rankUpdate(g);
  }
  RMatrix out = acc.selfadjointView<Eigen::Lower>();
  return out / static_cast<double>(n_samples);
}

CMatrix prior_fim(const ScoreFn& score_at_eps, const Sampler& sampler, double eps,
                  std::size_t n_samples, std::uint64_t seed) {
  const RMatrix r = prior_fim_real(score_at_eps, sampler, eps, n_samples, seed);
  const Eigen::Index n = r.rows() / 2;
  // E[s s^H] with s = (g_re + i g_im) / 2.
  CMatrix c(n, n);
  c.real() = 0.25 * (r.topLeftCorner(n, n) + r.bottomRightCorner(n, n));
  c.imag() = 0.25 * (r.bottomLeftCorner(n, n) - r.topRightCorner(n, n));
  return c;
}

RMatrix gaussian_prior_fim_real(const GmmPrior& prior, double eps) {
  if (prior.components().size() != 1) {
    throw std::invalid_argument("gaussian_prior_fim_real: single-component prior required");
  }
  if (!(eps >= 0.0 && eps < 1.0)) throw std::domain_error("gaussian_prior_fim_real: eps");
  const auto& c = prior.components().front();
  const auto d = static_cast<Eigen::Index>(c.dim());
  const RVector a = (1.0 - eps) * (1.0 - eps) * c.eigvals.array() + eps * eps;
  RMatrix out = c.basis * a.cwiseInverse().asDiagonal() * c.basis.transpose();
  if (c.rank() < c.dim()) {
    if (eps == 0.0) throw std::domain_error("score undefined on manifold");
    out += (RMatrix::Identity(d, d) - c.basis * c.basis.transpose()) / (eps * eps);
  }
  return out;
}

BayesianFim bfim(std::span<const TransmitTensor> xs, std::span<const ChannelTensor> hs,
                 double noise_var, const RMatrix& prior_x, const RMatrix& prior_h, double eps,
                 const BfimOptions& opts) {
  if (xs.empty() || xs.size() != hs.size()) throw std::invalid_argument("bfim: ensemble");
  CMatrix ef;
  std::size_t nx = 0, nh = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    FimMatrix f = assemble_fim(xs[i], hs[i], noise_var);
    if (i == 0) {
      ef = CMatrix::Zero(f.m.rows(), f.m.cols());
      nx = f.n_x;
      nh = f.n_h;
    }
    ef += f.m;
  }
  ef /= static_cast<double>(xs.size());
  const RMatrix full = real_embed(ef);
  const auto n = static_cast<Eigen::Index>(nx + nh);
  const auto ex = static_cast<Eigen::Index>(nx);
  const auto eh = static_cast<Eigen::Index>(nh);

  BayesianFim b;
  b.eps = eps;
  b.n_samples = xs.size();
  b.n_h = nh;
  auto add_prior = [](RMatrix& j, const RMatrix& p, const std::vector<Eigen::Index>& idx) {
    if (p.size() == 0) return;
    if (p.rows() != static_cast<Eigen::Index>(idx.size()) || p.cols() != p.rows()) {
      throw std::invalid_argument("bfim: prior FIM shape");
    }
    for (std::size_t c = 0; c < idx.size(); ++c) {
      for (std::size_t r = 0; r < idx.size(); ++r) {
        j(idx[r], idx[c]) += p(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      }
    }
  };
  std::vector<Eigen::Index> hidx;
  for (Eigen::Index i = 0; i < eh; ++i) hidx.push_back(ex + i);
  for (Eigen::Index i = 0; i < eh; ++i) hidx.push_back(n + ex + i);
  if (opts.exclude_x) {
    b.j.resize(2 * eh, 2 * eh);
    for (std::size_t c = 0; c < hidx.size(); ++c) {
      for (std::size_t r = 0; r < hidx.size(); ++r) {
        b.j(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = full(hidx[r], hidx[c]);
      }
    }
    std::vector<Eigen::Index> local(hidx.size());
    for (std::size_t i = 0; i < local.size(); ++i) local[i] = static_cast<Eigen::Index>(i);
    add_prior(b.j, prior_h, local);
  } else {
    b.n_x = nx;
    b.j = full;
    std::vector<Eigen::Index> xidx;
    for (Eigen::Index i = 0; i < ex; ++i) xidx.push_back(i);
    for (Eigen::Index i = 0; i < ex; ++i) xidx.push_back(n + i);
    add_prior(b.j, prior_x, xidx);
    add_prior(b.j, prior_h, hidx);
  }
  b.j = 0.5 * (b.j + b.j.transpose());
  Eigen::SelfAdjointEigenSolver<RMatrix> es(b.j);
  b.min_eig = es.eigenvalues()(0);
  b.max_eig = es.eigenvalues()(es.eigenvalues().size() - 1);
  if (!opts.allow_singular && !(b.min_eig > 1e-12 * b.max_eig)) {
    std::ostringstream os;
    os << "singular BFIM: min eigenvalue " << b.min_eig << " vs max " << b.max_eig
       << "; null direction concentrated on coordinates";
    const RVector v = es.eigenvectors().col(0);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (std::abs(v(i)) > 0.2) os << ' ' << i;
    }
    throw NumericalError(os.str());
  }
  return b;
}

BcrbResult bcrb(const BayesianFim& b, double mean_h_energy, double mean_x_energy) {
  if (!(mean_h_energy > 0.0)) throw std::invalid_argument("bcrb: mean_h_energy must be > 0");
  Eigen::SelfAdjointEigenSolver<RMatrix> es(b.j);
  const RVector& ev = es.eigenvalues();
  const double lo = ev(0), hi = ev(ev.size() - 1);
  BcrbResult r;
  r.eps = b.eps;
  r.bfim_condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(r.bfim_condition <= 1e12)) {
    throw NumericalError("ill-conditioned BFIM (condition " + std::to_string(r.bfim_condition) + ")");
  }
  const RMatrix inv = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  const auto nx = static_cast<Eigen::Index>(b.n_x);
  const auto nh = static_cast<Eigen::Index>(b.n_h);
  const Eigen::Index n = nx + nh;
  double th = 0.0, tx = 0.0;
  if (b.n_x == 0) {
    th = inv.trace();
    r.bcrb_x = std::numeric_limits<double>::quiet_NaN();
  } else {
    for (Eigen::Index i = 0; i < nh; ++i) th += inv(nx + i, nx + i) + inv(n + nx + i, n + nx + i);
    for (Eigen::Index i = 0; i < nx; ++i) tx += inv(i, i) + inv(n + i, n + i);
    if (!(mean_x_energy > 0.0)) throw std::invalid_argument("bcrb: mean_x_energy must be > 0");
    r.bcrb_x = tx / mean_x_energy;
  }
  r.bcrb_h = th / mean_h_energy;
  return r;
}

SmoothingTable smoothing_diagnostics(const GmmPrior& prior, const VelocityField* field,
                                      std::span<const double> eps_list, std::size_t n_samples,
                                      std::uint64_t seed) {
  if (prior.components().size() != 1) {
    throw std::invalid_argument("tangent space unavailable: single-component prior with explicit support required");
  }
  const auto& c = prior.components().front();
  if (c.rank() == 0) throw std::invalid_argument("tangent space unavailable: zero-rank support");
  if (n_samples == 0) throw std::invalid_argument("smoothing_diagnostics: no samples");
  const RMatrix pt = c.basis * c.basis.transpose();
  // Tangential score on the support: -U diag(1/lambda) U^T (x - mu).
  const RMatrix prec0 = c.basis * c.eigvals.cwiseInverse().asDiagonal() * c.basis.transpose();

  SmoothingTable table;
  std::vector<double> lx, ly;
  double eps_min = 1.0;
  for (double eps : eps_list) {
    if (!(eps >= 0.0 && eps < 1.0)) throw std::domain_error("smoothing_diagnostics: eps outside [0, 1)");
    SmoothingRow row;
    row.eps = eps;
    if (eps > 0.0) {
      Rng rng(seed);
      double err = 0.0, per = 0.0;
      for (std::size_t i = 0; i < n_samples; ++i) {
        const RVector x0 = prior.sample(rng);
        const RVector x1 = rng.normal_vector(x0.size());
        const RVector xe = (1.0 - eps) * x0 + eps * x1;
        const RVector se = field == nullptr ? prior.score(xe, eps)
                                            : score_from_vf({xe, eps}, field->velocity(xe, eps));
        const double e = (pt * se + prec0 * (x0 - c.mean)).norm();
        err += e;
        const double spread = (x1 - x0).norm();
        if (spread > 0.0) per += e / (eps * spread);
      }
      row.projected_error = err / static_cast<double>(n_samples);
      row.constant_averaged = row.projected_error / eps;
      row.constant_per_sample = per / static_cast<double>(n_samples);
      if (row.projected_error > 0.0) {
        lx.push_back(std::log(eps));
        ly.push_back(std::log(row.projected_error));
      }
      eps_min = std::min(eps_min, eps);
    }
    table.rows.push_back(row);
  }
  if (lx.size() >= 2) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      mx += lx[i];
      my += ly[i];
    }
    mx /= static_cast<double>(lx.size());
    my /= static_cast<double>(lx.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxy += (lx[i] - mx) * (ly[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    table.slope = sxy / sxx;
  }
  if (field != nullptr && eps_min < 1.0) {
    table.delta = score_error(*field, prior, eps_min, n_samples, split_seed(seed, 1));
  }
  return table;
}

}  // namespace dupfm
