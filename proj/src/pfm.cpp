// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dupfm/pfm.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "dupfm/kernels.hpp"

namespace dupfm {

void LikelihoodModel::validate() const {
  dims.validate();
  if (y.y.dims() != dims.y_shape()) throw std::invalid_argument("LikelihoodModel: Y shape");
  if (!(noise_var > 0.0)) throw std::invalid_argument("LikelihoodModel: noise_var must be > 0");
  if (scheme.t_s != dims.t_s) throw std::invalid_argument("LikelihoodModel: scheme t_s");
  if (scheme.has_users()) {
    if (encoders.size() != dims.n_t) throw std::invalid_argument("LikelihoodModel: need n_t encoders");
    for (const auto& e : encoders) {
      if (e.n_f() != dims.n_f || e.t_data() != scheme.t_data()) {
        throw std::invalid_argument("LikelihoodModel: encoder shape does not match scheme");
      }
    }
  } else if (!encoders.empty()) {
    throw std::invalid_argument("LikelihoodModel: pilot-only block has no encoders");
  }
}

namespace {

std::size_t data_offset(const PilotScheme& s) {
  return s.kind == PilotKind::kOrthogonal ? s.t_pilot() : 0;
}

void check_sources(const LikelihoodModel& lm, std::span<const SourceVector> s) {
  if (s.size() != lm.encoders.size()) throw std::invalid_argument("source count mismatch");
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (static_cast<std::size_t>(s[k].size()) != lm.encoders[k].m()) {
      throw std::invalid_argument("source length mismatch");
    }
  }
}

// R = Y - X H.
CTensor3 residual(const LikelihoodModel& lm, const TransmitTensor& x, const ChannelTensor& h) {
  const auto& d = lm.dims;
  CTensor3 r = lm.y.y;
  for (std::size_t n = 0; n < d.n_r; ++n) {
    for (std::size_t k = 0; k < d.n_t; ++k) {
      for (std::size_t t = 0; t < d.t_s; ++t) {
        for (std::size_t f = 0; f < d.n_f; ++f) r(f, t, n) -= x.x(f, t, k) * h.h(f, k, n);
      }
    }
  }
  return r;
}

bool finite(const RVector& v) { return v.allFinite(); }

}  // namespace

TransmitTensor build_transmit(const LikelihoodModel& lm, std::span<const SourceVector> s) {
  check_sources(lm, s);
  const auto& d = lm.dims;
  TransmitTensor x{lm.scheme.pilot_grid(d.n_t)};
  const std::size_t t0 = data_offset(lm.scheme);
  const double gain = lm.scheme.data_gain();
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto& e = lm.encoders[k];
    const CVector v = e.scale() * (e.g() * complexify(s[k]));
    for (std::size_t t = 0; t < e.t_data(); ++t) {
      for (std::size_t f = 0; f < d.n_f; ++f) {
        x.x(f, t0 + t, k) += gain * v(static_cast<Eigen::Index>(f + d.n_f * t));
      }
    }
  }
  return x;
}

double log_likelihood(const LikelihoodModel& lm, const ChannelTensor& h,
                      std::span<const SourceVector> s) {
  if (h.h.dims() != lm.dims.h_shape()) throw std::invalid_argument("log_likelihood: H shape");
  const CTensor3 r = residual(lm, build_transmit(lm, s), h);
  const double ny = static_cast<double>(r.size());
  return -r.squared_norm() / lm.noise_var - ny * std::log(std::numbers::pi * lm.noise_var);
}

RVector likelihood_score_h(const LikelihoodModel& lm, const ChannelTensor& h,
                           std::span<const SourceVector> s) {
  if (h.h.dims() != lm.dims.h_shape()) throw std::invalid_argument("likelihood_score_h: H shape");
  const auto& d = lm.dims;
  const TransmitTensor x = build_transmit(lm, s);
  const CTensor3 r = residual(lm, x, h);
  // Wirtinger score X_f^H R_f / sigma^2; real gradient is twice its (Re, Im).
  CTensor3 g(d.n_f, d.n_t, d.n_r);
  for (std::size_t n = 0; n < d.n_r; ++n) {
    for (std::size_t k = 0; k < d.n_t; ++k) {
      for (std::size_t f = 0; f < d.n_f; ++f) {
        cdouble acc = 0.0;
        for (std::size_t t = 0; t < d.t_s; ++t) acc += std::conj(x.x(f, t, k)) * r(f, t, n);
        g(f, k, n) = acc / lm.noise_var;
      }
    }
  }
  return 2.0 * tensor_to_real(g);
}

RVector likelihood_score_s(const LikelihoodModel& lm, const ChannelTensor& h,
                           std::span<const SourceVector> s, std::size_t k) {
  if (k >= lm.encoders.size()) throw std::out_of_range("likelihood_score_s: user index");
  const auto& d = lm.dims;
  const auto& e = lm.encoders[k];
  const TransmitTensor x = build_transmit(lm, s);
  const CTensor3 r = residual(lm, x, h);
  const std::size_t t0 = data_offset(lm.scheme);
  const double gain = lm.scheme.data_gain();
  // Wirtinger score w.r.t. user k's codeword: gain * (R_f H_f^H)[:, k] / sigma^2.
  CVector gx(static_cast<Eigen::Index>(e.n_codeword()));
  for (std::size_t t = 0; t < e.t_data(); ++t) {
    for (std::size_t f = 0; f < d.n_f; ++f) {
      cdouble acc = 0.0;
      for (std::size_t n = 0; n < d.n_r; ++n) acc += r(f, t0 + t, n) * std::conj(h.h(f, k, n));
      gx(static_cast<Eigen::Index>(f + d.n_f * t)) = gain * acc / lm.noise_var;
    }
  }
  // Pull back through the complexified encoder: d/ds_{2j} = 2 Re(c_j), d/ds_{2j+1} = 2 Im(c_j).
  const CVector c = e.scale() * (e.g().adjoint() * gx);
  return 2.0 * realify(c, e.m());
}

std::size_t PfmConfig::n_steps() const {
  if (!(delta_tau > 0.0 && delta_tau <= 1.0)) throw ConfigError("delta_tau outside (0, 1]");
  const double inv = 1.0 / delta_tau;
  const auto n = static_cast<std::size_t>(std::llround(inv));
  if (n == 0 || std::abs(inv - static_cast<double>(n)) > 1e-9 * inv) {
    throw ConfigError("1 / delta_tau must be a positive integer");
  }
  return n;
}

void PfmConfig::validate(std::size_t n_users) const {
  n_steps();
  if (!(beta_h >= 0.0)) throw ConfigError("beta_h must be >= 0");
  if (n_users > 0 && beta_s.size() != 1 && beta_s.size() != n_users) {
    throw ConfigError("beta_s needs 1 or n_t entries");
  }
  for (double b : beta_s) {
    if (!(b >= 0.0)) throw ConfigError("beta_s must be >= 0");
  }
  if (n_average == 0) throw ConfigError("n_average must be >= 1");
}

double PfmConfig::beta_for(std::size_t k) const {
  return beta_s.size() == 1 ? beta_s.front() : beta_s.at(k);
}

GuidanceScales guidance_scales(const LikelihoodModel& lm, const PfmConfig& cfg) {
  GuidanceScales g;
  g.s.assign(lm.encoders.size(), 1.0);
  if (!cfg.normalize_beta) return g;
  const auto& d = lm.dims;
  // Mean Hessian diagonal of -||R||^2 / sigma^2 per real coordinate.
  g.h = lm.noise_var / (2.0 * static_cast<double>(d.t_s) * d.power_p);
  const double gain2 = lm.scheme.data_gain() * lm.scheme.data_gain();
  for (std::size_t k = 0; k < lm.encoders.size(); ++k) {
    const auto& e = lm.encoders[k];
    const double per_col = e.scale() * e.scale() * e.g().squaredNorm() / static_cast<double>(e.g().cols());
    const double hess = 2.0 * gain2 * per_col * static_cast<double>(d.n_r) * cfg.channel_energy;
    g.s[k] = lm.noise_var / hess;
  }
  return g;
}

namespace {

FlowState step_impl(const FlowState& state, const LikelihoodModel& lm, const PriorSet& priors,
                    const PfmConfig& cfg, const GuidanceScales& scales, std::size_t n_steps,
                    std::vector<RVector>* tweedie_s, RVector* tweedie_h) {
  const double dt = cfg.delta_tau;
  const double tau = state.tau;
  const std::size_t n_users = state.s_tau.size();

  // Prior VFs and Tweedie estimates, all from the pre-step state.
  const RVector vh = priors.channel->velocity(state.h_tau, tau);
  RVector h_hat = state.h_tau - tau * vh;
  std::vector<RVector> vs(n_users);
  std::vector<SourceVector> s_hat(n_users);
  for (std::size_t k = 0; k < n_users; ++k) {
    vs[k] = priors.sources[k]->velocity(state.s_tau[k], tau);
    s_hat[k] = state.s_tau[k] - tau * vs[k];
  }

  FlowState next;
  next.step = state.step + 1;
  next.tau = 1.0 - static_cast<double>(next.step) / static_cast<double>(n_steps);
  const auto dh = static_cast<std::size_t>(state.h_tau.size());
  next.h_tau.resize(state.h_tau.size());
  kernels::lincomb(1.0, state.h_tau.data(), -dt, vh.data(), next.h_tau.data(), dh);
  next.s_tau.resize(n_users);
  for (std::size_t k = 0; k < n_users; ++k) {
    next.s_tau[k].resize(state.s_tau[k].size());
    kernels::lincomb(1.0, state.s_tau[k].data(), -dt, vs[k].data(), next.s_tau[k].data(),
                     static_cast<std::size_t>(vs[k].size()));
  }

  // Guidance at the Tweedie points. Zero at tau = 1.
  if (tau < 1.0) {
    const double coef = tau * dt / (1.0 - tau);
    const ChannelTensor hc{tensor_from_real(h_hat, lm.dims.h_shape())};
    const RVector gh = likelihood_score_h(lm, hc, s_hat);
    kernels::axpy(coef * cfg.beta_h * scales.h, gh.data(), next.h_tau.data(), dh);
    for (std::size_t k = 0; k < n_users; ++k) {
      const RVector gs = likelihood_score_s(lm, hc, s_hat, k);
      kernels::axpy(coef * cfg.beta_for(k) * scales.s[k], gs.data(), next.s_tau[k].data(),
                    static_cast<std::size_t>(gs.size()));
    }
  }

  bool ok = finite(next.h_tau);
  for (const auto& s : next.s_tau) ok = ok && finite(s);
  if (!ok) {
    throw NumericalError("pfm_step: non-finite state at step " + std::to_string(state.step) +
                         " (tau " + std::to_string(tau) + ")");
  }
  if (tweedie_h != nullptr) *tweedie_h = std::move(h_hat);
  if (tweedie_s != nullptr) *tweedie_s = std::move(s_hat);
  return next;
}

void check_priors(const LikelihoodModel& lm, const PriorSet& priors) {
  if (!priors.channel || priors.channel->dim() != 2 * lm.dims.h_size()) {
    throw std::invalid_argument("PriorSet: channel VF dim must be 2 n_f n_t n_r");
  }
  if (priors.sources.size() != lm.encoders.size()) {
    throw std::invalid_argument("PriorSet: one source VF per user required");
  }
  for (std::size_t k = 0; k < lm.encoders.size(); ++k) {
    if (!priors.sources[k] || priors.sources[k]->dim() != lm.encoders[k].m()) {
      throw std::invalid_argument("PriorSet: source VF dim mismatch");
    }
  }
}

double nmse(double err, double ref) { return ref > 0.0 ? err / ref : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

FlowState pfm_step(const FlowState& state, const LikelihoodModel& lm, const PriorSet& priors,
                   const PfmConfig& cfg) {
  check_priors(lm, priors);
  cfg.validate(lm.encoders.size());
  if (!(state.tau > 0.0)) throw std::domain_error("pfm_step: tau must be > 0");
  return step_impl(state, lm, priors, cfg, guidance_scales(lm, cfg), cfg.n_steps(), nullptr,
                   nullptr);
}

PfmResult pfm_decode(const LikelihoodModel& lm, const PriorSet& priors, const PfmConfig& cfg,
                     const std::optional<GroundTruth>& truth) {
  lm.validate();
  check_priors(lm, priors);
  cfg.validate(lm.encoders.size());
  const std::size_t n_steps = cfg.n_steps();
  const GuidanceScales scales = guidance_scales(lm, cfg);
  const std::size_t n_users = lm.encoders.size();

  PfmResult out;
  out.nfe_per_variable = n_steps;
  RVector h_acc = RVector::Zero(static_cast<Eigen::Index>(2 * lm.dims.h_size()));
  std::vector<RVector> s_acc(n_users);
  for (std::size_t k = 0; k < n_users; ++k) s_acc[k] = RVector::Zero(static_cast<Eigen::Index>(lm.encoders[k].m()));

  const double h_ref = truth ? truth->h.h.squared_norm() : 0.0;
  const double x_ref = truth ? truth->x.x.squared_norm() : 0.0;
  auto record = [&](std::size_t step, double tau, const RVector& h_real,
                    const std::vector<SourceVector>& s) {
    const ChannelTensor hc{tensor_from_real(h_real, lm.dims.h_shape())};
    const TransmitTensor xc = build_transmit(lm, s);
    TraceRow row{step, tau, std::sqrt(residual(lm, xc, hc).squared_norm()),
                 std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    if (truth) {
      row.nmse_h_vs_truth = nmse((hc.h - truth->h.h).squared_norm(), h_ref);
      row.nmse_x_vs_truth = nmse((xc.x - truth->x.x).squared_norm(), x_ref);
    }
    out.trace.push_back(row);
  };

  for (std::size_t chain = 0; chain < cfg.n_average; ++chain) {
    // Standard Gaussian initialization.
    Rng rng(cfg.n_average == 1 ? cfg.seed : split_seed(cfg.seed, chain));
    FlowState st;
    st.h_tau = rng.normal_vector(static_cast<Eigen::Index>(2 * lm.dims.h_size()));
    for (std::size_t k = 0; k < n_users; ++k) {
      st.s_tau.push_back(rng.normal_vector(static_cast<Eigen::Index>(lm.encoders[k].m())));
    }
    const bool traced = chain == 0;
    for (std::size_t i = 0; i < n_steps; ++i) {
      RVector th;
      std::vector<RVector> ts;
      const double tau = st.tau;
      st = step_impl(st, lm, priors, cfg, scales, n_steps, traced ? &ts : nullptr,
                     traced ? &th : nullptr);
      if (traced) record(i, tau, th, ts);
    }
    if (traced) record(n_steps, st.tau, st.h_tau, st.s_tau);
    h_acc += st.h_tau;
    for (std::size_t k = 0; k < n_users; ++k) s_acc[k] += st.s_tau[k];
  }
  const double inv = 1.0 / static_cast<double>(cfg.n_average);
  out.h = ChannelTensor{tensor_from_real(inv * h_acc, lm.dims.h_shape())};
  for (auto& s : s_acc) out.s.push_back(inv * s);
  return out;
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
  os << "step,tau,residual_norm,nmse_h_vs_truth,nmse_x_vs_truth\n";
  os << std::setprecision(10);
  for (const auto& r : trace) {
    os << r.step << ',' << r.tau << ',' << r.residual_norm << ',' << r.nmse_h_vs_truth << ','
       << r.nmse_x_vs_truth << '\n';
  }
}

}  // namespace dupfm
