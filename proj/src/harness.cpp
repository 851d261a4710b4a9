// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dupfm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "dupfm/kernels.hpp"

namespace dupfm {

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr int kSchemaVersion = 1;

// Seed stream tags.
constexpr std::uint64_t kCalibrationStream = 0xCA11B;
constexpr std::uint64_t kTuneStream = 0x7E57;
constexpr std::uint64_t kBoundStream = 0xB0B;

double nmse_db(double err, double ref) {
  if (!(ref > 0.0)) throw std::invalid_argument("compute_metrics: zero-norm truth");
  if (!(err > 0.0)) return kNmseClampDb;
  return std::max(kNmseClampDb, to_db(err / ref));
}

double clamp_db(double linear) {
  if (std::isnan(linear)) return linear;
  if (!(linear > 0.0)) return kNmseClampDb;
  return std::max(kNmseClampDb, to_db(linear));
}

// Y_f - X_f H_f for the given X.
CTensor3 subtract_xh(const CTensor3& y, const CTensor3& x, const CTensor3& h) {
  CTensor3 out = y;
  for (std::size_t f = 0; f < y.dim(0); ++f) out.set_slice(f, y.slice(f) - x.slice(f) * h.slice(f));
  return out;
}

CTensor3 rows(const CTensor3& y, std::size_t t0, std::size_t count) {
  CTensor3 out(y.dim(0), count, y.dim(2));
  for (std::size_t n = 0; n < y.dim(2); ++n) {
    for (std::size_t t = 0; t < count; ++t) {
      for (std::size_t f = 0; f < y.dim(0); ++f) out(f, t, n) = y(f, t0 + t, n);
    }
  }
  return out;
}

std::shared_ptr<const VelocityField> load_field(const std::string& path, std::size_t dim,
                                                const char* what) {
  auto net = std::make_shared<MlpVf>(load_checkpoint(path));
  if (net->dim() != dim) {
    throw ConfigError(std::string(what) + " checkpoint dimension " + std::to_string(net->dim()) +
                      " does not match " + std::to_string(dim));
  }
  return net;
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

std::uint64_t trial_seed(std::uint64_t stream, std::size_t point, std::size_t trial) {
  return split_seed(split_seed(stream, point + 1), trial);
}

bool is_power_overflow(const std::exception& e) {
  return std::string(e.what()).rfind("power overflow", 0) == 0;
}

Aggregate aggregate_pairs(const std::vector<std::pair<double, double>>& v) {
  Aggregate a;
  if (v.empty()) {
    a.ratio = a.se = a.pertrial = std::numeric_limits<double>::quiet_NaN();
    return a;
  }
  double se = 0.0, sr = 0.0, pt = 0.0;
  for (const auto& [e, r] : v) {
    se += e;
    sr += r;
    pt += e / r;
  }
  const double n = static_cast<double>(v.size());
  a.ratio = se / sr;
  a.pertrial = pt / n;
  if (v.size() > 1) {
    double acc = 0.0;
    for (const auto& [e, r] : v) acc += (e - a.ratio * r) * (e - a.ratio * r);
    a.se = std::sqrt(acc / (n * (n - 1.0))) / (sr / n);
  }
  return a;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::size_t source_dim(const SystemDims& dims, double cbr) {
  if (!(cbr > 0.0)) throw ConfigError("cbr must be > 0");
  const double m = static_cast<double>(dims.n_f * dims.t_s) / cbr;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(m)));
}

std::vector<GridPoint> grid_points(const ExperimentConfig& cfg) {
  std::vector<GridPoint> out;
  for (double c : cfg.sweep.csnr_db) {
    for (double cbr : cfg.sweep.cbr) {
      for (PilotKind kind : cfg.pilots.schemes) {
        std::vector<double> alphas{0.0};
        if (kind == PilotKind::kOrthogonal) alphas = cfg.sweep.alpha;
        if (kind == PilotKind::kSuperimposed) alphas = {cfg.pilots.pilot_power_fraction};
        for (double a : alphas) {
          GridPoint p;
          p.index = out.size();
          p.csnr_db = c;
          p.cbr = cbr;
          p.alpha = a;
          p.scheme = kind;
          out.push_back(p);
        }
      }
    }
  }
  return out;
}

GmmPrior make_source_prior(const SourcePriorSpec& spec, std::size_t m, std::uint64_t seed) {
  const auto r = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(spec.intrinsic_fraction * static_cast<double>(m))), 1, m);
  std::vector<GmmComponent> comps;
  for (std::size_t c = 0; c < spec.n_components; ++c) {
    Rng rng(split_seed(seed, c));
    RMatrix a(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(r));
    for (Eigen::Index j = 0; j < a.cols(); ++j) a.col(j) = rng.normal_vector(a.rows());
    Eigen::HouseholderQR<RMatrix> qr(a);
    GmmComponent comp;
    comp.weight = 1.0 / static_cast<double>(spec.n_components);
    comp.basis = qr.householderQ() * RMatrix::Identity(a.rows(), a.cols());
    comp.eigvals = RVector::Ones(static_cast<Eigen::Index>(r));
    comp.mean = rng.normal_vector(static_cast<Eigen::Index>(m)).normalized() *
                (spec.offset * std::sqrt(static_cast<double>(r)));
    comps.push_back(std::move(comp));
  }
  return GmmPrior(std::move(comps));
}

PointSetup make_point(const ExperimentConfig& cfg, const GridPoint& point) {
  PointSetup s;
  s.point = point;
  s.dims = cfg.dims;
  s.m = source_dim(cfg.dims, point.cbr);
  s.scheme = make_pilot_scheme(point.scheme, point.scheme == PilotKind::kOrthogonal ? point.alpha : 0.0,
                               point.scheme == PilotKind::kSuperimposed ? point.alpha : 0.5,
                               cfg.dims, cfg.pilots.seed);
  s.channel_gauss = channel_moments(cfg.channel_prior, cfg.dims);
  s.channel_prior = circular_gaussian_prior(s.channel_gauss);
  s.channel_energy = (s.channel_gauss.cov.trace().real() + s.channel_gauss.mean.squaredNorm()) /
                     static_cast<double>(cfg.dims.h_size());
  if (s.scheme.has_users()) {
    if (s.scheme.t_data() == 0) throw ConfigError("pilot scheme leaves no data symbols");
    for (std::size_t k = 0; k < cfg.dims.n_t; ++k) {
      s.source_priors.push_back(make_source_prior(cfg.source_prior, s.m, split_seed(cfg.source_prior.seed, k)));
      s.encoders.push_back(LinearEncoder::random(s.source_priors.back(), cfg.dims.n_f, s.scheme.t_data(),
                                                 cfg.dims.power_p, split_seed(cfg.encoder.seed, k),
                                                 cfg.encoder.overflow_factor));
    }
  }
  s.priors.channel = cfg.pfm.channel_vf_checkpoint.empty()
                         ? std::make_shared<GmmVelocityField>(s.channel_prior)
                         : load_field(cfg.pfm.channel_vf_checkpoint, s.channel_prior.dim(), "channel");
  for (const auto& sp : s.source_priors) {
    s.priors.sources.push_back(cfg.pfm.source_vf_checkpoint.empty()
                                   ? std::make_shared<GmmVelocityField>(sp)
                                   : load_field(cfg.pfm.source_vf_checkpoint, sp.dim(), "source"));
  }
  s.beta_h = cfg.pfm.beta_h;
  s.beta_s = cfg.pfm.beta_s;

  // Noise variance that meets the CSNR target on average over calibration blocks.
  s.dims.noise_var = 0.0;
  const std::uint64_t cal = split_seed(cfg.seed, kCalibrationStream);
  double energy = 0.0;
  for (std::size_t b = 0; b < cfg.calibration_blocks; ++b) {
    const TrialTruth t = draw_trial(s, split_seed(cal, b), std::numeric_limits<double>::infinity());
    energy += (t.y.y - t.y.w).squared_norm();
  }
  energy /= static_cast<double>(cfg.calibration_blocks);
  const double n_y = static_cast<double>(cfg.dims.n_f * cfg.dims.t_s * cfg.dims.n_r);
  s.dims.noise_var = energy / (n_y * from_db(point.csnr_db));
  return s;
}

TrialTruth draw_trial(const PointSetup& setup, std::uint64_t seed, double overflow_factor) {
  TrialTruth t;
  t.h = generate_channel(setup.channel_prior, setup.dims, split_seed(seed, 1));
  Rng rng(split_seed(seed, 2));
  std::vector<CMatrix> codewords;
  for (std::size_t k = 0; k < setup.source_priors.size(); ++k) {
    t.s.push_back(setup.source_priors[k].sample(rng));
    LinearEncoder enc(setup.encoders[k].g(), setup.encoders[k].m(), setup.encoders[k].n_f(),
                      setup.encoders[k].t_data(), setup.encoders[k].scale(),
                      setup.encoders[k].power_p(), overflow_factor);
    codewords.push_back(encode(enc, t.s.back()));
  }
  t.x = assemble_block(codewords, setup.scheme, setup.dims, overflow_factor);
  t.y = transmit(t.x, t.h, setup.dims.noise_var, split_seed(seed, 3));
  return t;
}

TrialResult compute_metrics(const TrialTruth& truth, const Estimates& est) {
  if (est.h.h.dims() != truth.h.h.dims() || est.x.x.dims() != truth.x.x.dims() ||
      est.s.size() != truth.s.size()) {
    throw std::invalid_argument("compute_metrics: shape mismatch");
  }
  TrialResult r;
  r.err_h = (est.h.h - truth.h.h).squared_norm();
  r.ref_h = truth.h.h.squared_norm();
  r.err_x = (est.x.x - truth.x.x).squared_norm();
  r.ref_x = truth.x.x.squared_norm();
  for (std::size_t k = 0; k < truth.s.size(); ++k) {
    if (est.s[k].size() != truth.s[k].size()) throw std::invalid_argument("compute_metrics: source length");
    r.err_s += (est.s[k] - truth.s[k]).squaredNorm();
    r.ref_s += truth.s[k].squaredNorm();
  }
  r.nmse_h_db = nmse_db(r.err_h, r.ref_h);
  r.nmse_x_db = nmse_db(r.err_x, r.ref_x);
  r.nmse_s_db = truth.s.empty() ? std::numeric_limits<double>::quiet_NaN() : nmse_db(r.err_s, r.ref_s);
  r.csnr_db = truth.y.w.squared_norm() > 0.0 ? csnr(truth.y) : std::numeric_limits<double>::infinity();
  return r;
}

LikelihoodModel likelihood_model(const PointSetup& setup, const ReceiveTensor& y) {
  LikelihoodModel lm;
  lm.dims = setup.dims;
  lm.y = y;
  lm.encoders = setup.encoders;
  lm.scheme = setup.scheme;
  lm.noise_var = setup.dims.noise_var;
  return lm;
}

PfmConfig pfm_config(const ExperimentConfig& cfg, const PointSetup& setup, std::uint64_t seed) {
  PfmConfig p;
  p.delta_tau = cfg.pfm.delta_tau;
  p.beta_h = setup.beta_h;
  p.beta_s = {setup.beta_s};
  p.seed = seed;
  p.n_average = cfg.pfm.n_average;
  p.normalize_beta = cfg.pfm.normalize_beta;
  p.channel_energy = setup.channel_energy;
  return p;
}

namespace {

LmmseEstimator make_lmmse(const PointSetup& setup) {
  const auto& d = setup.dims;
  switch (setup.scheme.kind) {
    case PilotKind::kPilotOnly:
    case PilotKind::kOrthogonal:
      return LmmseEstimator(setup.channel_gauss, setup.scheme.pilots, d.n_r, d.noise_var);
    case PilotKind::kSuperimposed: {
      // Data symbols act as additional white noise of power (1 - rho) P per transmitter.
      const double interference =
          (1.0 - setup.scheme.rho) * d.power_p * static_cast<double>(d.n_t) * setup.channel_energy;
      return LmmseEstimator(setup.channel_gauss, setup.scheme.pilot_grid(d.n_t), d.n_r,
                            d.noise_var + interference);
    }
    case PilotKind::kNone:
      break;
  }
  throw std::logic_error("make_lmmse: scheme without pilots");
}

bool has_pilots(const PointSetup& setup) {
  return setup.scheme.kind != PilotKind::kNone && setup.scheme.t_pilot() > 0;
}

}  // namespace

std::optional<double> baseline_analytic_nmse_h(const PointSetup& setup) {
  if (!has_pilots(setup)) return std::nullopt;
  return make_lmmse(setup).analytic_nmse();
}

std::optional<Estimates> baseline_estimate(const PointSetup& setup, const ReceiveTensor& y) {
  if (!has_pilots(setup)) return std::nullopt;
  const auto& d = setup.dims;
  const LmmseEstimator est = make_lmmse(setup);
  const PilotScheme& sc = setup.scheme;
  Estimates out;
  CTensor3 y_data;
  switch (sc.kind) {
    case PilotKind::kPilotOnly:
      out.h = est.estimate(y.y);
      out.x = {sc.pilot_grid(d.n_t)};
      return out;
    case PilotKind::kOrthogonal:
      out.h = est.estimate(rows(y.y, 0, sc.t_pilot()));
      y_data = rows(y.y, sc.t_pilot(), sc.t_data());
      break;
    case PilotKind::kSuperimposed:
      out.h = est.estimate(y.y);
      y_data = subtract_xh(y.y, sc.pilot_grid(d.n_t), out.h.h);
      break;
    case PilotKind::kNone:
      return std::nullopt;
  }
  const CTensor3 x_data = ls_detect(y_data, out.h);
  const double gain = sc.data_gain();
  for (std::size_t k = 0; k < setup.encoders.size(); ++k) {
    CMatrix cw(static_cast<Eigen::Index>(d.n_f), static_cast<Eigen::Index>(sc.t_data()));
    for (std::size_t t = 0; t < sc.t_data(); ++t) {
      for (std::size_t f = 0; f < d.n_f; ++f) {
        cw(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t)) = x_data(f, t, k) / gain;
      }
    }
    out.s.push_back(setup.encoders[k].decode_pinv(cw));
  }
  out.x = build_transmit(likelihood_model(setup, y), out.s);
  return out;
}

std::vector<TrialResult> run_point(const ExperimentConfig& cfg, const PointSetup& setup,
                                   std::size_t n_trials, std::uint64_t stream) {
  const bool with_baseline = cfg.run_baselines && has_pilots(setup);
  const std::size_t per = with_baseline ? 2 : 1;
  std::vector<TrialResult> out(n_trials * per);
  const std::string scheme = to_string(setup.point.scheme);

  auto label = [&](TrialResult& r, const char* method, std::uint64_t seed, std::size_t trial) {
    r.scheme = scheme;
    r.method = method;
    r.csnr_target_db = setup.point.csnr_db;
    r.cbr = setup.point.cbr;
    r.alpha = setup.point.alpha;
    r.seed = seed;
    r.trial = trial;
  };
  auto fail = [&](TrialResult& r, const std::exception& e) {
    r.failed = true;
    r.error = e.what();
    r.nmse_h_db = r.nmse_x_db = r.nmse_s_db = std::numeric_limits<double>::quiet_NaN();
  };

  parallel_for(n_trials, cfg.workers, [&](std::size_t i) {
    const std::uint64_t seed = trial_seed(stream, setup.point.index, i);
    TrialResult* pfm = &out[i * per];
    TrialResult* base = with_baseline ? &out[i * per + 1] : nullptr;
    std::optional<TrialTruth> truth;
    try {
      truth = draw_trial(setup, seed, cfg.encoder.overflow_factor);
    } catch (const std::runtime_error& e) {
      if (!is_power_overflow(e)) throw;
      label(*pfm, "pfm", seed, i);
      fail(*pfm, e);
      if (base) {
        label(*base, "lmmse", seed, i);
        fail(*base, e);
      }
      return;
    }
    const LikelihoodModel lm = likelihood_model(setup, truth->y);
    {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const PfmResult res = pfm_decode(lm, setup.priors, pfm_config(cfg, setup, split_seed(seed, 4)));
        *pfm = compute_metrics(*truth, {res.h, res.s, build_transmit(lm, res.s)});
      } catch (const NumericalError& e) {
        fail(*pfm, e);
      }
      pfm->runtime_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      label(*pfm, "pfm", seed, i);
    }
    if (base) {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        *base = compute_metrics(*truth, *baseline_estimate(setup, truth->y));
      } catch (const NumericalError& e) {
        fail(*base, e);
      }
      base->runtime_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      label(*base, "lmmse", seed, i);
    }
  });
  return out;
}

void tune_beta(const ExperimentConfig& cfg, PointSetup& setup) {
  const std::uint64_t stream = split_seed(cfg.seed, kTuneStream);
  const std::vector<double>& grid = cfg.pfm.tune_grid;
  const std::vector<double> s_grid = setup.scheme.has_users() ? grid : std::vector<double>{setup.beta_s};
  ExperimentConfig tcfg = cfg;
  tcfg.run_baselines = false;
  double best = std::numeric_limits<double>::infinity();
  double best_h = setup.beta_h, best_s = setup.beta_s;
  for (double bh : grid) {
    for (double bs : s_grid) {
      PointSetup trial = setup;
      trial.beta_h = bh;
      trial.beta_s = bs;
      const auto res = run_point(tcfg, trial, cfg.pfm.tune_trials, stream);
      double eh = 0.0, rh = 0.0, ex = 0.0, rx = 0.0;
      for (const auto& r : res) {
        if (r.failed) continue;
        eh += r.err_h;
        rh += r.ref_h;
        ex += r.err_x;
        rx += r.ref_x;
      }
      if (!(rh > 0.0)) continue;
      const double obj = clamp_db(eh / rh) + (setup.scheme.has_users() ? clamp_db(ex / rx) : 0.0);
      if (obj < best) {
        best = obj;
        best_h = bh;
        best_s = bs;
      }
    }
  }
  setup.beta_h = best_h;
  setup.beta_s = best_s;
}

PointBound point_bcrb(const ExperimentConfig& cfg, const PointSetup& setup) {
  const auto& d = setup.dims;
  const double eps = cfg.bcrb.eps;
  const std::uint64_t stream = split_seed(split_seed(cfg.seed, kBoundStream), setup.point.index);
  std::vector<TransmitTensor> xs;
  std::vector<ChannelTensor> hs;
  for (std::size_t i = 0; i < cfg.bcrb.n_fim_samples; ++i) {
    TrialTruth t = draw_trial(setup, split_seed(stream, i), std::numeric_limits<double>::infinity());
    xs.push_back(std::move(t.x));
    hs.push_back(std::move(t.h));
  }
  const RMatrix prior_h =
      permute_real_block(gaussian_prior_fim_real(setup.channel_prior, eps), fim_perm_h(d));
  const double eh = setup.channel_prior.second_moment().trace();

  RMatrix prior_x;
  double ex = std::numeric_limits<double>::quiet_NaN();
  BfimOptions opts;
  if (!setup.scheme.has_users()) {
    opts.exclude_x = true;
  } else {
    // Pushforward of the stacked sources through the block's real-affine map.
    const auto nx = static_cast<Eigen::Index>(d.x_size());
    std::size_t total_m = 0;
    for (const auto& e : setup.encoders) total_m += e.m();
    RMatrix a = RMatrix::Zero(2 * nx, static_cast<Eigen::Index>(total_m));
    const std::size_t t0 = setup.scheme.kind == PilotKind::kOrthogonal ? setup.scheme.t_pilot() : 0;
    const double gain = setup.scheme.data_gain();
    Eigen::Index col = 0;
    for (std::size_t k = 0; k < setup.encoders.size(); ++k) {
      const auto& e = setup.encoders[k];
      const RMatrix rm = e.real_map();
      const auto n = static_cast<Eigen::Index>(e.n_codeword());
      for (std::size_t t = 0; t < e.t_data(); ++t) {
        for (std::size_t f = 0; f < d.n_f; ++f) {
          const auto src = static_cast<Eigen::Index>(f + d.n_f * t);
          const auto dst = static_cast<Eigen::Index>(f + d.n_f * (t0 + t + d.t_s * k));
          a.block(dst, col, 1, rm.cols()) = gain * rm.row(src);
          a.block(nx + dst, col, 1, rm.cols()) = gain * rm.row(n + src);
        }
      }
      col += rm.cols();
    }
    const GmmPrior sources = product_prior(setup.source_priors);
    const GmmPrior xprior = sources.affine_map(a, tensor_to_real(setup.scheme.pilot_grid(d.n_t)));
    RMatrix px;
    if (xprior.components().size() == 1) {
      px = gaussian_prior_fim_real(xprior, eps);
    } else {
      px = prior_fim_real([&](const RVector& x) { return xprior.score(x, eps); },
                          [&](Rng& rng) { return xprior.sample(rng); }, eps,
                          cfg.bcrb.n_prior_samples, split_seed(stream, 0xF1));
    }
    prior_x = permute_real_block(px, fim_perm_x(d));
    ex = xprior.second_moment().trace();
  }
  const BayesianFim b = bfim(xs, hs, d.noise_var, prior_x, prior_h, eps, opts);
  PointBound out;
  out.bound = bcrb(b, eh, opts.exclude_x ? 1.0 : ex);
  out.min_eig = b.min_eig;
  out.n_samples = b.n_samples;
  return out;
}

std::vector<AggregateRow> aggregate(const PointSetup& setup, const std::vector<TrialResult>& trials) {
  std::vector<std::string> methods;
  for (const auto& t : trials) {
    if (std::find(methods.begin(), methods.end(), t.method) == methods.end()) methods.push_back(t.method);
  }
  std::vector<AggregateRow> out;
  for (const auto& m : methods) {
    AggregateRow row;
    row.point = setup.point;
    row.m = setup.m;
    row.method = m;
    row.beta_h = setup.beta_h;
    row.beta_s = setup.beta_s;
    std::vector<std::pair<double, double>> h, x, s;
    double csnr_sum = 0.0;
    for (const auto& t : trials) {
      if (t.method != m) continue;
      ++row.n_trials;
      if (t.failed) {
        ++row.n_failed;
        continue;
      }
      csnr_sum += t.csnr_db;
      h.emplace_back(t.err_h, t.ref_h);
      x.emplace_back(t.err_x, t.ref_x);
      if (t.ref_s > 0.0) s.emplace_back(t.err_s, t.ref_s);
    }
    row.csnr_db = h.empty() ? std::numeric_limits<double>::quiet_NaN() : csnr_sum / static_cast<double>(h.size());
    row.h = aggregate_pairs(h);
    row.x = aggregate_pairs(x);
    row.s = aggregate_pairs(s);
    out.push_back(row);
  }
  return out;
}

SweepResult run_sweep(const ExperimentConfig& cfg, bool with_bcrb) {
  cfg.validate();
  SweepResult out;
  for (const GridPoint& p : grid_points(cfg)) {
    PointSetup setup = make_point(cfg, p);
    if (cfg.pfm.tune_beta) tune_beta(cfg, setup);
    auto trials = run_point(cfg, setup, cfg.n_trials, cfg.seed);
    std::size_t failed = 0;
    for (const auto& t : trials) failed += t.failed ? 1 : 0;
    if (static_cast<double>(failed) > 0.1 * static_cast<double>(trials.size())) {
      throw NumericalError("sweep aborted: " + std::to_string(failed) + " of " +
                           std::to_string(trials.size()) + " trials failed at grid point " +
                           std::to_string(p.index) + " (first: " +
                           std::find_if(trials.begin(), trials.end(), [](const TrialResult& t) {
                             return t.failed;
                           })->error + ")");
    }
    auto rows = aggregate(setup, trials);
    if (with_bcrb) {
      const PointBound b = point_bcrb(cfg, setup);
      for (auto& r : rows) r.bcrb = b;
    }
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
    out.trials.insert(out.trials.end(), trials.begin(), trials.end());
  }
  return out;
}

void write_sweep_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
  os << "point,csnr_target_db,csnr_db,cbr,m,alpha,scheme,method,n_trials,n_failed,beta_h,beta_s,"
        "nmse_h_db,nmse_h_se,nmse_h_pertrial_db,nmse_x_db,nmse_x_se,nmse_x_pertrial_db,"
        "nmse_s_db,nmse_s_se,bcrb_h_db,bcrb_x_db,bfim_min_eig\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : rows) {
    os << r.point.index << ',' << format_double(r.point.csnr_db) << ',' << format_double(r.csnr_db)
       << ',' << format_double(r.point.cbr) << ',' << r.m << ',' << format_double(r.point.alpha) << ','
       << to_string(r.point.scheme) << ',' << r.method << ',' << r.n_trials << ',' << r.n_failed << ','
       << format_double(r.beta_h) << ',' << format_double(r.beta_s) << ','
       << format_double(clamp_db(r.h.ratio)) << ',' << format_double(r.h.se) << ','
       << format_double(clamp_db(r.h.pertrial)) << ',' << format_double(clamp_db(r.x.ratio)) << ','
       << format_double(r.x.se) << ',' << format_double(clamp_db(r.x.pertrial)) << ','
       << format_double(clamp_db(r.s.ratio)) << ',' << format_double(r.s.se) << ','
       << format_double(r.bcrb ? clamp_db(r.bcrb->bound.bcrb_h) : nan) << ','
       << format_double(r.bcrb ? clamp_db(r.bcrb->bound.bcrb_x) : nan) << ','
       << format_double(r.bcrb ? r.bcrb->min_eig : nan) << '\n';
  }
}

void write_trials_csv(std::ostream& os, const std::vector<TrialResult>& trials) {
  os << "scheme,method,csnr_target_db,csnr_db,cbr,alpha,trial,seed,nmse_h_db,nmse_x_db,nmse_s_db,"
        "failed,error\n";
  for (const auto& t : trials) {
    std::string err = t.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << t.scheme << ',' << t.method << ',' << format_double(t.csnr_target_db) << ','
       << format_double(t.csnr_db) << ',' << format_double(t.cbr) << ',' << format_double(t.alpha)
       << ',' << t.trial << ',' << t.seed << ',' << format_double(t.nmse_h_db) << ','
       << format_double(t.nmse_x_db) << ',' << format_double(t.nmse_s_db) << ','
       << (t.failed ? 1 : 0) << ',' << err << '\n';
  }
}

std::vector<BcrbRow> bcrb_sweep(const ExperimentConfig& cfg, const std::vector<double>& csnr_db) {
  cfg.validate();
  const GridPoint base = grid_points(cfg).front();
  std::vector<BcrbRow> out;
  for (std::size_t i = 0; i < csnr_db.size(); ++i) {
    GridPoint p = base;
    p.csnr_db = csnr_db[i];
    const PointSetup setup = make_point(cfg, p);
    const PointBound b = point_bcrb(cfg, setup);
    out.push_back({csnr_db[i], clamp_db(b.bound.bcrb_h), clamp_db(b.bound.bcrb_x), b.min_eig, b.n_samples});
  }
  return out;
}

void write_bcrb_csv(std::ostream& os, const std::vector<BcrbRow>& rows) {
  os << "csnr_db,bcrb_h_db,bcrb_x_db,bfim_min_eig,n_samples\n";
  for (const auto& r : rows) {
    os << format_double(r.csnr_db) << ',' << format_double(r.bcrb_h_db) << ','
       << format_double(r.bcrb_x_db) << ',' << format_double(r.bfim_min_eig) << ',' << r.n_samples
       << '\n';
  }
}

GmmPrior train_prior_target(const ExperimentConfig& cfg) {
  if (cfg.train_prior.target == "gaussian2d") {
    RVector mean(2);
    mean << 1.0, -0.5;
    RMatrix cov(2, 2);
    cov << 1.0, 0.6, 0.6, 0.8;
    return GmmPrior::gaussian(mean, cov);
  }
  if (cfg.train_prior.target == "source") {
    return make_source_prior(cfg.source_prior, source_dim(cfg.dims, cfg.sweep.cbr.front()),
                             split_seed(cfg.source_prior.seed, 0));
  }
  throw ConfigError("train_prior.target must be gaussian2d or source");
}

TrainPriorResult train_prior(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto& tp = cfg.train_prior;
  if (tp.steps < 3) throw ConfigError("train_prior.steps must be >= 3");
  const GmmPrior target = train_prior_target(cfg);
  Rng rng(split_seed(seed, 1));
  std::vector<RVector> data;
  data.reserve(tp.n_data);
  for (std::size_t i = 0; i < tp.n_data; ++i) data.push_back(target.sample(rng));
  MlpVf net(target.dim(), tp.hidden, split_seed(seed, 2));
  TrainPriorResult out{net, 0.0, {}};
  // One continuous run; delta is measured at the end of each third.
  CfmTrainConfig tc;
  tc.steps = tp.steps;
  tc.lr = tp.lr;
  tc.batch = tp.batch;
  tc.seed = split_seed(seed, 3);
  tc.cosine_decay = true;
  tc.checkpoints = {tp.steps / 3, 2 * tp.steps / 3, tp.steps};
  tc.on_checkpoint = [&](std::size_t, const MlpVf& n) {
    out.delta_checkpoints.push_back(score_error(n, target, tp.eps, 2000, split_seed(seed, 10)));
  };
  CfmTrainResult r = cfm_train(data, net, tc);
  out.net = std::move(r.net);
  out.final_loss = r.final_loss;
  return out;
}

nlohmann::json run_manifest(const ExperimentConfig& cfg, const std::string& command,
                            const std::vector<std::string>& outputs) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["version"] = kVersion;
  j["command"] = command;
  j["config_hash"] = config_hash(cfg);
  j["seeds"] = {{"master", cfg.seed},
                {"channel_prior", cfg.channel_prior.seed},
                {"source_prior", cfg.source_prior.seed},
                {"encoder", cfg.encoder.seed},
                {"pilots", cfg.pilots.seed}};
  j["kernel"] = kernels::active().name;
  j["config"] = config_to_json(cfg);
  j["outputs"] = outputs;
  return j;
}

void emit_plot_table(std::istream& in, std::ostream& out) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("emit-plots: empty input");
  auto split = [](const std::string& s) {
    std::vector<std::string> v;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(cell);
    return v;
  };
  const auto header = split(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* key : {"csnr_target_db", "cbr", "alpha", "scheme", "method"}) {
    if (!col.count(key)) throw ConfigError(std::string("emit-plots: missing column ") + key);
  }
  const std::vector<std::string> metrics{"nmse_h_db", "nmse_x_db", "nmse_s_db", "bcrb_h_db", "bcrb_x_db"};
  out << "csnr_db,cbr,alpha,scheme,method,metric,value,se\n";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    for (const auto& m : metrics) {
      if (!col.count(m) || cells.at(col[m]) == "nan") continue;
      const std::string se_key = m.substr(0, m.size() - 3) + "_se";
      const std::string se = col.count(se_key) ? cells.at(col[se_key]) : "nan";
      out << cells.at(col["csnr_target_db"]) << ',' << cells.at(col["cbr"]) << ','
          << cells.at(col["alpha"]) << ',' << cells.at(col["scheme"]) << ','
          << cells.at(col["method"]) << ',' << m << ',' << cells.at(col[m]) << ',' << se << '\n';
    }
  }
}

}  // namespace dupfm
