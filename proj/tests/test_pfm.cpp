// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "dupfm/channel.hpp"
#include "dupfm/pfm.hpp"

using namespace dupfm;

namespace {

struct Fixture {
  LikelihoodModel lm;
  ChannelTensor h;
  std::vector<SourceVector> s;
  TransmitTensor x;
};

SystemDims small_dims(std::size_t nf, std::size_t nt, std::size_t ts, std::size_t nr, double nv) {
  SystemDims d;
  d.n_f = nf;
  d.n_t = nt;
  d.t_s = ts;
  d.n_r = nr;
  d.noise_var = nv;
  return d;
}

Fixture make_fixture(const SystemDims& d, PilotKind kind, double alpha, std::size_t m,
                     std::uint64_t seed) {
  Fixture fx;
  fx.lm.dims = d;
  fx.lm.noise_var = d.noise_var;
  fx.lm.scheme = make_pilot_scheme(kind, alpha, 0.4, d, split_seed(seed, 1));
  const GmmPrior sp = GmmPrior::standard_normal(m);
  Rng rng(split_seed(seed, 2));
  if (fx.lm.scheme.has_users()) {
    for (std::size_t k = 0; k < d.n_t; ++k) {
      fx.lm.encoders.push_back(
          LinearEncoder::random(sp, d.n_f, fx.lm.scheme.t_data(), d.power_p, split_seed(seed, 10 + k), 1e6));
      fx.s.push_back(sp.sample(rng));
    }
  }
  fx.h = generate_channel(make_channel_prior({}, d), d, split_seed(seed, 3));
  fx.lm.y.y = CTensor3(d.n_f, d.t_s, d.n_r);
  fx.x = build_transmit(fx.lm, fx.s);
  fx.lm.y = transmit(fx.x, fx.h, d.noise_var, split_seed(seed, 4));
  return fx;
}

PriorSet gaussian_priors(const Fixture& fx, const GmmPrior& hp) {
  PriorSet p;
  p.channel = std::make_shared<GmmVelocityField>(hp);
  for (const auto& e : fx.lm.encoders) {
    p.sources.push_back(std::make_shared<GmmVelocityField>(GmmPrior::standard_normal(e.m())));
  }
  return p;
}

}  // namespace

TEST_SUITE("pfm_decoder") {
  TEST_CASE("log-likelihood of a scalar pilot block") {
    const SystemDims d = small_dims(1, 1, 1, 1, 0.5);
    Fixture fx = make_fixture(d, PilotKind::kPilotOnly, 0.0, 1, 1);
    const cdouble x = fx.lm.scheme.pilots(0, 0, 0);
    CHECK(std::abs(x) == doctest::Approx(1.0));
    fx.lm.y.y(0, 0, 0) = {0.3, -0.2};
    const ChannelTensor h{CTensor3({1, 1, 1}, {cdouble(0.1, 0.4)})};
    const double expect = -std::norm(cdouble(0.3, -0.2) - x * h.h(0, 0, 0)) / 0.5 -
                          std::log(std::numbers::pi * 0.5);
    CHECK(log_likelihood(fx.lm, h, fx.s) == doctest::Approx(expect).epsilon(1e-14));
    // Y = XH gives the density peak.
    fx.lm.y.y(0, 0, 0) = x * h.h(0, 0, 0);
    CHECK(log_likelihood(fx.lm, h, fx.s) == doctest::Approx(-std::log(std::numbers::pi * 0.5)));
  }

  TEST_CASE("scalar channel score") {
    const SystemDims d = small_dims(1, 1, 1, 1, 1.0);
    Fixture fx = make_fixture(d, PilotKind::kPilotOnly, 0.0, 1, 2);
    const cdouble x = fx.lm.scheme.pilots(0, 0, 0);
    fx.lm.y.y(0, 0, 0) = x;  // residual x at h = 0
    const ChannelTensor h0{CTensor3(1, 1, 1)};
    // Wirtinger score conj(x) x / sigma^2 = 1; real gradient (2, 0).
    const RVector g = likelihood_score_h(fx.lm, h0, fx.s);
    CHECK(g(0) == doctest::Approx(2.0));
    CHECK(std::abs(g(1)) < 1e-15);
  }

  TEST_CASE("likelihood scores match central differences") {
    for (auto kind : {PilotKind::kOrthogonal, PilotKind::kSuperimposed, PilotKind::kNone}) {
      CAPTURE(to_string(kind));
      const SystemDims d = small_dims(2, 2, 6, 3, 0.7);
      const Fixture fx = make_fixture(d, kind, 1.0 / 3.0, 5, 3);
      Rng rng(4);
      const RVector hr = tensor_to_real(fx.h.h) + 0.3 * rng.normal_vector(2 * 12);
      std::vector<SourceVector> s = fx.s;
      for (auto& v : s) v += 0.3 * rng.normal_vector(v.size());
      const double step = 1e-6;

      const RVector gh = likelihood_score_h(fx.lm, {tensor_from_real(hr, d.h_shape())}, s);
      double worst = 0.0;
      for (Eigen::Index i = 0; i < hr.size(); ++i) {
        RVector p = hr, m = hr;
        p(i) += step;
        m(i) -= step;
        const double fd = (log_likelihood(fx.lm, {tensor_from_real(p, d.h_shape())}, s) -
                           log_likelihood(fx.lm, {tensor_from_real(m, d.h_shape())}, s)) /
                          (2 * step);
        worst = std::max(worst, std::abs(fd - gh(i)) / std::max(1.0, std::abs(gh(i))));
      }
      CHECK(worst <= 1e-6);

      const ChannelTensor hc{tensor_from_real(hr, d.h_shape())};
      for (std::size_t k = 0; k < s.size(); ++k) {
        const RVector gs = likelihood_score_s(fx.lm, hc, s, k);
        double w = 0.0;
        for (Eigen::Index i = 0; i < gs.size(); ++i) {
          auto p = s, m = s;
          p[k](i) += step;
          m[k](i) -= step;
          const double fd = (log_likelihood(fx.lm, hc, p) - log_likelihood(fx.lm, hc, m)) / (2 * step);
          w = std::max(w, std::abs(fd - gs(i)) / std::max(1.0, std::abs(gs(i))));
        }
        CHECK(w <= 1e-6);
      }
    }
  }

  TEST_CASE("identity encoder score is the codeword score") {
    const SystemDims d = small_dims(2, 1, 1, 2, 0.5);
    LikelihoodModel lm;
    lm.dims = d;
    lm.noise_var = 0.5;
    lm.scheme = make_pilot_scheme(PilotKind::kNone, 0.0, 0.5, d, 1);
    lm.encoders.emplace_back(CMatrix::Identity(2, 2), 4, 2, 1, 1.0, 1.0, 1e6);
    Rng rng(5);
    lm.y.y = CTensor3(2, 1, 2);
    for (auto& z : lm.y.y.data()) z = rng.complex_normal(1.0);
    ChannelTensor h{CTensor3(2, 1, 2)};
    for (auto& z : h.h.data()) z = rng.complex_normal(1.0);
    std::vector<SourceVector> s{rng.normal_vector(4)};
    const CVector c = complexify(s[0]);
    // d/ds of -||y - c h||^2 / sigma^2, per subcarrier: 2 (Re, Im) of sum_n r_n conj(h_n) / sigma^2.
    RVector expect(4);
    for (Eigen::Index f = 0; f < 2; ++f) {
      cdouble acc = 0.0;
      for (std::size_t n = 0; n < 2; ++n) {
        const cdouble r = lm.y.y(f, 0, n) - c(f) * h.h(f, 0, n);
        acc += r * std::conj(h.h(f, 0, n));
      }
      acc /= 0.5;
      expect(2 * f) = 2.0 * acc.real();
      expect(2 * f + 1) = 2.0 * acc.imag();
    }
    CHECK((likelihood_score_s(lm, h, s, 0) - expect).norm() < 1e-12);
  }

  TEST_CASE("user permutation leaves the likelihood unchanged") {
    const SystemDims d = small_dims(2, 2, 3, 2, 0.3);
    Fixture fx = make_fixture(d, PilotKind::kNone, 0.0, 4, 6);
    LikelihoodModel swapped = fx.lm;
    std::swap(swapped.encoders[0], swapped.encoders[1]);
    std::vector<SourceVector> s2{fx.s[1], fx.s[0]};
    ChannelTensor h2 = fx.h;
    for (std::size_t f = 0; f < d.n_f; ++f) {
      for (std::size_t n = 0; n < d.n_r; ++n) std::swap(h2.h(f, 0, n), h2.h(f, 1, n));
    }
    CHECK(log_likelihood(swapped, h2, s2) == doctest::Approx(log_likelihood(fx.lm, fx.h, fx.s)).epsilon(1e-12));
  }

  TEST_CASE("config validation") {
    PfmConfig c;
    c.delta_tau = 0.3;
    CHECK_THROWS_AS(c.n_steps(), ConfigError);
    c.delta_tau = 0.005;
    CHECK(c.n_steps() == 200);
    c.beta_s = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(c.validate(2), ConfigError);
    c.beta_s = {1.0, 2.0};
    CHECK_NOTHROW(c.validate(2));
    CHECK(c.beta_for(1) == 2.0);
    c.beta_h = -1.0;
    CHECK_THROWS_AS(c.validate(2), ConfigError);
  }

  TEST_CASE("guidance normalization") {
    const SystemDims d = small_dims(2, 2, 6, 3, 0.7);
    const Fixture fx = make_fixture(d, PilotKind::kOrthogonal, 1.0 / 3.0, 5, 7);
    PfmConfig c;
    const GuidanceScales g = guidance_scales(fx.lm, c);
    CHECK(g.h == doctest::Approx(0.7 / (2.0 * 6.0)));
    c.normalize_beta = false;
    CHECK(guidance_scales(fx.lm, c).h == 1.0);
  }

  TEST_CASE("one step matches a direct evaluation") {
    const SystemDims d = small_dims(2, 2, 6, 3, 0.7);
    const Fixture fx = make_fixture(d, PilotKind::kOrthogonal, 1.0 / 3.0, 5, 8);
    RVector mean = RVector::Constant(24, 0.1);
    const GmmPrior hp = GmmPrior::gaussian(mean, 0.5 * RMatrix::Identity(24, 24));
    const PriorSet priors = gaussian_priors(fx, hp);
    PfmConfig cfg;
    cfg.delta_tau = 0.1;
    cfg.beta_h = 0.7;
    cfg.beta_s = {0.3, 0.9};
    cfg.normalize_beta = false;

    Rng rng(9);
    FlowState st;
    st.tau = 0.6;
    st.step = 4;
    st.h_tau = rng.normal_vector(24);
    st.s_tau = {rng.normal_vector(5), rng.normal_vector(5)};
    const FlowState next = pfm_step(st, fx.lm, priors, cfg);
    CHECK(next.step == 5);
    CHECK(next.tau == doctest::Approx(0.5));

    // Posterior means from the closed-form conditional; V = (x - E[x0 | x]) / tau.
    const double tau = 0.6, dt = 0.1, coef = tau * dt / (1.0 - tau);
    const RVector h_hat = hp.posterior_mean(st.h_tau, tau);
    std::vector<SourceVector> s_hat;
    for (const auto& v : st.s_tau) s_hat.push_back(GmmPrior::standard_normal(5).posterior_mean(v, tau));
    const ChannelTensor hc{tensor_from_real(h_hat, d.h_shape())};
    const RVector h_expect = st.h_tau - dt * (st.h_tau - h_hat) / tau +
                             coef * 0.7 * likelihood_score_h(fx.lm, hc, s_hat);
    CHECK((next.h_tau - h_expect).norm() < 1e-10 * h_expect.norm());
    for (std::size_t k = 0; k < 2; ++k) {
      const RVector e = st.s_tau[k] - dt * (st.s_tau[k] - s_hat[k]) / tau +
                        coef * cfg.beta_s[k] * likelihood_score_s(fx.lm, hc, s_hat, k);
      CHECK((next.s_tau[k] - e).norm() < 1e-10 * e.norm());
    }
  }

  TEST_CASE("first step carries no guidance") {
    const SystemDims d = small_dims(1, 1, 2, 2, 0.1);
    const Fixture fx = make_fixture(d, PilotKind::kPilotOnly, 0.0, 1, 10);
    const GmmPrior hp = GmmPrior::standard_normal(4);
    const PriorSet priors = gaussian_priors(fx, hp);
    PfmConfig cfg;
    cfg.beta_h = 100.0;
    FlowState st;
    Rng rng(11);
    st.h_tau = rng.normal_vector(4);
    const FlowState next = pfm_step(st, fx.lm, priors, cfg);
    // Unit Gaussian at tau = 1: V = x, so x <- (1 - dt) x.
    CHECK((next.h_tau - (1.0 - cfg.delta_tau) * st.h_tau).norm() < 1e-14);
  }

  TEST_CASE("zero guidance samples the prior") {
    const SystemDims d = small_dims(1, 1, 1, 1, 1.0);
    const Fixture fx = make_fixture(d, PilotKind::kPilotOnly, 0.0, 1, 12);
    RVector mean(2);
    mean << 1.0, -0.5;
    RMatrix cov(2, 2);
    cov << 1.0, 0.6, 0.6, 0.8;
    const GmmPrior hp = GmmPrior::gaussian(mean, cov);
    const PriorSet priors = gaussian_priors(fx, hp);
    PfmConfig cfg;
    cfg.delta_tau = 0.01;
    cfg.beta_h = 0.0;
    const int n = 4000;
    RVector acc = RVector::Zero(2);
    RMatrix acc2 = RMatrix::Zero(2, 2);
    for (int i = 0; i < n; ++i) {
      cfg.seed = static_cast<std::uint64_t>(i);
      const RVector h = tensor_to_real(pfm_decode(fx.lm, priors, cfg).h.h);
      acc += h;
      acc2 += h * h.transpose();
    }
    acc /= n;
    acc2 /= n;
    const RMatrix c = acc2 - acc * acc.transpose();
    CHECK((acc - mean).norm() < 0.06);
    CHECK((c - cov).norm() / cov.norm() < 0.08);
  }

  TEST_CASE("NFE equals the number of steps") {
    const SystemDims d = small_dims(2, 2, 6, 3, 0.7);
    const Fixture fx = make_fixture(d, PilotKind::kOrthogonal, 1.0 / 3.0, 5, 13);
    auto hc = std::make_shared<CountingVelocityField>(
        std::make_shared<GmmVelocityField>(GmmPrior::standard_normal(24)));
    auto sc = std::make_shared<CountingVelocityField>(
        std::make_shared<GmmVelocityField>(GmmPrior::standard_normal(5)));
    PriorSet priors{hc, {sc, std::make_shared<GmmVelocityField>(GmmPrior::standard_normal(5))}};
    PfmConfig cfg;
    cfg.delta_tau = 0.02;
    const PfmResult r = pfm_decode(fx.lm, priors, cfg);
    CHECK(r.nfe_per_variable == 50);
    CHECK(hc->count() == 50);
    CHECK(sc->count() == 50);
    cfg.n_average = 3;
    pfm_decode(fx.lm, priors, cfg);
    CHECK(hc->count() == 50 + 150);
  }

  TEST_CASE("high-SNR pilot decoding recovers the channel") {
    const SystemDims d = small_dims(1, 1, 4, 2, 1e-4);
    const Fixture fx = make_fixture(d, PilotKind::kPilotOnly, 0.0, 1, 14);
    const PriorSet priors = gaussian_priors(fx, make_channel_prior({}, d));
    PfmConfig cfg;
    cfg.delta_tau = 0.005;
    // Guidance without the Tweedie Jacobian needs a large weight at high SNR.
    cfg.beta_h = 100.0;
    const PfmResult r = pfm_decode(fx.lm, priors, cfg, GroundTruth{fx.h, fx.x});
    const double nmse = (r.h.h - fx.h.h).squared_norm() / fx.h.h.squared_norm();
    CHECK(to_db(nmse) <= -20.0);
  }

  TEST_CASE("noiseless identity encoder with known channel recovers the source") {
    const SystemDims d = small_dims(2, 1, 1, 2, 1e-6);
    LikelihoodModel lm;
    lm.dims = d;
    lm.noise_var = d.noise_var;
    lm.scheme = make_pilot_scheme(PilotKind::kNone, 0.0, 0.5, d, 1);
    lm.encoders.emplace_back(CMatrix::Identity(2, 2), 4, 2, 1, 1.0, 1.0, 1e6);
    Rng rng(3);
    ChannelTensor h{CTensor3(2, 1, 2)};
    for (auto& z : h.h.data()) z = rng.complex_normal(1.0);
    const std::vector<SourceVector> s{rng.normal_vector(4)};
    lm.y = transmit(build_transmit(lm, s), h, d.noise_var, 5);
    // Known H: a channel prior collapsed onto the truth.
    PriorSet priors;
    priors.channel = std::make_shared<GmmVelocityField>(
        GmmPrior::gaussian(tensor_to_real(h.h), 1e-10 * RMatrix::Identity(8, 8)));
    priors.sources.push_back(std::make_shared<GmmVelocityField>(GmmPrior::standard_normal(4)));
    PfmConfig cfg;
    cfg.delta_tau = 0.005;
    cfg.beta_h = 0.0;
    cfg.beta_s = {200.0};
    const PfmResult r = pfm_decode(lm, priors, cfg);
    CHECK(to_db((r.s[0] - s[0]).squaredNorm() / s[0].squaredNorm()) <= -40.0);
  }

  TEST_CASE("decoder is deterministic and traces every step") {
    const SystemDims d = small_dims(2, 2, 6, 3, 0.7);
    const Fixture fx = make_fixture(d, PilotKind::kOrthogonal, 1.0 / 3.0, 5, 15);
    const PriorSet priors = gaussian_priors(fx, make_channel_prior({}, d));
    PfmConfig cfg;
    cfg.delta_tau = 0.05;
    cfg.seed = 99;
    const PfmResult a = pfm_decode(fx.lm, priors, cfg, GroundTruth{fx.h, fx.x});
    const PfmResult b = pfm_decode(fx.lm, priors, cfg, GroundTruth{fx.h, fx.x});
    CHECK((a.h.h - b.h.h).squared_norm() == 0.0);
    CHECK((a.s[1] - b.s[1]).norm() == 0.0);
    REQUIRE(a.trace.size() == 21);
    CHECK(a.trace.front().tau == 1.0);
    CHECK(a.trace.back().tau == doctest::Approx(0.0));
    CHECK(std::isfinite(a.trace.back().nmse_h_vs_truth));
    std::ostringstream os;
    write_trace_csv(os, a.trace);
    const std::string csv = os.str();
    CHECK(csv.rfind("step,tau,residual_norm,nmse_h_vs_truth,nmse_x_vs_truth\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 22);
  }

  TEST_CASE("non-finite observations raise a numerical error") {
    const SystemDims d = small_dims(1, 1, 2, 2, 0.1);
    Fixture fx = make_fixture(d, PilotKind::kPilotOnly, 0.0, 1, 16);
    fx.lm.y.y(0, 1, 1) = {std::nan(""), 0.0};
    const PriorSet priors = gaussian_priors(fx, GmmPrior::standard_normal(4));
    CHECK_THROWS_AS(pfm_decode(fx.lm, priors, PfmConfig{}), NumericalError);
  }

  TEST_CASE("prior set validation") {
    const SystemDims d = small_dims(1, 1, 2, 2, 0.1);
    const Fixture fx = make_fixture(d, PilotKind::kPilotOnly, 0.0, 1, 17);
    const PriorSet wrong = gaussian_priors(fx, GmmPrior::standard_normal(6));
    CHECK_THROWS_AS(pfm_decode(fx.lm, wrong, PfmConfig{}), std::invalid_argument);
  }
}
