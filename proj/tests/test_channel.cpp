// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "dupfm/channel.hpp"

using namespace dupfm;

namespace {

SystemDims dims_of(std::size_t nf, std::size_t nt, std::size_t ts, std::size_t nr) {
  SystemDims d;
  d.n_f = nf;
  d.n_t = nt;
  d.t_s = ts;
  d.n_r = nr;
  return d;
}

}  // namespace

TEST_SUITE("channel_sim") {
  TEST_CASE("scalar channel moments") {
    const SystemDims d = dims_of(1, 1, 1, 1);
    const GmmPrior p = circular_gaussian_prior({CVector::Zero(1), CMatrix::Identity(1, 1)});
    const int n = 100000;
    cdouble mean = 0.0;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      const cdouble h = generate_channel(p, d, static_cast<std::uint64_t>(i)).h(0, 0, 0);
      mean += h;
      var += std::norm(h);
    }
    mean /= n;
    var /= n;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
  }

  TEST_CASE("subspace-supported channel samples stay on the subspace") {
    const SystemDims d = dims_of(1, 2, 1, 2);  // 8 real dims
    Rng rng(1);
    RMatrix a(8, 2);
    a.col(0) = rng.normal_vector(8);
    a.col(1) = rng.normal_vector(8);
    Eigen::HouseholderQR<RMatrix> qr(a);
    const RMatrix u = qr.householderQ() * RMatrix::Identity(8, 2);
    const RVector b = rng.normal_vector(8);
    const GmmPrior p = GmmPrior::subspace(b, u, RVector::Constant(2, 2.0));
    const RMatrix proj = RMatrix::Identity(8, 8) - u * u.transpose();
    for (std::uint64_t s = 0; s < 50; ++s) {
      const RVector x = tensor_to_real(generate_channel(p, d, s).h);
      CHECK((proj * (x - b)).norm() <= 1e-10);
    }
  }

  TEST_CASE("generation is deterministic per seed") {
    const SystemDims d;
    const GmmPrior p = make_channel_prior({}, d);
    const ChannelTensor a = generate_channel(p, d, 5);
    const ChannelTensor b = generate_channel(p, d, 5);
    const ChannelTensor c = generate_channel(p, d, 6);
    CHECK((a.h - b.h).squared_norm() == 0.0);
    CHECK((a.h - c.h).squared_norm() > 0.0);
    CHECK_THROWS_AS(generate_channel(p, dims_of(1, 1, 1, 1), 5), std::invalid_argument);
  }

  TEST_CASE("Kronecker channel covariance") {
    const SystemDims d;
    ChannelPriorSpec spec;
    const ComplexGaussian g = channel_moments(spec, d);
    const auto n = static_cast<Eigen::Index>(d.h_size());
    CHECK(g.cov.rows() == n);
    CHECK((g.cov - g.cov.adjoint()).norm() < 1e-14);
    CHECK(g.cov.trace().real() == doctest::Approx(static_cast<double>(n)));
    Eigen::SelfAdjointEigenSolver<CMatrix> es(g.cov);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    // Entries for (f, k, n) and (f', k, n): freq_corr^|f - f'|.
    CHECK(std::abs(g.cov(0, 2) - std::pow(spec.freq_corr, 2)) < 1e-14);
    // Different transmitters are uncorrelated.
    CHECK(std::abs(g.cov(0, static_cast<Eigen::Index>(d.n_f))) == 0.0);
  }

  TEST_CASE("rank truncation and Rician mean preserve energy") {
    const SystemDims d;
    ChannelPriorSpec spec;
    spec.rank = 5;
    spec.rician_k = 2.0;
    spec.seed = 3;
    const ComplexGaussian g = channel_moments(spec, d);
    Eigen::SelfAdjointEigenSolver<CMatrix> es(g.cov);
    const RVector ev = es.eigenvalues();
    int nonzero = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) nonzero += ev(i) > 1e-10 ? 1 : 0;
    CHECK(nonzero == 5);
    const double energy = g.cov.trace().real() + g.mean.squaredNorm();
    CHECK(energy == doctest::Approx(static_cast<double>(d.h_size())));

    const GmmPrior p = circular_gaussian_prior(g);
    CHECK(p.components()[0].rank() == 10);  // 5 complex directions
    const ComplexGaussian back = complex_moments(p);
    CHECK((back.mean - g.mean).norm() < 1e-12);
    CHECK((back.cov - g.cov).norm() < 1e-10);
  }

  TEST_CASE("complex moments of a circular prior") {
    const SystemDims d = dims_of(2, 1, 1, 2);
    const ComplexGaussian g = channel_moments({0.3, 0.6, 0.0, 0, 0}, d);
    const ComplexGaussian back = complex_moments(circular_gaussian_prior(g));
    CHECK((back.cov - g.cov).norm() < 1e-12);
    CHECK(back.mean.norm() == 0.0);
  }

  TEST_CASE("noiseless transmission") {
    const SystemDims d;
    Rng rng(7);
    TransmitTensor x{CTensor3(d.n_f, d.t_s, d.n_t)};
    for (auto& z : x.x.data()) z = rng.complex_normal(1.0);
    const ChannelTensor h = generate_channel(make_channel_prior({}, d), d, 8);
    const ReceiveTensor y = transmit(x, h, 0.0, 9);
    CHECK(y.w.squared_norm() == 0.0);
    for (std::size_t f = 0; f < d.n_f; ++f) {
      CHECK((y.y.slice(f) - x.x.slice(f) * h.h.slice(f)).norm() < 1e-13);
    }
    CHECK_THROWS_AS(csnr(y), std::domain_error);
  }

  TEST_CASE("zero input gives pure noise") {
    const SystemDims d;
    const TransmitTensor x{CTensor3(d.n_f, d.t_s, d.n_t)};
    const ChannelTensor h = generate_channel(make_channel_prior({}, d), d, 1);
    const ReceiveTensor y = transmit(x, h, 0.5, 2);
    CHECK((y.y - y.w).squared_norm() == 0.0);
    CHECK(y.w.squared_norm() > 0.0);
  }

  TEST_CASE("SISO arithmetic") {
    const TransmitTensor x{CTensor3({1, 1, 1}, {cdouble(2.0, 0.0)})};
    const ChannelTensor h{CTensor3({1, 1, 1}, {cdouble(3.0, 0.0)})};
    const ReceiveTensor y = transmit(x, h, 0.01, 3);
    CHECK(y.y(0, 0, 0) == cdouble(6.0, 0.0) + y.w(0, 0, 0));
    ReceiveTensor manual{CTensor3({1, 1, 1}, {cdouble(6.1, 0.0)}), CTensor3({1, 1, 1}, {cdouble(0.1, 0.0)})};
    CHECK((manual.y - manual.w)(0, 0, 0).real() == doctest::Approx(6.0));
  }

  TEST_CASE("CSNR definition") {
    ReceiveTensor r{CTensor3({2, 1, 1}, {cdouble(3.0, 0.0), cdouble(1.0, 0.0)}),
                    CTensor3({2, 1, 1}, {cdouble(0.0, 0.0), cdouble(1.0, 0.0)})};
    // ||Y - W||^2 = 9 + 0, ||W||^2 = 1
    CHECK(csnr(r) == doctest::Approx(10.0 * std::log10(9.0)));
    ReceiveTensor ten{CTensor3({1, 1, 2}, {cdouble(std::sqrt(10.0) + 1.0, 0.0), cdouble(0.0, 0.0)}),
                      CTensor3({1, 1, 2}, {cdouble(1.0, 0.0), cdouble(0.0, 0.0)})};
    CHECK(csnr(ten) == doctest::Approx(10.0));
    ReceiveTensor zero_db{CTensor3({1, 1, 1}, {cdouble(1.0, 1.0)}), CTensor3({1, 1, 1}, {cdouble(0.0, 1.0)})};
    CHECK(csnr(zero_db) == doctest::Approx(0.0));
  }

  TEST_CASE("power check") {
    TransmitTensor x{CTensor3(2, 3, 2)};
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t f = 0; f < 2; ++f) x.x(f, t, 0) = 1.0;
    }
    CHECK(x.user_power(0) == 6.0);
    CHECK(x.user_power(1) == 0.0);
    CHECK_NOTHROW(x.check_power(1.0, 1.0));
    CHECK_THROWS_WITH_AS(x.check_power(0.5, 1.5), doctest::Contains("power overflow"), std::runtime_error);
  }

  TEST_CASE("dims validation") {
    SystemDims d;
    CHECK(d.fim_side() == 112);
    CHECK(d.rank_bound() == 96);
    d.n_t = 0;
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
  }
}
