// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dupfm/encoder.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dupfm/io.hpp"

namespace dupfm {

CVector complexify(const SourceVector& s) {
  const Eigen::Index mc = (s.size() + 1) / 2;
  CVector c(mc);
  for (Eigen::Index j = 0; j < mc; ++j) {
    const double im = 2 * j + 1 < s.size() ? s(2 * j + 1) : 0.0;
    c(j) = cdouble(s(2 * j), im);
  }
  return c;
}

SourceVector realify(const CVector& c, std::size_t m) {
  if (static_cast<std::size_t>(c.size()) != (m + 1) / 2) throw std::invalid_argument("realify");
  SourceVector s(static_cast<Eigen::Index>(m));
  for (Eigen::Index j = 0; j < c.size(); ++j) {
    s(2 * j) = c(j).real();
    if (2 * j + 1 < s.size()) s(2 * j + 1) = c(j).imag();
  }
  return s;
}

CMatrix complexified_second_moment(const RMatrix& m2) {
  const Eigen::Index m = m2.rows();
  const Eigen::Index mc = (m + 1) / 2;
  auto at = [&](Eigen::Index i, Eigen::Index j) { return (i < m && j < m) ? m2(i, j) : 0.0; };
  CMatrix c(mc, mc);
  for (Eigen::Index j = 0; j < mc; ++j) {
    for (Eigen::Index l = 0; l < mc; ++l) {
      c(j, l) = cdouble(at(2 * j, 2 * l) + at(2 * j + 1, 2 * l + 1),
                        at(2 * j + 1, 2 * l) - at(2 * j, 2 * l + 1));
    }
  }
  return c;
}

LinearEncoder::LinearEncoder(CMatrix g, std::size_t m, std::size_t n_f, std::size_t t_data,
                             double scale, double power_p, double overflow_factor)
    : g_(std::move(g)),
      m_(m),
      n_f_(n_f),
      t_data_(t_data),
      scale_(scale),
      power_p_(power_p),
      overflow_factor_(overflow_factor) {
  if (m == 0) throw std::invalid_argument("LinearEncoder: m must be >= 1");
  if (static_cast<std::size_t>(g_.rows()) != n_f * t_data ||
      static_cast<std::size_t>(g_.cols()) != (m + 1) / 2) {
    throw std::invalid_argument("LinearEncoder: G must be (n_f t_data) x ceil(m/2)");
  }
  if (!(scale > 0.0) || !(power_p > 0.0) || !(overflow_factor >= 1.0)) {
    throw std::invalid_argument("LinearEncoder: scale, power_p > 0 and overflow_factor >= 1");
  }
}

LinearEncoder LinearEncoder::calibrated(CMatrix g, std::size_t m, std::size_t n_f,
                                        std::size_t t_data, double power_p,
                                        const GmmPrior& source_prior, double overflow_factor) {
  if (source_prior.dim() != m) throw std::invalid_argument("calibrated: source prior dim != m");
  const CMatrix cc = complexified_second_moment(source_prior.second_moment());
  const double raw = (g * cc * g.adjoint()).trace().real();
  if (!(raw > 0.0)) throw std::invalid_argument("calibrated: zero codeword power");
  const double scale = std::sqrt(static_cast<double>(n_f * t_data) * power_p / raw);
  return LinearEncoder(std::move(g), m, n_f, t_data, scale, power_p, overflow_factor);
}

LinearEncoder LinearEncoder::random(const GmmPrior& source_prior, std::size_t n_f,
                                    std::size_t t_data, double power_p, std::uint64_t seed,
                                    double overflow_factor) {
  const std::size_t m = source_prior.dim();
  const auto mc = static_cast<Eigen::Index>((m + 1) / 2);
  const auto n = static_cast<Eigen::Index>(n_f * t_data);
  if (n == 0) throw std::invalid_argument("LinearEncoder::random: no data symbols");
  Rng rng(seed);
  CMatrix g;
  if (mc <= n) {
    const CMatrix a = rng.complex_normal_matrix(n, mc, 1.0);
    g = Eigen::HouseholderQR<CMatrix>(a).householderQ() * CMatrix::Identity(n, mc);
  } else {
    const CMatrix cc = complexified_second_moment(source_prior.second_moment());
    Eigen::SelfAdjointEigenSolver<CMatrix> es(cc);
    const CMatrix top = es.eigenvectors().rightCols(n);
    const CMatrix a = rng.complex_normal_matrix(n, n, 1.0);
    const CMatrix q = Eigen::HouseholderQR<CMatrix>(a).householderQ();
    g = q * top.adjoint();
  }
  return calibrated(std::move(g), m, n_f, t_data, power_p, source_prior, overflow_factor);
}

bool LinearEncoder::lossless() const {
  if (g_.cols() > g_.rows()) return false;
  Eigen::JacobiSVD<CMatrix> svd(g_);
  const RVector& sv = svd.singularValues();
  return sv(sv.size() - 1) > 1e-10 * sv(0);
}

RMatrix LinearEncoder::real_map() const {
  const auto n = g_.rows();
  RMatrix a(2 * n, static_cast<Eigen::Index>(m_));
  for (Eigen::Index j = 0; j < g_.cols(); ++j) {
    const CVector col = scale_ * g_.col(j);
    a.col(2 * j).head(n) = col.real();
    a.col(2 * j).tail(n) = col.imag();
    if (2 * j + 1 < static_cast<Eigen::Index>(m_)) {
      a.col(2 * j + 1).head(n) = -col.imag();
      a.col(2 * j + 1).tail(n) = col.real();
    }
  }
  return a;
}

SourceVector LinearEncoder::decode_pinv(const CMatrix& codeword) const {
  if (static_cast<std::size_t>(codeword.rows()) != n_f_ ||
      static_cast<std::size_t>(codeword.cols()) != t_data_) {
    throw std::invalid_argument("decode_pinv: codeword shape");
  }
  const CVector v = codeword.reshaped();
  return real_map().completeOrthogonalDecomposition().solve(to_real(v));
}

CMatrix encode(const LinearEncoder& enc, const SourceVector& s) {
  if (static_cast<std::size_t>(s.size()) != enc.m()) throw std::invalid_argument("encode: length");
  const CVector v = enc.scale() * (enc.g() * complexify(s));
  const double power = v.squaredNorm();
  if (power > enc.overflow_factor() * enc.budget()) {
    throw std::runtime_error("power overflow: codeword power " + std::to_string(power) +
                             " exceeds " + std::to_string(enc.overflow_factor()) +
                             " x budget " + std::to_string(enc.budget()));
  }
  return v.reshaped(static_cast<Eigen::Index>(enc.n_f()), static_cast<Eigen::Index>(enc.t_data()));
}

CMatrix encoder_jacobian(const LinearEncoder& enc, const SourceVector& s) {
  if (static_cast<std::size_t>(s.size()) != enc.m()) throw std::invalid_argument("jacobian: length");
  CMatrix j(static_cast<Eigen::Index>(enc.n_codeword()), static_cast<Eigen::Index>(enc.m()));
  for (Eigen::Index c = 0; c < enc.g().cols(); ++c) {
    j.col(2 * c) = enc.scale() * enc.g().col(c);
    if (2 * c + 1 < j.cols()) j.col(2 * c + 1) = cdouble(0.0, 1.0) * enc.scale() * enc.g().col(c);
  }
  return j;
}

void save_encoder(const std::filesystem::path& path, const LinearEncoder& enc) {
  nlohmann::json h;
  h["kind"] = "linear_encoder";
  h["schema"] = 1;
  h["m"] = enc.m();
  h["n_f"] = enc.n_f();
  h["t_data"] = enc.t_data();
  h["scale"] = enc.scale();
  h["power_p"] = enc.power_p();
  h["overflow_factor"] = enc.overflow_factor();
  h["rows"] = enc.g().rows();
  h["cols"] = enc.g().cols();
  std::vector<double> payload;
  for (Eigen::Index i = 0; i < enc.g().size(); ++i) {
    payload.push_back(enc.g().data()[i].real());
    payload.push_back(enc.g().data()[i].imag());
  }
  io::write_binary(path, h, payload);
}

LinearEncoder load_encoder(const std::filesystem::path& path) {
  auto [h, p] = io::read_binary(path);
  if (h.value("kind", "") != "linear_encoder") throw ConfigError("not a linear_encoder file");
  const auto rows = h.at("rows").get<Eigen::Index>();
  const auto cols = h.at("cols").get<Eigen::Index>();
  if (p.size() != static_cast<std::size_t>(2 * rows * cols)) throw ConfigError("encoder payload");
  CMatrix g(rows, cols);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = {p[2 * i], p[2 * i + 1]};
  return LinearEncoder(std::move(g), h.at("m").get<std::size_t>(), h.at("n_f").get<std::size_t>(),
                       h.at("t_data").get<std::size_t>(), h.at("scale").get<double>(),
                       h.at("power_p").get<double>(), h.at("overflow_factor").get<double>());
}

PilotKind parse_pilot_kind(const std::string& s) {
  if (s == "none") return PilotKind::kNone;
  if (s == "orthogonal" || s == "op") return PilotKind::kOrthogonal;
  if (s == "superimposed" || s == "sp") return PilotKind::kSuperimposed;
  if (s == "pilot_only") return PilotKind::kPilotOnly;
  throw ConfigError("unknown pilot scheme: " + s);
}

std::string to_string(PilotKind k) {
  switch (k) {
    case PilotKind::kNone:
      return "none";
    case PilotKind::kOrthogonal:
      return "orthogonal";
    case PilotKind::kSuperimposed:
      return "superimposed";
    case PilotKind::kPilotOnly:
      return "pilot_only";
  }
  return "?";
}

std::size_t PilotScheme::t_data() const {
  switch (kind) {
    case PilotKind::kNone:
    case PilotKind::kSuperimposed:
      return t_s;
    case PilotKind::kOrthogonal:
      return t_s - t_pilot();
    case PilotKind::kPilotOnly:
      return 0;
  }
  return 0;
}

double PilotScheme::data_gain() const {
  return kind == PilotKind::kSuperimposed ? std::sqrt(1.0 - rho) : 1.0;
}

CTensor3 PilotScheme::pilot_grid(std::size_t n_t) const {
  CTensor3 grid(pilots.dim(0), t_s, n_t);
  const double g = kind == PilotKind::kSuperimposed ? std::sqrt(rho) : 1.0;
  for (std::size_t k = 0; k < pilots.dim(2); ++k) {
    for (std::size_t t = 0; t < t_pilot(); ++t) {
      for (std::size_t f = 0; f < pilots.dim(0); ++f) grid(f, t, k) = g * pilots(f, t, k);
    }
  }
  return grid;
}

PilotScheme make_pilot_scheme(PilotKind kind, double alpha, double rho, const SystemDims& dims,
                              std::uint64_t seed) {
  PilotScheme s;
  s.kind = kind;
  s.alpha = alpha;
  s.rho = rho;
  s.t_s = dims.t_s;
  std::size_t tp = 0;
  switch (kind) {
    case PilotKind::kNone:
      break;
    case PilotKind::kOrthogonal: {
      if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("orthogonal pilots: alpha outside [0, 1)");
      const double raw = alpha * static_cast<double>(dims.t_s);
      tp = static_cast<std::size_t>(std::llround(raw));
      if (std::abs(raw - static_cast<double>(tp)) > 1e-9) {
        throw ConfigError("orthogonal pilots: alpha * t_s is not an integer");
      }
      if (tp > 0 && tp < dims.n_t) throw ConfigError("orthogonal pilots: alpha * t_s < n_t");
      break;
    }
    case PilotKind::kSuperimposed:
      if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("superimposed pilots: rho outside (0, 1)");
      tp = dims.t_s;
      break;
    case PilotKind::kPilotOnly:
      tp = dims.t_s;
      break;
  }
  if (tp > 0 && tp < dims.n_t) throw ConfigError("pilots: fewer pilot symbols than transmitters");
  s.pilots = CTensor3(dims.n_f, tp, dims.n_t);
  Rng rng(seed);
  const double amp = std::sqrt(dims.power_p);
  for (std::size_t f = 0; f < dims.n_f; ++f) {
    for (std::size_t t = 0; t < tp; ++t) {
      const cdouble phase = std::polar(1.0, 2.0 * std::numbers::pi * rng.uniform());
      for (std::size_t k = 0; k < dims.n_t; ++k) {
        const double ang = -2.0 * std::numbers::pi * static_cast<double>(t * k) / static_cast<double>(tp);
        s.pilots(f, t, k) = amp * phase * std::polar(1.0, ang);
      }
    }
  }
  return s;
}

TransmitTensor assemble_block(std::span<const CMatrix> codewords, const PilotScheme& scheme,
                              const SystemDims& dims, double overflow_factor) {
  if (scheme.t_s != dims.t_s) throw std::invalid_argument("assemble_block: scheme t_s mismatch");
  TransmitTensor out{scheme.pilot_grid(dims.n_t)};
  if (!scheme.has_users()) {
    if (!codewords.empty()) throw std::invalid_argument("assemble_block: pilot-only block takes no data");
  } else {
    if (codewords.size() != dims.n_t) throw std::invalid_argument("assemble_block: need n_t codewords");
    const std::size_t td = scheme.t_data();
    const std::size_t t0 = scheme.kind == PilotKind::kOrthogonal ? scheme.t_pilot() : 0;
    const double gain = scheme.data_gain();
    for (std::size_t k = 0; k < dims.n_t; ++k) {
      const CMatrix& c = codewords[k];
      if (static_cast<std::size_t>(c.rows()) != dims.n_f || static_cast<std::size_t>(c.cols()) != td) {
        throw std::invalid_argument("assemble_block: codeword must be n_f x t_data");
      }
      for (std::size_t t = 0; t < td; ++t) {
        for (std::size_t f = 0; f < dims.n_f; ++f) {
          out.x(f, t0 + t, k) += gain * c(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t));
        }
      }
    }
  }
  out.check_power(dims.power_p, overflow_factor);
  return out;
}

}  // namespace dupfm
