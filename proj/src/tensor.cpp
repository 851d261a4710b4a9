// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#include "dupfm/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace dupfm {

CTensor3::CTensor3(std::size_t d1, std::size_t d2, std::size_t d3)
    : dims_{d1, d2, d3}, data_(d1 * d2 * d3, cdouble(0.0, 0.0)) {}

CTensor3::CTensor3(std::array<std::size_t, 3> dims, std::vector<cdouble> data)
    : dims_(dims), data_(std::move(data)) {
  if (data_.size() != dims_[0] * dims_[1] * dims_[2]) {
    throw std::invalid_argument("CTensor3: data length does not match dims");
  }
}

CMatrix CTensor3::slice(std::size_t i) const {
  CMatrix m(static_cast<Eigen::Index>(dims_[1]), static_cast<Eigen::Index>(dims_[2]));
  for (std::size_t k = 0; k < dims_[2]; ++k) {
    for (std::size_t j = 0; j < dims_[1]; ++j) {
      m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = (*this)(i, j, k);
    }
  }
  return m;
}

void CTensor3::set_slice(std::size_t i, const CMatrix& m) {
  if (static_cast<std::size_t>(m.rows()) != dims_[1] ||
      static_cast<std::size_t>(m.cols()) != dims_[2]) {
    throw std::invalid_argument("CTensor3::set_slice: shape mismatch");
  }
  for (std::size_t k = 0; k < dims_[2]; ++k) {
    for (std::size_t j = 0; j < dims_[1]; ++j) {
      (*this)(i, j, k) = m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
    }
  }
}

bool CTensor3::all_finite() const {
  for (const auto& z : data_) {
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
  }
  return true;
}

double CTensor3::squared_norm() const {
  double acc = 0.0;
  for (const auto& z : data_) acc += std::norm(z);
  return acc;
}

CTensor3 CTensor3::operator+(const CTensor3& o) const {
  if (!same_shape(o)) throw std::invalid_argument("CTensor3 +: shape mismatch");
  CTensor3 r = *this;
  for (std::size_t i = 0; i < data_.size(); ++i) r.data_[i] += o.data_[i];
  return r;
}

CTensor3 CTensor3::operator-(const CTensor3& o) const {
  if (!same_shape(o)) throw std::invalid_argument("CTensor3 -: shape mismatch");
  CTensor3 r = *this;
  for (std::size_t i = 0; i < data_.size(); ++i) r.data_[i] -= o.data_[i];
  return r;
}

CTensor3 CTensor3::operator*(cdouble a) const {
  CTensor3 r = *this;
  for (auto& z : r.data_) z *= a;
  return r;
}

CVector vectorize(const CTensor3& t) {
  CVector v(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) v(static_cast<Eigen::Index>(i)) = t.data()[i];
  return v;
}

CTensor3 devectorize(const CVector& v, std::array<std::size_t, 3> dims) {
  std::vector<cdouble> data(v.data(), v.data() + v.size());
  return CTensor3(dims, std::move(data));
}

CMatrix direct_sum(std::span<const CMatrix> blocks) {
  if (blocks.empty()) throw std::invalid_argument("direct_sum: no blocks");
  Eigen::Index rows = 0, cols = 0;
  for (const auto& b : blocks) {
    rows += b.rows();
    cols += b.cols();
  }
  CMatrix out = CMatrix::Zero(rows, cols);
  Eigen::Index r0 = 0, c0 = 0;
  for (const auto& b : blocks) {
    out.block(r0, c0, b.rows(), b.cols()) = b;
    r0 += b.rows();
    c0 += b.cols();
  }
  return out;
}

CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

CVector real_to_complex_score(const RealIso& g) {
  if (g.re.size() != g.im.size()) {
    throw std::invalid_argument("real_to_complex_score: re/im length mismatch");
  }
  CVector s(static_cast<Eigen::Index>(g.re.size()));
  for (std::size_t i = 0; i < g.re.size(); ++i) {
    s(static_cast<Eigen::Index>(i)) = 0.5 * cdouble(g.re[i], g.im[i]);
  }
  return s;
}

RealIso complex_to_real_score(const CVector& s) {
  RealIso g;
  g.re.resize(static_cast<std::size_t>(s.size()));
  g.im.resize(static_cast<std::size_t>(s.size()));
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    g.re[static_cast<std::size_t>(i)] = 2.0 * s(i).real();
    g.im[static_cast<std::size_t>(i)] = 2.0 * s(i).imag();
  }
  return g;
}

RVector to_real(const CVector& z) {
  const Eigen::Index n = z.size();
  RVector x(2 * n);
  x.head(n) = z.real();
  x.tail(n) = z.imag();
  return x;
}

CVector from_real(const RVector& x) {
  if (x.size() % 2 != 0) throw std::invalid_argument("from_real: odd length");
  const Eigen::Index n = x.size() / 2;
  CVector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = cdouble(x(i), x(n + i));
  return z;
}

RVector tensor_to_real(const CTensor3& t) { return to_real(vectorize(t)); }

CTensor3 tensor_from_real(const RVector& x, std::array<std::size_t, 3> dims) {
  return devectorize(from_real(x), dims);
}

RMatrix real_embed(const CMatrix& a) {
  const Eigen::Index r = a.rows(), c = a.cols();
  RMatrix out(2 * r, 2 * c);
  out.topLeftCorner(r, c) = a.real();
  out.topRightCorner(r, c) = -a.imag();
  out.bottomLeftCorner(r, c) = a.imag();
  out.bottomRightCorner(r, c) = a.real();
  return out;
}

}  // namespace dupfm
