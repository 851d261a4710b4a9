// Copyright 2026 The dupfm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace dupfm {

using cdouble = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

// Rank-3 complex tensor, column-major (first index fastest).
class CTensor3 {
 public:
  CTensor3() = default;
  CTensor3(std::size_t d1, std::size_t d2, std::size_t d3);
  CTensor3(std::array<std::size_t, 3> dims, std::vector<cdouble> data);

  const std::array<std::size_t, 3>& dims() const { return dims_; }
  std::size_t dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  const std::vector<cdouble>& data() const { return data_; }
  std::vector<cdouble>& data() { return data_; }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return i + dims_[0] * (j + dims_[1] * k);
  }
  cdouble operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[index(i, j, k)];
  }
  cdouble& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[index(i, j, k)];
  }

  // Slice t(i, :, :) as a d2 x d3 matrix.
  CMatrix slice(std::size_t i) const;
  void set_slice(std::size_t i, const CMatrix& m);

  bool same_shape(const CTensor3& o) const { return dims_ == o.dims_; }
  bool all_finite() const;
  double squared_norm() const;

  CTensor3 operator+(const CTensor3& o) const;
  CTensor3 operator-(const CTensor3& o) const;
  CTensor3 operator*(cdouble a) const;

 private:
  std::array<std::size_t, 3> dims_{0, 0, 0};
  std::vector<cdouble> data_;
};

// Two equal-length real arrays encoding a complex vector.
struct RealIso {
  std::vector<double> re;
  std::vector<double> im;
};

CVector vectorize(const CTensor3& t);
CTensor3 devectorize(const CVector& v, std::array<std::size_t, 3> dims);

CMatrix direct_sum(std::span<const CMatrix> blocks);
CMatrix kron(const CMatrix& a, const CMatrix& b);

// Real gradient (d/dRe, d/dIm) <-> conjugate Wirtinger score. Score = (re + i im) / 2.
CVector real_to_complex_score(const RealIso& g);
RealIso complex_to_real_score(const CVector& s);

// Stacked real embedding [Re z; Im z].
RVector to_real(const CVector& z);
CVector from_real(const RVector& x);
RVector tensor_to_real(const CTensor3& t);
CTensor3 tensor_from_real(const RVector& x, std::array<std::size_t, 3> dims);

// Real representation [[Re A, -Im A], [Im A, Re A]] acting on [Re z; Im z].
RMatrix real_embed(const CMatrix& a);

}  // namespace dupfm
