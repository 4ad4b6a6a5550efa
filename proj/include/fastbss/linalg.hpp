#pragma once

// Small dense complex matrices (M roughly 2..16) and the kernels every model
// update leans on. Heavy lifting for the general-purpose operations goes
// through Eigen; the per-bin hot path uses the span kernels at the bottom.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "fastbss/error.hpp"

namespace fastbss {

using cdouble = std::complex<double>;

/// Relative floor applied to eigenvalues whenever a matrix is projected onto
/// the PSD cone.
inline constexpr double kEigenFloor = 1e-12;
/// Matrices whose condition estimate exceeds this are treated as singular.
inline constexpr double kMaxCondition = 1e12;

class ComplexMatrix {
 public:
  using EigenType = Eigen::Matrix<cdouble, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  ComplexMatrix() = default;
  ComplexMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}
  ComplexMatrix(std::size_t rows, std::size_t cols, std::span<const cdouble> values)
      : rows_(rows), cols_(cols), data_(values.begin(), values.end()) {
    require(values.size() == rows * cols, "ComplexMatrix: value count does not match shape");
  }
  ComplexMatrix(std::initializer_list<std::initializer_list<cdouble>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      require(row.size() == cols_, "ComplexMatrix: ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static ComplexMatrix identity(std::size_t n) {
    ComplexMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static ComplexMatrix diagonal(std::span<const double> values) {
    ComplexMatrix m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
    return m;
  }
  static ComplexMatrix from_eigen(const EigenType& e) {
    ComplexMatrix m(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
    Eigen::Map<EigenType>(m.data_.data(), e.rows(), e.cols()) = e;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  cdouble& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const cdouble& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<cdouble> values() noexcept { return data_; }
  std::span<const cdouble> values() const noexcept { return data_; }

  Eigen::Map<const EigenType> eigen() const {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }
  Eigen::Map<EigenType> eigen() {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }

  ComplexMatrix adjoint() const {
    ComplexMatrix out(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) out(j, i) = std::conj((*this)(i, j));
    return out;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (const auto& v : data_) s += std::norm(v);
    return std::sqrt(s);
  }

  cdouble trace() const {
    cdouble s = 0.0;
    for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) s += (*this)(i, i);
    return s;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](const cdouble& v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); });
  }

  ComplexMatrix& operator+=(const ComplexMatrix& o) {
    require(rows_ == o.rows_ && cols_ == o.cols_, "ComplexMatrix: shape mismatch in +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  ComplexMatrix& operator-=(const ComplexMatrix& o) {
    require(rows_ == o.rows_ && cols_ == o.cols_, "ComplexMatrix: shape mismatch in -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  ComplexMatrix& operator*=(cdouble s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix& b) { return a += b; }
  friend ComplexMatrix operator-(ComplexMatrix a, const ComplexMatrix& b) { return a -= b; }
  friend ComplexMatrix operator*(ComplexMatrix a, cdouble s) { return a *= s; }
  friend ComplexMatrix operator*(cdouble s, ComplexMatrix a) { return a *= s; }
  friend ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b) {
    require(a.cols_ == b.rows_, "ComplexMatrix: shape mismatch in product");
    ComplexMatrix out(a.rows_, b.cols_);
    for (std::size_t i = 0; i < a.rows_; ++i)
      for (std::size_t k = 0; k < a.cols_; ++k) {
        const cdouble aik = a(i, k);
        for (std::size_t j = 0; j < b.cols_; ++j) out(i, j) += aik * b(k, j);
      }
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<cdouble> data_;
};

inline double relative_difference(const ComplexMatrix& a, const ComplexMatrix& b) {
  const double scale = std::max(a.frobenius_norm(), b.frobenius_norm());
  return scale == 0.0 ? 0.0 : (a - b).frobenius_norm() / scale;
}

/// (a + a^H) / 2
inline ComplexMatrix hermitian_part(const ComplexMatrix& a) {
  ComplexMatrix out = a + a.adjoint();
  out *= 0.5;
  return out;
}

struct HermitianEig {
  std::vector<double> eigenvalues;  // descending
  ComplexMatrix eigenvectors;       // columns, unitary
};

inline HermitianEig hermitian_eig(const ComplexMatrix& m) {
  require(m.square(), "hermitian_eig: matrix is not square");
  require(m.all_finite(), "hermitian_eig: non-finite entry");
  const double scale = std::max(m.frobenius_norm(), 1e-300);
  require((m - m.adjoint()).frobenius_norm() <= 1e-8 * scale, "hermitian_eig: matrix is not Hermitian");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(Eigen::MatrixXcd(m.eigen()));
  if (solver.info() != Eigen::Success) fail(ErrorKind::numerical_breakdown, "hermitian_eig: solver did not converge");
  const auto n = static_cast<Eigen::Index>(m.rows());
  HermitianEig out{std::vector<double>(m.rows()), ComplexMatrix(m.rows(), m.rows())};
  // Eigen sorts ascending.
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = n - 1 - k;
    out.eigenvalues[static_cast<std::size_t>(k)] = solver.eigenvalues()(src);
    for (Eigen::Index i = 0; i < n; ++i)
      out.eigenvectors(static_cast<std::size_t>(i), static_cast<std::size_t>(k)) = solver.eigenvectors()(i, src);
  }
  return out;
}

/// V diag(w) V^H
inline ComplexMatrix compose_hermitian(const ComplexMatrix& vectors, std::span<const double> values) {
  const std::size_t n = vectors.rows();
  ComplexMatrix out(n, n);
  for (std::size_t k = 0; k < values.size(); ++k)
    for (std::size_t i = 0; i < n; ++i) {
      const cdouble vik = vectors(i, k) * values[k];
      for (std::size_t j = 0; j < n; ++j) out(i, j) += vik * std::conj(vectors(j, k));
    }
  return out;
}

/// Symmetrize and floor the spectrum at kEigenFloor times the largest eigenvalue.
inline ComplexMatrix clamp_psd(const ComplexMatrix& m) {
  auto eig = hermitian_eig(hermitian_part(m));
  const double top = eig.eigenvalues.front();
  if (!(top > 0.0)) fail(ErrorKind::numerical_breakdown, "clamp_psd: matrix has no positive eigenvalue");
  const double floor = kEigenFloor * top;
  bool changed = false;
  for (auto& w : eig.eigenvalues)
    if (w < floor) {
      w = floor;
      changed = true;
    }
  if (!changed) return hermitian_part(m);
  return hermitian_part(compose_hermitian(eig.eigenvectors, eig.eigenvalues));
}

/// Solves a x = b. Throws singular_matrix when the LU condition estimate
/// exceeds kMaxCondition.
inline ComplexMatrix solve(const ComplexMatrix& a, const ComplexMatrix& b) {
  require(a.square(), "solve: coefficient matrix is not square");
  require(a.rows() == b.rows(), "solve: right-hand side has wrong row count");
  require(a.all_finite() && b.all_finite(), "solve: non-finite entry");
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(Eigen::MatrixXcd(a.eigen()));
  const double rcond = lu.rcond();
  if (!(rcond * kMaxCondition > 1.0)) {
    std::ostringstream msg;
    msg << "solve: condition estimate " << (rcond > 0 ? 1.0 / rcond : INFINITY) << " exceeds " << kMaxCondition;
    fail(ErrorKind::singular_matrix, msg.str());
  }
  Eigen::MatrixXcd x = lu.solve(Eigen::MatrixXcd(b.eigen()));
  return ComplexMatrix::from_eigen(x);
}

inline ComplexMatrix inverse(const ComplexMatrix& a) { return solve(a, ComplexMatrix::identity(a.rows())); }

/// Principal square root of a matrix that is similar to a Hermitian PSD
/// matrix (real nonnegative spectrum, diagonalizable), by direct
/// diagonalization. Eigenvalues below kEigenFloor relative are clamped.
inline ComplexMatrix principal_sqrt_similar(const ComplexMatrix& p) {
  require(p.square(), "principal_sqrt_similar: matrix is not square");
  require(p.all_finite(), "principal_sqrt_similar: non-finite entry");
  const auto n = static_cast<Eigen::Index>(p.rows());
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> solver(Eigen::MatrixXcd(p.eigen()));
  if (solver.info() != Eigen::Success)
    fail(ErrorKind::numerical_breakdown, "principal_sqrt_similar: eigen solver did not converge");

  double top = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) top = std::max(top, std::abs(solver.eigenvalues()(k)));
  constexpr double tolerance = 1e-6;
  Eigen::VectorXcd roots(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const cdouble w = solver.eigenvalues()(k);
    if (std::abs(w.imag()) > tolerance * top || w.real() < -tolerance * top) {
      std::ostringstream msg;
      msg << "principal_sqrt_similar: eigenvalue " << w << " is not real nonnegative (largest magnitude " << top
          << ")";
      fail(ErrorKind::numerical_breakdown, msg.str());
    }
    roots(k) = std::sqrt(std::max(w.real(), kEigenFloor * top));
  }
  const Eigen::MatrixXcd& s = solver.eigenvectors();
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(s);
  if (!(lu.rcond() * kMaxCondition > 1.0))
    fail(ErrorKind::numerical_breakdown, "principal_sqrt_similar: eigenvector matrix is singular (defective input)");
  Eigen::MatrixXcd root = s * roots.asDiagonal() * lu.inverse();
  return ComplexMatrix::from_eigen(root);
}

/// Hermitian square root (and inverse square root) of a PSD matrix.
inline ComplexMatrix hermitian_sqrt(const ComplexMatrix& m, bool inverse_root = false) {
  auto eig = hermitian_eig(hermitian_part(m));
  const double top = eig.eigenvalues.front();
  if (!(top > 0.0)) fail(ErrorKind::numerical_breakdown, "hermitian_sqrt: matrix has no positive eigenvalue");
  for (auto& w : eig.eigenvalues) {
    w = std::sqrt(std::max(w, kEigenFloor * top));
    if (inverse_root) w = 1.0 / w;
  }
  return hermitian_part(compose_hermitian(eig.eigenvectors, eig.eigenvalues));
}

/// Returns b^{-1} (b c)^{1/2} for Hermitian PD b and Hermitian PSD c,
/// evaluated as b^{-1/2} (b^{1/2} c b^{1/2})^{1/2} b^{-1/2} so only Hermitian
/// eigendecompositions are needed. The result is the Hermitian PSD solution
/// of g b g = c.
inline ComplexMatrix riccati_solution(const ComplexMatrix& b, const ComplexMatrix& c) {
  const ComplexMatrix b_half = hermitian_sqrt(b);
  const ComplexMatrix b_inv_half = hermitian_sqrt(b, true);
  const ComplexMatrix inner = hermitian_sqrt(hermitian_part(b_half * c * b_half));
  return hermitian_part(b_inv_half * inner * b_inv_half);
}

namespace kernel {

// Span kernels for the per-bin loops. Matrices are row-major m x m.

/// Inverts a Hermitian positive-definite matrix through its Cholesky factor
/// and returns log det. `work` needs 2*m*m entries.
inline double hermitian_pd_inverse(std::span<const cdouble> a, std::size_t m, std::span<cdouble> inv,
                                   std::span<cdouble> work) {
  cdouble* l = work.data();
  cdouble* linv = work.data() + m * m;
  double logdet = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double d = a[j * m + j].real();
    for (std::size_t k = 0; k < j; ++k) d -= std::norm(l[j * m + k]);
    if (!(d > 0.0)) fail(ErrorKind::singular_matrix, "hermitian_pd_inverse: matrix is not positive definite");
    const double ljj = std::sqrt(d);
    l[j * m + j] = ljj;
    logdet += 2.0 * std::log(ljj);
    for (std::size_t i = j + 1; i < m; ++i) {
      cdouble s = a[i * m + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * m + k] * std::conj(l[j * m + k]);
      l[i * m + j] = s / ljj;
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    linv[j * m + j] = 1.0 / l[j * m + j].real();
    for (std::size_t i = j + 1; i < m; ++i) {
      cdouble s = 0.0;
      for (std::size_t k = j; k < i; ++k) s -= l[i * m + k] * linv[k * m + j];
      linv[i * m + j] = s / l[i * m + i].real();
    }
  }
  // inv = L^{-H} L^{-1}; only k >= max(i, j) contribute.
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      cdouble s = 0.0;
      for (std::size_t k = i; k < m; ++k) s += std::conj(linv[k * m + i]) * linv[k * m + j];
      inv[i * m + j] = s;
      inv[j * m + i] = std::conj(s);
    }
  for (std::size_t i = 0; i < m; ++i) inv[i * m + i] = inv[i * m + i].real();
  return logdet;
}

/// y = a x for an m x m row-major matrix.
inline void matvec(std::span<const cdouble> a, std::size_t m, std::span<const cdouble> x, std::span<cdouble> y) {
  for (std::size_t i = 0; i < m; ++i) {
    cdouble s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += a[i * m + j] * x[j];
    y[i] = s;
  }
}

/// Re(v^H a v)
inline double quadratic_form(std::span<const cdouble> a, std::size_t m, std::span<const cdouble> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    cdouble row = 0.0;
    for (std::size_t j = 0; j < m; ++j) row += a[i * m + j] * v[j];
    s += (std::conj(v[i]) * row).real();
  }
  return s;
}

/// quadratic_form accumulated in long double. V_fm in the IP update can be
/// ill-conditioned enough that the double version loses ~1e-9 to cancellation.
inline double quadratic_form_extended(std::span<const cdouble> a, std::size_t m, std::span<const cdouble> v) {
  using ld = std::complex<long double>;
  long double s = 0.0L;
  for (std::size_t i = 0; i < m; ++i) {
    ld row = 0.0L;
    for (std::size_t j = 0; j < m; ++j) row += ld(a[i * m + j]) * ld(v[j]);
    s += (std::conj(ld(v[i])) * row).real();
  }
  return static_cast<double>(s);
}

/// Re tr(a b) for Hermitian b: sum_ij a_ij conj(b_ij).
inline double trace_product_hermitian(std::span<const cdouble> a, std::span<const cdouble> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k].real() * b[k].real() + a[k].imag() * b[k].imag();
  return s;
}

}  // namespace kernel
}  // namespace fastbss
