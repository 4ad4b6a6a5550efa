#pragma once

// Spatial models: unconstrained full-rank SCMs G_nf, and jointly
// diagonalizable SCMs parameterized by a per-frequency diagonalizer Q_f and
// nonnegative gains g_nfm with Q_f G_nf Q_f^H = Diag(g_nf).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fastbss/error.hpp"
#include "fastbss/linalg.hpp"
#include "fastbss/parallel.hpp"
#include "fastbss/psd.hpp"
#include "fastbss/signal.hpp"

namespace fastbss {

class FullRankSpatial {
 public:
  FullRankSpatial() = default;
  FullRankSpatial(std::size_t sources, std::size_t freqs, std::size_t channels)
      : sources_(sources), freqs_(freqs), channels_(channels), data_(sources * freqs * channels * channels) {}

  std::size_t sources() const noexcept { return sources_; }
  std::size_t freqs() const noexcept { return freqs_; }
  std::size_t channels() const noexcept { return channels_; }

  std::span<cdouble> scm(std::size_t n, std::size_t f) {
    return {data_.data() + (n * freqs_ + f) * channels_ * channels_, channels_ * channels_};
  }
  std::span<const cdouble> scm(std::size_t n, std::size_t f) const {
    return {data_.data() + (n * freqs_ + f) * channels_ * channels_, channels_ * channels_};
  }
  ComplexMatrix matrix(std::size_t n, std::size_t f) const { return {channels_, channels_, scm(n, f)}; }
  void set(std::size_t n, std::size_t f, const ComplexMatrix& g) {
    require(g.rows() == channels_ && g.cols() == channels_, "FullRankSpatial::set: wrong matrix size");
    std::copy(g.values().begin(), g.values().end(), scm(n, f).begin());
  }

 private:
  std::size_t sources_ = 0;
  std::size_t freqs_ = 0;
  std::size_t channels_ = 0;
  std::vector<cdouble> data_;
};

class DiagonalizableSpatial {
 public:
  DiagonalizableSpatial() = default;
  DiagonalizableSpatial(std::size_t sources, std::size_t freqs, std::size_t channels)
      : sources_(sources),
        freqs_(freqs),
        channels_(channels),
        diagonalizer_(freqs * channels * channels),
        gains_(sources * freqs * channels) {}

  std::size_t sources() const noexcept { return sources_; }
  std::size_t freqs() const noexcept { return freqs_; }
  std::size_t channels() const noexcept { return channels_; }

  /// Q_f, row-major; row m is q_fm^H.
  std::span<cdouble> diagonalizer(std::size_t f) {
    return {diagonalizer_.data() + f * channels_ * channels_, channels_ * channels_};
  }
  std::span<const cdouble> diagonalizer(std::size_t f) const {
    return {diagonalizer_.data() + f * channels_ * channels_, channels_ * channels_};
  }
  ComplexMatrix diagonalizer_matrix(std::size_t f) const { return {channels_, channels_, diagonalizer(f)}; }
  void set_diagonalizer(std::size_t f, const ComplexMatrix& q) {
    require(q.rows() == channels_ && q.cols() == channels_, "DiagonalizableSpatial: wrong diagonalizer size");
    std::copy(q.values().begin(), q.values().end(), diagonalizer(f).begin());
  }

  std::span<double> gains(std::size_t n, std::size_t f) {
    return {gains_.data() + (n * freqs_ + f) * channels_, channels_};
  }
  std::span<const double> gains(std::size_t n, std::size_t f) const {
    return {gains_.data() + (n * freqs_ + f) * channels_, channels_};
  }

 private:
  std::size_t sources_ = 0;
  std::size_t freqs_ = 0;
  std::size_t channels_ = 0;
  std::vector<cdouble> diagonalizer_;
  std::vector<double> gains_;
};

namespace detail {

using RowMatrixd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMatrixd, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrixd, 0, Eigen::OuterStride<>>;

/// Frequency f of a grid as an N x T matrix.
inline ConstStridedMap psd_slice(const SourceGrid& g, std::size_t f) {
  return {g.values().data() + f * g.frames(), static_cast<Eigen::Index>(g.sources()),
          static_cast<Eigen::Index>(g.frames()), Eigen::OuterStride<>(static_cast<Eigen::Index>(g.freqs() * g.frames()))};
}
inline StridedMap grid_slice(SourceGrid& g, std::size_t f) {
  return {g.values().data() + f * g.frames(), static_cast<Eigen::Index>(g.sources()),
          static_cast<Eigen::Index>(g.frames()), Eigen::OuterStride<>(static_cast<Eigen::Index>(g.freqs() * g.frames()))};
}

/// Frequency f of a power tensor as a T x M matrix.
inline Eigen::Map<const RowMatrixd> power_slice(const PowerTensor& p, std::size_t f) {
  return {p.values().data() + f * p.frames() * p.channels(), static_cast<Eigen::Index>(p.frames()),
          static_cast<Eigen::Index>(p.channels())};
}
inline Eigen::Map<RowMatrixd> power_slice(PowerTensor& p, std::size_t f) {
  return {p.values().data() + f * p.frames() * p.channels(), static_cast<Eigen::Index>(p.frames()),
          static_cast<Eigen::Index>(p.channels())};
}

/// Gains at frequency f as an N x M matrix.
inline ConstStridedMap gains_slice(const DiagonalizableSpatial& s, std::size_t f) {
  return {s.gains(0, f).data(), static_cast<Eigen::Index>(s.sources()), static_cast<Eigen::Index>(s.channels()),
          Eigen::OuterStride<>(static_cast<Eigen::Index>(s.freqs() * s.channels()))};
}

inline void check_psd_shape(const PsdGrid& psd, std::size_t sources, std::size_t freqs, std::size_t frames) {
  require(psd.sources() == sources && psd.freqs() == freqs && psd.frames() == frames,
          "PSD grid shape does not match the model");
}

inline std::string bin_context(const char* what, std::size_t a, std::size_t b) {
  return std::string(what) + " (" + std::to_string(a) + ", " + std::to_string(b) + ")";
}

/// Y_ft = sum_n lambda_ftn G_nf into `y` (m*m).
inline void mix_full_rank(const FullRankSpatial& g, const PsdGrid& psd, std::size_t f, std::size_t t,
                          std::span<cdouble> y) {
  std::fill(y.begin(), y.end(), cdouble{});
  for (std::size_t n = 0; n < g.sources(); ++n) {
    const double lam = psd.at(n, f, t);
    if (lam == 0.0) continue;
    const auto gn = g.scm(n, f);
    for (std::size_t k = 0; k < y.size(); ++k) y[k] += lam * gn[k];
  }
}

}  // namespace detail

// --------------------------------------------------------------------------
// Mixture covariance

/// Y_ft = sum_n lambda_ftn G_nf.
inline ComplexMatrix mix_model(const FullRankSpatial& g, const PsdGrid& psd, std::size_t f, std::size_t t) {
  require(f < g.freqs() && t < psd.frames(), "mix_model: bin out of range");
  require(psd.sources() == g.sources() && psd.freqs() == g.freqs(), "mix_model: PSD grid shape does not match");
  bool any = false;
  for (std::size_t n = 0; n < g.sources(); ++n) {
    require(psd.at(n, f, t) >= 0.0, "mix_model: negative PSD");
    any = any || psd.at(n, f, t) > 0.0;
  }
  if (!any) fail(ErrorKind::degenerate_model, detail::bin_context("mix_model: all PSDs are zero at bin", f, t));
  ComplexMatrix y(g.channels(), g.channels());
  detail::mix_full_rank(g, psd, f, t, y.values());
  return y;
}

/// G_nf = Q_f^{-1} Diag(g_nf) Q_f^{-H}.
inline ComplexMatrix reconstruct_scm(const ComplexMatrix& q, std::span<const double> gains) {
  require(q.square() && q.rows() == gains.size(), "reconstruct_scm: dimension mismatch");
  const ComplexMatrix q_inv = inverse(q);
  return hermitian_part(q_inv * ComplexMatrix::diagonal(gains) * q_inv.adjoint());
}

inline FullRankSpatial to_full_rank(const DiagonalizableSpatial& s) {
  FullRankSpatial out(s.sources(), s.freqs(), s.channels());
  for (std::size_t f = 0; f < s.freqs(); ++f) {
    const ComplexMatrix q_inv = inverse(s.diagonalizer_matrix(f));
    const ComplexMatrix q_inv_h = q_inv.adjoint();
    for (std::size_t n = 0; n < s.sources(); ++n)
      out.set(n, f, hermitian_part(q_inv * ComplexMatrix::diagonal(s.gains(n, f)) * q_inv_h));
  }
  return out;
}

/// Y_ft of the diagonalizable model, Q_f^{-1} Diag(sum_n lambda g_nf) Q_f^{-H}.
inline ComplexMatrix mix_model(const DiagonalizableSpatial& s, const PsdGrid& psd, std::size_t f, std::size_t t) {
  require(f < s.freqs() && t < psd.frames(), "mix_model: bin out of range");
  require(psd.sources() == s.sources() && psd.freqs() == s.freqs(), "mix_model: PSD grid shape does not match");
  std::vector<double> y(s.channels(), 0.0);
  bool any = false;
  for (std::size_t n = 0; n < s.sources(); ++n) {
    const double lam = psd.at(n, f, t);
    require(lam >= 0.0, "mix_model: negative PSD");
    any = any || lam > 0.0;
    for (std::size_t m = 0; m < s.channels(); ++m) y[m] += lam * s.gains(n, f)[m];
  }
  if (!any) fail(ErrorKind::degenerate_model, detail::bin_context("mix_model: all PSDs are zero at bin", f, t));
  return reconstruct_scm(s.diagonalizer_matrix(f), y);
}

// --------------------------------------------------------------------------
// Full-rank model: statistics, likelihood, SCM update

namespace detail {

struct FullRankPassOptions {
  SourceStats* stats = nullptr;
  /// Per-frequency sums A_nf, B_nf (N*m*m each), for the SCM update.
  std::vector<cdouble>* a_sum = nullptr;
  std::vector<cdouble>* b_sum = nullptr;
  double* log_likelihood = nullptr;
};

/// One sweep over the frames of frequency f. Inverts Y_ft once per frame and
/// derives everything requested in `opts` from it.
inline void full_rank_pass(const FullRankSpatial& g, const PsdGrid& psd, const Spectrogram& x, std::size_t f,
                           const FullRankPassOptions& opts) {
  const std::size_t mm = g.channels();
  const std::size_t sz = mm * mm;
  const std::size_t sources = g.sources();
  std::vector<cdouble> y(sz), y_inv(sz), work(2 * sz), b(mm);
  if (opts.a_sum) std::fill(opts.a_sum->begin(), opts.a_sum->end(), cdouble{});
  if (opts.b_sum) std::fill(opts.b_sum->begin(), opts.b_sum->end(), cdouble{});
  double ll = 0.0;
  for (std::size_t t = 0; t < x.frames(); ++t) {
    mix_full_rank(g, psd, f, t, y);
    double logdet = 0.0;
    try {
      logdet = kernel::hermitian_pd_inverse(y, mm, y_inv, work);
    } catch (const Error& e) {
      throw e.with_context(bin_context("mixture covariance at (f, t)", f, t));
    }
    const auto xft = x.cell(f, t);
    kernel::matvec(y_inv, mm, xft, b);
    if (opts.log_likelihood) {
      double quad = 0.0;
      for (std::size_t i = 0; i < mm; ++i) quad += (std::conj(xft[i]) * b[i]).real();
      ll -= quad + logdet;
    }
    for (std::size_t n = 0; n < sources; ++n) {
      const auto gn = g.scm(n, f);
      if (opts.stats) {
        opts.stats->numer.at(n, f, t) = kernel::quadratic_form(gn, mm, b);
        opts.stats->denom.at(n, f, t) = kernel::trace_product_hermitian(gn, y_inv);
      }
      const double lam = psd.at(n, f, t);
      if (opts.a_sum && lam != 0.0) {
        cdouble* a = opts.a_sum->data() + n * sz;
        cdouble* bs = opts.b_sum->data() + n * sz;
        for (std::size_t i = 0; i < mm; ++i)
          for (std::size_t j = 0; j < mm; ++j) {
            a[i * mm + j] += lam * b[i] * std::conj(b[j]);
            bs[i * mm + j] += lam * y_inv[i * mm + j];
          }
      }
    }
  }
  if (opts.log_likelihood) *opts.log_likelihood = ll;
}

}  // namespace detail

/// Log-likelihood of the full-rank model up to the constant -FTM log(pi):
///   -sum_ft ( tr(X_ft Y_ft^-1) + log det Y_ft ).
inline double log_likelihood(const FullRankSpatial& g, const PsdGrid& psd, const Spectrogram& x,
                             std::size_t threads = 1) {
  detail::check_psd_shape(psd, g.sources(), g.freqs(), x.frames());
  require(x.freqs() == g.freqs() && x.channels() == g.channels(), "log_likelihood: observation shape mismatch");
  std::vector<double> per_freq(g.freqs());
  parallel_for(g.freqs(), threads, [&](std::size_t f) {
    detail::FullRankPassOptions opts;
    opts.log_likelihood = &per_freq[f];
    detail::full_rank_pass(g, psd, x, f, opts);
  });
  double total = 0.0;
  for (double v : per_freq) total += v;
  return total;
}

inline SourceStats source_stats(const FullRankSpatial& g, const PsdGrid& psd, const Spectrogram& x,
                                std::size_t threads = 1) {
  detail::check_psd_shape(psd, g.sources(), g.freqs(), x.frames());
  SourceStats stats{SourceGrid(g.sources(), g.freqs(), x.frames()), SourceGrid(g.sources(), g.freqs(), x.frames())};
  parallel_for(g.freqs(), threads, [&](std::size_t f) {
    detail::FullRankPassOptions opts;
    opts.stats = &stats;
    detail::full_rank_pass(g, psd, x, f, opts);
  });
  return stats;
}

/// Closed-form MM update of every G_nf:
///   A = sum_t lambda Y^-1 X Y^-1,  B = sum_t lambda Y^-1,
///   G <- B^-1 (B G A G)^{1/2},
/// followed by symmetrization and the PSD floor. All frequencies use the Y_ft
/// of the incoming parameters.
inline void update_scm_fullrank(FullRankSpatial& g, const PsdGrid& psd, const Spectrogram& x,
                                std::size_t threads = 1) {
  detail::check_psd_shape(psd, g.sources(), g.freqs(), x.frames());
  const std::size_t mm = g.channels();
  const std::size_t sz = mm * mm;
  parallel_for(g.freqs(), threads, [&](std::size_t f) {
    std::vector<cdouble> a_sum(g.sources() * sz), b_sum(g.sources() * sz);
    detail::FullRankPassOptions opts;
    opts.a_sum = &a_sum;
    opts.b_sum = &b_sum;
    detail::full_rank_pass(g, psd, x, f, opts);
    for (std::size_t n = 0; n < g.sources(); ++n) {
      const ComplexMatrix a(mm, mm, std::span<const cdouble>(a_sum.data() + n * sz, sz));
      const ComplexMatrix b(mm, mm, std::span<const cdouble>(b_sum.data() + n * sz, sz));
      if (!(b.trace().real() > 0.0)) continue;  // source silent at this frequency
      const ComplexMatrix g_old = g.matrix(n, f);
      try {
        const ComplexMatrix c = hermitian_part(g_old * a * g_old);
        g.set(n, f, clamp_psd(riccati_solution(b, c)));
      } catch (const Error& e) {
        throw e.with_context(detail::bin_context("SCM update at (n, f)", n, f));
      }
    }
  });
}

/// Rescales each G_nf to trace M. Returns the N x F factors s_nf that were
/// divided out; multiplying lambda_ftn by s_nf leaves Y_ft unchanged.
inline std::vector<double> normalize_scms(FullRankSpatial& g) {
  const double target = static_cast<double>(g.channels());
  std::vector<double> scales(g.sources() * g.freqs(), 1.0);
  for (std::size_t n = 0; n < g.sources(); ++n)
    for (std::size_t f = 0; f < g.freqs(); ++f) {
      auto scm = g.scm(n, f);
      double tr = 0.0;
      for (std::size_t i = 0; i < g.channels(); ++i) tr += scm[i * g.channels() + i].real();
      if (!(tr > 0.0)) continue;
      const double s = tr / target;
      for (auto& v : scm) v /= s;
      scales[n * g.freqs() + f] = s;
    }
  return scales;
}

// --------------------------------------------------------------------------
// Diagonalizable model

/// x~_ftm = |[Q_f x_ft]_m|^2.
inline PowerTensor project(const DiagonalizableSpatial& s, const Spectrogram& x, std::size_t threads = 1) {
  require(x.freqs() == s.freqs() && x.channels() == s.channels(), "project: observation shape mismatch");
  const std::size_t mm = s.channels();
  PowerTensor out(x.freqs(), x.frames(), mm);
  parallel_for(x.freqs(), threads, [&](std::size_t f) {
    const auto q = s.diagonalizer(f);
    for (std::size_t t = 0; t < x.frames(); ++t) {
      const auto xft = x.cell(f, t);
      auto cell = out.cell(f, t);
      for (std::size_t m = 0; m < mm; ++m) {
        cdouble v = 0.0;
        for (std::size_t j = 0; j < mm; ++j) v += q[m * mm + j] * xft[j];
        cell[m] = std::norm(v);
      }
    }
  });
  return out;
}

/// y~_ftm = sum_n lambda_ftn g_nfm, floored at `floor`.
inline PowerTensor model_power(const DiagonalizableSpatial& s, const PsdGrid& psd, double floor = 0.0) {
  require(psd.sources() == s.sources() && psd.freqs() == s.freqs(), "model_power: PSD grid shape mismatch");
  PowerTensor out(s.freqs(), psd.frames(), s.channels());
  for (std::size_t f = 0; f < s.freqs(); ++f) {
    auto y = detail::power_slice(out, f);
    y.noalias() = detail::psd_slice(psd, f).transpose() * detail::gains_slice(s, f);
    if (floor > 0.0) y = y.cwiseMax(floor);
  }
  return out;
}

/// Floor applied to y~: 1e-12 of the largest projected power.
inline double model_power_floor(const PowerTensor& projected) {
  const auto v = projected.values();
  const double top = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  return top > 0.0 ? 1e-12 * top : 1e-300;
}

inline double log_abs_det(const ComplexMatrix& q) {
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(Eigen::MatrixXcd(q.eigen()));
  double s = 0.0;
  const auto& u = lu.matrixLU();
  for (Eigen::Index i = 0; i < u.rows(); ++i) s += std::log(std::abs(u(i, i)));
  return s;
}

/// Log-likelihood of the diagonalizable model up to -FTM log(pi):
///   sum_ftm ( -x~/y~ - log y~ ) + T sum_f log det(Q_f Q_f^H).
inline double fast_log_likelihood(const DiagonalizableSpatial& s, const PowerTensor& projected,
                                  const PowerTensor& model) {
  double total = 0.0;
  for (std::size_t f = 0; f < s.freqs(); ++f) {
    double sum = 0.0;
    for (std::size_t t = 0; t < projected.frames(); ++t) {
      const auto xc = projected.cell(f, t);
      const auto yc = model.cell(f, t);
      for (std::size_t m = 0; m < s.channels(); ++m) sum -= xc[m] / yc[m] + std::log(yc[m]);
    }
    total += sum + 2.0 * static_cast<double>(projected.frames()) * log_abs_det(s.diagonalizer_matrix(f));
  }
  return total;
}

inline double fast_log_likelihood(const DiagonalizableSpatial& s, const PsdGrid& psd, const Spectrogram& x,
                                  std::size_t threads = 1) {
  const PowerTensor projected = project(s, x, threads);
  return fast_log_likelihood(s, projected, model_power(s, psd, model_power_floor(projected)));
}

inline SourceStats source_stats(const DiagonalizableSpatial& s, const PowerTensor& projected,
                                const PowerTensor& model, std::size_t threads = 1) {
  const std::size_t frames = projected.frames();
  SourceStats stats{SourceGrid(s.sources(), s.freqs(), frames), SourceGrid(s.sources(), s.freqs(), frames)};
  parallel_for(s.freqs(), threads, [&](std::size_t f) {
    const auto x = detail::power_slice(projected, f);
    const detail::RowMatrixd inv = detail::power_slice(model, f).cwiseInverse();
    const detail::RowMatrixd ratio = x.cwiseProduct(inv).cwiseProduct(inv);
    const auto g = detail::gains_slice(s, f);
    detail::grid_slice(stats.numer, f).noalias() = g * ratio.transpose();
    detail::grid_slice(stats.denom, f).noalias() = g * inv.transpose();
  });
  return stats;
}

/// V_fm = (1/T) sum_t X_ft / y~_ftm for every m at frequency f.
inline std::vector<ComplexMatrix> ip_covariances(const Spectrogram& x, const PowerTensor& model, std::size_t f) {
  const std::size_t mm = x.channels();
  std::vector<ComplexMatrix> v(mm, ComplexMatrix(mm, mm));
  std::vector<cdouble> outer(mm * mm);
  for (std::size_t t = 0; t < x.frames(); ++t) {
    const auto xft = x.cell(f, t);
    for (std::size_t i = 0; i < mm; ++i)
      for (std::size_t j = i; j < mm; ++j) outer[i * mm + j] = xft[i] * std::conj(xft[j]);
    const auto yc = model.cell(f, t);
    for (std::size_t m = 0; m < mm; ++m) {
      const double w = 1.0 / yc[m];
      auto vals = v[m].values();
      for (std::size_t i = 0; i < mm; ++i)
        for (std::size_t j = i; j < mm; ++j) vals[i * mm + j] += w * outer[i * mm + j];
    }
  }
  const double scale = 1.0 / static_cast<double>(x.frames());
  for (auto& vm : v)
    for (std::size_t i = 0; i < mm; ++i) {
      vm(i, i) = vm(i, i).real() * scale;
      for (std::size_t j = i + 1; j < mm; ++j) {
        vm(i, j) *= scale;
        vm(j, i) = std::conj(vm(i, j));
      }
    }
  return v;
}

/// Iterative-projection update of every row of Q_f:
///   q_fm <- (Q_f V_fm)^{-1} e_m,  q_fm <- q_fm / sqrt(q_fm^H V_fm q_fm).
/// Returns the largest |q_fm^H V_fm q_fm - 1| observed after normalization.
inline double update_diagonalizer_ip(DiagonalizableSpatial& s, const Spectrogram& x, const PowerTensor& model,
                                     std::size_t threads = 1, std::size_t sweeps = 1) {
  require(x.freqs() == s.freqs() && x.channels() == s.channels(), "update_diagonalizer_ip: shape mismatch");
  require(model.freqs() == s.freqs() && model.frames() == x.frames(), "update_diagonalizer_ip: model shape mismatch");
  const std::size_t mm = s.channels();
  std::vector<double> max_error(s.freqs(), 0.0);
  parallel_for(s.freqs(), threads, [&](std::size_t f) {
    const auto v = ip_covariances(x, model, f);
    ComplexMatrix q = s.diagonalizer_matrix(f);
    for (std::size_t sweep = 0; sweep < sweeps; ++sweep)
      for (std::size_t m = 0; m < mm; ++m) {
        ComplexMatrix e(mm, 1);
        e(m, 0) = 1.0;
        ComplexMatrix col;
        try {
          col = solve(q * v[m], e);
        } catch (const Error& err) {
          throw err.with_context(detail::bin_context("diagonalizer update at (f, m)", f, m));
        }
        const std::span<const cdouble> qv(col.values());
        const double norm = kernel::quadratic_form_extended(v[m].values(), mm, qv);
        if (!(norm > 0.0))
          fail(ErrorKind::numerical_breakdown, detail::bin_context("diagonalizer normalization at (f, m)", f, m));
        const double scale = 1.0 / std::sqrt(norm);
        for (std::size_t j = 0; j < mm; ++j) q(m, j) = std::conj(col(j, 0)) * scale;
        for (auto& c : col.values()) c *= scale;
        max_error[f] = std::max(max_error[f], std::abs(kernel::quadratic_form_extended(v[m].values(), mm, qv) - 1.0));
      }
    s.set_diagonalizer(f, q);
  });
  return *std::max_element(max_error.begin(), max_error.end());
}

/// MU rule for the diagonal gains:
///   g_nfm <- g_nfm sqrt( sum_t lambda x~ / y~^2 / sum_t lambda / y~ ).
inline void update_gains_mu(DiagonalizableSpatial& s, const PsdGrid& psd, const PowerTensor& projected,
                            const PowerTensor& model, std::size_t threads = 1) {
  detail::check_psd_shape(psd, s.sources(), s.freqs(), projected.frames());
  const std::size_t mm = s.channels();
  parallel_for(s.freqs(), threads, [&](std::size_t f) {
    const auto x = detail::power_slice(projected, f);
    const detail::RowMatrixd inv = detail::power_slice(model, f).cwiseInverse();
    const detail::RowMatrixd ratio = x.cwiseProduct(inv).cwiseProduct(inv);
    const auto lam = detail::psd_slice(psd, f);
    const detail::RowMatrixd num = lam * ratio;
    const detail::RowMatrixd den = lam * inv;
    for (std::size_t n = 0; n < s.sources(); ++n) {
      auto g = s.gains(n, f);
      for (std::size_t m = 0; m < mm; ++m) {
        const auto i = static_cast<Eigen::Index>(n), j = static_cast<Eigen::Index>(m);
        if (g[m] > 0.0 && den(i, j) > 0.0) g[m] *= std::sqrt(num(i, j) / den(i, j));
      }
      const double top = *std::max_element(g.begin(), g.end());
      for (auto& v : g)
        if (v > 0.0) v = std::max(v, kEigenFloor * top);
    }
  });
}

/// Rescales every diagonalizer row to unit Euclidean norm and divides the
/// matching gains by the squared norm. Q_f G_nf Q_f^H and the likelihood are
/// unchanged; without it rows and gains drift jointly toward under/overflow.
inline void normalize_diagonalizer_rows(DiagonalizableSpatial& s) {
  const std::size_t mm = s.channels();
  for (std::size_t f = 0; f < s.freqs(); ++f) {
    auto q = s.diagonalizer(f);
    for (std::size_t m = 0; m < mm; ++m) {
      double c = 0.0;
      for (std::size_t j = 0; j < mm; ++j) c += std::norm(q[m * mm + j]);
      if (!(c > 0.0)) fail(ErrorKind::numerical_breakdown, detail::bin_context("zero diagonalizer row at (f, m)", f, m));
      const double r = 1.0 / std::sqrt(c);
      for (std::size_t j = 0; j < mm; ++j) q[m * mm + j] *= r;
      for (std::size_t n = 0; n < s.sources(); ++n) s.gains(n, f)[m] /= c;
    }
  }
}

/// Rescales gains so that sum_m g_nfm = M. Returns the N x F factors that
/// were divided out (to be folded into the source PSDs).
inline std::vector<double> normalize_gains(DiagonalizableSpatial& s) {
  const double target = static_cast<double>(s.channels());
  std::vector<double> scales(s.sources() * s.freqs(), 1.0);
  for (std::size_t n = 0; n < s.sources(); ++n)
    for (std::size_t f = 0; f < s.freqs(); ++f) {
      auto g = s.gains(n, f);
      double sum = 0.0;
      for (double v : g) sum += v;
      if (!(sum > 0.0)) continue;
      const double c = sum / target;
      for (auto& v : g) v /= c;
      scales[n * s.freqs() + f] = c;
    }
  return scales;
}

// --------------------------------------------------------------------------
// Initialization

/// (1/T) sum_t x_ft x_ft^H
inline ComplexMatrix average_scm(const Spectrogram& x, std::size_t f) {
  const std::size_t mm = x.channels();
  ComplexMatrix out(mm, mm);
  for (std::size_t t = 0; t < x.frames(); ++t) {
    const auto xft = x.cell(f, t);
    for (std::size_t i = 0; i < mm; ++i)
      for (std::size_t j = 0; j < mm; ++j) out(i, j) += xft[i] * std::conj(xft[j]);
  }
  out *= 1.0 / static_cast<double>(x.frames());
  return hermitian_part(out);
}

namespace detail {
inline ComplexMatrix initial_first_scm(const Spectrogram& x, std::size_t f) {
  const ComplexMatrix avg = average_scm(x, f);
  // A silent bin has no observed SCM; fall back to the identity there.
  if (!(avg.trace().real() > 0.0)) return ComplexMatrix::identity(x.channels());
  return clamp_psd(avg);
}
}  // namespace detail

/// G_1f = average observed SCM (PSD-clamped), G_nf = I for n >= 2.
inline FullRankSpatial init_full_rank(const Spectrogram& x, std::size_t sources) {
  require(sources >= 1, "init_spatial: need at least one source");
  require(x.frames() >= 1, "init_spatial: observation has no frames");
  FullRankSpatial g(sources, x.freqs(), x.channels());
  const ComplexMatrix eye = ComplexMatrix::identity(x.channels());
  for (std::size_t f = 0; f < x.freqs(); ++f) {
    g.set(0, f, detail::initial_first_scm(x, f));
    for (std::size_t n = 1; n < sources; ++n) g.set(n, f, eye);
  }
  return g;
}

/// Spectral decomposition of the full-rank initialization: with
/// G_1f = U diag(w) U^H, Q_f = U^H, g_1f = w and g_nf = 1 for n >= 2.
inline DiagonalizableSpatial init_diagonalizable(const Spectrogram& x, std::size_t sources) {
  require(sources >= 1, "init_spatial: need at least one source");
  require(x.frames() >= 1, "init_spatial: observation has no frames");
  DiagonalizableSpatial s(sources, x.freqs(), x.channels());
  for (std::size_t f = 0; f < x.freqs(); ++f) {
    const auto eig = hermitian_eig(detail::initial_first_scm(x, f));
    s.set_diagonalizer(f, eig.eigenvectors.adjoint());
    const double top = eig.eigenvalues.front();
    auto g1 = s.gains(0, f);
    for (std::size_t m = 0; m < x.channels(); ++m) g1[m] = std::max(eig.eigenvalues[m], kEigenFloor * top);
    for (std::size_t n = 1; n < sources; ++n) std::fill(s.gains(n, f).begin(), s.gains(n, f).end(), 1.0);
  }
  return s;
}

}  // namespace fastbss
