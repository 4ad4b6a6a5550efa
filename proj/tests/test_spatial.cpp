#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace fastbss;

namespace {

double fast_ll(const DiagonalizableSpatial& s, const PsdGrid& psd, const Spectrogram& x) {
  return fast_log_likelihood(s, psd, x);
}

PowerTensor floored_model(const DiagonalizableSpatial& s, const PsdGrid& psd, const Spectrogram& x) {
  return model_power(s, psd, model_power_floor(project(s, x)));
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

}  // namespace

// ---------------------------------------------------------------------------
// mix_model

TEST(MixModel, SingleSourceIdentity) {
  FullRankSpatial g(1, 1, 3);
  g.set(0, 0, ComplexMatrix::identity(3));
  PsdGrid psd(1, 1, 1, 1.0);
  EXPECT_LT(relative_difference(mix_model(g, psd, 0, 0), ComplexMatrix::identity(3)), 1e-15);
}

TEST(MixModel, DiagonalArithmeticWithClampedScm) {
  FullRankSpatial g(2, 1, 2);
  g.set(0, 0, ComplexMatrix::identity(2));
  const double d[] = {1.0, 0.0};
  g.set(1, 0, clamp_psd(ComplexMatrix::diagonal(d)));
  PsdGrid psd(2, 1, 1);
  psd.at(0, 0, 0) = 2.0;
  psd.at(1, 0, 0) = 3.0;
  const ComplexMatrix y = mix_model(g, psd, 0, 0);
  EXPECT_NEAR(y(0, 0).real(), 5.0, 1e-12);
  EXPECT_NEAR(y(1, 1).real(), 2.0 + 3.0 * kEigenFloor, 1e-15);
  EXPECT_GT(y(1, 1).real(), 2.0);
  EXPECT_EQ(y(0, 1), cdouble(0.0));
}

TEST(MixModel, MatchesDirectSummation) {
  const auto g = oracle::random_full_rank(3, 4, 4, 21);
  const auto psd = oracle::random_psd(3, 4, 5, 22);
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t t = 0; t < 5; ++t) {
      const oracle::Mat ref = oracle::mixture_covariance(g, psd, f, t);
      EXPECT_LT((oracle::to_eigen(mix_model(g, psd, f, t)) - ref).norm() / ref.norm(), 1e-12);
    }
}

TEST(MixModel, DiagonalizableFormMatchesReconstructedScms) {
  const auto s = oracle::random_diagonalizable(2, 3, 3, 23);
  const auto psd = oracle::random_psd(2, 3, 4, 24);
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t t = 0; t < 4; ++t) {
      const oracle::Mat ref =
          psd.at(0, f, t) * oracle::reconstructed_scm(s, 0, f) + psd.at(1, f, t) * oracle::reconstructed_scm(s, 1, f);
      EXPECT_LT((oracle::to_eigen(mix_model(s, psd, f, t)) - ref).norm() / ref.norm(), 1e-12);
    }
}

TEST(MixModel, AllZeroPsdIsDegenerate) {
  const auto g = oracle::random_full_rank(2, 1, 2, 1);
  const PsdGrid psd(2, 1, 1, 0.0);
  try {
    mix_model(g, psd, 0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_model);
  }
}

// ---------------------------------------------------------------------------
// Full-rank likelihood and SCM update

TEST(FullRank, LikelihoodMatchesGaussianOracle) {
  const auto g = oracle::random_full_rank(2, 3, 3, 31);
  const auto psd = oracle::random_psd(2, 3, 6, 32);
  const auto x = oracle::random_spectrogram(3, 6, 3, 33);
  EXPECT_LT(rel(log_likelihood(g, psd, x), oracle::full_rank_log_likelihood(g, psd, x)), 1e-10);
}

TEST(FullRank, StatisticsMatchTraceDefinitions) {
  const auto g = oracle::random_full_rank(2, 2, 3, 34);
  const auto psd = oracle::random_psd(2, 2, 3, 35);
  const auto x = oracle::random_spectrogram(2, 3, 3, 36);
  const SourceStats st = source_stats(g, psd, x);
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t t = 0; t < 3; ++t) {
      const oracle::Mat yi = oracle::mixture_covariance(g, psd, f, t).inverse();
      Eigen::VectorXcd v(3);
      for (Eigen::Index i = 0; i < 3; ++i) v(i) = x.at(f, t, static_cast<std::size_t>(i));
      const oracle::Mat xx = v * v.adjoint();
      for (std::size_t n = 0; n < 2; ++n) {
        const oracle::Mat gn = oracle::to_eigen(g.matrix(n, f));
        EXPECT_NEAR(st.numer.at(n, f, t), (gn * yi * xx * yi).trace().real(), 1e-10);
        EXPECT_NEAR(st.denom.at(n, f, t), (gn * yi).trace().real(), 1e-10);
      }
    }
}

TEST(FullRank, ScalarUpdateMatchesClosedForm) {
  FullRankSpatial g(1, 1, 1);
  const double g0 = 2.0;
  g.set(0, 0, ComplexMatrix{{g0}});
  const auto psd = oracle::random_psd(1, 1, 50, 41);
  const auto x = oracle::random_spectrogram(1, 50, 1, 42);
  // A = sum lambda |x|^2 / (lambda G)^2, B = sum lambda / (lambda G), G <- G sqrt(A / B).
  double a = 0.0, b = 0.0;
  for (std::size_t t = 0; t < 50; ++t) {
    const double lam = psd.at(0, 0, t), y = lam * g0;
    a += lam * std::norm(x.at(0, t, 0)) / (y * y);
    b += lam / y;
  }
  update_scm_fullrank(g, psd, x);
  EXPECT_LT(rel(g.matrix(0, 0)(0, 0).real(), g0 * std::sqrt(a / b)), 1e-10);
}

TEST(FullRank, UpdateOnDataDrawnFromCurrentParametersDoesNotDecrease) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto g = oracle::random_full_rank(2, 3, 3, 100 + seed);
    const auto psd = oracle::random_psd(2, 3, 40, 200 + seed);
    const Spectrogram x = sample_from_model(g, psd, 300 + seed).mixture;
    const double before = log_likelihood(g, psd, x);
    update_scm_fullrank(g, psd, x);
    const double after = log_likelihood(g, psd, x);
    EXPECT_GE((after - before) / std::abs(before), -1e-6) << "seed " << seed;
  }
}

TEST(FullRank, AlternatingUpdatesGiveMonotoneTrace) {
  auto g = oracle::random_full_rank(2, 4, 3, 51);
  PsdGrid psd = oracle::random_psd(2, 4, 30, 52);
  const auto x = oracle::random_spectrogram(4, 30, 3, 53);
  std::vector<double> trace{log_likelihood(g, psd, x)};
  for (int it = 0; it < 100; ++it) {
    update_unconstrained(psd, source_stats(g, psd, x));
    update_scm_fullrank(g, psd, x);
    trace.push_back(log_likelihood(g, psd, x));
  }
  EXPECT_LE(oracle::worst_relative_drop(trace), 1e-6);
  EXPECT_GT(trace.back(), trace.front());
}

TEST(FullRank, UpdatedScmsStayHermitianPsd) {
  auto g = oracle::random_full_rank(2, 3, 4, 54);
  const auto psd = oracle::random_psd(2, 3, 20, 55);
  const auto x = oracle::random_spectrogram(3, 20, 4, 56);
  update_scm_fullrank(g, psd, x);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t f = 0; f < 3; ++f) {
      const ComplexMatrix m = g.matrix(n, f);
      EXPECT_LT((m - m.adjoint()).frobenius_norm(), 1e-14 * m.frobenius_norm());
      const auto eig = hermitian_eig(m);
      EXPECT_GE(eig.eigenvalues.back(), 0.0);
    }
}

TEST(FullRank, NormalizationKeepsMixtureCovariance) {
  auto g = oracle::random_full_rank(2, 3, 3, 57);
  PsdGrid psd = oracle::random_psd(2, 3, 4, 58);
  const ComplexMatrix before = mix_model(g, psd, 1, 2);
  const auto scales = normalize_scms(g);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t f = 0; f < 3; ++f) {
      EXPECT_NEAR(g.matrix(n, f).trace().real(), 3.0, 1e-12);
      for (auto& v : psd.row(n, f)) v *= scales[n * 3 + f];
    }
  EXPECT_LT(relative_difference(mix_model(g, psd, 1, 2), before), 1e-14);
}

// ---------------------------------------------------------------------------
// Projection

TEST(Project, IdentityDiagonalizerGivesChannelPower) {
  DiagonalizableSpatial s(1, 2, 3);
  for (std::size_t f = 0; f < 2; ++f) s.set_diagonalizer(f, ComplexMatrix::identity(3));
  const auto x = oracle::random_spectrogram(2, 4, 3, 61);
  const PowerTensor p = project(s, x);
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t m = 0; m < 3; ++m) EXPECT_DOUBLE_EQ(p.at(f, t, m), std::norm(x.at(f, t, m)));
}

TEST(Project, ScalingExample) {
  DiagonalizableSpatial s(1, 1, 2);
  const double d[] = {2.0, 1.0};
  s.set_diagonalizer(0, ComplexMatrix::diagonal(d));
  Spectrogram x(1, 1, 2);
  x.at(0, 0, 0) = 1.0;
  x.at(0, 0, 1) = cdouble(0.0, 1.0);
  const PowerTensor p = project(s, x);
  EXPECT_DOUBLE_EQ(p.at(0, 0, 0), 4.0);
  EXPECT_DOUBLE_EQ(p.at(0, 0, 1), 1.0);
}

TEST(Project, MatchesDiagonalOfTransformedOuterProduct) {
  const auto s = oracle::random_diagonalizable(1, 3, 4, 62);
  const auto x = oracle::random_spectrogram(3, 5, 4, 63);
  const PowerTensor p = project(s, x);
  for (std::size_t f = 0; f < 3; ++f) {
    const oracle::Mat q = oracle::to_eigen(s.diagonalizer_matrix(f));
    for (std::size_t t = 0; t < 5; ++t) {
      Eigen::VectorXcd v(4);
      for (Eigen::Index i = 0; i < 4; ++i) v(i) = x.at(f, t, static_cast<std::size_t>(i));
      const oracle::Mat qxq = q * (v * v.adjoint()) * q.adjoint();
      for (std::size_t m = 0; m < 4; ++m)
        EXPECT_NEAR(p.at(f, t, m), qxq(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)).real(),
                    1e-10 * (1.0 + p.at(f, t, m)));
    }
  }
}

TEST(Project, DimensionMismatchIsInvalidInput) {
  const auto s = oracle::random_diagonalizable(1, 3, 4, 64);
  try {
    project(s, oracle::random_spectrogram(3, 5, 3, 65));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_input);
  }
}

// ---------------------------------------------------------------------------
// Diagonalizable likelihood and statistics

TEST(Diagonalizable, LikelihoodEqualsFullRankOnReconstructedScms) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = oracle::random_diagonalizable(2, 3, 3, 70 + seed);
    const auto psd = oracle::random_psd(2, 3, 8, 80 + seed);
    const auto x = oracle::random_spectrogram(3, 8, 3, 90 + seed);
    const double fast = fast_ll(s, psd, x);
    EXPECT_LT(rel(fast, oracle::diagonalizable_log_likelihood(s, psd, x)), 1e-8);
    EXPECT_LT(rel(fast, log_likelihood(to_full_rank(s), psd, x)), 1e-8);
  }
}

TEST(Diagonalizable, StatisticsMatchFullRankOnReconstructedScms) {
  const auto s = oracle::random_diagonalizable(2, 3, 3, 71);
  const auto psd = oracle::random_psd(2, 3, 8, 81);
  const auto x = oracle::random_spectrogram(3, 8, 3, 91);
  const SourceStats fast = source_stats(s, project(s, x), model_power(s, psd));
  const SourceStats full = source_stats(to_full_rank(s), psd, x);
  for (std::size_t i = 0; i < fast.numer.values().size(); ++i) {
    EXPECT_LT(rel(fast.numer.values()[i], full.numer.values()[i]), 1e-8);
    EXPECT_LT(rel(fast.denom.values()[i], full.denom.values()[i]), 1e-8);
  }
}

TEST(Diagonalizable, GainAndPsdScaleTradeLeavesModelUnchanged) {
  auto s = oracle::random_diagonalizable(2, 3, 3, 72);
  PsdGrid psd = oracle::random_psd(2, 3, 5, 82);
  const auto x = oracle::random_spectrogram(3, 5, 3, 92);
  const PowerTensor before = model_power(s, psd);
  const double ll_before = fast_ll(s, psd, x);
  const double c[] = {3.7, 0.21};
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t f = 0; f < 3; ++f) {
      for (auto& g : s.gains(n, f)) g *= c[n];
      for (auto& v : psd.row(n, f)) v /= c[n];
    }
  const PowerTensor after = model_power(s, psd);
  for (std::size_t i = 0; i < before.values().size(); ++i) EXPECT_LT(rel(before.values()[i], after.values()[i]), 1e-12);
  EXPECT_LT(rel(ll_before, fast_ll(s, psd, x)), 1e-12);
}

TEST(Diagonalizable, RowNormalizationAndGainNormalizationKeepLikelihood) {
  auto s = oracle::random_diagonalizable(2, 3, 3, 73);
  SourceModel model = UnconstrainedModel{oracle::random_psd(2, 3, 5, 83)};
  const auto x = oracle::random_spectrogram(3, 5, 3, 93);
  const double before = fast_ll(s, psd_from(model), x);
  normalize_diagonalizer_rows(s);
  for (std::size_t f = 0; f < 3; ++f) {
    const auto q = s.diagonalizer(f);
    for (std::size_t m = 0; m < 3; ++m) {
      double norm = 0.0;
      for (std::size_t j = 0; j < 3; ++j) norm += std::norm(q[m * 3 + j]);
      EXPECT_NEAR(norm, 1.0, 1e-14);
    }
  }
  absorb_scales(model, normalize_gains(s));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t f = 0; f < 3; ++f) {
      double sum = 0.0;
      for (double g : s.gains(n, f)) sum += g;
      EXPECT_NEAR(sum, 3.0, 1e-12);
    }
  EXPECT_LT(rel(before, fast_ll(s, psd_from(model), x)), 1e-12);
}

// ---------------------------------------------------------------------------
// Iterative projection

TEST(IterativeProjection, RowsAreNormalizedAgainstTheirWeightedCovariance) {
  auto s = oracle::random_diagonalizable(2, 4, 4, 101);
  const auto psd = oracle::random_psd(2, 4, 60, 102);
  const auto x = oracle::random_spectrogram(4, 60, 4, 103);
  const PowerTensor model = floored_model(s, psd, x);
  const double reported = update_diagonalizer_ip(s, x, model);
  EXPECT_LE(reported, 1e-10);
  for (std::size_t f = 0; f < 4; ++f) {
    const auto v = ip_covariances(x, model, f);
    for (std::size_t m = 0; m < 4; ++m) {
      std::vector<cdouble> q(4);
      for (std::size_t j = 0; j < 4; ++j) q[j] = std::conj(s.diagonalizer(f)[m * 4 + j]);
      EXPECT_NEAR(kernel::quadratic_form(v[m].values(), 4, q), 1.0, 1e-10);
    }
  }
}

TEST(IterativeProjection, WeightedCovarianceMatchesDefinition) {
  const auto s = oracle::random_diagonalizable(1, 2, 3, 104);
  const auto psd = oracle::random_psd(1, 2, 7, 105);
  const auto x = oracle::random_spectrogram(2, 7, 3, 106);
  const PowerTensor model = model_power(s, psd);
  const auto v = ip_covariances(x, model, 1);
  for (std::size_t m = 0; m < 3; ++m) {
    oracle::Mat ref = oracle::Mat::Zero(3, 3);
    for (std::size_t t = 0; t < 7; ++t) {
      Eigen::VectorXcd xv(3);
      for (Eigen::Index i = 0; i < 3; ++i) xv(i) = x.at(1, t, static_cast<std::size_t>(i));
      ref += xv * xv.adjoint() / model.at(1, t, m);
    }
    ref /= 7.0;
    EXPECT_LT((oracle::to_eigen(v[m]) - ref).norm() / ref.norm(), 1e-13);
  }
}

TEST(IterativeProjection, ScalarCaseMatchesClosedForm) {
  DiagonalizableSpatial s(1, 1, 1);
  s.set_diagonalizer(0, ComplexMatrix{{0.7}});
  s.gains(0, 0)[0] = 1.3;
  const auto psd = oracle::random_psd(1, 1, 40, 107);
  const auto x = oracle::random_spectrogram(1, 40, 1, 108);
  const PowerTensor model = model_power(s, psd);
  double v = 0.0;
  for (std::size_t t = 0; t < 40; ++t) v += std::norm(x.at(0, t, 0)) / model.at(0, t, 0);
  v /= 40.0;
  update_diagonalizer_ip(s, x, model);
  const cdouble q = s.diagonalizer(0)[0];
  EXPECT_LT(std::abs(q - cdouble(1.0 / std::sqrt(v))), 1e-12 * std::abs(q));
}

TEST(IterativeProjection, RepeatedSweepsAreMonotone) {
  auto s = oracle::random_diagonalizable(2, 3, 4, 111);
  const auto psd = oracle::random_psd(2, 3, 200, 112);
  const auto x = oracle::random_spectrogram(3, 200, 4, 113);
  std::vector<double> trace{fast_ll(s, psd, x)};
  for (int sweep = 0; sweep < 50; ++sweep) {
    update_diagonalizer_ip(s, x, floored_model(s, psd, x));
    trace.push_back(fast_ll(s, psd, x));
  }
  EXPECT_LE(oracle::worst_relative_drop(trace), 1e-6);
  EXPECT_GT(trace.back(), trace.front());
}

TEST(IterativeProjection, WhiteDataWithUniformModelGivesWhiteningRows) {
  DiagonalizableSpatial s(1, 1, 3);
  std::mt19937_64 rng(114);
  s.set_diagonalizer(0, oracle::random_pd(3, rng));
  auto x = oracle::random_spectrogram(1, 4000, 3, 115);
  for (auto& v : x.values()) v *= std::sqrt(0.5);  // unit variance per channel
  const PowerTensor uniform(1, 4000, 3, 1.0);
  for (int sweep = 0; sweep < 30; ++sweep) update_diagonalizer_ip(s, x, uniform);
  // With one common V the fixed point is Q V Q^H = I, i.e. unitary up to V.
  const oracle::Mat v = oracle::to_eigen(ip_covariances(x, uniform, 0)[0]);
  const oracle::Mat q = oracle::to_eigen(s.diagonalizer_matrix(0));
  EXPECT_LT((q * v * q.adjoint() - oracle::Mat::Identity(3, 3)).norm(), 1e-8);
  // V is close to I for white data, so Q is close to unitary.
  EXPECT_LT((q * q.adjoint() - oracle::Mat::Identity(3, 3)).norm(), 0.2);
}

TEST(IterativeProjection, SingularWeightedCovarianceReportsBin) {
  DiagonalizableSpatial s(1, 2, 2);
  for (std::size_t f = 0; f < 2; ++f) s.set_diagonalizer(f, ComplexMatrix::identity(2));
  Spectrogram x(2, 5, 2);
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t t = 0; t < 5; ++t) x.at(f, t, 0) = x.at(f, t, 1) = 1.0;  // rank one
  try {
    update_diagonalizer_ip(s, x, PowerTensor(2, 5, 2, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::singular_matrix);
    EXPECT_NE(std::string(e.what()).find("(f, m)"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Gain MU

TEST(GainMu, PerfectFitLeavesGainsUnchanged) {
  auto s = oracle::random_diagonalizable(2, 3, 3, 121);
  const auto psd = oracle::random_psd(2, 3, 6, 122);
  const PowerTensor model = model_power(s, psd);
  const auto before = s;
  update_gains_mu(s, psd, model, model);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t m = 0; m < 3; ++m) EXPECT_NEAR(s.gains(n, f)[m], before.gains(n, f)[m], 1e-14);
}

TEST(GainMu, ZeroGainStaysZero) {
  auto s = oracle::random_diagonalizable(2, 3, 3, 123);
  s.gains(1, 2)[1] = 0.0;
  const auto psd = oracle::random_psd(2, 3, 6, 124);
  const auto x = oracle::random_spectrogram(3, 6, 3, 125);
  for (int it = 0; it < 5; ++it) update_gains_mu(s, psd, project(s, x), floored_model(s, psd, x));
  EXPECT_EQ(s.gains(1, 2)[1], 0.0);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t f = 0; f < 3; ++f)
      for (double g : s.gains(n, f)) EXPECT_GE(g, 0.0);
}

TEST(GainMu, MatchesDefinition) {
  auto s = oracle::random_diagonalizable(2, 2, 2, 126);
  const auto psd = oracle::random_psd(2, 2, 5, 127);
  const auto x = oracle::random_spectrogram(2, 5, 2, 128);
  const PowerTensor xt = project(s, x), y = model_power(s, psd);
  const auto before = s;
  update_gains_mu(s, psd, xt, y);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t f = 0; f < 2; ++f)
      for (std::size_t m = 0; m < 2; ++m) {
        double num = 0.0, den = 0.0;
        for (std::size_t t = 0; t < 5; ++t) {
          num += psd.at(n, f, t) * xt.at(f, t, m) / (y.at(f, t, m) * y.at(f, t, m));
          den += psd.at(n, f, t) / y.at(f, t, m);
        }
        EXPECT_LT(rel(s.gains(n, f)[m], before.gains(n, f)[m] * std::sqrt(num / den)), 1e-12);
      }
}

TEST(Monotonicity, EachSpatialUpdateOnTwentyInstances) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = oracle::random_spectrogram(3, 50, 3, 500 + seed);
    const auto psd = oracle::random_psd(2, 3, 50, 600 + seed);
    {
      auto s = oracle::random_diagonalizable(2, 3, 3, 700 + seed);
      const double before = fast_ll(s, psd, x);
      update_gains_mu(s, psd, project(s, x), floored_model(s, psd, x));
      EXPECT_GE((fast_ll(s, psd, x) - before) / std::abs(before), -1e-6) << "gains, seed " << seed;
    }
    {
      auto s = oracle::random_diagonalizable(2, 3, 3, 800 + seed);
      const double before = fast_ll(s, psd, x);
      update_diagonalizer_ip(s, x, floored_model(s, psd, x));
      EXPECT_GE((fast_ll(s, psd, x) - before) / std::abs(before), -1e-6) << "ip, seed " << seed;
    }
    {
      auto g = oracle::random_full_rank(2, 3, 3, 900 + seed);
      const double before = log_likelihood(g, psd, x);
      update_scm_fullrank(g, psd, x);
      EXPECT_GE((log_likelihood(g, psd, x) - before) / std::abs(before), -1e-6) << "scm, seed " << seed;
    }
  }
}

// ---------------------------------------------------------------------------
// Reconstruction

TEST(Reconstruct, IdentityDiagonalizer) {
  const double g[] = {1.0, 2.0};
  EXPECT_LT(relative_difference(reconstruct_scm(ComplexMatrix::identity(2), g), ComplexMatrix::diagonal(g)), 1e-15);
}

TEST(Reconstruct, ScaledIdentityDiagonalizer) {
  const double g[] = {1.0, 2.0, 5.0};
  const cdouble c(1.5, -2.0);
  const ComplexMatrix r = reconstruct_scm(ComplexMatrix::identity(3) * c, g);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r(i, i).real(), g[i] / std::norm(c), 1e-14);
}

TEST(Reconstruct, DiagonalizerDiagonalizesTheResult) {
  std::mt19937_64 rng(131);
  for (int trial = 0; trial < 50; ++trial) {
    ComplexMatrix q = oracle::random_matrix(4, 4, rng);
    for (std::size_t i = 0; i < 4; ++i) q(i, i) += 2.0;
    const double g[] = {0.5, 1.0, 2.0, 0.01};
    const ComplexMatrix d = q * reconstruct_scm(q, g) * q.adjoint();
    double off = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if (i != j) off += std::norm(d(i, j));
    EXPECT_LT(std::sqrt(off), 1e-10 * d.frobenius_norm());
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(d(i, i).real(), g[i], 1e-10);
  }
}

TEST(Reconstruct, SingularDiagonalizerRaises) {
  const double g[] = {1.0, 1.0};
  EXPECT_THROW(reconstruct_scm(ComplexMatrix{{1.0, 1.0}, {1.0, 1.0}}, g), Error);
}

// ---------------------------------------------------------------------------
// Initialization

TEST(Init, WhiteNoiseGivesIdentityWithShrinkingError) {
  double previous = 1e9;
  for (std::size_t frames : {100u, 1000u, 10000u}) {
    // Unit-variance circular noise: real and imaginary parts N(0, 1/2).
    Spectrogram x = oracle::random_spectrogram(1, frames, 3, 141);
    for (auto& v : x.values()) v *= std::sqrt(0.5);
    const FullRankSpatial g = init_full_rank(x, 2);
    const double err = (g.matrix(0, 0) - ComplexMatrix::identity(3)).frobenius_norm();
    EXPECT_LT(err, 5.0 / std::sqrt(static_cast<double>(frames)));
    EXPECT_LT(err, previous);
    previous = err;
  }
}

TEST(Init, LaterSourcesStartAtIdentity) {
  const auto x = oracle::random_spectrogram(4, 20, 3, 142);
  const FullRankSpatial g = init_full_rank(x, 3);
  for (std::size_t f = 0; f < 4; ++f) {
    EXPECT_LT(relative_difference(g.matrix(0, f), average_scm(x, f)), 1e-12);
    for (std::size_t n = 1; n < 3; ++n)
      for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(g.scm(n, f)[i], ComplexMatrix::identity(3).values()[i]);
  }
}

TEST(Init, DiagonalizableModeDiagonalizesTheAverageScm) {
  const auto x = oracle::random_spectrogram(4, 30, 4, 143);
  const DiagonalizableSpatial s = init_diagonalizable(x, 3);
  for (std::size_t f = 0; f < 4; ++f) {
    const ComplexMatrix q = s.diagonalizer_matrix(f);
    const ComplexMatrix d = q * average_scm(x, f) * q.adjoint();
    double off = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if (i != j) off += std::norm(d(i, j));
    EXPECT_LT(std::sqrt(off), 1e-8 * d.frobenius_norm());
    for (std::size_t m = 0; m < 4; ++m) {
      EXPECT_NEAR(s.gains(0, f)[m], d(m, m).real(), 1e-10 * d.frobenius_norm());
      EXPECT_EQ(s.gains(1, f)[m], 1.0);
      EXPECT_EQ(s.gains(2, f)[m], 1.0);
    }
  }
}

TEST(Init, SilentBinFallsBackToIdentity) {
  Spectrogram x = oracle::random_spectrogram(2, 10, 2, 144);
  for (std::size_t t = 0; t < 10; ++t) x.at(1, t, 0) = x.at(1, t, 1) = 0.0;
  const FullRankSpatial g = init_full_rank(x, 2);
  EXPECT_LT(relative_difference(g.matrix(0, 1), ComplexMatrix::identity(2)), 1e-15);
}

TEST(Init, NoFramesIsInvalidInput) {
  const Spectrogram x(3, 0, 2);
  for (bool fast : {false, true}) {
    try {
      if (fast) init_diagonalizable(x, 2);
      else init_full_rank(x, 2);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::invalid_input);
    }
  }
}
