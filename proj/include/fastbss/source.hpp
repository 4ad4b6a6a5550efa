#pragma once

// Source models: the parameterizations of lambda_ftn and their
// multiplicative / Metropolis updates. Every rule here is written against
// SourceStats, so the same code serves the full-rank and the diagonalized
// spatial models.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "fastbss/decoder.hpp"
#include "fastbss/error.hpp"
#include "fastbss/parallel.hpp"
#include "fastbss/psd.hpp"
#include "fastbss/spatial.hpp"

namespace fastbss {

namespace detail {
inline double mu_factor(double num, double den) { return den > 0.0 ? std::sqrt(num / den) : 1.0; }
}  // namespace detail

// ---------------------------------------------------------------------------
// Unconstrained

/// lambda_ftn <- lambda_ftn sqrt(numer / denom) for every source.
inline void update_unconstrained(PsdGrid& psd, const SourceStats& stats) {
  require(psd.same_shape(stats.numer) && psd.same_shape(stats.denom), "update_unconstrained: shape mismatch");
  auto lam = psd.values();
  const auto num = stats.numer.values();
  const auto den = stats.denom.values();
  for (std::size_t i = 0; i < lam.size(); ++i)
    if (lam[i] > 0.0) lam[i] *= detail::mu_factor(num[i], den[i]);
  floor_psd(psd);
}

// ---------------------------------------------------------------------------
// NMF

/// lambda_ftn = sum_k w_nkf h_nkt.
class NmfFactors {
 public:
  NmfFactors() = default;
  NmfFactors(std::size_t sources, std::size_t bases, std::size_t freqs, std::size_t frames)
      : sources_(sources), bases_(bases), freqs_(freqs), frames_(frames),
        w_(sources * bases * freqs), h_(sources * bases * frames) {}

  /// Uniform random in [0.1, 1.1] scaled by `scale`.
  static NmfFactors random(std::size_t sources, std::size_t bases, std::size_t freqs, std::size_t frames,
                           std::uint64_t seed, double scale = 1.0) {
    require(bases >= 1, "NmfFactors: need at least one basis");
    NmfFactors out(sources, bases, freqs, frames);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.1, 1.1);
    for (auto& v : out.w_) v = u(rng) * scale;
    for (auto& v : out.h_) v = u(rng);
    return out;
  }

  std::size_t sources() const noexcept { return sources_; }
  std::size_t bases() const noexcept { return bases_; }
  std::size_t freqs() const noexcept { return freqs_; }
  std::size_t frames() const noexcept { return frames_; }

  std::span<double> w(std::size_t n, std::size_t k) { return {w_.data() + (n * bases_ + k) * freqs_, freqs_}; }
  std::span<const double> w(std::size_t n, std::size_t k) const {
    return {w_.data() + (n * bases_ + k) * freqs_, freqs_};
  }
  /// Bases of source n as a K x F matrix, activations as K x T.
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> bases_matrix(std::size_t n) {
    return {w_.data() + n * bases_ * freqs_, static_cast<Eigen::Index>(bases_), static_cast<Eigen::Index>(freqs_)};
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> bases_matrix(
      std::size_t n) const {
    return {w_.data() + n * bases_ * freqs_, static_cast<Eigen::Index>(bases_), static_cast<Eigen::Index>(freqs_)};
  }
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> activations_matrix(
      std::size_t n) {
    return {h_.data() + n * bases_ * frames_, static_cast<Eigen::Index>(bases_), static_cast<Eigen::Index>(frames_)};
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> activations_matrix(
      std::size_t n) const {
    return {h_.data() + n * bases_ * frames_, static_cast<Eigen::Index>(bases_), static_cast<Eigen::Index>(frames_)};
  }

  std::span<double> h(std::size_t n, std::size_t k) { return {h_.data() + (n * bases_ + k) * frames_, frames_}; }
  std::span<const double> h(std::size_t n, std::size_t k) const {
    return {h_.data() + (n * bases_ + k) * frames_, frames_};
  }

 private:
  std::size_t sources_ = 0, bases_ = 0, freqs_ = 0, frames_ = 0;
  std::vector<double> w_, h_;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

/// Source n of a grid as an F x T matrix.
inline ConstRowMap source_block(const SourceGrid& g, std::size_t n) {
  return {g.values().data() + n * g.freqs() * g.frames(), static_cast<Eigen::Index>(g.freqs()),
          static_cast<Eigen::Index>(g.frames())};
}
inline RowMap source_block(SourceGrid& g, std::size_t n) {
  return {g.values().data() + n * g.freqs() * g.frames(), static_cast<Eigen::Index>(g.freqs()),
          static_cast<Eigen::Index>(g.frames())};
}

}  // namespace detail

/// Writes sum_k w h into rows [offset, offset + nmf.sources()) of `psd`.
inline void fill_psd(const NmfFactors& nmf, PsdGrid& psd, std::size_t offset = 0) {
  for (std::size_t j = 0; j < nmf.sources(); ++j)
    detail::source_block(psd, offset + j).noalias() = nmf.bases_matrix(j).transpose() * nmf.activations_matrix(j);
}

inline PsdGrid psd_from(const NmfFactors& nmf) {
  PsdGrid psd(nmf.sources(), nmf.freqs(), nmf.frames());
  fill_psd(nmf, psd);
  floor_psd(psd);
  return psd;
}

/// w_nkf <- w_nkf sqrt( sum_t h_nkt numer_nft / sum_t h_nkt denom_nft ).
/// Statistics rows are read at offset + n.
inline void update_nmf_bases(NmfFactors& nmf, const SourceStats& stats, std::size_t offset = 0,
                             std::size_t threads = 1) {
  parallel_for(nmf.sources(), threads, [&](std::size_t j) {
    const detail::RowMatrix a = nmf.activations_matrix(j) * detail::source_block(stats.numer, offset + j).transpose();
    const detail::RowMatrix b = nmf.activations_matrix(j) * detail::source_block(stats.denom, offset + j).transpose();
    auto w = nmf.bases_matrix(j);
    for (Eigen::Index k = 0; k < w.rows(); ++k)
      for (Eigen::Index f = 0; f < w.cols(); ++f)
        if (w(k, f) > 0.0) w(k, f) *= detail::mu_factor(a(k, f), b(k, f));
  });
}

/// h_nkt <- h_nkt sqrt( sum_f w_nkf numer_nft / sum_f w_nkf denom_nft ).
inline void update_nmf_activations(NmfFactors& nmf, const SourceStats& stats, std::size_t offset = 0,
                                   std::size_t threads = 1) {
  parallel_for(nmf.sources(), threads, [&](std::size_t j) {
    const detail::RowMatrix a = nmf.bases_matrix(j) * detail::source_block(stats.numer, offset + j);
    const detail::RowMatrix b = nmf.bases_matrix(j) * detail::source_block(stats.denom, offset + j);
    auto h = nmf.activations_matrix(j);
    for (Eigen::Index k = 0; k < h.rows(); ++k)
      for (Eigen::Index t = 0; t < h.cols(); ++t)
        if (h(k, t) > 0.0) h(k, t) *= detail::mu_factor(a(k, t), b(k, t));
  });
}

/// Statistics of the active spatial model evaluated at a candidate PSD grid.
using StatsFunction = std::function<SourceStats(const PsdGrid&)>;

/// W update, statistics refresh, H update.
inline void update_nmf(NmfFactors& nmf, const StatsFunction& stats_at, std::size_t threads = 1) {
  update_nmf_bases(nmf, stats_at(psd_from(nmf)), 0, threads);
  update_nmf_activations(nmf, stats_at(psd_from(nmf)), 0, threads);
}

/// Moves the scale of every basis into its activations so sum_f w_nkf = 1.
inline void balance_nmf(NmfFactors& nmf) {
  for (std::size_t j = 0; j < nmf.sources(); ++j)
    for (std::size_t k = 0; k < nmf.bases(); ++k) {
      auto w = nmf.w(j, k);
      double s = 0.0;
      for (double v : w) s += v;
      if (!(s > 0.0)) continue;
      for (auto& v : w) v /= s;
      for (auto& v : nmf.h(j, k)) v *= s;
    }
}

// ---------------------------------------------------------------------------
// Deep prior

/// Metropolis settings for the latent update. `proposal_variance` is the
/// variance of the isotropic Gaussian random-walk proposal.
struct MetropolisConfig {
  double proposal_variance = 1e-4;
  std::size_t inner_steps = 30;
  std::uint64_t seed = 0;

  void validate() const {
    require(proposal_variance > 0.0, "MetropolisConfig: proposal variance must be positive");
    require(inner_steps >= 1, "MetropolisConfig: need at least one inner step");
  }
};

/// lambda_ftn = u_nf v_nt [decoder(z_nt)]_f. Decoded spectra are cached in
/// `spectrum(n, t)` and must be refreshed whenever z changes.
class DeepPriorFactors {
 public:
  DeepPriorFactors() = default;
  DeepPriorFactors(std::size_t sources, std::size_t frames, std::shared_ptr<const Decoder> decoder)
      : sources_(sources), freqs_(decoder ? decoder->output_dim() : 0), frames_(frames),
        latent_(decoder ? decoder->latent_dim() : 0), decoder_(std::move(decoder)),
        u_(sources_ * freqs_, 1.0), v_(sources_ * frames_, 1.0), z_(sources_ * frames_ * latent_, 0.0),
        r_(sources_ * frames_ * freqs_) {
    require(decoder_ != nullptr, "DeepPriorFactors: decoder is required");
    refresh_spectra();
  }

  std::size_t sources() const noexcept { return sources_; }
  std::size_t freqs() const noexcept { return freqs_; }
  std::size_t frames() const noexcept { return frames_; }
  std::size_t latent_dim() const noexcept { return latent_; }
  const Decoder& decoder() const { return *decoder_; }

  std::span<double> u(std::size_t n) { return {u_.data() + n * freqs_, freqs_}; }
  std::span<const double> u(std::size_t n) const { return {u_.data() + n * freqs_, freqs_}; }
  std::span<double> v(std::size_t n) { return {v_.data() + n * frames_, frames_}; }
  std::span<const double> v(std::size_t n) const { return {v_.data() + n * frames_, frames_}; }
  std::span<double> z(std::size_t n, std::size_t t) { return {z_.data() + (n * frames_ + t) * latent_, latent_}; }
  std::span<const double> z(std::size_t n, std::size_t t) const {
    return {z_.data() + (n * frames_ + t) * latent_, latent_};
  }
  std::span<double> spectrum(std::size_t n, std::size_t t) {
    return {r_.data() + (n * frames_ + t) * freqs_, freqs_};
  }
  std::span<const double> spectrum(std::size_t n, std::size_t t) const {
    return {r_.data() + (n * frames_ + t) * freqs_, freqs_};
  }

  void refresh_spectra() {
    for (std::size_t n = 0; n < sources_; ++n)
      for (std::size_t t = 0; t < frames_; ++t) decoder_->decode(z(n, t), spectrum(n, t));
  }

 private:
  std::size_t sources_ = 0, freqs_ = 0, frames_ = 0, latent_ = 0;
  std::shared_ptr<const Decoder> decoder_;
  std::vector<double> u_, v_, z_, r_;
};

inline void fill_psd(const DeepPriorFactors& dp, PsdGrid& psd, std::size_t offset = 0) {
  for (std::size_t j = 0; j < dp.sources(); ++j)
    for (std::size_t f = 0; f < dp.freqs(); ++f) {
      auto row = psd.row(offset + j, f);
      const double uf = dp.u(j)[f];
      const auto v = dp.v(j);
      for (std::size_t t = 0; t < dp.frames(); ++t) row[t] = uf * v[t] * dp.spectrum(j, t)[f];
    }
}

inline PsdGrid psd_from(const DeepPriorFactors& dp) {
  PsdGrid psd(dp.sources(), dp.freqs(), dp.frames());
  fill_psd(dp, psd);
  floor_psd(psd);
  return psd;
}

/// u_nf <- u_nf sqrt( sum_t v r numer / sum_t v r denom ).
inline void update_deep_prior_u(DeepPriorFactors& dp, const SourceStats& stats, std::size_t offset = 0) {
  for (std::size_t j = 0; j < dp.sources(); ++j)
    for (std::size_t f = 0; f < dp.freqs(); ++f) {
      const auto num = stats.numer.row(offset + j, f);
      const auto den = stats.denom.row(offset + j, f);
      const auto v = dp.v(j);
      double a = 0.0, b = 0.0;
      for (std::size_t t = 0; t < dp.frames(); ++t) {
        const double vr = v[t] * dp.spectrum(j, t)[f];
        a += vr * num[t];
        b += vr * den[t];
      }
      auto& u = dp.u(j)[f];
      if (u > 0.0) u *= detail::mu_factor(a, b);
    }
}

/// v_nt <- v_nt sqrt( sum_f u r numer / sum_f u r denom ).
inline void update_deep_prior_v(DeepPriorFactors& dp, const SourceStats& stats, std::size_t offset = 0) {
  for (std::size_t j = 0; j < dp.sources(); ++j) {
    std::vector<double> a(dp.frames(), 0.0), b(dp.frames(), 0.0);
    const auto u = dp.u(j);
    for (std::size_t f = 0; f < dp.freqs(); ++f) {
      const auto num = stats.numer.row(offset + j, f);
      const auto den = stats.denom.row(offset + j, f);
      for (std::size_t t = 0; t < dp.frames(); ++t) {
        const double ur = u[f] * dp.spectrum(j, t)[f];
        a[t] += ur * num[t];
        b[t] += ur * den[t];
      }
    }
    auto v = dp.v(j);
    for (std::size_t t = 0; t < dp.frames(); ++t)
      if (v[t] > 0.0) v[t] *= detail::mu_factor(a[t], b[t]);
  }
}

/// U update, statistics refresh, V update.
inline void update_deep_prior_scales(DeepPriorFactors& dp, const StatsFunction& stats_at) {
  update_deep_prior_u(dp, stats_at(psd_from(dp)));
  update_deep_prior_v(dp, stats_at(psd_from(dp)));
}

/// Moves the scale of u into v so that mean_f u_nf = 1.
inline void balance_deep_prior(DeepPriorFactors& dp) {
  for (std::size_t j = 0; j < dp.sources(); ++j) {
    double s = 0.0;
    for (double x : dp.u(j)) s += x;
    s /= static_cast<double>(dp.freqs());
    if (!(s > 0.0)) continue;
    for (auto& x : dp.u(j)) x /= s;
    for (auto& x : dp.v(j)) x *= s;
  }
}

/// Log acceptance ratio of the diagonalized model for one frame:
///   -sum_fm [ x~/(l_new g + y_rest) - x~/(l_old g + y_rest) ]
///   -sum_fm log[ (l_new g + y_rest) / (l_old g + y_rest) ].
/// `projected`, `rest` and `gains` hold F*M values (frequency-major);
/// `lambda_new`/`lambda_old` hold F values.
inline double fast_log_acceptance(std::span<const double> projected, std::span<const double> rest,
                                  std::span<const double> gains, std::span<const double> lambda_new,
                                  std::span<const double> lambda_old) {
  const std::size_t freqs = lambda_new.size();
  const std::size_t mm = freqs == 0 ? 0 : projected.size() / freqs;
  double s = 0.0;
  for (std::size_t f = 0; f < freqs; ++f)
    for (std::size_t m = 0; m < mm; ++m) {
      const std::size_t i = f * mm + m;
      const double y_new = lambda_new[f] * gains[i] + rest[i];
      const double y_old = lambda_old[f] * gains[i] + rest[i];
      s -= projected[i] / y_new - projected[i] / y_old;
      s -= std::log(y_new / y_old);
    }
  return s;
}

/// Log acceptance ratio of the full-rank model for one frame, from the MM
/// bound built at Y_ft with PSD lambda_ref (held fixed during the chain):
///   -sum_f (1/l_new - 1/l_old) l_ref^2 numer - sum_f (l_new - l_old) denom.
inline double full_rank_log_acceptance(std::span<const double> numer, std::span<const double> denom,
                                       std::span<const double> lambda_ref, std::span<const double> lambda_new,
                                       std::span<const double> lambda_old) {
  double s = 0.0;
  for (std::size_t f = 0; f < lambda_new.size(); ++f) {
    s -= (1.0 / lambda_new[f] - 1.0 / lambda_old[f]) * lambda_ref[f] * lambda_ref[f] * numer[f];
    s -= (lambda_new[f] - lambda_old[f]) * denom[f];
  }
  return s;
}

/// Frozen target the Metropolis chain evaluates proposals against.
class LatentTarget {
 public:
  virtual ~LatentTarget() = default;
  /// log gamma for source `n` (a row of the global PSD grid) at frame t.
  virtual double log_acceptance(std::size_t n, std::size_t t, std::span<const double> lambda_new,
                                std::span<const double> lambda_old) const = 0;
};

/// Diagonalized model: y~^{not n} is computed once from the PSD grid at
/// construction and stays frozen while the chain runs.
class FastLatentTarget final : public LatentTarget {
 public:
  FastLatentTarget(const DiagonalizableSpatial& spatial, const PowerTensor& projected, const PsdGrid& psd,
                   std::span<const std::size_t> sources)
      : freqs_(spatial.freqs()), frames_(projected.frames()), channels_(spatial.channels()),
        sources_(sources.begin(), sources.end()) {
    for (std::size_t n : sources_) {
      std::vector<double> rest(frames_ * freqs_ * channels_, 0.0), gains(freqs_ * channels_);
      for (std::size_t f = 0; f < freqs_; ++f) {
        for (std::size_t m = 0; m < channels_; ++m) gains[f * channels_ + m] = spatial.gains(n, f)[m];
        for (std::size_t other = 0; other < spatial.sources(); ++other) {
          if (other == n) continue;
          const auto g = spatial.gains(other, f);
          for (std::size_t t = 0; t < frames_; ++t) {
            const double lam = psd.at(other, f, t);
            for (std::size_t m = 0; m < channels_; ++m) rest[(t * freqs_ + f) * channels_ + m] += lam * g[m];
          }
        }
      }
      rest_.push_back(std::move(rest));
      gains_.push_back(std::move(gains));
    }
    projected_.resize(frames_ * freqs_ * channels_);
    for (std::size_t f = 0; f < freqs_; ++f)
      for (std::size_t t = 0; t < frames_; ++t)
        for (std::size_t m = 0; m < channels_; ++m)
          projected_[(t * freqs_ + f) * channels_ + m] = projected.at(f, t, m);
  }

  double log_acceptance(std::size_t n, std::size_t t, std::span<const double> lambda_new,
                        std::span<const double> lambda_old) const override {
    const std::size_t slot = index_of(n);
    const std::size_t stride = freqs_ * channels_;
    return fast_log_acceptance({projected_.data() + t * stride, stride}, {rest_[slot].data() + t * stride, stride},
                               gains_[slot], lambda_new, lambda_old);
  }

 private:
  std::size_t index_of(std::size_t n) const {
    for (std::size_t i = 0; i < sources_.size(); ++i)
      if (sources_[i] == n) return i;
    fail(ErrorKind::invalid_input, "FastLatentTarget: source was not prepared");
  }

  std::size_t freqs_, frames_, channels_;
  std::vector<std::size_t> sources_;
  std::vector<double> projected_;  // T x F x M
  std::vector<std::vector<double>> rest_, gains_;
};

/// Full-rank model: numer/denom statistics and the PSD they were computed at.
class FullRankLatentTarget final : public LatentTarget {
 public:
  FullRankLatentTarget(SourceStats stats, PsdGrid reference) : stats_(std::move(stats)), ref_(std::move(reference)) {}

  double log_acceptance(std::size_t n, std::size_t t, std::span<const double> lambda_new,
                        std::span<const double> lambda_old) const override {
    const std::size_t freqs = ref_.freqs();
    std::vector<double> num(freqs), den(freqs), ref(freqs);
    for (std::size_t f = 0; f < freqs; ++f) {
      num[f] = stats_.numer.at(n, f, t);
      den[f] = stats_.denom.at(n, f, t);
      ref[f] = ref_.at(n, f, t);
    }
    return full_rank_log_acceptance(num, den, ref, lambda_new, lambda_old);
  }

 private:
  SourceStats stats_;
  PsdGrid ref_;
};

struct MetropolisReport {
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  double acceptance_rate() const { return proposals == 0 ? 0.0 : static_cast<double>(accepted) / proposals; }
};

/// Random-walk Metropolis over every z_nt: `inner_steps` proposals per frame,
/// z_new ~ N(z_old, variance I), accepted with probability min(1, gamma).
/// Each (n, t) chain draws from its own stream seeded by (seed, stream, n, t),
/// so frames can run in parallel and results are reproducible. Source j of
/// `dp` is row offset + j of the target.
inline MetropolisReport update_deep_prior_latents(DeepPriorFactors& dp, const LatentTarget& target,
                                                  const MetropolisConfig& cfg, std::uint64_t stream,
                                                  std::size_t offset = 0, std::size_t threads = 1) {
  cfg.validate();
  const double step = std::sqrt(cfg.proposal_variance);
  std::vector<std::size_t> accepted(dp.sources() * dp.frames(), 0);
  parallel_for(dp.sources() * dp.frames(), threads, [&](std::size_t idx) {
    const std::size_t j = idx / dp.frames();
    const std::size_t t = idx % dp.frames();
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(j),
                      static_cast<std::uint32_t>(t)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    auto z = dp.z(j, t);
    auto r = dp.spectrum(j, t);
    std::vector<double> z_new(z.size()), r_new(r.size()), lam_old(dp.freqs()), lam_new(dp.freqs());
    const double vt = dp.v(j)[t];
    for (std::size_t f = 0; f < dp.freqs(); ++f) lam_old[f] = dp.u(j)[f] * vt * r[f];
    for (std::size_t step_i = 0; step_i < cfg.inner_steps; ++step_i) {
      for (std::size_t d = 0; d < z.size(); ++d) z_new[d] = z[d] + step * normal(rng);
      dp.decoder().decode(z_new, r_new);
      for (std::size_t f = 0; f < dp.freqs(); ++f) lam_new[f] = dp.u(j)[f] * vt * r_new[f];
      const double log_gamma = target.log_acceptance(offset + j, t, lam_new, lam_old);
      const double draw = uniform(rng);
      if (log_gamma >= 0.0 || std::log(draw) < log_gamma) {
        std::copy(z_new.begin(), z_new.end(), z.begin());
        std::copy(r_new.begin(), r_new.end(), r.begin());
        lam_old.swap(lam_new);
        ++accepted[idx];
      }
    }
  });
  MetropolisReport report;
  report.proposals = dp.sources() * dp.frames() * cfg.inner_steps;
  for (auto a : accepted) report.accepted += a;
  return report;
}

// ---------------------------------------------------------------------------
// Composite source models used by the separators

struct UnconstrainedModel {
  PsdGrid psd;
};
struct NmfModel {
  NmfFactors nmf;
};
/// Source 0 follows the deep prior; sources 1.. follow NMF.
struct DeepPriorModel {
  DeepPriorFactors speech;
  NmfFactors noise;
};

using SourceModel = std::variant<UnconstrainedModel, NmfModel, DeepPriorModel>;

inline PsdGrid psd_from(const DeepPriorModel& m) {
  PsdGrid psd(m.speech.sources() + m.noise.sources(), m.speech.freqs(), m.speech.frames());
  fill_psd(m.speech, psd, 0);
  fill_psd(m.noise, psd, m.speech.sources());
  floor_psd(psd);
  return psd;
}

inline PsdGrid psd_from(const SourceModel& model) {
  return std::visit(
      [](const auto& m) -> PsdGrid {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, UnconstrainedModel>) {
          return m.psd;
        } else if constexpr (std::is_same_v<T, NmfModel>) {
          return psd_from(m.nmf);
        } else {
          return psd_from(m);
        }
      },
      model);
}

/// Multiplies lambda_ftn by scales[n * F + f] through the model's own
/// parameters (the frequency-side factor of each parameterization).
inline void absorb_scales(SourceModel& model, std::span<const double> scales) {
  std::visit(
      [&](auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, UnconstrainedModel>) {
          for (std::size_t n = 0; n < m.psd.sources(); ++n)
            for (std::size_t f = 0; f < m.psd.freqs(); ++f)
              for (auto& v : m.psd.row(n, f)) v *= scales[n * m.psd.freqs() + f];
        } else {
          auto scale_nmf = [&](NmfFactors& nmf, std::size_t offset) {
            for (std::size_t j = 0; j < nmf.sources(); ++j)
              for (std::size_t k = 0; k < nmf.bases(); ++k) {
                auto w = nmf.w(j, k);
                for (std::size_t f = 0; f < nmf.freqs(); ++f) w[f] *= scales[(offset + j) * nmf.freqs() + f];
              }
          };
          if constexpr (std::is_same_v<T, NmfModel>) {
            scale_nmf(m.nmf, 0);
          } else {
            for (std::size_t j = 0; j < m.speech.sources(); ++j)
              for (std::size_t f = 0; f < m.speech.freqs(); ++f) m.speech.u(j)[f] *= scales[j * m.speech.freqs() + f];
            scale_nmf(m.noise, m.speech.sources());
          }
        }
      },
      model);
}

}  // namespace fastbss
