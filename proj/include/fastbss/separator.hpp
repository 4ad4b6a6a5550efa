#pragma once

// The six separation methods as iteration loops over source-model and
// spatial-model updates, plus multichannel Wiener filtering of the result.
//
// Update order within one iteration:
//   1. source model (Metropolis chain, then frequency-side MU, then time-side
//      MU, with statistics refreshed between steps);
//   2. spatial model (gains then diagonalizer for the fast methods, SCMs for
//      the full-rank ones);
//   3. scale normalization (sum_m g = M, or tr G = M), folded into the PSDs.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fastbss/decoder.hpp"
#include "fastbss/error.hpp"
#include "fastbss/linalg.hpp"
#include "fastbss/parallel.hpp"
#include "fastbss/psd.hpp"
#include "fastbss/signal.hpp"
#include "fastbss/source.hpp"
#include "fastbss/spatial.hpp"

namespace fastbss {

enum class Method { fca, mnmf, mnmf_dp, fast_fca, fast_mnmf, fast_mnmf_dp };

inline constexpr Method kAllMethods[] = {Method::fca,      Method::mnmf,      Method::mnmf_dp,
                                         Method::fast_fca, Method::fast_mnmf, Method::fast_mnmf_dp};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::fca: return "fca";
    case Method::mnmf: return "mnmf";
    case Method::mnmf_dp: return "mnmf-dp";
    case Method::fast_fca: return "fast-fca";
    case Method::fast_mnmf: return "fast-mnmf";
    case Method::fast_mnmf_dp: return "fast-mnmf-dp";
  }
  return "?";
}

inline std::optional<Method> parse_method(const std::string& name) {
  for (Method m : kAllMethods)
    if (to_string(m) == name) return m;
  return std::nullopt;
}

inline bool is_fast(Method m) {
  return m == Method::fast_fca || m == Method::fast_mnmf || m == Method::fast_mnmf_dp;
}
inline bool uses_bases(Method m) { return m != Method::fca && m != Method::fast_fca; }
inline bool uses_deep_prior(Method m) { return m == Method::mnmf_dp || m == Method::fast_mnmf_dp; }

struct ModelState {
  std::variant<FullRankSpatial, DiagonalizableSpatial> spatial;
  SourceModel source;
};

struct IterationInfo {
  std::size_t iteration = 0;  // 0-based
  double log_likelihood = 0.0;
  double seconds = 0.0;
  double ip_normalization_error = 0.0;
  const ModelState* state = nullptr;
  const PsdGrid* psd = nullptr;
};

struct SeparatorConfig {
  Method method = Method::fast_mnmf;
  std::size_t sources = 2;
  std::size_t bases = 16;
  std::size_t iterations = 100;
  std::uint64_t seed = 0;
  /// Rescale spatial parameters each iteration (folded into the PSDs).
  bool normalize = true;
  /// Run the latent chain; when false the deep prior's z stays at its
  /// initial value and only U, V are updated.
  bool metropolis_enabled = true;
  /// Chain before the U/V updates (default) or after.
  bool metropolis_first = true;
  std::size_t ip_sweeps = 1;
  MetropolisConfig metropolis;
  /// Required for the deep-prior methods; defaults to the toy decoder.
  std::shared_ptr<const Decoder> decoder;
  std::size_t threads = 1;
  std::function<void(const IterationInfo&)> on_iteration;

  void validate() const {
    require(sources >= 1, "separator: need at least one source");
    require(iterations >= 1, "separator: need at least one iteration");
    require(!uses_bases(method) || bases >= 1, "separator: need at least one NMF basis");
    require(ip_sweeps >= 1, "separator: need at least one IP sweep");
    require(threads >= 1, "separator: need at least one thread");
    if (uses_deep_prior(method)) metropolis.validate();
  }
};

struct SeparationResult {
  std::vector<Spectrogram> images;  // one F x T x M spectrogram per source
  std::vector<double> log_likelihood;
  std::vector<double> seconds;
  std::vector<double> ip_normalization_error;  // fast methods only
  std::vector<double> acceptance_rate;         // deep-prior methods only
  ModelState state;
  PsdGrid psd;
};

// ---------------------------------------------------------------------------
// Wiener filtering

/// x_ftn = lambda_ftn G_nf Y_ft^-1 x_ft for every bin and source.
inline std::vector<Spectrogram> wiener_fullrank(const FullRankSpatial& g, const PsdGrid& psd, const Spectrogram& x,
                                                std::size_t threads = 1) {
  detail::check_psd_shape(psd, g.sources(), g.freqs(), x.frames());
  require(x.freqs() == g.freqs() && x.channels() == g.channels(), "wiener_fullrank: observation shape mismatch");
  const std::size_t mm = g.channels();
  std::vector<Spectrogram> out(g.sources(), Spectrogram(x.freqs(), x.frames(), mm));
  parallel_for(x.freqs(), threads, [&](std::size_t f) {
    std::vector<cdouble> y(mm * mm), y_inv(mm * mm), work(2 * mm * mm), b(mm), img(mm);
    for (std::size_t t = 0; t < x.frames(); ++t) {
      detail::mix_full_rank(g, psd, f, t, y);
      try {
        kernel::hermitian_pd_inverse(y, mm, y_inv, work);
      } catch (const Error& e) {
        throw e.with_context(detail::bin_context("Wiener filter at (f, t)", f, t));
      }
      kernel::matvec(y_inv, mm, x.cell(f, t), b);
      for (std::size_t n = 0; n < g.sources(); ++n) {
        kernel::matvec(g.scm(n, f), mm, b, img);
        const double lam = psd.at(n, f, t);
        auto cell = out[n].cell(f, t);
        for (std::size_t i = 0; i < mm; ++i) cell[i] = lam * img[i];
      }
    }
  });
  return out;
}

/// x_ftn = Q_f^-1 Diag(lambda_ftn g_nf / y~_ft) Q_f x_ft, the full-rank filter
/// specialized to jointly diagonalizable SCMs.
inline std::vector<Spectrogram> wiener_fast(const DiagonalizableSpatial& s, const PsdGrid& psd, const Spectrogram& x,
                                            std::size_t threads = 1) {
  detail::check_psd_shape(psd, s.sources(), s.freqs(), x.frames());
  require(x.freqs() == s.freqs() && x.channels() == s.channels(), "wiener_fast: observation shape mismatch");
  const std::size_t mm = s.channels();
  std::vector<Spectrogram> out(s.sources(), Spectrogram(x.freqs(), x.frames(), mm));
  parallel_for(x.freqs(), threads, [&](std::size_t f) {
    ComplexMatrix q_inv;
    try {
      q_inv = inverse(s.diagonalizer_matrix(f));
    } catch (const Error& e) {
      throw e.with_context("Wiener filter at f = " + std::to_string(f));
    }
    const auto q = s.diagonalizer(f);
    std::vector<cdouble> proj(mm), masked(mm), img(mm);
    std::vector<double> y(mm);
    for (std::size_t t = 0; t < x.frames(); ++t) {
      kernel::matvec(q, mm, x.cell(f, t), proj);
      std::fill(y.begin(), y.end(), 0.0);
      for (std::size_t n = 0; n < s.sources(); ++n)
        for (std::size_t m = 0; m < mm; ++m) y[m] += psd.at(n, f, t) * s.gains(n, f)[m];
      for (std::size_t m = 0; m < mm; ++m)
        if (!(y[m] > 0.0))
          fail(ErrorKind::degenerate_model, detail::bin_context("Wiener filter: zero model power at (f, t)", f, t));
      for (std::size_t n = 0; n < s.sources(); ++n) {
        const double lam = psd.at(n, f, t);
        const auto g = s.gains(n, f);
        for (std::size_t m = 0; m < mm; ++m) masked[m] = proj[m] * (lam * g[m] / y[m]);
        kernel::matvec(q_inv.values(), mm, masked, img);
        auto cell = out[n].cell(f, t);
        std::copy(img.begin(), img.end(), cell.begin());
      }
    }
  });
  return out;
}

inline std::vector<Spectrogram> wiener(const ModelState& state, const PsdGrid& psd, const Spectrogram& x,
                                       std::size_t threads = 1) {
  if (const auto* g = std::get_if<FullRankSpatial>(&state.spatial)) return wiener_fullrank(*g, psd, x, threads);
  return wiener_fast(std::get<DiagonalizableSpatial>(state.spatial), psd, x, threads);
}

// ---------------------------------------------------------------------------
// Initialization

/// Mean per-channel observed power.
inline double mean_power(const Spectrogram& x) {
  double s = 0.0;
  for (const auto& v : x.values()) s += std::norm(v);
  return x.values().empty() ? 0.0 : s / static_cast<double>(x.values().size());
}

namespace detail {

inline double grid_mean(const PsdGrid& psd) {
  double s = 0.0;
  for (double v : psd.values()) s += v;
  return psd.values().empty() ? 0.0 : s / static_cast<double>(psd.values().size());
}

inline void scale_to(SourceModel& model, double target_mean) {
  const double current = grid_mean(psd_from(model));
  if (!(current > 0.0) || !(target_mean > 0.0)) return;
  const double c = target_mean / current;
  std::visit(
      [&](auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, UnconstrainedModel>) {
          for (auto& v : m.psd.values()) v *= c;
        } else if constexpr (std::is_same_v<T, NmfModel>) {
          for (std::size_t j = 0; j < m.nmf.sources(); ++j)
            for (std::size_t k = 0; k < m.nmf.bases(); ++k)
              for (auto& v : m.nmf.w(j, k)) v *= c;
        } else {
          for (std::size_t j = 0; j < m.speech.sources(); ++j)
            for (auto& v : m.speech.u(j)) v *= c;
          for (std::size_t j = 0; j < m.noise.sources(); ++j)
            for (std::size_t k = 0; k < m.noise.bases(); ++k)
              for (auto& v : m.noise.w(j, k)) v *= c;
        }
      },
      model);
}

inline void balance(SourceModel& model) {
  if (auto* m = std::get_if<NmfModel>(&model)) balance_nmf(m->nmf);
  if (auto* m = std::get_if<DeepPriorModel>(&model)) {
    balance_deep_prior(m->speech);
    balance_nmf(m->noise);
  }
}

}  // namespace detail

/// Spatial model from the observed SCMs (normalized, nothing folded), source
/// parameters drawn uniformly in [0.1, 1.1] from the seed and rescaled so the
/// mean PSD equals the mean channel power divided by N. Deep-prior latents
/// start at z = 0.
inline ModelState initialize(const SeparatorConfig& cfg, const Spectrogram& x) {
  cfg.validate();
  require(x.frames() >= 1 && x.freqs() >= 1 && x.channels() >= 1, "separator: empty observation");
  require(x.all_finite(), "separator: observation has non-finite values");
  const std::size_t n_src = cfg.sources;
  ModelState state{FullRankSpatial{}, UnconstrainedModel{}};
  if (is_fast(cfg.method)) {
    auto s = init_diagonalizable(x, n_src);
    normalize_gains(s);
    state.spatial = std::move(s);
  } else {
    auto g = init_full_rank(x, n_src);
    normalize_scms(g);
    state.spatial = std::move(g);
  }

  const std::size_t freqs = x.freqs(), frames = x.frames();
  switch (cfg.method) {
    case Method::fca:
    case Method::fast_fca: {
      PsdGrid psd(n_src, freqs, frames);
      std::mt19937_64 rng(cfg.seed);
      std::uniform_real_distribution<double> u(0.1, 1.1);
      for (auto& v : psd.values()) v = u(rng);
      state.source = UnconstrainedModel{std::move(psd)};
      break;
    }
    case Method::mnmf:
    case Method::fast_mnmf:
      state.source = NmfModel{NmfFactors::random(n_src, cfg.bases, freqs, frames, cfg.seed)};
      break;
    case Method::mnmf_dp:
    case Method::fast_mnmf_dp: {
      std::shared_ptr<const Decoder> decoder = cfg.decoder;
      if (!decoder) decoder = std::make_shared<MlpDecoder>(MlpDecoder::toy(freqs));
      require(decoder->output_dim() == freqs, "separator: decoder output size does not match the frequency count");
      state.source = DeepPriorModel{DeepPriorFactors(1, frames, decoder),
                                    NmfFactors::random(n_src - 1, cfg.bases, freqs, frames, cfg.seed)};
      break;
    }
  }
  detail::scale_to(state.source, mean_power(x) / static_cast<double>(n_src));
  detail::balance(state.source);
  return state;
}

// ---------------------------------------------------------------------------
// Iteration

namespace detail {

/// One source-model pass. `psd` must equal psd_from(model) on entry and is
/// kept equal to it on return.
inline double update_sources(SourceModel& model, PsdGrid& psd, const StatsFunction& stats_at,
                             const std::function<std::unique_ptr<LatentTarget>(const PsdGrid&)>& make_target,
                             const SeparatorConfig& cfg, std::size_t iteration) {
  double acceptance = 0.0;
  std::visit(
      [&](auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, UnconstrainedModel>) {
          update_unconstrained(m.psd, stats_at(psd));
          psd = m.psd;
        } else if constexpr (std::is_same_v<T, NmfModel>) {
          update_nmf_bases(m.nmf, stats_at(psd), 0, cfg.threads);
          fill_psd(m.nmf, psd);
          floor_psd(psd);
          update_nmf_activations(m.nmf, stats_at(psd), 0, cfg.threads);
          fill_psd(m.nmf, psd);
          floor_psd(psd);
        } else {
          auto chain = [&] {
            if (!cfg.metropolis_enabled) return;
            const auto target = make_target(psd);
            acceptance = update_deep_prior_latents(m.speech, *target, cfg.metropolis, iteration, 0, cfg.threads)
                             .acceptance_rate();
            psd = psd_from(m);
          };
          if (cfg.metropolis_first) chain();
          const std::size_t noise_offset = m.speech.sources();
          {
            const SourceStats stats = stats_at(psd);
            update_deep_prior_u(m.speech, stats, 0);
            update_nmf_bases(m.noise, stats, noise_offset, cfg.threads);
            psd = psd_from(m);
          }
          {
            const SourceStats stats = stats_at(psd);
            update_deep_prior_v(m.speech, stats, 0);
            update_nmf_activations(m.noise, stats, noise_offset, cfg.threads);
            psd = psd_from(m);
          }
          if (!cfg.metropolis_first) chain();
        }
      },
      model);
  return acceptance;
}

}  // namespace detail

/// Runs `cfg.iterations` update passes from `initialize(cfg, x)` and returns
/// the Wiener-filtered source images. seconds[i] covers the update pass of
/// iteration i only; likelihood evaluation and filtering are excluded.
inline SeparationResult run(const SeparatorConfig& cfg, const Spectrogram& x) {
  SeparationResult result{{}, {}, {}, {}, {}, initialize(cfg, x), {}};
  ModelState& state = result.state;
  PsdGrid psd = psd_from(state.source);
  const std::size_t threads = cfg.threads;
  using clock = std::chrono::steady_clock;

  auto* full = std::get_if<FullRankSpatial>(&state.spatial);
  auto* fast = std::get_if<DiagonalizableSpatial>(&state.spatial);

  PowerTensor projected;
  double floor = 0.0;
  if (fast) {
    projected = project(*fast, x, threads);
    floor = model_power_floor(projected);
  }

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    double ip_error = 0.0;
    double acceptance = 0.0;
    double ll = 0.0;
    const auto start = clock::now();
    try {
      if (full) {
        const StatsFunction stats_at = [&](const PsdGrid& p) { return source_stats(*full, p, x, threads); };
        auto make_target = [&](const PsdGrid& p) -> std::unique_ptr<LatentTarget> {
          return std::make_unique<FullRankLatentTarget>(source_stats(*full, p, x, threads), p);
        };
        acceptance = detail::update_sources(state.source, psd, stats_at, make_target, cfg, it);
        update_scm_fullrank(*full, psd, x, threads);
        if (cfg.normalize) absorb_scales(state.source, normalize_scms(*full));
      } else {
        const StatsFunction stats_at = [&](const PsdGrid& p) {
          return source_stats(*fast, projected, model_power(*fast, p, floor), threads);
        };
        auto make_target = [&](const PsdGrid& p) -> std::unique_ptr<LatentTarget> {
          const std::size_t speech[] = {0};
          return std::make_unique<FastLatentTarget>(*fast, projected, p, speech);
        };
        acceptance = detail::update_sources(state.source, psd, stats_at, make_target, cfg, it);
        update_gains_mu(*fast, psd, projected, model_power(*fast, psd, floor), threads);
        ip_error = update_diagonalizer_ip(*fast, x, model_power(*fast, psd, floor), threads, cfg.ip_sweeps);
        if (cfg.normalize) {
          normalize_diagonalizer_rows(*fast);
          absorb_scales(state.source, normalize_gains(*fast));
        }
        projected = project(*fast, x, threads);
        floor = model_power_floor(projected);
      }
      detail::balance(state.source);
      psd = psd_from(state.source);
    } catch (const Error& e) {
      throw e.with_context("iteration " + std::to_string(it));
    }
    const double seconds = std::chrono::duration<double>(clock::now() - start).count();

    ll = full ? log_likelihood(*full, psd, x, threads)
              : fast_log_likelihood(*fast, projected, model_power(*fast, psd, floor));
    result.log_likelihood.push_back(ll);
    result.seconds.push_back(seconds);
    if (fast) result.ip_normalization_error.push_back(ip_error);
    if (uses_deep_prior(cfg.method)) result.acceptance_rate.push_back(acceptance);
    if (cfg.on_iteration) cfg.on_iteration(IterationInfo{it, ll, seconds, ip_error, &state, &psd});
  }

  result.images = wiener(state, psd, x, threads);
  result.psd = std::move(psd);
  return result;
}

}  // namespace fastbss
