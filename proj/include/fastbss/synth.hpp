#pragma once

// Synthetic data: exact draws from the Gaussian generative model, and
// convolutive mixtures of deterministic speech-like test signals.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <variant>
#include <vector>

#include "fastbss/error.hpp"
#include "fastbss/linalg.hpp"
#include "fastbss/psd.hpp"
#include "fastbss/signal.hpp"
#include "fastbss/spatial.hpp"

namespace fastbss {

struct GroundTruth {
  std::variant<FullRankSpatial, DiagonalizableSpatial> spatial;
  PsdGrid psd;
  std::vector<Spectrogram> images;
  std::uint64_t seed = 0;
};

struct SampledMixture {
  Spectrogram mixture;
  GroundTruth truth;
};

namespace detail {

/// Factor L with L L^H = g, from the eigendecomposition (g may be singular).
inline ComplexMatrix covariance_factor(const ComplexMatrix& g) {
  auto eig = hermitian_eig(hermitian_part(g));
  const double top = std::max(eig.eigenvalues.front(), 0.0);
  for (auto& w : eig.eigenvalues) {
    if (w < -1e-10 * std::max(top, 1e-300)) fail(ErrorKind::invalid_input, "sample_from_model: SCM is not PSD");
    w = std::sqrt(std::max(w, 0.0));
  }
  ComplexMatrix l = eig.eigenvectors;
  for (std::size_t i = 0; i < l.rows(); ++i)
    for (std::size_t k = 0; k < l.cols(); ++k) l(i, k) *= eig.eigenvalues[k];
  return l;
}

}  // namespace detail

/// x_ftn ~ CN(0, lambda_ftn G_nf) independently per bin and source;
/// the mixture is the sum of the images.
inline SampledMixture sample_from_model(const FullRankSpatial& g, const PsdGrid& psd, std::uint64_t seed) {
  require(psd.sources() == g.sources() && psd.freqs() == g.freqs(), "sample_from_model: PSD grid shape mismatch");
  for (double v : psd.values()) require(v >= 0.0, "sample_from_model: negative PSD");
  const std::size_t mm = g.channels(), frames = psd.frames();
  SampledMixture out{Spectrogram(g.freqs(), frames, mm), GroundTruth{g, psd, {}, seed}};
  out.truth.images.assign(g.sources(), Spectrogram(g.freqs(), frames, mm));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
  std::vector<cdouble> z(mm);
  for (std::size_t n = 0; n < g.sources(); ++n)
    for (std::size_t f = 0; f < g.freqs(); ++f) {
      const ComplexMatrix l = detail::covariance_factor(g.matrix(n, f));
      for (std::size_t t = 0; t < frames; ++t) {
        for (auto& v : z) v = {normal(rng), normal(rng)};
        const double amp = std::sqrt(psd.at(n, f, t));
        auto img = out.truth.images[n].cell(f, t);
        auto mix = out.mixture.cell(f, t);
        for (std::size_t i = 0; i < mm; ++i) {
          cdouble s = 0.0;
          for (std::size_t k = 0; k < mm; ++k) s += l(i, k) * z[k];
          img[i] = amp * s;
          mix[i] += img[i];
        }
      }
    }
  return out;
}

inline SampledMixture sample_from_model(const DiagonalizableSpatial& s, const PsdGrid& psd, std::uint64_t seed) {
  auto out = sample_from_model(to_full_rank(s), psd, seed);
  out.truth.spatial = s;
  return out;
}

// ---------------------------------------------------------------------------
// Time-domain mixing

/// rirs[n][m] is the impulse response from source n to microphone m.
using RoomResponses = std::vector<std::vector<std::vector<double>>>;

/// Sparse early reflections over an exponentially decaying noise tail, each
/// response scaled to unit energy. The direct path arrives within the first
/// 16 taps.
inline RoomResponses random_room_responses(std::size_t sources, std::size_t channels, std::size_t length,
                                           std::uint64_t seed) {
  require(length >= 32, "random_room_responses: need at least 32 taps");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> direct_delay(0, 15);
  std::uniform_int_distribution<std::size_t> reflection_delay(16, length - 1);
  std::uniform_real_distribution<double> amp(0.2, 0.6);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution sign(0.5);
  const double decay = static_cast<double>(length) / 6.0;

  RoomResponses out(sources, std::vector<std::vector<double>>(channels, std::vector<double>(length, 0.0)));
  for (auto& per_source : out)
    for (auto& h : per_source) {
      h[direct_delay(rng)] += 1.0;
      for (int r = 0; r < 4; ++r) {
        const std::size_t d = reflection_delay(rng);
        h[d] += (sign(rng) ? 1.0 : -1.0) * amp(rng) * std::exp(-static_cast<double>(d) / decay);
      }
      for (std::size_t i = 16; i < length; ++i) h[i] += 0.05 * normal(rng) * std::exp(-static_cast<double>(i) / decay);
      double e = 0.0;
      for (double v : h) e += v * v;
      const double scale = 1.0 / std::sqrt(e);
      for (auto& v : h) v *= scale;
    }
  return out;
}

/// Full linear convolution truncated to the source length.
inline std::vector<double> convolve(std::span<const double> x, std::span<const double> h) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double hk = h[k];
    if (hk == 0.0) continue;
    for (std::size_t i = k; i < x.size(); ++i) y[i] += hk * x[i - k];
  }
  return y;
}

/// Per-source spatial images: image n, channel m = source_n * rir_nm.
inline std::vector<Waveform> source_images(const std::vector<std::vector<double>>& sources, const RoomResponses& rirs,
                                           double sample_rate) {
  require(!sources.empty(), "convolutive_mix: no sources");
  require(rirs.size() == sources.size(), "convolutive_mix: need one response set per source");
  const std::size_t length = sources.front().size();
  const std::size_t channels = rirs.front().size();
  std::vector<Waveform> images;
  for (std::size_t n = 0; n < sources.size(); ++n) {
    require(sources[n].size() == length, "convolutive_mix: sources differ in length");
    require(rirs[n].size() == channels, "convolutive_mix: response sets differ in channel count");
    Waveform img(sample_rate, channels, length);
    for (std::size_t m = 0; m < channels; ++m) img.channels[m] = convolve(sources[n], rirs[n][m]);
    images.push_back(std::move(img));
  }
  return images;
}

/// Channel m = sum_n source_n * rir_nm.
inline Waveform convolutive_mix(const std::vector<std::vector<double>>& sources, const RoomResponses& rirs,
                                double sample_rate) {
  const auto images = source_images(sources, rirs, sample_rate);
  Waveform mix(sample_rate, images.front().num_channels(), images.front().length());
  for (const auto& img : images)
    for (std::size_t m = 0; m < mix.num_channels(); ++m)
      for (std::size_t i = 0; i < mix.length(); ++i) mix.channels[m][i] += img.channels[m][i];
  return mix;
}

/// Harmonic tone with a wandering fundamental and a syllable-rate envelope
/// gated on and off over a faint breath-noise floor; roughly the
/// spectro-temporal sparsity of voiced speech without exact silence.
inline std::vector<double> speech_like_signal(std::size_t length, double sample_rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double f0_base = 90.0 + 160.0 * uni(rng);
  const double vibrato_rate = 0.5 + 2.0 * uni(rng);
  const double vibrato_depth = 0.05 + 0.1 * uni(rng);
  const double syllable_rate = 2.5 + 2.5 * uni(rng);
  const double phase0 = 2.0 * std::numbers::pi * uni(rng);
  const double tilt = 0.6 + 0.8 * uni(rng);

  // On/off gates every ~150-400 ms.
  std::vector<double> gate(length, 0.0);
  for (std::size_t i = 0; i < length;) {
    const auto seg = static_cast<std::size_t>((0.15 + 0.25 * uni(rng)) * sample_rate);
    const double level = uni(rng) < 0.7 ? 1.0 : 0.02;
    for (std::size_t j = i; j < std::min(length, i + seg); ++j) gate[j] = level;
    i += seg;
  }
  // Smooth the gate edges (10 ms moving average).
  const auto smooth = std::max<std::size_t>(1, static_cast<std::size_t>(0.01 * sample_rate));
  std::vector<double> env(length, 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < length; ++i) {
    acc += gate[i];
    if (i >= smooth) acc -= gate[i - smooth];
    env[i] = acc / static_cast<double>(smooth);
  }

  std::vector<double> y(length, 0.0);
  std::normal_distribution<double> breath(0.0, 0.01);
  double phase = phase0;
  const std::size_t harmonics = static_cast<std::size_t>(0.45 * sample_rate / f0_base);
  std::vector<double> harmonic_phase(harmonics + 1);
  for (auto& p : harmonic_phase) p = 2.0 * std::numbers::pi * uni(rng);
  for (std::size_t i = 0; i < length; ++i) {
    const double time = static_cast<double>(i) / sample_rate;
    const double f0 = f0_base * (1.0 + vibrato_depth * std::sin(2.0 * std::numbers::pi * vibrato_rate * time));
    phase += 2.0 * std::numbers::pi * f0 / sample_rate;
    const double syl = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * syllable_rate * time + phase0);
    double s = 0.0;
    for (std::size_t h = 1; h <= harmonics; ++h) {
      if (static_cast<double>(h) * f0 >= 0.5 * sample_rate) break;
      s += std::pow(static_cast<double>(h), -tilt) * std::sin(static_cast<double>(h) * phase + harmonic_phase[h]);
    }
    y[i] = s * env[i] * (0.2 + 0.8 * syl) + breath(rng);
  }
  return y;
}

struct ScenarioConfig {
  std::size_t sources = 2;
  std::size_t channels = 4;
  double duration = 8.0;  // seconds
  double sample_rate = 16000.0;
  std::size_t rir_length = 256;
  std::uint64_t seed = 0;
  std::size_t reference_channel = 0;
};

struct Scenario {
  Waveform mixture;
  std::vector<Waveform> images;
  std::vector<std::vector<double>> dry_sources;
};

/// Speech-like sources through random short room responses, scaled so every
/// source image has the same power at the reference channel (0 dB input
/// SI-SDR for two sources).
inline Scenario make_scenario(const ScenarioConfig& cfg) {
  require(cfg.sources >= 1 && cfg.channels >= 1, "make_scenario: need sources and channels");
  require(cfg.duration > 0.0 && cfg.sample_rate > 0.0, "make_scenario: duration and rate must be positive");
  require(cfg.reference_channel < cfg.channels, "make_scenario: reference channel out of range");
  const auto length = static_cast<std::size_t>(cfg.duration * cfg.sample_rate);
  Scenario sc;
  for (std::size_t n = 0; n < cfg.sources; ++n)
    sc.dry_sources.push_back(speech_like_signal(length, cfg.sample_rate, cfg.seed * 1000003ULL + n + 1));
  const auto rirs = random_room_responses(cfg.sources, cfg.channels, cfg.rir_length, cfg.seed * 7919ULL + 17);
  sc.images = source_images(sc.dry_sources, rirs, cfg.sample_rate);
  for (std::size_t n = 0; n < cfg.sources; ++n) {
    double e = 0.0;
    for (double v : sc.images[n].channels[cfg.reference_channel]) e += v * v;
    const double scale = e > 0.0 ? std::sqrt(static_cast<double>(length) * 0.01 / e) : 1.0;
    for (auto& v : sc.dry_sources[n]) v *= scale;
    for (auto& c : sc.images[n].channels)
      for (auto& v : c) v *= scale;
  }
  sc.mixture = Waveform(cfg.sample_rate, cfg.channels, length);
  for (const auto& img : sc.images)
    for (std::size_t m = 0; m < cfg.channels; ++m)
      for (std::size_t i = 0; i < length; ++i) sc.mixture.channels[m][i] += img.channels[m][i];
  return sc;
}

}  // namespace fastbss
