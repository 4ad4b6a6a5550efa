#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include <fftw3.h>

#include "fastbss/error.hpp"
#include "fastbss/signal.hpp"

namespace fastbss {

/// Periodic Hann window of the given length.
inline std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t n = 0; n < length; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(length));
  return w;
}

struct StftParams {
  std::size_t window_length = 1024;
  std::size_t hop = 256;

  std::size_t freqs() const noexcept { return window_length / 2 + 1; }

  void validate() const {
    require(window_length >= 2 && std::has_single_bit(window_length), "stft: window length must be a power of two");
    require(hop > 0 && hop <= window_length, "stft: hop must be in (0, window_length]");
  }
};

namespace detail {

// FFTW planning is not thread-safe; execution on fresh arrays is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwPlanDeleter {
  void operator()(fftw_plan_s* p) const {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(p);
  }
};
using FftwPlan = std::unique_ptr<fftw_plan_s, FftwPlanDeleter>;

struct FftwBuffer {
  explicit FftwBuffer(std::size_t window)
      : real(static_cast<double*>(fftw_malloc(sizeof(double) * window))),
        spectrum(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (window / 2 + 1)))) {}
  ~FftwBuffer() {
    fftw_free(real);
    fftw_free(spectrum);
  }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;

  double* real;
  fftw_complex* spectrum;
};

}  // namespace detail

/// Number of frames produced for a signal of `length` samples: the signal is
/// reflect-padded by window/2 on both sides and frames are taken every `hop`
/// samples until the padded signal is covered (zero-extended at the end).
inline std::size_t stft_frame_count(std::size_t length, const StftParams& params) {
  return 1 + (length + params.hop - 1) / params.hop;
}

inline Spectrogram stft(const Waveform& signal, const StftParams& params) {
  params.validate();
  signal.validate();
  const std::size_t win = params.window_length;
  const std::size_t length = signal.length();
  require(length >= win, "stft: signal is shorter than one window");

  const std::size_t pad = win / 2;
  const std::size_t frames = stft_frame_count(length, params);
  const std::size_t padded_length = (frames - 1) * params.hop + win;
  const std::size_t freqs = params.freqs();
  const std::size_t channels = signal.num_channels();
  const auto window = hann_window(win);

  Spectrogram out(freqs, frames, channels);
  detail::FftwBuffer buffer(win);
  detail::FftwPlan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan.reset(fftw_plan_dft_r2c_1d(static_cast<int>(win), buffer.real, buffer.spectrum, FFTW_ESTIMATE));
  }

  std::vector<double> padded(padded_length, 0.0);
  for (std::size_t m = 0; m < channels; ++m) {
    const auto& x = signal.channels[m];
    std::fill(padded.begin(), padded.end(), 0.0);
    for (std::size_t i = 0; i < length; ++i) padded[pad + i] = x[i];
    for (std::size_t k = 1; k <= pad; ++k) {
      padded[pad - k] = x[k];
      padded[pad + length - 1 + k] = x[length - 1 - k];
    }
    for (std::size_t t = 0; t < frames; ++t) {
      const double* frame = padded.data() + t * params.hop;
      for (std::size_t n = 0; n < win; ++n) buffer.real[n] = window[n] * frame[n];
      fftw_execute_dft_r2c(plan.get(), buffer.real, buffer.spectrum);
      for (std::size_t f = 0; f < freqs; ++f) out.at(f, t, m) = {buffer.spectrum[f][0], buffer.spectrum[f][1]};
    }
  }
  return out;
}

/// Weighted overlap-add inverse with the same periodic Hann window, normalized
/// by the accumulated squared window. `length` defaults to (T-1)*hop.
inline Waveform istft(const Spectrogram& spec, const StftParams& params, double sample_rate = 16000.0,
                      std::size_t length = 0) {
  params.validate();
  require(spec.freqs() == params.freqs(), "istft: frequency count does not match window length");
  require(spec.frames() >= 1 && spec.channels() >= 1, "istft: empty spectrogram");
  require(sample_rate > 0.0, "istft: sample rate must be positive");
  const std::size_t win = params.window_length;
  const std::size_t pad = win / 2;
  const std::size_t frames = spec.frames();
  const std::size_t padded_length = (frames - 1) * params.hop + win;
  if (length == 0) length = (frames - 1) * params.hop;
  require(pad + length <= padded_length, "istft: requested length exceeds the spectrogram's span");
  const auto window = hann_window(win);

  std::vector<double> norm(padded_length, 0.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t n = 0; n < win; ++n) norm[t * params.hop + n] += window[n] * window[n];

  detail::FftwBuffer buffer(win);
  detail::FftwPlan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan.reset(fftw_plan_dft_c2r_1d(static_cast<int>(win), buffer.spectrum, buffer.real, FFTW_ESTIMATE));
  }

  Waveform out(sample_rate, spec.channels(), length);
  std::vector<double> acc(padded_length);
  const double scale = 1.0 / static_cast<double>(win);
  for (std::size_t m = 0; m < spec.channels(); ++m) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t f = 0; f < params.freqs(); ++f) {
        buffer.spectrum[f][0] = spec.at(f, t, m).real();
        buffer.spectrum[f][1] = spec.at(f, t, m).imag();
      }
      // c2r ignores imaginary parts of DC and Nyquist; that matches a real signal.
      fftw_execute_dft_c2r(plan.get(), buffer.spectrum, buffer.real);
      for (std::size_t n = 0; n < win; ++n) acc[t * params.hop + n] += window[n] * buffer.real[n] * scale;
    }
    for (std::size_t i = 0; i < length; ++i) {
      const double nrm = norm[pad + i];
      out.channels[m][i] = nrm > 1e-12 ? acc[pad + i] / nrm : 0.0;
    }
  }
  return out;
}

}  // namespace fastbss
