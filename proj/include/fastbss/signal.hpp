#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "fastbss/error.hpp"

namespace fastbss {

using cdouble = std::complex<double>;

/// Multichannel real signal; channels are stored separately and all have the
/// same length.
struct Waveform {
  double sample_rate = 16000.0;
  std::vector<std::vector<double>> channels;

  Waveform() = default;
  Waveform(double rate, std::size_t num_channels, std::size_t length)
      : sample_rate(rate), channels(num_channels, std::vector<double>(length, 0.0)) {}

  std::size_t num_channels() const noexcept { return channels.size(); }
  std::size_t length() const noexcept { return channels.empty() ? 0 : channels.front().size(); }

  void validate() const {
    require(sample_rate > 0.0, "waveform: sample rate must be positive");
    require(!channels.empty(), "waveform: no channels");
    for (const auto& c : channels) require(c.size() == length(), "waveform: channels differ in length");
  }
};

/// Complex multichannel spectrogram laid out frequency-major: for each
/// frequency bin, T frames of M contiguous channel values. Each (f, t) cell
/// is therefore the observation vector x_ft.
class Spectrogram {
 public:
  Spectrogram() = default;
  Spectrogram(std::size_t freqs, std::size_t frames, std::size_t channels)
      : freqs_(freqs), frames_(frames), channels_(channels), data_(freqs * frames * channels) {}

  std::size_t freqs() const noexcept { return freqs_; }
  std::size_t frames() const noexcept { return frames_; }
  std::size_t channels() const noexcept { return channels_; }

  cdouble& at(std::size_t f, std::size_t t, std::size_t m) { return data_[(f * frames_ + t) * channels_ + m]; }
  const cdouble& at(std::size_t f, std::size_t t, std::size_t m) const {
    return data_[(f * frames_ + t) * channels_ + m];
  }

  std::span<cdouble> cell(std::size_t f, std::size_t t) {
    return {data_.data() + (f * frames_ + t) * channels_, channels_};
  }
  std::span<const cdouble> cell(std::size_t f, std::size_t t) const {
    return {data_.data() + (f * frames_ + t) * channels_, channels_};
  }

  std::span<cdouble> values() noexcept { return data_; }
  std::span<const cdouble> values() const noexcept { return data_; }

  bool all_finite() const {
    for (const auto& v : data_)
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    return true;
  }

  bool same_shape(const Spectrogram& o) const noexcept {
    return freqs_ == o.freqs_ && frames_ == o.frames_ && channels_ == o.channels_;
  }

 private:
  std::size_t freqs_ = 0;
  std::size_t frames_ = 0;
  std::size_t channels_ = 0;
  std::vector<cdouble> data_;
};

}  // namespace fastbss
