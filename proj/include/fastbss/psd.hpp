#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "fastbss/error.hpp"

namespace fastbss {

/// Relative floor for PSD values after every update.
inline constexpr double kPsdFloor = 1e-12;

/// Dense N x F x T grid of nonnegative reals, laid out so that the T values of
/// one (source, frequency) pair are contiguous.
class SourceGrid {
 public:
  SourceGrid() = default;
  SourceGrid(std::size_t sources, std::size_t freqs, std::size_t frames, double fill = 0.0)
      : sources_(sources), freqs_(freqs), frames_(frames), data_(sources * freqs * frames, fill) {}

  std::size_t sources() const noexcept { return sources_; }
  std::size_t freqs() const noexcept { return freqs_; }
  std::size_t frames() const noexcept { return frames_; }

  double& at(std::size_t n, std::size_t f, std::size_t t) { return data_[(n * freqs_ + f) * frames_ + t]; }
  double at(std::size_t n, std::size_t f, std::size_t t) const { return data_[(n * freqs_ + f) * frames_ + t]; }

  std::span<double> row(std::size_t n, std::size_t f) { return {data_.data() + (n * freqs_ + f) * frames_, frames_}; }
  std::span<const double> row(std::size_t n, std::size_t f) const {
    return {data_.data() + (n * freqs_ + f) * frames_, frames_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool same_shape(const SourceGrid& o) const noexcept {
    return sources_ == o.sources_ && freqs_ == o.freqs_ && frames_ == o.frames_;
  }

 private:
  std::size_t sources_ = 0;
  std::size_t freqs_ = 0;
  std::size_t frames_ = 0;
  std::vector<double> data_;
};

/// lambda_ftn, the power spectral density of every source.
using PsdGrid = SourceGrid;

/// Per-(n, f, t) statistics consumed by every multiplicative update of a
/// source model. In the full-rank model
///   numer = tr(G_nf Y^-1 X_ft Y^-1),  denom = tr(G_nf Y^-1);
/// in the diagonalized model
///   numer = sum_m g_nfm x_ftm / y_ftm^2,  denom = sum_m g_nfm / y_ftm.
/// Either way the MU factor for lambda_ftn is sqrt(numer / denom).
struct SourceStats {
  SourceGrid numer;
  SourceGrid denom;
};

/// Floors every positive entry at kPsdFloor times the grid maximum. Exact
/// zeros are left alone: they are fixed points of every MU rule.
inline void floor_psd(PsdGrid& psd) {
  auto values = psd.values();
  if (values.empty()) return;
  const double top = *std::max_element(values.begin(), values.end());
  const double floor = kPsdFloor * top;
  for (auto& v : values)
    if (v > 0.0) v = std::max(v, floor);
}

/// F x T x M grid of nonnegative reals, indexed like Spectrogram.
class PowerTensor {
 public:
  PowerTensor() = default;
  PowerTensor(std::size_t freqs, std::size_t frames, std::size_t channels, double fill = 0.0)
      : freqs_(freqs), frames_(frames), channels_(channels), data_(freqs * frames * channels, fill) {}

  std::size_t freqs() const noexcept { return freqs_; }
  std::size_t frames() const noexcept { return frames_; }
  std::size_t channels() const noexcept { return channels_; }

  double& at(std::size_t f, std::size_t t, std::size_t m) { return data_[(f * frames_ + t) * channels_ + m]; }
  double at(std::size_t f, std::size_t t, std::size_t m) const { return data_[(f * frames_ + t) * channels_ + m]; }

  std::span<double> cell(std::size_t f, std::size_t t) { return {data_.data() + (f * frames_ + t) * channels_, channels_}; }
  std::span<const double> cell(std::size_t f, std::size_t t) const {
    return {data_.data() + (f * frames_ + t) * channels_, channels_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

 private:
  std::size_t freqs_ = 0;
  std::size_t frames_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

}  // namespace fastbss
