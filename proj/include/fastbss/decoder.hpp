#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fastbss/error.hpp"

namespace fastbss {

/// Maps a latent vector z (dimension D) to a strictly positive spectrum of
/// length F. Implementations must be pure: equal inputs give equal outputs,
/// and decode may be called concurrently.
class Decoder {
 public:
  virtual ~Decoder() = default;
  virtual std::size_t latent_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual void decode(std::span<const double> z, std::span<double> out) const = 0;

  std::vector<double> decode(std::span<const double> z) const {
    std::vector<double> out(output_dim());
    decode(z, out);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Binary tensor files: a sequence of records, each
//   u64 rank, u64 dims[rank], f32 values[prod(dims)]
// all little-endian.

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }
};

namespace detail {

template <class T>
void write_le(std::ostream& os, T value) {
  static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
bool read_le(std::istream& is, T& value) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&value), sizeof(T)));
}

}  // namespace detail

inline void write_tensors(const std::string& path, std::span<const Tensor> tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot open tensor file for writing: " + path);
  for (const auto& t : tensors) {
    require(t.values.size() == t.element_count(), "write_tensors: value count does not match dims");
    detail::write_le<std::uint64_t>(os, t.dims.size());
    for (auto d : t.dims) detail::write_le<std::uint64_t>(os, d);
    for (float v : t.values) detail::write_le<float>(os, v);
  }
  if (!os) fail(ErrorKind::io, "failed writing tensor file: " + path);
}

inline std::vector<Tensor> read_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open tensor file: " + path);
  std::vector<Tensor> out;
  std::uint64_t rank = 0;
  while (detail::read_le(is, rank)) {
    if (rank > 8) fail(ErrorKind::io, "tensor file has implausible rank: " + path);
    Tensor t;
    t.dims.resize(rank);
    for (auto& d : t.dims)
      if (!detail::read_le(is, d)) fail(ErrorKind::io, "truncated tensor header: " + path);
    t.values.resize(t.element_count());
    for (auto& v : t.values)
      if (!detail::read_le(is, v)) fail(ErrorKind::io, "truncated tensor data: " + path);
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Two-layer perceptron D -> H (tanh) -> F (softplus). The output is floored
/// so it is strictly positive.
class MlpDecoder final : public Decoder {
 public:
  static constexpr double kOutputFloor = 1e-10;

  MlpDecoder(std::size_t latent, std::size_t hidden, std::size_t output, std::vector<double> w1,
             std::vector<double> b1, std::vector<double> w2, std::vector<double> b2)
      : latent_(latent), hidden_(hidden), output_(output), w1_(std::move(w1)), b1_(std::move(b1)),
        w2_(std::move(w2)), b2_(std::move(b2)) {
    require(w1_.size() == hidden * latent && b1_.size() == hidden, "MlpDecoder: first layer has wrong shape");
    require(w2_.size() == output * hidden && b2_.size() == output, "MlpDecoder: second layer has wrong shape");
  }

  /// Fixed, seeded stand-in for a trained speech decoder. z = 0 yields a
  /// smooth spectrum decaying with frequency.
  static MlpDecoder toy(std::size_t output, std::uint64_t seed = 20190101, std::size_t latent = 16,
                        std::size_t hidden = 64) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> w1(hidden * latent), b1(hidden), w2(output * hidden), b2(output);
    for (auto& v : w1) v = normal(rng) / std::sqrt(static_cast<double>(latent));
    for (auto& v : b1) v = 0.1 * normal(rng);
    for (auto& v : w2) v = normal(rng) / std::sqrt(static_cast<double>(hidden));
    for (std::size_t f = 0; f < output; ++f) {
      const double target = std::exp(-3.0 * static_cast<double>(f) / static_cast<double>(output)) + 0.05;
      b2[f] = std::log(std::expm1(target));
    }
    return {latent, hidden, output, std::move(w1), std::move(b1), std::move(w2), std::move(b2)};
  }

  /// Loads W1 (H x D), b1 (H), W2 (F x H), b2 (F) from a tensor file.
  static MlpDecoder load(const std::string& path) {
    const auto t = read_tensors(path);
    if (t.size() != 4 || t[0].dims.size() != 2 || t[2].dims.size() != 2)
      fail(ErrorKind::io, "decoder file must hold W1, b1, W2, b2: " + path);
    const auto hidden = static_cast<std::size_t>(t[0].dims[0]);
    const auto latent = static_cast<std::size_t>(t[0].dims[1]);
    const auto output = static_cast<std::size_t>(t[2].dims[0]);
    auto widen = [](const std::vector<float>& v) { return std::vector<double>(v.begin(), v.end()); };
    return {latent, hidden, output, widen(t[0].values), widen(t[1].values), widen(t[2].values), widen(t[3].values)};
  }

  void save(const std::string& path) const {
    auto narrow = [](const std::vector<double>& v) { return std::vector<float>(v.begin(), v.end()); };
    const std::vector<Tensor> t{{{hidden_, latent_}, narrow(w1_)},
                                {{hidden_}, narrow(b1_)},
                                {{output_, hidden_}, narrow(w2_)},
                                {{output_}, narrow(b2_)}};
    write_tensors(path, t);
  }

  using Decoder::decode;
  std::size_t latent_dim() const override { return latent_; }
  std::size_t output_dim() const override { return output_; }

  void decode(std::span<const double> z, std::span<double> out) const override {
    require(z.size() == latent_ && out.size() == output_, "MlpDecoder::decode: wrong vector size");
    std::vector<double> h(hidden_);
    for (std::size_t i = 0; i < hidden_; ++i) {
      double s = b1_[i];
      for (std::size_t j = 0; j < latent_; ++j) s += w1_[i * latent_ + j] * z[j];
      h[i] = std::tanh(s);
    }
    for (std::size_t f = 0; f < output_; ++f) {
      double s = b2_[f];
      for (std::size_t i = 0; i < hidden_; ++i) s += w2_[f * hidden_ + i] * h[i];
      // softplus, written to avoid overflow
      const double sp = s > 30.0 ? s : std::log1p(std::exp(s));
      out[f] = std::max(sp, kOutputFloor);
    }
  }

  /// Upper bound on the Lipschitz constant (Euclidean norms): tanh and
  /// softplus are 1-Lipschitz, so ||W2||_F ||W1||_F bounds it.
  double lipschitz_bound() const {
    double a = 0.0, b = 0.0;
    for (double v : w1_) a += v * v;
    for (double v : w2_) b += v * v;
    return std::sqrt(a) * std::sqrt(b);
  }

 private:
  std::size_t latent_, hidden_, output_;
  std::vector<double> w1_, b1_, w2_, b2_;
};

}  // namespace fastbss
