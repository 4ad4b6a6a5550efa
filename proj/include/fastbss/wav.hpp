#pragma once

// RIFF/WAVE I/O. Writes 32-bit float PCM; reads 32-bit float or 16/32-bit
// integer PCM with any channel count.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fastbss/error.hpp"
#include "fastbss/signal.hpp"

namespace fastbss {

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u16(std::ostream& os, std::uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); }

template <class T>
T get_le(const std::vector<char>& buf, std::size_t pos) {
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  return v;
}

}  // namespace detail

inline void write_wav(const std::string& path, const Waveform& w) {
  static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");
  w.validate();
  const auto channels = static_cast<std::uint16_t>(w.num_channels());
  const auto rate = static_cast<std::uint32_t>(w.sample_rate);
  const auto data_bytes = static_cast<std::uint32_t>(w.length() * w.num_channels() * 4);
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot open for writing: " + path);
  os.write("RIFF", 4);
  detail::put_u32(os, 4 + 26 + 12 + 8 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  detail::put_u32(os, 18);
  detail::put_u16(os, 3);  // IEEE float
  detail::put_u16(os, channels);
  detail::put_u32(os, rate);
  detail::put_u32(os, rate * channels * 4);
  detail::put_u16(os, static_cast<std::uint16_t>(channels * 4));
  detail::put_u16(os, 32);
  detail::put_u16(os, 0);
  os.write("fact", 4);
  detail::put_u32(os, 4);
  detail::put_u32(os, static_cast<std::uint32_t>(w.length()));
  os.write("data", 4);
  detail::put_u32(os, data_bytes);
  std::vector<float> frame(channels);
  for (std::size_t i = 0; i < w.length(); ++i) {
    for (std::size_t m = 0; m < channels; ++m) frame[m] = static_cast<float>(w.channels[m][i]);
    os.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size() * 4));
  }
  if (!os) fail(ErrorKind::io, "failed writing: " + path);
}

inline Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open: " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    fail(ErrorKind::io, "not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.data() + pos, 4);
    const auto size = detail::get_le<std::uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > buf.size() && id != "data") fail(ErrorKind::io, "truncated chunk '" + id + "': " + path);
    if (id == "fmt ") {
      if (size < 16) fail(ErrorKind::io, "short fmt chunk: " + path);
      format = detail::get_le<std::uint16_t>(buf, body);
      channels = detail::get_le<std::uint16_t>(buf, body + 2);
      rate = detail::get_le<std::uint32_t>(buf, body + 4);
      bits = detail::get_le<std::uint16_t>(buf, body + 14);
      if (format == 0xFFFE && size >= 26) format = detail::get_le<std::uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail(ErrorKind::io, "data chunk before fmt chunk: " + path);
      if (channels == 0 || rate == 0) fail(ErrorKind::io, "invalid channel count or sample rate: " + path);
      const bool is_float = format == 3 && bits == 32;
      const bool is_int = format == 1 && (bits == 16 || bits == 32);
      if (!is_float && !is_int) fail(ErrorKind::io, "unsupported sample format: " + path);
      const std::size_t bytes = bits / 8;
      const std::size_t avail = std::min<std::size_t>(size, buf.size() - body);
      const std::size_t frames = avail / (bytes * channels);
      Waveform w(static_cast<double>(rate), channels, frames);
      for (std::size_t i = 0; i < frames; ++i)
        for (std::size_t m = 0; m < channels; ++m) {
          const std::size_t p = body + (i * channels + m) * bytes;
          double v;
          if (is_float) v = detail::get_le<float>(buf, p);
          else if (bits == 16) v = detail::get_le<std::int16_t>(buf, p) / 32768.0;
          else v = detail::get_le<std::int32_t>(buf, p) / 2147483648.0;
          w.channels[m][i] = v;
        }
      return w;
    }
    pos = body + size + (size & 1);
  }
  fail(ErrorKind::io, "no data chunk: " + path);
}

}  // namespace fastbss
