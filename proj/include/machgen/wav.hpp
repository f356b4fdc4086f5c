// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "machgen/common.hpp"

namespace machgen::wav {

// RIFF/WAVE, PCM16, mono only. Samples map through a symmetric +/-32767
// scale so a write/read round trip stays within half an LSB.

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline std::uint32_t get_u32(const std::string& s, std::size_t off) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(s[off])) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 1]))
          << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 2]))
          << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 3]))
          << 24);
}

inline std::uint16_t get_u16(const std::string& s, std::size_t off) {
  return static_cast<std::uint16_t>(
      static_cast<unsigned char>(s[off]) |
      (static_cast<unsigned char>(s[off + 1]) << 8));
}

}  // namespace detail

inline std::string encode_pcm16(const std::vector<double>& samples,
                                int sample_rate) {
  using namespace detail;
  std::string out;
  out.reserve(44 + samples.size() * 2);
  const std::uint32_t data_bytes =
      static_cast<std::uint32_t>(samples.size() * 2);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVE";
  out += "fmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (double s : samples) {
    double c = s;
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    const long q = std::lround(c * 32767.0);
    const std::int16_t i16 = static_cast<std::int16_t>(q);
    put_u16(out, static_cast<std::uint16_t>(i16));
  }
  return out;
}

inline void write_pcm16(const std::string& path,
                        const std::vector<double>& samples, int sample_rate) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot open for write: " + path);
  const std::string bytes = encode_pcm16(samples, sample_rate);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), "write failed: " + path);
}

struct PcmData {
  std::vector<double> samples;
  int sample_rate = 0;
};

inline PcmData decode_pcm16(const std::string& bytes, const std::string& name) {
  using namespace detail;
  require(bytes.size() >= 44, name + ": too short for a WAV header");
  require(bytes.compare(0, 4, "RIFF") == 0, name + ": missing RIFF tag");
  require(bytes.compare(8, 4, "WAVE") == 0, name + ": missing WAVE tag");
  std::size_t off = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t sample_rate = 0;
  PcmData out;
  while (off + 8 <= bytes.size()) {
    const std::string id = bytes.substr(off, 4);
    const std::uint32_t len = get_u32(bytes, off + 4);
    const std::size_t body = off + 8;
    if (body + len > bytes.size())
      fail(name + ": chunk '" + id + "' overruns file");
    if (id == "fmt ") {
      require(len >= 16, name + ": fmt chunk too short");
      format = get_u16(bytes, body);
      channels = get_u16(bytes, body + 2);
      sample_rate = get_u32(bytes, body + 4);
      bits = get_u16(bytes, body + 14);
      have_fmt = true;
    } else if (id == "data") {
      require(have_fmt, name + ": data chunk before fmt chunk");
      require(format == 1, name + ": unsupported encoding (PCM only), format=" +
                               std::to_string(format));
      require(channels == 1, name + ": expected mono, got " +
                                 std::to_string(channels) + " channels");
      require(bits == 16, name + ": expected 16-bit samples, got " +
                              std::to_string(bits));
      const std::size_t n = len / 2;
      out.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::int16_t q =
            static_cast<std::int16_t>(get_u16(bytes, body + 2 * i));
        out.samples[i] = static_cast<double>(q) / 32767.0;
      }
      out.sample_rate = static_cast<int>(sample_rate);
      return out;
    }
    off = body + len + (len & 1);  // chunks are word-aligned
  }
  fail(name + ": no data chunk found");
}

inline PcmData read_pcm16(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot open for read: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return decode_pcm16(bytes, path);
}

}  // namespace machgen::wav
