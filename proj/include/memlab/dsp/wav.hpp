#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "memlab/core.hpp"
#include "memlab/error.hpp"

namespace memlab::dsp {

inline constexpr int kAnalysisRate = 22050;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kAnalysisRate;

  double duration_s() const noexcept {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
  std::size_t size() const noexcept { return samples.size(); }
  bool operator==(const Waveform&) const = default;
};

enum class SampleFormat { Pcm16, Float32 };

namespace detail {

inline std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
inline std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}
inline void put16(std::string& out, std::uint16_t v) {
  out += static_cast<char>(v & 0xff);
  out += static_cast<char>(v >> 8);
}

}  // namespace detail

/// Decodes a RIFF/WAVE byte string to a mono waveform at its native rate.
/// Multichannel audio is downmixed by the channel mean.
inline Waveform decode_wav(std::string_view bytes) {
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  require(n >= 12 && std::memcmp(b, "RIFF", 4) == 0 && std::memcmp(b + 8, "WAVE", 4) == 0, Errc::Format,
          "not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= n) {
    const unsigned char* chunk = b + pos;
    const std::size_t len = detail::le32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min(len, n - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      require(avail >= 16, Errc::Format, "fmt chunk too short");
      format = detail::le16(b + body);
      channels = detail::le16(b + body + 2);
      rate = detail::le32(b + body + 4);
      block_align = detail::le16(b + body + 12);
      bits = detail::le16(b + body + 14);
      if (format == 0xFFFE) {
        require(avail >= 26, Errc::Format, "extensible fmt chunk too short");
        format = detail::le16(b + body + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = b + body;
      data_len = avail;
    }
    pos = body + len + (len & 1);
  }
  require(channels > 0 && rate > 0, Errc::Format, "missing or invalid fmt chunk");
  require(data != nullptr, Errc::Format, "missing data chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  require(pcm16 || f32, Errc::Format,
          "unsupported sample format (code " + std::to_string(format) + ", " + std::to_string(bits) +
              " bits); expected 16-bit PCM or 32-bit float");
  const std::size_t bytes_per = bits / 8;
  require(block_align == bytes_per * channels, Errc::Format, "inconsistent block alignment");

  const std::size_t frames = data_len / block_align;
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + f * block_align + c * bytes_per;
      double v;
      if (pcm16) {
        v = static_cast<double>(static_cast<std::int16_t>(detail::le16(p))) / 32768.0;
      } else {
        const std::uint32_t raw = detail::le32(p);
        float fv;
        std::memcpy(&fv, &raw, sizeof fv);
        v = fv;
      }
      require(std::isfinite(v), Errc::NonFinite, "non-finite sample at frame " + std::to_string(f));
      acc += v;
    }
    w.samples[f] = std::clamp(acc / channels, -1.0, 1.0);
  }
  return w;
}

inline Waveform load_audio(const std::filesystem::path& path) { return decode_wav(read_file(path)); }

/// Interleaved multichannel encoder; `channels` holds one vector per channel.
inline std::string encode_wav(const std::vector<std::vector<double>>& channels, int sample_rate,
                              SampleFormat fmt = SampleFormat::Pcm16) {
  require(!channels.empty(), Errc::Format, "no channels to encode");
  const std::size_t frames = channels.front().size();
  for (const auto& c : channels) require(c.size() == frames, Errc::Format, "channel lengths differ");
  const std::uint16_t nch = static_cast<std::uint16_t>(channels.size());
  const std::uint16_t bits = fmt == SampleFormat::Pcm16 ? 16 : 32;
  const std::uint16_t align = static_cast<std::uint16_t>(nch * bits / 8);
  const std::uint32_t data_len = static_cast<std::uint32_t>(frames * align);

  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  detail::put32(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put32(out, 16);
  detail::put16(out, fmt == SampleFormat::Pcm16 ? 1 : 3);
  detail::put16(out, nch);
  detail::put32(out, static_cast<std::uint32_t>(sample_rate));
  detail::put32(out, static_cast<std::uint32_t>(sample_rate) * align);
  detail::put16(out, align);
  detail::put16(out, bits);
  out += "data";
  detail::put32(out, data_len);
  for (std::size_t f = 0; f < frames; ++f) {
    for (const auto& c : channels) {
      const double v = std::clamp(c[f], -1.0, 1.0);
      if (fmt == SampleFormat::Pcm16) {
        const long q = std::lround(v * 32767.0);
        detail::put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
      } else {
        const float fv = static_cast<float>(v);
        std::uint32_t raw;
        std::memcpy(&raw, &fv, sizeof raw);
        detail::put32(out, raw);
      }
    }
  }
  return out;
}

inline void save_wav(const std::filesystem::path& path, const Waveform& w, SampleFormat fmt = SampleFormat::Pcm16) {
  write_file(path, encode_wav({w.samples}, w.sample_rate, fmt));
}

}  // namespace memlab::dsp
