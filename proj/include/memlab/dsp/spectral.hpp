#pragma once

// Short-time Fourier analysis and the representations built on it.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "memlab/csv.hpp"
#include "memlab/dsp/wav.hpp"
#include "memlab/error.hpp"

namespace memlab::dsp {

inline constexpr std::size_t kWindow = 2048;
inline constexpr std::size_t kHop = 512;
// Zero-padded FFT size for chroma: at 2048 points the bins straddle the low
// semitones (e.g. D#3 falls between bins mapped to D and E).
inline constexpr std::size_t kChromaFft = 8192;

using cplx = std::complex<double>;

/// Forward real FFT of `frame` zero-padded to `n`; returns n/2 + 1 bins.
inline std::vector<cplx> rfft(std::span<const double> frame, std::size_t n) {
  thread_local Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(n, 0.0);
  std::copy_n(frame.begin(), std::min(frame.size(), n), buf.begin());
  std::vector<cplx> out;
  fft.fwd(out, buf);
  out.resize(n / 2 + 1);
  return out;
}

/// Inverse of rfft for an even length n (scaled by 1/n).
inline std::vector<double> irfft(std::span<const cplx> half, std::size_t n) {
  thread_local Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<cplx> spec(half.begin(), half.end());
  std::vector<double> out;
  fft.inv(out, spec, static_cast<Eigen::Index>(n));
  out.resize(n);
  return out;
}

/// Periodic Hann window.
inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

enum class BinAxis { Hz, Mel, PitchClass };

/// Row-major frames x bins magnitudes.
struct Spectrogram {
  std::size_t n_frames = 0;
  std::size_t n_bins = 0;
  std::vector<double> magnitudes;
  double hop_s = 0.0;
  BinAxis axis = BinAxis::Hz;
  std::vector<double> bin_centers;

  double& at(std::size_t frame, std::size_t bin) { return magnitudes[frame * n_bins + bin]; }
  double at(std::size_t frame, std::size_t bin) const { return magnitudes[frame * n_bins + bin]; }
  std::span<const double> frame(std::size_t f) const {
    return std::span(magnitudes).subspan(f * n_bins, n_bins);
  }
};

/// Magnitude STFT with a Hann window and no edge padding:
/// frames = 1 + floor((n - win) / hop). Each windowed frame is zero-padded to
/// `n_fft` points (0 means n_fft = win) for a finer bin grid.
inline Spectrogram stft(const Waveform& w, std::size_t win = kWindow, std::size_t hop = kHop, std::size_t n_fft = 0) {
  if (n_fft == 0) n_fft = win;
  require(hop > 0 && win >= hop, Errc::Range, "STFT needs win >= hop > 0");
  require(n_fft >= win, Errc::Range, "FFT size must be at least the window length");
  require(w.size() >= win, Errc::TooShort,
          "signal of " + std::to_string(w.size()) + " samples is shorter than the " + std::to_string(win) +
              "-sample window");
  const auto window = hann(win);
  Spectrogram s;
  s.n_frames = 1 + (w.size() - win) / hop;
  s.n_bins = n_fft / 2 + 1;
  s.hop_s = static_cast<double>(hop) / w.sample_rate;
  s.axis = BinAxis::Hz;
  s.bin_centers.resize(s.n_bins);
  for (std::size_t k = 0; k < s.n_bins; ++k) {
    s.bin_centers[k] = static_cast<double>(k) * w.sample_rate / static_cast<double>(n_fft);
  }
  s.magnitudes.resize(s.n_frames * s.n_bins);
  std::vector<double> buf(win);
  for (std::size_t f = 0; f < s.n_frames; ++f) {
    for (std::size_t i = 0; i < win; ++i) buf[i] = w.samples[f * hop + i] * window[i];
    const auto spec = rfft(buf, n_fft);
    for (std::size_t k = 0; k < s.n_bins; ++k) s.at(f, k) = std::abs(spec[k]);
  }
  return s;
}

/// Complex STFT with win/2 zero padding on both ends, used for resynthesis.
struct ComplexStft {
  std::size_t win = kWindow;
  std::size_t hop = kHop;
  std::size_t n_frames = 0;
  std::vector<std::vector<cplx>> frames;
};

inline ComplexStft stft_complex(std::span<const double> x, std::size_t win = kWindow, std::size_t hop = kHop) {
  const auto window = hann(win);
  const std::size_t pad = win / 2;
  ComplexStft out;
  out.win = win;
  out.hop = hop;
  out.n_frames = 1 + (x.size() + 2 * pad - win) / hop + 1;
  out.frames.reserve(out.n_frames);
  std::vector<double> buf(win);
  for (std::size_t f = 0; f < out.n_frames; ++f) {
    for (std::size_t i = 0; i < win; ++i) {
      const long idx = static_cast<long>(f * hop + i) - static_cast<long>(pad);
      buf[i] = idx >= 0 && idx < static_cast<long>(x.size()) ? x[idx] * window[i] : 0.0;
    }
    out.frames.push_back(rfft(buf, win));
  }
  return out;
}

/// Weighted overlap-add inverse of stft_complex, trimmed to `length` samples.
inline std::vector<double> istft(const ComplexStft& s, std::size_t length) {
  const auto window = hann(s.win);
  const std::size_t pad = s.win / 2;
  const std::size_t total = (s.frames.size() - 1) * s.hop + s.win;
  std::vector<double> acc(total, 0.0), norm(total, 0.0);
  for (std::size_t f = 0; f < s.frames.size(); ++f) {
    const auto frame = irfft(s.frames[f], s.win);
    for (std::size_t i = 0; i < s.win; ++i) {
      acc[f * s.hop + i] += frame[i] * window[i];
      norm[f * s.hop + i] += window[i] * window[i];
    }
  }
  std::vector<double> out(length, 0.0);
  for (std::size_t i = 0; i < length && i + pad < total; ++i) {
    const double n = norm[i + pad];
    out[i] = n > 1e-10 ? acc[i + pad] / n : 0.0;
  }
  return out;
}

inline constexpr double kChromaMinHz = 27.5;
inline constexpr double kChromaMaxHz = 4186.01;

/// Pitch class (0 = C ... 11 = B) of the equal-tempered semitone nearest to
/// `hz`, with A4 = 440 Hz.
inline int pitch_class(double hz) {
  const long semis = std::lround(12.0 * std::log2(hz / 440.0));
  return static_cast<int>(((semis + 9) % 12 + 12) % 12);
}

inline constexpr std::array<const char*, 12> kPitchClassNames = {"C",  "C#", "D",  "D#", "E",  "F",
                                                                "F#", "G",  "G#", "A",  "A#", "B"};

/// Folds each bin's power onto the pitch class of its nearest semitone and
/// scales every non-silent frame to a maximum of 1.
inline Spectrogram chroma(const Spectrogram& spec) {
  require(spec.axis == BinAxis::Hz, Errc::Validation, "chroma needs a Hz-binned spectrogram");
  Spectrogram c;
  c.n_frames = spec.n_frames;
  c.n_bins = 12;
  c.hop_s = spec.hop_s;
  c.axis = BinAxis::PitchClass;
  c.bin_centers = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  c.magnitudes.assign(c.n_frames * 12, 0.0);
  std::vector<int> cls(spec.n_bins, -1);
  for (std::size_t k = 0; k < spec.n_bins; ++k) {
    const double f = spec.bin_centers[k];
    if (f >= kChromaMinHz && f <= kChromaMaxHz) cls[k] = pitch_class(f);
  }
  for (std::size_t f = 0; f < spec.n_frames; ++f) {
    for (std::size_t k = 0; k < spec.n_bins; ++k) {
      if (cls[k] < 0) continue;
      const double m = spec.at(f, k);
      c.at(f, static_cast<std::size_t>(cls[k])) += m * m;
    }
    double peak = 0.0;
    for (std::size_t p = 0; p < 12; ++p) peak = std::max(peak, c.at(f, p));
    if (peak > 0.0) {
      for (std::size_t p = 0; p < 12; ++p) c.at(f, p) /= peak;
    }
  }
  return c;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular mel filterbank over 0..Nyquist. Debugging aid only.
inline Spectrogram mel(const Spectrogram& spec, int sample_rate, std::size_t n_mels = 64) {
  require(spec.axis == BinAxis::Hz, Errc::Validation, "mel needs a Hz-binned spectrogram");
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(top * i / (n_mels + 1));
  Spectrogram m;
  m.n_frames = spec.n_frames;
  m.n_bins = n_mels;
  m.hop_s = spec.hop_s;
  m.axis = BinAxis::Mel;
  m.bin_centers.assign(edges.begin() + 1, edges.end() - 1);
  m.magnitudes.assign(m.n_frames * n_mels, 0.0);
  for (std::size_t b = 0; b < n_mels; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (std::size_t k = 0; k < spec.n_bins; ++k) {
      const double f = spec.bin_centers[k];
      double wgt = 0.0;
      if (f > lo && f <= mid) wgt = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) wgt = (hi - f) / (hi - mid);
      if (wgt <= 0.0) continue;
      for (std::size_t fr = 0; fr < spec.n_frames; ++fr) {
        const double v = spec.at(fr, k);
        m.at(fr, b) += wgt * v * v;
      }
    }
  }
  return m;
}

/// Zeroes bins [lo_bin, hi_bin).
inline Spectrogram freq_mask(Spectrogram spec, std::size_t lo_bin, std::size_t hi_bin) {
  require(lo_bin < hi_bin && hi_bin <= spec.n_bins, Errc::Range,
          "mask band [" + std::to_string(lo_bin) + ", " + std::to_string(hi_bin) + ") outside 0.." +
              std::to_string(spec.n_bins));
  for (std::size_t f = 0; f < spec.n_frames; ++f) {
    for (std::size_t k = lo_bin; k < hi_bin; ++k) spec.at(f, k) = 0.0;
  }
  return spec;
}

/// frame, then one column per bin labelled by its center.
inline std::string spectrogram_to_csv(const Spectrogram& s) {
  std::vector<std::string> header = {"frame"};
  for (double c : s.bin_centers) header.push_back(csv::format_double(c));
  std::string out = csv::join_row(header);
  for (std::size_t f = 0; f < s.n_frames; ++f) {
    std::vector<std::string> row = {std::to_string(f)};
    for (std::size_t k = 0; k < s.n_bins; ++k) row.push_back(csv::format_double(s.at(f, k)));
    out += csv::join_row(row);
  }
  return out;
}

}  // namespace memlab::dsp
