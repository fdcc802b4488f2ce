#pragma once

// Zero-crossing statistics and tempo estimation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "memlab/dsp/spectral.hpp"
#include "memlab/dsp/wav.hpp"
#include "memlab/error.hpp"

namespace memlab::dsp {

struct ZeroCrossingStats {
  std::size_t count = 0;  // sign changes over the whole signal
  double rate_mean = 0.0;
  double rate_median = 0.0;
};

namespace detail {

inline bool crosses(double a, double b) { return (a < 0.0) != (b < 0.0); }

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<long>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Sign changes over the signal plus per-frame crossing rates
/// (changes / frame length) over win/hop frames.
inline ZeroCrossingStats zero_crossings(const Waveform& w, std::size_t win = kWindow, std::size_t hop = kHop) {
  require(w.size() >= win, Errc::TooShort, "signal shorter than one zero-crossing frame");
  ZeroCrossingStats z;
  for (std::size_t i = 1; i < w.size(); ++i) z.count += detail::crosses(w.samples[i - 1], w.samples[i]);
  const std::size_t frames = 1 + (w.size() - win) / hop;
  std::vector<double> rates(frames);
  double sum = 0.0;
  for (std::size_t f = 0; f < frames; ++f) {
    std::size_t c = 0;
    for (std::size_t i = f * hop + 1; i < f * hop + win; ++i) c += detail::crosses(w.samples[i - 1], w.samples[i]);
    rates[f] = static_cast<double>(c) / static_cast<double>(win);
    sum += rates[f];
  }
  z.rate_mean = sum / static_cast<double>(frames);
  z.rate_median = detail::median(std::move(rates));
  return z;
}

inline constexpr double kMinBpm = 40.0;
inline constexpr double kMaxBpm = 220.0;
inline constexpr double kFoldLowBpm = 70.0;
inline constexpr double kFoldHighBpm = 180.0;
inline constexpr double kMinTempoSeconds = 2.0;

/// Half-wave rectified log-magnitude spectral flux, one value per hop.
inline std::vector<double> onset_envelope(const Waveform& w, std::size_t win = 1024, std::size_t hop = 128) {
  const Spectrogram s = stft(w, win, hop);
  std::vector<double> env(s.n_frames, 0.0);
  std::vector<double> prev(s.n_bins), cur(s.n_bins);
  for (std::size_t k = 0; k < s.n_bins; ++k) prev[k] = std::log1p(1000.0 * s.at(0, k));
  for (std::size_t f = 1; f < s.n_frames; ++f) {
    double flux = 0.0;
    for (std::size_t k = 0; k < s.n_bins; ++k) {
      cur[k] = std::log1p(1000.0 * s.at(f, k));
      flux += std::max(0.0, cur[k] - prev[k]);
    }
    env[f] = flux;
    std::swap(prev, cur);
  }
  return env;
}

/// Convolution with a unit-area Gaussian kernel truncated at 3 sigma.
inline std::vector<double> smooth_gaussian(const std::vector<double>& x, double sigma) {
  const auto half = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
  double total = 0.0;
  for (long i = -half; i <= half; ++i) {
    total += kernel[static_cast<std::size_t>(i + half)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  }
  for (double& k : kernel) k /= total;
  const long n = static_cast<long>(x.size());
  std::vector<double> out(x.size(), 0.0);
  for (long t = 0; t < n; ++t) {
    for (long i = -half; i <= half; ++i) {
      if (t + i >= 0 && t + i < n) out[static_cast<std::size_t>(t)] += kernel[static_cast<std::size_t>(i + half)] * x[static_cast<std::size_t>(t + i)];
    }
  }
  return out;
}

/// Global tempo from the autocorrelation of the onset envelope. The raw
/// estimate lies in [40, 220] BPM; it is moved by an octave toward
/// [70, 180] only when the autocorrelation supports the folded period too.
inline double tempo_estimate(const Waveform& w) {
  require(w.duration_s() >= kMinTempoSeconds, Errc::TooShort, "tempo estimation needs at least 2 s of audio");
  constexpr std::size_t kHopFine = 128;
  auto env = smooth_gaussian(onset_envelope(w, 1024, kHopFine), 2.0);
  double mean = 0.0;
  for (double v : env) mean += v;
  mean /= static_cast<double>(env.size());
  double peak_env = 0.0;
  for (double& v : env) {
    v -= mean;
    peak_env = std::max(peak_env, v);
  }
  require(peak_env > 1e-6, Errc::NoOnsets, "no onsets detected");

  const double frame_rate = static_cast<double>(w.sample_rate) / kHopFine;
  const auto lag_of = [&](double bpm) { return 60.0 * frame_rate / bpm; };
  const auto min_lag = static_cast<std::size_t>(std::floor(lag_of(kMaxBpm)));
  const auto max_lag = std::min(env.size() - 1, static_cast<std::size_t>(std::ceil(lag_of(kMinBpm))) + 1);
  require(max_lag > min_lag + 2, Errc::TooShort, "signal too short for the tempo search range");

  std::vector<double> ac(max_lag + 2, 0.0);
  for (std::size_t lag = 1; lag < ac.size() && lag < env.size(); ++lag) {
    double acc = 0.0;
    for (std::size_t i = lag; i < env.size(); ++i) acc += env[i] * env[i - lag];
    ac[lag] = acc / static_cast<double>(env.size());
  }
  auto at = [&](double lag) {
    // Linear interpolation, used when probing octave-related periods.
    const auto i = static_cast<std::size_t>(lag);
    if (i + 1 >= ac.size()) return 0.0;
    const double a = lag - static_cast<double>(i);
    return (1.0 - a) * ac[i] + a * ac[i + 1];
  };

  std::size_t best = min_lag;
  for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
    const double bpm = 60.0 * frame_rate / static_cast<double>(lag);
    if (bpm < kMinBpm || bpm > kMaxBpm) continue;
    if (ac[lag] > ac[best]) best = lag;
  }
  require(ac[best] > 0.0, Errc::NoOnsets, "onset envelope shows no periodicity");
  double lag = static_cast<double>(best);
  if (best > 1 && best + 1 < ac.size()) {
    const double y0 = ac[best - 1], y1 = ac[best], y2 = ac[best + 1];
    const double denom = y0 - 2.0 * y1 + y2;
    if (std::abs(denom) > 1e-12) lag += 0.5 * (y0 - y2) / denom;
  }
  double bpm = 60.0 * frame_rate / lag;

  constexpr double kMargin = 0.02;
  constexpr double kSupport = 0.5;
  if (bpm < kFoldLowBpm * (1.0 - kMargin) && at(lag / 2.0) >= kSupport * ac[best]) {
    bpm *= 2.0;
  } else if (bpm > kFoldHighBpm * (1.0 + kMargin) && lag * 2.0 < ac.size() - 1 &&
             at(lag * 2.0) >= kSupport * ac[best]) {
    bpm /= 2.0;
  }
  return bpm;
}

}  // namespace memlab::dsp
