#pragma once

// Loudness, duration and pitch manipulation plus the training-time
// augmentations. Every transform is deterministic in its arguments.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "memlab/dsp/spectral.hpp"
#include "memlab/dsp/wav.hpp"
#include "memlab/random.hpp"

namespace memlab::dsp {

inline double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  long double acc = 0.0;
  for (double v : x) acc += static_cast<long double>(v) * v;
  return std::sqrt(static_cast<double>(acc / x.size()));
}

inline double rms_dbfs(std::span<const double> x) { return 20.0 * std::log10(rms(x)); }

inline constexpr double kTargetDbfs = -20.0;

/// Scales the waveform so its RMS level equals `target_dbfs`.
inline Waveform normalize_loudness(Waveform w, double target_dbfs = kTargetDbfs) {
  const double level = rms(w.samples);
  require(level > 1e-10, Errc::Silence, "cannot normalize a silent waveform");
  const double gain = std::pow(10.0, target_dbfs / 20.0) / level;
  for (double& v : w.samples) v *= gain;
  return w;
}

/// Band-limited interpolation (Hann-windowed sinc, 16 zero crossings each
/// side) of `x` onto `out_len` points spaced `step` input samples apart.
inline std::vector<double> resample_by(std::span<const double> x, double step, std::size_t out_len) {
  constexpr double kZeroCrossings = 16.0;
  const double cutoff = std::min(1.0, 1.0 / step);
  const double half_width = kZeroCrossings / cutoff;
  std::vector<double> out(out_len, 0.0);
  const long n = static_cast<long>(x.size());
  for (std::size_t j = 0; j < out_len; ++j) {
    const double t = static_cast<double>(j) * step;
    const long lo = std::max(0L, static_cast<long>(std::ceil(t - half_width)));
    const long hi = std::min(n - 1, static_cast<long>(std::floor(t + half_width)));
    double acc = 0.0;
    for (long i = lo; i <= hi; ++i) {
      const double d = t - static_cast<double>(i);
      const double arg = std::numbers::pi * cutoff * d;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * d / half_width);
      acc += x[static_cast<std::size_t>(i)] * cutoff * sinc * win;
    }
    out[j] = acc;
  }
  return out;
}

/// Sample-rate conversion; output length is round(n * to / from).
inline Waveform resample(const Waveform& w, int to_rate) {
  require(to_rate > 0, Errc::Range, "target sample rate must be positive");
  if (to_rate == w.sample_rate) return w;
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(w.size()) * to_rate / static_cast<double>(w.sample_rate)));
  return {resample_by(w.samples, static_cast<double>(w.sample_rate) / to_rate, out_len), to_rate};
}

/// Phase-vocoder time scaling of `x` to exactly `out_len` samples. Magnitudes
/// are interpolated between analysis frames; spectral peaks advance by their
/// measured instantaneous frequency and the bins around each peak keep their
/// analysis phase offset to it (identity phase locking), which keeps tonal
/// pitch unchanged and limits transient smearing.
inline std::vector<double> stretch_to_length(std::span<const double> x, std::size_t out_len) {
  if (out_len == x.size()) return {x.begin(), x.end()};
  const ComplexStft in = stft_complex(x);
  const std::size_t bins = in.win / 2 + 1;
  const double rate = static_cast<double>(x.size()) / static_cast<double>(out_len);
  constexpr double kTwoPi = 2.0 * std::numbers::pi;

  std::vector<double> expected(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    expected[k] = kTwoPi * static_cast<double>(k * in.hop) / static_cast<double>(in.win);
  }
  const std::size_t out_frames = out_len / in.hop + 2;
  ComplexStft out;
  out.win = in.win;
  out.hop = in.hop;
  out.n_frames = out_frames;
  out.frames.reserve(out_frames);

  const std::vector<cplx> zeros(bins);
  auto frame_at = [&](std::size_t i) -> const std::vector<cplx>& {
    return i < in.frames.size() ? in.frames[i] : zeros;
  };
  // Synthesis phase at each bin for the next output frame.
  std::vector<double> phase(bins);
  for (std::size_t k = 0; k < bins; ++k) phase[k] = std::arg(in.frames[0][k]);
  std::vector<double> mag(bins), next(bins);
  std::vector<std::size_t> owner(bins);
  for (std::size_t t = 0; t < out_frames; ++t) {
    const double step = static_cast<double>(t) * rate;
    const auto i0 = static_cast<std::size_t>(step);
    const double alpha = step - static_cast<double>(i0);
    const auto& c0 = frame_at(i0);
    const auto& c1 = frame_at(i0 + 1);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = (1.0 - alpha) * std::abs(c0[k]) + alpha * std::abs(c1[k]);

    // Each bin follows the nearest local magnitude maximum.
    std::vector<std::size_t> peaks;
    for (std::size_t k = 0; k < bins; ++k) {
      const bool left = k == 0 || mag[k] > mag[k - 1];
      const bool right = k + 1 == bins || mag[k] >= mag[k + 1];
      if (left && right) peaks.push_back(k);
    }
    if (peaks.empty()) peaks.push_back(0);
    std::size_t p = 0;
    for (std::size_t k = 0; k < bins; ++k) {
      while (p + 1 < peaks.size() && k > (peaks[p] + peaks[p + 1]) / 2) ++p;
      owner[k] = peaks[p];
    }

    std::vector<cplx> frame(bins);
    for (std::size_t k = 0; k < bins; ++k) {
      const std::size_t pk = owner[k];
      const double ph = phase[pk] + std::arg(c0[k]) - std::arg(c0[pk]);
      frame[k] = std::polar(mag[k], ph);
    }
    for (std::size_t k = 0; k < bins; ++k) {
      double dphi = std::arg(c1[k]) - std::arg(c0[k]) - expected[k];
      dphi -= kTwoPi * std::round(dphi / kTwoPi);
      const std::size_t pk = owner[k];
      const double locked = phase[pk] + std::arg(c0[k]) - std::arg(c0[pk]);
      next[k] = locked + expected[k] + dphi;
    }
    std::swap(phase, next);
    out.frames.push_back(std::move(frame));
  }
  return istft(out, out_len);
}

/// Stretches to exactly round(target_s * rate) samples without changing pitch.
inline Waveform time_stretch(const Waveform& w, double target_s = 5.0) {
  require(target_s > 0.0 && !w.samples.empty(), Errc::Ratio, "time_stretch needs a non-empty input and target > 0");
  const double ratio = w.duration_s() / target_s;
  require(ratio >= 0.2 && ratio <= 5.0, Errc::Ratio,
          "stretch ratio " + std::to_string(ratio) + " outside [0.2, 5]");
  const auto out_len = static_cast<std::size_t>(std::llround(target_s * w.sample_rate));
  return {stretch_to_length(w.samples, out_len), w.sample_rate};
}

inline constexpr int kMaxSemitoneShift = 12;

/// Shifts pitch by stretching by 2^(s/12) and resampling back to the
/// original length.
inline Waveform pitch_shift(const Waveform& w, int semitones) {
  require(std::abs(semitones) <= kMaxSemitoneShift, Errc::Range,
          "pitch shift of " + std::to_string(semitones) + " semitones exceeds +-12");
  if (semitones == 0) return w;
  const double factor = std::pow(2.0, semitones / 12.0);
  const auto stretched_len = static_cast<std::size_t>(std::llround(static_cast<double>(w.size()) * factor));
  const auto stretched = stretch_to_length(w.samples, stretched_len);
  return {resample_by(stretched, factor, w.size()), w.sample_rate};
}

/// Second-order notch (RBJ cookbook) centred on f0 with quality factor q.
inline Waveform band_stop(const Waveform& w, double f0, double q) {
  require(f0 > 0.0 && f0 < w.sample_rate / 2.0, Errc::Range, "notch frequency must lie in (0, Nyquist)");
  require(q > 0.0, Errc::Range, "notch Q must be positive");
  const double w0 = 2.0 * std::numbers::pi * f0 / w.sample_rate;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  const double b0 = 1.0 / a0, b1 = -2.0 * std::cos(w0) / a0, b2 = 1.0 / a0;
  const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
  Waveform out{std::vector<double>(w.size()), w.sample_rate};
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double x0 = w.samples[i];
    const double y0 = b0 * x0 + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    out.samples[i] = y0;
    x2 = x1;
    x1 = x0;
    y2 = y1;
    y1 = y0;
  }
  return out;
}

/// Linear convolution via zero-padded FFT, truncated to a.size() samples.
inline std::vector<double> convolve_truncated(std::span<const double> a, std::span<const double> b) {
  std::size_t n = 1;
  while (n < a.size() + b.size()) n <<= 1;
  const auto fa = rfft(a, n);
  const auto fb = rfft(b, n);
  std::vector<cplx> prod(fa.size());
  for (std::size_t k = 0; k < fa.size(); ++k) prod[k] = fa[k] * fb[k];
  auto full = irfft(prod, n);
  full.resize(a.size());
  return full;
}

inline constexpr double kMaxRt60 = 3.0;

/// Synthetic room: white noise with an envelope falling 60 dB over rt60_s,
/// lasting 1.5 * rt60_s. Seeded so the same parameters give the same room.
inline std::vector<double> reverb_impulse(double rt60_s, int sample_rate, std::uint64_t seed = 0) {
  const auto len = static_cast<std::size_t>(std::ceil(1.5 * rt60_s * sample_rate));
  const double decay = 3.0 * std::log(10.0) / (rt60_s * sample_rate);
  Rng rng(seed);
  std::vector<double> h(len);
  for (std::size_t i = 0; i < len; ++i) h[i] = standard_normal(rng) * std::exp(-decay * static_cast<double>(i));
  return h;
}

/// Convolves with reverb_impulse and restores the input RMS level.
inline Waveform reverb(const Waveform& w, double rt60_s, std::uint64_t seed = 0) {
  require(rt60_s > 0.0 && rt60_s <= kMaxRt60, Errc::Range, "rt60 must lie in (0, 3] seconds");
  const auto h = reverb_impulse(rt60_s, w.sample_rate, seed);
  Waveform out{convolve_truncated(w.samples, h), w.sample_rate};
  const double in_level = rms(w.samples);
  const double out_level = rms(out.samples);
  if (in_level > 0.0 && out_level > 0.0) {
    for (double& v : out.samples) v *= in_level / out_level;
  }
  return out;
}

/// Waveform-domain frequency masking: zeroes STFT bins [lo_bin, hi_bin) and
/// resynthesises at the original length.
inline Waveform freq_mask_audio(const Waveform& w, std::size_t lo_bin, std::size_t hi_bin) {
  ComplexStft s = stft_complex(w.samples);
  const std::size_t bins = s.win / 2 + 1;
  require(lo_bin < hi_bin && hi_bin <= bins, Errc::Range, "mask band outside the STFT bin range");
  for (auto& f : s.frames) {
    for (std::size_t k = lo_bin; k < hi_bin; ++k) f[k] = 0.0;
  }
  return {istft(s, w.size()), w.sample_rate};
}

}  // namespace memlab::dsp
