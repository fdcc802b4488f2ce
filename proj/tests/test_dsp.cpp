#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "memlab/dsp.hpp"
#include "support/fixtures.hpp"
#include "support/synth.hpp"

using namespace memlab;
using namespace memlab::dsp;
using memlab::testing::click_track;
using memlab::testing::peak_frequency;
using memlab::testing::sine;
using memlab::testing::white_noise;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::Validation;
}

}  // namespace

// ---- wav

TEST(Wav, SilenceRoundTrip) {
  memlab::testing::TempDir dir;
  save_wav(dir.path() / "s.wav", Waveform{std::vector<double>(22050, 0.0), 22050});
  const auto w = load_audio(dir.path() / "s.wav");
  EXPECT_EQ(w.size(), 22050u);
  EXPECT_EQ(w.sample_rate, 22050);
  for (double v : w.samples) ASSERT_EQ(v, 0.0);
}

TEST(Wav, StereoOppositeChannelsCancel) {
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.01 * i) * 0.7;
  std::vector<double> neg(x);
  for (auto& v : neg) v = -v;
  const auto w = decode_wav(encode_wav({x, neg}, 44100));
  EXPECT_EQ(w.sample_rate, 44100);
  for (double v : w.samples) ASSERT_EQ(v, 0.0);
}

TEST(Wav, FullScaleSquareWave) {
  std::vector<double> x(4410);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i / 50) % 2 ? 1.0 : -1.0;
  const auto w = decode_wav(encode_wav({x}, 22050));
  double peak = 0.0;
  for (double v : w.samples) {
    ASSERT_GE(v, -1.0);
    ASSERT_LE(v, 1.0);
    peak = std::max(peak, std::abs(v));
  }
  EXPECT_GE(peak, 0.999);
}

TEST(Wav, FloatFormatAndErrors) {
  std::vector<double> x = {0.25, -0.5, 0.125};
  const auto w = decode_wav(encode_wav({x}, 8000, SampleFormat::Float32));
  EXPECT_EQ(w.samples, x);

  auto bytes = encode_wav({x}, 8000, SampleFormat::Float32);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 44, &nan, 4);
  EXPECT_EQ(code_of([&] { decode_wav(bytes); }), Errc::NonFinite);
  EXPECT_EQ(code_of([] { decode_wav("not a wav file at all"); }), Errc::Format);
}

// ---- loudness

TEST(Loudness, RaisesQuietSineToTarget) {
  // RMS of a sine is amp/sqrt(2); pick amp for -26 dBFS.
  const double amp = std::pow(10.0, -26.0 / 20.0) * std::sqrt(2.0);
  const auto w = sine(440, 1.0, amp);
  EXPECT_NEAR(rms_dbfs(w.samples), -26.0, 0.01);
  const auto out = normalize_loudness(w);
  EXPECT_NEAR(rms_dbfs(out.samples), -20.0, 0.01);
  // Shape is preserved up to a positive scalar (+6 dB).
  const double gain = std::pow(10.0, 6.0 / 20.0);
  for (std::size_t i = 0; i < w.size(); i += 97) ASSERT_NEAR(out.samples[i], gain * w.samples[i], 1e-12);
}

TEST(Loudness, Idempotent) {
  const auto once = normalize_loudness(white_noise(0.5, 3));
  const auto twice = normalize_loudness(once);
  for (std::size_t i = 0; i < once.size(); ++i) ASSERT_NEAR(twice.samples[i], once.samples[i], 1e-6 * std::abs(once.samples[i]) + 1e-15);
}

TEST(Loudness, SilenceRejected) {
  EXPECT_EQ(code_of([] { normalize_loudness(Waveform{std::vector<double>(100, 0.0)}); }), Errc::Silence);
}

// ---- stft / chroma / mel

TEST(Stft, FrameCountAndPeakBin) {
  const auto w = sine(440, 1.0);
  const auto s = stft(w);
  EXPECT_EQ(s.n_frames, 1 + (w.size() - 2048) / 512);
  EXPECT_EQ(s.n_bins, 1025u);
  for (std::size_t f = 0; f < s.n_frames; ++f) {
    const auto row = s.frame(f);
    const auto arg = std::max_element(row.begin(), row.end()) - row.begin();
    ASSERT_EQ(arg, 41);
  }
}

TEST(Stft, SilenceAndTooShort) {
  const auto s = stft(Waveform{std::vector<double>(4096, 0.0)});
  for (double m : s.magnitudes) ASSERT_EQ(m, 0.0);
  EXPECT_EQ(code_of([] { stft(Waveform{std::vector<double>(2047, 0.1)}); }), Errc::TooShort);
}

TEST(Stft, ParsevalPerFrame) {
  const auto w = white_noise(0.5, 11);
  const auto s = stft(w);
  const auto win = hann(kWindow);
  for (std::size_t f = 0; f < s.n_frames; ++f) {
    double time_energy = 0.0;
    for (std::size_t i = 0; i < kWindow; ++i) {
      const double v = w.samples[f * kHop + i] * win[i];
      time_energy += v * v;
    }
    // One-sided spectrum: interior bins count twice.
    double freq_energy = 0.0;
    for (std::size_t k = 0; k < s.n_bins; ++k) {
      const double m2 = s.at(f, k) * s.at(f, k);
      freq_energy += (k == 0 || k == s.n_bins - 1) ? m2 : 2.0 * m2;
    }
    freq_energy /= static_cast<double>(kWindow);
    ASSERT_NEAR(freq_energy / time_energy, 1.0, 0.01);
  }
}

TEST(Chroma, ThreeOctavesOfPureTones) {
  // C3 is 9 + 12 semitones below A4.
  for (int semi = -21; semi < 15; ++semi) {
    const double hz = 440.0 * std::pow(2.0, semi / 12.0);
    const int expected = ((semi + 9) % 12 + 12) % 12;
    const auto c = chroma(stft(sine(hz, 0.5), kWindow, kHop, kChromaFft));
    for (std::size_t f = 0; f < c.n_frames; ++f) {
      const auto row = c.frame(f);
      const auto arg = std::max_element(row.begin(), row.end()) - row.begin();
      ASSERT_EQ(arg, expected) << hz << " Hz, frame " << f;
      ASSERT_DOUBLE_EQ(row[static_cast<std::size_t>(arg)], 1.0);
    }
  }
}

TEST(Chroma, SilenceIsZeroAndEnergiesNonNegative) {
  const auto c = chroma(stft(Waveform{std::vector<double>(8192, 0.0)}, kWindow, kHop, kChromaFft));
  for (double v : c.magnitudes) ASSERT_EQ(v, 0.0);
  const auto noise = stft(white_noise(0.5, 5));
  for (double v : chroma(noise).magnitudes) ASSERT_GE(v, 0.0);
  const auto m = mel(noise, kAnalysisRate);
  EXPECT_EQ(m.n_bins, 64u);
  for (double v : m.magnitudes) ASSERT_GE(v, 0.0);
}

TEST(Chroma, PitchClassMapping) {
  EXPECT_EQ(pitch_class(440.0), 9);
  EXPECT_EQ(pitch_class(523.25), 0);
  EXPECT_EQ(pitch_class(261.63), 0);
  EXPECT_EQ(pitch_class(27.5), 9);
}

TEST(FreqMask, ZeroesBandOnly) {
  const auto s = stft(white_noise(0.3, 1));
  const auto all = freq_mask(s, 0, s.n_bins);
  for (double v : all.magnitudes) ASSERT_EQ(v, 0.0);
  const auto part = freq_mask(s, 10, 20);
  for (std::size_t f = 0; f < s.n_frames; ++f) {
    for (std::size_t k = 0; k < s.n_bins; ++k) {
      ASSERT_EQ(part.at(f, k), (k >= 10 && k < 20) ? 0.0 : s.at(f, k));
    }
  }
  EXPECT_EQ(code_of([&] { freq_mask(s, 5, s.n_bins + 1); }), Errc::Range);
  EXPECT_EQ(code_of([&] { freq_mask(s, 5, 5); }), Errc::Range);
}

TEST(FreqMask, AudioDomainRemovesTone) {
  const auto w = sine(440, 1.0);
  const auto out = freq_mask_audio(w, 35, 48);
  EXPECT_EQ(out.size(), w.size());
  // The tone's abrupt start and end are broadband; judge the interior.
  const auto interior = std::span<const double>(out.samples).subspan(4096, w.size() - 8192);
  EXPECT_LT(rms(interior), 0.01 * rms(w.samples));
}

TEST(Spectrogram, CsvShape) {
  const auto csv_text = spectrogram_to_csv(chroma(stft(sine(440, 0.2))));
  const auto t = csv::parse_table(csv_text);
  EXPECT_EQ(t.header.size(), 13u);
  EXPECT_EQ(t.rows.size(), stft(sine(440, 0.2)).n_frames);
}

// ---- zero crossings

TEST(ZeroCrossings, SineCount) {
  const auto z = zero_crossings(sine(440, 1.0));
  EXPECT_GE(z.count, 878u);
  EXPECT_LE(z.count, 880u);
  EXPECT_NEAR(z.rate_mean, 880.0 / 22050.0, 2.0 / 2048.0);
}

TEST(ZeroCrossings, ConstantAndNoise) {
  EXPECT_EQ(zero_crossings(Waveform{std::vector<double>(4096, 0.3)}).count, 0u);
  const auto z = zero_crossings(white_noise(2.0, 9));
  EXPECT_NEAR(z.rate_mean, 0.5, 0.05);
  EXPECT_NEAR(z.rate_median, 0.5, 0.05);
}

TEST(ZeroCrossings, FrameRatesMeanAndMedian) {
  // 2048 alternating samples then 2048 constant ones: five frames whose
  // crossing counts fall by 512 per hop.
  std::vector<double> x(4096, 0.5);
  for (std::size_t i = 0; i < 2048; ++i) x[i] = (i % 2) ? -0.5 : 0.5;
  const auto z = zero_crossings(Waveform{x});
  EXPECT_EQ(z.count, 2048u);
  EXPECT_DOUBLE_EQ(z.rate_median, 1024.0 / 2048.0);
  EXPECT_DOUBLE_EQ(z.rate_mean, (2047.0 + 1536.0 + 1024.0 + 512.0 + 0.0) / 5.0 / 2048.0);
}

// ---- tempo

class TempoClicks : public ::testing::TestWithParam<double> {};

TEST_P(TempoClicks, WithinTwoBpm) {
  const double bpm = GetParam();
  EXPECT_NEAR(tempo_estimate(click_track(bpm, 8.0)), bpm, 2.0);
}

INSTANTIATE_TEST_SUITE_P(Planted, TempoClicks, ::testing::Values(60.0, 90.0, 100.0, 120.0, 150.0, 180.0));

TEST(Tempo, Errors) {
  EXPECT_EQ(code_of([] { tempo_estimate(Waveform{std::vector<double>(22050 * 3, 0.0)}); }), Errc::NoOnsets);
  EXPECT_EQ(code_of([] { tempo_estimate(click_track(120, 1.5)); }), Errc::TooShort);
}

// ---- time stretch / pitch shift

TEST(TimeStretch, PassThroughAtUnitRatio) {
  const auto w = white_noise(5.0, 2);
  EXPECT_EQ(time_stretch(w), w);
}

TEST(TimeStretch, ExactLengthAndPitchPreserved) {
  const auto out = time_stretch(sine(440, 6.0));
  EXPECT_EQ(out.size(), static_cast<std::size_t>(std::llround(5.0 * 22050)));
  EXPECT_NEAR(peak_frequency(out, 400, 480), 440.0, 4.4);
}

TEST(TimeStretch, LengthExactForOddDurations) {
  for (double secs : {1.3, 2.77, 7.9, 24.0}) {
    const auto out = time_stretch(white_noise(secs, 4), 5.0);
    ASSERT_EQ(out.size(), 110250u);
  }
}

TEST(TimeStretch, TempoScalesInversely) {
  const auto out = time_stretch(click_track(120, 4.0), 5.0);
  EXPECT_NEAR(tempo_estimate(out), 96.0, 2.0);
}

TEST(TimeStretch, RatioBounds) {
  EXPECT_EQ(code_of([] { time_stretch(sine(440, 0.9)); }), Errc::Ratio);
  EXPECT_EQ(code_of([] { time_stretch(sine(440, 26.0)); }), Errc::Ratio);
}

TEST(PitchShift, ZeroIsIdentity) {
  const auto w = sine(440, 1.0);
  const auto out = pitch_shift(w, 0);
  std::vector<double> diff(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) diff[i] = out.samples[i] - w.samples[i];
  EXPECT_LE(rms(diff), 1e-3);
}

TEST(PitchShift, OctaveAndFourth) {
  const auto w = sine(440, 2.0);
  const auto up12 = pitch_shift(w, 12);
  EXPECT_EQ(up12.size(), w.size());
  EXPECT_NEAR(peak_frequency(up12, 800, 960), 880.0, 8.8);
  EXPECT_NEAR(peak_frequency(pitch_shift(w, 5), 540, 640), 440.0 * std::pow(2.0, 5.0 / 12.0), 5.9);
}

TEST(PitchShift, RoundTripRecoversFrequency) {
  const auto w = sine(440, 2.0);
  for (int s : {-5, -3, 2, 4}) {
    const auto back = pitch_shift(pitch_shift(w, s), -s);
    ASSERT_NEAR(peak_frequency(back, 400, 480), 440.0, 4.4) << s;
  }
}

TEST(PitchShift, RangeCap) {
  EXPECT_EQ(code_of([] { pitch_shift(sine(440, 1.0), 13); }), Errc::Range);
  EXPECT_EQ(code_of([] { pitch_shift(sine(440, 1.0), -13); }), Errc::Range);
}

// ---- augmentations

TEST(BandStop, NotchAndPassband) {
  const auto tone = sine(440, 2.0);
  const auto out = band_stop(tone, 440, 5);
  // Skip the filter's settling time.
  const std::span<const double> tail(out.samples.begin() + 11025, out.samples.end());
  const std::span<const double> ref(tone.samples.begin() + 11025, tone.samples.end());
  EXPECT_LE(rms(tail), 0.1 * rms(ref));

  const auto octave = sine(880, 2.0);
  const auto passed = band_stop(octave, 440, 5);
  const double gain_db = 20 * std::log10(rms(std::span<const double>(passed.samples).subspan(11025)) /
                                         rms(std::span<const double>(octave.samples).subspan(11025)));
  EXPECT_LE(std::abs(gain_db), 1.0);
  EXPECT_EQ(code_of([&] { band_stop(tone, 20000, 5); }), Errc::Range);
}

TEST(Reverb, RenormalizedAndDeterministic) {
  const auto w = white_noise(1.0, 8);
  const auto a = reverb(w, 0.8, 42);
  EXPECT_NEAR(rms(a.samples), rms(w.samples), 1e-9);
  EXPECT_EQ(a, reverb(w, 0.8, 42));
  EXPECT_EQ(code_of([&] { reverb(w, 0.0); }), Errc::Range);
  EXPECT_EQ(code_of([&] { reverb(w, 3.5); }), Errc::Range);
}

TEST(Reverb, ClickDecaysSixtyDbNearRt60) {
  for (double rt60 : {0.3, 0.8, 1.5}) {
    Waveform click{std::vector<double>(static_cast<std::size_t>(4.0 * 22050), 0.0)};
    click.samples[0] = 1.0;
    const auto out = reverb(click, rt60, 7);
    // Fit a line to the Schroeder backward-integrated energy curve between
    // -5 and -35 dB and extrapolate to -60 dB.
    std::vector<double> edc(out.size());
    double acc = 0.0;
    for (std::size_t i = out.size(); i-- > 0;) {
      acc += out.samples[i] * out.samples[i];
      edc[i] = acc;
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
    for (std::size_t i = 0; i < edc.size(); ++i) {
      const double db = 10 * std::log10(edc[i] / edc[0]);
      if (db > -5 || db < -35) continue;
      const double t = static_cast<double>(i) / 22050.0;
      sx += t, sy += db, sxx += t * t, sxy += t * db, n += 1;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double measured = -60.0 / slope;
    ASSERT_NEAR(measured, rt60, 0.2 * rt60) << rt60;
  }
}

TEST(Resample, LengthAndTone) {
  const auto w = sine(440, 1.0, 0.5, 44100);
  const auto r = resample(w, 22050);
  EXPECT_EQ(r.size(), 22050u);
  EXPECT_EQ(r.sample_rate, 22050);
  EXPECT_NEAR(peak_frequency(r, 400, 480), 440.0, 1.0);
}
