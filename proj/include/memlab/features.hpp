#pragma once

// The 40 explainable handcrafted features: harmony, rhythm, timbre,
// zero-crossing, mood and genre-tag dimensions, in a fixed order.

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "memlab/core.hpp"
#include "memlab/csv.hpp"
#include "memlab/dsp.hpp"
#include "memlab/error.hpp"
#include "memlab/models/svr.hpp"

namespace memlab {

inline constexpr std::size_t kFeatureCount = 40;
inline constexpr std::size_t kMoodInputCount = 38;

enum FeatureIndex : std::size_t {
  kChromaMean = 0,
  kChromaStd = 12,
  kBpm = 24,
  kStemDbMean = 25,
  kStemDbStd = 29,
  kZcCount = 33,
  kZcrMean = 34,
  kZcrMedian = 35,
  kValence = 36,
  kArousal = 37,
  kTagMusic = 38,
  kTagInstrument = 39,
};

inline constexpr std::array<const char*, 4> kStemNames = {"vocals", "bass", "drums", "other"};

inline const std::array<std::string, kFeatureCount>& feature_names() {
  static const auto names = [] {
    std::array<std::string, kFeatureCount> n;
    std::size_t i = 0;
    for (const char* pc : dsp::kPitchClassNames) n[i++] = std::string("chroma_") + pc + "_mean";
    for (const char* pc : dsp::kPitchClassNames) n[i++] = std::string("chroma_") + pc + "_std";
    n[i++] = "bpm";
    for (const char* s : kStemNames) n[i++] = std::string(s) + "_db_mean";
    for (const char* s : kStemNames) n[i++] = std::string(s) + "_db_std";
    for (const char* s : {"zc_count", "zcr_mean", "zcr_median", "valence", "arousal", "tag_music", "tag_musical_instrument"}) {
      n[i++] = s;
    }
    return n;
  }();
  return names;
}

struct EhcFeatureVector {
  std::array<double, kFeatureCount> values{};
  std::vector<std::string> missing_stems;  // stems replaced by (-80 dB, 0)
  bool tags_defaulted = false;
  bool mood_defaulted = false;
};

// ---- harmony

/// Per pitch class: mean, then population standard deviation, across frames.
inline std::array<double, 24> extract_harmony(const dsp::Spectrogram& chroma) {
  require(chroma.axis == dsp::BinAxis::PitchClass && chroma.n_bins == 12, Errc::Validation,
          "harmony features need a 12-class chroma");
  require(chroma.n_frames > 0, Errc::Empty, "chroma has no frames");
  std::array<double, 24> out{};
  const double n = static_cast<double>(chroma.n_frames);
  for (std::size_t p = 0; p < 12; ++p) {
    double sum = 0.0;
    for (std::size_t f = 0; f < chroma.n_frames; ++f) sum += chroma.at(f, p);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t f = 0; f < chroma.n_frames; ++f) ss += (chroma.at(f, p) - mean) * (chroma.at(f, p) - mean);
    out[p] = mean;
    out[12 + p] = std::sqrt(ss / n);
  }
  return out;
}

/// Chroma as used for features: 2048/512 frames zero-padded to kChromaFft.
inline dsp::Spectrogram feature_chroma(const dsp::Waveform& w) {
  return dsp::chroma(dsp::stft(w, dsp::kWindow, dsp::kHop, dsp::kChromaFft));
}

// ---- timbre

inline constexpr double kDbFloor = -80.0;

struct StemSet {
  std::array<std::optional<dsp::Waveform>, 4> stems;  // kStemNames order

  std::optional<dsp::Waveform>& operator[](std::size_t i) { return stems[i]; }
  const std::optional<dsp::Waveform>& operator[](std::size_t i) const { return stems[i]; }
};

struct TimbreFeatures {
  std::array<double, 4> db_mean{};
  std::array<double, 4> db_std{};
  std::array<bool, 4> missing{};
};

/// Frame RMS levels in dB (floored at -80) over win/hop frames; a stem
/// shorter than one window is treated as a single frame.
inline std::vector<double> frame_db(const dsp::Waveform& w, std::size_t win = dsp::kWindow, std::size_t hop = dsp::kHop) {
  std::vector<double> out;
  auto level = [](std::span<const double> s) {
    const double r = dsp::rms(s);
    return r > 0.0 ? std::max(kDbFloor, 20.0 * std::log10(r)) : kDbFloor;
  };
  if (w.size() < win) {
    out.push_back(level(w.samples));
    return out;
  }
  for (std::size_t start = 0; start + win <= w.size(); start += hop) {
    out.push_back(level(std::span<const double>(w.samples).subspan(start, win)));
  }
  return out;
}

inline TimbreFeatures extract_timbre(const StemSet& stems) {
  TimbreFeatures t;
  std::optional<std::size_t> ref;
  for (std::size_t i = 0; i < 4; ++i) {
    if (!stems[i]) continue;
    const auto& w = *stems[i];
    require(!w.samples.empty(), Errc::Empty, std::string(kStemNames[i]) + " stem is empty");
    if (ref) {
      const auto& r = *stems[*ref];
      require(w.sample_rate == r.sample_rate, Errc::Validation, "stems have different sample rates");
      const auto diff = w.size() > r.size() ? w.size() - r.size() : r.size() - w.size();
      require(diff <= dsp::kHop, Errc::Validation,
              std::string(kStemNames[i]) + " stem length differs from " + kStemNames[*ref] + " by more than one hop");
    } else {
      ref = i;
    }
  }
  require(ref.has_value(), Errc::AllMissing, "no stems present");
  for (std::size_t i = 0; i < 4; ++i) {
    if (!stems[i]) {
      t.db_mean[i] = kDbFloor;
      t.db_std[i] = 0.0;
      t.missing[i] = true;
      continue;
    }
    const auto db = frame_db(*stems[i]);
    const double n = static_cast<double>(db.size());
    double mean = 0.0;
    for (double v : db) mean += v / n;
    double ss = 0.0;
    for (double v : db) ss += (v - mean) * (v - mean);
    t.db_mean[i] = mean;
    t.db_std[i] = std::sqrt(ss / n);
  }
  return t;
}

/// Reads `<dir>/<clip_id>/{vocals,bass,drums,other}.wav`; absent files stay
/// empty. Stems are brought to the analysis rate.
inline StemSet load_stems(const std::filesystem::path& dir, const std::string& clip_id) {
  StemSet s;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto p = dir / clip_id / (std::string(kStemNames[i]) + ".wav");
    if (std::filesystem::exists(p)) s[i] = dsp::resample(dsp::load_audio(p), dsp::kAnalysisRate);
  }
  return s;
}

// ---- genre tags

struct GenreTags {
  double music = 1.0;
  double instrument = 1.0;
  bool defaulted = false;
};

inline std::filesystem::path tags_path(const std::filesystem::path& dir, const std::string& clip_id) {
  return dir / (clip_id + ".tags.json");
}

/// Reads {"Music": x, "Musical Instrument": y}. With `allow_default`, a
/// missing file yields (1, 1) and `warn` is told about it.
inline GenreTags load_genre_tags(const std::filesystem::path& path, bool allow_default = false,
                                 const std::function<void(const std::string&)>& warn = {}) {
  if (!std::filesystem::exists(path)) {
    require(allow_default, Errc::MissingSidecar, "genre tag sidecar not found: " + path.string());
    if (warn) warn("genre tag sidecar not found, using defaults (1, 1): " + path.string());
    return {1.0, 1.0, true};
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::Parse, "malformed genre tag sidecar " + path.string() + ": " + e.what());
  }
  GenreTags t;
  for (auto [key, dst] : {std::pair{"Music", &t.music}, std::pair{"Musical Instrument", &t.instrument}}) {
    require(j.contains(key) && j.at(key).is_number(), Errc::Validation,
            path.string() + ": missing numeric \"" + key + "\"");
    *dst = j.at(key).get<double>();
    require(*dst >= 0.0 && *dst <= 1.0, Errc::Validation,
            path.string() + ": \"" + key + "\" = " + csv::format_double(*dst) + " outside [0, 1]");
  }
  return t;
}

// ---- mood

/// The 38 non-mood dimensions, in canonical order.
inline Vector mood_inputs(const std::array<double, kFeatureCount>& v) {
  Vector x(static_cast<Eigen::Index>(kMoodInputCount));
  Eigen::Index o = 0;
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    if (i != kValence && i != kArousal) x(o++) = v[i];
  }
  return x;
}

inline std::vector<std::string> mood_input_names() {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    if (i != kValence && i != kArousal) out.push_back(feature_names()[i]);
  }
  return out;
}

struct MoodModel {
  SvrModel valence;
  SvrModel arousal;

  std::pair<double, double> predict(const Vector& x) const {
    return {std::clamp(valence.predict(x), 0.0, 1.0), std::clamp(arousal.predict(x), 0.0, 1.0)};
  }
};

inline constexpr std::size_t kMinMoodRows = 10;

/// Two linear epsilon-SVRs on standardized inputs.
inline MoodModel train_mood_model(const Matrix& X, const Vector& valence, const Vector& arousal, double epsilon = 0.01) {
  require(static_cast<std::size_t>(X.rows()) >= kMinMoodRows, Errc::InsufficientData,
          "mood model needs at least " + std::to_string(kMinMoodRows) + " rows, got " + std::to_string(X.rows()));
  require(valence.size() == X.rows() && arousal.size() == X.rows(), Errc::LengthMismatch,
          "mood targets and feature rows differ in count");
  for (const auto* t : {&valence, &arousal}) {
    require(t->allFinite() && t->minCoeff() >= 0.0 && t->maxCoeff() <= 1.0, Errc::Validation,
            "mood targets must lie in [0, 1]");
    require(t->maxCoeff() > t->minCoeff(), Errc::Degenerate, "mood targets are constant");
  }
  SvrConfig cfg;
  cfg.kernel = KernelKind::Linear;
  cfg.epsilon = epsilon;
  return {train_svr(X, valence, cfg), train_svr(X, arousal, cfg)};
}

inline nlohmann::json to_json(const MoodModel& m) {
  return {{"type", "mood"}, {"inputs", mood_input_names()}, {"valence", to_json(m.valence)}, {"arousal", to_json(m.arousal)}};
}

inline MoodModel mood_from_json(const nlohmann::json& j) {
  try {
    require(j.at("inputs").get<std::vector<std::string>>() == mood_input_names(), Errc::InconsistentFeatures,
            "mood model was trained on a different feature set");
    return {svr_from_json(j.at("valence")), svr_from_json(j.at("arousal"))};
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::Parse, std::string("malformed mood model: ") + e.what());
  }
}

// ---- assembly

/// Resample to the analysis rate, normalize loudness, stretch to 5 s.
inline dsp::Waveform preprocess(const dsp::Waveform& raw) {
  return dsp::time_stretch(dsp::normalize_loudness(dsp::resample(raw, dsp::kAnalysisRate)), kClipSeconds);
}

/// Features of one preprocessed clip. Without a mood model, valence and
/// arousal are set to 0.5 and flagged.
inline EhcFeatureVector assemble_features(const dsp::Waveform& audio, const StemSet& stems, const MoodModel* mood,
                                          const GenreTags& tags) {
  require(audio.sample_rate == dsp::kAnalysisRate, Errc::Validation, "features expect 22050 Hz audio");
  EhcFeatureVector f;
  auto& v = f.values;
  const auto harmony = extract_harmony(feature_chroma(audio));
  std::copy(harmony.begin(), harmony.end(), v.begin());
  v[kBpm] = dsp::tempo_estimate(audio);
  const auto timbre = extract_timbre(stems);
  for (std::size_t i = 0; i < 4; ++i) {
    v[kStemDbMean + i] = timbre.db_mean[i];
    v[kStemDbStd + i] = timbre.db_std[i];
    if (timbre.missing[i]) f.missing_stems.emplace_back(kStemNames[i]);
  }
  const auto zc = dsp::zero_crossings(audio);
  v[kZcCount] = static_cast<double>(zc.count);
  v[kZcrMean] = zc.rate_mean;
  v[kZcrMedian] = zc.rate_median;
  v[kTagMusic] = tags.music;
  v[kTagInstrument] = tags.instrument;
  f.tags_defaulted = tags.defaulted;
  if (mood != nullptr) {
    std::tie(v[kValence], v[kArousal]) = mood->predict(mood_inputs(v));
  } else {
    v[kValence] = v[kArousal] = 0.5;
    f.mood_defaulted = true;
  }
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    require(std::isfinite(v[i]), Errc::NonFinite, feature_names()[i] + " is not finite");
  }
  return f;
}

// ---- feature tables

struct FeatureTable {
  std::vector<std::string> clip_ids;
  Matrix values;  // one row per clip, kFeatureCount columns
};

inline std::string feature_header() {
  std::vector<std::string> h = {"clip_id"};
  for (const auto& n : feature_names()) h.push_back(n);
  return csv::join_row(h);
}

inline std::string feature_row(const std::string& clip_id, const std::array<double, kFeatureCount>& v) {
  std::vector<std::string> r = {clip_id};
  for (double x : v) r.push_back(csv::format_double(x));
  return csv::join_row(r);
}

inline std::string features_to_csv(const FeatureTable& t) {
  std::string out = feature_header();
  for (std::size_t i = 0; i < t.clip_ids.size(); ++i) {
    std::array<double, kFeatureCount> v{};
    for (std::size_t j = 0; j < kFeatureCount; ++j) v[j] = t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    out += feature_row(t.clip_ids[i], v);
  }
  return out;
}

inline FeatureTable parse_feature_csv(std::string_view text) {
  const auto t = csv::parse_table(text);
  std::vector<std::string> expected = {"clip_id"};
  for (const auto& n : feature_names()) expected.push_back(n);
  require(t.header == expected, Errc::InconsistentFeatures, "feature CSV header does not match the 40 canonical names");
  FeatureTable out;
  out.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(kFeatureCount));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    require(row.size() == expected.size(), Errc::Parse, "feature CSV row " + std::to_string(i + 2) + " has the wrong width");
    out.clip_ids.push_back(row[0]);
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = csv::parse_double(row[j + 1]);
    }
  }
  return out;
}

}  // namespace memlab
