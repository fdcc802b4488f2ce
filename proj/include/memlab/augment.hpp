#pragma once

// Training-time audio augmentation and its hookup to k-fold evaluation.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "memlab/dsp.hpp"
#include "memlab/features.hpp"
#include "memlab/models/pipeline.hpp"
#include "memlab/random.hpp"

namespace memlab {

struct Augmentation {
  std::string kind;  // pitch | freq_mask | band_stop | reverb
  nlohmann::json params;
  dsp::Waveform audio;
};

inline constexpr int kMaxAugmentSemitones = 5;
inline constexpr char kAugmentSeparator = '~';

/// One copy per transform, parameters drawn from `rng`.
inline std::vector<Augmentation> augment_clip(const dsp::Waveform& w, Rng& rng) {
  std::vector<Augmentation> out;
  int semis = static_cast<int>(uniform_index(rng, 2 * kMaxAugmentSemitones)) - kMaxAugmentSemitones;
  if (semis >= 0) ++semis;  // skip 0
  out.push_back({"pitch", {{"semitones", semis}}, dsp::pitch_shift(w, semis)});

  const std::size_t bins = dsp::kWindow / 2 + 1;
  const std::size_t width = 20 + uniform_index(rng, 81);
  const std::size_t lo = 1 + uniform_index(rng, bins / 2);
  const std::size_t hi = std::min(bins, lo + width);
  out.push_back({"freq_mask", {{"lo_bin", lo}, {"hi_bin", hi}}, dsp::freq_mask_audio(w, lo, hi)});

  const double nyquist = w.sample_rate / 2.0;
  const double f0 = uniform_real(rng, 200.0, std::min(4000.0, 0.9 * nyquist));
  out.push_back({"band_stop", {{"f0", f0}, {"q", 1.0}}, dsp::band_stop(w, f0, 1.0)});

  const double rt60 = uniform_real(rng, 0.3, 1.5);
  const std::uint64_t room = rng();
  out.push_back({"reverb", {{"rt60_s", rt60}, {"room_seed", room}}, dsp::reverb(w, rt60, room)});
  return out;
}

inline std::string augmented_id(const std::string& source, const std::string& kind) {
  return source + kAugmentSeparator + kind;
}

/// Source clip id of an augmented id, or the id itself.
inline std::string augmented_source(const std::string& id) {
  const auto at = id.rfind(kAugmentSeparator);
  return at == std::string::npos ? id : id.substr(0, at);
}

/// Augmenter that returns the precomputed augmented rows of each base row,
/// matched by source clip id. Rows without augmentations contribute nothing.
inline Augmenter augmenter_from_table(const std::vector<std::string>& base_ids, const FeatureTable& augmented) {
  std::map<std::string, std::vector<Eigen::Index>> by_source;
  for (std::size_t i = 0; i < augmented.clip_ids.size(); ++i) {
    by_source[augmented_source(augmented.clip_ids[i])].push_back(static_cast<Eigen::Index>(i));
  }
  std::vector<Matrix> rows(base_ids.size());
  for (std::size_t r = 0; r < base_ids.size(); ++r) {
    auto it = by_source.find(base_ids[r]);
    const auto n = it == by_source.end() ? Eigen::Index{0} : static_cast<Eigen::Index>(it->second.size());
    rows[r].resize(n, augmented.values.cols());
    for (Eigen::Index k = 0; k < n; ++k) rows[r].row(k) = augmented.values.row(it->second[static_cast<std::size_t>(k)]);
  }
  return [rows = std::move(rows)](std::size_t row, Rng&) { return rows.at(row); };
}

}  // namespace memlab
