#pragma once

// Memory-game trial sequences: fillers once, vigilance and target clips twice
// with the second presentation inside a per-category window of index gaps.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "memlab/core.hpp"
#include "memlab/random.hpp"

namespace memlab {

struct IntervalRange {
  std::size_t min = 1;
  std::size_t max = 1;

  bool contains(std::size_t gap) const noexcept { return gap >= min && gap <= max; }
  bool operator==(const IntervalRange&) const = default;
};

struct ScheduleConfig {
  std::size_t n_stages = 3;
  double break_s = 180.0;
  std::map<TaskType, IntervalRange> interval_range = {
      {TaskType::Vigilance, {5, 10}},
      {TaskType::TargetShort, {10, 49}},
      {TaskType::TargetMedium, {61, 131}},
      {TaskType::TargetLong, {155, 276}},
  };
  std::uint64_t seed = 0;
  std::size_t backtrack_limit = 10'000;

  void validate() const {
    require(n_stages >= 1, Errc::Validation, "n_stages must be >= 1");
    require(break_s >= 0.0, Errc::Validation, "break_s must be non-negative");
    for (TaskType t : kAllTaskTypes) {
      if (!is_repeated(t)) continue;
      auto it = interval_range.find(t);
      require(it != interval_range.end(), Errc::Validation,
              "missing interval range for " + std::string(task_type_name(t)));
      require(it->second.min >= 1 && it->second.min <= it->second.max, Errc::Validation,
              "invalid interval range for " + std::string(task_type_name(t)));
    }
  }
};

struct Presentation {
  std::size_t position = 0;
  std::size_t stage = 0;
  std::string clip_id;
  bool is_repeat = false;
  // Carried for scoring; never exposed on participant-facing endpoints.
  TaskType task_type = TaskType::Filler;

  bool operator==(const Presentation&) const = default;
};

struct Schedule {
  std::vector<Presentation> presentations;
  std::vector<std::size_t> stage_boundaries;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return presentations.size(); }
  std::size_t n_stages() const noexcept { return presentations.empty() ? 0 : stage_boundaries.size() + 1; }
  bool operator==(const Schedule&) const = default;
};

/// Start positions of stages 2..n when `total` trials are split as evenly as
/// possible into `n_stages` contiguous blocks. Empty blocks are dropped.
inline std::vector<std::size_t> even_stage_boundaries(std::size_t total, std::size_t n_stages) {
  std::vector<std::size_t> out;
  const std::size_t base = total / n_stages;
  const std::size_t extra = total % n_stages;
  std::size_t start = 0;
  for (std::size_t s = 0; s + 1 < n_stages; ++s) {
    start += base + (s < extra ? 1 : 0);
    if (start == 0 || start >= total) continue;
    if (!out.empty() && out.back() == start) continue;
    out.push_back(start);
  }
  return out;
}

namespace detail {

struct PendingPair {
  std::size_t clip_index;
  IntervalRange range;
};

class PairPlacer {
 public:
  PairPlacer(std::size_t n_slots, Rng& rng) : owner_(n_slots, kFree), prefix_(n_slots + 1), rng_(rng) {}

  /// Tries one random legal (first, second) placement; returns false when no
  /// free slot has a free partner in range.
  bool place(std::size_t clip_index, IntervalRange r, std::pair<std::size_t, std::size_t>& out) {
    rebuild_prefix();
    const std::size_t n = owner_.size();
    candidates_.clear();
    for (std::size_t p = 0; p < n; ++p) {
      if (owner_[p] != kFree || p + r.min >= n) continue;
      if (free_in(p + r.min, std::min(p + r.max, n - 1)) > 0) candidates_.push_back(p);
    }
    if (candidates_.empty()) return false;
    const std::size_t first = candidates_[uniform_index(rng_, candidates_.size())];
    partners_.clear();
    for (std::size_t q = first + r.min; q <= std::min(first + r.max, n - 1); ++q) {
      if (owner_[q] == kFree) partners_.push_back(q);
    }
    const std::size_t second = partners_[uniform_index(rng_, partners_.size())];
    owner_[first] = clip_index;
    owner_[second] = clip_index;
    out = {first, second};
    return true;
  }

  void release(std::pair<std::size_t, std::size_t> slots) {
    owner_[slots.first] = kFree;
    owner_[slots.second] = kFree;
  }

  const std::vector<std::size_t>& owners() const noexcept { return owner_; }

  static constexpr std::size_t kFree = static_cast<std::size_t>(-1);

 private:
  void rebuild_prefix() {
    prefix_[0] = 0;
    for (std::size_t i = 0; i < owner_.size(); ++i) {
      prefix_[i + 1] = prefix_[i] + (owner_[i] == kFree ? 1 : 0);
    }
  }
  std::size_t free_in(std::size_t lo, std::size_t hi) const { return prefix_[hi + 1] - prefix_[lo]; }

  std::vector<std::size_t> owner_;
  std::vector<std::size_t> prefix_;
  std::vector<std::size_t> candidates_;
  std::vector<std::size_t> partners_;
  Rng& rng_;
};

}  // namespace detail

/// Builds a randomized schedule. Deterministic in (manifest, cfg).
///
/// Repeated clips are shuffled and then stably ordered by descending maximum
/// gap. Each is placed by drawing its first slot uniformly among free slots
/// that still have a free partner in range, then its second slot uniformly
/// within the window. A dead end undoes the previous placement; after
/// `cfg.backtrack_limit` undo steps the manifest is reported infeasible.
/// Fillers then take the remaining slots in shuffled order.
inline Schedule generate_schedule(const Manifest& manifest, const ScheduleConfig& cfg) {
  cfg.validate();
  require(!manifest.clips.empty(), Errc::Validation, "cannot schedule an empty manifest");

  const auto& clips = manifest.clips;
  std::vector<std::size_t> fillers;
  std::vector<detail::PendingPair> pending;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (is_repeated(clips[i].task_type)) {
      pending.push_back({i, cfg.interval_range.at(clips[i].task_type)});
    } else {
      fillers.push_back(i);
    }
  }
  const std::size_t total = fillers.size() + 2 * pending.size();

  for (const auto& p : pending) {
    if (p.range.min >= total) {
      fail(Errc::Infeasible, "clip '" + clips[p.clip_index].id + "' needs a gap of at least " +
                                 std::to_string(p.range.min) + " but the session has only " +
                                 std::to_string(total) + " presentations");
    }
  }

  Rng rng(cfg.seed);
  shuffle(std::span(pending), rng);
  std::stable_sort(pending.begin(), pending.end(),
                   [](const auto& a, const auto& b) { return a.range.max > b.range.max; });

  detail::PairPlacer placer(total, rng);
  std::vector<std::pair<std::size_t, std::size_t>> placed;
  placed.reserve(pending.size());
  std::size_t steps = 0;
  while (placed.size() < pending.size()) {
    const auto& next = pending[placed.size()];
    std::pair<std::size_t, std::size_t> slots;
    if (placer.place(next.clip_index, next.range, slots)) {
      placed.push_back(slots);
      continue;
    }
    if (++steps > cfg.backtrack_limit || placed.empty()) {
      fail(Errc::Infeasible, "cannot place repeat of clip '" + clips[next.clip_index].id +
                                 "' within gap [" + std::to_string(next.range.min) + ", " +
                                 std::to_string(next.range.max) + "]");
    }
    placer.release(placed.back());
    placed.pop_back();
  }

  shuffle(std::span(fillers), rng);
  std::vector<std::size_t> owner = placer.owners();
  std::size_t next_filler = 0;
  for (auto& o : owner) {
    if (o == detail::PairPlacer::kFree) o = fillers[next_filler++];
  }

  Schedule s;
  s.seed = cfg.seed;
  s.stage_boundaries = even_stage_boundaries(total, cfg.n_stages);
  s.presentations.reserve(total);
  std::vector<bool> seen(clips.size(), false);
  std::size_t stage = 0;
  for (std::size_t pos = 0; pos < total; ++pos) {
    while (stage < s.stage_boundaries.size() && s.stage_boundaries[stage] <= pos) ++stage;
    const AudioClip& c = clips[owner[pos]];
    s.presentations.push_back({pos, stage, c.id, seen[owner[pos]], c.task_type});
    seen[owner[pos]] = true;
  }
  return s;
}

/// First and second position of every repeated clip.
inline std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> repeat_positions(
    const Schedule& s) {
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> out;
  std::unordered_map<std::string, std::size_t> first;
  for (const auto& p : s.presentations) {
    if (auto it = first.find(p.clip_id); it != first.end()) {
      out[p.clip_id] = {it->second, p.position};
    } else {
      first.emplace(p.clip_id, p.position);
    }
  }
  return out;
}

inline std::size_t interval_of(const Schedule& s, std::string_view clip_id) {
  std::vector<std::size_t> at;
  for (const auto& p : s.presentations) {
    if (p.clip_id == clip_id) at.push_back(p.position);
  }
  require(at.size() == 2, Errc::NotRepeated,
          "clip '" + std::string(clip_id) + "' occurs " + std::to_string(at.size()) + " time(s)");
  return at[1] - at[0];
}

/// Presentations heard since the last break, counting the current one.
inline std::size_t fatigue_at(const Schedule& s, std::size_t position) {
  require(position < s.size(), Errc::Index,
          "position " + std::to_string(position) + " out of range " + std::to_string(s.size()));
  std::size_t stage_start = 0;
  for (std::size_t b : s.stage_boundaries) {
    if (b <= position) stage_start = b;
  }
  return position - stage_start + 1;
}

inline json to_json(const Presentation& p) {
  return {{"position", p.position},
          {"stage", p.stage},
          {"clip_id", p.clip_id},
          {"is_repeat", p.is_repeat},
          {"task_type", std::string(task_type_name(p.task_type))}};
}

inline std::string serialize_schedule(const Schedule& s) {
  json pres = json::array();
  for (const auto& p : s.presentations) pres.push_back(to_json(p));
  json j = {{"presentations", pres}, {"stage_boundaries", s.stage_boundaries}, {"seed", s.seed}};
  return j.dump(1) + "\n";
}

inline Schedule parse_schedule(std::string_view text) {
  try {
    const json j = json::parse(text);
    Schedule s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.stage_boundaries = j.at("stage_boundaries").get<std::vector<std::size_t>>();
    for (const auto& pj : j.at("presentations")) {
      Presentation p;
      p.position = pj.at("position").get<std::size_t>();
      p.stage = pj.at("stage").get<std::size_t>();
      p.clip_id = pj.at("clip_id").get<std::string>();
      p.is_repeat = pj.at("is_repeat").get<bool>();
      p.task_type = parse_task_type(pj.at("task_type").get<std::string>());
      require(p.position == s.presentations.size(), Errc::Validation,
              "schedule positions must be contiguous from 0");
      s.presentations.push_back(std::move(p));
    }
    return s;
  } catch (const json::exception& e) {
    fail(Errc::Parse, std::string("malformed schedule: ") + e.what());
  }
}

inline Schedule load_schedule(const std::filesystem::path& path) { return parse_schedule(read_file(path)); }

}  // namespace memlab
