#pragma once

// Independent reference computations. None of these call into the code they
// check; they scan raw data the slow, obvious way.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "memlab/core.hpp"
#include "memlab/scheduler.hpp"
#include "memlab/scoring.hpp"

namespace memlab::testing {

/// Per-clip tallies by linear scans of schedules and logs.
inline std::map<std::string, ClipTally> recount_memorability(const std::vector<SessionLog>& logs,
                                                            const std::vector<Schedule>& schedules) {
  std::map<std::string, ClipTally> out;
  for (std::size_t s = 0; s < logs.size(); ++s) {
    const auto& pres = schedules[s].presentations;
    for (std::size_t i = 0; i < pres.size(); ++i) {
      if (!is_target(pres[i].task_type)) continue;
      // Is this the second occurrence? Look backwards for the same clip.
      long first = -1;
      for (std::size_t j = 0; j < i; ++j) {
        if (pres[j].clip_id == pres[i].clip_id) first = static_cast<long>(j);
      }
      if (first < 0) continue;
      auto answer_at = [&](std::size_t pos) -> int {
        for (const auto& r : logs[s].responses) {
          if (r.position == pos) return r.answered_repeat ? 1 : 0;
        }
        return -1;
      };
      const int hit = answer_at(i);
      const int fa = answer_at(static_cast<std::size_t>(first));
      ClipTally& t = out[pres[i].clip_id];
      if (hit >= 0) {
        ++t.n;
        t.hits += static_cast<std::size_t>(hit);
      }
      if (fa >= 0) {
        ++t.n_first;
        t.false_alarms += static_cast<std::size_t>(fa);
      }
    }
  }
  std::erase_if(out, [](const auto& kv) { return kv.second.n == 0; });
  return out;
}

// Brute-force check of every schedule invariant against the manifest.
inline std::vector<std::string> schedule_violations(const Schedule& s, const Manifest& m, const ScheduleConfig& cfg) {
  std::vector<std::string> out;
  std::map<std::string, std::vector<std::size_t>> at;
  for (std::size_t i = 0; i < s.presentations.size(); ++i) {
    const auto& p = s.presentations[i];
    if (p.position != i) out.push_back("gap at " + std::to_string(i));
    at[p.clip_id].push_back(p.position);
  }
  for (const auto& c : m.clips) {
    const auto& pos = at[c.id];
    const std::size_t want = is_repeated(c.task_type) ? 2 : 1;
    if (pos.size() != want) {
      out.push_back(c.id + " occurs " + std::to_string(pos.size()));
      continue;
    }
    if (want == 2) {
      const auto r = cfg.interval_range.at(c.task_type);
      const std::size_t gap = pos[1] - pos[0];
      if (gap < r.min || gap > r.max) out.push_back(c.id + " gap " + std::to_string(gap));
      if (s.presentations[pos[0]].is_repeat || !s.presentations[pos[1]].is_repeat) {
        out.push_back(c.id + " repeat flags wrong");
      }
    } else if (s.presentations[pos[0]].is_repeat) {
      out.push_back(c.id + " filler flagged repeat");
    }
  }
  if (at.size() != m.clips.size()) out.push_back("unknown clip ids present");
  for (std::size_t i = 0; i < s.stage_boundaries.size(); ++i) {
    if (s.stage_boundaries[i] == 0 || s.stage_boundaries[i] >= s.size()) out.push_back("boundary out of range");
    if (i && s.stage_boundaries[i] <= s.stage_boundaries[i - 1]) out.push_back("boundaries not increasing");
  }
  return out;
}

/// Rank by counting: rank(x) = #{y < x} + (#{y == x} + 1) / 2.
inline std::vector<double> brute_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double y : v) {
      if (y < v[i]) less += 1;
      if (y == v[i]) equal += 1;
    }
    r[i] = less + (equal + 1) / 2.0;
  }
  return r;
}

/// Two-pass Pearson correlation of the counted ranks.
inline double brute_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = brute_ranks(a);
  const auto rb = brute_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i] / n;
    mb += rb[i] / n;
  }
  long double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return static_cast<double>(cov / std::sqrt(va * vb));
}

}  // namespace memlab::testing
