#pragma once

// Memorability labels from session logs and the statistics used to judge
// their quality.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "memlab/core.hpp"
#include "memlab/csv.hpp"
#include "memlab/random.hpp"
#include "memlab/scheduler.hpp"

namespace memlab {

inline constexpr double kVigilanceGate = 0.60;

/// Raw counts behind one clip's score. The score is hits / n exactly.
struct ClipTally {
  std::size_t hits = 0;
  std::size_t n = 0;
  std::size_t false_alarms = 0;
  std::size_t n_first = 0;

  double score() const noexcept { return n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0; }
  double false_alarm_rate() const noexcept {
    return n_first ? static_cast<double>(false_alarms) / static_cast<double>(n_first) : 0.0;
  }
  bool operator==(const ClipTally&) const = default;
};

struct MemorabilityTable {
  std::map<std::string, ClipTally> clips;
  /// Target clips that appeared in a schedule but collected no answer.
  std::vector<std::string> omitted;

  double score(const std::string& id) const { return clips.at(id).score(); }
  std::size_t size() const noexcept { return clips.size(); }
  bool operator==(const MemorabilityTable&) const = default;
};

struct RankCorrelation {
  double rho = 0.0;
  std::size_t n = 0;
};

namespace detail {

inline void check_pairing(std::span<const SessionLog> logs, std::span<const Schedule> schedules) {
  require(logs.size() == schedules.size(), Errc::LengthMismatch,
          "got " + std::to_string(logs.size()) + " logs but " + std::to_string(schedules.size()) +
              " schedules");
}

inline const ResponseRecord* response_for(const SessionLog& log, const Schedule& s, std::size_t position) {
  const ResponseRecord* r = log.at_position(position);
  if (r && r->clip_id != s.presentations[position].clip_id) {
    fail(Errc::Validation, "session '" + log.session_id + "' answered clip '" + r->clip_id +
                               "' at position " + std::to_string(position) + " but the schedule has '" +
                               s.presentations[position].clip_id + "'");
  }
  return r;
}

}  // namespace detail

/// Fraction of vigilance repeats the annotator flagged as repeated.
inline double vigilance_accuracy(const SessionLog& log, const Schedule& schedule) {
  std::size_t total = 0;
  std::size_t yes = 0;
  for (const auto& p : schedule.presentations) {
    if (!p.is_repeat || p.task_type != TaskType::Vigilance) continue;
    const ResponseRecord* r = detail::response_for(log, schedule, p.position);
    require(r != nullptr, Errc::Incomplete,
            "session '" + log.session_id + "' has no answer at vigilance repeat position " +
                std::to_string(p.position));
    ++total;
    if (r->answered_repeat) ++yes;
  }
  require(total > 0, Errc::NoData, "schedule contains no vigilance repeats");
  return static_cast<double>(yes) / static_cast<double>(total);
}

struct FilterReport {
  std::vector<std::size_t> kept_indices;
  std::vector<SessionLog> kept;
  std::vector<double> accuracy;  // per input session; NaN when not computable
  std::size_t below_threshold = 0;
  std::size_t incomplete = 0;
};

/// Keeps sessions whose vigilance accuracy is at least `threshold`. Sessions
/// whose accuracy cannot be computed are discarded and counted as incomplete.
inline FilterReport filter_sessions(std::span<const SessionLog> logs, std::span<const Schedule> schedules,
                                    double threshold = kVigilanceGate) {
  require(threshold >= 0.0 && threshold <= 1.0, Errc::Range, "threshold must lie in [0, 1]");
  detail::check_pairing(logs, schedules);
  FilterReport rep;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    double acc;
    try {
      acc = vigilance_accuracy(logs[i], schedules[i]);
    } catch (const Error&) {
      rep.accuracy.push_back(std::nan(""));
      ++rep.incomplete;
      continue;
    }
    rep.accuracy.push_back(acc);
    if (acc >= threshold) {
      rep.kept_indices.push_back(i);
      rep.kept.push_back(logs[i]);
    } else {
      ++rep.below_threshold;
    }
  }
  return rep;
}

/// m(i) = mean over annotators of the hit indicator at clip i's second
/// presentation. Only target clips are scored; a yes at the first
/// presentation is tallied as a false alarm.
inline MemorabilityTable memorability_scores(std::span<const SessionLog> logs,
                                             std::span<const Schedule> schedules) {
  detail::check_pairing(logs, schedules);
  std::map<std::string, ClipTally> tally;
  for (std::size_t s = 0; s < logs.size(); ++s) {
    const Schedule& sched = schedules[s];
    const auto pairs = repeat_positions(sched);
    for (const auto& p : sched.presentations) {
      if (!p.is_repeat || !is_target(p.task_type)) continue;
      ClipTally& t = tally[p.clip_id];
      if (const ResponseRecord* hit = detail::response_for(logs[s], sched, p.position)) {
        ++t.n;
        if (hit->answered_repeat) ++t.hits;
      }
      const std::size_t first = pairs.at(p.clip_id).first;
      if (const ResponseRecord* fa = detail::response_for(logs[s], sched, first)) {
        ++t.n_first;
        if (fa->answered_repeat) ++t.false_alarms;
      }
    }
  }
  MemorabilityTable table;
  for (auto& [id, t] : tally) {
    if (t.n == 0) {
      table.omitted.push_back(id);
    } else {
      table.clips.emplace(id, t);
    }
  }
  return table;
}

/// 1-based ranks; tied values share the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  require(saa > 0.0 && sbb > 0.0, Errc::Degenerate, "correlation undefined for zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline RankCorrelation spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), Errc::LengthMismatch,
          "spearman inputs differ in length (" + std::to_string(a.size()) + " vs " +
              std::to_string(b.size()) + ")");
  require(a.size() >= 2, Errc::InsufficientData, "spearman needs at least 2 samples");
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(std::isfinite(a[i]) && std::isfinite(b[i]), Errc::NonFinite, "spearman input is not finite");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return {pearson(ra, rb), a.size()};
}

inline RankCorrelation cross_condition_correlation(const MemorabilityTable& a, const MemorabilityTable& b) {
  std::vector<double> sa, sb;
  for (const auto& [id, t] : a.clips) {
    if (auto it = b.clips.find(id); it != b.clips.end()) {
      sa.push_back(t.score());
      sb.push_back(it->second.score());
    }
  }
  require(sa.size() >= 2, Errc::InsufficientOverlap,
          "tables share " + std::to_string(sa.size()) + " clip(s); need at least 2");
  return spearman(sa, sb);
}

struct SplitHalfResult {
  double mean_rho = 0.0;
  std::vector<double> rhos;
};

/// Mean Spearman correlation between the tables of two random halves of the
/// annotators. Clips scored by only one half are dropped from that split.
inline SplitHalfResult split_half_consistency(std::span<const SessionLog> logs,
                                              std::span<const Schedule> schedules,
                                              std::size_t n_splits = 25, std::uint64_t seed = 0) {
  detail::check_pairing(logs, schedules);
  require(logs.size() >= 4, Errc::InsufficientData, "split-half consistency needs at least 4 sessions");
  require(n_splits >= 1, Errc::Range, "n_splits must be >= 1");
  Rng rng(seed);
  std::vector<std::size_t> order(logs.size());
  SplitHalfResult out;
  for (std::size_t split = 0; split < n_splits; ++split) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(std::span(order), rng);
    const std::size_t half = order.size() / 2;
    auto score_half = [&](std::size_t lo, std::size_t hi) {
      std::vector<SessionLog> l;
      std::vector<Schedule> s;
      for (std::size_t i = lo; i < hi; ++i) {
        l.push_back(logs[order[i]]);
        s.push_back(schedules[order[i]]);
      }
      return memorability_scores(l, s);
    };
    out.rhos.push_back(cross_condition_correlation(score_half(0, half), score_half(half, order.size())).rho);
  }
  out.mean_rho = std::accumulate(out.rhos.begin(), out.rhos.end(), 0.0) / static_cast<double>(out.rhos.size());
  return out;
}

struct IntervalFatigueFit {
  double slope_log_interval = 0.0;
  double slope_fatigue = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  /// Standard errors in the same order; zero when n == 3.
  double se_log_interval = 0.0;
  double se_fatigue = 0.0;
  double se_intercept = 0.0;
  std::size_t n = 0;
};

/// Ordinary least squares of score on [ln(interval), fatigue, 1] over the
/// clips present in all three inputs.
inline IntervalFatigueFit fit_interval_fatigue_model(const MemorabilityTable& table,
                                                     const std::map<std::string, double>& intervals,
                                                     const std::map<std::string, double>& fatigues) {
  std::vector<std::array<double, 3>> rows;
  std::vector<double> y;
  for (const auto& [id, t] : table.clips) {
    auto ii = intervals.find(id);
    auto fi = fatigues.find(id);
    if (ii == intervals.end() || fi == fatigues.end()) continue;
    require(ii->second >= 1.0, Errc::Validation, "interval of clip '" + id + "' must be >= 1");
    rows.push_back({std::log(ii->second), fi->second, 1.0});
    y.push_back(t.score());
  }
  require(rows.size() >= 3, Errc::InsufficientData, "interval/fatigue fit needs at least 3 clips");

  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd Y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) X(i, c) = rows[i][c];
    Y(i) = y[i];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  require(qr.rank() == 3, Errc::Singular, "interval/fatigue design matrix is collinear");
  const Eigen::Vector3d beta = qr.solve(Y);
  const Eigen::VectorXd resid = Y - X * beta;
  const double ssr = resid.squaredNorm();
  const double sst = (Y.array() - Y.mean()).matrix().squaredNorm();

  IntervalFatigueFit fit;
  fit.slope_log_interval = beta(0);
  fit.slope_fatigue = beta(1);
  fit.intercept = beta(2);
  fit.r2 = sst > 0.0 ? 1.0 - ssr / sst : 1.0;
  fit.n = rows.size();
  if (n > 3) {
    const double sigma2 = ssr / static_cast<double>(n - 3);
    const Eigen::Matrix3d cov = sigma2 * (X.transpose() * X).inverse();
    fit.se_log_interval = std::sqrt(cov(0, 0));
    fit.se_fatigue = std::sqrt(cov(1, 1));
    fit.se_intercept = std::sqrt(cov(2, 2));
  }
  return fit;
}

/// Mean repeat interval and mean fatigue at the second presentation, per
/// target clip, across the given schedules.
inline void interval_fatigue_by_clip(std::span<const Schedule> schedules, std::map<std::string, double>& intervals,
                                     std::map<std::string, double>& fatigues) {
  std::map<std::string, std::pair<double, std::size_t>> isum, fsum;
  for (const auto& s : schedules) {
    for (const auto& [id, pos] : repeat_positions(s)) {
      if (!is_target(s.presentations[pos.second].task_type)) continue;
      auto& a = isum[id];
      a.first += static_cast<double>(pos.second - pos.first);
      ++a.second;
      auto& f = fsum[id];
      f.first += static_cast<double>(fatigue_at(s, pos.second));
      ++f.second;
    }
  }
  for (const auto& [id, v] : isum) intervals[id] = v.first / static_cast<double>(v.second);
  for (const auto& [id, v] : fsum) fatigues[id] = v.first / static_cast<double>(v.second);
}

inline std::string table_to_csv(const MemorabilityTable& t) {
  std::string out = "clip_id,score,n,false_alarm_rate\n";
  for (const auto& [id, c] : t.clips) {
    out += csv::join_row({id, csv::format_double(c.score()), std::to_string(c.n),
                          csv::format_double(c.false_alarm_rate())});
  }
  return out;
}

/// Reads `clip_id,score` pairs from a memorability CSV (extra columns ignored).
inline std::map<std::string, double> read_labels_csv(std::string_view text) {
  const auto t = csv::parse_table(text);
  const std::size_t id = t.column("clip_id");
  const std::size_t score = t.column("score");
  std::map<std::string, double> out;
  for (const auto& r : t.rows) {
    require(out.emplace(r[id], csv::parse_double(r[score])).second, Errc::Validation,
            "duplicate clip_id '" + r[id] + "' in labels");
  }
  return out;
}

}  // namespace memlab
