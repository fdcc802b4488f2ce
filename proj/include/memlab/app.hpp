#pragma once

// Glue between on-disk formats and the library, shared by the CLI and tests.

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "memlab/augment.hpp"
#include "memlab/core.hpp"
#include "memlab/csv.hpp"
#include "memlab/features.hpp"
#include "memlab/models/pipeline.hpp"
#include "memlab/scheduler.hpp"
#include "memlab/scoring.hpp"

namespace memlab {

struct LabeledSet {
  std::vector<std::string> ids;
  Matrix X;
  Vector y;
  std::size_t unlabeled = 0;  // feature rows with no label
};

/// Feature rows that have a label, in feature-table order. Augmented rows
/// are never labeled directly.
inline LabeledSet join_labels(const FeatureTable& features, const std::map<std::string, double>& labels) {
  LabeledSet out;
  std::vector<Eigen::Index> rows;
  std::vector<double> ys;
  for (std::size_t i = 0; i < features.clip_ids.size(); ++i) {
    const auto& id = features.clip_ids[i];
    auto it = labels.find(id);
    if (augmented_source(id) != id) continue;
    if (it == labels.end()) {
      ++out.unlabeled;
      continue;
    }
    out.ids.push_back(id);
    rows.push_back(static_cast<Eigen::Index>(i));
    ys.push_back(it->second);
  }
  require(rows.size() >= 2, Errc::InsufficientData,
          "only " + std::to_string(rows.size()) + " feature rows have labels");
  out.X.resize(static_cast<Eigen::Index>(rows.size()), features.values.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.X.row(static_cast<Eigen::Index>(r)) = features.values.row(rows[r]);
    out.y(static_cast<Eigen::Index>(r)) = ys[r];
  }
  return out;
}

struct SessionSet {
  std::vector<SessionLog> logs;
  std::vector<Schedule> schedules;
};

/// Every `*.jsonl` log in `logs_dir`, paired with `<session_id>.schedule.json`
/// from `schedules_dir`. Sorted by file name.
inline SessionSet load_sessions(const std::filesystem::path& logs_dir, const std::filesystem::path& schedules_dir) {
  require(std::filesystem::is_directory(logs_dir), Errc::Io, logs_dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(logs_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  SessionSet out;
  for (const auto& f : files) {
    SessionLog log = load_session_log(f);
    const auto sp = schedules_dir / (log.session_id + ".schedule.json");
    require(std::filesystem::exists(sp), Errc::Io, "no schedule for session '" + log.session_id + "' at " + sp.string());
    Schedule s = load_schedule(sp);
    require(s.seed == log.schedule_seed, Errc::Validation,
            "session '" + log.session_id + "' schedule seed does not match its log");
    if (!log.n_trials) {
      log.n_trials = s.size();
      log.completed = derive_completed(log);
    }
    out.logs.push_back(std::move(log));
    out.schedules.push_back(std::move(s));
  }
  return out;
}

struct ScoreRun {
  FilterReport filter;
  MemorabilityTable table;
  std::vector<Schedule> kept_schedules;
};

/// Vigilance gate, then memorability over the kept sessions.
inline ScoreRun score_sessions(const SessionSet& set, double threshold = kVigilanceGate) {
  ScoreRun run;
  run.filter = filter_sessions(set.logs, set.schedules, threshold);
  for (auto i : run.filter.kept_indices) run.kept_schedules.push_back(set.schedules[i]);
  run.table = memorability_scores(run.filter.kept, run.kept_schedules);
  return run;
}

struct MoodTrainingSet {
  Matrix X;  // kMoodInputCount columns in canonical order
  Vector valence;
  Vector arousal;
};

/// CSV with the 38 mood input columns (any order, by name) plus `valence`
/// and `arousal`.
inline MoodTrainingSet parse_mood_training_csv(std::string_view text) {
  const auto t = csv::parse_table(text);
  const auto names = mood_input_names();
  std::vector<std::size_t> cols;
  for (const auto& n : names) cols.push_back(t.column(n));
  const std::size_t vc = t.column("valence"), ac = t.column("arousal");
  MoodTrainingSet out;
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  out.X.resize(n, static_cast<Eigen::Index>(names.size()));
  out.valence.resize(n);
  out.arousal.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < cols.size(); ++j) out.X(i, static_cast<Eigen::Index>(j)) = csv::parse_double(row.at(cols[j]));
    out.valence(i) = csv::parse_double(row.at(vc));
    out.arousal(i) = csv::parse_double(row.at(ac));
  }
  return out;
}

}  // namespace memlab
