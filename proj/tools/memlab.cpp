// memlab command line: batch pipeline steps and the experiment service.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "memlab/app.hpp"
#include "memlab/augment.hpp"
#include "memlab/explain.hpp"
#include "memlab/features.hpp"
#include "memlab/models.hpp"
#include "memlab/scheduler.hpp"
#include "memlab/scoring.hpp"
#include "memlab/service.hpp"

namespace fs = std::filesystem;
using namespace memlab;
using nlohmann::json;

namespace {

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text << std::flush;
  } else {
    write_file(out, text);
  }
}

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

struct ModelFlags {
  std::string model = "svr-linear";
  std::size_t k = 0;
  std::uint64_t seed = 0;
  double C = 1.0;
  double epsilon = 0.05;
  double gamma = 0.0;
  double lr = 5e-5;
  std::size_t epochs = 200;
  std::size_t batch = 32;
  std::string augmented;

  void add_to(CLI::App* app) {
    app->add_option("--model", model, "svr-linear | svr-rbf | mlp (svr = svr-rbf)")->capture_default_str();
    app->add_option("--k", k, "features kept by top-k selection; 0 keeps all")->capture_default_str();
    app->add_option("--seed", seed)->capture_default_str();
    app->add_option("--C", C)->capture_default_str();
    app->add_option("--epsilon", epsilon)->capture_default_str();
    app->add_option("--gamma", gamma, "RBF width; 0 picks 1/(k*var)")->capture_default_str();
    app->add_option("--lr", lr, "MLP learning rate")->capture_default_str();
    app->add_option("--epochs", epochs, "MLP epochs")->capture_default_str();
    app->add_option("--batch", batch, "MLP batch size")->capture_default_str();
    app->add_option("--augmented", augmented, "feature CSV of augmented clips (<source>~<kind> ids)");
  }

  PipelineConfig config() const {
    PipelineConfig cfg;
    cfg.model = model == "svr" ? ModelKind::SvrRbf : parse_model_kind(model);
    cfg.k_select = k;
    cfg.seed = seed;
    cfg.svr.C = C;
    cfg.svr.epsilon = epsilon;
    cfg.svr.gamma = gamma;
    cfg.mlp.learning_rate = lr;
    cfg.mlp.epochs = epochs;
    cfg.mlp.batch_size = batch;
    cfg.mlp.seed = seed;
    return cfg;
  }

  std::optional<FeatureTable> augmented_table() const {
    if (augmented.empty()) return std::nullopt;
    return parse_feature_csv(read_file(augmented));
  }
};

LabeledSet load_labeled(const std::string& features, const std::string& labels) {
  const FeatureTable f = parse_feature_csv(read_file(features));
  LabeledSet set = join_labels(f, read_labels_csv(read_file(labels)));
  if (set.unlabeled > 0) warn(std::to_string(set.unlabeled) + " feature rows have no label and were skipped");
  return set;
}

httplib::Server* g_server = nullptr;

extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memlab: music memorability lab"};
  app.require_subcommand(1);
  std::function<void()> action;

  // schedule
  {
    auto* cmd = app.add_subcommand("schedule", "generate one session schedule");
    auto manifest = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto cfg = std::make_shared<ScheduleConfig>();
    cmd->add_option("--manifest", *manifest)->required();
    cmd->add_option("--seed", cfg->seed)->capture_default_str();
    cmd->add_option("--stages", cfg->n_stages)->capture_default_str();
    cmd->add_option("--break-s", cfg->break_s)->capture_default_str();
    cmd->add_option("--out", *out, "output file (default stdout)");
    cmd->callback([&action, manifest, out, cfg] {
      action = [=] { emit(*out, serialize_schedule(generate_schedule(load_manifest(*manifest), *cfg))); };
    });
  }

  // score
  {
    auto* cmd = app.add_subcommand("score", "memorability table from session logs");
    auto logs = std::make_shared<std::string>();
    auto schedules = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto summary = std::make_shared<std::string>();
    auto threshold = std::make_shared<double>(kVigilanceGate);
    auto splits = std::make_shared<std::size_t>(25);
    auto seed = std::make_shared<std::uint64_t>(0);
    cmd->add_option("--logs", *logs, "directory of <session_id>.jsonl logs")->required();
    cmd->add_option("--schedules", *schedules, "directory of <session_id>.schedule.json")->required();
    cmd->add_option("--threshold", *threshold, "vigilance gate")->capture_default_str();
    cmd->add_option("--out", *out, "table CSV (default stdout)");
    cmd->add_option("--summary", *summary, "JSON with gate counts and split-half consistency");
    cmd->add_option("--splits", *splits, "split-half repetitions")->capture_default_str();
    cmd->add_option("--seed", *seed, "split-half seed")->capture_default_str();
    cmd->callback([=, &action] {
      action = [=] {
        const SessionSet set = load_sessions(*logs, *schedules);
        const ScoreRun run = score_sessions(set, *threshold);
        emit(*out, table_to_csv(run.table));
        if (!summary->empty()) {
          json j = {{"sessions", set.logs.size()},
                    {"kept", run.filter.kept.size()},
                    {"below_threshold", run.filter.below_threshold},
                    {"incomplete", run.filter.incomplete},
                    {"clips", run.table.size()},
                    {"omitted", run.table.omitted}};
          if (run.filter.kept.size() >= 4) {
            j["split_half_rho"] = split_half_consistency(run.filter.kept, run.kept_schedules, *splits, *seed).mean_rho;
          } else {
            j["split_half_rho"] = nullptr;
          }
          write_file(*summary, j.dump(2) + "\n");
        }
      };
    });
  }

  // extract
  {
    auto* cmd = app.add_subcommand("extract", "40-dimensional feature table for a manifest");
    auto manifest = std::make_shared<std::string>();
    auto stems = std::make_shared<std::string>();
    auto tags = std::make_shared<std::string>();
    auto mood = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto allow_default_tags = std::make_shared<bool>(false);
    cmd->add_option("--manifest", *manifest)->required();
    cmd->add_option("--stems-dir", *stems, "<dir>/<clip_id>/{vocals,bass,drums,other}.wav")->required();
    cmd->add_option("--tags-dir", *tags, "<dir>/<clip_id>.tags.json")->required();
    cmd->add_flag("--allow-default-tags", *allow_default_tags, "use (1, 1) when a tag sidecar is missing");
    cmd->add_option("--mood", *mood, "mood model JSON from `train --mood-data`");
    cmd->add_option("--out", *out, "feature CSV (default stdout)");
    cmd->callback([=, &action] {
      action = [=] {
        const Manifest m = load_manifest(*manifest);
        std::optional<MoodModel> mm;
        if (!mood->empty()) mm = mood_from_json(json::parse(read_file(*mood)));
        if (!mm) warn("no mood model given; valence and arousal set to 0.5");
        FeatureTable table;
        table.values.resize(static_cast<Eigen::Index>(m.clips.size()), static_cast<Eigen::Index>(kFeatureCount));
        for (std::size_t i = 0; i < m.clips.size(); ++i) {
          const auto& c = m.clips[i];
          const auto audio = preprocess(dsp::load_audio(m.resolve(c)));
          const auto t = load_genre_tags(tags_path(*tags, c.id), *allow_default_tags, warn);
          const auto f = assemble_features(audio, load_stems(*stems, c.id), mm ? &*mm : nullptr, t);
          for (const auto& s : f.missing_stems) warn("clip '" + c.id + "' has no " + s + " stem");
          table.clip_ids.push_back(c.id);
          for (std::size_t j = 0; j < kFeatureCount; ++j) {
            table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f.values[j];
          }
        }
        emit(*out, features_to_csv(table));
      };
    });
  }

  // train
  {
    auto* cmd = app.add_subcommand("train", "fit a memorability model, or a mood model with --mood-data");
    auto features = std::make_shared<std::string>();
    auto labels = std::make_shared<std::string>();
    auto mood_data = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto flags = std::make_shared<ModelFlags>();
    auto* f = cmd->add_option("--features", *features, "feature CSV");
    auto* l = cmd->add_option("--labels", *labels, "memorability CSV (clip_id,score,...)");
    auto* md = cmd->add_option("--mood-data", *mood_data, "CSV of the 38 mood inputs plus valence, arousal");
    f->needs(l);
    l->needs(f);
    md->excludes(f)->excludes(l);
    cmd->add_option("--out", *out, "model JSON (default stdout)");
    flags->add_to(cmd);
    cmd->callback([=, &action] {
      if (mood_data->empty() && features->empty()) throw CLI::RequiredError("--features/--labels or --mood-data");
      action = [=] {
        if (!mood_data->empty()) {
          const auto d = parse_mood_training_csv(read_file(*mood_data));
          emit(*out, to_json(train_mood_model(d.X, d.valence, d.arousal)).dump() + "\n");
          return;
        }
        const LabeledSet set = load_labeled(*features, *labels);
        const PipelineConfig cfg = flags->config();
        Matrix extra;
        Vector extra_y;
        if (const auto aug = flags->augmented_table()) {
          const Augmenter a = augmenter_from_table(set.ids, *aug);
          Rng rng(cfg.seed);
          std::vector<Matrix> parts;
          Eigen::Index total = 0;
          std::vector<double> ys;
          for (std::size_t r = 0; r < set.ids.size(); ++r) {
            parts.push_back(a(r, rng));
            total += parts.back().rows();
            ys.insert(ys.end(), static_cast<std::size_t>(parts.back().rows()), set.y(static_cast<Eigen::Index>(r)));
          }
          extra.resize(total, set.X.cols());
          Eigen::Index at = 0;
          for (const auto& p : parts) {
            extra.middleRows(at, p.rows()) = p;
            at += p.rows();
          }
          extra_y = Eigen::Map<const Vector>(ys.data(), static_cast<Eigen::Index>(ys.size()));
        }
        const auto model = fit_pipeline(set.X, set.y, cfg, &extra, &extra_y);
        json j = to_json(model);
        j["feature_names"] = feature_names();
        emit(*out, j.dump() + "\n");
      };
    });
  }

  // evaluate
  {
    auto* cmd = app.add_subcommand("evaluate", "k-fold evaluation report");
    auto features = std::make_shared<std::string>();
    auto labels = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto folds = std::make_shared<std::size_t>(10);
    auto flags = std::make_shared<ModelFlags>();
    cmd->add_option("--features", *features)->required();
    cmd->add_option("--labels", *labels)->required();
    cmd->add_option("--folds", *folds)->capture_default_str();
    cmd->add_option("--out", *out, "report CSV (default stdout)");
    flags->add_to(cmd);
    cmd->callback([=, &action] {
      action = [=] {
        const LabeledSet set = load_labeled(*features, *labels);
        PipelineConfig cfg = flags->config();
        cfg.folds = *folds;
        if (const auto aug = flags->augmented_table()) cfg.augment = augmenter_from_table(set.ids, *aug);
        emit(*out, report_to_csv(kfold_evaluate(set.X, set.y, cfg)));
      };
    });
  }

  // explain
  {
    auto* cmd = app.add_subcommand("explain", "KernelSHAP attributions of a trained model");
    auto model = std::make_shared<std::string>();
    auto features = std::make_shared<std::string>();
    auto background = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto ranking = std::make_shared<std::string>();
    auto coalitions = std::make_shared<std::size_t>(2048);
    auto bg_rows = std::make_shared<std::size_t>(kMaxBackgroundRows);
    auto seed = std::make_shared<std::uint64_t>(0);
    cmd->add_option("--model", *model, "model JSON from `train`")->required();
    cmd->add_option("--features", *features, "feature CSV of the clips to explain")->required();
    cmd->add_option("--background", *background, "feature CSV for the background (default: --features)");
    cmd->add_option("--background-rows", *bg_rows)->capture_default_str();
    cmd->add_option("--coalitions", *coalitions, "sampled coalitions when more than 12 features")->capture_default_str();
    cmd->add_option("--seed", *seed)->capture_default_str();
    cmd->add_option("--out", *out, "feature,sample_index,feature_value,phi CSV (default stdout)");
    cmd->add_option("--ranking", *ranking, "feature,mean_abs_phi,direction CSV");
    cmd->callback([=, &action] {
      action = [=] {
        const PipelineModel m = pipeline_from_json(json::parse(read_file(*model)));
        const FeatureTable x = parse_feature_csv(read_file(*features));
        const FeatureTable bg_table = background->empty() ? x : parse_feature_csv(read_file(*background));
        const Matrix bg = subsample_background(bg_table.values, *bg_rows, *seed);
        const auto& all = feature_names();
        const std::vector<std::string> names(all.begin(), all.end());
        std::vector<ShapExplanation> ex;
        for (Eigen::Index i = 0; i < x.values.rows(); ++i) {
          ex.push_back(explain_pipeline(m, x.values.row(i).transpose(), bg, names, *coalitions,
                                        *seed + static_cast<std::uint64_t>(i)));
        }
        const auto summary = shap_summary(ex, take_columns(x.values, m.selected));
        emit(*out, summary_to_csv(summary));
        if (!ranking->empty()) write_file(*ranking, ranking_to_csv(summary));
      };
    });
  }

  // augment
  {
    auto* cmd = app.add_subcommand("augment", "pitch/mask/notch/reverb copies of every clip");
    auto manifest = std::make_shared<std::string>();
    auto out_dir = std::make_shared<std::string>();
    auto seed = std::make_shared<std::uint64_t>(0);
    cmd->add_option("--manifest", *manifest)->required();
    cmd->add_option("--out-dir", *out_dir, "receives <id>~<kind>.wav, manifest.json, augmentations.json")->required();
    cmd->add_option("--seed", *seed)->capture_default_str();
    cmd->callback([=, &action] {
      action = [=] {
        const Manifest m = load_manifest(*manifest);
        fs::create_directories(*out_dir);
        std::vector<AudioClip> clips;
        json params = json::array();
        for (std::size_t i = 0; i < m.clips.size(); ++i) {
          const auto& c = m.clips[i];
          Rng rng(*seed * 1000003ULL + i);
          const auto audio = preprocess(dsp::load_audio(m.resolve(c)));
          for (const auto& a : augment_clip(audio, rng)) {
            const std::string id = augmented_id(c.id, a.kind);
            dsp::save_wav(fs::path(*out_dir) / (id + ".wav"), a.audio);
            clips.push_back({id, id + ".wav", a.audio.duration_s(), c.task_type, c.source_location, c.source_views});
            params.push_back({{"id", id}, {"source", c.id}, {"kind", a.kind}, {"params", a.params}});
          }
        }
        write_file(fs::path(*out_dir) / "manifest.json", serialize_manifest(make_manifest(std::move(clips))));
        write_file(fs::path(*out_dir) / "augmentations.json", params.dump(2) + "\n");
      };
    });
  }

  // serve
  {
    auto* cmd = app.add_subcommand("serve", "run the memory-game experiment service");
    auto manifest = std::make_shared<std::string>();
    auto host = std::make_shared<std::string>("127.0.0.1");
    auto port = std::make_shared<int>(8080);
    auto cfg = std::make_shared<ServiceConfig>();
    auto data_dir = std::make_shared<std::string>();
    cmd->add_option("--manifest", *manifest)->required();
    cmd->add_option("--data-dir", *data_dir)->required();
    cmd->add_option("--host", *host)->capture_default_str();
    cmd->add_option("--port", *port, "0 picks a free port")->capture_default_str();
    cmd->add_option("--seed-base", cfg->seed_base)->capture_default_str();
    cmd->add_option("--break-s", cfg->schedule.break_s)->capture_default_str();
    cmd->add_option("--stages", cfg->schedule.n_stages)->capture_default_str();
    cmd->callback([=, &action] {
      action = [=] {
        cfg->data_dir = *data_dir;
        ExperimentService service(load_manifest(*manifest), *cfg);
        httplib::Server server;
        service.mount(server);
        const int bound = *port == 0 ? server.bind_to_any_port(*host) : (server.bind_to_port(*host, *port) ? *port : -1);
        require(bound > 0, Errc::Io, "cannot bind " + *host + ":" + std::to_string(*port));
        g_server = &server;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::cout << "listening on http://" << *host << ":" << bound << std::endl;
        server.listen_after_bind();
        g_server = nullptr;
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  }

  try {
    action();
  } catch (const Error& e) {
    std::cerr << "error: " << json({{"code", errc_name(e.code())}, {"message", e.what()}}).dump() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: " << json({{"code", "ParseError"}, {"message", e.what()}}).dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << json({{"code", "IoError"}, {"message", e.what()}}).dump() << "\n";
    return 1;
  }
  return 0;
}
