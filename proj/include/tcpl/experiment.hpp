#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcpl/config.hpp"
#include "tcpl/evaluation.hpp"
#include "tcpl/selftrain.hpp"

namespace tcpl {

inline constexpr const char* kMetricsHeader =
    "step,t,n_t,churn,label_acc_Dp,label_acc_Du,ce_labeled,ce_pseudo,intra,inter,total,rank1,rank5,rank20,map";

inline constexpr const char* kSweepHeader =
    "kind,axis,value,seed,status,rank1,rank5,rank20,map,label_acc_Du,"
    "rank1_std,rank5_std,rank20_std,map_std,label_acc_Du_std";

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

inline std::string metrics_csv_row(const StepMetrics& m) {
  std::string row = std::to_string(m.step + 1) + ',' + std::to_string(m.t) + ',' + std::to_string(m.n_t) + ',' +
                    std::to_string(m.churn);
  for (const auto& v : {format_optional(m.label_acc_selected), format_optional(m.label_acc_unlabeled),
                        format_double(m.ce_labeled), format_double(m.ce_pseudo), format_double(m.intra),
                        format_double(m.inter), format_double(m.total), format_double(m.eval.rank1),
                        format_double(m.eval.rank5), format_double(m.eval.rank20), format_double(m.eval.map)})
    row += ',' + v;
  return row;
}

struct ExperimentData {
  Corpus corpus;
  EvalSplit eval;
};

inline EvalSplit load_eval_split(const ExperimentConfig& cfg) {
  if (cfg.corpus.probe_path && cfg.corpus.gallery_path)
    return {read_tracklets(*cfg.corpus.probe_path), read_tracklets(*cfg.corpus.gallery_path)};
  return generate_synthetic_corpus(cfg.corpus.generator, cfg.corpus.seed).eval;
}

inline ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  std::vector<Tracklet> train;
  EvalSplit eval;
  if (cfg.corpus.from_files()) {
    train = read_tracklets(*cfg.corpus.train_path);
    eval = load_eval_split(cfg);
  } else {
    auto gen = generate_synthetic_corpus(cfg.corpus.generator, cfg.corpus.seed);
    train = std::move(gen.train);
    eval = std::move(gen.eval);
  }
  return {one_shot_split(std::move(train), cfg.split, cfg.split_seed), std::move(eval)};
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

inline nlohmann::ordered_json manifest_base(const ExperimentConfig& cfg, const std::string& command) {
  nlohmann::ordered_json m;
  m["tool"] = "tcpl";
  m["version"] = kVersion;
  m["command"] = command;
  m["seeds"] = {{"seed", cfg.train.seed},
                {"corpus_seed", cfg.corpus.seed},
                {"split_seed", cfg.split_seed},
                {"training_stream_seed", training_stream_seed(cfg.train.seed)}};
  m["config"] = config_to_json(cfg);
  return m;
}

inline nlohmann::ordered_json corpus_summary(const ExperimentData& data) {
  return {{"tracklets", data.corpus.tracklets.size()},
          {"labeled", data.corpus.labels.size()},
          {"unlabeled", data.corpus.m_u},
          {"classes", data.corpus.m_l},
          {"feature_dim", data.corpus.tracklets.front().feature_dim()},
          {"probes", data.eval.probe.size()},
          {"gallery", data.eval.gallery.size()}};
}

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  return {{"rank1", r.rank1}, {"rank5", r.rank5}, {"rank20", r.rank20}, {"map", r.map}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateSummary {
  int identities = 0;
  int cameras = 0;
  std::size_t tracklets = 0;
  std::size_t feature_dim = 0;
  std::size_t probes = 0;
  std::size_t gallery = 0;

  std::string to_string() const {
    return "M=" + std::to_string(identities) + " C=" + std::to_string(cameras) + " |D|=" + std::to_string(tracklets) +
           " d_in=" + std::to_string(feature_dim) + " probes=" + std::to_string(probes) +
           " gallery=" + std::to_string(gallery);
  }
};

/// Writes train.jsonl, probe.jsonl and gallery.jsonl plus config.json and
/// manifest.json into cfg.out.
inline GenerateSummary cmd_generate(const ExperimentConfig& cfg) {
  if (cfg.corpus.from_files())
    throw Error(ErrorCode::ConfigError, "corpus.train_path: generate needs generator settings, not a corpus file");
  const auto& g = cfg.corpus.generator;
  const auto data = generate_synthetic_corpus(g, cfg.corpus.seed);
  detail::ensure_dir(cfg.out);
  write_tracklets(cfg.out / "train.jsonl", data.train);
  write_tracklets(cfg.out / "probe.jsonl", data.eval.probe);
  write_tracklets(cfg.out / "gallery.jsonl", data.eval.gallery);

  GenerateSummary s{g.identities, g.cameras, data.train.size(), static_cast<std::size_t>(g.feature_dim),
                    data.eval.probe.size(), data.eval.gallery.size()};
  detail::write_text(cfg.out / "config.json", config_to_json(cfg).dump(2) + "\n");
  auto manifest = detail::manifest_base(cfg, "generate");
  manifest["summary"] = {{"identities", s.identities}, {"cameras", s.cameras},   {"tracklets", s.tracklets},
                         {"feature_dim", s.feature_dim}, {"probes", s.probes}, {"gallery", s.gallery}};
  detail::write_text(cfg.out / "manifest.json", manifest.dump(2) + "\n");
  return s;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Runs one training job into cfg.out:
///   config.json, manifest.json, metrics.csv, report.csv, best.ckpt,
///   checkpoints/step_NNN.ckpt and, if enabled, rankings.txt.
inline TcplResult cmd_train(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  const auto data = load_experiment_data(cfg);
  detail::ensure_dir(cfg.out);
  detail::write_text(cfg.out / "config.json", config_to_json(cfg).dump(2) + "\n");

  std::ofstream csv(cfg.out / "metrics.csv", std::ios::binary);
  if (!csv) throw Error(ErrorCode::IoError, "cannot write " + (cfg.out / "metrics.csv").string());
  csv << kMetricsHeader << '\n';

  TrainConfig train = cfg.train;
  train.checkpoint_dir = cfg.out / "checkpoints";
  const std::size_t steps = total_steps(train.p);
  auto result = run_tcpl(data.corpus, data.eval, train, [&](const StepMetrics& m) {
    csv << metrics_csv_row(m) << '\n';
    csv.flush();
    if (log)
      *log << "step " << m.step + 1 << '/' << steps << " n_t=" << m.n_t << " rank1=" << format_double(m.eval.rank1)
           << " map=" << format_double(m.eval.map) << " label_acc_Du=" << format_optional(m.label_acc_unlabeled)
           << '\n';
  });
  if (!csv) throw Error(ErrorCode::IoError, "write failed: metrics.csv");

  save_checkpoint(cfg.out / "best.ckpt", Checkpoint{result.best_model, ""});
  const auto& best = result.best();
  const auto& last = result.steps.back();
  detail::write_text(cfg.out / "report.csv",
                     "best_step,rank1,rank5,rank20,map,final_rank1,final_map,final_label_acc_Dp,final_label_acc_Du\n" +
                         std::to_string(best.step + 1) + ',' + format_double(best.eval.rank1) + ',' +
                         format_double(best.eval.rank5) + ',' + format_double(best.eval.rank20) + ',' +
                         format_double(best.eval.map) + ',' + format_double(last.eval.rank1) + ',' +
                         format_double(last.eval.map) + ',' + format_optional(last.label_acc_selected) + ',' +
                         format_optional(last.label_acc_unlabeled) + '\n');

  if (cfg.evaluation.ranking_dump) {
    std::ofstream dump(cfg.out / "rankings.txt", std::ios::binary);
    const auto rankings = rank_split(result.best_model.encoder, data.eval, cfg.train.cross_camera_filter);
    write_ranking_dump(dump, rankings, cfg.evaluation.dump_top_k);
  }

  auto manifest = detail::manifest_base(cfg, "train");
  manifest["corpus"] = detail::corpus_summary(data);
  manifest["result"] = {{"steps", result.steps.size()},
                        {"best_step", best.step + 1},
                        {"best", detail::report_json(best.eval)},
                        {"final", detail::report_json(last.eval)},
                        {"final_label_acc_Du", last.label_acc_unlabeled ? nlohmann::ordered_json(*last.label_acc_unlabeled)
                                                                        : nlohmann::ordered_json(nullptr)},
                        {"skipped_consistency", result.skipped_consistency},
                        {"rejected_bank_updates", result.rejected_bank_updates}};
  detail::write_text(cfg.out / "manifest.json", manifest.dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

/// Scores a checkpoint (evaluation.checkpoint, else <out>/best.ckpt) on the
/// probe/gallery split; writes eval.csv and optionally rankings.txt.
inline EvalReport cmd_evaluate(const ExperimentConfig& cfg) {
  const auto ckpt_path = cfg.evaluation.checkpoint.value_or(cfg.out / "best.ckpt");
  if (!std::filesystem::exists(ckpt_path))
    throw Error(ErrorCode::ConfigError, "evaluation.checkpoint: no checkpoint at " + ckpt_path.string());
  const auto ckpt = load_checkpoint(ckpt_path);
  const auto split = load_eval_split(cfg);
  const auto rankings = rank_split(ckpt.model.encoder, split, cfg.train.cross_camera_filter);
  const std::size_t ks[] = {1, 5, 20};
  const auto cmc = compute_cmc(rankings, ks);
  const EvalReport report{cmc[0], cmc[1], cmc[2], compute_map(rankings)};

  detail::ensure_dir(cfg.out);
  detail::write_text(cfg.out / "eval.csv", "rank1,rank5,rank20,map\n" + format_double(report.rank1) + ',' +
                                               format_double(report.rank5) + ',' + format_double(report.rank20) +
                                               ',' + format_double(report.map) + '\n');
  if (cfg.evaluation.ranking_dump) {
    std::ofstream dump(cfg.out / "rankings.txt", std::ios::binary);
    write_ranking_dump(dump, rankings, cfg.evaluation.dump_top_k);
  }
  return report;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepRun {
  double value = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::string> error;
  EvalReport final_eval;
  std::optional<double> label_acc;
};

struct SweepResult {
  std::vector<SweepRun> runs;  // value-major, then seed, in config order
  std::size_t failures = 0;
};

/// Configuration of one sweep cell. A sweep seed s seeds the corpus, the split
/// and training alike; the r axis always trains the inter-only variant.
inline ExperimentConfig sweep_run_config(const ExperimentConfig& base, double value, std::uint64_t seed) {
  ExperimentConfig cfg = base;
  switch (base.sweep.axis) {
    case SweepAxis::P: cfg.train.p = value; break;
    case SweepAxis::Lambda: cfg.train.loss.weights.lambda = value; break;
    case SweepAxis::Rank:
      cfg.train.loss.sampler.rank = static_cast<std::size_t>(value);
      cfg.train.loss.variant = LossVariant::InterOnly;
      break;
  }
  cfg.train.seed = seed;
  cfg.corpus.seed = seed;
  cfg.split_seed = seed;
  cfg.out = base.out / "runs" / (std::string(to_string(base.sweep.axis)) + "_" + format_double(value)) /
            ("seed_" + std::to_string(seed));
  return cfg;
}

inline std::string sweep_csv(const ExperimentConfig& cfg, const SweepResult& result) {
  const std::string axis(to_string(cfg.sweep.axis));
  std::string out = std::string(kSweepHeader) + "\n";
  for (const auto& r : result.runs) {
    out += "run," + axis + ',' + format_double(r.value) + ',' + std::to_string(r.seed) + ',';
    if (r.error) {
      std::string msg = *r.error;
      for (char& c : msg)
        if (c == ',' || c == '\n' || c == '"') c = ' ';
      out += "error: " + msg + ",,,,,,,,,,\n";
      continue;
    }
    out += "ok," + format_double(r.final_eval.rank1) + ',' + format_double(r.final_eval.rank5) + ',' +
           format_double(r.final_eval.rank20) + ',' + format_double(r.final_eval.map) + ',' +
           format_optional(r.label_acc) + ",,,,,\n";
  }
  for (double value : cfg.sweep.values) {
    std::vector<std::array<double, 5>> rows;
    for (const auto& r : result.runs)
      if (r.value == value && !r.error)
        rows.push_back({r.final_eval.rank1, r.final_eval.rank5, r.final_eval.rank20, r.final_eval.map,
                        r.label_acc.value_or(std::nan(""))});
    out += "aggregate," + axis + ',' + format_double(value) + ",all,";
    if (rows.empty()) {
      out += "error: no successful runs,,,,,,,,,,\n";
      continue;
    }
    out += "ok n=" + std::to_string(rows.size());
    std::array<double, 5> mean{}, sd{};
    for (std::size_t k = 0; k < 5; ++k) {
      for (const auto& row : rows) mean[k] += row[k];
      mean[k] /= static_cast<double>(rows.size());
      for (const auto& row : rows) sd[k] += (row[k] - mean[k]) * (row[k] - mean[k]);
      sd[k] = rows.size() > 1 ? std::sqrt(sd[k] / static_cast<double>(rows.size() - 1)) : 0.0;
    }
    for (double m : mean) out += ',' + format_double(m);
    for (double s : sd) out += ',' + format_double(s);
    out += '\n';
  }
  return out;
}

/// Runs every (value, seed) cell, up to `threads` at a time, each into its own
/// directory; failed cells are recorded and the sweep carries on. Writes
/// sweep.csv and manifest.json into cfg.out.
inline SweepResult cmd_sweep(const ExperimentConfig& cfg, std::size_t threads = 1, std::ostream* log = nullptr) {
  SweepResult result;
  for (double v : cfg.sweep.values)
    for (std::uint64_t s : cfg.sweep.seeds) result.runs.push_back({v, s, std::nullopt, {}, std::nullopt});
  detail::ensure_dir(cfg.out);
  detail::write_text(cfg.out / "config.json", config_to_json(cfg).dump(2) + "\n");

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < result.runs.size(); i = next++) {
      auto& run = result.runs[i];
      try {
        const auto run_result = cmd_train(sweep_run_config(cfg, run.value, run.seed));
        run.final_eval = run_result.steps.back().eval;
        run.label_acc = run_result.final_label_accuracy();
      } catch (const std::exception& e) {
        run.error = e.what();
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, result.runs.size()));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (const auto& r : result.runs) {
    if (r.error) ++result.failures;
    if (log)
      *log << to_string(cfg.sweep.axis) << '=' << format_double(r.value) << " seed=" << r.seed << ' '
           << (r.error ? "error: " + *r.error : "rank1=" + format_double(r.final_eval.rank1)) << '\n';
  }
  detail::write_text(cfg.out / "sweep.csv", sweep_csv(cfg, result));
  auto manifest = detail::manifest_base(cfg, "sweep");
  manifest["runs"] = result.runs.size();
  manifest["failures"] = result.failures;
  detail::write_text(cfg.out / "manifest.json", manifest.dump(2) + "\n");
  return result;
}

}  // namespace tcpl
