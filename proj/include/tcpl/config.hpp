#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcpl/corpus.hpp"
#include "tcpl/selftrain.hpp"

namespace tcpl {

inline constexpr const char* kVersion = "0.1.0";

/// Where the tracklets come from: three JSON-lines files, or the generator.
struct CorpusSource {
  std::optional<std::filesystem::path> train_path;
  std::optional<std::filesystem::path> probe_path;
  std::optional<std::filesystem::path> gallery_path;
  GeneratorConfig generator;
  std::uint64_t seed = 1;

  bool from_files() const { return train_path.has_value(); }
};

struct EvaluationOptions {
  std::optional<std::filesystem::path> checkpoint;  // evaluate verb only
  bool ranking_dump = false;
  std::size_t dump_top_k = 20;
};

enum class SweepAxis { P, Lambda, Rank };

struct SweepConfig {
  SweepAxis axis = SweepAxis::P;
  std::vector<double> values{0.05, 0.1, 0.2};
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct ExperimentConfig {
  CorpusSource corpus;
  SplitMode split;
  std::uint64_t split_seed = 1;
  TrainConfig train;
  EvaluationOptions evaluation;
  SweepConfig sweep;
  std::filesystem::path out = "tcpl-out";
};

inline std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::P: return "p";
    case SweepAxis::Lambda: return "lambda";
    case SweepAxis::Rank: return "r";
  }
  return "p";
}

inline SweepAxis sweep_axis_from_string(std::string_view s) {
  if (s == "p") return SweepAxis::P;
  if (s == "lambda") return SweepAxis::Lambda;
  if (s == "r" || s == "rank") return SweepAxis::Rank;
  throw Error(ErrorCode::ConfigError, "sweep.axis: unknown axis '" + std::string(s) + "' (expected p, lambda or r)");
}

namespace detail {

/// Reads one JSON object, remembering which keys were consumed so the rest
/// can be rejected with their full key path.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] static void fail(const std::string& key, const std::string& why) {
    throw Error(ErrorCode::ConfigError, key + ": " + why);
  }

  const nlohmann::json* find(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& dst) {
    if (const auto* v = find(key)) {
      if (!v->is_number()) fail(key_path(key), "expected a number");
      dst = v->get<double>();
    }
  }

  void read(const std::string& key, bool& dst) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) fail(key_path(key), "expected true or false");
      dst = v->get<bool>();
    }
  }

  void read(const std::string& key, int& dst) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer()) fail(key_path(key), "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < INT32_MIN || x > INT32_MAX) fail(key_path(key), "out of range");
      dst = static_cast<int>(x);
    }
  }

  template <class T>
    requires(std::is_unsigned_v<T> && !std::is_same_v<T, bool>)
  void read(const std::string& key, T& dst) {
    if (const auto* v = find(key)) dst = to_unsigned<T>(*v, key_path(key));
  }

  void read(const std::string& key, std::string& dst) {
    if (const auto* v = find(key)) {
      if (!v->is_string()) fail(key_path(key), "expected a string");
      dst = v->get<std::string>();
    }
  }

  void read(const std::string& key, std::optional<std::filesystem::path>& dst, const std::filesystem::path& base) {
    if (const auto* v = find(key)) {
      if (v->is_null()) {
        dst.reset();
        return;
      }
      if (!v->is_string()) fail(key_path(key), "expected a path string or null");
      std::filesystem::path p = v->get<std::string>();
      dst = p.is_relative() && !base.empty() ? base / p : p;
    }
  }

  template <class T>
  static T to_unsigned(const nlohmann::json& v, const std::string& key) {
    if (!v.is_number_integer()) fail(key, "expected a non-negative integer");
    if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
    const auto x = v.get<std::int64_t>();
    if (x < 0) fail(key, "expected a non-negative integer");
    return static_cast<T>(x);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.contains(key)) fail(key_path(key), "unknown key");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// Validator message prefix -> key path it refers to.
inline constexpr std::pair<std::string_view, std::string_view> kMessageKeys[] = {
    {"identities", "corpus.identities"},
    {"eval_identities", "corpus.eval_identities"},
    {"cameras", "corpus.cameras"},
    {"tracklets_per_camera", "corpus.tracklets_per_camera"},
    {"min_frames", "corpus.min_frames"},
    {"max_frames", "corpus.max_frames"},
    {"feature_dim", "corpus.feature_dim"},
    {"noise", "corpus.sigma_*"},
    {"drift_segments", "corpus.drift_segments"},
    {"drift_rank", "corpus.drift_rank"},
    {"distractors", "corpus.distractors"},
    {"lambda", "loss.lambda"},
    {"alpha", "loss.alpha"},
    {"tau", "loss.tau"},
    {"rho", "sampler.rho"},
    {"floor(1/rho)", "sampler.rho"},
    {"rank", "sampler.rank"},
    {"batch_size", "sampler.batch_size"},
    {"learning rate", "optimizer.learning_rate"},
    {"momentum", "optimizer.momentum"},
    {"weight decay", "optimizer.weight_decay"},
    {"enlarging factor p", "schedule.p"},
    {"epochs per step", "schedule.epochs_per_step"},
    {"final phase fraction", "schedule.final_phase_fraction"},
    {"model dims", "model"},
};

/// Runs a validate() that throws InvalidConfig and re-raises it as a
/// ConfigError naming the offending key.
template <class F>
void validate_keyed(F&& check) {
  try {
    check();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InvalidConfig) throw;
    const std::string& what = e.detail();
    std::string key = "<config>";
    std::size_t best = 0;
    for (const auto& [needle, path] : kMessageKeys)
      if (what.rfind(needle, 0) == 0 && needle.size() > best) {
        best = needle.size();
        key = path;
      }
    throw Error(ErrorCode::ConfigError, key + ": " + what);
  }
}

}  // namespace detail

inline void validate(const ExperimentConfig& cfg) {
  using detail::validate_keyed;
  validate_keyed([&] { cfg.corpus.generator.validate(); });
  if (cfg.corpus.from_files() && (!cfg.corpus.probe_path || !cfg.corpus.gallery_path))
    throw Error(ErrorCode::ConfigError, "corpus.train_path: requires probe_path and gallery_path");
  if (cfg.corpus.probe_path.has_value() != cfg.corpus.gallery_path.has_value())
    throw Error(ErrorCode::ConfigError, "corpus.probe_path: probe_path and gallery_path go together");
  if (cfg.split.kind == SplitMode::Kind::Fraction && !(cfg.split.fraction > 0.0 && cfg.split.fraction <= 1.0))
    throw Error(ErrorCode::ConfigError, "split.fraction: must be in (0, 1]");
  validate_keyed([&] { cfg.train.validate(); });
  if (cfg.evaluation.dump_top_k < 1) throw Error(ErrorCode::ConfigError, "evaluation.dump_top_k: must be >= 1");
  if (cfg.sweep.seeds.empty()) throw Error(ErrorCode::ConfigError, "sweep.seeds: must not be empty");
  if (cfg.sweep.values.empty()) throw Error(ErrorCode::ConfigError, "sweep.values: must not be empty");
  for (double v : cfg.sweep.values) {
    const bool ok = cfg.sweep.axis == SweepAxis::P        ? v > 0.0 && v <= 1.0
                    : cfg.sweep.axis == SweepAxis::Lambda ? std::isfinite(v) && v >= 0.0
                                                          : v >= 1.0 && v == std::floor(v);
    if (!ok) throw Error(ErrorCode::ConfigError, "sweep.values: invalid value " + std::to_string(v) + " for axis " +
                                                     std::string(to_string(cfg.sweep.axis)));
  }
  if (cfg.out.empty()) throw Error(ErrorCode::ConfigError, "out: must not be empty");
}

/// Parses a config document. Relative paths resolve against `base_dir`.
inline ExperimentConfig parse_config(const nlohmann::json& root, const std::filesystem::path& base_dir = {}) {
  using detail::ObjectReader;
  ExperimentConfig cfg;
  ObjectReader top(root, "");

  if (const auto* j = top.find("corpus")) {
    ObjectReader r(*j, "corpus");
    auto& g = cfg.corpus.generator;
    r.read("train_path", cfg.corpus.train_path, base_dir);
    r.read("probe_path", cfg.corpus.probe_path, base_dir);
    r.read("gallery_path", cfg.corpus.gallery_path, base_dir);
    r.read("seed", cfg.corpus.seed);
    r.read("identities", g.identities);
    r.read("eval_identities", g.eval_identities);
    r.read("cameras", g.cameras);
    r.read("tracklets_per_camera", g.tracklets_per_camera);
    r.read("min_frames", g.min_frames);
    r.read("max_frames", g.max_frames);
    r.read("feature_dim", g.feature_dim);
    r.read("sigma_id", g.sigma_id);
    r.read("sigma_cam", g.sigma_cam);
    r.read("sigma_drift", g.sigma_drift);
    r.read("sigma_noise", g.sigma_noise);
    r.read("drift_segments", g.drift_segments);
    r.read("drift_rank", g.drift_rank);
    r.read("camera_rotation", g.camera_rotation);
    r.read("background_camera_shift", g.background_camera_shift);
    r.read("distractors", g.distractors);
    r.finish();
  }
  if (const auto* j = top.find("split")) {
    ObjectReader r(*j, "split");
    std::string mode = cfg.split.kind == SplitMode::Kind::OneShot ? "one-shot" : "fraction";
    r.read("mode", mode);
    if (mode == "one-shot") cfg.split.kind = SplitMode::Kind::OneShot;
    else if (mode == "fraction") cfg.split.kind = SplitMode::Kind::Fraction;
    else ObjectReader::fail("split.mode", "expected 'one-shot' or 'fraction'");
    r.read("fraction", cfg.split.fraction);
    r.read("seed", cfg.split_seed);
    r.finish();
  }
  if (const auto* j = top.find("model")) {
    ObjectReader r(*j, "model");
    r.read("hidden", cfg.train.hidden);
    r.read("embedding", cfg.train.embedding);
    r.read("normalize", cfg.train.normalize_embeddings);
    r.finish();
  }
  if (const auto* j = top.find("loss")) {
    ObjectReader r(*j, "loss");
    auto& l = cfg.train.loss;
    if (const auto* v = r.find("variant")) {
      if (!v->is_string()) ObjectReader::fail("loss.variant", "expected a string");
      try {
        l.variant = loss_variant_from_string(v->get<std::string>());
      } catch (const Error&) {
        ObjectReader::fail("loss.variant", "unknown variant '" + v->get<std::string>() + "'");
      }
    }
    r.read("lambda", l.weights.lambda);
    r.read("alpha", l.weights.alpha);
    r.read("tau", cfg.train.tau);
    r.read("cosine_exclusive", l.cosine_exclusive);
    r.finish();
  }
  if (const auto* j = top.find("sampler")) {
    ObjectReader r(*j, "sampler");
    r.read("rho", cfg.train.loss.sampler.rho);
    r.read("rank", cfg.train.loss.sampler.rank);
    r.read("batch_size", cfg.train.loss.sampler.batch_size);
    r.finish();
  }
  if (const auto* j = top.find("optimizer")) {
    ObjectReader r(*j, "optimizer");
    r.read("learning_rate", cfg.train.learning_rate);
    r.read("momentum", cfg.train.momentum);
    r.read("weight_decay", cfg.train.weight_decay);
    r.finish();
  }
  if (const auto* j = top.find("schedule")) {
    ObjectReader r(*j, "schedule");
    r.read("p", cfg.train.p);
    r.read("epochs_per_step", cfg.train.epochs_per_step);
    r.read("final_phase_fraction", cfg.train.final_phase_fraction);
    r.finish();
  }
  if (const auto* j = top.find("evaluation")) {
    ObjectReader r(*j, "evaluation");
    r.read("checkpoint", cfg.evaluation.checkpoint, base_dir);
    r.read("cross_camera_filter", cfg.train.cross_camera_filter);
    r.read("ranking_dump", cfg.evaluation.ranking_dump);
    r.read("dump_top_k", cfg.evaluation.dump_top_k);
    r.finish();
  }
  if (const auto* j = top.find("sweep")) {
    ObjectReader r(*j, "sweep");
    std::string axis(to_string(cfg.sweep.axis));
    r.read("axis", axis);
    cfg.sweep.axis = sweep_axis_from_string(axis);
    if (const auto* v = r.find("values")) {
      if (!v->is_array()) ObjectReader::fail("sweep.values", "expected an array of numbers");
      cfg.sweep.values.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) ObjectReader::fail("sweep.values[" + std::to_string(i) + "]", "expected a number");
        cfg.sweep.values.push_back((*v)[i].get<double>());
      }
    }
    if (const auto* v = r.find("seeds")) {
      if (!v->is_array()) ObjectReader::fail("sweep.seeds", "expected an array of integers");
      cfg.sweep.seeds.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        cfg.sweep.seeds.push_back(
            ObjectReader::to_unsigned<std::uint64_t>((*v)[i], "sweep.seeds[" + std::to_string(i) + "]"));
    }
    r.finish();
  }
  top.read("seed", cfg.train.seed);
  if (const auto* v = top.find("out")) {
    if (!v->is_string()) ObjectReader::fail("out", "expected a path string");
    cfg.out = v->get<std::string>();
  }
  top.finish();
  validate(cfg);
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {}) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("<root>: invalid JSON: ") + e.what());
  }
  return parse_config(root, base_dir);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.parent_path());
}

/// Every setting with its effective value; parse_config of this document
/// reproduces `cfg`.
inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  using nlohmann::ordered_json;
  auto path_or_null = [](const std::optional<std::filesystem::path>& p) {
    return p ? ordered_json(p->generic_string()) : ordered_json(nullptr);
  };
  const auto& g = cfg.corpus.generator;
  const auto& t = cfg.train;
  ordered_json j;
  j["corpus"] = {{"train_path", path_or_null(cfg.corpus.train_path)},
                 {"probe_path", path_or_null(cfg.corpus.probe_path)},
                 {"gallery_path", path_or_null(cfg.corpus.gallery_path)},
                 {"seed", cfg.corpus.seed},
                 {"identities", g.identities},
                 {"eval_identities", g.eval_identities},
                 {"cameras", g.cameras},
                 {"tracklets_per_camera", g.tracklets_per_camera},
                 {"min_frames", g.min_frames},
                 {"max_frames", g.max_frames},
                 {"feature_dim", g.feature_dim},
                 {"sigma_id", g.sigma_id},
                 {"sigma_cam", g.sigma_cam},
                 {"sigma_drift", g.sigma_drift},
                 {"sigma_noise", g.sigma_noise},
                 {"drift_segments", g.drift_segments},
                 {"drift_rank", g.drift_rank},
                 {"camera_rotation", g.camera_rotation},
                 {"background_camera_shift", g.background_camera_shift},
                 {"distractors", g.distractors}};
  j["split"] = {{"mode", cfg.split.kind == SplitMode::Kind::OneShot ? "one-shot" : "fraction"},
                {"fraction", cfg.split.fraction},
                {"seed", cfg.split_seed}};
  j["model"] = {{"hidden", t.hidden}, {"embedding", t.embedding}, {"normalize", t.normalize_embeddings}};
  j["loss"] = {{"variant", std::string(to_string(t.loss.variant))},
               {"lambda", t.loss.weights.lambda},
               {"alpha", t.loss.weights.alpha},
               {"tau", t.tau},
               {"cosine_exclusive", t.loss.cosine_exclusive}};
  j["sampler"] = {{"rho", t.loss.sampler.rho}, {"rank", t.loss.sampler.rank}, {"batch_size", t.loss.sampler.batch_size}};
  j["optimizer"] = {{"learning_rate", t.learning_rate}, {"momentum", t.momentum}, {"weight_decay", t.weight_decay}};
  j["schedule"] = {{"p", t.p}, {"epochs_per_step", t.epochs_per_step}, {"final_phase_fraction", t.final_phase_fraction}};
  j["evaluation"] = {{"checkpoint", path_or_null(cfg.evaluation.checkpoint)},
                     {"cross_camera_filter", t.cross_camera_filter},
                     {"ranking_dump", cfg.evaluation.ranking_dump},
                     {"dump_top_k", cfg.evaluation.dump_top_k}};
  j["sweep"] = {{"axis", std::string(to_string(cfg.sweep.axis))},
                {"values", cfg.sweep.values},
                {"seeds", cfg.sweep.seeds}};
  j["seed"] = t.seed;
  j["out"] = cfg.out.generic_string();
  return j;
}

}  // namespace tcpl
