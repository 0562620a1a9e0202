#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcpl/error.hpp"
#include "tcpl/tensor.hpp"

namespace tcpl {

using TrackletId = std::int64_t;

/// One person observed by one camera; frames are rows of an (n x d_in) matrix.
/// `identity` is ground truth: used by the generator and the evaluator only.
struct Tracklet {
  TrackletId id = 0;
  int camera = 1;
  std::optional<int> identity;
  Tensor frames;

  std::size_t length() const { return frames.dim(0); }
  std::size_t feature_dim() const { return frames.dim(1); }
};

/// The training set D split into D_l (one-shot labels) and D_u.
struct Corpus {
  std::vector<Tracklet> tracklets;
  std::map<TrackletId, int> labels;       // D_l: tracklet id -> class index in [0, m_l)
  std::vector<TrackletId> unlabeled_ids;  // D_u, in corpus order
  std::vector<int> class_identity;        // class index -> ground-truth identity
  std::size_t m_l = 0;
  std::size_t m_u = 0;

  const Tracklet& get(TrackletId id) const { return tracklets.at(index_.at(id)); }
  std::size_t index_of(TrackletId id) const { return index_.at(id); }
  bool is_labeled(TrackletId id) const { return labels.contains(id); }

  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < tracklets.size(); ++i) index_[tracklets[i].id] = i;
  }

 private:
  std::unordered_map<TrackletId, std::size_t> index_;
};

struct EvalSplit {
  std::vector<Tracklet> probe;
  std::vector<Tracklet> gallery;
};

struct GeneratorConfig {
  int identities = 30;          // training identities M
  int eval_identities = 30;     // disjoint identities for probe/gallery
  int cameras = 3;
  int tracklets_per_camera = 2;
  int min_frames = 10;
  int max_frames = 20;
  int feature_dim = 16;
  double sigma_id = 1.0;
  double sigma_cam = 0.6;
  double sigma_drift = 1.2;
  double sigma_noise = 0.1;
  int drift_segments = 4;       // piecewise-constant background segments per tracklet
  int drift_rank = 8;           // dimension of the background subspace; 0 = isotropic
  bool camera_rotation = false;
  bool background_camera_shift = true;  // camera offsets lie in the background subspace
  int distractors = 0;          // unlabeled-only tracklets of identities without a labeled example

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
    if (identities < 2) fail("identities must be >= 2");
    if (eval_identities < 1) fail("eval_identities must be >= 1");
    if (cameras < 2) fail("cameras must be >= 2");
    if (tracklets_per_camera < 1) fail("tracklets_per_camera must be >= 1");
    if (min_frames < 2) fail("min_frames must be >= 2");
    if (max_frames < min_frames) fail("max_frames must be >= min_frames");
    if (feature_dim < 1) fail("feature_dim must be >= 1");
    if (sigma_id < 0 || sigma_cam < 0 || sigma_drift < 0 || sigma_noise < 0) fail("noise must be >= 0");
    if (drift_segments < 1) fail("drift_segments must be >= 1");
    if (drift_rank < 0 || drift_rank > feature_dim) fail("drift_rank must be in [0, feature_dim]");
    if (distractors < 0) fail("distractors must be >= 0");
  }
};

struct GeneratedData {
  std::vector<Tracklet> train;
  EvalSplit eval;
  std::vector<std::vector<double>> prototypes;  // per identity, training identities first
};

namespace detail {

inline std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t d, double sigma) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(d);
  for (double& x : v) x = sigma * normal(rng);
  return v;
}

// Columns of a d x k matrix with orthonormal columns (Gram-Schmidt on Gaussian draws).
inline std::vector<std::vector<double>> orthonormal_basis(std::mt19937_64& rng, std::size_t d, std::size_t k) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < k) {
    auto v = gaussian_vector(rng, d, 1.0);
    for (const auto& b : basis) {
      double proj = 0.0;
      for (std::size_t i = 0; i < d; ++i) proj += v[i] * b[i];
      for (std::size_t i = 0; i < d; ++i) v[i] -= proj * b[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

}  // namespace detail

/// Additive-Gaussian multi-camera corpus:
///   frame_t = R_k mu_y + c_k + sigma_drift * w_seg(t) + sigma_noise * eps_t
/// where w_seg is constant over each of `drift_segments` contiguous stretches of
/// the tracklet and lies in a random `drift_rank`-dimensional subspace. R_k is
/// the identity unless `camera_rotation` is set.
inline GeneratedData generate_synthetic_corpus(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const auto d = static_cast<std::size_t>(cfg.feature_dim);
  const int total_ids = cfg.identities + cfg.eval_identities + cfg.distractors;

  GeneratedData out;
  for (int y = 0; y < total_ids; ++y) out.prototypes.push_back(detail::gaussian_vector(rng, d, cfg.sigma_id));

  const std::size_t rank = cfg.drift_rank == 0 ? d : static_cast<std::size_t>(cfg.drift_rank);
  const auto drift_basis = detail::orthonormal_basis(rng, d, rank);

  std::vector<std::vector<double>> camera_offset;
  for (int k = 0; k < cfg.cameras; ++k) {
    if (!cfg.background_camera_shift) {
      camera_offset.push_back(detail::gaussian_vector(rng, d, cfg.sigma_cam));
      continue;
    }
    std::vector<double> c(d, 0.0);
    for (const auto& b : drift_basis) {
      const double z = cfg.sigma_cam * std::normal_distribution<double>(0.0, 1.0)(rng);
      for (std::size_t i = 0; i < d; ++i) c[i] += z * b[i];
    }
    camera_offset.push_back(std::move(c));
  }

  std::vector<std::vector<std::vector<double>>> rotation;
  if (cfg.camera_rotation)
    for (int k = 0; k < cfg.cameras; ++k) rotation.push_back(detail::orthonormal_basis(rng, d, d));

  TrackletId next_id = 0;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> length_dist(cfg.min_frames, cfg.max_frames);

  auto make_tracklet = [&](int identity, int camera_index) {
    const auto n = static_cast<std::size_t>(length_dist(rng));
    const std::size_t segments = std::min<std::size_t>(static_cast<std::size_t>(cfg.drift_segments), n);

    std::vector<double> base = out.prototypes[static_cast<std::size_t>(identity)];
    if (cfg.camera_rotation) {
      const auto& cols = rotation[static_cast<std::size_t>(camera_index)];
      std::vector<double> rotated(d, 0.0);
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t i = 0; i < d; ++i) rotated[i] += cols[j][i] * base[j];
      base = std::move(rotated);
    }
    for (std::size_t i = 0; i < d; ++i) base[i] += camera_offset[static_cast<std::size_t>(camera_index)][i];

    std::vector<std::vector<double>> drift(segments, std::vector<double>(d, 0.0));
    for (auto& w : drift)
      for (const auto& b : drift_basis) {
        const double z = normal(rng);
        for (std::size_t i = 0; i < d; ++i) w[i] += z * b[i];
      }

    Tensor frames({n, d});
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t seg = t * segments / n;
      for (std::size_t i = 0; i < d; ++i)
        frames.at(t, i) = base[i] + cfg.sigma_drift * drift[seg][i] + cfg.sigma_noise * normal(rng);
    }
    return Tracklet{next_id++, camera_index + 1, identity, std::move(frames)};
  };

  for (int y = 0; y < cfg.identities; ++y)
    for (int k = 0; k < cfg.cameras; ++k)
      for (int j = 0; j < cfg.tracklets_per_camera; ++j) out.train.push_back(make_tracklet(y, k));

  std::uniform_int_distribution<int> camera_dist(0, cfg.cameras - 1);
  for (int q = 0; q < cfg.distractors; ++q) {
    Tracklet t = make_tracklet(cfg.identities + cfg.eval_identities + q, camera_dist(rng));
    t.identity.reset();
    out.train.push_back(std::move(t));
  }

  for (int e = 0; e < cfg.eval_identities; ++e) {
    const int y = cfg.identities + e;
    std::vector<Tracklet> own;
    for (int k = 0; k < cfg.cameras; ++k)
      for (int j = 0; j < cfg.tracklets_per_camera; ++j) own.push_back(make_tracklet(y, k));
    std::uniform_int_distribution<std::size_t> pick(0, own.size() - 1);
    const std::size_t probe = pick(rng);
    for (std::size_t i = 0; i < own.size(); ++i)
      (i == probe ? out.eval.probe : out.eval.gallery).push_back(std::move(own[i]));
  }
  return out;
}

struct SplitMode {
  enum class Kind { OneShot, Fraction };
  Kind kind = Kind::OneShot;
  double fraction = 0.2;
};

/// One-shot: per identity, a random tracklet from camera 1, else from the
/// lowest-numbered camera that saw the identity. Fraction: a random
/// round(q*|D|) tracklets with at least one per identity. Tracklets without
/// ground truth (distractors) are always unlabeled.
inline Corpus one_shot_split(std::vector<Tracklet> tracklets, SplitMode mode, std::uint64_t seed) {
  if (mode.kind == SplitMode::Kind::Fraction && !(mode.fraction > 0.0 && mode.fraction <= 1.0))
    throw Error(ErrorCode::InvalidConfig, "fraction must be in (0, 1]");

  std::mt19937_64 rng(seed);
  std::map<int, std::map<int, std::vector<std::size_t>>> by_identity_camera;
  for (std::size_t i = 0; i < tracklets.size(); ++i)
    if (tracklets[i].identity) by_identity_camera[*tracklets[i].identity][tracklets[i].camera].push_back(i);
  if (by_identity_camera.empty()) throw Error(ErrorCode::MissingIdentity, "no tracklet carries an identity");

  Corpus corpus;
  std::vector<bool> chosen(tracklets.size(), false);
  for (const auto& [identity, cameras] : by_identity_camera) {
    corpus.class_identity.push_back(identity);
    std::vector<std::size_t> pool;
    if (mode.kind == SplitMode::Kind::OneShot) {
      pool = cameras.begin()->second;  // lowest camera index present
    } else {
      for (const auto& [cam, idx] : cameras) pool.insert(pool.end(), idx.begin(), idx.end());
    }
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    chosen[pool[pick(rng)]] = true;
  }

  if (mode.kind == SplitMode::Kind::Fraction) {
    const auto target = static_cast<std::size_t>(std::llround(mode.fraction * static_cast<double>(tracklets.size())));
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < tracklets.size(); ++i)
      if (!chosen[i] && tracklets[i].identity) rest.push_back(i);
    std::shuffle(rest.begin(), rest.end(), rng);
    std::size_t have = by_identity_camera.size();
    for (std::size_t i = 0; i < rest.size() && have < target; ++i, ++have) chosen[rest[i]] = true;
  }

  std::map<int, int> class_of;
  for (std::size_t c = 0; c < corpus.class_identity.size(); ++c) class_of[corpus.class_identity[c]] = static_cast<int>(c);
  for (std::size_t i = 0; i < tracklets.size(); ++i) {
    if (chosen[i])
      corpus.labels[tracklets[i].id] = class_of.at(*tracklets[i].identity);
    else
      corpus.unlabeled_ids.push_back(tracklets[i].id);
  }
  corpus.m_l = corpus.class_identity.size();
  corpus.m_u = corpus.unlabeled_ids.size();
  corpus.tracklets = std::move(tracklets);
  corpus.rebuild_index();
  return corpus;
}

// JSON-lines tracklet files: {"id": int, "identity": int|null, "camera": int, "frames": [[...], ...]}

inline std::string tracklet_to_json_line(const Tracklet& t) {
  nlohmann::ordered_json j;
  j["id"] = t.id;
  j["identity"] = t.identity ? nlohmann::ordered_json(*t.identity) : nlohmann::ordered_json(nullptr);
  j["camera"] = t.camera;
  auto frames = nlohmann::ordered_json::array();
  const std::size_t n = t.length(), d = t.feature_dim();
  for (std::size_t r = 0; r < n; ++r) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < d; ++c) row.push_back(t.frames.at(r, c));
    frames.push_back(std::move(row));
  }
  j["frames"] = std::move(frames);
  return j.dump();
}

inline void write_tracklets(const std::filesystem::path& path, const std::vector<Tracklet>& tracklets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& t : tracklets) out << tracklet_to_json_line(t) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

inline std::vector<Tracklet> parse_tracklets(std::istream& in) {
  std::vector<Tracklet> result;
  std::set<TrackletId> seen;
  std::optional<std::size_t> dim;
  std::string line;
  std::size_t lineno = 0;
  auto parse_error = [&](const std::string& why) {
    return Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": " + why);
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw parse_error(e.what());
    }
    if (!j.is_object()) throw parse_error("record is not an object");
    for (const auto& key : {"id", "camera", "frames"})
      if (!j.contains(key)) throw parse_error(std::string("missing key '") + key + "'");
    for (const auto& [key, value] : j.items())
      if (key != "id" && key != "identity" && key != "camera" && key != "frames")
        throw parse_error("unknown key '" + key + "'");
    if (!j["id"].is_number_integer()) throw parse_error("'id' must be an integer");
    if (!j["camera"].is_number_integer() || j["camera"].get<int>() < 1) throw parse_error("'camera' must be an integer >= 1");

    Tracklet t;
    t.id = j["id"].get<TrackletId>();
    t.camera = j["camera"].get<int>();
    if (j.contains("identity") && !j["identity"].is_null()) {
      if (!j["identity"].is_number_integer()) throw parse_error("'identity' must be an integer or null");
      t.identity = j["identity"].get<int>();
    }
    const auto& frames = j["frames"];
    if (!frames.is_array() || frames.empty()) throw parse_error("'frames' must be a non-empty array");
    std::vector<double> flat;
    std::size_t width = 0;
    for (std::size_t r = 0; r < frames.size(); ++r) {
      const auto& row = frames[r];
      if (!row.is_array() || row.empty()) throw parse_error("frame " + std::to_string(r) + " is not a non-empty array");
      if (r == 0) width = row.size();
      if (row.size() != width || (dim && *dim != row.size()))
        throw Error(ErrorCode::DimensionMismatch, "line " + std::to_string(lineno) + ": frame " + std::to_string(r) +
                                                      " has " + std::to_string(row.size()) + " features, expected " +
                                                      std::to_string(dim ? *dim : width));
      for (const auto& v : row) {
        if (!v.is_number()) throw parse_error("non-numeric feature");
        flat.push_back(v.get<double>());
      }
    }
    dim = width;
    if (!seen.insert(t.id).second) throw parse_error("duplicate id " + std::to_string(t.id));
    t.frames = Tensor({frames.size(), width}, std::move(flat));
    result.push_back(std::move(t));
  }
  if (result.empty()) throw Error(ErrorCode::ParseError, "no records");
  return result;
}

inline std::vector<Tracklet> read_tracklets(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_tracklets(in);
}

/// Loads a feature file as an unsplit corpus: every tracklet in D_u, no labels.
/// Use one_shot_split on `tracklets` to derive the labeled set.
inline Corpus load_feature_corpus(const std::filesystem::path& path) {
  Corpus corpus;
  corpus.tracklets = read_tracklets(path);
  for (const auto& t : corpus.tracklets) corpus.unlabeled_ids.push_back(t.id);
  corpus.m_u = corpus.unlabeled_ids.size();
  corpus.rebuild_index();
  return corpus;
}

}  // namespace tcpl
