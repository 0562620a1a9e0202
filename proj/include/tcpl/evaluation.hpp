#pragma once

#include <algorithm>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tcpl/model.hpp"
#include "tcpl/pseudo_label.hpp"

namespace tcpl {

struct RankingList {
  TrackletId probe_id = 0;
  std::vector<TrackletId> gallery_ids;  // ascending distance, ties by id
  std::vector<double> distances;
  std::vector<bool> matches;            // same identity as the probe
};

struct EvalReport {
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank20 = 0.0;
  double map = 0.0;
};

/// Ranks gallery entries by Euclidean distance to the probe embedding. With
/// `cross_camera_filter`, entries of the probe's identity seen by the probe's
/// camera are dropped.
inline RankingList rank_gallery(const Tracklet& probe, std::span<const double> probe_embedding,
                                std::span<const Tracklet> gallery, std::span<const Tensor> gallery_embeddings,
                                bool cross_camera_filter = true) {
  if (gallery.size() != gallery_embeddings.size())
    throw Error(ErrorCode::DimensionMismatch, "gallery and embedding counts differ");

  struct Entry {
    double distance;
    TrackletId id;
    bool match;
  };
  std::vector<Entry> entries;
  entries.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const Tracklet& g = gallery[i];
    const bool same_identity = probe.identity && g.identity && *probe.identity == *g.identity;
    if (cross_camera_filter && same_identity && g.camera == probe.camera) continue;
    entries.push_back({euclidean_distance(probe_embedding, gallery_embeddings[i].data()), g.id, same_identity});
  }
  if (entries.empty())
    throw Error(ErrorCode::EmptyGalleryAfterFilter, "probe " + std::to_string(probe.id));
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  });

  RankingList out;
  out.probe_id = probe.id;
  for (const auto& e : entries) {
    out.gallery_ids.push_back(e.id);
    out.distances.push_back(e.distance);
    out.matches.push_back(e.match);
  }
  return out;
}

inline RankingList rank_gallery(const EncoderParams& enc, const Tracklet& probe, std::span<const Tracklet> gallery,
                                bool cross_camera_filter = true) {
  const Tensor q = embed_value(enc, probe.frames);
  std::vector<Tensor> g;
  g.reserve(gallery.size());
  for (const auto& t : gallery) g.push_back(embed_value(enc, t.frames));
  return rank_gallery(probe, q.data(), gallery, g, cross_camera_filter);
}

/// Fraction of probes whose first correct match sits at position <= k, per k.
inline std::vector<double> compute_cmc(std::span<const RankingList> rankings, std::span<const std::size_t> ks) {
  if (rankings.empty()) throw Error(ErrorCode::NoProbes, "no rankings");
  std::vector<std::size_t> hits(ks.size(), 0);
  for (const auto& r : rankings) {
    const auto it = std::find(r.matches.begin(), r.matches.end(), true);
    if (it == r.matches.end()) continue;
    const auto position = static_cast<std::size_t>(it - r.matches.begin()) + 1;
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (position <= ks[i]) ++hits[i];
  }
  std::vector<double> out(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i)
    out[i] = static_cast<double>(hits[i]) / static_cast<double>(rankings.size());
  return out;
}

/// Mean over probes of AP = (1/G) * sum_i i / p_i, p_i the position of the i-th match.
inline double compute_map(std::span<const RankingList> rankings) {
  if (rankings.empty()) throw Error(ErrorCode::NoProbes, "no rankings");
  double total = 0.0;
  for (const auto& r : rankings) {
    double ap = 0.0;
    std::size_t found = 0;
    for (std::size_t pos = 0; pos < r.matches.size(); ++pos)
      if (r.matches[pos]) ap += static_cast<double>(++found) / static_cast<double>(pos + 1);
    if (found == 0) throw Error(ErrorCode::ProbeWithoutMatch, "probe " + std::to_string(r.probe_id));
    total += ap / static_cast<double>(found);
  }
  return total / static_cast<double>(rankings.size());
}

inline std::vector<RankingList> rank_split(const EncoderParams& enc, const EvalSplit& split,
                                           bool cross_camera_filter = true) {
  if (split.probe.empty()) throw Error(ErrorCode::NoProbes, "evaluation split has no probes");
  const auto gallery = embed_all(enc, split.gallery);
  std::vector<RankingList> rankings;
  rankings.reserve(split.probe.size());
  for (const auto& probe : split.probe) {
    const Tensor q = embed_value(enc, probe.frames);
    rankings.push_back(rank_gallery(probe, q.data(), split.gallery, gallery, cross_camera_filter));
  }
  return rankings;
}

inline EvalReport evaluate_split(const EncoderParams& enc, const EvalSplit& split, bool cross_camera_filter = true) {
  const auto rankings = rank_split(enc, split, cross_camera_filter);
  const std::size_t ks[] = {1, 5, 20};
  const auto cmc = compute_cmc(rankings, ks);
  return {cmc[0], cmc[1], cmc[2], compute_map(rankings)};
}

/// Fraction of pseudo-labels whose class maps to the tracklet's true identity.
/// Tracklets without ground truth (distractors) are left out. Empty input is
/// undefined and yields nullopt.
inline std::optional<double> label_estimation_accuracy(std::span<const PseudoLabel> labels, const Corpus& corpus) {
  if (labels.empty()) return std::nullopt;
  std::size_t known = 0, correct = 0;
  for (const auto& pl : labels) {
    const Tracklet& t = corpus.get(pl.tracklet_id);
    if (!t.identity) continue;
    ++known;
    if (corpus.class_identity.at(static_cast<std::size_t>(pl.assigned_class)) == *t.identity) ++correct;
  }
  if (known == 0) throw Error(ErrorCode::MissingGroundTruth, "no selected tracklet has a ground-truth identity");
  return static_cast<double>(correct) / static_cast<double>(known);
}

/// One probe per line: "probe <id>: <gallery id>[*] ...", '*' marking matches.
inline void write_ranking_dump(std::ostream& out, std::span<const RankingList> rankings, std::size_t top_k = 20) {
  for (const auto& r : rankings) {
    out << "probe " << r.probe_id << ':';
    for (std::size_t i = 0; i < std::min(top_k, r.gallery_ids.size()); ++i)
      out << ' ' << r.gallery_ids[i] << (r.matches[i] ? "*" : "");
    out << '\n';
  }
}

}  // namespace tcpl
