#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "tcpl/corpus.hpp"

namespace tcpl {

/// floor() that tolerates representation error just below an integer
/// (e.g. 3 * 0.3 * 10 == 8.999999999999998).
inline std::size_t robust_floor(double x) {
  return static_cast<std::size_t>(std::floor(x + 1e-9 * std::max(1.0, std::abs(x))));
}

struct SamplerConfig {
  double rho = 0.2;           // mini-tracklet size as a fraction of the tracklet
  std::size_t rank = 3;       // negatives drawn from batch ranks [r, 2r]
  std::size_t batch_size = 16;

  void validate() const {
    if (!(rho > 0.0 && rho <= 0.5)) throw Error(ErrorCode::InvalidConfig, "rho must be in (0, 0.5]");
    if (robust_floor(1.0 / rho) < 2) throw Error(ErrorCode::InvalidConfig, "floor(1/rho) must be >= 2");
    if (rank < 1) throw Error(ErrorCode::InvalidConfig, "rank must be >= 1");
    if (batch_size < 2) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 2");
  }
};

struct ChunkLayout {
  std::size_t chunk_size = 0;
  std::size_t chunks = 0;
};

/// Contiguous equal-size chunks over the first min(n, k*s) frames, where
/// k = floor(1/rho) and s = max(1, floor(rho*n)). Leftover frames are unused.
inline ChunkLayout mini_tracklet_layout(std::size_t n, double rho) {
  const std::size_t k = robust_floor(1.0 / rho);
  const std::size_t s = std::max<std::size_t>(1, robust_floor(rho * static_cast<double>(n)));
  return {s, std::min(k, n / s)};
}

struct MiniTrackletPair {
  std::size_t anchor_chunk = 0;
  std::size_t positive_chunk = 0;
  std::size_t chunk_size = 0;
  Tracklet anchor;
  Tracklet positive;

  std::vector<std::size_t> anchor_frames() const { return frames_of(anchor_chunk); }
  std::vector<std::size_t> positive_frames() const { return frames_of(positive_chunk); }

 private:
  std::vector<std::size_t> frames_of(std::size_t chunk) const {
    std::vector<std::size_t> idx(chunk_size);
    for (std::size_t i = 0; i < chunk_size; ++i) idx[i] = chunk * chunk_size + i;
    return idx;
  }
};

/// Two distinct chunk indices, uniform over ordered pairs.
inline std::pair<std::size_t, std::size_t> sample_chunk_pair(std::size_t chunks, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> first(0, chunks - 1);
  std::uniform_int_distribution<std::size_t> second(0, chunks - 2);
  const std::size_t a = first(rng);
  std::size_t b = second(rng);
  if (b >= a) ++b;
  return {a, b};
}

inline MiniTrackletPair sample_mini_tracklets(const Tracklet& tracklet, const SamplerConfig& cfg, std::mt19937_64& rng) {
  const std::size_t n = tracklet.length();
  if (n < 2) throw Error(ErrorCode::TooShort, "tracklet " + std::to_string(tracklet.id) + " has " + std::to_string(n) + " frame(s)");
  const ChunkLayout layout = mini_tracklet_layout(n, cfg.rho);
  if (layout.chunks < 2)
    throw Error(ErrorCode::DegeneratePartition, "tracklet " + std::to_string(tracklet.id) + " yields " +
                                                    std::to_string(layout.chunks) + " chunk(s)");

  MiniTrackletPair out;
  std::tie(out.anchor_chunk, out.positive_chunk) = sample_chunk_pair(layout.chunks, rng);
  out.chunk_size = layout.chunk_size;

  const std::size_t d = tracklet.feature_dim();
  auto slice = [&](std::size_t chunk) {
    Tracklet mini{tracklet.id, tracklet.camera, tracklet.identity, Tensor({layout.chunk_size, d})};
    const auto src = tracklet.frames.data().subspan(chunk * layout.chunk_size * d, layout.chunk_size * d);
    std::copy(src.begin(), src.end(), mini.frames.values().begin());
    return mini;
  };
  out.anchor = slice(out.anchor_chunk);
  out.positive = slice(out.positive_chunk);
  return out;
}

struct NegativeCandidate {
  TrackletId id;
  std::span<const double> embedding;
};

/// Candidates ordered by (distance to anchor, id); element i has rank i+1.
inline std::vector<TrackletId> rank_candidates(TrackletId anchor_id, std::span<const double> anchor,
                                               std::span<const NegativeCandidate> batch) {
  std::vector<std::pair<double, TrackletId>> scored;
  scored.reserve(batch.size());
  for (const auto& c : batch)
    if (c.id != anchor_id) scored.emplace_back(euclidean_distance(anchor, c.embedding), c.id);
  std::sort(scored.begin(), scored.end());
  std::vector<TrackletId> ids;
  ids.reserve(scored.size());
  for (const auto& [dist, id] : scored) ids.push_back(id);
  return ids;
}

/// Uniform draw among batch neighbours ranked [r, min(2r, |candidates|)].
inline TrackletId sample_negative(TrackletId anchor_id, std::span<const double> anchor,
                                  std::span<const NegativeCandidate> batch, const SamplerConfig& cfg,
                                  std::mt19937_64& rng) {
  const auto ranked = rank_candidates(anchor_id, anchor, batch);
  if (ranked.size() < cfg.rank)
    throw Error(ErrorCode::InsufficientBatch, std::to_string(ranked.size()) + " candidate(s) for rank " +
                                                  std::to_string(cfg.rank));
  const std::size_t hi = std::min(2 * cfg.rank, ranked.size());
  std::uniform_int_distribution<std::size_t> pick(cfg.rank, hi);
  return ranked[pick(rng) - 1];
}

/// One epoch: a random permutation of `ids` cut into windows of `batch_size`;
/// the last window may be short.
inline std::vector<std::vector<TrackletId>> sample_epoch_batches(std::vector<TrackletId> ids, std::size_t batch_size,
                                                                 std::mt19937_64& rng) {
  if (batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<std::vector<TrackletId>> batches;
  for (std::size_t start = 0; start < ids.size(); start += batch_size) {
    const std::size_t end = std::min(ids.size(), start + batch_size);
    batches.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(start), ids.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

inline std::vector<std::vector<TrackletId>> sample_epoch_batches(const Corpus& corpus, std::size_t batch_size,
                                                                 std::mt19937_64& rng) {
  std::vector<TrackletId> ids;
  ids.reserve(corpus.tracklets.size());
  for (const auto& t : corpus.tracklets) ids.push_back(t.id);
  return sample_epoch_batches(std::move(ids), batch_size, rng);
}

}  // namespace tcpl
