#pragma once

#include <random>
#include <vector>

#include "tcpl/corpus.hpp"

namespace fixture {

inline tcpl::Tensor random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  tcpl::Tensor t({rows, cols});
  for (double& v : t.values()) v = n(rng);
  return t;
}

inline tcpl::Tensor random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  tcpl::Tensor t({n});
  for (double& v : t.values()) v = dist(rng);
  return t;
}

/// A small generated corpus with the one-shot split applied.
inline tcpl::Corpus small_corpus(std::uint64_t seed, int identities = 4, int feature_dim = 6, int cameras = 2) {
  tcpl::GeneratorConfig g;
  g.identities = identities;
  g.eval_identities = 2;
  g.cameras = cameras;
  g.tracklets_per_camera = 1;
  g.min_frames = 6;
  g.max_frames = 10;
  g.feature_dim = feature_dim;
  g.drift_rank = feature_dim / 2;
  auto data = tcpl::generate_synthetic_corpus(g, seed);
  return tcpl::one_shot_split(std::move(data.train), {}, seed + 1);
}

template <class Fn>
bool throws_code(tcpl::ErrorCode code, Fn&& fn) {
  try {
    fn();
  } catch (const tcpl::Error& e) {
    return e.code() == code;
  }
  return false;
}

}  // namespace fixture
