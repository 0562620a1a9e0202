#pragma once

#include "tcpl/corpus.hpp"

namespace tcpl {

/// Identity transferred from the nearest labeled tracklet. `confidence` is that
/// Euclidean distance: lower means more reliable.
struct PseudoLabel {
  TrackletId tracklet_id = 0;
  int assigned_class = 0;  // index into Corpus::class_identity
  double confidence = 0.0;

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

}  // namespace tcpl
