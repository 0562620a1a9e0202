#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tcpl/autodiff.hpp"
#include "tcpl/model.hpp"
#include "tcpl/sampling.hpp"

namespace tcpl {

struct LossWeights {
  double lambda = 1.0;  // weight of the temporal-consistency terms
  double alpha = 0.3;   // triplet margin

  void validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0) throw Error(ErrorCode::InvalidConfig, "lambda must be finite and >= 0");
    if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidConfig, "alpha must be > 0");
  }
};

enum class LossVariant { Full, IntraOnly, InterOnly, CeOnly, Exclusive };

inline std::string_view to_string(LossVariant v) {
  switch (v) {
    case LossVariant::Full: return "full";
    case LossVariant::IntraOnly: return "intra";
    case LossVariant::InterOnly: return "inter";
    case LossVariant::CeOnly: return "ce-only";
    case LossVariant::Exclusive: return "exclusive";
  }
  return "full";
}

inline LossVariant loss_variant_from_string(std::string_view s) {
  if (s == "full") return LossVariant::Full;
  if (s == "intra" || s == "intra-only") return LossVariant::IntraOnly;
  if (s == "inter" || s == "inter-only") return LossVariant::InterOnly;
  if (s == "ce-only" || s == "ce") return LossVariant::CeOnly;
  if (s == "exclusive" || s == "exclusive-baseline") return LossVariant::Exclusive;
  throw Error(ErrorCode::ConfigError, "unknown loss variant '" + std::string(s) + "'");
}

namespace detail {

inline void require_same_dim(const Var& a, const Var& b) {
  if (a->value.shape() != b->value.shape())
    throw Error(ErrorCode::DimensionMismatch,
                shape_string(a->value.shape()) + " vs " + shape_string(b->value.shape()));
}

}  // namespace detail

/// ||e_a - e_p||_2 between two mini-tracklet embeddings of one tracklet.
inline Var intra_consistency_loss(const Var& e_a, const Var& e_p) {
  detail::require_same_dim(e_a, e_p);
  return l2_norm_eps(subtract(e_a, e_p));
}

/// max{0, ||e_a - e_p|| - ||e_a - e_n|| + alpha}
inline Var inter_consistency_loss(const Var& e_a, const Var& e_p, const Var& e_n, double alpha) {
  detail::require_same_dim(e_a, e_p);
  detail::require_same_dim(e_a, e_n);
  Var gap = subtract(l2_norm_eps(subtract(e_a, e_p)), l2_norm_eps(subtract(e_a, e_n)));
  return hinge_max0(add(gap, constant(Tensor::scalar(alpha))));
}

/// -log softmax(z)[label]
inline Var cross_entropy_loss(const Var& logits, int label) {
  const std::size_t classes = logits->value.size();
  if (label < 0 || static_cast<std::size_t>(label) >= classes)
    throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label) + " for " + std::to_string(classes) + " classes");
  Tensor onehot({classes});
  onehot[static_cast<std::size_t>(label)] = 1.0;
  return scalar_multiply(dot(softmax_log(logits), constant(std::move(onehot))), -1.0);
}

/// Per-instance memory for the exclusive (instance-discrimination) baseline.
/// Rows are constants in the graph; each slot accepts one write per epoch.
class MemoryBank {
 public:
  MemoryBank() = default;

  MemoryBank(const std::vector<TrackletId>& ids, std::size_t dim, double tau) : dim_(dim), tau_(tau) {
    if (!(tau > 0.0)) throw Error(ErrorCode::InvalidConfig, "tau must be > 0");
    for (TrackletId id : ids) {
      slot_[id] = rows_.size();
      rows_.emplace_back(std::nullopt);
      written_epoch_.push_back(-1);
    }
  }

  std::size_t size() const { return rows_.size(); }
  double tau() const { return tau_; }
  long epoch() const { return epoch_; }
  std::size_t rejected_updates() const { return rejected_; }

  bool initialized() const {
    for (const auto& r : rows_)
      if (!r) return false;
    return !rows_.empty();
  }

  bool initialized(TrackletId id) const { return rows_.at(slot(id)).has_value(); }

  const Tensor& read(TrackletId id) const {
    const auto& row = rows_.at(slot(id));
    if (!row) throw Error(ErrorCode::UninitializedBank, "slot " + std::to_string(id));
    return *row;
  }

  void begin_epoch() { ++epoch_; }

  /// Stores `embedding` in slot `id`. A second write in the same epoch is
  /// ignored and counted; returns whether the write happened.
  bool update(TrackletId id, const Tensor& embedding) {
    const std::size_t s = slot(id);
    if (embedding.size() != dim_) throw Error(ErrorCode::DimensionMismatch, "memory bank row size");
    if (!embedding.all_finite()) throw Error(ErrorCode::NonFiniteGradient, "non-finite embedding for memory bank");
    if (written_epoch_[s] == epoch_) {
      ++rejected_;
      return false;
    }
    rows_[s] = embedding;
    written_epoch_[s] = epoch_;
    return true;
  }

  /// All rows stacked as an (instances x dim) matrix in slot order, each row
  /// optionally scaled to unit length.
  Tensor matrix(bool unit_rows = false) const {
    if (!initialized()) throw Error(ErrorCode::UninitializedBank, "memory bank has empty slots");
    Tensor m({rows_.size(), dim_});
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const Tensor row = unit_rows ? kernels::l2_normalize(*rows_[i]) : *rows_[i];
      std::copy(row.values().begin(), row.values().end(), m.values().begin() + static_cast<std::ptrdiff_t>(i * dim_));
    }
    return m;
  }

  std::size_t slot(TrackletId id) const {
    auto it = slot_.find(id);
    if (it == slot_.end()) throw Error(ErrorCode::UninitializedBank, "no slot for tracklet " + std::to_string(id));
    return it->second;
  }

 private:
  std::size_t dim_ = 0;
  double tau_ = 0.1;
  long epoch_ = 0;
  std::size_t rejected_ = 0;
  std::map<TrackletId, std::size_t> slot_;
  std::vector<std::optional<Tensor>> rows_;
  std::vector<long> written_epoch_;
};

inline bool memory_update(MemoryBank& bank, TrackletId id, const Tensor& embedding) { return bank.update(id, embedding); }

/// -log P(j | X_j) with P(i | X) = softmax_i(v_i^T f(X) / tau). With
/// `cosine`, both v_i and f(X) are scaled to unit length first.
inline Var exclusive_baseline_loss(TrackletId id, const Var& embedding, const MemoryBank& bank, bool cosine = false) {
  const std::size_t j = bank.slot(id);
  if (!bank.initialized(id)) throw Error(ErrorCode::UninitializedBank, "slot " + std::to_string(id));
  Var f = cosine ? l2_normalize(embedding) : embedding;
  Var logits = scalar_multiply(matmul(constant(bank.matrix(cosine)), f), 1.0 / bank.tau());
  return cross_entropy_loss(logits, static_cast<int>(j));
}

struct LossSettings {
  LossVariant variant = LossVariant::Full;
  LossWeights weights;
  SamplerConfig sampler;
  bool cosine_exclusive = true;  // unit-normalize features inside the exclusive loss
};

struct JointLoss {
  Var total;
  double ce_labeled = 0.0;
  double ce_pseudo = 0.0;
  double intra = 0.0;
  double inter = 0.0;
  double exclusive = 0.0;
  std::size_t skipped_consistency = 0;  // tracklets too short for mini-tracklets
  std::size_t skipped_inter = 0;        // batch too small for the rank range
  std::vector<double> per_member;       // weighted contribution of each batch member
};

/// Joint objective over one batch:
///   sum_{D_l} CE + sum_{D_p} CE + lambda * sum_{batch} (L_intra + L_inter)
/// Consistency terms cover every batch member, labeled or not. With lambda == 0
/// or the ce-only variant no consistency graph is built and no randomness is
/// consumed, so such runs coincide exactly. The exclusive variant replaces the
/// consistency terms with lambda * sum_{batch} exclusive loss against `bank`.
inline JointLoss joint_loss(std::span<const TrackletId> batch, const Corpus& corpus,
                            const std::map<TrackletId, int>& pseudo_labels, const Model& model,
                            const LossSettings& settings, std::mt19937_64& rng, const MemoryBank* bank = nullptr) {
  JointLoss out;
  out.per_member.assign(batch.size(), 0.0);
  const double lambda = settings.weights.lambda;
  const LossVariant variant = settings.variant;

  std::vector<Var> embeddings;
  embeddings.reserve(batch.size());
  for (TrackletId id : batch) embeddings.push_back(embed_tracklet(model.encoder, corpus.get(id)));

  std::vector<Var> ce_labeled, ce_pseudo, consistency;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrackletId id = batch[i];
    std::optional<int> label;
    bool pseudo = false;
    if (auto it = corpus.labels.find(id); it != corpus.labels.end()) {
      label = it->second;
    } else if (auto jt = pseudo_labels.find(id); jt != pseudo_labels.end()) {
      label = jt->second;
      pseudo = true;
    }
    if (!label) continue;
    Var ce = cross_entropy_loss(classify(model.classifier, embeddings[i]), *label);
    out.per_member[i] += ce->value.item();
    (pseudo ? ce_pseudo : ce_labeled).push_back(ce);
    (pseudo ? out.ce_pseudo : out.ce_labeled) += ce->value.item();
  }

  const bool use_intra = variant == LossVariant::Full || variant == LossVariant::IntraOnly;
  const bool use_inter = variant == LossVariant::Full || variant == LossVariant::InterOnly;
  const bool active = lambda > 0.0 && variant != LossVariant::CeOnly;

  if (active && variant == LossVariant::Exclusive) {
    if (bank == nullptr) throw Error(ErrorCode::UninitializedBank, "exclusive variant needs a memory bank");
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Var term = exclusive_baseline_loss(batch[i], embeddings[i], *bank, settings.cosine_exclusive);
      out.exclusive += term->value.item();
      out.per_member[i] += lambda * term->value.item();
      consistency.push_back(term);
    }
  } else if (active) {
    std::vector<NegativeCandidate> candidates;
    candidates.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) candidates.push_back({batch[i], embeddings[i]->value.data()});

    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Tracklet& tracklet = corpus.get(batch[i]);
      if (tracklet.length() < 2 || mini_tracklet_layout(tracklet.length(), settings.sampler.rho).chunks < 2) {
        ++out.skipped_consistency;
        continue;
      }
      const MiniTrackletPair mini = sample_mini_tracklets(tracklet, settings.sampler, rng);
      Var e_a = embed_tracklet(model.encoder, mini.anchor);
      Var e_p = embed_tracklet(model.encoder, mini.positive);
      if (use_intra) {
        Var term = intra_consistency_loss(e_a, e_p);
        out.intra += term->value.item();
        out.per_member[i] += lambda * term->value.item();
        consistency.push_back(term);
      }
      if (use_inter) {
        if (batch.size() - 1 < settings.sampler.rank) {
          ++out.skipped_inter;
          continue;
        }
        const TrackletId neg = sample_negative(batch[i], e_a->value.data(), candidates, settings.sampler, rng);
        std::size_t k = 0;
        while (batch[k] != neg) ++k;
        Var term = inter_consistency_loss(e_a, e_p, embeddings[k], settings.weights.alpha);
        out.inter += term->value.item();
        out.per_member[i] += lambda * term->value.item();
        consistency.push_back(term);
      }
    }
  }

  Var total = add(sum_scalars(ce_labeled), sum_scalars(ce_pseudo));
  if (!consistency.empty()) total = add(total, scalar_multiply(sum_scalars(consistency), lambda));
  out.total = total;
  return out;
}

}  // namespace tcpl
