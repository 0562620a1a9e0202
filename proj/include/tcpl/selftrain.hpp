#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tcpl/evaluation.hpp"
#include "tcpl/losses.hpp"
#include "tcpl/model.hpp"
#include "tcpl/optimizer.hpp"
#include "tcpl/pseudo_label.hpp"
#include "tcpl/sampling.hpp"

namespace tcpl {

// ---------------------------------------------------------------------------
// Pseudo-label assignment and progressive selection
// ---------------------------------------------------------------------------

struct LabeledPoint {
  TrackletId id;
  int label;
  std::span<const double> embedding;
};

struct UnlabeledPoint {
  TrackletId id;
  std::span<const double> embedding;
};

/// Nearest labeled neighbour for every unlabeled point; ties go to the smaller
/// labeled tracklet id.
inline std::vector<PseudoLabel> assign_nearest_labels(std::span<const LabeledPoint> labeled,
                                                      std::span<const UnlabeledPoint> unlabeled) {
  if (labeled.empty()) throw Error(ErrorCode::EmptyLabeledSet, "no labeled tracklets");
  std::vector<const LabeledPoint*> order;
  for (const auto& l : labeled) order.push_back(&l);
  std::sort(order.begin(), order.end(), [](const LabeledPoint* a, const LabeledPoint* b) { return a->id < b->id; });

  std::vector<PseudoLabel> out;
  out.reserve(unlabeled.size());
  for (const auto& u : unlabeled) {
    const LabeledPoint* best = nullptr;
    double best_d2 = 0.0;
    for (const LabeledPoint* l : order) {
      const double d2 = squared_distance(u.embedding, l->embedding);
      if (best == nullptr || d2 < best_d2) {
        best = l;
        best_d2 = d2;
      }
    }
    out.push_back({u.id, best->label, std::sqrt(best_d2)});
  }
  return out;
}

/// Pseudo-labels for all of D_u (corpus order) from full-tracklet embeddings.
inline std::vector<PseudoLabel> assign_pseudo_labels(const EncoderParams& enc, const Corpus& corpus) {
  if (corpus.labels.empty()) throw Error(ErrorCode::EmptyLabeledSet, "corpus has no labeled tracklets");
  std::vector<Tensor> labeled_emb, unlabeled_emb;
  std::vector<LabeledPoint> labeled;
  std::vector<UnlabeledPoint> unlabeled;
  labeled_emb.reserve(corpus.labels.size());
  unlabeled_emb.reserve(corpus.unlabeled_ids.size());
  for (const auto& [id, label] : corpus.labels) labeled_emb.push_back(embed_value(enc, corpus.get(id).frames));
  for (TrackletId id : corpus.unlabeled_ids) unlabeled_emb.push_back(embed_value(enc, corpus.get(id).frames));
  std::size_t i = 0;
  for (const auto& [id, label] : corpus.labels) labeled.push_back({id, label, labeled_emb[i++].data()});
  for (std::size_t j = 0; j < corpus.unlabeled_ids.size(); ++j)
    unlabeled.push_back({corpus.unlabeled_ids[j], unlabeled_emb[j].data()});
  return assign_nearest_labels(labeled, unlabeled);
}

struct ScheduleState {
  double p = 0.1;
  std::size_t t = 0;
  std::size_t n_t = 0;
  std::size_t n_u = 0;
};

inline std::size_t total_steps(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidConfig, "enlarging factor p must be in (0, 1]");
  return robust_floor(1.0 / p) + 1;
}

/// Advances t and sets n_t = min(n_u, floor(t * p * n_u)), evaluated in closed
/// form so repeated steps do not accumulate rounding.
inline ScheduleState next_sampling_size(ScheduleState state) {
  ++state.t;
  const double target = static_cast<double>(state.t) * state.p * static_cast<double>(state.n_u);
  state.n_t = std::min(state.n_u, robust_floor(target));
  return state;
}

/// The n_t most confident pseudo-labels, ordered by (distance, tracklet id).
inline std::vector<PseudoLabel> select_confident(std::vector<PseudoLabel> pseudo, std::size_t n_t) {
  if (n_t > pseudo.size())
    throw Error(ErrorCode::InvalidConfig, "cannot select " + std::to_string(n_t) + " of " + std::to_string(pseudo.size()));
  std::stable_sort(pseudo.begin(), pseudo.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
    return a.confidence != b.confidence ? a.confidence < b.confidence : a.tracklet_id < b.tracklet_id;
  });
  pseudo.resize(n_t);
  return pseudo;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  LossSettings loss;
  double tau = 0.1;
  double learning_rate = 0.01;
  double momentum = 0.5;
  double weight_decay = 0.0005;
  std::size_t epochs_per_step = 10;
  double final_phase_fraction = 0.2;  // trailing share of each step's epochs run at lr/10 with lambda = 0
  double p = 0.1;
  std::size_t hidden = 64;
  std::size_t embedding = 32;
  bool normalize_embeddings = false;
  bool cross_camera_filter = true;
  std::uint64_t seed = 1;
  std::optional<std::filesystem::path> checkpoint_dir;

  void validate() const {
    loss.weights.validate();
    loss.sampler.validate();
    total_steps(p);
    if (!(tau > 0.0)) throw Error(ErrorCode::InvalidConfig, "tau must be > 0");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::InvalidConfig, "momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw Error(ErrorCode::InvalidConfig, "weight decay must be >= 0");
    if (epochs_per_step < 1) throw Error(ErrorCode::InvalidConfig, "epochs per step must be >= 1");
    if (!(final_phase_fraction >= 0.0 && final_phase_fraction < 1.0))
      throw Error(ErrorCode::InvalidConfig, "final phase fraction must be in [0, 1)");
    if (hidden < 1 || embedding < 1) throw Error(ErrorCode::InvalidConfig, "model dims must be >= 1");
  }
};

struct EpochStats {
  double ce_labeled = 0.0;
  double ce_pseudo = 0.0;
  double intra = 0.0;
  double inter = 0.0;
  double exclusive = 0.0;
  double total = 0.0;
  std::size_t batches = 0;
  std::size_t skipped_consistency = 0;
  std::size_t skipped_inter = 0;
  std::vector<double> batch_totals;
  std::vector<double> batch_exclusive;
  std::vector<std::size_t> batch_sizes;
};

inline std::vector<Var> all_parameters(const Model& m) {
  auto params = m.encoder.parameters();
  for (const Var& v : m.classifier.parameters()) params.push_back(v);
  return params;
}

/// Fills every memory-bank slot with the current full-tracklet embedding.
inline MemoryBank make_memory_bank(const EncoderParams& enc, const Corpus& corpus, double tau) {
  std::vector<TrackletId> ids;
  for (const auto& t : corpus.tracklets) ids.push_back(t.id);
  MemoryBank bank(ids, enc.dims.embedding, tau);
  for (const auto& t : corpus.tracklets) bank.update(t.id, embed_value(enc, t.frames));
  return bank;
}

/// One pass over a fresh permutation of D. When `bank` is given, each
/// member's slot is overwritten with the embedding it had in its own iteration.
inline EpochStats train_epoch(Model& model, const Corpus& corpus, const std::map<TrackletId, int>& pseudo_labels,
                              const LossSettings& settings, OptimizerState& optimizer, std::mt19937_64& rng,
                              MemoryBank* bank = nullptr) {
  EpochStats stats;
  const auto params = all_parameters(model);
  if (bank) bank->begin_epoch();
  for (const auto& batch : sample_epoch_batches(corpus, settings.sampler.batch_size, rng)) {
    JointLoss jl = joint_loss(batch, corpus, pseudo_labels, model, settings, rng, bank);
    const double value = jl.total->value.item();
    if (!std::isfinite(value)) throw Error(ErrorCode::NonFiniteLoss, "batch " + std::to_string(stats.batches));
    std::vector<Tensor> member_embeddings;
    if (bank)
      for (TrackletId id : batch) member_embeddings.push_back(embed_value(model.encoder, corpus.get(id).frames));
    backward(jl.total);
    sgd_step(params, optimizer);
    if (bank)
      for (std::size_t i = 0; i < batch.size(); ++i) memory_update(*bank, batch[i], member_embeddings[i]);

    stats.ce_labeled += jl.ce_labeled;
    stats.ce_pseudo += jl.ce_pseudo;
    stats.intra += jl.intra;
    stats.inter += jl.inter;
    stats.exclusive += jl.exclusive;
    stats.total += value;
    stats.skipped_consistency += jl.skipped_consistency;
    stats.skipped_inter += jl.skipped_inter;
    stats.batch_totals.push_back(value);
    stats.batch_exclusive.push_back(jl.exclusive);
    stats.batch_sizes.push_back(batch.size());
    ++stats.batches;
  }
  return stats;
}

/// One row of the per-step metrics table. Loss columns are per-epoch means
/// over the step's epochs.
struct StepMetrics {
  std::size_t step = 0;  // 0-based row index
  std::size_t t = 0;     // schedule counter after the step
  std::size_t n_t = 0;
  std::size_t churn = 0; // pseudo-labels that changed since the previous step
  std::optional<double> label_acc_selected;
  std::optional<double> label_acc_unlabeled;
  double ce_labeled = 0.0;
  double ce_pseudo = 0.0;
  double intra = 0.0;
  double inter = 0.0;
  double total = 0.0;
  EvalReport eval;
};

struct TcplResult {
  Model best_model;
  std::size_t best_step = 0;
  std::vector<StepMetrics> steps;
  std::vector<PseudoLabel> final_selection;
  std::size_t skipped_consistency = 0;
  std::size_t rejected_bank_updates = 0;

  const StepMetrics& best() const { return steps.at(best_step); }
  /// Label accuracy over all of D_u after the last step.
  std::optional<double> final_label_accuracy() const { return steps.back().label_acc_unlabeled; }
};

using StepCallback = std::function<void(const StepMetrics&)>;
using EpochCallback = std::function<void(std::size_t step, std::size_t epoch, const EpochStats&)>;

inline std::uint64_t training_stream_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ULL; }

/// Alternates representation learning and pseudo-label assignment for
/// floor(1/p)+1 steps, then returns the step model with the best validation
/// Rank-1 (ties: mAP, then the earlier step).
inline TcplResult run_tcpl(const Corpus& corpus, const EvalSplit& validation, const TrainConfig& cfg,
                           const StepCallback& on_step = {}, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (corpus.tracklets.empty()) throw Error(ErrorCode::InvalidConfig, "empty corpus");
  if (corpus.labels.empty()) throw Error(ErrorCode::EmptyLabeledSet, "corpus has no labeled tracklets");

  const ModelDims dims{corpus.tracklets.front().feature_dim(), cfg.hidden, cfg.embedding, cfg.normalize_embeddings};
  Model model = init_model(cfg.seed, dims, corpus.m_l);
  std::mt19937_64 rng(training_stream_seed(cfg.seed));

  std::optional<MemoryBank> bank;
  if (cfg.loss.variant == LossVariant::Exclusive) bank = make_memory_bank(model.encoder, corpus, cfg.tau);

  const std::size_t steps = total_steps(cfg.p);
  const std::size_t final_epochs = robust_floor(cfg.final_phase_fraction * static_cast<double>(cfg.epochs_per_step));
  ScheduleState schedule{cfg.p, 0, 0, corpus.m_u};
  std::map<TrackletId, int> selected;
  std::vector<PseudoLabel> previous;

  TcplResult result;
  std::optional<EvalReport> best_eval;

  for (std::size_t step = 0; step < steps; ++step) {
    model.classifier = init_classifier(rng, dims.embedding, corpus.m_l);
    OptimizerState optimizer{cfg.learning_rate, cfg.momentum, cfg.weight_decay, {}};

    StepMetrics row;
    row.step = step;
    for (std::size_t epoch = 0; epoch < cfg.epochs_per_step; ++epoch) {
      LossSettings settings = cfg.loss;
      optimizer.learning_rate = cfg.learning_rate;
      if (epoch >= cfg.epochs_per_step - final_epochs) {
        optimizer.learning_rate = cfg.learning_rate / 10.0;
        settings.weights.lambda = 0.0;
      }
      EpochStats stats;
      try {
        stats = train_epoch(model, corpus, selected, settings, optimizer, rng, bank ? &*bank : nullptr);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteLoss && e.code() != ErrorCode::NonFiniteGradient) throw;
        throw Error(e.code(), "step " + std::to_string(step + 1) + " epoch " + std::to_string(epoch + 1) + ": " + e.detail());
      }
      if (on_epoch) on_epoch(step, epoch, stats);
      row.ce_labeled += stats.ce_labeled;
      row.ce_pseudo += stats.ce_pseudo;
      row.intra += stats.intra;
      row.inter += stats.inter + stats.exclusive;
      row.total += stats.total;
      result.skipped_consistency += stats.skipped_consistency;
    }
    const double epochs = static_cast<double>(cfg.epochs_per_step);
    row.ce_labeled /= epochs;
    row.ce_pseudo /= epochs;
    row.intra /= epochs;
    row.inter /= epochs;
    row.total /= epochs;

    auto pseudo = assign_pseudo_labels(model.encoder, corpus);
    if (!previous.empty())
      for (std::size_t i = 0; i < pseudo.size(); ++i)
        if (pseudo[i].assigned_class != previous[i].assigned_class) ++row.churn;
    previous = pseudo;

    schedule = next_sampling_size(schedule);
    auto chosen = select_confident(pseudo, schedule.n_t);
    selected.clear();
    for (const auto& pl : chosen) selected[pl.tracklet_id] = pl.assigned_class;

    row.t = schedule.t;
    row.n_t = schedule.n_t;
    row.label_acc_selected = label_estimation_accuracy(chosen, corpus);
    row.label_acc_unlabeled = label_estimation_accuracy(pseudo, corpus);
    row.eval = evaluate_split(model.encoder, validation, cfg.cross_camera_filter);

    if (cfg.checkpoint_dir) {
      std::filesystem::create_directories(*cfg.checkpoint_dir);
      char name[32];
      std::snprintf(name, sizeof name, "step_%03zu.ckpt", step + 1);
      save_checkpoint(*cfg.checkpoint_dir / name, Checkpoint{model, rng_state_string(rng)});
    }

    const bool better = !best_eval || row.eval.rank1 > best_eval->rank1 ||
                        (row.eval.rank1 == best_eval->rank1 && row.eval.map > best_eval->map);
    if (better) {
      best_eval = row.eval;
      result.best_step = step;
      result.best_model = clone_model(model);
    }
    result.steps.push_back(row);
    result.final_selection = std::move(chosen);
    if (on_step) on_step(row);
  }
  if (bank) result.rejected_bank_updates = bank->rejected_updates();
  return result;
}

}  // namespace tcpl
