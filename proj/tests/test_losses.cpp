#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "tcpl/selftrain.hpp"

using namespace tcpl;
using fixture::throws_code;

namespace {

Var vec(std::vector<double> v) { return parameter(Tensor::vector(std::move(v))); }

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

Tensor diff(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

}  // namespace

TEST(Intra, IdenticalEmbeddings) { EXPECT_NEAR(intra_consistency_loss(vec({1, 2}), vec({1, 2}))->value.item(), 1e-6, 1e-15); }

TEST(Intra, Arithmetic) { EXPECT_NEAR(intra_consistency_loss(vec({0, 0}), vec({3, 4}))->value.item(), 5.0, 1e-12); }

TEST(Intra, GradientIsUnitDifference) {
  std::mt19937_64 rng(1);
  const Var a = parameter(fixture::random_vector(rng, 6));
  const Var p = parameter(fixture::random_vector(rng, 6));
  backward(intra_consistency_loss(a, p));
  const Tensor d = diff(a->value, p->value);
  const double n = norm(d);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(a->grad[i], d[i] / n, 1e-6);
    EXPECT_NEAR(p->grad[i], -d[i] / n, 1e-6);
  }
  const double err = check_gradients([](std::span<const Var> x) { return intra_consistency_loss(x[0], x[1]); },
                                     {a->value, p->value}, 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(Inter, HingeInactive) {
  EXPECT_EQ(inter_consistency_loss(vec({0, 0}), vec({1, 0}), vec({2, 0}), 0.3)->value.item(), 0.0);
}

TEST(Inter, Arithmetic) {
  EXPECT_NEAR(inter_consistency_loss(vec({0, 0}), vec({2, 0}), vec({1, 0}), 0.3)->value.item(), 1.3, 1e-12);
}

TEST(Inter, GradientMatchesFiniteDifferencesOnFixedTriple) {
  std::mt19937_64 rng(2);
  const Tensor a = fixture::random_vector(rng, 5), p = fixture::random_vector(rng, 5);
  // Negative closer than the positive so the hinge is active.
  Tensor n = a;
  for (std::size_t i = 0; i < 5; ++i) n[i] += 0.1 * (p[i] - a[i]) + 0.05;
  const double err = check_gradients(
      [](std::span<const Var> x) { return inter_consistency_loss(x[0], x[1], x[2], 0.3); }, {a, p, n}, 1e-5);
  EXPECT_LT(err, 1e-4);
}

TEST(Inter, ZeroGradientInHingeRegion) {
  std::mt19937_64 rng(3);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const Var a = parameter(fixture::random_vector(rng, 4)), p = parameter(fixture::random_vector(rng, 4)),
              n = parameter(fixture::random_vector(rng, 4, 3.0));
    const double ap = norm(diff(a->value, p->value)), an = norm(diff(a->value, n->value));
    const Var loss = inter_consistency_loss(a, p, n, 0.3);
    EXPECT_GE(loss->value.item(), 0.0);
    EXPECT_LE(loss->value.item(), ap + 0.3 + 1e-12);
    if (an < ap + 0.3 + 1e-6) continue;
    ++checked;
    EXPECT_EQ(loss->value.item(), 0.0);
    backward(loss);
    for (const Var& v : {a, p, n})
      for (double g : v->grad.values()) EXPECT_EQ(g, 0.0);
  }
  EXPECT_GT(checked, 50);
}

TEST(Consistency, TranslationInvariant) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = fixture::random_vector(rng, 4), p = fixture::random_vector(rng, 4), n = fixture::random_vector(rng, 4);
    const Tensor shift = fixture::random_vector(rng, 4, 10.0);
    const double intra = intra_consistency_loss(constant(a), constant(p))->value.item();
    const double inter = inter_consistency_loss(constant(a), constant(p), constant(n), 0.3)->value.item();
    for (Tensor* t : {&a, &p, &n})
      for (std::size_t i = 0; i < 4; ++i) (*t)[i] += shift[i];
    EXPECT_NEAR(intra_consistency_loss(constant(a), constant(p))->value.item(), intra, 1e-9);
    EXPECT_NEAR(inter_consistency_loss(constant(a), constant(p), constant(n), 0.3)->value.item(), inter, 1e-9);
  }
}

TEST(Consistency, DimensionMismatch) {
  EXPECT_TRUE(throws_code(ErrorCode::DimensionMismatch, [] { intra_consistency_loss(vec({1, 2}), vec({1})); }));
  EXPECT_TRUE(throws_code(ErrorCode::DimensionMismatch,
                          [] { inter_consistency_loss(vec({1, 2}), vec({1, 2}), vec({1}), 0.3); }));
}

TEST(Consistency, IntraDescentOnLinearEncoderIsMonotone) {
  std::mt19937_64 rng(5);
  const Tensor xa = fixture::random_vector(rng, 3, 0.5), xp = fixture::random_vector(rng, 3, 0.5);
  const Var w = parameter(fixture::random_matrix(rng, 3, 4, 2.0));
  OptimizerState opt{0.01, 0.0, 0.0, {}};
  double previous = intra_consistency_loss(matmul(constant(xa), w), matmul(constant(xp), w))->value.item();
  for (int step = 0; step < 100; ++step) {
    const Var loss = intra_consistency_loss(matmul(constant(xa), w), matmul(constant(xp), w));
    backward(loss);
    sgd_step(std::array{w}, opt);
    const double now = intra_consistency_loss(matmul(constant(xa), w), matmul(constant(xp), w))->value.item();
    EXPECT_LT(now, previous) << "step " << step;
    previous = now;
  }
}

TEST(CrossEntropy, UniformLogits) { EXPECT_NEAR(cross_entropy_loss(vec({0, 0}), 0)->value.item(), std::log(2.0), 1e-12); }

TEST(CrossEntropy, SaturatedIsFinite) {
  const double v = cross_entropy_loss(vec({10, -10}), 0)->value.item();
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, std::log1p(std::exp(-20.0)), 1e-15);
  EXPECT_NEAR(v, 2.06e-9, 0.01e-9);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  std::mt19937_64 rng(6);
  const Var z = parameter(fixture::random_vector(rng, 5, 2.0));
  backward(cross_entropy_loss(z, 3));
  double s = 0.0;
  for (double v : z->value.values()) s += std::exp(v);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(z->grad[k], std::exp(z->value[k]) / s - (k == 3 ? 1.0 : 0.0), 1e-8);
  const double err =
      check_gradients([](std::span<const Var> x) { return cross_entropy_loss(x[0], 3); }, {z->value}, 1e-5);
  EXPECT_LT(err, 1e-5);
}

TEST(CrossEntropy, LabelOutOfRange) {
  EXPECT_TRUE(throws_code(ErrorCode::LabelOutOfRange, [] { cross_entropy_loss(vec({0, 0}), 2); }));
  EXPECT_TRUE(throws_code(ErrorCode::LabelOutOfRange, [] { cross_entropy_loss(vec({0, 0}), -1); }));
}

namespace {

struct JointFixture {
  Corpus corpus = fixture::small_corpus(3, 3, 6, 2);
  Model model = init_model(4, {6, 8, 5}, corpus.m_l);
  std::vector<TrackletId> batch;

  JointFixture() {
    for (const auto& t : corpus.tracklets) batch.push_back(t.id);
  }

  LossSettings settings(LossVariant v, double lambda, std::size_t rank = 1) const {
    LossSettings s;
    s.variant = v;
    s.weights.lambda = lambda;
    s.sampler.rank = rank;
    return s;
  }
};

}  // namespace

TEST(JointLoss, LambdaZeroIsPureCrossEntropy) {
  JointFixture f;
  std::map<TrackletId, int> pseudo{{f.corpus.unlabeled_ids[0], 1}};
  std::mt19937_64 rng(7);
  const auto before = rng;
  const auto jl = joint_loss(f.batch, f.corpus, pseudo, f.model, f.settings(LossVariant::Full, 0.0), rng);
  EXPECT_EQ(rng, before);
  double expected_labeled = 0.0, expected_pseudo = 0.0;
  for (TrackletId id : f.batch) {
    const Var e = embed_tracklet(f.model.encoder, f.corpus.get(id));
    if (f.corpus.is_labeled(id))
      expected_labeled += cross_entropy_loss(classify(f.model.classifier, e), f.corpus.labels.at(id))->value.item();
    else if (pseudo.contains(id))
      expected_pseudo += cross_entropy_loss(classify(f.model.classifier, e), pseudo.at(id))->value.item();
  }
  EXPECT_NEAR(jl.ce_labeled, expected_labeled, 1e-12);
  EXPECT_NEAR(jl.ce_pseudo, expected_pseudo, 1e-12);
  EXPECT_NEAR(jl.total->value.item(), expected_labeled + expected_pseudo, 1e-12);
  EXPECT_EQ(jl.intra, 0.0);
  EXPECT_EQ(jl.inter, 0.0);

  std::mt19937_64 rng2(7);
  const auto ce = joint_loss(f.batch, f.corpus, pseudo, f.model, f.settings(LossVariant::CeOnly, 1.0), rng2);
  EXPECT_EQ(ce.total->value.item(), jl.total->value.item());
}

TEST(JointLoss, UnlabeledBatchIsPureConsistency) {
  JointFixture f;
  std::vector<TrackletId> batch(f.corpus.unlabeled_ids.begin(), f.corpus.unlabeled_ids.end());
  std::mt19937_64 rng(8);
  const auto jl = joint_loss(batch, f.corpus, {}, f.model, f.settings(LossVariant::Full, 1.0), rng);
  EXPECT_EQ(jl.ce_labeled, 0.0);
  EXPECT_EQ(jl.ce_pseudo, 0.0);
  EXPECT_GT(jl.intra, 0.0);
  EXPECT_NEAR(jl.total->value.item(), jl.intra + jl.inter, 1e-12);
}

TEST(JointLoss, AdditiveOverMembers) {
  JointFixture f;
  for (auto v : {LossVariant::Full, LossVariant::IntraOnly, LossVariant::InterOnly, LossVariant::CeOnly}) {
    std::mt19937_64 rng(9);
    const auto jl = joint_loss(f.batch, f.corpus, {}, f.model, f.settings(v, 0.7), rng);
    double s = 0.0;
    for (double m : jl.per_member) s += m;
    EXPECT_NEAR(jl.total->value.item(), s, 1e-9);
  }
}

TEST(JointLoss, GradientMatchesFiniteDifferences) {
  JointFixture f;
  const std::vector<TrackletId> batch(f.batch.begin(), f.batch.begin() + 4);
  const auto params = all_parameters(f.model);
  const auto settings = f.settings(LossVariant::Full, 1.0);
  const double err = check_gradients(
      [&] {
        std::mt19937_64 rng(10);
        return joint_loss(batch, f.corpus, {}, f.model, settings, rng).total;
      },
      params, 1e-5);
  EXPECT_LT(err, 1e-4);
}

TEST(JointLoss, ShortTrackletsSkipConsistency) {
  JointFixture f;
  Corpus c = f.corpus;
  c.tracklets[0].frames = Tensor({1, 6}, 0.5);
  c.rebuild_index();
  std::mt19937_64 rng(11);
  const auto jl = joint_loss(f.batch, c, {}, f.model, f.settings(LossVariant::Full, 1.0), rng);
  EXPECT_EQ(jl.skipped_consistency, 1u);
}

TEST(Exclusive, ClosedFormTwoInstances) {
  MemoryBank bank({1, 2}, 2, 1.0);
  bank.update(1, Tensor::vector({1, 0}));
  bank.update(2, Tensor::vector({0, 1}));
  const double v = exclusive_baseline_loss(1, constant(Tensor::vector({1, 0})), bank)->value.item();
  EXPECT_NEAR(v, -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-12);
  EXPECT_NEAR(v, 0.3133, 1e-4);
}

TEST(Exclusive, SingleInstanceIsZero) {
  MemoryBank bank({5}, 3, 0.1);
  bank.update(5, Tensor::vector({0.3, -2, 1}));
  EXPECT_EQ(exclusive_baseline_loss(5, constant(Tensor::vector({4, 1, -1})), bank)->value.item(), 0.0);
}

TEST(Exclusive, OneSgdStepDecreasesLoss) {
  std::mt19937_64 rng(12);
  MemoryBank bank({0, 1, 2}, 3, 0.5);
  for (TrackletId id : {0, 1, 2}) bank.update(id, fixture::random_vector(rng, 3));
  for (bool cosine : {false, true}) {
    const Var f = parameter(fixture::random_vector(rng, 3));
    const double before = exclusive_baseline_loss(1, f, bank, cosine)->value.item();
    backward(exclusive_baseline_loss(1, f, bank, cosine));
    OptimizerState opt{0.05, 0.0, 0.0, {}};
    sgd_step(std::array{f}, opt);
    EXPECT_LT(exclusive_baseline_loss(1, f, bank, cosine)->value.item(), before);
  }
}

TEST(Exclusive, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  MemoryBank bank({0, 1, 2, 3}, 4, 0.1);
  for (TrackletId id : {0, 1, 2, 3}) bank.update(id, fixture::random_vector(rng, 4));
  for (bool cosine : {false, true}) {
    const double err = check_gradients(
        [&](std::span<const Var> x) { return exclusive_baseline_loss(2, x[0], bank, cosine); },
        {fixture::random_vector(rng, 4, 0.3)}, 1e-5);
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Exclusive, UninitializedBank) {
  MemoryBank bank({0, 1}, 2, 0.1);
  bank.update(0, Tensor::vector({1, 0}));
  EXPECT_TRUE(throws_code(ErrorCode::UninitializedBank, [&] { exclusive_baseline_loss(1, vec({1, 0}), bank); }));
  EXPECT_TRUE(throws_code(ErrorCode::UninitializedBank, [&] { exclusive_baseline_loss(0, vec({1, 0}), bank); }));
  EXPECT_TRUE(throws_code(ErrorCode::UninitializedBank, [&] { bank.read(1); }));
}

TEST(MemoryBank, UpdateThenRead) {
  MemoryBank bank({3}, 2, 0.1);
  EXPECT_TRUE(memory_update(bank, 3, Tensor::vector({0.5, -1.25})));
  EXPECT_EQ(bank.read(3), Tensor::vector({0.5, -1.25}));
}

TEST(MemoryBank, SecondWriteInEpochRejected) {
  MemoryBank bank({3}, 2, 0.1);
  bank.begin_epoch();
  EXPECT_TRUE(memory_update(bank, 3, Tensor::vector({1, 1})));
  EXPECT_FALSE(memory_update(bank, 3, Tensor::vector({2, 2})));
  EXPECT_EQ(bank.rejected_updates(), 1u);
  EXPECT_EQ(bank.read(3), Tensor::vector({1, 1}));
  bank.begin_epoch();
  EXPECT_TRUE(memory_update(bank, 3, Tensor::vector({2, 2})));
  EXPECT_EQ(bank.read(3), Tensor::vector({2, 2}));
}

// Replays one epoch step by step, recording each member's embedding at the
// moment its batch is processed, and compares with the bank train_epoch kept.
TEST(MemoryBank, EpochReplayOracle) {
  const Corpus corpus = fixture::small_corpus(14, 6, 6, 3);
  for (auto variant : {LossVariant::Full, LossVariant::Exclusive}) {
    LossSettings settings;
    settings.variant = variant;
    settings.sampler.batch_size = 5;
    settings.sampler.rank = 1;

    Model trained = init_model(15, {6, 8, 4}, corpus.m_l);
    Model replay = clone_model(trained);
    MemoryBank bank = make_memory_bank(trained.encoder, corpus, 0.1);
    MemoryBank replay_bank = bank;
    OptimizerState opt{0.01, 0.5, 0.0005, {}}, replay_opt = opt;
    std::mt19937_64 rng(16), replay_rng(16);

    train_epoch(trained, corpus, {}, settings, opt, rng, &bank);

    std::map<TrackletId, Tensor> recorded;
    replay_bank.begin_epoch();
    const auto params = all_parameters(replay);
    for (const auto& batch : sample_epoch_batches(corpus, settings.sampler.batch_size, replay_rng)) {
      JointLoss jl = joint_loss(batch, corpus, {}, replay, settings, replay_rng, &replay_bank);
      for (TrackletId id : batch) recorded.emplace(id, embed_value(replay.encoder, corpus.get(id).frames));
      backward(jl.total);
      sgd_step(params, replay_opt);
      for (TrackletId id : batch) replay_bank.update(id, recorded.at(id));
    }
    ASSERT_EQ(recorded.size(), corpus.tracklets.size());
    for (const auto& [id, emb] : recorded) EXPECT_EQ(bank.read(id), emb) << "tracklet " << id;
    EXPECT_EQ(bank.rejected_updates(), 0u);
  }
}
