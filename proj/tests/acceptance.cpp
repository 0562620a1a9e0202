// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "tcpl/tcpl.hpp"

using namespace tcpl;

namespace {

int failures = 0;

void report(int n, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", n, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    GeneratorConfig g;
    g.identities = 2 + static_cast<int>(rng() % 2);
    g.eval_identities = 1;
    g.cameras = 2;
    g.tracklets_per_camera = 1 + static_cast<int>(rng() % 2);
    g.min_frames = 4;
    g.max_frames = 9;
    g.feature_dim = 2 + static_cast<int>(rng() % 7);
    g.drift_rank = g.feature_dim / 2;
    const Corpus corpus = one_shot_split(generate_synthetic_corpus(g, rng()).train, {}, rng());

    const ModelDims dims{static_cast<std::size_t>(g.feature_dim), 2 + rng() % 7, 2 + rng() % 7, false};
    const Model model = init_model(rng(), dims, corpus.m_l);

    std::vector<TrackletId> ids;
    for (const auto& t : corpus.tracklets) ids.push_back(t.id);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(std::min<std::size_t>(ids.size(), 3 + rng() % 4));

    std::map<TrackletId, int> pseudo;
    for (TrackletId id : corpus.unlabeled_ids)
      if (rng() % 2) pseudo[id] = static_cast<int>(rng() % corpus.m_l);

    LossSettings settings;
    settings.weights.lambda = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    settings.weights.alpha = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
    settings.sampler.rho = trial % 2 ? 0.25 : 0.5;
    settings.sampler.rank = 1 + rng() % (ids.size() - 1);
    const std::uint64_t stream = rng();

    const double err = check_gradients(
        [&] {
          std::mt19937_64 r(stream);
          return joint_loss(ids, corpus, pseudo, model, settings, r).total;
        },
        all_parameters(model), 1e-5);
    worst = std::max(worst, err);
  }
  const double elapsed = seconds_since(t0);
  report(1, worst < 1e-4 && elapsed < 30.0,
         fmt("joint-loss gradient check, 20 configurations: max rel err %.3g (< 1e-4), %.2fs (< 30s)", worst, elapsed));
}

// ---------------------------------------------------------------------------

void criterion2() {
  std::mt19937_64 rng(7);
  bool disjoint = true;
  std::uniform_int_distribution<std::size_t> len(2, 60);
  std::uniform_real_distribution<double> rho(0.02, 0.5);
  for (int trial = 0; trial < 100000 && disjoint; ++trial) {
    SamplerConfig cfg;
    cfg.rho = rho(rng);
    const std::size_t n = len(rng);
    if (mini_tracklet_layout(n, cfg.rho).chunks < 2) {
      --trial;
      continue;
    }
    Tensor f({n, 1});
    for (std::size_t i = 0; i < n; ++i) f[i] = static_cast<double>(i);
    const auto pair = sample_mini_tracklets(Tracklet{0, 1, 0, f}, cfg, rng);
    for (std::size_t a = 0; a < pair.anchor.length(); ++a)
      for (std::size_t b = 0; b < pair.positive.length(); ++b)
        if (pair.anchor.frames[a] == pair.positive.frames[b]) disjoint = false;
    if (pair.anchor.length() != pair.positive.length()) disjoint = false;
  }

  // Chunk pairs: n = 10, rho = 0.2 gives 5 chunks and 20 ordered pairs.
  const int draws = 10000;
  std::map<std::pair<std::size_t, std::size_t>, int> pairs;
  Tensor ten({10, 1});
  for (int i = 0; i < draws; ++i) {
    const auto p = sample_mini_tracklets(Tracklet{0, 1, 0, ten}, {}, rng);
    pairs[{p.anchor_chunk, p.positive_chunk}]++;
  }
  double pair_dev = pairs.size() == 20 ? 0.0 : 1.0;
  for (const auto& [k, c] : pairs) pair_dev = std::max(pair_dev, std::abs(c / double(draws) - 1.0 / 20.0));

  // Rank range: r = 3 among 10 candidates gives ranks 3..6.
  std::vector<std::vector<double>> emb;
  std::vector<NegativeCandidate> cands;
  for (int i = 0; i <= 10; ++i) emb.push_back({static_cast<double>(i)});
  for (int i = 0; i <= 10; ++i) cands.push_back({i, emb[static_cast<std::size_t>(i)]});
  SamplerConfig cfg;
  cfg.rank = 3;
  std::map<TrackletId, int> ranks;
  for (int i = 0; i < draws; ++i) ranks[sample_negative(0, emb[0], cands, cfg, rng)]++;
  double rank_dev = ranks.size() == 4 ? 0.0 : 1.0;
  for (TrackletId id : {3, 4, 5, 6}) rank_dev = std::max(rank_dev, std::abs(ranks[id] / double(draws) - 0.25));

  report(2, disjoint && pair_dev <= 0.02 && rank_dev <= 0.02,
         fmt("mini-tracklets disjoint in 1e5 trials: %s; chunk-pair max dev %.4f, rank-range max dev %.4f (<= 0.02)",
             disjoint ? "yes" : "no", pair_dev, rank_dev));
}

// ---------------------------------------------------------------------------

void criterion3() {
  bool ok = true;
  std::string detail;
  const std::vector<std::pair<double, std::size_t>> cases{{0.05, 21}, {0.1, 11}, {0.2, 6}, {0.3, 4}};
  for (const auto& [p, expected] : cases) {
    const std::size_t steps = total_steps(p);
    bool final_ok = true;
    for (std::size_t n_u : {1u, 9u, 10u, 99u, 100u, 150u, 1234u}) {
      ScheduleState s{p, 0, 0, n_u};
      std::size_t prev = 0;
      for (std::size_t t = 0; t < steps; ++t) {
        s = next_sampling_size(s);
        final_ok = final_ok && s.n_t >= prev;
        prev = s.n_t;
      }
      final_ok = final_ok && s.n_t == n_u;
    }
    ok = ok && steps == expected && final_ok;
    detail += fmt("p=%g: %zu steps%s; ", p, steps, final_ok ? "" : " (final n_t wrong)");
  }
  report(3, ok, detail + "final n_t = n_u");
}

// ---------------------------------------------------------------------------

void criterion4() {
  std::mt19937_64 rng(11);
  bool assign_ok = true, rank_ok = true;
  double metric_dev = 0.0;
  const std::size_t ks[] = {1, 5, 20};
  for (int instance = 0; instance < 25; ++instance) {
    const std::size_t d = 1 + rng() % 8;
    std::uniform_int_distribution<int> coarse(0, 3);
    auto point = [&] {
      oracle::Vec v(d);
      for (double& x : v) x = coarse(rng);
      return v;
    };

    // Pseudo-label assignment.
    const std::size_t n_l = 1 + rng() % 10, n_u = 1 + rng() % 50;
    std::vector<oracle::Vec> lab(n_l), unl(n_u);
    std::vector<std::int64_t> lab_ids(n_l);
    std::vector<LabeledPoint> lp;
    std::vector<UnlabeledPoint> up;
    for (std::size_t i = 0; i < n_l; ++i) {
      lab[i] = point();
      lab_ids[i] = static_cast<std::int64_t>(500 - 7 * i);
    }
    for (std::size_t j = 0; j < n_u; ++j) unl[j] = point();
    for (std::size_t i = 0; i < n_l; ++i) lp.push_back({lab_ids[i], static_cast<int>(i), lab[i]});
    for (std::size_t j = 0; j < n_u; ++j) up.push_back({static_cast<TrackletId>(j), unl[j]});
    const auto assigned = assign_nearest_labels(lp, up);
    for (std::size_t j = 0; j < n_u; ++j) {
      const std::size_t best = oracle::nearest(unl[j], lab, lab_ids);
      assign_ok = assign_ok && assigned[j].assigned_class == static_cast<int>(best) &&
                  assigned[j].confidence == oracle::dist(unl[j], lab[best]);
    }

    // Rankings and metrics.
    const std::size_t probes = 1 + rng() % 50, gallery_n = 10 + rng() % 91;
    const int identities = 2 + static_cast<int>(rng() % 10);
    std::vector<Tracklet> gallery;
    std::vector<Tensor> gallery_emb;
    for (std::size_t g = 0; g < gallery_n; ++g) {
      const int cam = 1 + static_cast<int>(rng() % 3), id = static_cast<int>(rng() % identities);
      gallery.push_back(Tracklet{static_cast<TrackletId>(2000 - g), cam, id, Tensor({1, 1})});
      gallery_emb.push_back(Tensor::vector(point()));
    }
    std::vector<RankingList> rankings;
    std::vector<std::vector<bool>> oracle_matches;
    for (std::size_t q = 0; q < probes; ++q) {
      const Tracklet& anchor = gallery[q % gallery_n];
      const Tracklet probe{static_cast<TrackletId>(q), anchor.camera == 1 ? 2 : 1, anchor.identity, Tensor({1, 1})};
      const oracle::Vec qe = point();
      rankings.push_back(rank_gallery(probe, qe, gallery, gallery_emb));

      std::vector<double> dist;
      std::vector<std::int64_t> ids;
      std::vector<bool> match;
      for (std::size_t g = 0; g < gallery_n; ++g) {
        const bool same = gallery[g].identity == probe.identity;
        if (same && gallery[g].camera == probe.camera) continue;
        dist.push_back(oracle::dist(qe, gallery_emb[g].values()));
        ids.push_back(gallery[g].id);
        match.push_back(same);
      }
      const auto order = oracle::ranking_order(dist, ids);
      std::vector<TrackletId> expected_ids;
      std::vector<bool> expected_match;
      for (std::size_t i : order) {
        expected_ids.push_back(ids[i]);
        expected_match.push_back(match[i]);
      }
      rank_ok = rank_ok && rankings.back().gallery_ids == expected_ids && rankings.back().matches == expected_match;
      oracle_matches.push_back(expected_match);
    }
    const auto cmc = compute_cmc(rankings, ks);
    for (std::size_t i = 0; i < 3; ++i) metric_dev = std::max(metric_dev, std::abs(cmc[i] - oracle::cmc(oracle_matches, ks[i])));
    metric_dev = std::max(metric_dev, std::abs(compute_map(rankings) - oracle::mean_ap(oracle_matches)));
  }
  report(4, assign_ok && rank_ok && metric_dev < 1e-12,
         fmt("25 instances: assignments %s, rankings %s, max metric |delta| %.3g (< 1e-12)",
             assign_ok ? "exact" : "DIFFER", rank_ok ? "exact" : "DIFFER", metric_dev));
}

// ---------------------------------------------------------------------------

struct Outcome {
  double rank1 = 0.0;
  double label_acc = 0.0;
};

struct Experiment {
  Corpus corpus;
  EvalSplit eval;
};

Experiment default_experiment(int s) {
  auto data = generate_synthetic_corpus(GeneratorConfig{}, 100 + static_cast<std::uint64_t>(s));
  return {one_shot_split(std::move(data.train), {}, 200 + static_cast<std::uint64_t>(s)), std::move(data.eval)};
}

TrainConfig train_config(int s, LossVariant v, double p = 0.1, double lambda = 1.0) {
  TrainConfig cfg;
  cfg.seed = 300 + static_cast<std::uint64_t>(s);
  cfg.loss.variant = v;
  cfg.p = p;
  cfg.loss.weights.lambda = lambda;
  return cfg;
}

// Final outcome of a run: Rank-1 of the returned (best-validation) model and
// label-estimation accuracy over D_u after the last step.
Outcome outcome(const TcplResult& r) { return {r.best().eval.rank1, r.final_label_accuracy().value()}; }

constexpr int kSeeds = 5;

Outcome mean_over_seeds(LossVariant v, double p, double lambda = 1.0) {
  Outcome m;
  for (int s = 0; s < kSeeds; ++s) {
    const auto ex = default_experiment(s);
    const auto o = outcome(run_tcpl(ex.corpus, ex.eval, train_config(s, v, p, lambda)));
    m.rank1 += o.rank1 / kSeeds;
    m.label_acc += o.label_acc / kSeeds;
  }
  return m;
}

void criterion5(Outcome& full_out, Outcome& ce_out) {
  const auto t0 = std::chrono::steady_clock::now();
  const Outcome full = mean_over_seeds(LossVariant::Full, 0.1);
  const Outcome intra = mean_over_seeds(LossVariant::IntraOnly, 0.1);
  const Outcome inter = mean_over_seeds(LossVariant::InterOnly, 0.1);
  const Outcome ce = mean_over_seeds(LossVariant::CeOnly, 0.1);
  const double elapsed = seconds_since(t0);
  full_out = full;
  ce_out = ce;
  const bool ok = full.rank1 >= intra.rank1 && full.label_acc >= intra.label_acc && full.rank1 >= inter.rank1 &&
                  full.label_acc >= inter.label_acc && full.rank1 >= ce.rank1 &&
                  full.label_acc >= ce.label_acc + 0.05 && elapsed < 600.0;
  report(5, ok,
         fmt("5 seeds, p=0.1, R1/label acc: full %.3f/%.3f, intra %.3f/%.3f, inter %.3f/%.3f, ce-only %.3f/%.3f "
             "(full >= each; label acc >= ce-only + 0.05); %.1fs (< 600s)",
             full.rank1, full.label_acc, intra.rank1, intra.label_acc, inter.rank1, inter.label_acc, ce.rank1,
             ce.label_acc, elapsed));
}

void criterion6() {
  const Outcome ce_lo = mean_over_seeds(LossVariant::CeOnly, 0.05), ce_hi = mean_over_seeds(LossVariant::CeOnly, 0.2);
  const Outcome full_lo = mean_over_seeds(LossVariant::Full, 0.05), full_hi = mean_over_seeds(LossVariant::Full, 0.2);
  const double ce_drop = ce_lo.rank1 - ce_hi.rank1, full_drop = full_lo.rank1 - full_hi.rank1;
  report(6, ce_drop > full_drop,
         fmt("R1 drop p=0.05 -> 0.2 over 5 seeds: ce-only %.3f (%.3f -> %.3f), full %.3f (%.3f -> %.3f); gap %+.3f",
             ce_drop, ce_lo.rank1, ce_hi.rank1, full_drop, full_lo.rank1, full_hi.rank1, ce_drop - full_drop));
}

void criterion7(const Outcome& lambda_one) {
  bool identical = true;
  Outcome zero, half;
  for (int s = 0; s < kSeeds; ++s) {
    const auto ex = default_experiment(s);
    const auto a = run_tcpl(ex.corpus, ex.eval, train_config(s, LossVariant::Full, 0.1, 0.0));
    const auto b = run_tcpl(ex.corpus, ex.eval, train_config(s, LossVariant::CeOnly, 0.1, 1.0));
    for (std::size_t i = 0; i < a.steps.size(); ++i)
      identical = identical && metrics_csv_row(a.steps[i]) == metrics_csv_row(b.steps[i]);
    std::ostringstream ca, cb;
    save_checkpoint(ca, Checkpoint{a.best_model, ""});
    save_checkpoint(cb, Checkpoint{b.best_model, ""});
    identical = identical && ca.str() == cb.str() && a.final_selection == b.final_selection;
    const auto h = run_tcpl(ex.corpus, ex.eval, train_config(s, LossVariant::Full, 0.1, 0.5));
    zero.label_acc += outcome(a).label_acc / kSeeds;
    half.label_acc += outcome(h).label_acc / kSeeds;
  }
  report(7, identical && half.label_acc > zero.label_acc && lambda_one.label_acc > zero.label_acc,
         fmt("lambda=0 bit-identical to ce-only: %s; mean label acc lambda=0 %.3f, 0.5 %.3f, 1 %.3f",
             identical ? "yes" : "NO", zero.label_acc, half.label_acc, lambda_one.label_acc));
}

// ---------------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void criterion8() {
  const auto root = std::filesystem::temp_directory_path() / "tcpl_acceptance_determinism";
  std::filesystem::remove_all(root);
  ExperimentConfig cfg = parse_config_text("{}");
  cfg.out = root / "a";
  cmd_train(cfg);
  cfg.out = root / "b";
  cmd_train(cfg);
  const std::string a = slurp(root / "a" / "metrics.csv"), b = slurp(root / "b" / "metrics.csv");
  const bool ok = !a.empty() && a == b;
  report(8, ok, fmt("two cmd_train runs, default config: metrics.csv %zu bytes, %s", a.size(),
                    ok ? "byte-identical" : "DIFFER"));
  std::filesystem::remove_all(root);
}

// ---------------------------------------------------------------------------

void criterion9() {
  const auto ex = default_experiment(0);
  LossSettings settings;
  settings.variant = LossVariant::Exclusive;

  // Replay oracle: recompute one epoch by hand and compare every bank row.
  Model trained = init_model(5, {16, 64, 32, false}, ex.corpus.m_l);
  Model replay = clone_model(trained);
  MemoryBank bank = make_memory_bank(trained.encoder, ex.corpus, 0.1);
  MemoryBank replay_bank = bank;
  OptimizerState opt{0.01, 0.5, 0.0005, {}}, replay_opt = opt;
  std::mt19937_64 rng(6), replay_rng(6);
  const EpochStats stats = train_epoch(trained, ex.corpus, {}, settings, opt, rng, &bank);

  std::map<TrackletId, Tensor> recorded;
  replay_bank.begin_epoch();
  const auto params = all_parameters(replay);
  for (const auto& batch : sample_epoch_batches(ex.corpus, settings.sampler.batch_size, replay_rng)) {
    JointLoss jl = joint_loss(batch, ex.corpus, {}, replay, settings, replay_rng, &replay_bank);
    for (TrackletId id : batch) recorded.emplace(id, embed_value(replay.encoder, ex.corpus.get(id).frames));
    backward(jl.total);
    sgd_step(params, replay_opt);
    for (TrackletId id : batch) replay_bank.update(id, recorded.at(id));
  }
  bool replay_ok = recorded.size() == ex.corpus.tracklets.size() && bank.rejected_updates() == 0;
  for (const auto& [id, e] : recorded) replay_ok = replay_ok && bank.read(id) == e;

  // First epoch of real exclusive-variant runs: least-squares slope of the
  // per-member loss across batches, for the exclusive term and the total.
  auto slope = [](const std::vector<double>& y) {
    const double n = static_cast<double>(y.size()), mx = (n - 1.0) / 2.0;
    double my = 0.0, sxy = 0.0, sxx = 0.0;
    for (double v : y) my += v / n;
    for (std::size_t i = 0; i < y.size(); ++i) {
      sxy += (static_cast<double>(i) - mx) * (y[i] - my);
      sxx += (static_cast<double>(i) - mx) * (static_cast<double>(i) - mx);
    }
    return sxy / sxx;
  };
  bool completed = true, decreasing = true;
  std::string error, slopes;
  for (int s = 0; s < kSeeds; ++s) {
    const auto run = default_experiment(s);
    std::vector<double> excl, total;
    try {
      run_tcpl(run.corpus, run.eval, train_config(s, LossVariant::Exclusive, 0.1), {},
               [&](std::size_t step, std::size_t epoch, const EpochStats& st) {
                 if (step != 0 || epoch != 0) return;
                 for (std::size_t b = 0; b < st.batch_sizes.size(); ++b) {
                   excl.push_back(st.batch_exclusive[b] / static_cast<double>(st.batch_sizes[b]));
                   total.push_back(st.batch_totals[b] / static_cast<double>(st.batch_sizes[b]));
                 }
               });
    } catch (const std::exception& e) {
      completed = false;
      error = e.what();
      break;
    }
    const double se = slope(excl), st = slope(total);
    decreasing = decreasing && excl.size() >= 2 && se < 0.0;
    slopes += fmt("%s%+.4f/%+.4f", s ? ", " : "", se, st);
  }
  report(9, replay_ok && completed && decreasing,
         fmt("bank replay oracle %s (%zu batches); 5 exclusive runs %s; epoch-1 per-member slope exclusive/total: %s "
             "(exclusive < 0)",
             replay_ok ? "matches" : "DIFFERS", stats.batch_totals.size(),
             completed ? "completed" : ("failed: " + error).c_str(), slopes.c_str()));
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  Outcome full, ce;
  criterion5(full, ce);
  criterion6();
  criterion7(full);
  criterion8();
  criterion9();
  std::printf("%d of 9 criteria failed (%.1fs)\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
