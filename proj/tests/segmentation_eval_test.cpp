#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "eval_fixtures.hpp"
#include "oracles.hpp"
#include "test_util.hpp"
#include "timet/pipeline.hpp"
#include "timet/segmentation_eval.hpp"
#include "timet/synthetic.hpp"

namespace timet {
namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
  ConfusionMatrix m;
  m.counts = CountMatrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m.counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
      m.total += rows[i][j];
    }
  }
  return m;
}

std::vector<std::vector<std::int64_t>> to_rows(const ConfusionMatrix& m) {
  std::vector<std::vector<std::int64_t>> rows(m.num_clusters(), std::vector<std::int64_t>(m.num_classes()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) rows[i][j] = m.counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// k-means

TEST(KMeans, EveryPointItsOwnCluster) {
  std::mt19937_64 rng(1);
  const Matrix pts = oracle::random_matrix(rng, 6, 3);
  const KMeansResult r = kmeans(pts, 6, 0);
  std::vector<int> sorted = r.assignments;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4, 5}));
  EXPECT_NEAR(r.objective.back(), 0.0, 1e-20);
}

TEST(KMeans, SeparatesTwoBlobs) {
  std::mt19937_64 rng(2);
  Matrix pts = oracle::random_matrix(rng, 40, 2, 0.1);
  pts.bottomRows(20).array() += 10.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const KMeansResult r = kmeans(pts, 2, seed);
    for (int i = 0; i < 40; ++i) EXPECT_EQ(r.assignments[i] == r.assignments[0], i < 20);
  }
}

TEST(KMeans, ObjectiveNeverIncreasesAndSeedIsDeterministic) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix pts = oracle::random_matrix(rng, 60, 4);
    const KMeansResult r = kmeans(pts, 5, static_cast<std::uint64_t>(trial), 50);
    ASSERT_FALSE(r.objective.empty());
    for (std::size_t i = 1; i < r.objective.size(); ++i) EXPECT_LE(r.objective[i], r.objective[i - 1] + 1e-9);
    EXPECT_EQ(r.assignments, kmeans(pts, 5, static_cast<std::uint64_t>(trial), 50).assignments);
    for (int a : r.assignments) EXPECT_TRUE(a >= 0 && a < 5);
  }
}

TEST(KMeans, RejectsTooFewPoints) {
  EXPECT_THROW(kmeans(Matrix::Zero(3, 2), 4, 0), std::invalid_argument);
  EXPECT_THROW(kmeans(Matrix::Zero(3, 2), 0, 0), std::invalid_argument);
}

TEST(KMeans, DuplicatePointsStillFillEveryCluster) {
  Matrix pts = Matrix::Zero(10, 2);
  pts.row(9) << 1, 1;
  const KMeansResult r = kmeans(pts, 3, 0);
  EXPECT_EQ(r.assignments.size(), 10u);
  EXPECT_TRUE(r.centroids.allFinite());
}

// ---------------------------------------------------------------------------
// Upsampling

TEST(Upsample, IdentityAndExactFactor) {
  const IndexVector labels = {0, 1, 2, 3};
  EXPECT_EQ(upsample_nearest(labels, {2, 2}, 2, 2), labels);
  EXPECT_EQ(upsample_nearest(labels, {2, 2}, 4, 4),
            (IndexVector{0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3}));
  EXPECT_EQ(upsample_nearest({7}, {1, 1}, 3, 5), IndexVector(15, 7));
  EXPECT_THROW(upsample_nearest(labels, {2, 2}, 1, 4), std::invalid_argument);
}

TEST(Upsample, MatchesBruteForceNearestCenter) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> g(1, 6), extra(0, 9);
  for (int trial = 0; trial < 50; ++trial) {
    const GridShape grid{g(rng), g(rng)};
    const std::size_t tr = grid.rows + extra(rng), tc = grid.cols + extra(rng);
    IndexVector labels(grid.size());
    std::iota(labels.begin(), labels.end(), 0);
    const IndexVector out = upsample_nearest(labels, grid, tr, tc);
    for (std::size_t y = 0; y < tr; ++y) {
      for (std::size_t x = 0; x < tc; ++x) {
        // Squared distance in units where pixel and patch centres are integers.
        long best = -1, best_d = 0;
        for (std::size_t r = 0; r < grid.rows; ++r) {
          for (std::size_t c = 0; c < grid.cols; ++c) {
            const long dy = static_cast<long>((2 * y + 1) * grid.rows * tc) - static_cast<long>((2 * r + 1) * tr * tc);
            const long dx = static_cast<long>((2 * x + 1) * grid.cols * tr) - static_cast<long>((2 * c + 1) * tc * tr);
            const long d = dy * dy + dx * dx;
            if (best < 0 || d < best_d) {
              best = static_cast<long>(grid.index(r, c));
              best_d = d;
            }
          }
        }
        ASSERT_EQ(out[y * tc + x], best) << grid.rows << "x" << grid.cols << " -> " << tr << "x" << tc;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Confusion, matching, IoU

TEST(Confusion, HandCountsAndIgnore) {
  const std::vector<int> pred = {0, 0, 1, 1}, gt = {0, 1, 1, 1};
  const ConfusionMatrix m = confusion(pred, gt, 2, 2);
  EXPECT_EQ(to_rows(m), (std::vector<std::vector<std::int64_t>>{{1, 1}, {0, 2}}));
  EXPECT_EQ(m.total, 4);
  const ConfusionMatrix diag = confusion(gt, gt, 2, 2);
  EXPECT_EQ(diag.counts(0, 1), 0);
  EXPECT_EQ(diag.counts(1, 0), 0);
  const std::vector<int> ignored = {255, 255, 255, 255};
  const ConfusionMatrix none = confusion(pred, ignored, 2, 2);
  EXPECT_EQ(none.counts.sum(), 0);
  EXPECT_EQ(none.total, 0);
  const std::vector<int> bad = {0, 2, 1, 1};
  EXPECT_THROW(confusion(bad, gt, 2, 2), std::invalid_argument);
  EXPECT_THROW(confusion(pred, bad, 2, 2), std::invalid_argument);
  EXPECT_THROW(confusion(std::vector<int>{0}, gt, 2, 2), std::invalid_argument);
}

TEST(Hungarian, HandCase) {
  const Matching m = hungarian_match(from_rows({{5, 1}, {2, 7}}));
  EXPECT_EQ(m.cluster_to_class, (std::vector<int>{0, 1}));
  EXPECT_EQ(m.matched, 12);
  const Matching d = hungarian_match(from_rows({{4, 0, 0}, {0, 9, 0}, {0, 0, 1}}));
  EXPECT_EQ(d.cluster_to_class, (std::vector<int>{0, 1, 2}));
}

TEST(Hungarian, RectangularLeavesExtraClustersUnmatched) {
  const Matching m = hungarian_match(from_rows({{5, 1}, {2, 7}, {6, 0}}));
  EXPECT_EQ(m.cluster_to_class, (std::vector<int>{kUnmatched, 1, 0}));
  EXPECT_EQ(m.matched, 13);
  const Matching wide = hungarian_match(from_rows({{1, 8, 3}}));
  EXPECT_EQ(wide.cluster_to_class, (std::vector<int>{1}));
}

TEST(Hungarian, EqualsBruteForce) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> dim(1, 6);
  std::uniform_int_distribution<std::int64_t> count(0, 1000);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<std::int64_t>> rows(static_cast<std::size_t>(dim(rng)));
    const auto c = static_cast<std::size_t>(dim(rng));
    for (auto& r : rows) {
      for (std::size_t j = 0; j < c; ++j) r.push_back(count(rng));
    }
    const Matching m = hungarian_match(from_rows(rows));
    EXPECT_EQ(m.matched, oracle::brute_force_matching(rows, c));
    std::vector<int> used;
    std::int64_t recomputed = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int cls = m.cluster_to_class[i];
      if (cls == kUnmatched) continue;
      used.push_back(cls);
      recomputed += rows[i][static_cast<std::size_t>(cls)];
    }
    std::sort(used.begin(), used.end());
    EXPECT_EQ(std::adjacent_find(used.begin(), used.end()), used.end());
    EXPECT_EQ(used.size(), std::min(rows.size(), c));
    EXPECT_EQ(recomputed, m.matched);
  }
}

TEST(Greedy, RowArgmaxWithLowIndexTies) {
  EXPECT_EQ(greedy_many_to_one(from_rows({{5, 1}, {2, 7}, {4, 0}})).cluster_to_class, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(greedy_many_to_one(from_rows({{3, 0}, {0, 3}})).cluster_to_class, (std::vector<int>{0, 1}));
  EXPECT_EQ(greedy_many_to_one(from_rows({{3, 3}})).cluster_to_class, (std::vector<int>{0}));
  EXPECT_EQ(greedy_many_to_one(from_rows({{0, 0, 0}, {1, 2, 2}})).cluster_to_class, (std::vector<int>{0, 1}));
}

TEST(Greedy, MatchedMassIsSumOfRowMaxima) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::int64_t> count(0, 20);
  for (int trial = 0; trial < 50; ++trial) {
    ConfusionMatrix m;
    m.counts = CountMatrix(5, 3);
    for (Eigen::Index i = 0; i < m.counts.size(); ++i) m.counts.data()[i] = count(rng);
    const Matching g = greedy_many_to_one(m);
    EXPECT_EQ(g.matched, m.counts.rowwise().maxCoeff().sum());
    EXPECT_GE(g.matched, hungarian_match(m).matched);
  }
}

TEST(Miou, HandCases) {
  const std::vector<int> pred = {0, 0, 1, 1}, gt = {0, 1, 1, 1};
  const ConfusionMatrix m = confusion(pred, gt, 2, 2);
  const IouResult r = miou(merge(m, hungarian_match(m)));
  EXPECT_DOUBLE_EQ(r.mean_iou, 7.0 / 12.0);
  EXPECT_DOUBLE_EQ(*r.per_class[0], 0.5);
  EXPECT_DOUBLE_EQ(*r.per_class[1], 2.0 / 3.0);

  const ConfusionMatrix perfect = confusion(gt, gt, 2, 2);
  EXPECT_DOUBLE_EQ(miou(merge(perfect, hungarian_match(perfect))).mean_iou, 1.0);

  MergedConfusion disjoint;
  disjoint.counts = CountMatrix::Zero(2, 2);
  disjoint.counts(0, 1) = 3;
  disjoint.counts(1, 0) = 4;
  disjoint.unmatched_gt = {0, 0};
  EXPECT_DOUBLE_EQ(miou(disjoint).mean_iou, 0.0);
}

TEST(Miou, AbsentClassesAreExcludedAndUnmatchedCountAsMisses) {
  const ConfusionMatrix absent = from_rows({{4, 0, 0}, {0, 3, 0}});
  const IouResult a = miou(merge(absent, hungarian_match(absent)));
  EXPECT_FALSE(a.per_class[2].has_value());
  EXPECT_DOUBLE_EQ(a.mean_iou, 1.0);

  // Cluster 2 takes class 1; cluster 1 is left over and its pixels become misses.
  const ConfusionMatrix extra = from_rows({{4, 0}, {0, 2}, {0, 3}});
  const Matching h = hungarian_match(extra);
  EXPECT_EQ(h.cluster_to_class, (std::vector<int>{0, kUnmatched, 1}));
  const IouResult r = miou(merge(extra, h));
  EXPECT_DOUBLE_EQ(*r.per_class[1], 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(r.mean_iou, (1.0 + 0.6) / 2.0);
  MergedConfusion empty;
  empty.counts = CountMatrix::Zero(2, 2);
  empty.unmatched_gt = {0, 0};
  EXPECT_THROW(miou(empty), std::invalid_argument);
}

TEST(Miou, BoundsOnRandomMatrices) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::int64_t> count(0, 30);
  for (int trial = 0; trial < 100; ++trial) {
    ConfusionMatrix m;
    m.counts = CountMatrix(4, 4);
    for (Eigen::Index i = 0; i < 16; ++i) m.counts.data()[i] = count(rng);
    for (const Matching& match : {hungarian_match(m), greedy_many_to_one(m)}) {
      const IouResult r = miou(merge(m, match));
      EXPECT_GE(r.mean_iou, 0.0);
      EXPECT_LE(r.mean_iou, 1.0);
    }
  }
}

TEST(Jaccard, HandCases) {
  const std::vector<std::uint8_t> top = {1, 1, 0, 0}, left = {1, 0, 1, 0}, none = {0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(jaccard_foreground(top, top), 1.0);
  EXPECT_DOUBLE_EQ(jaccard_foreground(top, left), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(jaccard_foreground(top, std::vector<std::uint8_t>{0, 0, 1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(jaccard_foreground(none, none), 1.0);
  EXPECT_THROW(jaccard_foreground(top, std::vector<std::uint8_t>{1}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Protocols on fixed assignments

TEST(ScoreAssignments, FinerMatchingScopeNeverScoresLower) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const testing::AssignmentSet s = testing::random_assignment_set(rng);
    const double frame = score_assignments(s.clips, s.assignments, s.k, s.num_classes, EvalScope::kFrame,
                                           MatchingKind::kHungarian).miou;
    const double clip = score_assignments(s.clips, s.assignments, s.k, s.num_classes, EvalScope::kClip,
                                          MatchingKind::kHungarian).miou;
    const double dataset = score_assignments(s.clips, s.assignments, s.k, s.num_classes, EvalScope::kDataset,
                                             MatchingKind::kHungarian).miou;
    EXPECT_GE(frame, clip) << trial;
    EXPECT_GE(clip, dataset) << trial;
  }
}

TEST(ScoreAssignments, InvariantToClusterRelabeling) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const testing::AssignmentSet s = testing::random_assignment_set(rng, 3, 4, {6, 6}, 4, trial % 2 == 0 ? 4 : 6);
    std::vector<int> perm(s.k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<ClipAssignments> relabeled = s.assignments;
    for (auto& clip : relabeled) {
      for (auto& frame : clip) {
        for (int& a : frame) a = perm[static_cast<std::size_t>(a)];
      }
    }
    for (EvalScope scope : {EvalScope::kFrame, EvalScope::kClip, EvalScope::kDataset}) {
      for (MatchingKind kind : {MatchingKind::kHungarian, MatchingKind::kGreedy}) {
        const ScopeScore a = score_assignments(s.clips, s.assignments, s.k, s.num_classes, scope, kind);
        const ScopeScore b = score_assignments(s.clips, relabeled, s.k, s.num_classes, scope, kind);
        EXPECT_DOUBLE_EQ(a.miou, b.miou);
        EXPECT_EQ(a.per_class, b.per_class);
      }
    }
  }
}

TEST(ScoreAssignments, UpsamplesToMaskResolution) {
  EvalClip clip;
  clip.grid = {2, 2};
  clip.frames = {Matrix::Zero(4, 1)};
  SegMask mask{4, 4, {0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3}};
  clip.masks = {mask};
  const std::vector<EvalClip> clips = {clip};
  const std::vector<ClipAssignments> a = {{{3, 2, 1, 0}}};
  EXPECT_DOUBLE_EQ(score_assignments(clips, a, 4, 4, EvalScope::kFrame, MatchingKind::kHungarian).miou, 1.0);
  EXPECT_DOUBLE_EQ(score_assignments(clips, a, 4, 4, EvalScope::kFrame, MatchingKind::kHungarian, 2).miou, 1.0);
}

// ---------------------------------------------------------------------------
// End-to-end evaluation

std::vector<EvalClip> noiseless_clips(const testing::TempDir& dir, std::size_t n_clips, std::size_t frames) {
  SyntheticSpec s;
  s.n_clips = n_clips;
  s.frames_per_clip = frames;
  s.grid = {10, 10};
  s.dim = 8;
  s.noise_sigma = 0.0;
  return load_eval_clips(make_synthetic_dataset(s, dir.path()));
}

TEST(Evaluate, PerfectFeaturesScoreOneEverywhere) {
  testing::TempDir dir;
  const std::vector<EvalClip> clips = noiseless_clips(dir, 3, 3);
  for (EvalScope scope : {EvalScope::kFrame, EvalScope::kClip, EvalScope::kDataset}) {
    for (MatchingKind kind : {MatchingKind::kHungarian, MatchingKind::kGreedy}) {
      EvalConfig cfg;
      cfg.scope = scope;
      cfg.matching = kind;
      const EvalReport r = evaluate(clips, 4, cfg);
      EXPECT_DOUBLE_EQ(r.mean, 1.0) << to_string(scope) << " " << to_string(kind);
      EXPECT_DOUBLE_EQ(r.std, 0.0);
      ASSERT_EQ(r.seeds.size(), 5u);
    }
  }
}

TEST(Evaluate, SingleFrameClipScoresAgreeAcrossScopes) {
  testing::TempDir dir;
  SyntheticSpec s;
  s.n_clips = 1;
  s.frames_per_clip = 1;
  s.grid = {8, 8};
  s.dim = 8;
  const std::vector<EvalClip> clips = load_eval_clips(make_synthetic_dataset(s, dir.path()));
  EvalConfig cfg;
  cfg.k = 6;
  std::vector<double> means;
  for (EvalScope scope : {EvalScope::kFrame, EvalScope::kClip, EvalScope::kDataset}) {
    cfg.scope = scope;
    means.push_back(evaluate(clips, 4, cfg).mean);
  }
  EXPECT_EQ(means[0], means[1]);
  EXPECT_EQ(means[1], means[2]);
}

TEST(Evaluate, ThreadsDoNotChangeResultsAndJsonHasSchema) {
  testing::TempDir dir;
  SyntheticSpec s;
  s.n_clips = 2;
  s.grid = {8, 8};
  s.dim = 8;
  s.noise_sigma = 0.6;
  const std::vector<EvalClip> clips = load_eval_clips(make_synthetic_dataset(s, dir.path()));
  EvalConfig cfg;
  cfg.scope = EvalScope::kClip;
  cfg.k = 5;
  cfg.matching = MatchingKind::kGreedy;
  const EvalReport one = evaluate(clips, 4, cfg);
  cfg.threads = 3;
  const EvalReport three = evaluate(clips, 4, cfg);
  EXPECT_EQ(one.to_json(), three.to_json());

  const nlohmann::json j = one.to_json();
  EXPECT_EQ(j.at("scope"), "clip");
  EXPECT_EQ(j.at("matching"), "greedy");
  EXPECT_EQ(j.at("k"), 5);
  ASSERT_EQ(j.at("seeds").size(), 5u);
  double mean = 0.0;
  for (const auto& seed : j.at("seeds")) {
    mean += seed.at("miou").get<double>() / 5.0;
    EXPECT_EQ(seed.at("per_class").size(), 4u);
  }
  EXPECT_NEAR(j.at("mean").get<double>(), mean, 1e-12);
  double var = 0.0;
  for (const auto& seed : j.at("seeds")) var += std::pow(seed.at("miou").get<double>() - mean, 2) / 5.0;
  EXPECT_NEAR(j.at("std").get<double>(), std::sqrt(var), 1e-12);

  cfg.k.reset();
  EXPECT_EQ(evaluate(clips, 4, cfg).to_json().at("k"), "gt");
}

TEST(Evaluate, RejectsBadInputs) {
  testing::TempDir dir;
  std::vector<EvalClip> clips = noiseless_clips(dir, 1, 2);
  EvalConfig cfg;
  cfg.scope = EvalScope::kFrame;
  cfg.k = 101;
  EXPECT_THROW(evaluate(clips, 4, cfg), std::invalid_argument);
  cfg.k = 0;
  EXPECT_THROW(evaluate(clips, 4, cfg), std::invalid_argument);
  cfg.k.reset();
  cfg.seeds.clear();
  EXPECT_THROW(evaluate(clips, 4, cfg), std::invalid_argument);
  cfg = EvalConfig{};
  clips[0].masks.pop_back();
  EXPECT_THROW(evaluate(clips, 4, cfg), std::invalid_argument);
  EXPECT_THROW(parse_scope("video"), std::invalid_argument);
  EXPECT_THROW(parse_matching("optimal"), std::invalid_argument);
  EXPECT_EQ(parse_scope("frame"), EvalScope::kFrame);
  EXPECT_EQ(parse_matching("greedy"), MatchingKind::kGreedy);
}

TEST(Evaluate, OverclusteringWithGreedyMatching) {
  testing::TempDir dir;
  const std::vector<EvalClip> clips = noiseless_clips(dir, 2, 2);
  EvalConfig cfg;
  cfg.scope = EvalScope::kFrame;
  cfg.k = 10;
  cfg.matching = MatchingKind::kGreedy;
  const EvalReport r = evaluate(clips, 4, cfg);
  // Splitting a pure class into several clusters costs nothing under many-to-one matching.
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
}

}  // namespace
}  // namespace timet
