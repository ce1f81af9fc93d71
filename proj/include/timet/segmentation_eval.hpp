#pragma once

// Unsupervised video segmentation benchmark: cluster patch features, match
// clusters to ground-truth classes per frame, per clip or over the whole
// dataset, and report mIoU.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "timet/types.hpp"

namespace timet {

// ---------------------------------------------------------------------------
// Clustering

struct KMeansResult {
  IndexVector assignments;         // [M]
  Matrix centroids;                // [k, D]
  std::vector<double> objective;   // sum of squared distances after each assignment step
};

// k-means++ seeding followed by Lloyd iterations. Empty clusters are
// re-seeded at the point farthest from its centroid. Ties go to the lower
// cluster index. Throws std::invalid_argument when M < k or k < 1.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t iters = 100);

// Label of the nearest patch center for every output pixel (ties to the lower
// patch index). Output is row-major [target_rows, target_cols].
IndexVector upsample_nearest(const IndexVector& labels, GridShape grid, std::size_t target_rows,
                             std::size_t target_cols);

// Nearest-neighbor resampling of a mask to an arbitrary size.
SegMask resize_mask_nearest(const SegMask& mask, std::size_t rows, std::size_t cols);

// ---------------------------------------------------------------------------
// Matching and scoring

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct ConfusionMatrix {
  CountMatrix counts;  // [clusters, classes]
  std::int64_t total = 0;

  std::size_t num_clusters() const { return static_cast<std::size_t>(counts.rows()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(counts.cols()); }
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> gt, std::size_t k,
                          std::size_t c, int ignore_label = SegMask::kDefaultIgnore);

inline constexpr int kUnmatched = -1;

struct Matching {
  std::vector<int> cluster_to_class;  // kUnmatched for clusters left without a class
  std::int64_t matched = 0;           // total count on matched (cluster, class) cells
};

// Optimal one-to-one assignment maximizing matched counts (rectangular input
// is zero-padded to square).
Matching hungarian_match(const ConfusionMatrix& conf);

// Every cluster goes to the class with most of its pixels; ties and empty
// clusters go to the lower class index.
Matching greedy_many_to_one(const ConfusionMatrix& conf);

/// Confusion in class space after applying a matching.
struct MergedConfusion {
  CountMatrix counts;                      // [classes, classes], predicted x ground truth
  std::vector<std::int64_t> unmatched_gt;  // per gt class: pixels that fell in unmatched clusters
};

MergedConfusion merge(const ConfusionMatrix& conf, const Matching& matching);

struct IouResult {
  double mean_iou = 0.0;
  std::vector<std::optional<double>> per_class;  // nullopt: absent from prediction and gt
};

// IoU_j = TP / (TP + FP + FN); unmatched pixels only count as FN. Throws
// std::invalid_argument when no class is present at all.
IouResult miou(const MergedConfusion& merged);

double jaccard_foreground(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

// ---------------------------------------------------------------------------
// Protocols

enum class EvalScope { kFrame, kClip, kDataset };
enum class MatchingKind { kHungarian, kGreedy };

EvalScope parse_scope(std::string_view name);
MatchingKind parse_matching(std::string_view name);
std::string_view to_string(EvalScope scope);
std::string_view to_string(MatchingKind kind);

struct EvalClip {
  std::string clip_id;
  GridShape grid;
  std::vector<Matrix> frames;  // [N, D] per frame
  std::vector<SegMask> masks;  // one per frame
};

struct EvalConfig {
  EvalScope scope = EvalScope::kDataset;
  std::optional<std::size_t> k;  // nullopt: number of gt classes present in the scope unit
  MatchingKind matching = MatchingKind::kHungarian;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t kmeans_iters = 100;
  std::size_t mask_downsample = 0;  // >0: masks larger than this are resampled to this side
  std::size_t threads = 1;

  void validate() const;
};

struct ScopeScore {
  double miou = 0.0;
  std::vector<std::optional<double>> per_class;
};

/// Per-frame cluster labels on the patch grid, shared label space [0, k).
using ClipAssignments = std::vector<IndexVector>;

// Scores fixed assignments: one matching per frame, per clip or over the
// dataset depending on `scope`, then averages mIoU over the matched units.
ScopeScore score_assignments(std::span<const EvalClip> clips,
                             std::span<const ClipAssignments> assignments, std::size_t k,
                             int num_classes, EvalScope scope, MatchingKind matching,
                             std::size_t mask_downsample = 0);

struct SeedScore {
  std::uint64_t seed = 0;
  double miou = 0.0;
  std::vector<std::optional<double>> per_class;
};

struct EvalReport {
  EvalScope scope = EvalScope::kDataset;
  MatchingKind matching = MatchingKind::kHungarian;
  std::optional<std::size_t> k;
  std::vector<SeedScore> seeds;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over seeds

  nlohmann::json to_json() const;
};

EvalReport evaluate(std::span<const EvalClip> clips, int num_classes, const EvalConfig& cfg);

}  // namespace timet
