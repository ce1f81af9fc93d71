#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "timet/segmentation_eval.hpp"

namespace timet {

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (counts.rows() != other.counts.rows() || counts.cols() != other.counts.cols()) {
    throw std::invalid_argument("cannot add confusion matrices of different shapes");
  }
  counts += other.counts;
  total += other.total;
  return *this;
}

ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> gt, std::size_t k,
                          std::size_t c, int ignore_label) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("prediction has " + std::to_string(pred.size()) +
                                " pixels, ground truth " + std::to_string(gt.size()));
  }
  ConfusionMatrix m;
  m.counts = CountMatrix::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gt[i] == ignore_label) continue;
    if (pred[i] < 0 || static_cast<std::size_t>(pred[i]) >= k) {
      throw std::invalid_argument("cluster label " + std::to_string(pred[i]) + " outside [0, " +
                                  std::to_string(k) + ")");
    }
    if (gt[i] < 0 || static_cast<std::size_t>(gt[i]) >= c) {
      throw std::invalid_argument("class label " + std::to_string(gt[i]) + " outside [0, " +
                                  std::to_string(c) + ")");
    }
    ++m.counts(pred[i], gt[i]);
    ++m.total;
  }
  return m;
}

namespace {

Matching hungarian_ordered(const CountMatrix& counts);

}  // namespace

// Clusters are visited in an order fixed by their row contents, so among
// equally good matchings the same one is picked under any relabeling.
Matching hungarian_match(const ConfusionMatrix& conf) {
  const auto k = conf.counts.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < conf.counts.cols(); ++j) {
      if (conf.counts(a, j) != conf.counts(b, j)) return conf.counts(a, j) > conf.counts(b, j);
    }
    return false;
  });
  CountMatrix sorted(k, conf.counts.cols());
  for (Eigen::Index i = 0; i < k; ++i) sorted.row(i) = conf.counts.row(order[static_cast<std::size_t>(i)]);
  const Matching inner = hungarian_ordered(sorted);
  Matching out;
  out.matched = inner.matched;
  out.cluster_to_class.assign(static_cast<std::size_t>(k), kUnmatched);
  for (Eigen::Index i = 0; i < k; ++i) {
    out.cluster_to_class[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
        inner.cluster_to_class[static_cast<std::size_t>(i)];
  }
  return out;
}

namespace {

Matching hungarian_ordered(const CountMatrix& counts) {
  const auto k = static_cast<std::size_t>(counts.rows());
  const auto c = static_cast<std::size_t>(counts.cols());
  const std::size_t n = std::max(k, c);
  Matching out;
  out.cluster_to_class.assign(k, kUnmatched);
  if (n == 0) return out;

  // Minimize -count with row/column potentials; 1-based with a sentinel column 0.
  auto cost = [&](std::size_t i, std::size_t j) -> std::int64_t {
    if (i >= k || j >= c) return 0;
    return -counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  };
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
  std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<std::int64_t> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      std::int64_t delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t cluster = owner[j] - 1;
    const std::size_t cls = j - 1;
    if (cluster < k && cls < c) {
      out.cluster_to_class[cluster] = static_cast<int>(cls);
      out.matched += counts(static_cast<Eigen::Index>(cluster), static_cast<Eigen::Index>(cls));
    }
  }
  return out;
}

}  // namespace

Matching greedy_many_to_one(const ConfusionMatrix& conf) {
  Matching out;
  out.cluster_to_class.assign(conf.num_clusters(), 0);
  if (conf.counts.cols() == 0) return out;
  for (Eigen::Index i = 0; i < conf.counts.rows(); ++i) {
    Eigen::Index best = 0;
    conf.counts.row(i).maxCoeff(&best);  // first maximum
    out.cluster_to_class[static_cast<std::size_t>(i)] = static_cast<int>(best);
    out.matched += conf.counts(i, best);
  }
  return out;
}

MergedConfusion merge(const ConfusionMatrix& conf, const Matching& matching) {
  if (matching.cluster_to_class.size() != conf.num_clusters()) {
    throw std::invalid_argument("matching covers " + std::to_string(matching.cluster_to_class.size()) +
                                " clusters, confusion has " + std::to_string(conf.num_clusters()));
  }
  const auto c = conf.counts.cols();
  MergedConfusion m;
  m.counts = CountMatrix::Zero(c, c);
  m.unmatched_gt.assign(static_cast<std::size_t>(c), 0);
  for (Eigen::Index i = 0; i < conf.counts.rows(); ++i) {
    const int cls = matching.cluster_to_class[static_cast<std::size_t>(i)];
    if (cls == kUnmatched) {
      for (Eigen::Index j = 0; j < c; ++j) m.unmatched_gt[static_cast<std::size_t>(j)] += conf.counts(i, j);
    } else {
      if (cls < 0 || cls >= c) throw std::invalid_argument("matching maps to an unknown class");
      m.counts.row(cls) += conf.counts.row(i);
    }
  }
  return m;
}

IouResult miou(const MergedConfusion& merged) {
  const auto c = merged.counts.cols();
  IouResult r;
  r.per_class.assign(static_cast<std::size_t>(c), std::nullopt);
  double sum = 0.0;
  std::size_t present = 0;
  for (Eigen::Index j = 0; j < c; ++j) {
    const std::int64_t tp = merged.counts(j, j);
    const std::int64_t predicted = merged.counts.row(j).sum();
    const std::int64_t actual = merged.counts.col(j).sum() + merged.unmatched_gt[static_cast<std::size_t>(j)];
    const std::int64_t uni = predicted + actual - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class[static_cast<std::size_t>(j)] = iou;
    sum += iou;
    ++present;
  }
  if (present == 0) throw std::invalid_argument("miou: no class present in prediction or ground truth");
  r.mean_iou = sum / static_cast<double>(present);
  return r;
}

double jaccard_foreground(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("foreground masks differ in size");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace timet
