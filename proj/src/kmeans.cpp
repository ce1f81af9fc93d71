#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "timet/segmentation_eval.hpp"

namespace timet {

namespace {

// Squared distances [M, k] via the norm expansion, clamped at zero.
Matrix squared_distances(const Matrix& points, const Matrix& centroids) {
  const Vector pn = points.rowwise().squaredNorm();
  const Vector cn = centroids.rowwise().squaredNorm();
  Matrix d = -2.0 * points * centroids.transpose();
  d.colwise() += pn;
  d.rowwise() += cn.transpose();
  return d.cwiseMax(0.0);
}

Matrix plus_plus_seeding(const Matrix& points, std::size_t k, std::mt19937_64& rng) {
  const Eigen::Index m = points.rows();
  Matrix centroids(static_cast<Eigen::Index>(k), points.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, m - 1);
  centroids.row(0) = points.row(pick(rng));
  Vector closest = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    const double total = closest.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      chosen = m - 1;
      for (Eigen::Index i = 0; i < m; ++i) {
        acc += closest(i);
        if (u < acc) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    centroids.row(static_cast<Eigen::Index>(c)) = points.row(chosen);
    closest = closest.cwiseMin((points.rowwise() - points.row(chosen)).rowwise().squaredNorm());
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t iters) {
  const Eigen::Index m = points.rows();
  if (k < 1) throw std::invalid_argument("kmeans needs k >= 1");
  if (static_cast<std::size_t>(m) < k) {
    throw std::invalid_argument("kmeans: " + std::to_string(m) + " points for k=" + std::to_string(k));
  }
  if (!points.allFinite()) throw std::invalid_argument("kmeans: non-finite points");

  std::mt19937_64 rng(seed);
  KMeansResult r;
  r.centroids = plus_plus_seeding(points, k, rng);
  r.assignments.assign(static_cast<std::size_t>(m), -1);
  const auto kk = static_cast<Eigen::Index>(k);

  for (std::size_t it = 0; it < std::max<std::size_t>(iters, 1); ++it) {
    const Matrix d = squared_distances(points, r.centroids);
    bool changed = false;
    double objective = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      Eigen::Index best = 0;
      d.row(i).minCoeff(&best);  // first minimum, i.e. lowest index on ties
      if (r.assignments[static_cast<std::size_t>(i)] != static_cast<int>(best)) changed = true;
      r.assignments[static_cast<std::size_t>(i)] = static_cast<int>(best);
      objective += (points.row(i) - r.centroids.row(best)).squaredNorm();
    }
    r.objective.push_back(objective);
    if (!changed && it > 0) break;

    Matrix sums = Matrix::Zero(kk, points.cols());
    std::vector<std::size_t> counts(k, 0);
    for (Eigen::Index i = 0; i < m; ++i) {
      const int a = r.assignments[static_cast<std::size_t>(i)];
      sums.row(a) += points.row(i);
      ++counts[static_cast<std::size_t>(a)];
    }
    std::vector<char> taken(static_cast<std::size_t>(m), 0);
    for (Eigen::Index c = 0; c < kk; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        r.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
    for (Eigen::Index c = 0; c < kk; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      Eigen::Index far = -1;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (taken[static_cast<std::size_t>(i)]) continue;
        const double di =
            (points.row(i) - r.centroids.row(r.assignments[static_cast<std::size_t>(i)])).squaredNorm();
        if (di > far_d) {
          far_d = di;
          far = i;
        }
      }
      taken[static_cast<std::size_t>(far)] = 1;
      r.centroids.row(c) = points.row(far);
    }
  }
  return r;
}

IndexVector upsample_nearest(const IndexVector& labels, GridShape grid, std::size_t target_rows,
                             std::size_t target_cols) {
  if (labels.size() != grid.size()) throw std::invalid_argument("label count does not match grid");
  if (target_rows < grid.rows || target_cols < grid.cols) {
    throw std::invalid_argument("upsample target is smaller than the patch grid");
  }
  // In units of 1/(2*target): pixel y has center (2y+1)*g, patch r has center (2r+1)*target.
  auto nearest = [](std::size_t y, std::size_t g, std::size_t target) {
    const long p = static_cast<long>((2 * y + 1) * g);
    const long t = static_cast<long>(target);
    long r = std::clamp<long>((p - t) / (2 * t), 0, static_cast<long>(g) - 1);
    long best = r;
    long best_d = std::labs(p - (2 * r + 1) * t);
    for (long cand = r + 1; cand <= std::min<long>(r + 2, static_cast<long>(g) - 1); ++cand) {
      const long dist = std::labs(p - (2 * cand + 1) * t);
      if (dist < best_d) {
        best = cand;
        best_d = dist;
      }
    }
    return static_cast<std::size_t>(best);
  };
  std::vector<std::size_t> row_of(target_rows), col_of(target_cols);
  for (std::size_t y = 0; y < target_rows; ++y) row_of[y] = nearest(y, grid.rows, target_rows);
  for (std::size_t x = 0; x < target_cols; ++x) col_of[x] = nearest(x, grid.cols, target_cols);
  IndexVector out(target_rows * target_cols);
  for (std::size_t y = 0; y < target_rows; ++y) {
    for (std::size_t x = 0; x < target_cols; ++x) out[y * target_cols + x] = labels[grid.index(row_of[y], col_of[x])];
  }
  return out;
}

SegMask resize_mask_nearest(const SegMask& mask, std::size_t rows, std::size_t cols) {
  SegMask out;
  out.rows = rows;
  out.cols = cols;
  out.ignore_label = mask.ignore_label;
  out.labels.resize(rows * cols);
  for (std::size_t y = 0; y < rows; ++y) {
    const std::size_t sy = std::min(mask.rows - 1, (2 * y + 1) * mask.rows / (2 * rows));
    for (std::size_t x = 0; x < cols; ++x) {
      const std::size_t sx = std::min(mask.cols - 1, (2 * x + 1) * mask.cols / (2 * cols));
      out.labels[y * cols + x] = mask.at(sy, sx);
    }
  }
  return out;
}

}  // namespace timet
