#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace timet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexVector = std::vector<int>;

// Patch grid geometry. Patch (r, c) lives at flat index r * cols + c.
struct GridShape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  std::size_t index(std::size_t r, std::size_t c) const { return r * cols + c; }
  bool operator==(const GridShape&) const = default;
};

/// Dense patch features of one frame, one row per patch.
struct FeatureMap {
  GridShape grid;
  Matrix data;  // [N, D]

  std::size_t num_patches() const { return grid.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(data.cols()); }

  // Throws std::invalid_argument on shape mismatch or non-finite entries.
  void validate() const;
};

struct ClipFeatures {
  std::string clip_id;
  double frame_interval_s = 0.0;
  std::vector<FeatureMap> frames;

  std::size_t num_frames() const { return frames.size(); }
  // All frames share grid and dim, and there is at least one frame.
  void validate() const;
};

/// Row-stochastic [N, K] matrix: a per-patch distribution over K clusters.
class SoftAssignment {
 public:
  static constexpr double kRowSumTolerance = 1e-5;

  SoftAssignment() = default;
  // Validates nonnegativity and unit row sums; throws std::invalid_argument.
  explicit SoftAssignment(Matrix data);

  const Matrix& matrix() const { return data_; }
  Eigen::Index rows() const { return data_.rows(); }
  Eigen::Index cols() const { return data_.cols(); }

 private:
  Matrix data_;
};

struct SegMask {
  static constexpr int kDefaultIgnore = 255;

  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> labels;  // row-major, rows * cols
  int ignore_label = kDefaultIgnore;

  int at(std::size_t r, std::size_t c) const { return labels[r * cols + c]; }
  // Every label is in [0, num_classes) or equals ignore_label.
  void validate(int num_classes) const;
};

// Row-wise L2 normalization. Throws std::invalid_argument naming the first
// all-zero row.
Matrix l2_normalize_rows(const Matrix& m);

}  // namespace timet
