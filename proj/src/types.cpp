#include "timet/types.hpp"

#include <cmath>
#include <stdexcept>

namespace timet {

void FeatureMap::validate() const {
  if (static_cast<std::size_t>(data.rows()) != grid.size()) {
    throw std::invalid_argument("feature map has " + std::to_string(data.rows()) +
                                " rows but grid " + std::to_string(grid.rows) + "x" +
                                std::to_string(grid.cols) + " needs " +
                                std::to_string(grid.size()));
  }
  if (!data.allFinite()) throw std::invalid_argument("feature map has non-finite entries");
}

void ClipFeatures::validate() const {
  if (frames.empty()) throw std::invalid_argument("clip '" + clip_id + "' has no frames");
  for (const auto& f : frames) {
    f.validate();
    if (!(f.grid == frames.front().grid) || f.dim() != frames.front().dim()) {
      throw std::invalid_argument("clip '" + clip_id + "' mixes grid or feature dims");
    }
  }
}

SoftAssignment::SoftAssignment(Matrix data) : data_(std::move(data)) {
  if (!data_.allFinite()) throw std::invalid_argument("soft assignment has non-finite entries");
  if ((data_.array() < 0.0).any() || (data_.array() > 1.0 + kRowSumTolerance).any()) {
    throw std::invalid_argument("soft assignment entries must lie in [0, 1]");
  }
  for (Eigen::Index r = 0; r < data_.rows(); ++r) {
    if (std::abs(data_.row(r).sum() - 1.0) > kRowSumTolerance) {
      throw std::invalid_argument("soft assignment row " + std::to_string(r) +
                                  " does not sum to 1");
    }
  }
}

void SegMask::validate(int num_classes) const {
  if (labels.size() != rows * cols) throw std::invalid_argument("mask label count mismatch");
  for (int l : labels) {
    if (l != ignore_label && (l < 0 || l >= num_classes)) {
      throw std::invalid_argument("mask label " + std::to_string(l) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
}

Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).norm();
    if (norm == 0.0) throw std::invalid_argument("cannot normalize zero row " + std::to_string(r));
    out.row(r) = m.row(r) / norm;
  }
  return out;
}

}  // namespace timet
