#include "timet/sinkhorn.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace timet {

namespace {

double log_sum_exp(const auto& v) {
  const double m = v.maxCoeff();
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log((v.array() - m).exp().sum());
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()));
  }
}

}  // namespace

void SinkhornConfig::validate() const {
  if (!(lambda_reg > 0.0) || !std::isfinite(lambda_reg)) {
    throw std::invalid_argument("sinkhorn lambda must be positive");
  }
  if (n_iters < 1) throw std::invalid_argument("sinkhorn needs at least one iteration");
}

SoftAssignment sinkhorn_labels(const Matrix& log_probs, const SinkhornConfig& cfg) {
  cfg.validate();
  const Eigen::Index b = log_probs.rows();
  const Eigen::Index k = log_probs.cols();
  if (b < 1 || k < 1) throw std::invalid_argument("sinkhorn needs a non-empty batch");
  for (Eigen::Index r = 0; r < b; ++r) {
    for (Eigen::Index c = 0; c < k; ++c) {
      const double v = log_probs(r, c);
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
        throw std::invalid_argument("sinkhorn input has non-finite entries");
      }
    }
    if (log_probs.row(r).maxCoeff() == -std::numeric_limits<double>::infinity()) {
      throw std::invalid_argument("sinkhorn input row " + std::to_string(r) + " is all -inf");
    }
    if (!log_probs.row(r).allFinite()) {
      throw std::invalid_argument("sinkhorn input has non-finite entries");
    }
  }

  const double log_b = std::log(static_cast<double>(b));
  const double log_k = std::log(static_cast<double>(k));
  Matrix q = cfg.lambda_reg * log_probs;
  q.array() -= log_sum_exp(q.reshaped());

  for (std::size_t it = 0; it < cfg.n_iters; ++it) {
    for (Eigen::Index c = 0; c < k; ++c) q.col(c).array() -= log_sum_exp(q.col(c)) + log_k;
    for (Eigen::Index r = 0; r < b; ++r) q.row(r).array() -= log_sum_exp(q.row(r)) + log_b;
  }
  Matrix labels = (q.array() + log_b).exp().matrix();

  if (cfg.hard) {
    Matrix one_hot = Matrix::Zero(b, k);
    for (Eigen::Index r = 0; r < b; ++r) {
      Eigen::Index best = 0;
      labels.row(r).maxCoeff(&best);
      one_hot(r, best) = 1.0;
    }
    return SoftAssignment(std::move(one_hot));
  }
  // Absorb rounding so the rows are stochastic to machine precision.
  for (Eigen::Index r = 0; r < b; ++r) labels.row(r) /= labels.row(r).sum();
  return SoftAssignment(std::move(labels));
}

double clustering_loss(const Matrix& target, const Matrix& log_probs) {
  check_same_shape(target, log_probs, "clustering_loss");
  if (target.rows() == 0) throw std::invalid_argument("clustering_loss: empty batch");
  return -(target.array() * log_probs.array()).sum() / static_cast<double>(target.rows());
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    out.row(r) = logits.row(r).array() - log_sum_exp(logits.row(r));
  }
  return out;
}

Matrix loss_gradient(const Matrix& target, const Matrix& logits) {
  check_same_shape(target, logits, "loss_gradient");
  if (target.rows() == 0) throw std::invalid_argument("loss_gradient: empty batch");
  const Matrix probs = log_softmax_rows(logits).array().exp().matrix();
  const Vector mass = target.rowwise().sum();
  Matrix grad = probs.array().colwise() * mass.array();
  grad -= target;
  return grad / static_cast<double>(target.rows());
}

}  // namespace timet
