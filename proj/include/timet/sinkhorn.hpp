#pragma once

#include "timet/types.hpp"

namespace timet {

struct SinkhornConfig {
  double lambda_reg = 20.0;  // inverse entropy weight, epsilon = 1 / lambda
  std::size_t n_iters = 3;
  bool hard = false;

  void validate() const;
};

/// Balanced pseudo-labels for a batch of [B, K] log-probabilities.
///
/// Starts from the kernel exp(lambda * log_probs) and alternates scaling the
/// prototype (column) marginals to 1/K and the patch (row) marginals to 1/B.
/// Each iteration ends on the row step, so the returned rows sum to 1 and the
/// column sums approach B/K. Computed in the log domain.
SoftAssignment sinkhorn_labels(const Matrix& log_probs, const SinkhornConfig& cfg);

// -(1/B) * sum_{b,k} target(b,k) * log_probs(b,k). Targets may be sub-stochastic.
double clustering_loss(const Matrix& target, const Matrix& log_probs);

// Gradient of clustering_loss(target, log_softmax(logits)) w.r.t. logits with
// the target held constant: (m_b * softmax(logits)_b - target_b) / B, where
// m_b is the row mass of the target (1 for proper distributions).
Matrix loss_gradient(const Matrix& target, const Matrix& logits);

// Row-wise log-softmax.
Matrix log_softmax_rows(const Matrix& logits);

}  // namespace timet
