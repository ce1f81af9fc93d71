#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "timet/sinkhorn.hpp"

namespace timet {
namespace {

SinkhornConfig config(double lambda, std::size_t iters) {
  SinkhornConfig cfg;
  cfg.lambda_reg = lambda;
  cfg.n_iters = iters;
  return cfg;
}

double max_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

TEST(Sinkhorn, UniformInputGivesUniformOutput) {
  for (Eigen::Index b : {1, 3, 10}) {
    for (Eigen::Index k : {1, 2, 7}) {
      const Matrix lp = Matrix::Constant(b, k, -std::log(static_cast<double>(k)));
      const Matrix y = sinkhorn_labels(lp, SinkhornConfig{}).matrix();
      EXPECT_LT((y.array() - 1.0 / static_cast<double>(k)).abs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Sinkhorn, SinglePrototypeGivesOnes) {
  std::mt19937_64 rng(1);
  const Matrix y = sinkhorn_labels(oracle::random_log_probs(rng, 5, 1), SinkhornConfig{}).matrix();
  EXPECT_LT((y.array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Sinkhorn, TwoByTwoMatchesLongRunOracle) {
  Matrix lp(2, 2);
  lp << std::log(0.9), std::log(0.1), std::log(0.1), std::log(0.9);
  const Matrix y = sinkhorn_labels(lp, config(20, 100)).matrix();
  const Matrix expected = oracle::from_grid(oracle::sinkhorn_plain(oracle::to_grid(lp), 20, 10000));
  EXPECT_LT(max_diff(y, expected), 1e-6);
  EXPECT_EQ(oracle::row_argmax(oracle::to_grid(y)), (std::vector<int>{0, 1}));
}

TEST(Sinkhorn, MatchesPlainDomainOracleAtEveryIterationCount) {
  std::mt19937_64 rng(2);
  for (std::size_t iters : {1u, 2u, 3u, 10u}) {
    const Matrix lp = oracle::random_log_probs(rng, 12, 5);
    const Matrix y = sinkhorn_labels(lp, config(20, iters)).matrix();
    const Matrix expected = oracle::from_grid(oracle::sinkhorn_plain(oracle::to_grid(lp), 20, iters));
    EXPECT_LT(max_diff(y, expected), 1e-9) << iters;
  }
}

TEST(Sinkhorn, RowsExactColumnsConverge) {
  std::mt19937_64 rng(3);
  auto column_error = [](const Matrix& y) { return (y.colwise().sum().array() / 4.0 - 1.0).abs().maxCoeff(); };
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix lp = oracle::random_log_probs(rng, 64, 16);
    const Matrix y100 = sinkhorn_labels(lp, config(20, 100)).matrix();
    const Matrix y2000 = sinkhorn_labels(lp, config(20, 2000)).matrix();
    EXPECT_LT((y100.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-6);
    EXPECT_LT((y2000.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-6);
    EXPECT_GE(y100.minCoeff(), 0.0);
    EXPECT_LT(column_error(y2000), 1e-3);
    EXPECT_LE(column_error(y2000), column_error(y100));
  }
}

TEST(Sinkhorn, LowContrastColumnsConvergeWithinHundredIterations) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix lp = oracle::random_log_probs(rng, 64, 16, 0.1);
    const Matrix y = sinkhorn_labels(lp, config(20, 100)).matrix();
    EXPECT_LT((y.colwise().sum().array() / 4.0 - 1.0).abs().maxCoeff(), 1e-3);
  }
}

TEST(Sinkhorn, SharpLimitIsBalancedOptimum) {
  std::mt19937_64 rng(4);
  int checked = 0;
  const std::vector<std::pair<int, int>> shapes = {{4, 2}, {6, 3}, {8, 4}, {8, 2}, {4, 4}};
  for (int trial = 0; checked < 25 && trial < 500; ++trial) {
    const auto [b, k] = shapes[static_cast<std::size_t>(trial) % shapes.size()];
    const Matrix lp = oracle::random_log_probs(rng, b, k, 2.0);
    const oracle::BalancedOptimum opt = oracle::brute_force_balanced(oracle::to_grid(lp));
    if (opt.best - opt.runner_up < 0.2) continue;  // need a unique optimum with margin
    const Matrix y = sinkhorn_labels(lp, config(200, 5000)).matrix();
    EXPECT_EQ(oracle::row_argmax(oracle::to_grid(y)), opt.assignment) << lp;
    ++checked;
  }
  EXPECT_EQ(checked, 25);
}

TEST(Sinkhorn, PermutationEquivariant) {
  std::mt19937_64 rng(5);
  const Matrix lp = oracle::random_log_probs(rng, 10, 6);
  const Matrix y = sinkhorn_labels(lp, SinkhornConfig{}).matrix();
  Eigen::PermutationMatrix<Eigen::Dynamic> rows(10), cols(6);
  rows.setIdentity();
  cols.setIdentity();
  std::shuffle(rows.indices().data(), rows.indices().data() + 10, rng);
  std::shuffle(cols.indices().data(), cols.indices().data() + 6, rng);
  const Matrix permuted = rows * lp * cols;
  EXPECT_LT(max_diff(sinkhorn_labels(permuted, SinkhornConfig{}).matrix(), rows * y * cols), 1e-12);
}

TEST(Sinkhorn, DoesNotCollapse) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix logits = oracle::random_matrix(rng, 32, 8);
    logits.col(0).array() += 3.0;  // every row leans to prototype 0
    const Matrix y = sinkhorn_labels(log_softmax_rows(logits), SinkhornConfig{}).matrix();
    for (Eigen::Index c = 0; c < y.cols(); ++c) EXPECT_GE(y.col(c).maxCoeff(), 1e-6) << c;
  }
}

TEST(Sinkhorn, HardModeReturnsArgmaxOneHot) {
  std::mt19937_64 rng(7);
  const Matrix lp = oracle::random_log_probs(rng, 9, 4);
  SinkhornConfig cfg;
  const Matrix soft = sinkhorn_labels(lp, cfg).matrix();
  cfg.hard = true;
  const Matrix hard = sinkhorn_labels(lp, cfg).matrix();
  const std::vector<int> arg = oracle::row_argmax(oracle::to_grid(soft));
  for (Eigen::Index r = 0; r < 9; ++r) {
    for (Eigen::Index c = 0; c < 4; ++c) EXPECT_EQ(hard(r, c), c == arg[r] ? 1.0 : 0.0);
  }
}

TEST(Sinkhorn, RejectsBadInputs) {
  Matrix lp = Matrix::Constant(2, 2, -std::log(2.0));
  lp(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(sinkhorn_labels(lp, SinkhornConfig{}), std::invalid_argument);
  lp(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(sinkhorn_labels(lp, SinkhornConfig{}), std::invalid_argument);
  lp.row(0).setConstant(-std::numeric_limits<double>::infinity());
  EXPECT_THROW(sinkhorn_labels(lp, SinkhornConfig{}), std::invalid_argument);
  EXPECT_THROW(sinkhorn_labels(Matrix(0, 3), SinkhornConfig{}), std::invalid_argument);
  EXPECT_THROW(sinkhorn_labels(Matrix::Zero(2, 2), config(0, 3)), std::invalid_argument);
  EXPECT_THROW(sinkhorn_labels(Matrix::Zero(2, 2), config(20, 0)), std::invalid_argument);
}

TEST(ClusteringLoss, PerfectPredictionIsZero) {
  Matrix t = Matrix::Zero(3, 4), lp = Matrix::Constant(3, 4, -50.0);
  for (int r = 0; r < 3; ++r) {
    t(r, r) = 1.0;
    lp(r, r) = 0.0;
  }
  EXPECT_DOUBLE_EQ(clustering_loss(t, lp), 0.0);
}

TEST(ClusteringLoss, UniformIsLogK) {
  const Matrix t = Matrix::Constant(5, 7, 1.0 / 7);
  const Matrix lp = Matrix::Constant(5, 7, -std::log(7.0));
  EXPECT_NEAR(clustering_loss(t, lp), std::log(7.0), 1e-12);
}

TEST(ClusteringLoss, MatchesDoubleLoop) {
  std::mt19937_64 rng(8);
  const Matrix t = oracle::random_stochastic(rng, 4, 3);
  const Matrix lp = oracle::random_log_probs(rng, 4, 3);
  double acc = 0.0;
  for (int b = 0; b < 4; ++b) {
    for (int k = 0; k < 3; ++k) acc += t(b, k) * lp(b, k);
  }
  EXPECT_NEAR(clustering_loss(t, lp), -acc / 4.0, 1e-10);
  EXPECT_GE(clustering_loss(t, lp), 0.0);
  EXPECT_THROW(clustering_loss(t, Matrix::Zero(4, 2)), std::invalid_argument);
}

TEST(LossGradient, ZeroAtStationaryPoint) {
  std::mt19937_64 rng(9);
  const Matrix logits = oracle::random_matrix(rng, 6, 5);
  const Matrix soft = log_softmax_rows(logits).array().exp();
  EXPECT_LT(loss_gradient(soft, logits).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(LossGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> mass(0.2, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix logits = oracle::random_matrix(rng, 5, 4, 2.0);
    Matrix target = oracle::random_stochastic(rng, 5, 4);
    if (trial % 2 == 1) {
      for (Eigen::Index r = 0; r < 5; ++r) target.row(r) *= mass(rng);
    }
    const Matrix g = loss_gradient(target, logits);
    auto f = [&] { return clustering_loss(target, log_softmax_rows(logits)); };
    for (Eigen::Index r = 0; r < 5; ++r) {
      for (Eigen::Index c = 0; c < 4; ++c) {
        const double fd = oracle::central_difference(f, logits, r, c);
        EXPECT_LT(oracle::relative_error(g(r, c), fd, 1e-6), 1e-4) << trial << " " << r << "," << c;
      }
    }
    if (trial % 2 == 0) {
      EXPECT_LT(g.rowwise().sum().cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(LogSoftmax, RowsNormalizeAndResistOverflow) {
  Matrix logits(2, 3);
  logits << 1000, 1001, 999, -5, 0, 5;
  const Matrix lp = log_softmax_rows(logits);
  EXPECT_TRUE(lp.allFinite());
  EXPECT_LT((lp.array().exp().rowwise().sum() - 1.0).abs().maxCoeff(), 1e-12);
}

}  // namespace
}  // namespace timet
