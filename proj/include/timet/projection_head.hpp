#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>

#include <Eigen/Dense>

namespace timet {

struct HeadConfig {
  std::size_t in_dim = 384;
  std::size_t hidden_dim = 2048;
  std::size_t out_dim = 256;
  std::size_t n_prototypes = 200;
  double temperature = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Parameter set of the head, also used for gradients and optimizer moments.
/// Biases are stored as single-column matrices so every tensor has one type.
template <typename Scalar>
struct HeadParams {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  static constexpr std::size_t kCount = 7;
  static constexpr std::array<std::string_view, kCount> kNames = {
      "w1", "b1", "w2", "b2", "w3", "b3", "prototypes"};

  Mat w1, b1;  // [hidden, in], [hidden, 1]
  Mat w2, b2;  // [hidden, hidden], [hidden, 1]
  Mat w3, b3;  // [out, hidden], [out, 1]
  Mat prototypes;  // [K, out], unit rows

  std::array<Mat*, kCount> tensors() { return {&w1, &b1, &w2, &b2, &w3, &b3, &prototypes}; }
  std::array<const Mat*, kCount> tensors() const {
    return {&w1, &b1, &w2, &b2, &w3, &b3, &prototypes};
  }

  static HeadParams zeros_like(const HeadParams& other);
  std::size_t numel() const;
  bool all_finite() const;
};

/// Activations kept by the forward pass for the backward pass.
template <typename Scalar>
struct HeadCache {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Mat input, pre1, act1, pre2, act2;
  Mat embed;  // unit rows
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> embed_norm;
};

template <typename Scalar>
struct HeadOutput {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Mat logits;     // [B, K]
  Mat log_probs;  // [B, K]
  HeadCache<Scalar> cache;
};

/// Clustering head: linear -> GELU -> linear -> GELU -> linear -> L2
/// normalize -> cosine logits against unit prototypes / temperature.
template <typename Scalar>
class ProjectionHead {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  ProjectionHead() = default;
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, Gaussian
  // prototypes projected to unit norm.
  explicit ProjectionHead(const HeadConfig& cfg);
  ProjectionHead(const HeadConfig& cfg, HeadParams<Scalar> params);

  HeadOutput<Scalar> forward(const Mat& features) const;
  // Normalized embedding only, no cache.
  Mat embed(const Mat& features) const;
  HeadParams<Scalar> backward(const HeadCache<Scalar>& cache, const Mat& grad_logits) const;

  void renormalize_prototypes();

  const HeadConfig& config() const { return cfg_; }
  const HeadParams<Scalar>& params() const { return params_; }
  HeadParams<Scalar>& mutable_params() { return params_; }

  template <typename Other>
  ProjectionHead<Other> cast() const;

 private:
  void check_shapes() const;

  HeadConfig cfg_;
  HeadParams<Scalar> params_;
};

// Exact GELU, x * Phi(x), and its derivative.
template <typename Scalar>
Scalar gelu(Scalar x);
template <typename Scalar>
Scalar gelu_grad(Scalar x);

// Component of a prototype gradient tangent to the unit sphere at each row:
// g - (g . p) p. This is the derivative of the forward pass composed with
// prototype renormalization.
template <typename Scalar>
typename HeadParams<Scalar>::Mat tangent_prototype_grad(const typename HeadParams<Scalar>::Mat& grad,
                                                        const typename HeadParams<Scalar>::Mat& prototypes);

// Checkpoint: one [1, numel] tensor file holding every parameter in
// declaration order, plus a JSON sidecar at <path>.json with the config and
// per-tensor shapes. Loading validates the shapes against the config.
template <typename Scalar>
void save_checkpoint(const ProjectionHead<Scalar>& head, const std::filesystem::path& path);
template <typename Scalar>
ProjectionHead<Scalar> load_checkpoint(const std::filesystem::path& path);

extern template class ProjectionHead<float>;
extern template class ProjectionHead<double>;

template <typename Scalar>
template <typename Other>
ProjectionHead<Other> ProjectionHead<Scalar>::cast() const {
  HeadParams<Other> p;
  auto dst = p.tensors();
  auto src = params_.tensors();
  for (std::size_t i = 0; i < HeadParams<Scalar>::kCount; ++i) *dst[i] = src[i]->template cast<Other>();
  return ProjectionHead<Other>(cfg_, std::move(p));
}

}  // namespace timet
