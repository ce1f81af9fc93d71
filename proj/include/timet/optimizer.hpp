#pragma once

#include <cstddef>

#include "timet/projection_head.hpp"

namespace timet {

// 0.5 * (1 + cos(pi * step / total_steps)) * (1 - final_fraction) + final_fraction.
double cosine_factor(std::size_t step, std::size_t total_steps, double final_fraction = 0.0);

struct OptimizerConfig {
  double base_lr = 1e-4;
  double weight_decay = 0.04;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t total_steps = 0;  // 0 disables the cosine schedule
  double final_fraction = 0.0;

  void validate() const;
  double lr_at(std::size_t step) const;
};

template <typename Scalar>
struct OptimizerState {
  HeadParams<Scalar> first_moment;
  HeadParams<Scalar> second_moment;
  std::size_t step = 0;

  static OptimizerState for_head(const ProjectionHead<Scalar>& head);
};

// Decoupled weight decay Adam update followed by prototype renormalization.
// The learning rate is cfg.lr_at(state.step). Non-finite gradients leave head
// and state untouched and throw std::invalid_argument. Returns the lr used.
template <typename Scalar>
double optimizer_step(ProjectionHead<Scalar>& head, const HeadParams<Scalar>& grads,
                      OptimizerState<Scalar>& state, const OptimizerConfig& cfg);

}  // namespace timet
