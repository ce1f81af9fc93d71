#include "timet/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace timet {

double cosine_factor(std::size_t step, std::size_t total_steps, double final_fraction) {
  if (step > total_steps) {
    throw std::invalid_argument("cosine schedule step " + std::to_string(step) + " past total " +
                                std::to_string(total_steps));
  }
  if (total_steps == 0) return 1.0;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress)) * (1.0 - final_fraction) +
         final_fraction;
}

void OptimizerConfig::validate() const {
  if (!(base_lr >= 0.0) || !(weight_decay >= 0.0)) {
    throw std::invalid_argument("learning rate and weight decay must be nonnegative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw std::invalid_argument("betas must lie in [0, 1) and eps must be positive");
  }
  if (!(final_fraction >= 0.0 && final_fraction <= 1.0)) {
    throw std::invalid_argument("final_fraction must lie in [0, 1]");
  }
}

double OptimizerConfig::lr_at(std::size_t step) const {
  if (total_steps == 0) return base_lr;
  return base_lr * cosine_factor(std::min(step, total_steps), total_steps, final_fraction);
}

template <typename Scalar>
OptimizerState<Scalar> OptimizerState<Scalar>::for_head(const ProjectionHead<Scalar>& head) {
  OptimizerState s;
  s.first_moment = HeadParams<Scalar>::zeros_like(head.params());
  s.second_moment = HeadParams<Scalar>::zeros_like(head.params());
  return s;
}

template <typename Scalar>
double optimizer_step(ProjectionHead<Scalar>& head, const HeadParams<Scalar>& grads,
                      OptimizerState<Scalar>& state, const OptimizerConfig& cfg) {
  cfg.validate();
  if (!grads.all_finite()) throw std::invalid_argument("optimizer step rejected: non-finite gradients");
  auto params = head.mutable_params().tensors();
  auto g = grads.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  for (std::size_t i = 0; i < HeadParams<Scalar>::kCount; ++i) {
    if (g[i]->rows() != params[i]->rows() || g[i]->cols() != params[i]->cols() ||
        m[i]->rows() != params[i]->rows() || m[i]->cols() != params[i]->cols()) {
      throw std::invalid_argument("optimizer: shape mismatch for '" +
                                  std::string(HeadParams<Scalar>::kNames[i]) + "'");
    }
  }

  const double lr = cfg.lr_at(state.step);
  const std::size_t t = state.step + 1;
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  const auto bias1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const auto bias2_sqrt = static_cast<Scalar>(std::sqrt(1.0 - std::pow(cfg.beta2, static_cast<double>(t))));
  const auto step_size = static_cast<Scalar>(lr) / bias1;
  const auto decay = static_cast<Scalar>(1.0 - lr * cfg.weight_decay);
  const auto eps = static_cast<Scalar>(cfg.eps);

  for (std::size_t i = 0; i < HeadParams<Scalar>::kCount; ++i) {
    auto& p = *params[i];
    p *= decay;
    *m[i] = b1 * *m[i] + (Scalar(1) - b1) * *g[i];
    *v[i] = b2 * *v[i] + (Scalar(1) - b2) * g[i]->cwiseAbs2();
    const auto denom = (v[i]->array().sqrt() / bias2_sqrt) + eps;
    p.array() -= step_size * m[i]->array() / denom;
  }
  head.renormalize_prototypes();
  state.step = t;
  return lr;
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template double optimizer_step<float>(ProjectionHead<float>&, const HeadParams<float>&,
                                      OptimizerState<float>&, const OptimizerConfig&);
template double optimizer_step<double>(ProjectionHead<double>&, const HeadParams<double>&,
                                       OptimizerState<double>&, const OptimizerConfig&);

}  // namespace timet
