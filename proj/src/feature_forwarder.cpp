#include "timet/feature_forwarder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace timet {

void ForwarderConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("forwarder temperature must be positive");
  }
  if (context_frames < 1) throw std::invalid_argument("forwarder needs at least one context frame");
}

std::size_t default_radius(GridShape grid) {
  const double side = static_cast<double>(std::min(grid.rows, grid.cols));
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(12.0 * side / 28.0)));
}

std::vector<Matrix> raw_affinity(std::span<const FeatureMap> sources, const FeatureMap& target,
                                 const ForwarderConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw std::invalid_argument("forwarder temperature must be positive");
  if (sources.empty()) throw std::invalid_argument("raw_affinity needs at least one source frame");
  const Matrix target_n = l2_normalize_rows(target.data);
  std::vector<Matrix> out;
  out.reserve(sources.size());
  for (const FeatureMap& src : sources) {
    if (!(src.grid == target.grid) || src.dim() != target.dim() ||
        src.data.rows() != target.data.rows()) {
      throw std::invalid_argument("source and target feature maps differ in grid or dim");
    }
    out.push_back(l2_normalize_rows(src.data) * target_n.transpose() / cfg.temperature);
  }
  return out;
}

bool in_window(GridShape grid, std::size_t i, std::size_t j, std::size_t radius) {
  const auto ri = static_cast<long>(i / grid.cols), ci = static_cast<long>(i % grid.cols);
  const auto rj = static_cast<long>(j / grid.cols), cj = static_cast<long>(j % grid.cols);
  const auto k = static_cast<long>(radius);
  return std::abs(ri - rj) <= k && std::abs(ci - cj) <= k;
}

AffinityStack normalize_affinity(std::span<const Matrix> raw, GridShape grid) {
  if (raw.empty()) throw std::invalid_argument("empty affinity stack");
  const auto n = static_cast<Eigen::Index>(grid.size());
  for (const Matrix& m : raw) {
    if (m.rows() != n || m.cols() != n) {
      throw std::invalid_argument("affinity matrix shape does not match grid " +
                                  std::to_string(grid.rows) + "x" + std::to_string(grid.cols));
    }
  }
  const auto s = static_cast<Eigen::Index>(raw.size());
  AffinityStack stack;
  stack.grid = grid;
  stack.num_sources = raw.size();
  stack.data.resize(s * n, n);
  for (Eigen::Index k = 0; k < s; ++k) stack.data.middleRows(k * n, n) = raw[static_cast<std::size_t>(k)];

  // Column-wise softmax; the max shift is exact under the normalization.
  for (Eigen::Index j = 0; j < n; ++j) {
    auto col = stack.data.col(j);
    const double shift = col.maxCoeff();
    col = (col.array() - shift).exp().matrix();
    col /= col.sum();
  }
  if (!stack.data.allFinite()) throw std::runtime_error("non-finite affinities after softmax");
  return stack;
}

void apply_neighborhood_mask(AffinityStack& stack, std::size_t radius) {
  const std::size_t n = stack.grid.size();
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (in_window(stack.grid, i, j, radius)) continue;
      for (std::size_t s = 0; s < stack.num_sources; ++s) {
        stack.data(static_cast<Eigen::Index>(s * n + i), static_cast<Eigen::Index>(j)) = 0.0;
      }
    }
  }
}

AffinityStack normalize_and_mask(std::span<const Matrix> raw, GridShape grid,
                                 const ForwarderConfig& cfg) {
  AffinityStack stack = normalize_affinity(raw, grid);
  if (cfg.neighborhood_radius < std::max(grid.rows, grid.cols)) {
    apply_neighborhood_mask(stack, cfg.neighborhood_radius);
  }
  return stack;
}

Matrix propagate(const AffinityStack& stack, std::span<const Matrix> source_maps) {
  if (source_maps.size() != stack.num_sources) {
    throw std::invalid_argument("got " + std::to_string(source_maps.size()) + " source maps for " +
                                std::to_string(stack.num_sources) + " source frames");
  }
  const auto n = static_cast<Eigen::Index>(stack.grid.size());
  const Eigen::Index k = source_maps.front().cols();
  Matrix stacked(static_cast<Eigen::Index>(source_maps.size()) * n, k);
  for (std::size_t s = 0; s < source_maps.size(); ++s) {
    const Matrix& m = source_maps[s];
    if (m.rows() != n || m.cols() != k) {
      throw std::invalid_argument("source map " + std::to_string(s) + " has shape " +
                                  std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    stacked.middleRows(static_cast<Eigen::Index>(s) * n, n) = m;
  }
  return stack.data.transpose() * stacked;
}

Matrix forward_maps(const ClipFeatures& clip, std::span<const Matrix> source_maps,
                    const ForwarderConfig& cfg) {
  cfg.validate();
  if (clip.num_frames() != cfg.context_frames + 1) {
    throw std::invalid_argument("clip has " + std::to_string(clip.num_frames()) +
                                " frames, forwarder expects " +
                                std::to_string(cfg.context_frames + 1));
  }
  if (source_maps.size() != cfg.context_frames) {
    throw std::invalid_argument("got " + std::to_string(source_maps.size()) +
                                " source maps for " + std::to_string(cfg.context_frames) +
                                " context frames");
  }
  const std::span<const FeatureMap> frames(clip.frames);
  const auto raw = raw_affinity(frames.first(cfg.context_frames), frames.back(), cfg);
  const AffinityStack stack = normalize_and_mask(raw, clip.frames.back().grid, cfg);
  return propagate(stack, source_maps);
}

FfMode parse_ff_mode(std::string_view name) {
  if (name == "none") return FfMode::kNone;
  if (name == "identity") return FfMode::kIdentity;
  if (name == "logits") return FfMode::kLogits;
  if (name == "sk") return FfMode::kSk;
  throw std::invalid_argument("unknown forwarding mode '" + std::string(name) +
                              "' (expected none|identity|logits|sk)");
}

std::string_view to_string(FfMode mode) {
  switch (mode) {
    case FfMode::kNone: return "none";
    case FfMode::kIdentity: return "identity";
    case FfMode::kLogits: return "logits";
    case FfMode::kSk: return "sk";
  }
  return "?";
}

Matrix forward_mode(FfMode mode, const FfInputs& in, const ForwarderConfig& cfg,
                    const ForwardFn& forward) {
  switch (mode) {
    case FfMode::kNone:
      if (in.target_labels == nullptr) throw std::invalid_argument("none mode needs target labels");
      return *in.target_labels;
    case FfMode::kIdentity:
      if (in.sk_maps.empty()) throw std::invalid_argument("identity mode needs source labels");
      return in.sk_maps.back();
    case FfMode::kLogits:
      if (in.clip == nullptr) throw std::invalid_argument("logits mode needs clip features");
      return forward(*in.clip, in.prob_maps, cfg);
    case FfMode::kSk:
      if (in.clip == nullptr) throw std::invalid_argument("sk mode needs clip features");
      return forward(*in.clip, in.sk_maps, cfg);
  }
  throw std::invalid_argument("unknown forwarding mode");
}

}  // namespace timet
