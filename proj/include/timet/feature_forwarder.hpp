#pragma once

// Propagation of soft cluster maps from context frames to a target frame
// through temperature-sharpened, neighborhood-masked cross-frame affinities.
//
// For context frames s = 0..S-1 and target frame T:
//   raw[s](i, j)   = <phi_s(i), phi_T(j)> / tau         (rows L2-normalized)
//   A(s*N+i, j)    = exp(raw[s](i, j)) / sum_{s', i'} exp(raw[s'](i', j))
//   A(s*N+i, j)    = 0  if patch i is outside the window of radius k around j
//   out(j, :)      = sum_{s, i} A(s*N+i, j) * map_s(i, :)
// Masking happens after the joint softmax and there is no renormalization, so
// propagated rows may be sub-stochastic.

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "timet/types.hpp"

namespace timet {

struct ForwarderConfig {
  double temperature = 0.1;
  std::size_t neighborhood_radius = 12;  // Chebyshev, in patch cells
  std::size_t context_frames = 3;

  void validate() const;
};

// Default radius scaled from 12 on a 28x28 grid: round(12 * min(rows, cols) / 28), at least 1.
std::size_t default_radius(GridShape grid);

/// Stacked, column-normalized transition weights, [S*N, N].
struct AffinityStack {
  Matrix data;
  GridShape grid;
  std::size_t num_sources = 0;
};

// One [N, N] matrix per source frame.
std::vector<Matrix> raw_affinity(std::span<const FeatureMap> sources, const FeatureMap& target,
                                 const ForwarderConfig& cfg);

// Joint softmax over the stacked source axis followed by neighborhood masking.
AffinityStack normalize_and_mask(std::span<const Matrix> raw, GridShape grid,
                                 const ForwarderConfig& cfg);

// Joint softmax only; column sums are 1.
AffinityStack normalize_affinity(std::span<const Matrix> raw, GridShape grid);
void apply_neighborhood_mask(AffinityStack& stack, std::size_t radius);

// Patches i and j lie within Chebyshev distance `radius` on `grid`.
bool in_window(GridShape grid, std::size_t i, std::size_t j, std::size_t radius);

// out = stack^T * vstack(source_maps), [N, K].
Matrix propagate(const AffinityStack& stack, std::span<const Matrix> source_maps);

// The last frame of `clip` is the target; the preceding S frames are the
// sources, one map per source. Requires S == cfg.context_frames.
Matrix forward_maps(const ClipFeatures& clip, std::span<const Matrix> source_maps,
                    const ForwarderConfig& cfg);

enum class FfMode { kNone, kIdentity, kLogits, kSk };

FfMode parse_ff_mode(std::string_view name);
std::string_view to_string(FfMode mode);

/// Per-clip inputs for the forwarding ablation.
struct FfInputs {
  const ClipFeatures* clip = nullptr;
  std::span<const Matrix> sk_maps;      // Sinkhorn labels of the context frames
  std::span<const Matrix> prob_maps;    // raw head probabilities of the context frames
  const Matrix* target_labels = nullptr;  // the target frame's own Sinkhorn labels
};

using ForwardFn =
    std::function<Matrix(const ClipFeatures&, std::span<const Matrix>, const ForwarderConfig&)>;

// Builds the target distribution for the target frame under `mode`:
//   none     -> the target frame's own labels (forwarder not invoked)
//   identity -> the last context frame's labels, unchanged
//   logits   -> forwarded head probabilities
//   sk       -> forwarded Sinkhorn labels
Matrix forward_mode(FfMode mode, const FfInputs& in, const ForwarderConfig& cfg,
                    const ForwardFn& forward = forward_maps);

}  // namespace timet
