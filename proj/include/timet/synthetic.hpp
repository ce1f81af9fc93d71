#pragma once

#include <cstdint>
#include <filesystem>

#include "timet/manifest.hpp"

namespace timet {

/// Parameters of the moving-blob toy video dataset.
///
/// Class 0 is background; every other class appears as one rectangular blob
/// per clip. Each patch carries its class signature (mutually orthogonal unit
/// vectors, shared across the dataset) plus isotropic Gaussian noise. Blobs
/// translate by `motion_px_per_frame` patch cells per frame along a per-blob
/// random heading, wrapping around the grid; higher class IDs paint on top.
struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t n_clips = 8;
  std::size_t frames_per_clip = 4;
  GridShape grid{16, 16};
  std::size_t dim = 32;
  int n_classes = 4;
  double motion_px_per_frame = 1.0;
  double noise_sigma = 0.3;
  double frame_interval_s = 0.5;
};

// Writes <out_dir>/manifest.json plus per-clip frame and mask tensors and
// returns the manifest (with absolute paths). Throws std::invalid_argument on
// bad parameters, including blobs that cannot fit on the grid.
Manifest make_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace timet
