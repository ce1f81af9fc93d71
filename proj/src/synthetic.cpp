#include "timet/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

#include "timet/tensor_io.hpp"

namespace timet {

namespace fs = std::filesystem;

namespace {

struct Blob {
  int label;
  long r0, c0, h, w;
  double dr, dc;  // patch cells per frame
};

// Gram-Schmidt over Gaussian draws; returns [n, dim] with orthonormal rows.
Matrix orthonormal_signatures(int n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix sig(n, static_cast<Eigen::Index>(dim));
  for (int i = 0; i < n; ++i) {
    for (;;) {
      Vector v(static_cast<Eigen::Index>(dim));
      for (auto& x : v) x = gauss(rng);
      for (int j = 0; j < i; ++j) v -= sig.row(j).dot(v) * sig.row(j).transpose();
      const double norm = v.norm();
      if (norm > 1e-6) {
        sig.row(i) = v / norm;
        break;
      }
    }
  }
  return sig;
}

std::string numbered(const char* prefix, std::size_t i, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%03zu%s", prefix, i, suffix);
  return buf;
}

long wrap(long v, long n) { return ((v % n) + n) % n; }

}  // namespace

Manifest make_synthetic_dataset(const SyntheticSpec& spec, const fs::path& out_dir) {
  const auto rows = static_cast<long>(spec.grid.rows);
  const auto cols = static_cast<long>(spec.grid.cols);
  if (rows < 8 || cols < 8) throw std::invalid_argument("synthetic grid must be at least 8x8");
  if (spec.n_classes < 2) throw std::invalid_argument("synthetic dataset needs at least 2 classes");
  if (spec.dim < static_cast<std::size_t>(spec.n_classes)) {
    throw std::invalid_argument("feature dim must be at least the number of classes");
  }
  if (spec.n_clips == 0 || spec.frames_per_clip == 0) {
    throw std::invalid_argument("need at least one clip and one frame");
  }
  if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.motion_px_per_frame)) {
    throw std::invalid_argument("noise must be nonnegative and motion finite");
  }

  const long min_h = std::max(2L, rows / 5), max_h = std::max(2L, rows / 3);
  const long min_w = std::max(2L, cols / 5), max_w = std::max(2L, cols / 3);
  const long n_blobs = spec.n_classes - 1;
  if (n_blobs * min_h * min_w > rows * cols) {
    throw std::invalid_argument("blob area exceeds grid: " + std::to_string(n_blobs) +
                                " blobs of at least " + std::to_string(min_h * min_w) +
                                " cells on a " + std::to_string(rows * cols) + "-cell grid");
  }

  std::mt19937_64 rng(spec.seed);
  const Matrix signatures = orthonormal_signatures(spec.n_classes, spec.dim, rng);
  std::normal_distribution<double> noise(0.0, 1.0);

  fs::create_directories(out_dir);
  Manifest manifest;
  manifest.num_classes = spec.n_classes;
  manifest.grid = spec.grid;
  manifest.dim = spec.dim;

  for (std::size_t clip = 0; clip < spec.n_clips; ++clip) {
    // Non-overlapping initial placement by rejection sampling.
    std::vector<Blob> blobs;
    std::vector<char> occupied(static_cast<std::size_t>(rows * cols), 0);
    for (int label = 1; label < spec.n_classes; ++label) {
      bool placed = false;
      for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
        const long h = std::uniform_int_distribution<long>(min_h, max_h)(rng);
        const long w = std::uniform_int_distribution<long>(min_w, max_w)(rng);
        const long r0 = std::uniform_int_distribution<long>(0, rows - h)(rng);
        const long c0 = std::uniform_int_distribution<long>(0, cols - w)(rng);
        bool clash = false;
        for (long r = r0; r < r0 + h && !clash; ++r) {
          for (long c = c0; c < c0 + w; ++c) clash |= occupied[r * cols + c] != 0;
        }
        if (clash) continue;
        for (long r = r0; r < r0 + h; ++r) {
          for (long c = c0; c < c0 + w; ++c) occupied[r * cols + c] = 1;
        }
        const double heading = std::uniform_real_distribution<double>(0.0, 2 * std::numbers::pi)(rng);
        blobs.push_back({label, r0, c0, h, w, spec.motion_px_per_frame * std::sin(heading),
                         spec.motion_px_per_frame * std::cos(heading)});
        placed = true;
      }
      if (!placed) throw std::invalid_argument("blob area exceeds grid: could not place blobs");
    }

    const fs::path clip_dir = out_dir / numbered("clip_", clip, "");
    fs::create_directories(clip_dir);
    ClipEntry entry;
    entry.id = numbered("clip_", clip, "");
    entry.interval_s = spec.frame_interval_s;
    entry.masks.emplace();

    for (std::size_t t = 0; t < spec.frames_per_clip; ++t) {
      SegMask mask;
      mask.rows = spec.grid.rows;
      mask.cols = spec.grid.cols;
      mask.labels.assign(spec.grid.size(), 0);
      for (const Blob& b : blobs) {
        const long off_r = std::lround(static_cast<double>(t) * b.dr);
        const long off_c = std::lround(static_cast<double>(t) * b.dc);
        for (long r = 0; r < b.h; ++r) {
          for (long c = 0; c < b.w; ++c) {
            const long rr = wrap(b.r0 + off_r + r, rows);
            const long cc = wrap(b.c0 + off_c + c, cols);
            mask.labels[static_cast<std::size_t>(rr * cols + cc)] = b.label;
          }
        }
      }

      Matrix feats(static_cast<Eigen::Index>(spec.grid.size()), static_cast<Eigen::Index>(spec.dim));
      for (Eigen::Index p = 0; p < feats.rows(); ++p) {
        feats.row(p) = signatures.row(mask.labels[static_cast<std::size_t>(p)]);
        if (spec.noise_sigma > 0.0) {
          for (Eigen::Index d = 0; d < feats.cols(); ++d) feats(p, d) += spec.noise_sigma * noise(rng);
        }
      }

      const fs::path frame_path = clip_dir / numbered("frame_", t, ".npy");
      const fs::path mask_path = clip_dir / numbered("mask_", t, ".npy");
      save_tensor(matrix_to_tensor(feats), frame_path);
      save_mask(mask, mask_path);
      entry.frames.push_back(fs::absolute(frame_path));
      entry.masks->push_back(fs::absolute(mask_path));
    }
    manifest.clips.push_back(std::move(entry));
  }

  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace timet
