#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "timet/feature_forwarder.hpp"
#include "timet/manifest.hpp"
#include "timet/optimizer.hpp"
#include "timet/projection_head.hpp"
#include "timet/sinkhorn.hpp"

namespace timet {

struct TrainConfig {
  std::size_t epochs = 12;
  std::size_t batch_clips = 128;
  ForwarderConfig forwarder;
  SinkhornConfig sinkhorn;
  HeadConfig head;  // in_dim is taken from the manifest by train()
  OptimizerConfig optimizer;
  FfMode ff_mode = FfMode::kSk;
  std::uint64_t seed = 0;
  std::size_t log_every = 0;  // 0 silences progress logging

  // Frame spacing of a training window. When sample_interval_s > 0 the index
  // stride is round(sample_interval_s / clip interval), else frame_stride.
  std::size_t frame_stride = 1;
  double sample_interval_s = 0.0;

  bool per_frame_sinkhorn = false;  // one Sinkhorn problem per context frame
  bool first_frame_only = false;    // forward from the first context frame alone

  std::filesystem::path output_dir;  // empty: keep everything in memory

  void validate() const;
  nlohmann::json to_json() const;
};

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainReport {
  std::vector<StepLog> steps;
  double wall_ms = 0.0;
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  std::size_t clips_used = 0;
  std::size_t clips_skipped = 0;
  nlohmann::json config;
};

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
};

/// Per-clip target distributions for the last frame of every clip, without
/// touching the head parameters. Exposed for tests and diagnostics.
struct BatchTargets {
  std::vector<Matrix> targets;       // one [N, K] matrix per clip
  std::vector<Matrix> target_logits;  // head logits of each clip's last frame
  HeadCache<float> cache;            // cache of the stacked target-frame forward
};

BatchTargets compute_targets(std::span<const ClipFeatures> batch, const ProjectionHead<float>& head,
                             const TrainConfig& cfg);

// One optimization step on a batch of clips, each with context_frames + 1
// frames. Returns the loss evaluated before the update.
StepResult train_step(std::span<const ClipFeatures> batch, ProjectionHead<float>& head,
                      OptimizerState<float>& state, const TrainConfig& cfg);

struct TrainResult {
  TrainReport report;
  ProjectionHead<float> head;
};

TrainResult train(const Manifest& manifest, const TrainConfig& cfg);

void write_loss_log(const TrainReport& report, const std::filesystem::path& path);

}  // namespace timet
