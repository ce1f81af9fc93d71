#include "timet/time_tuner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace timet {

namespace {

using MatF = Eigen::MatrixXf;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Frames that act as forwarding sources for a clip under cfg.
std::vector<std::size_t> source_indices(const TrainConfig& cfg) {
  if (cfg.first_frame_only) return {0};
  std::vector<std::size_t> idx(cfg.forwarder.context_frames);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

MatF stack_frames(std::span<const ClipFeatures> batch, std::span<const std::size_t> frame_idx,
                  bool last_only) {
  const ClipFeatures& first = batch.front();
  const auto n = static_cast<Eigen::Index>(first.frames.front().num_patches());
  const auto d = static_cast<Eigen::Index>(first.frames.front().dim());
  const std::size_t per_clip = last_only ? 1 : frame_idx.size();
  MatF out(static_cast<Eigen::Index>(batch.size() * per_clip) * n, d);
  Eigen::Index row = 0;
  for (const ClipFeatures& clip : batch) {
    if (last_only) {
      out.middleRows(row, n) = clip.frames.back().data.cast<float>();
      row += n;
      continue;
    }
    for (std::size_t f : frame_idx) {
      out.middleRows(row, n) = clip.frames[f].data.cast<float>();
      row += n;
    }
  }
  return out;
}

// Sinkhorn over `log_probs` either jointly or in blocks of `block_rows`.
Matrix sinkhorn_blocks(const Matrix& log_probs, const SinkhornConfig& cfg, bool per_block,
                       Eigen::Index block_rows) {
  if (!per_block) return sinkhorn_labels(log_probs, cfg).matrix();
  Matrix out(log_probs.rows(), log_probs.cols());
  for (Eigen::Index r = 0; r < log_probs.rows(); r += block_rows) {
    out.middleRows(r, block_rows) =
        sinkhorn_labels(log_probs.middleRows(r, block_rows), cfg).matrix();
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (batch_clips < 1) throw std::invalid_argument("batch_clips must be at least 1");
  if (frame_stride < 1) throw std::invalid_argument("frame_stride must be at least 1");
  if (!(sample_interval_s >= 0.0)) throw std::invalid_argument("sample interval must be nonnegative");
  forwarder.validate();
  sinkhorn.validate();
  optimizer.validate();
  HeadConfig h = head;
  h.in_dim = std::max<std::size_t>(h.in_dim, 1);
  h.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {
      {"epochs", epochs},
      {"batch_clips", batch_clips},
      {"ff_mode", std::string(to_string(ff_mode))},
      {"seed", seed},
      {"frame_stride", frame_stride},
      {"sample_interval_s", sample_interval_s},
      {"per_frame_sinkhorn", per_frame_sinkhorn},
      {"first_frame_only", first_frame_only},
      {"forwarder",
       {{"temperature", forwarder.temperature},
        {"neighborhood_radius", forwarder.neighborhood_radius},
        {"context_frames", forwarder.context_frames}}},
      {"sinkhorn", {{"lambda", sinkhorn.lambda_reg}, {"n_iters", sinkhorn.n_iters}, {"hard", sinkhorn.hard}}},
      {"head",
       {{"in_dim", head.in_dim},
        {"hidden_dim", head.hidden_dim},
        {"out_dim", head.out_dim},
        {"n_prototypes", head.n_prototypes},
        {"temperature", head.temperature}}},
      {"optimizer",
       {{"base_lr", optimizer.base_lr},
        {"weight_decay", optimizer.weight_decay},
        {"beta1", optimizer.beta1},
        {"beta2", optimizer.beta2},
        {"eps", optimizer.eps},
        {"final_fraction", optimizer.final_fraction}}},
  };
}

BatchTargets compute_targets(std::span<const ClipFeatures> batch, const ProjectionHead<float>& head,
                             const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  const std::size_t frames_needed = cfg.forwarder.context_frames + 1;
  for (const ClipFeatures& clip : batch) {
    clip.validate();
    if (clip.num_frames() != frames_needed) {
      throw std::invalid_argument("clip '" + clip.clip_id + "' has " +
                                  std::to_string(clip.num_frames()) + " frames, training needs " +
                                  std::to_string(frames_needed));
    }
    if (!(clip.frames.front().grid == batch.front().frames.front().grid) ||
        clip.frames.front().dim() != batch.front().frames.front().dim()) {
      throw std::invalid_argument("clips in a batch must share grid and feature dim");
    }
  }
  const auto n = static_cast<Eigen::Index>(batch.front().frames.front().num_patches());
  const std::vector<std::size_t> sources = source_indices(cfg);
  const auto s = static_cast<Eigen::Index>(sources.size());

  BatchTargets out;
  auto target_out = head.forward(stack_frames(batch, sources, /*last_only=*/true));
  const Matrix target_lp = target_out.log_probs.cast<double>();
  const Matrix target_logits = target_out.logits.cast<double>();
  out.cache = std::move(target_out.cache);

  // Targets carry no gradient: everything below is computed from detached values.
  Matrix context_lp;
  Matrix context_labels;
  Matrix target_labels;
  if (cfg.ff_mode == FfMode::kNone) {
    target_labels = sinkhorn_blocks(target_lp, cfg.sinkhorn, cfg.per_frame_sinkhorn, n);
  } else {
    context_lp = head.forward(stack_frames(batch, sources, false)).log_probs.cast<double>();
    if (cfg.ff_mode != FfMode::kLogits) {
      context_labels = sinkhorn_blocks(context_lp, cfg.sinkhorn, cfg.per_frame_sinkhorn, n);
    }
  }

  ForwarderConfig fwd = cfg.forwarder;
  if (cfg.first_frame_only) fwd.context_frames = 1;

  for (std::size_t c = 0; c < batch.size(); ++c) {
    const ClipFeatures& clip = batch[c];
    ClipFeatures window;
    if (cfg.first_frame_only) {
      window.clip_id = clip.clip_id;
      window.frame_interval_s = clip.frame_interval_s;
      window.frames = {clip.frames.front(), clip.frames.back()};
    }
    std::vector<Matrix> sk_maps, prob_maps;
    const Eigen::Index base = static_cast<Eigen::Index>(c) * s * n;
    if (cfg.ff_mode == FfMode::kSk || cfg.ff_mode == FfMode::kIdentity) {
      for (Eigen::Index k = 0; k < s; ++k) sk_maps.push_back(context_labels.middleRows(base + k * n, n));
    } else if (cfg.ff_mode == FfMode::kLogits) {
      for (Eigen::Index k = 0; k < s; ++k) {
        prob_maps.push_back(context_lp.middleRows(base + k * n, n).array().exp().matrix());
      }
    }
    Matrix own;
    if (cfg.ff_mode == FfMode::kNone) own = target_labels.middleRows(static_cast<Eigen::Index>(c) * n, n);

    FfInputs in;
    in.clip = cfg.first_frame_only ? &window : &clip;
    in.sk_maps = sk_maps;
    in.prob_maps = prob_maps;
    in.target_labels = cfg.ff_mode == FfMode::kNone ? &own : nullptr;
    out.targets.push_back(forward_mode(cfg.ff_mode, in, fwd));
    out.target_logits.push_back(target_logits.middleRows(static_cast<Eigen::Index>(c) * n, n));
  }
  return out;
}

StepResult train_step(std::span<const ClipFeatures> batch, ProjectionHead<float>& head,
                      OptimizerState<float>& state, const TrainConfig& cfg) {
  BatchTargets bt = compute_targets(batch, head, cfg);
  const auto n = bt.target_logits.front().rows();
  const auto k = bt.target_logits.front().cols();
  const double clips = static_cast<double>(batch.size());

  double loss = 0.0;
  Matrix grad_logits(static_cast<Eigen::Index>(batch.size()) * n, k);
  for (std::size_t c = 0; c < batch.size(); ++c) {
    const Matrix lp = log_softmax_rows(bt.target_logits[c]);
    loss += clustering_loss(bt.targets[c], lp) / clips;
    grad_logits.middleRows(static_cast<Eigen::Index>(c) * n, n) =
        loss_gradient(bt.targets[c], bt.target_logits[c]) / clips;
  }
  if (!std::isfinite(loss)) {
    throw std::runtime_error("non-finite training loss at optimizer step " +
                             std::to_string(state.step) + " (batch of " +
                             std::to_string(batch.size()) + " clips, first '" +
                             batch.front().clip_id + "')");
  }
  const HeadParams<float> grads = head.backward(bt.cache, grad_logits.cast<float>());
  StepResult r;
  r.loss = loss;
  r.lr = optimizer_step(head, grads, state, cfg.optimizer);
  return r;
}

TrainResult train(const Manifest& manifest, const TrainConfig& cfg_in) {
  TrainConfig cfg = cfg_in;
  cfg.head.in_dim = manifest.dim;
  cfg.head.seed = cfg.seed;
  cfg.validate();
  const auto t0 = Clock::now();

  struct Usable {
    ClipFeatures clip;
    std::size_t stride;
  };
  std::vector<Usable> usable;
  TrainReport report;
  const std::size_t s = cfg.forwarder.context_frames;
  for (const ClipEntry& entry : manifest.clips) {
    std::size_t stride = cfg.frame_stride;
    if (cfg.sample_interval_s > 0.0 && entry.interval_s > 0.0) {
      stride = std::max<std::size_t>(1, static_cast<std::size_t>(
                                            std::lround(cfg.sample_interval_s / entry.interval_s)));
    }
    if (entry.frames.size() < s * stride + 1) {
      spdlog::warn("skipping clip '{}': {} frames, window needs {}", entry.id, entry.frames.size(),
                   s * stride + 1);
      ++report.clips_skipped;
      continue;
    }
    usable.push_back({load_clip(manifest, entry), stride});
  }
  if (usable.empty()) throw std::runtime_error("no clip in the manifest is long enough to train on");
  report.clips_used = usable.size();

  const std::size_t steps_per_epoch = (usable.size() + cfg.batch_clips - 1) / cfg.batch_clips;
  cfg.optimizer.total_steps = cfg.epochs * steps_per_epoch;
  report.config = cfg.to_json();

  ProjectionHead<float> head(cfg.head);
  OptimizerState<float> state = OptimizerState<float>::for_head(head);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(usable.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_clips) {
      std::vector<ClipFeatures> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_clips); ++i) {
        const Usable& u = usable[order[i]];
        const std::size_t span = s * u.stride + 1;
        const std::size_t start =
            std::uniform_int_distribution<std::size_t>(0, u.clip.num_frames() - span)(rng);
        ClipFeatures window;
        window.clip_id = u.clip.clip_id;
        window.frame_interval_s = u.clip.frame_interval_s * static_cast<double>(u.stride);
        for (std::size_t f = 0; f <= s; ++f) window.frames.push_back(u.clip.frames[start + f * u.stride]);
        batch.push_back(std::move(window));
      }
      const StepResult r = train_step(batch, head, state, cfg);
      StepLog log{state.step, epoch, r.loss, r.lr, ms_since(t0)};
      report.steps.push_back(log);
      if (cfg.log_every > 0 && state.step % cfg.log_every == 0) {
        spdlog::info("step {} epoch {} loss {:.6f} lr {:.3g}", log.step, epoch, log.loss, log.lr);
      }
    }
  }
  report.wall_ms = ms_since(t0);

  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    report.checkpoint = cfg.output_dir / "head.npy";
    report.loss_log = cfg.output_dir / "loss.csv";
    save_checkpoint(head, report.checkpoint);
    write_loss_log(report, report.loss_log);
  }
  return {std::move(report), std::move(head)};
}

void write_loss_log(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot write loss log");
  out << "step,epoch,loss,lr,wall_ms\n";
  out.precision(10);
  for (const StepLog& s : report.steps) {
    out << s.step << ',' << s.epoch << ',' << s.loss << ',' << s.lr << ',' << s.wall_ms << '\n';
  }
}

}  // namespace timet
