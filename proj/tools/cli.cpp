#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "timet/feature_forwarder.hpp"
#include "timet/manifest.hpp"
#include "timet/pipeline.hpp"
#include "timet/segmentation_eval.hpp"
#include "timet/synthetic.hpp"
#include "timet/tensor_io.hpp"
#include "timet/time_tuner.hpp"

namespace timet::cli {

namespace fs = std::filesystem;

namespace {

// Bad flags, missing inputs and violated invariants.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out;
};

struct SynthOptions {
  std::size_t clips = 8;
  std::size_t frames = 4;
  std::string grid = "16";
  std::size_t dim = 32;
  int classes = 4;
  double motion = 1.0;
  double noise = 0.3;
  double interval = 0.5;
};

struct TrainOptions {
  std::string manifest;
  std::size_t epochs = 12;
  std::size_t batch_clips = 128;
  std::size_t prototypes = 200;
  std::size_t hidden = 2048;
  std::size_t embed_dim = 256;
  double head_temperature = 0.1;
  double lr = 1e-4;
  double weight_decay = 0.04;
  double final_lr_fraction = 0.0;
  std::string ff_mode = "sk";
  double temperature = 0.1;
  std::optional<std::size_t> radius;
  std::size_t context = 3;
  double lambda = 20.0;
  std::size_t sk_iters = 3;
  std::size_t stride = 1;
  double sample_interval = 0.0;
  bool per_frame_sinkhorn = false;
  bool first_frame_only = false;
  std::size_t log_every = 0;
};

struct EvalOptions {
  std::string manifest;
  std::string checkpoint;
  std::string scope = "dataset";
  std::string k = "gt";
  std::string matching = "hungarian";
  std::size_t seeds = 5;
  std::size_t kmeans_iters = 100;
  std::size_t mask_downsample = 0;
};

struct PropagateOptions {
  std::string manifest;
  std::string clip;
  std::vector<std::string> frames;
  std::vector<std::string> maps;
  std::string grid;
  double temperature = 0.1;
  std::optional<std::size_t> radius;
};

GridShape parse_grid(const std::string& text) {
  try {
    const auto x = text.find_first_of("xX");
    std::size_t pos = 0;
    if (x == std::string::npos) {
      const auto side = std::stoul(text, &pos);
      if (pos != text.size()) throw std::invalid_argument(text);
      return {side, side};
    }
    const auto rows = std::stoul(text.substr(0, x), &pos);
    const auto cols = std::stoul(text.substr(x + 1));
    return {rows, cols};
  } catch (const std::exception&) {
    throw UsageError("bad grid '" + text + "' (expected N or RxC)");
  }
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("--") + what + " is required");
  if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
}

void write_json(const nlohmann::json& j, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
}

int cmd_synth(const GlobalOptions& g, const SynthOptions& o, std::ostream& out) {
  if (g.out.empty()) throw UsageError("synth needs --out DIR");
  SyntheticSpec spec;
  spec.seed = g.seed;
  spec.n_clips = o.clips;
  spec.frames_per_clip = o.frames;
  spec.grid = parse_grid(o.grid);
  spec.dim = o.dim;
  spec.n_classes = o.classes;
  spec.motion_px_per_frame = o.motion;
  spec.noise_sigma = o.noise;
  spec.frame_interval_s = o.interval;
  make_synthetic_dataset(spec, g.out);
  out << (fs::path(g.out) / "manifest.json").string() << '\n';
  return kExitOk;
}

int cmd_train(const GlobalOptions& g, const TrainOptions& o, std::ostream& out) {
  require_file(o.manifest, "manifest");
  if (g.out.empty()) throw UsageError("train needs --out DIR");
  const Manifest manifest = load_manifest(o.manifest);

  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_clips = o.batch_clips;
  cfg.seed = g.seed;
  cfg.ff_mode = parse_ff_mode(o.ff_mode);
  cfg.head.hidden_dim = o.hidden;
  cfg.head.out_dim = o.embed_dim;
  cfg.head.n_prototypes = o.prototypes;
  cfg.head.temperature = o.head_temperature;
  cfg.optimizer.base_lr = o.lr;
  cfg.optimizer.weight_decay = o.weight_decay;
  cfg.optimizer.final_fraction = o.final_lr_fraction;
  cfg.forwarder.temperature = o.temperature;
  cfg.forwarder.neighborhood_radius = o.radius ? *o.radius : default_radius(manifest.grid);
  cfg.forwarder.context_frames = o.context;
  cfg.sinkhorn.lambda_reg = o.lambda;
  cfg.sinkhorn.n_iters = o.sk_iters;
  cfg.frame_stride = o.stride;
  cfg.sample_interval_s = o.sample_interval;
  cfg.per_frame_sinkhorn = o.per_frame_sinkhorn;
  cfg.first_frame_only = o.first_frame_only;
  cfg.log_every = o.log_every;
  cfg.output_dir = g.out;
  cfg.validate();

  const TrainResult r = train(manifest, cfg);
  nlohmann::json report = {
      {"checkpoint", r.report.checkpoint.string()},
      {"loss_log", r.report.loss_log.string()},
      {"steps", r.report.steps.size()},
      {"final_loss", r.report.steps.empty() ? 0.0 : r.report.steps.back().loss},
      {"clips_used", r.report.clips_used},
      {"clips_skipped", r.report.clips_skipped},
      {"wall_ms", r.report.wall_ms},
      {"config", r.report.config},
  };
  write_json(report, (fs::path(g.out) / "train_report.json").string(), out);
  out << r.report.checkpoint.string() << '\n';
  return kExitOk;
}

int cmd_eval(const GlobalOptions& g, const EvalOptions& o, std::ostream& out) {
  require_file(o.manifest, "manifest");
  EvalConfig cfg;
  cfg.scope = parse_scope(o.scope);
  cfg.matching = parse_matching(o.matching);
  if (o.k != "gt") {
    try {
      std::size_t pos = 0;
      cfg.k = std::stoul(o.k, &pos);
      if (pos != o.k.size()) throw std::invalid_argument(o.k);
    } catch (const std::exception&) {
      throw UsageError("--k must be a positive integer or 'gt', got '" + o.k + "'");
    }
  }
  if (!cfg.k && o.mask_downsample > 0) {
    throw UsageError("--mask-downsample is an overclustering option and cannot be combined with --k gt");
  }
  if (o.seeds < 1) throw UsageError("--seeds must be at least 1");
  cfg.seeds.clear();
  for (std::size_t i = 0; i < o.seeds; ++i) cfg.seeds.push_back(g.seed + i);
  cfg.kmeans_iters = o.kmeans_iters;
  cfg.mask_downsample = o.mask_downsample;
  cfg.threads = g.threads;
  cfg.validate();

  const Manifest manifest = load_manifest(o.manifest);
  std::vector<EvalClip> clips = load_eval_clips(manifest);
  if (!o.checkpoint.empty()) {
    require_file(o.checkpoint, "checkpoint");
    embed_clips(clips, load_checkpoint<float>(o.checkpoint));
  }
  const EvalReport report = evaluate(clips, manifest.num_classes, cfg);
  write_json(report.to_json(), g.out, out);
  return kExitOk;
}

int cmd_propagate(const GlobalOptions& g, const PropagateOptions& o, std::ostream& out) {
  if (g.out.empty()) throw UsageError("propagate needs --out FILE");
  ClipFeatures clip;
  if (!o.manifest.empty()) {
    require_file(o.manifest, "manifest");
    if (!o.frames.empty()) throw UsageError("use either --manifest/--clip or --frames, not both");
    const Manifest m = load_manifest(o.manifest);
    const ClipEntry* entry = nullptr;
    for (const auto& c : m.clips) {
      if (c.id == o.clip) entry = &c;
    }
    if (entry == nullptr) throw UsageError("clip '" + o.clip + "' not in manifest");
    clip = load_clip(m, *entry);
  } else {
    if (o.frames.size() < 2) throw UsageError("propagate needs --manifest/--clip or at least two --frames");
    for (const auto& f : o.frames) {
      require_file(f, "frames");
      const Tensor t = load_tensor(f);
      GridShape grid;
      if (t.shape.size() == 3) {
        grid = {t.shape[0], t.shape[1]};
      } else if (!o.grid.empty()) {
        grid = parse_grid(o.grid);
      } else {
        throw UsageError("--grid is required for [N, D] frame tensors");
      }
      clip.frames.push_back(load_feature_map(f, grid));
    }
    clip.clip_id = "cli";
    clip.validate();
  }
  if (o.maps.size() + 1 != clip.num_frames()) {
    throw UsageError("got " + std::to_string(o.maps.size()) + " source maps for a clip of " +
                     std::to_string(clip.num_frames()) + " frames (need one per context frame)");
  }
  std::vector<Matrix> maps;
  for (const auto& p : o.maps) {
    require_file(p, "maps");
    maps.push_back(tensor_to_matrix(load_tensor(p)));
  }
  ForwarderConfig cfg;
  cfg.temperature = o.temperature;
  cfg.context_frames = clip.num_frames() - 1;
  cfg.neighborhood_radius = o.radius ? *o.radius : default_radius(clip.frames.front().grid);
  const Matrix target = forward_maps(clip, maps, cfg);
  save_tensor(matrix_to_tensor(target), g.out);
  out << g.out << '\n';
  return kExitOk;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

void configure_logging() {
  if (const char* level = std::getenv("TIMET_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  } else {
    spdlog::set_level(spdlog::level::warn);
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_logging();
  CLI::App app{"Temporal dense clustering: synthetic data, head training, propagation and evaluation", "timet"};
  app.set_config("--config", "", "TOML-style key = value file; command-line flags win");
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker cap for parallel evaluation")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--out", g.out, "Output directory (synth, train) or file (eval, propagate)");

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Write a moving-blob synthetic dataset");
  synth->add_option("--clips", so.clips, "Number of clips")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--frames", so.frames, "Frames per clip")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--grid", so.grid, "Patch grid, N or RxC")->capture_default_str();
  synth->add_option("--dim", so.dim, "Feature dimension")->capture_default_str();
  synth->add_option("--classes", so.classes, "Classes including background")->capture_default_str();
  synth->add_option("--motion", so.motion, "Blob motion in patch cells per frame")->capture_default_str();
  synth->add_option("--noise", so.noise, "Feature noise standard deviation")->capture_default_str();
  synth->add_option("--interval", so.interval, "Seconds between frames")->capture_default_str();

  TrainOptions to;
  auto* trn = app.add_subcommand("train", "Train the clustering head on a manifest");
  trn->add_option("--manifest", to.manifest, "Dataset manifest JSON");
  trn->add_option("--epochs", to.epochs, "Training epochs")->capture_default_str();
  trn->add_option("--batch-clips", to.batch_clips, "Clips per optimizer step")->capture_default_str();
  trn->add_option("--prototypes", to.prototypes, "Number of prototypes")->capture_default_str();
  trn->add_option("--hidden", to.hidden, "Hidden width of the head")->capture_default_str();
  trn->add_option("--embed-dim", to.embed_dim, "Embedding width of the head")->capture_default_str();
  trn->add_option("--head-temperature", to.head_temperature, "Prototype logit temperature")->capture_default_str();
  trn->add_option("--lr", to.lr, "Base learning rate")->capture_default_str();
  trn->add_option("--weight-decay", to.weight_decay, "Decoupled weight decay")->capture_default_str();
  trn->add_option("--final-lr-fraction", to.final_lr_fraction, "Cosine schedule floor")->capture_default_str();
  trn->add_option("--ff-mode", to.ff_mode, "Target forwarding: none|identity|logits|sk")
      ->check(CLI::IsMember({"none", "identity", "logits", "sk"}))
      ->capture_default_str();
  trn->add_option("--temperature", to.temperature, "Forwarder affinity temperature")->capture_default_str();
  trn->add_option("--radius", to.radius, "Neighborhood radius in patches (default scales with grid)");
  trn->add_option("--context", to.context, "Context frames per window")->capture_default_str();
  trn->add_option("--lambda", to.lambda, "Sinkhorn inverse entropy weight")->capture_default_str();
  trn->add_option("--sk-iters", to.sk_iters, "Sinkhorn iterations")->capture_default_str();
  trn->add_option("--stride", to.stride, "Frame index stride inside a window")->capture_default_str();
  trn->add_option("--sample-interval", to.sample_interval, "Target seconds between window frames (overrides --stride)");
  trn->add_flag("--per-frame-sinkhorn", to.per_frame_sinkhorn, "Solve one Sinkhorn problem per frame");
  trn->add_flag("--first-frame-only", to.first_frame_only, "Forward from the first context frame only");
  trn->add_option("--log-every", to.log_every, "Log every N steps (0: quiet)")->capture_default_str();

  EvalOptions eo;
  auto* evl = app.add_subcommand("eval", "Unsupervised segmentation benchmark");
  evl->add_option("--manifest", eo.manifest, "Dataset manifest JSON with masks");
  evl->add_option("--checkpoint", eo.checkpoint, "Head checkpoint; cluster its embeddings instead of raw features");
  evl->add_option("--scope", eo.scope, "frame|clip|dataset")
      ->check(CLI::IsMember({"frame", "clip", "dataset"}))
      ->capture_default_str();
  evl->add_option("--k", eo.k, "Number of clusters or 'gt'")->capture_default_str();
  evl->add_option("--matching", eo.matching, "hungarian|greedy")
      ->check(CLI::IsMember({"hungarian", "greedy"}))
      ->capture_default_str();
  evl->add_option("--seeds", eo.seeds, "Number of k-means seeds, starting at --seed")->capture_default_str();
  evl->add_option("--kmeans-iters", eo.kmeans_iters, "Lloyd iterations")->capture_default_str();
  evl->add_option("--mask-downsample", eo.mask_downsample, "Resample larger masks to this side (overclustering only)");

  PropagateOptions po;
  auto* prop = app.add_subcommand("propagate", "Forward source maps to the last frame of a clip");
  prop->add_option("--manifest", po.manifest, "Manifest holding the clip");
  prop->add_option("--clip", po.clip, "Clip id inside the manifest");
  prop->add_option("--frames", po.frames, "Frame tensors in temporal order, target last");
  prop->add_option("--maps", po.maps, "Source map tensors [N, K], one per context frame")->required();
  prop->add_option("--grid", po.grid, "Patch grid for [N, D] frame tensors, N or RxC");
  prop->add_option("--temperature", po.temperature, "Affinity temperature")->capture_default_str();
  prop->add_option("--radius", po.radius, "Neighborhood radius in patches (default scales with grid)");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // Subcommand --help surfaces as CallForHelp raised inside the subcommand.
    err << "timet: error: " << one_line(e.what()) << '\n';
    return kExitUsage;
  }

  Eigen::setNbThreads(static_cast<int>(g.threads));
  try {
    if (*synth) return cmd_synth(g, so, out);
    if (*trn) return cmd_train(g, to, out);
    if (*evl) return cmd_eval(g, eo, out);
    if (*prop) return cmd_propagate(g, po, out);
  } catch (const UsageError& e) {
    err << "timet: error: " << one_line(e.what()) << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "timet: error: " << one_line(e.what()) << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "timet: error: " << one_line(e.what()) << '\n';
    return kExitFailure;
  }
  err << "timet: error: no subcommand\n";
  return kExitUsage;
}

}  // namespace timet::cli
