#include <algorithm>
#include <cmath>
#include <future>
#include <set>
#include <stdexcept>
#include <string>

#include "timet/segmentation_eval.hpp"

namespace timet {

namespace {

SegMask prepared_mask(const SegMask& mask, std::size_t downsample) {
  if (downsample == 0 || (mask.rows <= downsample && mask.cols <= downsample)) return mask;
  return resize_mask_nearest(mask, std::min(mask.rows, downsample), std::min(mask.cols, downsample));
}

ConfusionMatrix frame_confusion(const IndexVector& labels, GridShape grid, const SegMask& raw_mask,
                                std::size_t k, int num_classes, std::size_t downsample) {
  const SegMask mask = prepared_mask(raw_mask, downsample);
  const IndexVector pixels =
      (mask.rows == grid.rows && mask.cols == grid.cols) ? labels
                                                          : upsample_nearest(labels, grid, mask.rows, mask.cols);
  return confusion(pixels, mask.labels, k, static_cast<std::size_t>(num_classes), mask.ignore_label);
}

Matching match(const ConfusionMatrix& conf, MatchingKind kind) {
  return kind == MatchingKind::kHungarian ? hungarian_match(conf) : greedy_many_to_one(conf);
}

// Accumulates per-unit mIoU and per-class IoU averages.
struct UnitAverager {
  explicit UnitAverager(int num_classes)
      : class_sum(static_cast<std::size_t>(num_classes), 0.0),
        class_n(static_cast<std::size_t>(num_classes), 0) {}

  void add(const ConfusionMatrix& conf, MatchingKind kind) {
    if (conf.total == 0) return;  // nothing scorable in this unit
    const IouResult r = miou(merge(conf, match(conf, kind)));
    sum += r.mean_iou;
    ++units;
    for (std::size_t j = 0; j < r.per_class.size(); ++j) {
      if (r.per_class[j]) {
        class_sum[j] += *r.per_class[j];
        ++class_n[j];
      }
    }
  }

  ScopeScore result() const {
    if (units == 0) throw std::invalid_argument("no scorable pixels in any evaluation unit");
    ScopeScore s;
    s.miou = sum / static_cast<double>(units);
    s.per_class.resize(class_sum.size());
    for (std::size_t j = 0; j < class_sum.size(); ++j) {
      if (class_n[j] > 0) s.per_class[j] = class_sum[j] / static_cast<double>(class_n[j]);
    }
    return s;
  }

  double sum = 0.0;
  std::size_t units = 0;
  std::vector<double> class_sum;
  std::vector<std::size_t> class_n;
};

std::size_t classes_present(std::span<const SegMask* const> masks) {
  std::set<int> seen;
  for (const SegMask* m : masks) {
    for (int l : m->labels) {
      if (l != m->ignore_label) seen.insert(l);
    }
  }
  return seen.size();
}

std::uint64_t unit_seed(std::uint64_t seed, std::size_t unit) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(unit);
}

// One clustering + matching unit: a set of frames pooled together.
struct Unit {
  std::vector<const Matrix*> frames;
  std::vector<const SegMask*> masks;
  GridShape grid;
};

ConfusionMatrix cluster_unit(const Unit& unit, const EvalConfig& cfg, int num_classes,
                             std::uint64_t seed, bool& scorable) {
  const std::size_t k = cfg.k ? *cfg.k : classes_present(unit.masks);
  scorable = k > 0;
  ConfusionMatrix total;
  total.counts = CountMatrix::Zero(static_cast<Eigen::Index>(std::max<std::size_t>(k, 1)), num_classes);
  if (!scorable) return total;

  const auto n = static_cast<Eigen::Index>(unit.grid.size());
  const auto d = unit.frames.front()->cols();
  Matrix points(n * static_cast<Eigen::Index>(unit.frames.size()), d);
  for (std::size_t f = 0; f < unit.frames.size(); ++f) {
    points.middleRows(static_cast<Eigen::Index>(f) * n, n) = *unit.frames[f];
  }
  if (static_cast<std::size_t>(points.rows()) < k) {
    throw std::invalid_argument("k=" + std::to_string(k) + " exceeds the " +
                                std::to_string(points.rows()) + " patches in the evaluation unit");
  }
  const KMeansResult km = kmeans(points, k, seed, cfg.kmeans_iters);
  for (std::size_t f = 0; f < unit.frames.size(); ++f) {
    const IndexVector labels(km.assignments.begin() + static_cast<long>(f) * n,
                             km.assignments.begin() + static_cast<long>(f + 1) * n);
    total += frame_confusion(labels, unit.grid, *unit.masks[f], k, num_classes, cfg.mask_downsample);
  }
  return total;
}

std::vector<Unit> make_units(std::span<const EvalClip> clips, EvalScope scope) {
  std::vector<Unit> units;
  Unit all;
  for (const EvalClip& clip : clips) {
    Unit per_clip;
    per_clip.grid = all.grid = clip.grid;
    for (std::size_t f = 0; f < clip.frames.size(); ++f) {
      if (scope == EvalScope::kFrame) {
        units.push_back({{&clip.frames[f]}, {&clip.masks[f]}, clip.grid});
      }
      per_clip.frames.push_back(&clip.frames[f]);
      per_clip.masks.push_back(&clip.masks[f]);
      all.frames.push_back(&clip.frames[f]);
      all.masks.push_back(&clip.masks[f]);
    }
    if (scope == EvalScope::kClip) units.push_back(std::move(per_clip));
  }
  if (scope == EvalScope::kDataset) units.push_back(std::move(all));
  return units;
}

void check_clips(std::span<const EvalClip> clips) {
  if (clips.empty()) throw std::invalid_argument("evaluation needs at least one clip");
  for (const EvalClip& clip : clips) {
    if (clip.masks.size() != clip.frames.size()) {
      throw std::invalid_argument("clip '" + clip.clip_id + "' is missing ground-truth masks");
    }
    for (const Matrix& f : clip.frames) {
      if (static_cast<std::size_t>(f.rows()) != clip.grid.size() ||
          f.cols() != clips.front().frames.front().cols()) {
        throw std::invalid_argument("clip '" + clip.clip_id + "' has inconsistent feature shapes");
      }
    }
  }
}

SeedScore evaluate_seed(const std::vector<Unit>& units, int num_classes, const EvalConfig& cfg,
                        std::uint64_t seed) {
  UnitAverager avg(num_classes);
  for (std::size_t u = 0; u < units.size(); ++u) {
    bool scorable = false;
    const ConfusionMatrix conf = cluster_unit(units[u], cfg, num_classes, unit_seed(seed, u), scorable);
    if (scorable) avg.add(conf, cfg.matching);
  }
  const ScopeScore s = avg.result();
  return {seed, s.miou, s.per_class};
}

}  // namespace

EvalScope parse_scope(std::string_view name) {
  if (name == "frame") return EvalScope::kFrame;
  if (name == "clip") return EvalScope::kClip;
  if (name == "dataset") return EvalScope::kDataset;
  throw std::invalid_argument("unknown scope '" + std::string(name) + "' (expected frame|clip|dataset)");
}

MatchingKind parse_matching(std::string_view name) {
  if (name == "hungarian") return MatchingKind::kHungarian;
  if (name == "greedy") return MatchingKind::kGreedy;
  throw std::invalid_argument("unknown matching '" + std::string(name) + "' (expected hungarian|greedy)");
}

std::string_view to_string(EvalScope scope) {
  switch (scope) {
    case EvalScope::kFrame: return "frame";
    case EvalScope::kClip: return "clip";
    case EvalScope::kDataset: return "dataset";
  }
  return "?";
}

std::string_view to_string(MatchingKind kind) {
  return kind == MatchingKind::kHungarian ? "hungarian" : "greedy";
}

void EvalConfig::validate() const {
  if (k && *k < 1) throw std::invalid_argument("k must be at least 1");
  if (seeds.empty()) throw std::invalid_argument("evaluation needs at least one seed");
  if (kmeans_iters < 1) throw std::invalid_argument("kmeans_iters must be at least 1");
  if (threads < 1) throw std::invalid_argument("threads must be at least 1");
}

ScopeScore score_assignments(std::span<const EvalClip> clips,
                             std::span<const ClipAssignments> assignments, std::size_t k,
                             int num_classes, EvalScope scope, MatchingKind matching,
                             std::size_t mask_downsample) {
  check_clips(clips);
  if (assignments.size() != clips.size()) throw std::invalid_argument("one assignment set per clip required");
  UnitAverager avg(num_classes);
  ConfusionMatrix dataset;
  dataset.counts = CountMatrix::Zero(static_cast<Eigen::Index>(k), num_classes);
  for (std::size_t c = 0; c < clips.size(); ++c) {
    const EvalClip& clip = clips[c];
    if (assignments[c].size() != clip.frames.size()) {
      throw std::invalid_argument("clip '" + clip.clip_id + "': assignment/frame count mismatch");
    }
    ConfusionMatrix per_clip;
    per_clip.counts = CountMatrix::Zero(static_cast<Eigen::Index>(k), num_classes);
    for (std::size_t f = 0; f < clip.frames.size(); ++f) {
      const ConfusionMatrix conf =
          frame_confusion(assignments[c][f], clip.grid, clip.masks[f], k, num_classes, mask_downsample);
      if (scope == EvalScope::kFrame) avg.add(conf, matching);
      per_clip += conf;
    }
    if (scope == EvalScope::kClip) avg.add(per_clip, matching);
    dataset += per_clip;
  }
  if (scope == EvalScope::kDataset) avg.add(dataset, matching);
  return avg.result();
}

EvalReport evaluate(std::span<const EvalClip> clips, int num_classes, const EvalConfig& cfg) {
  cfg.validate();
  check_clips(clips);
  if (num_classes < 1) throw std::invalid_argument("num_classes must be positive");
  const std::vector<Unit> units = make_units(clips, cfg.scope);

  EvalReport report;
  report.scope = cfg.scope;
  report.matching = cfg.matching;
  report.k = cfg.k;
  report.seeds.resize(cfg.seeds.size());
  // Seeds are independent; results land in seed order regardless of threads.
  for (std::size_t first = 0; first < cfg.seeds.size(); first += cfg.threads) {
    const std::size_t last = std::min(cfg.seeds.size(), first + cfg.threads);
    if (cfg.threads == 1) {
      report.seeds[first] = evaluate_seed(units, num_classes, cfg, cfg.seeds[first]);
      continue;
    }
    std::vector<std::future<SeedScore>> jobs;
    for (std::size_t i = first; i < last; ++i) {
      jobs.push_back(std::async(std::launch::async, evaluate_seed, std::cref(units), num_classes,
                                std::cref(cfg), cfg.seeds[i]));
    }
    for (std::size_t i = first; i < last; ++i) report.seeds[i] = jobs[i - first].get();
  }

  double sum = 0.0;
  for (const SeedScore& s : report.seeds) sum += s.miou;
  report.mean = sum / static_cast<double>(report.seeds.size());
  double var = 0.0;
  for (const SeedScore& s : report.seeds) var += (s.miou - report.mean) * (s.miou - report.mean);
  report.std = std::sqrt(var / static_cast<double>(report.seeds.size()));
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["scope"] = std::string(to_string(scope));
  j["matching"] = std::string(to_string(matching));
  if (k) {
    j["k"] = *k;
  } else {
    j["k"] = "gt";
  }
  j["seeds"] = nlohmann::json::array();
  for (const SeedScore& s : seeds) {
    nlohmann::json pc = nlohmann::json::array();
    for (const auto& v : s.per_class) {
      if (v) {
        pc.push_back(*v);
      } else {
        pc.push_back(nullptr);
      }
    }
    j["seeds"].push_back({{"seed", s.seed}, {"miou", s.miou}, {"per_class", pc}});
  }
  j["mean"] = mean;
  j["std"] = std;
  return j;
}

}  // namespace timet
