#include "timet/manifest.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "timet/tensor_io.hpp"

namespace timet {

namespace fs = std::filesystem;
using nlohmann::json;

bool Manifest::has_masks() const {
  if (clips.empty()) return false;
  for (const auto& c : clips) {
    if (!c.masks) return false;
  }
  return true;
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open manifest");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": invalid JSON: " + e.what());
  }
  const fs::path base = path.parent_path();

  Manifest m;
  try {
    m.num_classes = doc.at("num_classes").get<int>();
    const auto grid = doc.at("grid").get<std::vector<std::size_t>>();
    if (grid.size() != 2) throw std::runtime_error("grid must have two entries");
    m.grid = {grid[0], grid[1]};
    m.dim = doc.at("dim").get<std::size_t>();
    for (const auto& c : doc.at("clips")) {
      ClipEntry e;
      e.id = c.at("id").get<std::string>();
      e.interval_s = c.at("interval_s").get<double>();
      for (const auto& f : c.at("frames")) e.frames.push_back(base / f.get<std::string>());
      if (c.contains("masks") && !c.at("masks").is_null()) {
        std::vector<fs::path> masks;
        for (const auto& f : c.at("masks")) masks.push_back(base / f.get<std::string>());
        e.masks = std::move(masks);
      }
      m.clips.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": bad manifest schema: " + e.what());
  }

  if (m.num_classes < 1 || m.grid.size() == 0 || m.dim == 0) {
    throw std::runtime_error(path.string() + ": num_classes, grid and dim must be positive");
  }
  for (const auto& c : m.clips) {
    if (c.frames.empty()) throw std::runtime_error("clip '" + c.id + "' lists no frames");
    if (c.masks && c.masks->size() != c.frames.size()) {
      throw std::runtime_error("clip '" + c.id + "' has " + std::to_string(c.masks->size()) +
                               " masks for " + std::to_string(c.frames.size()) + " frames");
    }
    for (const auto& f : c.frames) {
      if (!fs::exists(f)) throw std::runtime_error("missing frame file " + f.string());
    }
    if (c.masks) {
      for (const auto& f : *c.masks) {
        if (!fs::exists(f)) throw std::runtime_error("missing mask file " + f.string());
      }
    }
  }
  return m;
}

void save_manifest(const Manifest& manifest, const fs::path& path) {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  auto rel = [&](const fs::path& p) { return fs::relative(p, base).generic_string(); };

  json doc;
  doc["num_classes"] = manifest.num_classes;
  doc["grid"] = {manifest.grid.rows, manifest.grid.cols};
  doc["dim"] = manifest.dim;
  doc["clips"] = json::array();
  for (const auto& c : manifest.clips) {
    json jc;
    jc["id"] = c.id;
    jc["interval_s"] = c.interval_s;
    jc["frames"] = json::array();
    for (const auto& f : c.frames) jc["frames"].push_back(rel(f));
    if (c.masks) {
      jc["masks"] = json::array();
      for (const auto& f : *c.masks) jc["masks"].push_back(rel(f));
    } else {
      jc["masks"] = nullptr;
    }
    doc["clips"].push_back(std::move(jc));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot write manifest");
  out << doc.dump(2) << '\n';
}

ClipFeatures load_clip(const Manifest& manifest, const ClipEntry& clip) {
  ClipFeatures out;
  out.clip_id = clip.id;
  out.frame_interval_s = clip.interval_s;
  for (const auto& f : clip.frames) {
    FeatureMap fm = load_feature_map(f, manifest.grid);
    if (fm.dim() != manifest.dim) {
      throw std::runtime_error(f.string() + ": feature dim " + std::to_string(fm.dim()) +
                               " differs from manifest dim " + std::to_string(manifest.dim));
    }
    out.frames.push_back(std::move(fm));
  }
  out.validate();
  return out;
}

std::vector<SegMask> load_clip_masks(const Manifest& manifest, const ClipEntry& clip) {
  if (!clip.masks) throw std::runtime_error("clip '" + clip.id + "' has no masks");
  std::vector<SegMask> out;
  for (const auto& f : *clip.masks) {
    SegMask m = load_mask(f);
    m.validate(manifest.num_classes);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace timet
