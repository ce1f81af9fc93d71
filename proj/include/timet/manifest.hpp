#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "timet/types.hpp"

namespace timet {

struct ClipEntry {
  std::string id;
  double interval_s = 0.0;
  std::vector<std::filesystem::path> frames;  // absolute after load
  std::optional<std::vector<std::filesystem::path>> masks;
};

/// Dataset description. On disk this is a JSON document whose frame and mask
/// paths are relative to the manifest's own directory.
struct Manifest {
  int num_classes = 0;
  GridShape grid;
  std::size_t dim = 0;
  std::vector<ClipEntry> clips;

  bool has_masks() const;
};

// Parses and validates; every referenced file must exist.
Manifest load_manifest(const std::filesystem::path& path);

// Writes paths relative to `path`'s parent directory.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

ClipFeatures load_clip(const Manifest& manifest, const ClipEntry& clip);
std::vector<SegMask> load_clip_masks(const Manifest& manifest, const ClipEntry& clip);

}  // namespace timet
