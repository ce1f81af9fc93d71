#include "timet/pipeline.hpp"

#include <stdexcept>

namespace timet {

std::vector<EvalClip> load_eval_clips(const Manifest& manifest) {
  std::vector<EvalClip> out;
  for (const ClipEntry& entry : manifest.clips) {
    if (!entry.masks) throw std::runtime_error("clip '" + entry.id + "' has no ground-truth masks");
    ClipFeatures clip = load_clip(manifest, entry);
    EvalClip e;
    e.clip_id = entry.id;
    e.grid = manifest.grid;
    for (FeatureMap& f : clip.frames) e.frames.push_back(std::move(f.data));
    e.masks = load_clip_masks(manifest, entry);
    out.push_back(std::move(e));
  }
  return out;
}

void embed_clips(std::vector<EvalClip>& clips, const ProjectionHead<float>& head) {
  for (EvalClip& clip : clips) {
    for (Matrix& f : clip.frames) f = head.embed(f.cast<float>()).cast<double>();
  }
}

}  // namespace timet
