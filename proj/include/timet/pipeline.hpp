#pragma once

#include <vector>

#include "timet/manifest.hpp"
#include "timet/projection_head.hpp"
#include "timet/segmentation_eval.hpp"

namespace timet {

// Loads features and masks of every clip. Throws if any clip lacks masks.
std::vector<EvalClip> load_eval_clips(const Manifest& manifest);

// Replaces every frame's features with the head's unit-norm embedding.
void embed_clips(std::vector<EvalClip>& clips, const ProjectionHead<float>& head);

}  // namespace timet
