#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "vqag/data.hpp"

namespace vqag {

// Detection dumps in the widely shared tab-separated layout, one image per line:
//   image_id  image_w  image_h  num_boxes  boxes  features
// boxes (num_boxes x 4 pixel corners) and features (num_boxes x d) are base64
// little-endian float32, row-major. Boxes are clipped to the image and
// normalized. max_boxes > 0 keeps the first max_boxes detections (dumps list
// them by confidence). Every image must end up with the same box count.
std::vector<Scene> parse_detection_tsv(const std::string& text, Index max_boxes = 0);

// Standard alphabet, '=' padding required. Throws ParseError on bad input.
std::string base64_decode(std::string_view in);

}  // namespace vqag
