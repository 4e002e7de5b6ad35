#include "vqag/box.hpp"

#include <cmath>
#include <sstream>

#include "vqag/errors.hpp"

namespace vqag {

void validate_box(const Box& b, const std::string& context) {
  const auto c = b.corners();
  for (double v : c) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      std::ostringstream os;
      os << context << ": corner " << v << " outside [0, 1]";
      throw ValidationError(os.str());
    }
  }
  if (b.x1 > b.x2 || b.y1 > b.y2) {
    std::ostringstream os;
    os << context << ": corners not ordered (" << b.x1 << ", " << b.y1 << ", " << b.x2 << ", " << b.y2 << ")";
    throw ValidationError(os.str());
  }
}

Box normalize_box(const Box& pixels, double image_width, double image_height) {
  if (!(image_width > 0.0) || !(image_height > 0.0)) {
    throw ValidationError("normalize_box: image size must be positive");
  }
  Box b{pixels.x1 / image_width, pixels.y1 / image_height, pixels.x2 / image_width, pixels.y2 / image_height};
  validate_box(b, "normalize_box");
  return b;
}

}  // namespace vqag
