#pragma once

#include <array>
#include <string>

namespace vqag {

// Bounding box with corners normalized by image width/height.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  std::array<double, 4> corners() const { return {x1, y1, x2, y2}; }

  bool operator==(const Box&) const = default;
};

// Throws ValidationError unless corners lie in [0,1] with x1<=x2, y1<=y2.
void validate_box(const Box& b, const std::string& context = "box");

// Divides pixel corners by image size, then validates.
Box normalize_box(const Box& pixels, double image_width, double image_height);

}  // namespace vqag
