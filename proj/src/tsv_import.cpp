#include "vqag/tsv_import.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <sstream>

#include "vqag/binary_io.hpp"

namespace vqag {

std::string base64_decode(std::string_view in) {
  static const auto table = [] {
    std::array<int, 256> t{};
    t.fill(-1);
    const char* alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    for (int i = 0; i < 64; ++i) t[static_cast<unsigned char>(alphabet[i])] = i;
    return t;
  }();
  if (in.size() % 4 != 0) throw ParseError("base64: length " + std::to_string(in.size()) + " is not a multiple of 4");
  std::string out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = in[i + static_cast<std::size_t>(k)];
      if (c == '=' && i + 4 == in.size() && k >= 2) {
        v[k] = 0;
        ++pad;
        continue;
      }
      v[k] = pad > 0 ? -1 : table[static_cast<unsigned char>(c)];
      if (v[k] < 0) throw ParseError("base64: bad character at offset " + std::to_string(i + static_cast<std::size_t>(k)));
    }
    const std::uint32_t word = (static_cast<std::uint32_t>(v[0]) << 18) | (static_cast<std::uint32_t>(v[1]) << 12) |
                               (static_cast<std::uint32_t>(v[2]) << 6) | static_cast<std::uint32_t>(v[3]);
    out.push_back(static_cast<char>((word >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<char>((word >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<char>(word & 0xff));
  }
  return out;
}

namespace {

std::vector<float> floats(const std::string& field, const std::string& what) {
  const std::string bytes = base64_decode(field);
  if (bytes.size() % 4 != 0) throw ParseError(what + ": byte count is not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  std::istringstream is(bytes);
  binio::read_array_le(is, out.data(), out.size(), what);
  return out;
}

}  // namespace

std::vector<Scene> parse_detection_tsv(const std::string& text, Index max_boxes) {
  std::vector<Scene> scenes;
  std::istringstream lines(text);
  std::string line;
  std::size_t offset = 0;
  while (std::getline(lines, line)) {
    const std::size_t line_at = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream cells(line);
    for (std::string cell; std::getline(cells, cell, '\t');) f.push_back(cell);
    const std::string where = "tsv line at byte offset " + std::to_string(line_at);
    if (f.size() != 6) throw ParseError(where + ": expected 6 fields, found " + std::to_string(f.size()));
    Scene s;
    double w = 0, h = 0;
    long long n = 0;
    try {
      s.image_id = std::stoll(f[0]);
      w = std::stod(f[1]);
      h = std::stod(f[2]);
      n = std::stoll(f[3]);
    } catch (const std::exception&) {
      throw ParseError(where + ": malformed numeric field");
    }
    if (n < 1) throw ParseError(where + ": num_boxes must be positive");
    const auto boxes = floats(f[4], where + " boxes");
    const auto feats = floats(f[5], where + " features");
    if (boxes.size() != static_cast<std::size_t>(n) * 4) throw ParseError(where + ": boxes do not hold num_boxes x 4 floats");
    if (feats.empty() || feats.size() % static_cast<std::size_t>(n) != 0) {
      throw ParseError(where + ": features do not divide into num_boxes rows");
    }
    const Index d = static_cast<Index>(feats.size() / static_cast<std::size_t>(n));
    const Index keep = max_boxes > 0 ? std::min<Index>(max_boxes, n) : n;
    s.features.resize(keep, d);
    for (Index i = 0; i < keep; ++i) {
      const float* c = &boxes[static_cast<std::size_t>(i) * 4];
      const Box px{std::clamp<double>(c[0], 0.0, w), std::clamp<double>(c[1], 0.0, h), std::clamp<double>(c[2], 0.0, w),
                   std::clamp<double>(c[3], 0.0, h)};
      s.boxes.push_back(normalize_box(px, w, h));
      for (Index j = 0; j < d; ++j) s.features(i, j) = feats[static_cast<std::size_t>(i * d + j)];
    }
    if (!scenes.empty() && (s.objects() != scenes[0].objects() || s.raw_width() != scenes[0].raw_width())) {
      throw ValidationError(where + ": image " + std::to_string(s.image_id) + " has " + std::to_string(s.objects()) +
                            " boxes of width " + std::to_string(s.raw_width()) + ", earlier images have " +
                            std::to_string(scenes[0].objects()) + " of width " + std::to_string(scenes[0].raw_width()) +
                            " (use max_boxes to truncate)");
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace vqag
