#pragma once

#include <string>
#include <vector>

#include "vqag/data.hpp"

namespace vqag {

// scenes.bin
//   header line  "VQAGSCN <version> scenes=<S> objects=<N> width=<d> attributes=<0|1>\n"
//   per scene    i64 image_id, N x 4 f64 corners, N x d f64 features,
//                and when attributes=1, N x 3 i32 (color, shape, size)
//   all little-endian, row-major
inline constexpr int kScenesVersion = 1;

// Small-fixture alternative (JSON):
//   {"version": 1, "scenes": [{"image_id": 3, "boxes": [[x1, y1, x2, y2], ...],
//     "features": [[...], ...], "image_size": [w, h]}]}
// "image_size" is optional; when present the boxes are in pixels and get
// normalized by it.
//
// Every scene must have the same object count and feature width. Corners are
// validated (ValidationError); malformed input throws ParseError with the byte
// offset. An empty file yields no scenes and a warning.
std::vector<Scene> load_features(const std::string& path, std::vector<std::string>* warnings = nullptr);
std::vector<Scene> parse_features(const std::string& bytes, std::vector<std::string>* warnings = nullptr);

void write_features(const std::string& path, const std::vector<Scene>& scenes);
std::string serialize_features(const std::vector<Scene>& scenes);
std::string features_to_json(const std::vector<Scene>& scenes);

// questions.txt: "# vqag-questions <version> count=<n> annotators=<k>" then one
// JSON record per line.
std::string serialize_questions(const Dataset& d);
std::vector<QAItem> parse_questions(const std::string& text, Index* annotators = nullptr);

// vocab.txt: "# vqag-vocab <version> words=<w> answers=<a>", then "word <token>"
// lines (the OOV row excluded) and "answer <token>" lines, in index order.
std::string serialize_vocab(const Dataset& d);
void parse_vocab(const std::string& text, Dataset& d);

// Writes scenes.bin, questions.txt and vocab.txt into dir (created if needed).
void save_dataset(const std::string& dir, const Dataset& d);
Dataset load_dataset(const std::string& dir, std::vector<std::string>* warnings = nullptr);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace vqag
