#include "vqag/dataset_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vqag/binary_io.hpp"

namespace vqag {

using Json = nlohmann::ordered_json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing '" + path + "'");
}

namespace {

void check_uniform(const std::vector<Scene>& scenes) {
  for (std::size_t s = 1; s < scenes.size(); ++s) {
    if (scenes[s].objects() != scenes[0].objects()) {
      throw ValidationError("scene " + std::to_string(scenes[s].image_id) + " has " +
                            std::to_string(scenes[s].objects()) + " objects, expected " +
                            std::to_string(scenes[0].objects()));
    }
    if (scenes[s].raw_width() != scenes[0].raw_width()) {
      throw ValidationError("scene " + std::to_string(scenes[s].image_id) + " has feature width " +
                            std::to_string(scenes[s].raw_width()) + ", expected " +
                            std::to_string(scenes[0].raw_width()));
    }
  }
}

// "key=value" fields of a header line.
std::map<std::string, long long> header_fields(const std::string& line, std::size_t first, const std::string& what) {
  std::map<std::string, long long> out;
  std::istringstream ss(line.substr(first));
  std::string tok;
  while (ss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ParseError(what + " header: malformed field '" + tok + "' at byte offset 0");
    try {
      out[tok.substr(0, eq)] = std::stoll(tok.substr(eq + 1));
    } catch (const std::exception&) {
      throw ParseError(what + " header: malformed field '" + tok + "' at byte offset 0");
    }
  }
  return out;
}

long long require(const std::map<std::string, long long>& f, const std::string& key, const std::string& what) {
  auto it = f.find(key);
  if (it == f.end()) throw ParseError(what + " header: missing field '" + key + "' at byte offset 0");
  if (it->second < 0) throw ParseError(what + " header: negative '" + key + "' at byte offset 0");
  return it->second;
}

std::vector<Scene> parse_binary(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw ParseError("scenes: unterminated header at byte offset 0");
  const std::string header = bytes.substr(0, nl);
  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  hs >> magic >> version;
  if (magic != "VQAGSCN") throw ParseError("scenes: bad magic at byte offset 0");
  if (version != kScenesVersion) throw ParseError("scenes: unsupported version " + std::to_string(version));
  const auto f = header_fields(header, static_cast<std::size_t>(hs.tellg()), "scenes");
  const auto n_scenes = require(f, "scenes", "scenes");
  const Index n = static_cast<Index>(require(f, "objects", "scenes"));
  const Index d = static_cast<Index>(require(f, "width", "scenes"));
  const bool attrs = require(f, "attributes", "scenes") != 0;

  std::istringstream in(bytes);
  in.seekg(static_cast<std::streamoff>(nl + 1));
  std::vector<Scene> scenes;
  for (long long s = 0; s < n_scenes; ++s) {
    const std::string what = "scene " + std::to_string(s);
    Scene sc;
    sc.image_id = binio::read_le<std::int64_t>(in, what + " image_id");
    const auto corners_at = static_cast<long long>(in.tellg());
    std::vector<double> c(static_cast<std::size_t>(n * 4));
    binio::read_array_le(in, c.data(), c.size(), what + " boxes");
    for (Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(4 * i);
      Box b{c[k], c[k + 1], c[k + 2], c[k + 3]};
      validate_box(b, what + " object " + std::to_string(i) + " (byte offset " +
                          std::to_string(corners_at + 32 * i) + ")");
      sc.boxes.push_back(b);
    }
    sc.features.resize(n, d);
    binio::read_array_le(in, sc.features.data(), static_cast<std::size_t>(sc.features.size()), what + " features");
    if (attrs) {
      for (Index i = 0; i < n; ++i) {
        ObjectAttributes a;
        a.color = binio::read_le<std::int32_t>(in, what + " attributes");
        a.shape = binio::read_le<std::int32_t>(in, what + " attributes");
        a.size = binio::read_le<std::int32_t>(in, what + " attributes");
        sc.attributes.push_back(a);
      }
    }
    scenes.push_back(std::move(sc));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError("scenes: trailing bytes at byte offset " + std::to_string(static_cast<long long>(in.tellg())));
  }
  return scenes;
}

std::vector<Scene> parse_json_fixture(const std::string& bytes) {
  Json j;
  try {
    j = Json::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("features: malformed JSON at byte offset " + std::to_string(e.byte > 0 ? e.byte - 1 : 0));
  }
  std::vector<Scene> scenes;
  try {
    if (j.value("version", kScenesVersion) != kScenesVersion) throw ParseError("features: unsupported version");
    for (const auto& js : j.at("scenes")) {
      Scene sc;
      sc.image_id = js.at("image_id").get<std::int64_t>();
      const std::string what = "scene " + std::to_string(sc.image_id);
      const auto boxes = js.at("boxes").get<std::vector<std::vector<double>>>();
      const auto feats = js.at("features").get<std::vector<std::vector<double>>>();
      if (boxes.size() != feats.size()) throw ParseError(what + ": boxes and features differ in length");
      const bool pixels = js.contains("image_size");
      std::vector<double> size = pixels ? js.at("image_size").get<std::vector<double>>() : std::vector<double>{};
      if (pixels && size.size() != 2) throw ParseError(what + ": image_size must be [width, height]");
      for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (boxes[i].size() != 4) throw ParseError(what + ": box " + std::to_string(i) + " needs 4 corners");
        Box b{boxes[i][0], boxes[i][1], boxes[i][2], boxes[i][3]};
        if (pixels) b = normalize_box(b, size[0], size[1]);
        validate_box(b, what + " object " + std::to_string(i));
        sc.boxes.push_back(b);
      }
      const Index d = feats.empty() ? 0 : static_cast<Index>(feats[0].size());
      sc.features.resize(static_cast<Index>(feats.size()), d);
      for (std::size_t i = 0; i < feats.size(); ++i) {
        if (static_cast<Index>(feats[i].size()) != d) throw ParseError(what + ": ragged feature rows");
        for (Index k = 0; k < d; ++k) sc.features(static_cast<Index>(i), k) = feats[i][static_cast<std::size_t>(k)];
      }
      scenes.push_back(std::move(sc));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("features: malformed record: ") + e.what());
  }
  return scenes;
}

}  // namespace

std::vector<Scene> parse_features(const std::string& bytes, std::vector<std::string>* warnings) {
  const auto first = bytes.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) {
    if (warnings != nullptr) warnings->push_back("feature file is empty; dataset has no scenes");
    return {};
  }
  std::vector<Scene> scenes = bytes[first] == '{' ? parse_json_fixture(bytes) : parse_binary(bytes);
  check_uniform(scenes);
  return scenes;
}

std::vector<Scene> load_features(const std::string& path, std::vector<std::string>* warnings) {
  return parse_features(read_file(path), warnings);
}

std::string serialize_features(const std::vector<Scene>& scenes) {
  check_uniform(scenes);
  const Index n = scenes.empty() ? 0 : scenes[0].objects();
  const Index d = scenes.empty() ? 0 : scenes[0].raw_width();
  bool attrs = !scenes.empty();
  for (const auto& s : scenes) attrs = attrs && static_cast<Index>(s.attributes.size()) == s.objects();
  std::ostringstream out;
  out << "VQAGSCN " << kScenesVersion << " scenes=" << scenes.size() << " objects=" << n << " width=" << d
      << " attributes=" << (attrs ? 1 : 0) << "\n";
  for (const auto& s : scenes) {
    binio::write_le<std::int64_t>(out, s.image_id);
    for (const auto& b : s.boxes) {
      const auto c = b.corners();
      binio::write_array_le(out, c.data(), c.size());
    }
    binio::write_array_le(out, s.features.data(), static_cast<std::size_t>(s.features.size()));
    if (attrs) {
      for (const auto& a : s.attributes) {
        binio::write_le<std::int32_t>(out, a.color);
        binio::write_le<std::int32_t>(out, a.shape);
        binio::write_le<std::int32_t>(out, a.size);
      }
    }
  }
  return out.str();
}

void write_features(const std::string& path, const std::vector<Scene>& scenes) {
  write_file(path, serialize_features(scenes));
}

std::string features_to_json(const std::vector<Scene>& scenes) {
  Json j;
  j["version"] = kScenesVersion;
  j["scenes"] = Json::array();
  for (const auto& s : scenes) {
    Json js;
    js["image_id"] = s.image_id;
    js["boxes"] = Json::array();
    for (const auto& b : s.boxes) js["boxes"].push_back(b.corners());
    js["features"] = Json::array();
    for (Index i = 0; i < s.features.rows(); ++i) {
      std::vector<double> row(s.features.row(i).data(), s.features.row(i).data() + s.features.cols());
      js["features"].push_back(row);
    }
    j["scenes"].push_back(js);
  }
  return j.dump(1);
}

std::string serialize_questions(const Dataset& d) {
  std::ostringstream out;
  out << "# vqag-questions 1 count=" << d.items.size() << " annotators=" << d.annotators << "\n";
  for (const auto& it : d.items) {
    Json j;
    j["id"] = it.id;
    j["scene_id"] = it.scene_id;
    j["type"] = to_string(it.type);
    j["template"] = to_string(it.templ);
    j["question"] = it.question;
    j["answers"] = it.answers;
    out << j.dump() << "\n";
  }
  return out.str();
}

std::vector<QAItem> parse_questions(const std::string& text, Index* annotators) {
  std::vector<QAItem> items;
  std::size_t pos = 0;
  long long declared = -1;
  bool header = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    const std::size_t line_at = pos;
    pos = end + 1;
    if (line.empty()) continue;
    if (!header) {
      if (line.rfind("# vqag-questions 1", 0) != 0) {
        throw ParseError("questions: bad header at byte offset " + std::to_string(line_at));
      }
      const auto f = header_fields(line, 18, "questions");
      declared = require(f, "count", "questions");
      if (annotators != nullptr) *annotators = static_cast<Index>(require(f, "annotators", "questions"));
      header = true;
      continue;
    }
    QAItem it;
    try {
      const Json j = Json::parse(line);
      it.id = j.at("id").get<std::int64_t>();
      it.scene_id = j.at("scene_id").get<std::int64_t>();
      it.type = question_type_from_string(j.at("type").get<std::string>());
      it.templ = question_template_from_string(j.value("template", std::string("unknown")));
      it.question = j.at("question").get<std::vector<std::string>>();
      it.answers = j.at("answers").get<std::vector<std::string>>();
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("questions: malformed JSON at byte offset " +
                       std::to_string(line_at + (e.byte > 0 ? e.byte - 1 : 0)));
    } catch (const std::exception& e) {
      throw ParseError("questions: malformed record at byte offset " + std::to_string(line_at) + ": " + e.what());
    }
    if (it.question.empty()) throw ParseError("questions: empty question at byte offset " + std::to_string(line_at));
    if (it.answers.empty()) throw ParseError("questions: no answers at byte offset " + std::to_string(line_at));
    items.push_back(std::move(it));
  }
  if (!header) throw ParseError("questions: missing header at byte offset 0");
  if (declared != static_cast<long long>(items.size())) {
    throw ParseError("questions: header declares " + std::to_string(declared) + " records, found " +
                     std::to_string(items.size()));
  }
  return items;
}

std::string serialize_vocab(const Dataset& d) {
  std::ostringstream out;
  out << "# vqag-vocab 1 words=" << d.words.size() - 1 << " answers=" << d.answer_classes.size() << "\n";
  for (Index i = 1; i < d.words.size(); ++i) out << "word " << d.words.token(i) << "\n";
  for (const auto& a : d.answer_classes) out << "answer " << a << "\n";
  return out.str();
}

void parse_vocab(const std::string& text, Dataset& d) {
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line) || line.rfind("# vqag-vocab 1", 0) != 0) {
    throw ParseError("vocab: bad header at byte offset 0");
  }
  const auto f = header_fields(line, 14, "vocab");
  offset += line.size() + 1;
  Vocabulary words;
  std::vector<std::string> answers;
  while (std::getline(in, line)) {
    if (line.rfind("word ", 0) == 0) {
      words.add(line.substr(5));
    } else if (line.rfind("answer ", 0) == 0) {
      answers.push_back(line.substr(7));
    } else if (!line.empty()) {
      throw ParseError("vocab: malformed line at byte offset " + std::to_string(offset));
    }
    offset += line.size() + 1;
  }
  if (words.size() - 1 != require(f, "words", "vocab") ||
      static_cast<long long>(answers.size()) != require(f, "answers", "vocab")) {
    throw ParseError("vocab: entry counts do not match the header");
  }
  d.words = std::move(words);
  d.set_answer_classes(std::move(answers));
}

void save_dataset(const std::string& dir, const Dataset& d) {
  std::filesystem::create_directories(dir);
  write_file(dir + "/scenes.bin", serialize_features(d.scenes));
  write_file(dir + "/questions.txt", serialize_questions(d));
  write_file(dir + "/vocab.txt", serialize_vocab(d));
}

Dataset load_dataset(const std::string& dir, std::vector<std::string>* warnings) {
  Dataset d;
  d.scenes = load_features(dir + "/scenes.bin", warnings);
  d.items = parse_questions(read_file(dir + "/questions.txt"), &d.annotators);
  parse_vocab(read_file(dir + "/vocab.txt"), d);
  d.index_scenes();
  for (const auto& it : d.items) {
    if (!d.has_item(it.id)) continue;
    d.scene(it.scene_id);  // throws InputError for dangling scene references
  }
  return d;
}

}  // namespace vqag
