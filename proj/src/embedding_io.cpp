#include <cctype>
#include <fstream>
#include <sstream>

#include "vqag/binary_io.hpp"
#include "vqag/question_encoder.hpp"

namespace vqag {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

EmbeddingTable load_embeddings_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open embedding file " + path);
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> rows;
  std::string line;
  long long offset = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    const long long line_offset = offset;
    offset += static_cast<long long>(line.size()) + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> values;
    std::string field;
    while (ls >> field) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw ParseError(path + ": bad number '" + field + "' at byte offset " + std::to_string(line_offset));
      }
    }
    if (values.empty()) throw ParseError(path + ": token without vector at byte offset " + std::to_string(line_offset));
    if (width == 0) width = values.size();
    if (values.size() != width) {
      throw ParseError(path + ": expected " + std::to_string(width) + " values at byte offset " +
                       std::to_string(line_offset) + ", got " + std::to_string(values.size()));
    }
    tokens.push_back(std::move(token));
    rows.push_back(std::move(values));
  }
  EmbeddingTable table;
  if (rows.empty()) {
    table.vectors = MatrixXd::Zero(1, 0);
    return table;
  }
  std::vector<Index> row_of;
  for (const auto& t : tokens) row_of.push_back(table.vocab.add(t));
  table.vectors = MatrixXd::Zero(table.vocab.size(), static_cast<Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    table.vectors.row(row_of[r]) = Eigen::Map<const Eigen::RowVectorXd>(rows[r].data(), static_cast<Index>(width));
  }
  return table;
}

void save_embeddings_text(const EmbeddingTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write embedding file " + path);
  out.precision(17);
  for (Index i = 0; i < table.vocab.size(); ++i) {
    out << table.vocab.token(i);
    for (Index j = 0; j < table.vectors.cols(); ++j) out << ' ' << table.vectors(i, j);
    out << '\n';
  }
}

namespace {
constexpr char kEmbeddingMagic[8] = {'V', 'Q', 'A', 'G', 'E', 'M', 'B', '1'};
}

EmbeddingTable load_embeddings_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open embedding cache " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kEmbeddingMagic, 8) != 0) throw ParseError(path + ": bad magic at byte offset 0");
  const auto n = binio::read_le<std::uint64_t>(in, "vocab size");
  const auto width = binio::read_le<std::uint64_t>(in, "width");
  std::vector<std::string> tokens;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = binio::read_le<std::uint32_t>(in, "token length");
    std::string tok(len, '\0');
    in.read(tok.data(), len);
    if (!in) throw ParseError(path + ": truncated token");
    tokens.push_back(std::move(tok));
  }
  EmbeddingTable table;
  for (std::size_t i = 1; i < tokens.size(); ++i) table.vocab.add(tokens[i]);
  if (table.vocab.size() != static_cast<Index>(n)) throw ParseError(path + ": duplicate tokens in cache");
  table.vectors.resize(static_cast<Index>(n), static_cast<Index>(width));
  binio::read_array_le(in, table.vectors.data(), n * width, "embedding vectors");
  return table;
}

void save_embeddings_binary(const EmbeddingTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write embedding cache " + path);
  out.write(kEmbeddingMagic, 8);
  binio::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(table.vocab.size()));
  binio::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(table.vectors.cols()));
  for (const auto& t : table.vocab.tokens()) {
    binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.size()));
    out.write(t.data(), static_cast<std::streamsize>(t.size()));
  }
  binio::write_array_le(out, table.vectors.data(), static_cast<std::size_t>(table.vectors.size()));
}

EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open embedding file " + path);
  char magic[8] = {};
  in.read(magic, 8);
  const bool binary = in.gcount() == 8 && std::memcmp(magic, kEmbeddingMagic, 8) == 0;
  return binary ? load_embeddings_binary(path) : load_embeddings_text(path);
}

Index copy_pretrained_rows(const EmbeddingTable& table, const Vocabulary& words, MatrixXd& target) {
  if (target.rows() != words.size() || target.cols() != table.width()) {
    throw DimensionError("copy_pretrained_rows: target " + shape_str(target) + " vs vocabulary " +
                         std::to_string(words.size()) + " x pretrained width " + std::to_string(table.width()));
  }
  Index copied = 0;
  for (Index i = 0; i < words.size(); ++i) {
    const std::string& tok = words.token(i);
    if (i == Vocabulary::oov_index() || !table.vocab.contains(tok)) continue;
    target.row(i) = table.vectors.row(table.vocab.lookup(tok));
    ++copied;
  }
  return copied;
}

}  // namespace vqag
