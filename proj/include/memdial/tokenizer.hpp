#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace memdial {

/// Byte-level vocabulary: ids 0..255 are raw bytes, followed by three
/// control tokens. Control tokens render as empty text so detokenize is the
/// exact inverse of tokenize on byte strings.
namespace tok {

constexpr int kByteVocab = 256;
constexpr int kBos = 256;
constexpr int kSep = 257;
constexpr int kEos = 258;
constexpr int kVocabSize = 259;

inline std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

inline std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= kVocabSize) throw std::invalid_argument("detokenize: id out of range");
    if (id < kByteVocab) out.push_back(static_cast<char>(id));
  }
  return out;
}

/// Human-readable rendering that keeps control tokens visible.
inline std::string render(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= kVocabSize) throw std::invalid_argument("render: id out of range");
    switch (id) {
      case kBos: out += "<bos>"; break;
      case kSep: out += "<sep>"; break;
      case kEos: out += "<eos>"; break;
      default: out.push_back(static_cast<char>(id));
    }
  }
  return out;
}

}  // namespace tok

}  // namespace memdial
