#include "sfcap/vocabulary.hpp"

#include <cctype>
#include <sstream>

#include "sfcap/errors.hpp"

namespace sfcap {

const std::vector<std::string>& Vocabulary::reserved_spellings() {
  static const std::vector<std::string> reserved{"<pad>", "<bos>", "<eos>", "<unk>"};
  return reserved;
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  words_ = reserved_spellings();
  words_.insert(words_.end(), words.begin(), words.end());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i].empty()) throw ValidationError("Vocabulary: empty word");
    const auto [it, inserted] = ids_.emplace(words_[i], static_cast<TokenId>(i));
    if (!inserted) throw ValidationError("Vocabulary: duplicate word '" + words_[i] + "'");
  }
}

bool Vocabulary::contains(std::string_view word) const {
  return ids_.find(std::string(word)) != ids_.end();
}

TokenId Vocabulary::encode(std::string_view word) const {
  const auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(encode(w));
  return ids;
}

const std::string& Vocabulary::decode(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw ValidationError("Vocabulary: id " + std::to_string(id) + " out of range for size " +
                          std::to_string(words_.size()));
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (TokenId id : ids) words.push_back(decode(id));
  return words;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::string lowered(text);
  for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::istringstream in(lowered);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

}  // namespace sfcap
