#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sfcap {

using TokenId = int;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kReservedTokens = 4;

// Bijective word <-> id map. Ids 0..3 are PAD, BOS, EOS, UNK.
class Vocabulary {
 public:
  // Reserved tokens followed by `words` in the given order. Duplicates and
  // words colliding with reserved spellings are rejected.
  explicit Vocabulary(const std::vector<std::string>& words = {});

  std::size_t size() const { return words_.size(); }
  bool contains(std::string_view word) const;
  // Out-of-vocabulary words map to UNK.
  TokenId encode(std::string_view word) const;
  std::vector<TokenId> encode(const std::vector<std::string>& words) const;
  const std::string& decode(TokenId id) const;
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;

  const std::vector<std::string>& words() const { return words_; }

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

  static const std::vector<std::string>& reserved_spellings();

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
};

// Lowercase + whitespace split.
std::vector<std::string> tokenize(std::string_view text);

}  // namespace sfcap
