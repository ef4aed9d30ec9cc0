// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fewvlm {

class TokenizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace tok {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kSep = 3;
inline constexpr int kQuestion = 4;
inline constexpr int kAnswer = 5;
inline constexpr int kOutput = 6;
}  // namespace tok

/// Closed word-level vocabulary shared by every task. Words are separated by
/// single spaces; punctuation tokens (":" and ",") are ordinary words.
class Vocabulary {
 public:
  static const Vocabulary& standard();

  explicit Vocabulary(std::vector<std::string> words);

  int size() const { return static_cast<int>(words_.size()); }
  int id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(int id) const;

  /// Word ids without BOS/EOS.
  std::vector<int> encode_words(std::string_view text) const;
  /// BOS + words + EOS. "" -> [BOS, EOS].
  std::vector<int> tokenize(std::string_view text) const;
  /// Inverse of tokenize: drops BOS/EOS/PAD, joins the rest with spaces.
  std::string detokenize(std::span<const int> tokens) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace fewvlm
