// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/tasks/vocab.hpp"

namespace fewvlm {

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary v({
      // specials, ids fixed by tok::
      "<pad>", "<bos>", "<eos>", "<sep>", "Question:", "Answer:", "Output:",
      // colors
      "red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange",
      // shapes
      "square", "disc", "bar",
      // numerals
      "0", "1", "2", "3",
      // caption function words
      "a", "the", "image", "shows", "objects", ":", "in", ",",
      // question words
      "what", "color", "is", "how", "many", "are", "there", "shape", "object", "where", "on", "left", "right",
      "top", "bottom", "yes", "no",
  });
  return v;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (int i = 0; i < size(); ++i) {
    if (!ids_.emplace(words_[static_cast<std::size_t>(i)], i).second)
      throw std::invalid_argument("vocabulary: duplicate word '" + words_[static_cast<std::size_t>(i)] + "'");
  }
}

int Vocabulary::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  if (it == ids_.end()) throw TokenizeError("tokenize: out-of-vocabulary word '" + std::string(word) + "'");
  return it->second;
}

bool Vocabulary::contains(std::string_view word) const { return ids_.count(std::string(word)) != 0; }

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw TokenizeError("detokenize: token id " + std::to_string(id) + " outside vocabulary");
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode_words(std::string_view text) const {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find(' ', pos), text.size());
    if (end == pos) throw TokenizeError("tokenize: empty word (double space) in '" + std::string(text) + "'");
    out.push_back(id(text.substr(pos, end - pos)));
    pos = end + 1;
    if (end + 1 == text.size()) throw TokenizeError("tokenize: trailing space in '" + std::string(text) + "'");
  }
  return out;
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
  std::vector<int> out{tok::kBos};
  const auto words = encode_words(text);
  out.insert(out.end(), words.begin(), words.end());
  out.push_back(tok::kEos);
  return out;
}

std::string Vocabulary::detokenize(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) {
    if (t == tok::kBos || t == tok::kEos || t == tok::kPad) continue;
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

}  // namespace fewvlm
