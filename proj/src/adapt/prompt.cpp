// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/adapt/prompt.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "fewvlm/scorer/scorer.hpp"
#include "fewvlm/tasks/vocab.hpp"

namespace fewvlm {

std::vector<double> pooled_features(const VisionLanguageModel& model, const Image& image) {
  NoGradGuard guard;
  const Tensor f = model.encode_image(image);
  const std::size_t rows = f.dim(0), cols = f.dim(1);
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += f.at(r, c);
  for (auto& v : out) v /= static_cast<double>(rows);
  return out;
}

std::vector<std::size_t> rices_rank(std::span<const double> query, const std::vector<std::vector<double>>& pool,
                                    std::span<const std::uint64_t> ids, std::size_t k) {
  if (pool.empty()) throw std::invalid_argument("rices: empty support pool");
  if (ids.size() != pool.size()) throw std::invalid_argument("rices: ids must align with pool");
  if (k > pool.size())
    throw std::invalid_argument("rices: k=" + std::to_string(k) + " exceeds pool of " + std::to_string(pool.size()));
  std::vector<double> sims(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) sims[i] = cosine(query, pool[i]);
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return ids[a] < ids[b];
  });
  idx.resize(k);
  return idx;
}

RicesIndex::RicesIndex(const VisionLanguageModel& model, std::vector<Sample> pool)
    : model_(&model), pool_(std::move(pool)) {
  for (const auto& s : pool_) {
    features_.push_back(pooled_features(model, s.image));
    ids_.push_back(s.id);
  }
}

std::vector<Sample> RicesIndex::select(const Image& query, std::size_t k) const {
  const auto q = pooled_features(*model_, query);
  std::vector<Sample> out;
  for (std::size_t i : rices_rank(q, features_, ids_, k)) out.push_back(pool_[i]);
  return out;
}

std::size_t PromptSequence::length() const {
  std::size_t n = 1 + query_prefix.size();
  for (const auto& s : supports) n += s.text.size();
  return n;
}

DecodeInput PromptSequence::to_decode_input() const {
  DecodeInput in;
  for (const auto& s : supports) in.images.push_back(s.image);
  in.images.push_back(query);
  in.query_image = static_cast<int>(supports.size());
  in.prefix.push_back(tok::kBos);
  in.prefix_images.push_back(0);
  for (std::size_t i = 0; i < supports.size(); ++i)
    for (int t : supports[i].text) {
      in.prefix.push_back(t);
      in.prefix_images.push_back(static_cast<int>(i));
    }
  for (int t : query_prefix) {
    in.prefix.push_back(t);
    in.prefix_images.push_back(in.query_image);
  }
  return in;
}

std::vector<int> support_text(const Sample& s) {
  std::vector<int> words(s.tokens.begin() + 1, s.tokens.end() - 1);
  std::vector<int> out;
  if (s.task != TaskKind::kVqa) out.push_back(tok::kOutput);
  out.insert(out.end(), words.begin(), words.end());
  out.push_back(tok::kSep);
  return out;
}

PromptSequence build_prompt(const std::vector<Sample>& supports, const Image& query, TaskKind task) {
  PromptSequence p;
  for (const auto& s : supports) {
    if (s.task != task)
      throw std::invalid_argument("build_prompt: support " + std::to_string(s.id) + " is a " + task_name(s.task) +
                                  " sample, prompt task is " + task_name(task));
    if (task == TaskKind::kVqa && (s.tokens.size() < 3 || s.tokens[1] != tok::kQuestion))
      throw std::invalid_argument("build_prompt: VQA support text must start with Question:");
    p.supports.push_back({s.image, support_text(s)});
  }
  p.query = query;
  p.query_prefix = {task == TaskKind::kVqa ? tok::kQuestion : tok::kOutput};
  return p;
}

std::vector<ScoredCandidate> icl_infer(const SequenceModel& model, const PromptSequence& prompt, BeamConfig cfg) {
  const std::size_t len = prompt.length();
  if (len + 1 > static_cast<std::size_t>(model.max_length()))
    throw DecodeError("icl_infer: prompt of " + std::to_string(len) + " tokens leaves no room in the context of " +
                      std::to_string(model.max_length()) + "; use fewer shots");
  cfg.stop_tokens = {tok::kSep, tok::kEos};
  return beam_search(model, prompt.to_decode_input(), cfg);
}

}  // namespace fewvlm
