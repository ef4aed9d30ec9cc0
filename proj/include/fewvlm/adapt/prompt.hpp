// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fewvlm/decoding/decoding.hpp"
#include "fewvlm/model/model.hpp"
#include "fewvlm/tasks/dataset.hpp"

namespace fewvlm {

/// Mean over patch rows of the frozen encoder's features.
std::vector<double> pooled_features(const VisionLanguageModel& model, const Image& image);

/// Indices of the k rows of `pool` most cosine-similar to `query`, best
/// first; equal cosines go to the smaller id.
std::vector<std::size_t> rices_rank(std::span<const double> query, const std::vector<std::vector<double>>& pool,
                                    std::span<const std::uint64_t> ids, std::size_t k);

/// Support pool with precomputed pooled features.
class RicesIndex {
 public:
  RicesIndex(const VisionLanguageModel& model, std::vector<Sample> pool);
  const std::vector<Sample>& pool() const { return pool_; }
  /// k supports for the query, most similar first. Throws on an empty pool or k > |pool|.
  std::vector<Sample> select(const Image& query, std::size_t k) const;

 private:
  const VisionLanguageModel* model_;
  std::vector<Sample> pool_;
  std::vector<std::vector<double>> features_;
  std::vector<std::uint64_t> ids_;
};

struct PromptSegment {
  Image image;
  std::vector<int> text;  // formatted, ends with SEP
};

/// Supports in order, then the query image with an open text prefix.
struct PromptSequence {
  std::vector<PromptSegment> supports;
  Image query;
  std::vector<int> query_prefix;

  std::size_t length() const;
  /// BOS + support texts + query prefix, each segment tied to its own image.
  DecodeInput to_decode_input() const;
};

/// Support text as it appears inside a prompt: "Output: <words> SEP" for
/// captions and classes, "Question: q Answer: a SEP" for VQA.
std::vector<int> support_text(const Sample& s);

/// Interleaves the supports and ends with the task's cue ("Output:" or
/// "Question:"). Throws std::invalid_argument when a support's task differs.
PromptSequence build_prompt(const std::vector<Sample>& supports, const Image& query, TaskKind task);

/// Beam search over the prompt, stopping at SEP or EOS. Throws DecodeError
/// asking for fewer shots when the prompt does not fit the context.
std::vector<ScoredCandidate> icl_infer(const SequenceModel& model, const PromptSequence& prompt, BeamConfig cfg);

}  // namespace fewvlm
