// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "fewvlm/model/image.hpp"
#include "fewvlm/model/model.hpp"

namespace fewvlm {

class DecodeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Incremental scoring state: consumes one token and returns next-token logits.
class SequenceState {
 public:
  virtual ~SequenceState() = default;
  virtual std::vector<double> push(int token, int image) = 0;
  virtual std::unique_ptr<SequenceState> fork() const = 0;
};

/// Anything that can be decoded: a vocabulary, a context limit and a way to
/// open a state conditioned on a list of images.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual int vocab_size() const = 0;
  virtual int max_length() const = 0;
  virtual std::unique_ptr<SequenceState> begin(std::span<const Image> images) const = 0;
};

/// KV-cached adapter over a VisionLanguageModel. Holds a reference.
class VlmSequenceModel final : public SequenceModel {
 public:
  explicit VlmSequenceModel(const VisionLanguageModel& model) : model_(&model) {}
  int vocab_size() const override { return model_->config().vocab_size; }
  int max_length() const override { return model_->config().max_seq_len; }
  std::unique_ptr<SequenceState> begin(std::span<const Image> images) const override;

 private:
  const VisionLanguageModel* model_;
};

/// Conditioning for one decode: images, a prefix (starting with BOS), the
/// image slot of each prefix token and the slot used by generated tokens.
struct DecodeInput {
  std::vector<Image> images;
  std::vector<int> prefix;
  std::vector<int> prefix_images;
  int query_image = 0;

  static DecodeInput single(const Image& image, std::vector<int> prefix);
  void validate() const;
};

struct BeamConfig {
  int beam_width = 3;
  int max_len = 24;  // generated tokens, stop token included
  std::vector<int> stop_tokens{2};
};

struct ScoredCandidate {
  std::vector<int> tokens;  // prefix + generated
  std::size_t prefix_length = 0;
  double log_likelihood = 0.0;  // of the generated part
  int rank = 0;
  bool finished = false;   // ended with a stop token
  bool truncated = false;  // force-finished at max_len or the context limit

  std::vector<int> generated() const {
    return {tokens.begin() + static_cast<std::ptrdiff_t>(prefix_length), tokens.end()};
  }
};

/// Log-softmax of a logit row (max-subtracted).
std::vector<double> log_softmax(std::span<const double> logits);

/// Length-synchronous beam search. Each step ranks every extension of every
/// live hypothesis by cumulative log-likelihood (ties: lower token id, then
/// earlier parent) and keeps the best `beam_width`; stop-token extensions
/// retire. Results are ordered by log-likelihood desc then lexicographic tokens.
std::vector<ScoredCandidate> beam_search(const SequenceModel& model, const DecodeInput& input, const BeamConfig& cfg);
std::vector<ScoredCandidate> beam_search(const SequenceModel& model, const Image& image, std::vector<int> prefix,
                                         int beam_width = 3, int max_len = 24);

/// Teacher-forced sum of log P(continuation_t | prefix, continuation_<t).
double score_continuation(const SequenceModel& model, const DecodeInput& input, std::span<const int> continuation);
/// tokens = BOS ... EOS; sums log-probs of every token after BOS.
double score_sequence(const SequenceModel& model, const Image& image, std::span<const int> tokens);

struct ClassifyResult {
  int index = 0;
  std::vector<double> log_likelihoods;
};

/// Argmax of per-continuation scores; ties go to the lowest index.
ClassifyResult classify_continuations(const SequenceModel& model, const DecodeInput& input,
                                      const std::vector<std::vector<int>>& continuations);
/// class_texts are BOS ... EOS sequences scored as whole sequences.
ClassifyResult classify_closed_set(const SequenceModel& model, const Image& image,
                                   const std::vector<std::vector<int>>& class_texts);

}  // namespace fewvlm
