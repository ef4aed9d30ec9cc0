// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "fewvlm/adapt/prompt.hpp"
#include "fewvlm/decoding/decoding.hpp"
#include "fewvlm/tasks/dataset.hpp"

namespace fewvlm {

/// Produces a task prediction for one sample. Caption and VQA predictions are
/// content words; classification predictions are class indices.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::vector<int> generate(const Sample& sample) const = 0;
  virtual int classify(const Sample& sample) const = 0;
};

/// Question prefix "BOS Question: q Answer:" and answer words of a VQA sample.
std::vector<int> vqa_question_prefix(const Sample& s);
std::vector<int> vqa_answer(const Sample& s);

/// Decodes directly from the image (captions from BOS, answers after the
/// question prefix, classes by closed-set scoring).
class DirectPredictor final : public Predictor {
 public:
  DirectPredictor(const VisionLanguageModel& model, BeamConfig beam = {});
  std::vector<int> generate(const Sample& sample) const override;
  int classify(const Sample& sample) const override;

 private:
  VlmSequenceModel model_;
  BeamConfig beam_;
};

/// In-context prediction with RICES-selected supports.
class IclPredictor final : public Predictor {
 public:
  IclPredictor(const VisionLanguageModel& model, std::vector<Sample> supports, int shots, BeamConfig beam = {});
  std::vector<int> generate(const Sample& sample) const override;
  int classify(const Sample& sample) const override;
  PromptSequence prompt_for(const Sample& sample) const;

 private:
  VlmSequenceModel model_;
  RicesIndex index_;
  int shots_;
  BeamConfig beam_;
};

struct TaskMetrics {
  TaskKind task = TaskKind::kCaption;
  std::size_t count = 0;
  double exact_match = 0.0;  // captions
  double token_f1 = 0.0;
  double ngram = 0.0;
  double top1 = 0.0;        // classification
  double vqa_exact = 0.0;   // VQA exact answer
  /// The task's validation metric: exact match, top-1 or VQA exact answer.
  double primary() const;
};

/// Runs the predictor over every sample (split over `jobs` threads; the
/// result does not depend on `jobs`). Throws DatasetError on a task mismatch.
TaskMetrics evaluate(const Predictor& predictor, const std::vector<Sample>& samples, TaskKind task, int jobs = 1);

}  // namespace fewvlm
