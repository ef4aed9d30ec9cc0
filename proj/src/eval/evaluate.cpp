// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/eval/evaluate.hpp"

#include <algorithm>

#include "fewvlm/core/parallel.hpp"
#include "fewvlm/eval/metrics.hpp"
#include "fewvlm/tasks/scene.hpp"
#include "fewvlm/tasks/vocab.hpp"

namespace fewvlm {

namespace {

std::size_t answer_pos(const Sample& s) {
  const auto it = std::find(s.tokens.begin(), s.tokens.end(), tok::kAnswer);
  if (s.task != TaskKind::kVqa || it == s.tokens.end())
    throw DatasetError("sample " + std::to_string(s.id) + " is not a question/answer sample");
  return static_cast<std::size_t>(it - s.tokens.begin());
}

std::vector<int> best_words(const std::vector<ScoredCandidate>& cands) {
  if (cands.empty()) return {};
  return content_words(cands.front().generated());
}

std::vector<std::vector<int>> class_continuations(int terminator) {
  std::vector<std::vector<int>> out;
  for (auto t : class_texts()) {
    t.erase(t.begin());
    t.back() = terminator;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::vector<int> vqa_question_prefix(const Sample& s) {
  const std::size_t a = answer_pos(s);
  return {s.tokens.begin(), s.tokens.begin() + static_cast<std::ptrdiff_t>(a) + 1};
}

std::vector<int> vqa_answer(const Sample& s) {
  const std::size_t a = answer_pos(s);
  return content_words(std::span<const int>(s.tokens).subspan(a + 1));
}

DirectPredictor::DirectPredictor(const VisionLanguageModel& model, BeamConfig beam) : model_(model), beam_(beam) {}

std::vector<int> DirectPredictor::generate(const Sample& sample) const {
  std::vector<int> prefix{tok::kBos};
  if (sample.task == TaskKind::kVqa) prefix = vqa_question_prefix(sample);
  return best_words(beam_search(model_, DecodeInput::single(sample.image, prefix), beam_));
}

int DirectPredictor::classify(const Sample& sample) const {
  static const auto texts = class_texts();
  return classify_closed_set(model_, sample.image, texts).index;
}

IclPredictor::IclPredictor(const VisionLanguageModel& model, std::vector<Sample> supports, int shots, BeamConfig beam)
    : model_(model), index_(model, std::move(supports)), shots_(shots), beam_(beam) {
  if (shots_ < 0) throw std::invalid_argument("icl: shots must be >= 0");
}

PromptSequence IclPredictor::prompt_for(const Sample& sample) const {
  std::vector<Sample> supports;
  if (shots_ > 0) supports = index_.select(sample.image, static_cast<std::size_t>(shots_));
  PromptSequence p = build_prompt(supports, sample.image, sample.task);
  if (sample.task == TaskKind::kVqa) {
    const auto q = vqa_question_prefix(sample);
    p.query_prefix.assign(q.begin() + 1, q.end());  // drop BOS; starts with Question:
  }
  return p;
}

std::vector<int> IclPredictor::generate(const Sample& sample) const {
  return best_words(icl_infer(model_, prompt_for(sample), beam_));
}

int IclPredictor::classify(const Sample& sample) const {
  static const auto conts = class_continuations(tok::kSep);
  const PromptSequence p = prompt_for(sample);
  if (p.length() + 2 > static_cast<std::size_t>(model_.max_length()))
    throw DecodeError("icl classify: prompt does not fit the context; use fewer shots");
  return classify_continuations(model_, p.to_decode_input(), conts).index;
}

double TaskMetrics::primary() const {
  switch (task) {
    case TaskKind::kCaption: return exact_match;
    case TaskKind::kClassify: return top1;
    case TaskKind::kVqa: return vqa_exact;
  }
  return 0.0;
}

TaskMetrics evaluate(const Predictor& predictor, const std::vector<Sample>& samples, TaskKind task, int jobs) {
  for (const auto& s : samples)
    if (s.task != task)
      throw DatasetError("evaluate: sample " + std::to_string(s.id) + " is " + task_name(s.task) + ", expected " +
                         task_name(task));
  struct Row {
    double em = 0, f1 = 0, ng = 0, top1 = 0, vqa = 0;
  };
  std::vector<Row> rows(samples.size());
  auto work = [&](std::size_t i) {
    const Sample& s = samples[i];
    Row& r = rows[i];
    if (task == TaskKind::kClassify) {
      r.top1 = predictor.classify(s) == *s.class_id ? 1.0 : 0.0;
      return;
    }
    const auto pred = predictor.generate(s);
    const auto ref = task == TaskKind::kVqa ? vqa_answer(s) : content_words(s.tokens);
    r.em = exact_match(pred, ref) ? 1.0 : 0.0;
    r.f1 = token_f1(pred, ref);
    r.ng = ngram_score(pred, ref);
    r.vqa = task == TaskKind::kVqa ? r.em : 0.0;
  };
  parallel_for(samples.size(), jobs, work);
  TaskMetrics m;
  m.task = task;
  m.count = samples.size();
  if (samples.empty()) return m;
  // Summed in index order so the totals do not depend on `jobs`.
  for (const auto& r : rows) {
    m.exact_match += r.em;
    m.token_f1 += r.f1;
    m.ngram += r.ng;
    m.top1 += r.top1;
    m.vqa_exact += r.vqa;
  }
  const double n = static_cast<double>(samples.size());
  m.exact_match /= n;
  m.token_f1 /= n;
  m.ngram /= n;
  m.top1 /= n;
  m.vqa_exact /= n;
  return m;
}

}  // namespace fewvlm
