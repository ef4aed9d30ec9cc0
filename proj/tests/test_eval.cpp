// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "fewvlm/eval/evaluate.hpp"
#include "fewvlm/eval/metrics.hpp"
#include "fewvlm/tasks/vocab.hpp"

using namespace fewvlm;

namespace {

std::vector<int> words(const std::string& text) { return content_words(Vocabulary::standard().tokenize(text)); }

/// Answers with the reference (or a fixed wrong answer every `wrong_every` samples).
class ScriptedPredictor final : public Predictor {
 public:
  explicit ScriptedPredictor(int wrong_every) : wrong_every_(wrong_every) {}
  std::vector<int> generate(const Sample& s) const override {
    if (wrong(s)) return {};
    return s.task == TaskKind::kVqa ? vqa_answer(s) : content_words(s.tokens);
  }
  int classify(const Sample& s) const override { return wrong(s) ? (*s.class_id + 1) % 8 : *s.class_id; }

 private:
  bool wrong(const Sample& s) const { return wrong_every_ > 0 && s.id % static_cast<std::uint64_t>(wrong_every_) == 0; }
  int wrong_every_;
};

std::vector<Sample> samples(TaskKind task, int count) {
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) out.push_back(make_sample(task, static_cast<std::uint64_t>(i), 11));
  return out;
}

}  // namespace

TEST_CASE("token F1 of a red square against a red disc is 2/3") {
  CHECK(token_f1(words("a red square"), words("a red disc")) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("identical prediction scores 1 on every caption metric") {
  const auto ref = words("the image shows 2 objects : square in red , bar in blue");
  CHECK(exact_match(ref, ref));
  CHECK(token_f1(ref, ref) == 1.0);
  CHECK(ngram_score(ref, ref) == 1.0);
}

TEST_CASE("empty prediction scores 0 on every caption metric") {
  const auto ref = words("a red square");
  const std::vector<int> empty;
  CHECK_FALSE(exact_match(empty, ref));
  CHECK(token_f1(empty, ref) == 0.0);
  CHECK(ngram_score(empty, ref) == 0.0);
}

TEST_CASE("ngram score is the geometric mean of clipped unigram and bigram precision") {
  // unigrams: a red square a -> a(2 vs ref 1, clipped 1), red, square => 3/4; bigrams: a red, red square hit, square a miss => 2/3
  const double s = ngram_score(words("a red square a"), words("a red square"));
  CHECK(s == doctest::Approx(std::sqrt(0.75 * 2.0 / 3.0)).epsilon(1e-12));
  CHECK(ngram_score(words("red"), words("red")) == 1.0);
  CHECK(ngram_score(words("red"), words("a red")) == 0.0);
}

TEST_CASE("content words drop structural tokens") {
  const std::vector<int> t{tok::kBos, 7, tok::kSep, 8, tok::kEos, tok::kPad};
  CHECK(content_words(t) == std::vector<int>{7, 8});
}

TEST_CASE("mean and sample sd") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const MeanSd r = mean_sd(v);
  CHECK(r.mean == 2.5);
  CHECK(r.sd == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-12));
  const std::vector<double> one{7.0};
  CHECK(mean_sd(one).sd == 0.0);
}

TEST_CASE("evaluate with a perfect predictor gives 1 on every task") {
  for (TaskKind task : {TaskKind::kCaption, TaskKind::kClassify, TaskKind::kVqa}) {
    const auto m = evaluate(ScriptedPredictor(0), samples(task, 12), task);
    CHECK(m.count == 12);
    CHECK(m.primary() == 1.0);
  }
}

TEST_CASE("evaluate counts wrong predictions and does not depend on jobs") {
  const auto s = samples(TaskKind::kCaption, 20);
  const auto a = evaluate(ScriptedPredictor(4), s, TaskKind::kCaption, 1);
  const auto b = evaluate(ScriptedPredictor(4), s, TaskKind::kCaption, 3);
  CHECK(a.exact_match == doctest::Approx(15.0 / 20.0));
  CHECK(a.exact_match == b.exact_match);
  CHECK(a.token_f1 == b.token_f1);
  CHECK(a.ngram == b.ngram);

  const auto c = evaluate(ScriptedPredictor(5), samples(TaskKind::kClassify, 20), TaskKind::kClassify);
  CHECK(c.top1 == doctest::Approx(16.0 / 20.0));
}

TEST_CASE("evaluate rejects a task mismatch") {
  CHECK_THROWS_AS(evaluate(ScriptedPredictor(0), samples(TaskKind::kVqa, 2), TaskKind::kCaption), DatasetError);
}

TEST_CASE("vqa prefix and answer split the sample") {
  const Sample s = make_sample(TaskKind::kVqa, 3, 5);
  const auto prefix = vqa_question_prefix(s);
  const auto answer = vqa_answer(s);
  CHECK(prefix.front() == tok::kBos);
  CHECK(prefix[1] == tok::kQuestion);
  CHECK(prefix.back() == tok::kAnswer);
  CHECK_FALSE(answer.empty());
  std::vector<int> joined(prefix.begin(), prefix.end());
  joined.insert(joined.end(), answer.begin(), answer.end());
  joined.push_back(tok::kEos);
  CHECK(joined == s.tokens);
  CHECK_THROWS_AS(vqa_answer(make_sample(TaskKind::kCaption, 3, 5)), DatasetError);
}
