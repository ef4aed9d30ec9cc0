// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "fewvlm/selflabel/selflabel.hpp"
#include "fewvlm/tasks/scene.hpp"
#include "fewvlm/tasks/vocab.hpp"
#include "support/filter_oracle.hpp"
#include "support/models.hpp"

using namespace fewvlm;
using namespace fewvlm::testing;

namespace {

VLMConfig label_config() {
  VLMConfig c = tiny_config(Vocabulary::standard().size(), 2);
  c.max_seq_len = 96;
  return c;
}

std::vector<PoolImage> pool_of(int n, std::uint64_t seed) {
  std::vector<PoolImage> p;
  for (int i = 0; i < n; ++i) p.push_back(make_pool_image(static_cast<std::uint64_t>(i), seed, Palette::kInDistribution));
  return p;
}

PseudoLabel scored(std::uint64_t id, double contrastive, double ll, int rank = 0) {
  PseudoLabel l;
  l.image_id = id;
  l.tokens = {tok::kBos, 7, tok::kEos};
  l.contrastive_score = contrastive;
  l.log_likelihood = ll;
  l.rank = rank;
  return l;
}

/// Word ids of `text` without the BOS/EOS that tokenize adds.
std::vector<int> words(const std::string& text) {
  auto t = Vocabulary::standard().tokenize(text);
  return {t.begin() + 1, t.end() - 1};
}

double rescore(const VisionLanguageModel& m, const PoolImage& img, const PseudoLabel& l) {
  const VlmSequenceModel sm(m);
  const std::vector<int> cont(l.tokens.begin() + 1, l.tokens.end());
  return score_continuation(sm, DecodeInput::single(img.image, {tok::kBos}), cont);
}

}  // namespace

TEST_CASE("caption labels: cardinality, recomputable likelihoods and determinism") {
  VisionLanguageModel m(label_config());
  randomize(m, 3, 0.4);
  const auto pool = pool_of(100, 4);
  BeamConfig b;
  b.max_len = 10;
  const auto r = label_captions(m, pool, b, 2);
  CHECK(r.labels.size() >= 100);
  CHECK(r.labels.size() <= 300);
  std::map<std::uint64_t, int> per_image;
  for (const auto& l : r.labels) ++per_image[l.image_id];
  CHECK(per_image.size() == 100);
  for (std::size_t i = 1; i < r.labels.size(); ++i) CHECK(r.labels[i - 1].image_id <= r.labels[i].image_id);
  for (const auto& l : r.labels) {
    CHECK(l.source == LabelSource::kBeam);
    CHECK_FALSE(l.contrastive_score.has_value());
    CHECK(std::abs(rescore(m, pool[l.image_id], l) - l.log_likelihood) < 1e-9);
  }
  const auto again = label_captions(m, pool, b, 1);
  CHECK(same_labels(r.labels, again.labels));
}

TEST_CASE("class labels are the closed-set argmax") {
  VisionLanguageModel m(label_config());
  randomize(m, 5, 0.4);
  const auto pool = pool_of(30, 6);
  const auto classes = class_texts();
  const auto r = label_classes(m, pool, classes);
  REQUIRE(r.labels.size() == pool.size());
  const VlmSequenceModel sm(m);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    std::size_t best = 0;
    double best_ll = -INFINITY;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const double ll = score_sequence(sm, pool[i].image, classes[c]);
      if (ll > best_ll) {
        best_ll = ll;
        best = c;
      }
    }
    CHECK(r.labels[i].tokens == classes[best]);
    CHECK(r.labels[i].log_likelihood == best_ll);
    CHECK(r.labels[i].source == LabelSource::kClosedSet);
  }
  const auto single = label_classes(m, pool, {classes[3]});
  for (const auto& l : single.labels) CHECK(l.tokens == classes[3]);
}

TEST_CASE("qa parser") {
  const auto parsed = parse_qa(words("Question: what color is the square Answer: red <eos>"));
  REQUIRE(parsed.has_value());
  CHECK(parsed->question == words("what color is the square"));
  CHECK(parsed->answer == words("red"));
  CHECK_FALSE(parse_qa(words("Question: what color is the square Answer: red")).has_value());
  CHECK(parse_qa(words("Question: what color is the square Answer: red"), false).has_value());
  CHECK_FALSE(parse_qa(words("Question: what color Answer: <sep>")).has_value());
  CHECK_FALSE(parse_qa(words("Question: what color is red <sep>")).has_value());
  CHECK_FALSE(parse_qa(words("Question: what Question: color Answer: red <sep>")).has_value());
}

TEST_CASE("vqa labels start with the cue and account for every image") {
  VisionLanguageModel m(label_config());
  randomize(m, 8, 0.4);
  const auto pool = pool_of(20, 9);
  std::vector<Sample> supports;
  for (int i = 0; i < 6; ++i) supports.push_back(make_sample(TaskKind::kVqa, 500 + i, 9));
  BeamConfig b;
  b.max_len = 10;
  b.stop_tokens = {tok::kSep, tok::kEos};
  const auto r = label_vqa(m, pool, supports, 2, b);
  CHECK(r.labels.size() + r.dropped == pool.size());
  for (const auto& l : r.labels) {
    CHECK(l.tokens[0] == tok::kBos);
    CHECK(l.tokens[1] == tok::kQuestion);
    CHECK(l.source == LabelSource::kIclQa);
  }
  CHECK_THROWS_AS(label_vqa(m, pool, supports, 7, b), std::invalid_argument);
}

TEST_CASE("contrastive scores come from the scorer") {
  VisionLanguageModel m(label_config());
  DualEncoder scorer(m);
  const auto pool = pool_of(5, 2);
  std::vector<PseudoLabel> labels;
  for (const auto& p : pool) {
    PseudoLabel l;
    l.image_id = p.id;
    l.tokens = caption_of(p.scene, CaptionStyle::kTarget);
    labels.push_back(l);
  }
  attach_contrastive_scores(labels, pool, scorer);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    REQUIRE(labels[i].contrastive_score.has_value());
    CHECK(std::abs(*labels[i].contrastive_score - scorer.similarity(pool[i].image, labels[i].tokens)) < 1e-9);
  }
}

TEST_CASE("filter keeps the top fraction by similarity") {
  const std::vector<PseudoLabel> labels{scored(1, 0.9, -1), scored(2, 0.5, -1), scored(3, 0.1, -1)};
  const auto kept = filter(labels, FilterSpec::contrastive_topfrac(2.0 / 3.0));
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].image_id == 1);
  CHECK(kept[1].image_id == 2);
}

TEST_CASE("threshold filter keeps scores above it and fails when nothing survives") {
  const std::vector<PseudoLabel> labels{scored(1, 0.25, -1), scored(2, 0.2, -1), scored(3, 0.1, -1)};
  const auto kept = filter(labels, FilterSpec::contrastive_threshold(0.2));
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].image_id == 1);
  CHECK_THROWS_AS(filter(labels, FilterSpec::contrastive_threshold(0.9)), std::invalid_argument);
}

TEST_CASE("likelihood filter at fraction 1 keeps the best candidate of every image") {
  const std::vector<PseudoLabel> labels{scored(1, 0, -3, 1), scored(1, 0, -1, 0), scored(2, 0, -2, 0),
                                        scored(2, 0, -0.5, 2)};
  const auto kept = filter(labels, FilterSpec::likelihood_topfrac(1.0));
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].log_likelihood == -1);
  CHECK(kept[1].log_likelihood == -0.5);
}

TEST_CASE("contrastive filters need scores; specs validate their fields") {
  PseudoLabel l = scored(1, 0, -1);
  l.contrastive_score.reset();
  CHECK_THROWS_AS(filter({l}, FilterSpec::contrastive_topfrac(0.5)), std::invalid_argument);
  CHECK_THROWS_AS(FilterSpec({FilterKind::kLikelihoodTopFrac, std::nullopt, 0.2}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(FilterSpec::likelihood_topfrac(0.0).validate(), std::invalid_argument);
  CHECK_THROWS_AS(FilterSpec::likelihood_topfrac(1.5).validate(), std::invalid_argument);
  CHECK_NOTHROW(FilterSpec::none().validate());
}

TEST_CASE("filter matches the two-pass sort oracle and nests across fractions") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const auto labels = random_labels(rng);
    CAPTURE(trial);
    CHECK(same_labels(filter(labels, FilterSpec::none()), filter_oracle(labels, FilterSpec::none())));
    for (double t : {-0.5, 0.2, 0.6}) {
      const auto spec = FilterSpec::contrastive_threshold(t);
      const auto want = filter_oracle(labels, spec);
      if (want.empty())
        CHECK_THROWS(filter(labels, spec));
      else
        CHECK(same_labels(filter(labels, spec), want));
    }
    for (auto make : {&FilterSpec::contrastive_topfrac, &FilterSpec::likelihood_topfrac}) {
      std::vector<std::vector<PseudoLabel>> outs;
      for (double f : oracle_fractions()) {
        outs.push_back(filter(labels, make(f)));
        CHECK(same_labels(outs.back(), filter_oracle(labels, make(f))));
      }
      for (std::size_t a = 0; a < outs.size(); ++a)
        for (std::size_t b = a + 1; b < outs.size(); ++b)
          for (const auto& l : outs[a])
            CHECK(std::any_of(outs[b].begin(), outs[b].end(), [&](const PseudoLabel& x) {
              return x.image_id == l.image_id && x.tokens == l.tokens;
            }));
    }
  }
}

TEST_CASE("filtering is a pure function") {
  Rng rng(3);
  const auto labels = random_labels(rng);
  const auto a = filter(labels, FilterSpec::likelihood_topfrac(0.3));
  const auto b = filter(labels, FilterSpec::likelihood_topfrac(0.3));
  CHECK(same_labels(a, b));
}

TEST_CASE("labels round-trip through JSON lines and become samples") {
  const auto pool = pool_of(3, 1);
  std::vector<PseudoLabel> labels{scored(0, 0.4, -1.25, 1), scored(2, -0.3, -2.5, 0)};
  labels[1].contrastive_score.reset();
  labels[1].tokens = {tok::kBos, 7, 8};  // force-finished, no EOS
  labels[1].source = LabelSource::kIclQa;
  const auto path = (std::filesystem::temp_directory_path() / "fewvlm_labels_rt.jsonl").string();
  write_labels(path, labels);
  const auto back = read_labels(path);
  CHECK(same_labels(labels, back));
  CHECK(back[1].source == LabelSource::kIclQa);
  std::filesystem::remove(path);

  const auto s = to_samples(labels, pool);
  REQUIRE(s.size() == 2);
  CHECK(s[1].tokens.back() == tok::kEos);
  CHECK(s[1].scene == pool[2].scene);
  labels[0].image_id = 77;
  CHECK_THROWS_AS(to_samples(labels, pool), std::invalid_argument);
}
