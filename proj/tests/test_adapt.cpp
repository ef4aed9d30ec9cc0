// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "fewvlm/adapt/adaptation.hpp"
#include "fewvlm/adapt/prompt.hpp"
#include "fewvlm/eval/evaluate.hpp"
#include "fewvlm/tasks/vocab.hpp"
#include "support/models.hpp"
#include "support/rices_oracle.hpp"

using namespace fewvlm;
using namespace fewvlm::testing;

namespace {

VLMConfig small_config(int max_seq = 128) {
  VLMConfig c = tiny_config(Vocabulary::standard().size(), 3);
  c.max_seq_len = max_seq;
  return c;
}

std::vector<Sample> samples(TaskKind task, int count, std::uint64_t seed, std::uint64_t first_id = 0) {
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) out.push_back(make_sample(task, first_id + static_cast<std::uint64_t>(i), seed));
  return out;
}

AdaptConfig quick(int epochs = 2) {
  AdaptConfig a;
  a.train.epochs = epochs;
  a.train.lr = 1e-2;
  a.train.seed = 5;
  a.beam.beam_width = 1;
  a.beam.max_len = 8;
  return a;
}

}  // namespace

TEST_CASE("rices ranks the documented example") {
  const std::vector<double> q{1.0, 0.0};
  const std::vector<std::vector<double>> pool{{1.0, 0.0}, {0.0, 1.0}, {0.6, 0.8}};
  const std::vector<std::uint64_t> ids{0, 1, 2};
  CHECK(rices_rank(q, pool, ids, 2) == std::vector<std::size_t>{0, 2});
}

TEST_CASE("rices matches the brute-force cosine oracle including ties") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = random_rices_instance(rng);
    CAPTURE(trial);
    CHECK(rices_rank(inst.query, inst.pool, inst.ids, inst.k) == rices_oracle(inst));
  }
}

TEST_CASE("rices with k equal to the pool is a permutation; an identical image ranks first") {
  VisionLanguageModel m(small_config());
  auto pool = samples(TaskKind::kCaption, 12, 4);
  RicesIndex index(m, pool);
  const auto all = index.select(pool[7].image, pool.size());
  CHECK(all.size() == pool.size());
  CHECK(all.front().id == pool[7].id);
  std::vector<std::uint64_t> got, want;
  for (const auto& s : all) got.push_back(s.id);
  for (const auto& s : pool) want.push_back(s.id);
  std::sort(got.begin(), got.end());
  CHECK(got == want);
  CHECK_THROWS(index.select(pool[0].image, pool.size() + 1));
  CHECK_THROWS(RicesIndex(m, {}).select(pool[0].image, 1));
}

TEST_CASE("caption prompt interleaves supports and ends with the Output cue") {
  auto sup = samples(TaskKind::kCaption, 4, 2);
  const auto q = make_sample(TaskKind::kCaption, 100, 2);
  const PromptSequence p = build_prompt(sup, q.image, TaskKind::kCaption);
  CHECK(p.supports.size() == 4);
  const DecodeInput in = p.to_decode_input();
  CHECK(in.images.size() == 5);
  CHECK(in.prefix.front() == tok::kBos);
  CHECK(in.prefix.back() == tok::kOutput);
  for (const auto& seg : p.supports) CHECK(seg.text.back() == tok::kSep);
  CHECK(p.query_prefix == std::vector<int>{tok::kOutput});
  CHECK(in.query_image == 4);
  CHECK(in.prefix_images.back() == 4);
  CHECK(std::is_sorted(in.prefix_images.begin(), in.prefix_images.end()));
}

TEST_CASE("vqa prompt ends with exactly the Question cue") {
  auto sup = samples(TaskKind::kVqa, 2, 3);
  const PromptSequence p = build_prompt(sup, sup[0].image, TaskKind::kVqa);
  CHECK(p.query_prefix == std::vector<int>{tok::kQuestion});
  const auto t = support_text(sup[0]);
  CHECK(t.front() == tok::kQuestion);
  CHECK(std::count(t.begin(), t.end(), tok::kAnswer) == 1);
  CHECK(t.back() == tok::kSep);
}

TEST_CASE("build_prompt rejects mixed tasks") {
  auto sup = samples(TaskKind::kCaption, 2, 3);
  sup.push_back(make_sample(TaskKind::kVqa, 50, 3));
  CHECK_THROWS_AS(build_prompt(sup, sup[0].image, TaskKind::kCaption), std::invalid_argument);
}

TEST_CASE("a zero-shot prompt is the query image and the cue") {
  const auto q = make_sample(TaskKind::kCaption, 1, 3);
  const DecodeInput in = build_prompt({}, q.image, TaskKind::kCaption).to_decode_input();
  CHECK(in.images.size() == 1);
  CHECK(in.prefix == std::vector<int>{tok::kBos, tok::kOutput});
}

TEST_CASE("icl inference is deterministic, leaves the model untouched and reports overflow") {
  VisionLanguageModel m(small_config());
  randomize(m, 9);
  const auto before = m.params().fingerprint();
  const auto sup = samples(TaskKind::kCaption, 2, 7);
  const auto q = make_sample(TaskKind::kCaption, 300, 7);
  const PromptSequence p = build_prompt(sup, q.image, TaskKind::kCaption);
  BeamConfig b;
  b.max_len = 6;
  const VlmSequenceModel sm(m);
  const auto a = icl_infer(sm, p, b);
  const auto c = icl_infer(sm, p, b);
  REQUIRE_FALSE(a.empty());
  CHECK(a.size() == c.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tokens == c[i].tokens);
    CHECK(a[i].log_likelihood == c[i].log_likelihood);
  }
  CHECK(m.params().fingerprint() == before);

  VisionLanguageModel narrow(small_config(24));
  const VlmSequenceModel ns(narrow);
  CHECK_THROWS_AS(icl_infer(ns, build_prompt(samples(TaskKind::kCaption, 4, 7), q.image, TaskKind::kCaption), b),
                  DecodeError);
}

TEST_CASE("finetune keeps frozen groups, restores the best epoch and lowers the loss") {
  VisionLanguageModel base(small_config());
  randomize(base, 4, 0.05);
  VisionLanguageModel m = base.clone();
  const auto train = samples(TaskKind::kClassify, 6, 1);
  const auto val = samples(TaskKind::kClassify, 6, 1, 1000);
  const auto r = finetune(m, train, val, quick(4));
  CHECK(r.method == "finetune");
  CHECK(r.epochs_run == 4);
  CHECK(r.epochs.front().train_loss > r.epochs[static_cast<std::size_t>(r.best_epoch)].train_loss - 1e-12);
  double best = -1.0;
  for (const auto& e : r.epochs) best = std::max(best, e.val_metric);
  CHECK(r.best_metric == best);
  CHECK(r.epochs[static_cast<std::size_t>(r.best_epoch)].val_metric == best);
  CHECK(r.fingerprint == m.params().fingerprint());
  // The restored parameters reproduce the reported metric.
  CHECK(task_validator(val, TaskKind::kClassify, quick().beam)(m) == r.best_metric);
  for (const auto& p : m.params()) {
    const auto& q = base.params().at(p.name);
    const bool updated = p.group == ParamGroup::kResampler || p.group == ParamGroup::kGatedXattn;
    if (!updated) CHECK(std::equal(p.value.data().begin(), p.value.data().end(), q.value.data().begin()));
  }
}

TEST_CASE("adapters start as the identity and train only adapters and layer norms") {
  VisionLanguageModel base(small_config());
  randomize(base, 6, 0.05);
  VisionLanguageModel m = base.clone();
  const auto train = samples(TaskKind::kCaption, 4, 2);
  const auto val = samples(TaskKind::kCaption, 4, 2, 1000);
  const auto cfg = quick(2);
  const double theta0 = task_validator(val, TaskKind::kCaption, cfg.beam)(base);
  const auto r = train_adapters(m, train, val, cfg);
  CHECK(r.method == "adapter");
  CHECK(r.initial_metric == theta0);
  CHECK(r.trainable_params * 10 < r.total_params);
  for (const auto& p : m.params()) {
    if (p.group == ParamGroup::kAdapter || p.group == ParamGroup::kLayerNorm) continue;
    const auto& q = base.params().at(p.name);
    CHECK(std::equal(p.value.data().begin(), p.value.data().end(), q.value.data().begin()));
  }
}

TEST_CASE("adaptation rejects an empty training set") {
  VisionLanguageModel m(small_config());
  CHECK_THROWS_AS(finetune(m, {}, samples(TaskKind::kCaption, 2, 1), quick()), std::invalid_argument);
  CHECK_THROWS_AS(train_adapters(m, {}, samples(TaskKind::kCaption, 2, 1), quick()), std::invalid_argument);
}

TEST_CASE("supervised plan covers every sample each pass and honours the step floor") {
  const auto plan = supervised_plan(10, 4, 3, 0);
  const auto e0 = plan(0);
  CHECK(e0.size() == 3);
  std::vector<std::size_t> seen;
  for (const auto& b : e0) seen.insert(seen.end(), b.gt.begin(), b.gt.end());
  std::sort(seen.begin(), seen.end());
  std::vector<std::size_t> all(10);
  std::iota(all.begin(), all.end(), 0);
  CHECK(seen == all);
  CHECK(plan(0).size() == e0.size());
  CHECK(plan(0)[0].gt == e0[0].gt);

  const auto floored = supervised_plan(10, 4, 3, 7)(0);
  CHECK(floored.size() == 9);
  CHECK(floored[0].gt == e0[0].gt);
  CHECK_THROWS(supervised_plan(0, 4, 3));
}
