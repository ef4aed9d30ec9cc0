// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "fewvlm/core/rng.hpp"
#include "fewvlm/tasks/dataset.hpp"
#include "fewvlm/tasks/scene.hpp"
#include "fewvlm/tasks/vocab.hpp"

using namespace fewvlm;

namespace {

const Vocabulary& V() { return Vocabulary::standard(); }

SceneSpec one(int shape, int color, int cell) { return SceneSpec{{{shape, color, cell}}, 0}; }

int color_index(const std::string& name) {
  const auto& c = color_names();
  return static_cast<int>(std::find(c.begin(), c.end(), name) - c.begin());
}

int shape_index(const std::string& name) {
  const auto& s = shape_names();
  return static_cast<int>(std::find(s.begin(), s.end(), name) - s.begin());
}

}  // namespace

TEST_CASE("vocabulary fits the model and has the special tokens") {
  CHECK(V().size() <= 64);
  CHECK(V().id("<bos>") == tok::kBos);
  CHECK(V().id("<eos>") == tok::kEos);
  CHECK(V().id("Question:") == tok::kQuestion);
  CHECK(V().id("Answer:") == tok::kAnswer);
  CHECK(V().id("Output:") == tok::kOutput);
}

TEST_CASE("tokenizer basics") {
  CHECK(V().tokenize("") == std::vector<int>{tok::kBos, tok::kEos});
  CHECK(V().detokenize(V().tokenize("a red square")) == "a red square");
  try {
    (void)V().tokenize("a zebra");
    FAIL("expected TokenizeError");
  } catch (const TokenizeError& e) {
    CHECK(std::string(e.what()).find("zebra") != std::string::npos);
  }
}

TEST_CASE("grammar productions round-trip through the tokenizer") {
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const SceneSpec s = random_scene(derive_seed(99, i));
    for (CaptionStyle st : {CaptionStyle::kPretrain, CaptionStyle::kTarget}) {
      const std::string text = caption_text(s, st);
      CHECK(V().detokenize(V().tokenize(text)) == text);
      CHECK(caption_of(s, st) == V().tokenize(text));
    }
    const auto qa = make_vqa(s, static_cast<int>(i % kNumQuestionTypes));
    if (qa) CHECK(V().detokenize(V().tokenize(qa_text(*qa))) == qa_text(*qa));
  }
}

TEST_CASE("scene invariants") {
  for (std::uint64_t i = 0; i < 500; ++i) {
    const SceneSpec s = random_scene(i);
    CHECK_NOTHROW(s.validate());
    CHECK(s.objects.size() >= 1);
    CHECK(s.objects.size() <= 3);
    std::set<int> cells;
    for (const auto& o : s.objects) cells.insert(o.cell);
    CHECK(cells.size() == s.objects.size());
    CHECK(std::is_sorted(s.objects.begin(), s.objects.end(),
                         [](const SceneObject& a, const SceneObject& b) { return a.cell < b.cell; }));
  }
  SceneSpec bad{{{0, 0, 3}, {1, 1, 3}}, 0};
  CHECK_THROWS(bad.validate());
  CHECK_THROWS(SceneSpec{{}, 0}.validate());
}

TEST_CASE("shifted palette is disjoint from the named colors") {
  for (std::uint64_t i = 0; i < 200; ++i)
    for (const auto& o : random_scene(i, Palette::kShifted).objects) {
      CHECK(o.color >= kNumColors);
      CHECK(o.color < kPaletteSize);
    }
}

TEST_CASE("render is deterministic with a constant background") {
  const SceneSpec s = random_scene(5);
  CHECK(render(s) == render(s));
  const Image img = render(one(0, 0, 0));
  const double bg = img.at(0, 7, 7);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x)
        if (y >= 2 || x >= 2) CHECK(img.at(c, y, x) == img.at(c, 7, 7));
  CHECK(bg == img.at(0, 4, 4));
}

TEST_CASE("changing one object's color changes only its cell") {
  SceneSpec a{{{0, 0, 5}, {1, 2, 10}}, 0};
  SceneSpec b = a;
  b.objects[1].color = 4;
  const Image ia = render(a), ib = render(b);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const int cell = static_cast<int>((y / 2) * 4 + x / 2);
        if (cell != 10) CHECK(ia.at(c, y, x) == ib.at(c, y, x));
      }
  CHECK_FALSE(ia == ib);
}

TEST_CASE("color jitter scales brightness") {
  const Image img = render(random_scene(3));
  const Image j = color_jitter(img, 1.05);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    CHECK(j.pixels[i] == doctest::Approx(img.pixels[i] * 1.05));
}

TEST_CASE("caption grammars") {
  const SceneSpec red_square = one(shape_index("square"), color_index("red"), 0);
  CHECK(caption_of(red_square, CaptionStyle::kPretrain) == V().tokenize("a red square"));
  CHECK(caption_of(red_square, CaptionStyle::kPretrain) == caption_of(red_square, CaptionStyle::kPretrain));
  const SceneSpec two{{{0, 0, 1}, {1, 2, 6}}, 0};
  CHECK(caption_text(two, CaptionStyle::kTarget) == "the image shows 2 objects : square in red , disc in blue");
  const auto toks = caption_of(two, CaptionStyle::kTarget);
  CHECK(std::find(toks.begin(), toks.end(), V().id("2")) != toks.end());
}

TEST_CASE("vqa answers follow the scene") {
  const SceneSpec s{{{shape_index("square"), color_index("red"), 0},
                     {shape_index("disc"), color_index("blue"), 7},
                     {shape_index("bar"), color_index("green"), 13}},
                    1};
  const auto count = make_vqa(s, 1);
  REQUIRE(count);
  CHECK(count->question == "how many objects are there");
  CHECK(count->answer == "3");
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SceneSpec t = s;
    t.seed = seed;
    const auto color = make_vqa(t, 0);
    REQUIRE(color);
    const std::string shape = color->question.substr(color->question.rfind(' ') + 1);
    for (const auto& o : t.objects)
      if (shape_names()[static_cast<std::size_t>(o.shape)] == shape)
        CHECK(color->answer == color_names()[static_cast<std::size_t>(o.color)]);
    const auto presence = make_vqa(t, 2);
    REQUIRE(presence);
    if (presence->question == "is there a red square") CHECK(presence->answer == "yes");
    CHECK(question_type_of(presence->question) == 2);
  }
  const auto where = make_vqa(s, 4);
  REQUIRE(where);
  CHECK(V().contains(where->answer.substr(0, where->answer.find(' '))));
}

TEST_CASE("inapplicable templates signal a skip") {
  const SceneSpec lone = one(0, 0, 0);
  SceneSpec two_squares{{{0, 0, 0}, {0, 1, 5}}, 0};
  CHECK_FALSE(make_vqa(two_squares, 0).has_value());
  SceneSpec shifted{{{0, 9, 0}}, 0};
  for (int q = 0; q < kNumQuestionTypes; ++q) CHECK_FALSE(make_vqa(shifted, q).has_value());
  CHECK(make_vqa(lone, 1).has_value());
  CHECK_THROWS(make_vqa(lone, kNumQuestionTypes));
}

TEST_CASE("balanced sampling") {
  std::vector<Sample> pop;
  for (int g = 0; g < 3; ++g)
    for (int i = 0; i < 20; ++i) pop.push_back(make_sample(TaskKind::kClassify, static_cast<std::uint64_t>(g * 100 + i), 7, g));
  const auto one_each = balanced_sample(pop, 10, 1, 4);
  REQUIRE(one_each.size() == 3);
  std::map<int, int> counts;
  for (const auto& s : one_each) ++counts[group_of(s)];
  for (const auto& [g, c] : counts) CHECK(c == 1);
  const auto five = balanced_sample(pop, 10, 5, 4);
  counts.clear();
  for (const auto& s : five) ++counts[group_of(s)];
  CHECK(counts.size() == 3);
  for (const auto& [g, c] : counts) CHECK(c == 5);
  CHECK(balanced_sample(pop, 10, 5, 4).size() == five.size());
  for (std::size_t i = 0; i < five.size(); ++i) CHECK(balanced_sample(pop, 10, 5, 4)[i].id == five[i].id);
  // N = O keeps exactly the stage-1 draw.
  std::set<std::uint64_t> a, b;
  for (const auto& s : balanced_sample(pop, 10, 10, 4)) a.insert(s.id);
  CHECK(a.size() == 30);
  CHECK_THROWS_AS(balanced_sample(pop, 25, 1, 4), DatasetError);
  CHECK_THROWS_AS(balanced_sample(pop, 5, 6, 4), DatasetError);
}

TEST_CASE("splits are disjoint and sized") {
  for (TaskKind task : {TaskKind::kCaption, TaskKind::kClassify, TaskKind::kVqa}) {
    SplitConfig c;
    c.task = task;
    c.n = task == TaskKind::kCaption ? 10 : 1;
    c.o = 5;
    c.pool_size = 40;
    c.test_size = 30;
    c.seed = 3;
    const SplitSpec s = make_split(c);
    CHECK(s.validation.size() == 200);
    CHECK(s.pool.size() == 40);
    CHECK(s.test.size() == 30);
    CHECK(s.labelled.size() == static_cast<std::size_t>(task == TaskKind::kCaption ? 10 : 8));
    std::set<std::uint64_t> ids;
    std::size_t total = 0;
    for (const auto& x : s.labelled) ids.insert(x.id), ++total;
    for (const auto& x : s.pool) ids.insert(x.id), ++total;
    for (const auto& x : s.validation) ids.insert(x.id), ++total;
    for (const auto& x : s.test) ids.insert(x.id), ++total;
    CHECK(ids.size() == total);
    for (const auto& x : s.labelled) CHECK_NOTHROW(x.validate());
    if (task != TaskKind::kCaption) {
      std::map<int, int> counts;
      for (const auto& x : s.labelled) ++counts[group_of(x)];
      CHECK(counts.size() == 8);
    }
  }
}

TEST_CASE("split generation is deterministic") {
  SplitConfig c;
  c.pool_size = 10;
  c.test_size = 0;
  c.seed = 11;
  const auto a = make_split(c), b = make_split(c);
  REQUIRE(a.labelled.size() == b.labelled.size());
  for (std::size_t i = 0; i < a.labelled.size(); ++i) CHECK(a.labelled[i].tokens == b.labelled[i].tokens);
  for (std::size_t i = 0; i < a.pool.size(); ++i) CHECK(a.pool[i].image == b.pool[i].image);
}

TEST_CASE("sample text matches the task") {
  const Sample cls = make_sample(TaskKind::kClassify, 1, 2, 3);
  CHECK(cls.class_id == 3);
  CHECK(V().detokenize(cls.tokens) == color_names()[3]);
  const Sample vqa = make_sample(TaskKind::kVqa, 1, 2, 5);
  CHECK(vqa.question_type == 5);
  CHECK(vqa.tokens[1] == tok::kQuestion);
  CHECK(std::find(vqa.tokens.begin(), vqa.tokens.end(), tok::kAnswer) != vqa.tokens.end());
}

TEST_CASE("pretrain corpus documents") {
  CorpusConfig c;
  c.size = 200;
  c.qa_fraction = 0.2;
  c.seed = 5;
  const auto docs = make_pretrain_corpus(c);
  REQUIRE(docs.size() == 200);
  int interleaved = 0, qa = 0;
  for (const auto& d : docs) {
    CHECK(d.tokens.front() == tok::kBos);
    CHECK(d.tokens.back() == tok::kEos);
    CHECK(d.image_of.size() == d.tokens.size());
    for (int i : d.image_of) CHECK(i < static_cast<int>(d.images.size()));
    if (d.images.size() > 1) ++interleaved;
    if (std::find(d.tokens.begin(), d.tokens.end(), tok::kQuestion) != d.tokens.end()) ++qa;
  }
  CHECK(interleaved > 0);
  CHECK(qa > 0);
  const auto again = make_pretrain_corpus(c);
  for (std::size_t i = 0; i < docs.size(); ++i) CHECK(again[i].tokens == docs[i].tokens);
}

TEST_CASE("dataset files round-trip") {
  SplitConfig c;
  c.task = TaskKind::kVqa;
  c.n = 1;
  c.o = 3;
  c.pool_size = 5;
  c.test_size = 4;
  c.seed = 8;
  const auto s = make_split(c);
  const auto dir = std::filesystem::temp_directory_path();
  const std::string sp = (dir / "fewvlm_samples.jsonl").string(), pp = (dir / "fewvlm_pool.jsonl").string();
  write_samples(sp, s.labelled);
  write_pool(pp, s.pool);
  const auto back = read_samples(sp);
  const auto pool = read_pool(pp);
  REQUIRE(back.size() == s.labelled.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == s.labelled[i].id);
    CHECK(back[i].tokens == s.labelled[i].tokens);
    CHECK(back[i].image == s.labelled[i].image);
    CHECK(back[i].question_type == s.labelled[i].question_type);
  }
  REQUIRE(pool.size() == s.pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) CHECK(pool[i].image == s.pool[i].image);
  std::filesystem::remove(sp);
  std::filesystem::remove(pp);
}
