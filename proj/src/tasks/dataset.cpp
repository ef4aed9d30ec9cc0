// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/tasks/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <json.hpp>

#include "fewvlm/core/rng.hpp"
#include "fewvlm/tasks/vocab.hpp"

namespace fewvlm {

using nlohmann::json;

std::string task_name(TaskKind t) {
  switch (t) {
    case TaskKind::kCaption: return "caption";
    case TaskKind::kClassify: return "classify";
    case TaskKind::kVqa: return "vqa";
  }
  return "?";
}

TaskKind parse_task(const std::string& s) {
  if (s == "caption") return TaskKind::kCaption;
  if (s == "classify") return TaskKind::kClassify;
  if (s == "vqa") return TaskKind::kVqa;
  throw DatasetError("unknown task '" + s + "'");
}

void Sample::validate() const {
  if (class_id.has_value() != (task == TaskKind::kClassify))
    throw DatasetError("sample " + std::to_string(id) + ": class_id must be present iff task is classify");
  if (question_type.has_value() != (task == TaskKind::kVqa))
    throw DatasetError("sample " + std::to_string(id) + ": question_type must be present iff task is vqa");
  if (tokens.size() < 2 || tokens.front() != tok::kBos || tokens.back() != tok::kEos)
    throw DatasetError("sample " + std::to_string(id) + ": text must be bracketed by BOS/EOS");
}

int group_of(const Sample& s) {
  if (s.class_id) return *s.class_id;
  if (s.question_type) return *s.question_type;
  return 0;
}

int group_count(TaskKind task) {
  switch (task) {
    case TaskKind::kClassify: return kNumColors;
    case TaskKind::kVqa: return kNumQuestionTypes;
    default: return 1;
  }
}

namespace {

Sample finish(std::uint64_t id, TaskKind task, const SceneSpec& scene, const std::string& text) {
  Sample s;
  s.id = id;
  s.scene = scene;
  s.image = render(scene);
  s.task = task;
  s.tokens = Vocabulary::standard().tokenize(text);
  return s;
}

}  // namespace

Sample make_sample(TaskKind task, std::uint64_t id, std::uint64_t root_seed, std::optional<int> group) {
  const std::uint64_t base = derive_seed(root_seed, id);
  if (group && (*group < 0 || *group >= group_count(task)))
    throw DatasetError("group " + std::to_string(*group) + " out of range for task " + task_name(task));
  Rng rng(derive_seed(base, tag_of("sample")));
  const int qtype = group ? *group : static_cast<int>(rng.below(kNumQuestionTypes));
  for (std::uint64_t attempt = 0;; ++attempt) {
    const SceneSpec scene = random_scene(derive_seed(base, attempt));
    switch (task) {
      case TaskKind::kCaption:
        return finish(id, task, scene, caption_text(scene, CaptionStyle::kTarget));
      case TaskKind::kClassify: {
        const int c = class_of(scene);
        if (group && c != *group) continue;
        Sample s = finish(id, task, scene, color_names()[static_cast<std::size_t>(c)]);
        s.class_id = c;
        return s;
      }
      case TaskKind::kVqa: {
        auto qa = make_vqa(scene, qtype);
        if (!qa) continue;
        Sample s = finish(id, task, scene, qa_text(*qa));
        s.question_type = qtype;
        return s;
      }
    }
  }
}

PoolImage make_pool_image(std::uint64_t id, std::uint64_t root_seed, Palette palette) {
  PoolImage p;
  p.id = id;
  p.scene = random_scene(derive_seed(root_seed, id), palette);
  p.image = render(p.scene);
  return p;
}

std::vector<Sample> balanced_sample(const std::vector<Sample>& population, int O, int N, std::uint64_t seed) {
  if (O < 1 || N < 1 || N > O) throw DatasetError("balanced_sample: need 1 <= N <= O");
  std::map<int, std::vector<const Sample*>> groups;
  for (const auto& s : population) groups[group_of(s)].push_back(&s);
  std::vector<Sample> out;
  for (auto& [g, members] : groups) {
    if (static_cast<int>(members.size()) < O)
      throw DatasetError("balanced_sample: group " + std::to_string(g) + " has " + std::to_string(members.size()) +
                         " samples, need O=" + std::to_string(O));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(g)));
    std::vector<std::size_t> idx(members.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    idx.resize(static_cast<std::size_t>(O));
    // Stage 2 is a fresh uniform draw of N among the O.
    rng.shuffle(idx);
    for (int i = 0; i < N; ++i) out.push_back(*members[idx[static_cast<std::size_t>(i)]]);
  }
  return out;
}

namespace {

constexpr std::uint64_t kCandidateBase = 1ULL << 48;
constexpr std::uint64_t kPoolBase = 2ULL << 48;
constexpr std::uint64_t kValidationBase = 3ULL << 48;
constexpr std::uint64_t kTestBase = 4ULL << 48;
constexpr std::uint64_t kCorpusBase = 5ULL << 48;

}  // namespace

SplitSpec make_split(const SplitConfig& cfg) {
  if (cfg.n < 1 || cfg.m < 1 || cfg.pool_size < 0 || cfg.test_size < 0)
    throw DatasetError("make_split: sizes must be positive");
  const int groups = group_count(cfg.task);
  const std::uint64_t root = derive_seed(cfg.seed, tag_of("split"));
  SplitSpec out;
  if (cfg.task == TaskKind::kCaption) {
    for (int i = 0; i < cfg.n; ++i)
      out.labelled.push_back(make_sample(cfg.task, kCandidateBase + static_cast<std::uint64_t>(i), root));
  } else {
    std::vector<Sample> population;
    std::uint64_t next = kCandidateBase;
    for (int g = 0; g < groups; ++g)
      for (int i = 0; i < cfg.o; ++i) population.push_back(make_sample(cfg.task, next++, root, g));
    out.labelled = balanced_sample(population, cfg.o, cfg.n, derive_seed(root, tag_of("balance")));
  }
  for (int i = 0; i < cfg.pool_size; ++i)
    out.pool.push_back(make_pool_image(kPoolBase + static_cast<std::uint64_t>(i), root, cfg.pool_palette));
  // Validation is balanced across groups; leftovers fill from the first groups.
  for (int i = 0; i < cfg.m; ++i) {
    std::optional<int> g;
    if (groups > 1) g = i % groups;
    out.validation.push_back(make_sample(cfg.task, kValidationBase + static_cast<std::uint64_t>(i), root, g));
  }
  for (int i = 0; i < cfg.test_size; ++i)
    out.test.push_back(make_sample(cfg.task, kTestBase + static_cast<std::uint64_t>(i), root));
  return out;
}

std::vector<Document> make_pretrain_corpus(const CorpusConfig& cfg) {
  const auto& vocab = Vocabulary::standard();
  const std::uint64_t root = derive_seed(cfg.seed, tag_of("pretrain-corpus"));
  std::vector<Document> docs;
  docs.reserve(static_cast<std::size_t>(cfg.size));
  for (int i = 0; i < cfg.size; ++i) {
    const std::uint64_t id = kCorpusBase + static_cast<std::uint64_t>(i);
    Rng rng(derive_seed(root, id));
    const bool qa = rng.uniform() < cfg.qa_fraction;
    const bool interleaved = rng.uniform() < cfg.interleaved_fraction;
    const int n_images = interleaved ? 2 + static_cast<int>(rng.below(3)) : 1;
    Document d;
    d.tokens.push_back(tok::kBos);
    d.image_of.push_back(0);
    for (int k = 0; k < n_images; ++k) {
      SceneSpec scene;
      std::string text;
      for (std::uint64_t attempt = 0;; ++attempt) {
        scene = random_scene(derive_seed(derive_seed(root, id), static_cast<std::uint64_t>(k) * 1000 + attempt));
        if (!qa) {
          text = caption_text(scene, CaptionStyle::kPretrain);
          break;
        }
        if (cfg.qa_types.empty()) throw DatasetError("pretrain corpus: qa_fraction > 0 needs qa_types");
        const int t = cfg.qa_types[static_cast<std::size_t>(rng.below(cfg.qa_types.size()))];
        if (auto pair = make_vqa(scene, t)) {
          text = qa_text(*pair);
          break;
        }
      }
      d.images.push_back(render(scene));
      std::vector<int> words = vocab.encode_words(text);
      if (interleaved && !qa) words.insert(words.begin(), tok::kOutput);
      words.push_back(k + 1 == n_images ? tok::kEos : tok::kSep);
      for (int w : words) {
        d.tokens.push_back(w);
        d.image_of.push_back(k);
      }
    }
    docs.push_back(std::move(d));
  }
  return docs;
}

namespace {

json sample_json(const Sample& s) {
  json j;
  j["id"] = s.id;
  j["scene"] = s.scene;
  j["task"] = task_name(s.task);
  j["text"] = Vocabulary::standard().detokenize(s.tokens);
  j["class_id"] = s.class_id ? json(*s.class_id) : json(nullptr);
  j["question_type"] = s.question_type ? json(*s.question_type) : json(nullptr);
  return j;
}

template <class F>
void for_each_line(const std::string& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      f(json::parse(line));
    } catch (const std::exception& e) {
      throw DatasetError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void write_lines(const std::string& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path);
  for (const auto& r : rows) out << r.dump() << '\n';
}

}  // namespace

void write_samples(const std::string& path, const std::vector<Sample>& samples) {
  std::vector<json> rows;
  for (const auto& s : samples) rows.push_back(sample_json(s));
  write_lines(path, rows);
}

std::vector<Sample> read_samples(const std::string& path) {
  std::vector<Sample> out;
  for_each_line(path, [&](const json& j) {
    Sample s;
    s.id = j.at("id").get<std::uint64_t>();
    s.scene = j.at("scene").get<SceneSpec>();
    s.image = render(s.scene);
    s.task = parse_task(j.at("task").get<std::string>());
    s.tokens = Vocabulary::standard().tokenize(j.at("text").get<std::string>());
    if (!j.at("class_id").is_null()) s.class_id = j["class_id"].get<int>();
    if (!j.at("question_type").is_null()) s.question_type = j["question_type"].get<int>();
    s.validate();
    out.push_back(std::move(s));
  });
  return out;
}

void write_pool(const std::string& path, const std::vector<PoolImage>& pool) {
  std::vector<json> rows;
  for (const auto& p : pool) rows.push_back({{"id", p.id}, {"scene", p.scene}});
  write_lines(path, rows);
}

std::vector<PoolImage> read_pool(const std::string& path) {
  std::vector<PoolImage> out;
  for_each_line(path, [&](const json& j) {
    PoolImage p;
    p.id = j.at("id").get<std::uint64_t>();
    p.scene = j.at("scene").get<SceneSpec>();
    p.image = render(p.scene);
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace fewvlm
