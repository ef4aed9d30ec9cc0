// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fewvlm/harness/config.hpp"
#include "fewvlm/harness/pipeline.hpp"
#include "fewvlm/model/io.hpp"
#include "fewvlm/tasks/vocab.hpp"
#include "support/models.hpp"

using namespace fewvlm;
using namespace fewvlm::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// A scratch directory removed at scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("fewvlm_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

/// Tiny end-to-end configuration over a randomly initialised base model.
ExperimentConfig tiny_experiment(const fs::path& dir, TaskKind task = TaskKind::kCaption) {
  VLMConfig mc = tiny_config(Vocabulary::standard().size(), 5);
  mc.max_seq_len = 128;
  VisionLanguageModel base(mc);
  randomize(base, 5, 0.1);
  const std::string base_path = (dir / "base.ckpt").string();
  if (!fs::exists(base_path)) save_model(base, base_path);

  ExperimentConfig c = default_config(task);
  c.n = task == TaskKind::kCaption ? 2 : 1;
  c.o = 2;
  c.m = 3;
  c.pool_size = 4;
  c.test_size = 0;
  c.seeds = {1, 2};
  c.stage1.epochs = 1;
  c.stage1.batch = 2;
  c.stage1.min_steps_per_epoch = 0;
  c.semisup.epochs = 1;
  c.semisup.batch = 2;
  c.beam.beam_width = 2;
  c.beam.max_len = 6;
  c.shots = 1;
  c.scorer_pairs = 16;
  c.contrastive.batch = 8;
  c.contrastive.epochs = 1;
  c.base_model = base_path;
  c.work_dir = (dir / "work").string();
  return c;
}

}  // namespace

TEST_CASE("experiment configs round-trip byte-identically") {
  for (TaskKind t : {TaskKind::kCaption, TaskKind::kClassify, TaskKind::kVqa}) {
    ExperimentConfig c = default_config(t);
    c.seeds = {3, 1, 4};
    c.filter = FilterSpec::contrastive_threshold(0.2);
    c.semisup.alpha = 0.3;
    c.semisup.composition = Composition::kProportional;
    c.pool_palette = Palette::kShifted;
    c.base_model = "some/where.ckpt";
    const std::string text = canonical_json(c);
    const ExperimentConfig back = parse_experiment_config(text);
    CHECK(canonical_json(back) == text);
  }
}

TEST_CASE("config errors name the offending field") {
  CHECK_THROWS_AS(parse_experiment_config(R"({"task":"caption","bogus":1})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"task":"caption","semisup":{"alpha":2.0}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"task":"caption","seeds":[]})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"task":"caption","pretrain":{"model":{"vocab_size":64}}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("{not json"), ConfigError);
  try {
    parse_experiment_config(R"({"task":"caption","stage1":{"lr":0.1,"nope":3}})");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("nope") != std::string::npos);
  }
}

TEST_CASE("partial nested objects keep the task defaults of omitted fields") {
  const ExperimentConfig c = parse_experiment_config(
      R"({"task":"vqa","stage1":{"epochs":5},"semisup":{"batch":4},"pretrain":{"corpus":{"size":50}}})");
  const ExperimentConfig d = default_config(TaskKind::kVqa);
  CHECK(c.stage1.epochs == 5);
  CHECK(c.stage1.min_steps_per_epoch == d.stage1.min_steps_per_epoch);
  CHECK(c.stage1.lr == d.stage1.lr);
  CHECK(c.semisup.batch == 4);
  CHECK(c.semisup.alpha == d.semisup.alpha);
  CHECK(c.pretrain.corpus.size == 50);
  CHECK(c.pretrain.corpus.qa_fraction == d.pretrain.corpus.qa_fraction);
  CHECK(c.pretrain.model.vocab_size == d.pretrain.model.vocab_size);
}

TEST_CASE("labeller choices are checked against the task and method") {
  ExperimentConfig c = default_config(TaskKind::kCaption);
  c.labeller = Labeller::kIcl;
  CHECK_THROWS_AS(check_labeller(c), ConfigError);
  ExperimentConfig v = default_config(TaskKind::kVqa);
  CHECK(v.labeller == Labeller::kIcl);
  CHECK_NOTHROW(check_labeller(v));
  ExperimentConfig icl = default_config(TaskKind::kCaption);
  icl.method = AdaptMethod::kIcl;
  CHECK_THROWS_AS(check_labeller(icl), ConfigError);
}

TEST_CASE("default task settings") {
  CHECK(default_config(TaskKind::kCaption).semisup.alpha == 0.1);
  CHECK(default_config(TaskKind::kClassify).semisup.alpha == 0.1);
  CHECK(default_config(TaskKind::kVqa).semisup.alpha == 0.5);
  CHECK(default_config(TaskKind::kCaption).n == 10);
  CHECK(default_config(TaskKind::kCaption).pool_size == 500);
  CHECK(default_config(TaskKind::kCaption).beam.beam_width == 3);
  CHECK(kSweepAlphas == std::vector<double>{0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0});
}

TEST_CASE("report summaries are recomputable from the per-seed entries") {
  MetricsReport r;
  r.config = default_config(TaskKind::kClassify);
  for (int i = 0; i < 3; ++i) {
    SeedReport s;
    s.seed = static_cast<std::uint64_t>(i + 1);
    StageMetrics m;
    m.val.task = TaskKind::kClassify;
    m.val.count = 10;
    m.val.top1 = 0.1 * (i + 1);
    s.zero_shot = m;
    s.stage1 = m;
    if (i < 2) s.stage3 = m;
    else {
      s.failed_stage = "stage3";
      s.error = "boom";
    }
    r.seeds.push_back(s);
  }
  r.summarize();
  CHECK_FALSE(r.complete());
  REQUIRE(r.stage1.has_value());
  CHECK(r.stage1->mean == doctest::Approx(0.2));
  CHECK(r.stage3->mean == doctest::Approx(0.15));
  TempDir dir("report_rt");
  const auto path = (dir.path / "report.json").string();
  write_report(r, path);
  const MetricsReport back = read_report(path);
  CHECK(back.seeds.size() == 3);
  CHECK(back.seeds[2].failed_stage == "stage3");
  CHECK(back.stage3->mean == r.stage3->mean);
  write_report(back, (dir.path / "again.json").string());
  CHECK(slurp(path) == slurp(dir.path / "again.json"));
  CHECK(nlohmann::json::parse(slurp(path)).at("report_version") == 1);
}

TEST_CASE("pipeline is deterministic and resumes stage 3 bit-identically") {
  TempDir dir("pipeline");
  const ExperimentConfig c = tiny_experiment(dir.path);
  const auto a = run_pipeline(c, {(dir.path / "a").string(), false});
  CHECK(a.complete());
  CHECK(a.seeds.size() == 2);
  for (const auto& s : a.seeds) {
    CHECK(s.zero_shot.has_value());
    CHECK(s.stage1.has_value());
    CHECK(s.stage3.has_value());
    CHECK(s.pseudo.has_value());
  }
  // A fresh work dir gives the same bytes.
  ExperimentConfig c2 = c;
  c2.work_dir = (dir.path / "work2").string();
  run_pipeline(c2, {(dir.path / "b").string(), false});
  auto strip_paths = [](std::string s, const std::string& from, const std::string& to) {
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) s.replace(pos, from.size(), to);
    return s;
  };
  CHECK(strip_paths(slurp(dir.path / "b" / "report.json"), c2.work_dir, c.work_dir) ==
        slurp(dir.path / "a" / "report.json"));
  CHECK(slurp(dir.path / "b" / "summary.csv") == slurp(dir.path / "a" / "summary.csv"));

  // Delete only the stage-3 artifacts of seed 1 and resume.
  std::string stage3_ckpt;
  for (const auto& e : fs::directory_iterator(fs::path(c.work_dir) / "seed_1"))
    if (e.path().filename().string().rfind("stage3_", 0) == 0 && e.path().extension() == ".ckpt") stage3_ckpt = e.path().string();
  REQUIRE_FALSE(stage3_ckpt.empty());
  const std::string before = slurp(stage3_ckpt);
  for (const auto& e : fs::directory_iterator(fs::path(c.work_dir) / "seed_1"))
    if (e.path().filename().string().rfind("stage3_", 0) == 0) fs::remove(e.path());
  run_pipeline(c, {(dir.path / "c").string(), true});
  CHECK(slurp(stage3_ckpt) == before);
  CHECK(slurp(dir.path / "c" / "report.json") == slurp(dir.path / "a" / "report.json"));
}

TEST_CASE("a failing stage leaves a partial report") {
  TempDir dir("pipeline_fail");
  ExperimentConfig c = tiny_experiment(dir.path);
  c.seeds = {1};
  c.filter = FilterSpec::contrastive_threshold(0.999);
  const auto r = run_pipeline(c, {dir.path.string(), false});
  CHECK_FALSE(r.complete());
  REQUIRE(r.seeds.size() == 1);
  CHECK(r.seeds[0].failed_stage == "filter");
  CHECK(r.seeds[0].stage1.has_value());
  CHECK_FALSE(r.seeds[0].stage3.has_value());
  CHECK(fs::exists(dir.path / "report.json"));
}

TEST_CASE("alpha sweep writes one report per alpha") {
  TempDir dir("sweep_alpha");
  ExperimentConfig c = tiny_experiment(dir.path);
  c.seeds = {1};
  const auto reports = sweep_alpha(c, kSweepAlphas, {dir.path.string(), false});
  CHECK(reports.size() == kSweepAlphas.size());
  for (const auto& r : reports) CHECK(r.complete());
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(dir.path))
    if (e.path().filename().string().rfind("alpha_", 0) == 0 && fs::exists(e.path() / "report.json")) ++dirs;
  CHECK(dirs == kSweepAlphas.size());
  std::istringstream csv(slurp(dir.path / "sweep_alpha.csv"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == kSweepAlphas.size() + 1);
}

TEST_CASE("adaptation comparison covers every method and size and leaves the base untouched") {
  TempDir dir("compare");
  ExperimentConfig c = tiny_experiment(dir.path, TaskKind::kClassify);
  c.seeds = {1, 2};
  const auto cells = compare_adaptation(c, {1, 2}, {dir.path.string(), false});
  CHECK(cells.size() == 6);
  for (const auto& cell : cells) {
    CHECK(cell.per_seed.size() == 2);
    CHECK(cell.base_unchanged);
  }
  CHECK(cells[4].method == AdaptMethod::kIcl);
  CHECK(fs::exists(dir.path / "compare_adaptation.csv"));
}
