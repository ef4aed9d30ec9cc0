// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fewvlm/adapt/adaptation.hpp"
#include "fewvlm/core/rng.hpp"
#include "fewvlm/eval/evaluate.hpp"
#include "fewvlm/harness/config.hpp"
#include "fewvlm/harness/pipeline.hpp"
#include "fewvlm/harness/pretrain.hpp"
#include "fewvlm/model/io.hpp"
#include "fewvlm/selflabel/selflabel.hpp"
#include "fewvlm/semisup/semisup.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fewvlm;

namespace {

constexpr int kConfigError = 2;
constexpr int kStageFailure = 3;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string out;
  bool resume = false;
  int jobs = 0;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? default_config(TaskKind::kCaption) : load_experiment_config(c.config);
  if (c.has_seed) cfg.seeds = {c.seed};
  if (c.jobs > 0) cfg.jobs = c.jobs;
  cfg.validate();
  return cfg;
}

std::string out_dir(const Common& c, const ExperimentConfig& cfg) { return c.out.empty() ? cfg.work_dir : c.out; }

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

void add_common(CLI::App* sub, Common& c, bool with_seed = true) {
  sub->add_option("--config", c.config, "Experiment config (JSON)");
  if (with_seed)
    sub->add_option_function<std::uint64_t>(
        "--seed", [&c](const std::uint64_t& s) { c.seed = s; c.has_seed = true; }, "Run a single seed");
  sub->add_option("--out", c.out, "Output directory");
  sub->add_flag("--resume", c.resume, "Reuse persisted stage artifacts");
  sub->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
}

int finish(const MetricsReport& r) {
  print_json(json{{"complete", r.complete()},
                  {"stage1", r.stage1 ? json{{"mean", r.stage1->mean}, {"sd", r.stage1->sd}} : json(nullptr)},
                  {"stage3", r.stage3 ? json{{"mean", r.stage3->mean}, {"sd", r.stage3->sd}} : json(nullptr)}});
  return r.complete() ? 0 : kStageFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot vision-language adaptation with self-labelling"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("gen-data", "Write the labelled, pool, validation and test splits of one seed");
  add_common(gen, c);

  auto* pre = app.add_subcommand("pretrain", "Pretrain the base model and write its checkpoint");
  add_common(pre, c, false);

  auto* adapt = app.add_subcommand("adapt", "Stage 1: adapt the base model on the labelled split");
  add_common(adapt, c);

  std::string model_path, labels_path;
  auto* label = app.add_subcommand("pseudo-label", "Stage 2: label the unlabelled pool");
  add_common(label, c);
  label->add_option("--model", model_path, "Stage-1 checkpoint (defaults to adapting first)");

  auto* filt = app.add_subcommand("filter", "Filter a pseudo-label file with the configured FilterSpec");
  add_common(filt, c);
  filt->add_option("--labels", labels_path, "Pseudo-label JSONL")->required();

  auto* semi = app.add_subcommand("train-semisup", "Stage 3: joint training on ground truth and pseudo-labels");
  add_common(semi, c);
  semi->add_option("--labels", labels_path, "Pseudo-label JSONL (already filtered)")->required();

  std::string split_name = "validation";
  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split");
  add_common(eval, c);
  eval->add_option("--model", model_path, "Checkpoint (defaults to the base model)");
  eval->add_option("--split", split_name, "validation or test")->check(CLI::IsMember({"validation", "test"}));

  auto* pipe = app.add_subcommand("pipeline", "Run every stage for every seed and write report.json");
  add_common(pipe, c);

  std::vector<double> alphas = kSweepAlphas;
  auto* sa = app.add_subcommand("sweep-alpha", "Pipeline once per alpha");
  add_common(sa, c);
  sa->add_option("--alphas", alphas, "Alpha values");

  auto* sf = app.add_subcommand("sweep-filter", "Pipeline once per filter of the default grid");
  add_common(sf, c);

  std::vector<int> n_grid{1, 5, 10, 20};
  auto* ca = app.add_subcommand("compare-adaptation", "Stage-1 metric of finetune, adapter and icl over an N grid");
  add_common(ca, c);
  ca->add_option("--n-grid", n_grid, "Labelled set sizes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    const ExperimentConfig cfg = load(c);
    const std::string out = out_dir(c, cfg);
    const RunOptions opt{out, c.resume};
    const std::uint64_t seed = cfg.seeds.front();

    if (gen->parsed()) {
      const SplitSpec split = experiment_split(cfg, seed);
      fs::create_directories(out);
      write_samples((fs::path(out) / "labelled.jsonl").string(), split.labelled);
      write_pool((fs::path(out) / "pool.jsonl").string(), split.pool);
      write_samples((fs::path(out) / "validation.jsonl").string(), split.validation);
      write_samples((fs::path(out) / "test.jsonl").string(), split.test);
      std::ofstream((fs::path(out) / "config.json").string()) << canonical_json(cfg);
      return 0;
    }
    if (pre->parsed()) {
      PretrainConfig pc = cfg.pretrain;
      pc.jobs = cfg.jobs;
      fs::create_directories(out);
      const std::string path = (fs::path(out) / "base.ckpt").string();
      auto r = pretrain_base(pc, path + ".curve.csv");
      save_model(r.model, path);
      save_report(r.report, path + ".report.json");
      print_json(json{{"checkpoint", path}, {"heldout_exact", r.heldout_exact}});
      return 0;
    }

    const VisionLanguageModel base = obtain_base_model(cfg, c.resume);
    if (adapt->parsed()) {
      auto r = run_stage1(cfg, base, seed, c.resume);
      print_json(json{{"method", method_name(cfg.method)}, {"seed", seed}, {"val", r.metrics.val}});
      if (r.model) {
        fs::create_directories(out);
        save_model(*r.model, (fs::path(out) / "stage1.ckpt").string());
      }
      return 0;
    }
    if (label->parsed()) {
      check_labeller(cfg);
      std::optional<VisionLanguageModel> s1;
      if (!model_path.empty())
        s1 = load_model(model_path);
      else if (cfg.labeller == Labeller::kStage1)
        s1 = std::move(run_stage1(cfg, base, seed, c.resume).model);
      const SplitSpec split = experiment_split(cfg, seed);
      const LabelResult r = generate_labels(cfg, base, s1 ? &*s1 : nullptr, split);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
      fs::create_directories(out);
      write_labels((fs::path(out) / "labels.jsonl").string(), r.labels);
      print_json(json{{"labels", r.labels.size()}, {"dropped", r.dropped}});
      return 0;
    }
    if (filt->parsed()) {
      auto labels = read_labels(labels_path);
      if (cfg.filter.kind == FilterKind::kContrastiveTopFrac || cfg.filter.kind == FilterKind::kContrastiveThreshold) {
        const DualEncoder scorer = obtain_scorer(cfg, base, c.resume);
        attach_contrastive_scores(labels, experiment_split(cfg, seed).pool, scorer);
      }
      const auto kept = filter(labels, cfg.filter);
      fs::create_directories(out);
      write_labels((fs::path(out) / "filtered.jsonl").string(), kept);
      print_json(json{{"filter", cfg.filter.describe()}, {"input", labels.size()}, {"kept", kept.size()}});
      return 0;
    }
    if (semi->parsed()) {
      const SplitSpec split = experiment_split(cfg, seed);
      const auto pseudo = to_samples(read_labels(labels_path), split.pool);
      VisionLanguageModel m = base.clone();
      SemiSupConfig sc = cfg.semisup;
      sc.seed = derive_seed(seed, tag_of("stage3"));
      AdaptConfig ac;
      ac.train = cfg.stage1;
      ac.beam = cfg.beam;
      ac.jobs = cfg.jobs;
      fs::create_directories(out);
      ac.checkpoint_path = (fs::path(out) / "stage3.ckpt").string();
      auto r = train_semisup(m, split.labelled, pseudo, split.validation, sc, ac);
      write_metrics_csv(r, ac.checkpoint_path + ".csv");
      print_json(json{{"best_metric", r.best_metric}, {"best_epoch", r.best_epoch}, {"checkpoint", ac.checkpoint_path}});
      return 0;
    }
    if (eval->parsed()) {
      ExperimentConfig ec = cfg;
      if (split_name == "test") ec.evaluate_test = true;
      const SplitSpec split = experiment_split(ec, seed);
      std::optional<VisionLanguageModel> loaded;
      if (!model_path.empty()) loaded = load_model(model_path);
      const VisionLanguageModel& m = loaded ? *loaded : base;
      const auto& samples = split_name == "test" ? split.test : split.validation;
      TaskMetrics tm;
      if (cfg.method == AdaptMethod::kIcl && model_path.empty())
        tm = evaluate(IclPredictor(m, split.labelled, cfg.shots, cfg.beam), samples, cfg.task, cfg.jobs);
      else
        tm = evaluate(DirectPredictor(m, cfg.beam), samples, cfg.task, cfg.jobs);
      print_json(tm);
      return 0;
    }
    if (pipe->parsed()) return finish(run_pipeline(cfg, opt));
    if (sa->parsed()) {
      int code = 0;
      for (const auto& r : sweep_alpha(cfg, alphas, opt))
        if (!r.complete()) code = kStageFailure;
      std::cout << "wrote " << (fs::path(out) / "sweep_alpha.csv").string() << '\n';
      return code;
    }
    if (sf->parsed()) {
      int code = 0;
      for (const auto& r : sweep_filter(cfg, default_filter_grid(), opt))
        if (!r.complete()) code = kStageFailure;
      std::cout << "wrote " << (fs::path(out) / "sweep_filter.csv").string() << '\n';
      return code;
    }
    if (ca->parsed()) {
      compare_adaptation(cfg, n_grid, opt);
      std::cout << "wrote " << (fs::path(out) / "compare_adaptation.csv").string() << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "stage failure: " << e.what() << '\n';
    return kStageFailure;
  }
  return 0;
}
