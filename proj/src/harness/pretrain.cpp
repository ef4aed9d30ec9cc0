// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/harness/pretrain.hpp"

#include "fewvlm/adapt/adaptation.hpp"
#include "fewvlm/core/rng.hpp"
#include "fewvlm/eval/evaluate.hpp"
#include "fewvlm/harness/config.hpp"
#include "fewvlm/tasks/scene.hpp"
#include "fewvlm/tasks/vocab.hpp"

namespace fewvlm {

PretrainConfig::PretrainConfig() {
  model.vocab_size = Vocabulary::standard().size();
  model.patch_positions = true;
  corpus.size = 10000;
  corpus.qa_fraction = 0.3;
  train.lr = 2e-3;
  train.epochs = 8;
  train.batch = 16;
  train.decay_period = 6;
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json::object();
  j["model"] = c.model;
  j["corpus"] = c.corpus;
  j["train"] = c.train;
  j["heldout"] = c.heldout;
  j["min_heldout_exact"] = c.min_heldout_exact;
  j["beam"] = c.beam;
}

namespace {

/// Fields present in `j` override `into`; absent ones keep the pretraining defaults.
template <class T>
void overlay(const nlohmann::json& j, T& into) {
  nlohmann::json merged = into;
  merged.update(j);
  into = merged.get<T>();
}

}  // namespace

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  c = PretrainConfig();
  if (j.contains("model")) overlay(j["model"], c.model);
  if (j.contains("corpus")) overlay(j["corpus"], c.corpus);
  if (j.contains("train")) overlay(j["train"], c.train);
  if (j.contains("heldout")) c.heldout = j["heldout"].get<int>();
  if (j.contains("min_heldout_exact")) c.min_heldout_exact = j["min_heldout_exact"].get<double>();
  if (j.contains("beam")) c.beam = j["beam"].get<BeamConfig>();
}

std::vector<Sample> pretrain_heldout(const PretrainConfig& cfg) {
  const std::uint64_t root = derive_seed(cfg.corpus.seed, tag_of("pretrain-heldout"));
  std::vector<Sample> out;
  for (int i = 0; i < cfg.heldout; ++i) {
    Sample s;
    s.id = (6ULL << 48) + static_cast<std::uint64_t>(i);
    s.scene = random_scene(derive_seed(root, s.id));
    s.image = render(s.scene);
    s.task = TaskKind::kCaption;
    s.tokens = caption_of(s.scene, CaptionStyle::kPretrain);
    out.push_back(std::move(s));
  }
  return out;
}

PretrainResult pretrain_base(const PretrainConfig& cfg, const std::string& curve_path) {
  cfg.model.validate();
  if (cfg.heldout < 1) throw ConfigError("pretrain: heldout must be >= 1");
  VisionLanguageModel model(cfg.model);
  model.set_partition(PartitionMode::kPretrain);
  const auto docs = make_pretrain_corpus(cfg.corpus);
  std::vector<Example> examples;
  examples.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) examples.push_back(example_of(docs[i], i));
  const auto heldout = pretrain_heldout(cfg);
  const Validator validate = task_validator(heldout, TaskKind::kCaption, cfg.beam, cfg.jobs);
  AdaptationReport report = run_training(model, examples, {}, supervised_plan(examples.size(), cfg.train.batch, cfg.train.seed, cfg.train.min_steps_per_epoch),
                                         1.0, cfg.train, validate, "pretrain");
  model.set_partition(PartitionMode::kNone);
  if (!curve_path.empty()) write_metrics_csv(report, curve_path);
  if (report.best_metric < cfg.min_heldout_exact)
    throw StageError("pretrain: held-out exact match " + std::to_string(report.best_metric) + " below gate " +
                     std::to_string(cfg.min_heldout_exact) +
                     (curve_path.empty() ? std::string() : "; loss curve in " + curve_path));
  const double exact = report.best_metric;
  return {std::move(model), std::move(report), exact};
}

}  // namespace fewvlm
