// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/adapt/adaptation.hpp"

#include <stdexcept>

#include "fewvlm/eval/evaluate.hpp"
#include "fewvlm/model/io.hpp"

namespace fewvlm {

Validator task_validator(const std::vector<Sample>& val, TaskKind task, BeamConfig beam, int jobs) {
  return [&val, task, beam, jobs](const VisionLanguageModel& m) {
    return evaluate(DirectPredictor(m, beam), val, task, jobs).primary();
  };
}

namespace {

AdaptationReport adapt(VisionLanguageModel& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                       const AdaptConfig& cfg, const char* method) {
  if (train.empty()) throw std::invalid_argument(std::string(method) + ": training set is empty");
  if (val.empty()) throw std::invalid_argument(std::string(method) + ": validation set is empty");
  const TaskKind task = train.front().task;
  const auto gt = examples_of(train);
  AdaptationReport r = run_training(model, gt, {}, supervised_plan(gt.size(), cfg.train.batch, cfg.train.seed, cfg.train.min_steps_per_epoch), 1.0,
                                    cfg.train, task_validator(val, task, cfg.beam, cfg.jobs), method);
  if (!cfg.checkpoint_path.empty()) persist_adaptation(model, r, cfg.checkpoint_path);
  return r;
}

}  // namespace

AdaptationReport finetune(VisionLanguageModel& model, const std::vector<Sample>& train,
                          const std::vector<Sample>& val, const AdaptConfig& cfg) {
  model.set_partition(PartitionMode::kFinetune);
  return adapt(model, train, val, cfg, "finetune");
}

AdaptationReport train_adapters(VisionLanguageModel& model, const std::vector<Sample>& train,
                                const std::vector<Sample>& val, const AdaptConfig& cfg) {
  if (!model.has_adapters()) model.insert_adapters();
  model.set_partition(PartitionMode::kAdapter);
  return adapt(model, train, val, cfg, "adapter");
}

void persist_adaptation(const VisionLanguageModel& model, AdaptationReport& report, const std::string& path) {
  report.checkpoint_path = path;
  save_model(model, path);
  save_report(report, path + ".report.json");
}

}  // namespace fewvlm
