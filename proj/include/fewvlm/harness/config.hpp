// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fewvlm/adapt/train.hpp"
#include "fewvlm/decoding/decoding.hpp"
#include "fewvlm/harness/pretrain.hpp"
#include "fewvlm/scorer/scorer.hpp"
#include "fewvlm/selflabel/selflabel.hpp"
#include "fewvlm/semisup/semisup.hpp"
#include "fewvlm/tasks/dataset.hpp"

namespace fewvlm {

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const BeamConfig& c);
void from_json(const nlohmann::json& j, BeamConfig& c);
void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);
void to_json(nlohmann::json& j, const FilterSpec& c);
void from_json(const nlohmann::json& j, FilterSpec& c);
void to_json(nlohmann::json& j, const SemiSupConfig& c);
void from_json(const nlohmann::json& j, SemiSupConfig& c);
void to_json(nlohmann::json& j, const ScorerConfig& c);
void from_json(const nlohmann::json& j, ScorerConfig& c);
void to_json(nlohmann::json& j, const ContrastiveConfig& c);
void from_json(const nlohmann::json& j, ContrastiveConfig& c);

enum class AdaptMethod { kFinetune, kAdapter, kIcl };
std::string method_name(AdaptMethod m);
AdaptMethod parse_method(const std::string& s);

/// Which model produces VQA pseudo-labels: the prompted base model or the stage-1 model.
enum class Labeller { kIcl, kStage1 };

struct ExperimentConfig {
  TaskKind task = TaskKind::kCaption;
  int n = 10;
  int o = 50;
  int m = 200;
  int pool_size = 500;
  int test_size = 500;
  Palette pool_palette = Palette::kInDistribution;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  AdaptMethod method = AdaptMethod::kFinetune;
  TrainConfig stage1;      // finetune / adapter training
  int shots = 4;           // in-context supports
  Labeller labeller = Labeller::kStage1;
  BeamConfig beam;         // validation, labelling and test decoding
  FilterSpec filter;
  SemiSupConfig semisup;
  bool evaluate_test = false;

  PretrainConfig pretrain;
  ScorerConfig scorer;
  ContrastiveConfig contrastive;
  int scorer_pairs = 2000;

  std::string base_model;  // θ₀ checkpoint; pretrained into work_dir when empty
  std::string scorer_model;
  std::string work_dir = "runs";
  int jobs = 1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Sorted-key JSON with a trailing newline; parse(canonical(c)) reproduces c
/// and re-serializes to the same bytes.
std::string canonical_json(const ExperimentConfig& c);
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

/// Task-specific defaults (alpha, N, learning rates, labeller).
ExperimentConfig default_config(TaskKind task);

}  // namespace fewvlm
