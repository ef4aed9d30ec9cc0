// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fewvlm/adapt/train.hpp"
#include "fewvlm/model/config.hpp"
#include "fewvlm/model/model.hpp"
#include "fewvlm/tasks/dataset.hpp"

namespace fewvlm {

class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PretrainConfig {
  VLMConfig model;
  CorpusConfig corpus;
  TrainConfig train;
  int heldout = 200;
  double min_heldout_exact = 0.8;
  BeamConfig beam;
  int jobs = 1;

  PretrainConfig();
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

/// Held-out pretrain-style caption samples (disjoint ids from the corpus).
std::vector<Sample> pretrain_heldout(const PretrainConfig& cfg);

struct PretrainResult {
  VisionLanguageModel model;
  AdaptationReport report;
  double heldout_exact = 0.0;
};

/// Trains every group except the vision encoder on the pretraining corpus and
/// checks the held-out exact-match gate. Throws StageError (mentioning
/// `curve_path` when set, where the loss curve is written) if the gate fails.
PretrainResult pretrain_base(const PretrainConfig& cfg, const std::string& curve_path = "");

}  // namespace fewvlm
