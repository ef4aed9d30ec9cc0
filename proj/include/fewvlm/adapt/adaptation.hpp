// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fewvlm/adapt/train.hpp"
#include "fewvlm/decoding/decoding.hpp"
#include "fewvlm/model/model.hpp"
#include "fewvlm/tasks/dataset.hpp"

namespace fewvlm {

struct AdaptConfig {
  TrainConfig train;
  BeamConfig beam;  // decoding used for validation
  int jobs = 1;
  std::string checkpoint_path;  // empty: keep in memory only
};

/// Primary task metric of direct decoding on `val`.
Validator task_validator(const std::vector<Sample>& val, TaskKind task, BeamConfig beam, int jobs = 1);

/// Updates the resampler and gated cross-attention only; returns the best
/// epoch's parameters in `model`. Throws std::invalid_argument on an empty set.
AdaptationReport finetune(VisionLanguageModel& model, const std::vector<Sample>& train,
                          const std::vector<Sample>& val, const AdaptConfig& cfg);

/// Same loop over adapters and layer norms. Inserts adapters when absent.
AdaptationReport train_adapters(VisionLanguageModel& model, const std::vector<Sample>& train,
                                const std::vector<Sample>& val, const AdaptConfig& cfg);

/// Saves the checkpoint, its manifest (`<path>.json` holds the VLMConfig) and
/// the report (`<path>.report.json`).
void persist_adaptation(const VisionLanguageModel& model, AdaptationReport& report, const std::string& path);

}  // namespace fewvlm
