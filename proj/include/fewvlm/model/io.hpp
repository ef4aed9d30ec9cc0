// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "fewvlm/model/model.hpp"

namespace fewvlm {

/// Writes the checkpoint to `path` and a JSON manifest (config, adapters flag)
/// to `path + ".json"`.
void save_model(const VisionLanguageModel& model, const std::string& path);

/// Rebuilds the model from the manifest and loads the checkpoint values.
VisionLanguageModel load_model(const std::string& path);

}  // namespace fewvlm
