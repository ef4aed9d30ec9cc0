// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/model/io.hpp"

#include <fstream>

#include <json.hpp>

#include "fewvlm/core/checkpoint.hpp"

namespace fewvlm {

void save_model(const VisionLanguageModel& model, const std::string& path) {
  save_checkpoint(path, model.params());
  nlohmann::json m;
  m["config"] = model.config();
  m["adapters"] = model.has_adapters();
  std::ofstream out(path + ".json", std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write manifest " + path + ".json");
  out << m.dump(2) << '\n';
}

VisionLanguageModel load_model(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw CheckpointError("missing model manifest " + path + ".json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw CheckpointError("bad model manifest " + path + ".json: " + e.what());
  }
  VisionLanguageModel model(m.at("config").get<VLMConfig>());
  if (m.at("adapters").get<bool>()) model.insert_adapters();
  load_checkpoint_into(path, model.params());
  return model;
}

}  // namespace fewvlm
