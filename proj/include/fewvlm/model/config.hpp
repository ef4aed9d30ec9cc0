// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace fewvlm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct VLMConfig {
  int vocab_size = 64;
  int d_model = 64;
  int n_heads = 2;
  int n_decoder_blocks = 4;
  int n_latents = 8;
  int n_resampler_blocks = 1;
  int patch_grid_h = 2;
  int patch_grid_w = 2;
  int patch_size = 4;
  int image_channels = 3;
  int adapter_bottleneck = 16;
  int max_seq_len = 128;
  int ff_mult = 2;
  bool patch_positions = false;
  std::uint64_t init_seed = 1;

  int image_height() const { return patch_grid_h * patch_size; }
  int image_width() const { return patch_grid_w * patch_size; }
  int n_patches() const { return patch_grid_h * patch_grid_w; }
  int patch_dim() const { return image_channels * patch_size * patch_size; }
  int head_dim() const { return d_model / n_heads; }

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;

  bool operator==(const VLMConfig&) const = default;
};

void to_json(nlohmann::json& j, const VLMConfig& c);
void from_json(const nlohmann::json& j, VLMConfig& c);

}  // namespace fewvlm
