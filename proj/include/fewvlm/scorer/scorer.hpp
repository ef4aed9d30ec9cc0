// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fewvlm/core/parameters.hpp"
#include "fewvlm/model/model.hpp"

namespace fewvlm {

struct ScorerConfig {
  int d_embed = 32;
  int d_text = 32;
  double init_temperature = 0.07;
  std::uint64_t init_seed = 7;
};

/// Image/text dual encoder. The image tower reuses a frozen copy of a VLM's
/// patch encoder followed by single-query attention pooling and a projection;
/// the text tower mean-pools token embeddings and projects. Parameter names
/// carry the "SCORER." prefix.
class DualEncoder {
 public:
  DualEncoder(const VisionLanguageModel& vision_source, ScorerConfig cfg = {});

  DualEncoder(const DualEncoder&) = delete;
  DualEncoder& operator=(const DualEncoder&) = delete;
  DualEncoder(DualEncoder&&) = default;
  DualEncoder& operator=(DualEncoder&&) = default;

  const ScorerConfig& config() const { return cfg_; }
  const VLMConfig& vision_config() const { return vcfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// Frozen patch features [n_patches, d_model].
  Tensor patch_features(const Image& image) const;
  /// Unnormalized [1, d_embed] projections (graph-recorded).
  Tensor image_projection(const Tensor& patch_features) const;
  Tensor text_projection(std::span<const int> tokens) const;

  /// Unit-norm embeddings computed without recording.
  std::vector<double> embed_image(const Image& image) const;
  std::vector<double> embed_text(std::span<const int> tokens) const;

  /// Cosine of the two unit embeddings, in [-1, 1].
  double similarity(const Image& image, std::span<const int> tokens) const;

  double temperature() const;
  /// Overrides the learnable temperature (log-scale parameter).
  void set_temperature(double t);
  Tensor log_inv_temperature() const { return log_scale_; }

  /// Symmetric InfoNCE over the in-batch pairs: mean of the row-wise and
  /// column-wise cross-entropies of cos/temperature.
  Tensor info_nce(const std::vector<Tensor>& patch_features, const std::vector<std::vector<int>>& texts) const;

 private:
  ScorerConfig cfg_;
  VLMConfig vcfg_;
  ParameterStore params_;
  Tensor proj_w_, proj_b_, norm_g_, norm_b_, patch_pos_;  // frozen vision copy
  Tensor query_, wk_, wv_;
  Tensor img_w_, img_b_;
  Tensor embed_, txt_w_, txt_b_;
  Tensor log_scale_;
};

/// Cosine of two vectors; 0 when either has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

struct ContrastivePair {
  Image image;
  std::vector<int> tokens;
};

struct ContrastiveConfig {
  int epochs = 10;
  double lr = 3e-3;
  int batch = 32;
  std::uint64_t seed = 0;
};

struct ContrastiveLog {
  std::vector<double> epoch_loss;
};

/// Trains every non-frozen scorer parameter with AdamW (clip 1.0).
/// Throws std::invalid_argument when batch exceeds the number of pairs.
ContrastiveLog train_contrastive(DualEncoder& scorer, const std::vector<ContrastivePair>& pairs,
                                 const ContrastiveConfig& cfg);

/// Mean similarity of matched pairs minus mean over mismatched (i != j) pairs.
double matched_margin(const DualEncoder& scorer, const std::vector<ContrastivePair>& pairs);

void save_scorer(const DualEncoder& scorer, const std::string& path);
void load_scorer(DualEncoder& scorer, const std::string& path);

}  // namespace fewvlm
