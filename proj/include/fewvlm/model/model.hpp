// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fewvlm/core/parameters.hpp"
#include "fewvlm/core/rng.hpp"
#include "fewvlm/core/tensor.hpp"
#include "fewvlm/model/config.hpp"
#include "fewvlm/model/image.hpp"

namespace fewvlm {

/// Which parameter groups an adaptation method may update.
enum class PartitionMode {
  kNone,      // everything frozen
  kFinetune,  // resampler + gated cross-attention
  kAdapter,   // adapters + every layer norm
  kPretrain,  // everything except the vision encoder
};

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
};

struct Norm {
  Tensor gain;
  Tensor bias;
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct Attention {
  Tensor wq, wk, wv;  // [d, d], no bias
  Linear out;
};

struct FeedForward {
  Linear up;
  Linear down;
  Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }
};

/// Bottleneck residual MLP: x + up(gelu(down(x))). Identity while up == 0.
struct Adapter {
  Linear down;
  Linear up;
  Tensor operator()(const Tensor& x) const { return add(x, up(gelu(down(x)))); }
};

struct DecoderBlock {
  // Gated cross-attention to visual tokens, then a gated dense layer.
  Norm xattn_norm;
  Attention xattn;
  Tensor attn_gate;  // [1], passed through tanh
  Norm xff_norm;
  FeedForward xff;
  Tensor ff_gate;  // [1]
  // Frozen language-model layers.
  Norm self_norm;
  Attention self_attn;
  Norm ff_norm;
  FeedForward ff;
  // Present after insert_adapters().
  std::optional<Adapter> xattn_adapter;
  std::optional<Adapter> self_adapter;
  std::optional<Adapter> ff_adapter;
};

struct ResamplerBlock {
  Norm latent_norm;
  Norm feature_norm;
  Attention attn;
  Norm ff_norm;
  FeedForward ff;
};

/// Multi-head attention of `queries` [Tq,d] over `keys_values` [Tk,d]. `mask`,
/// when defined, is added to the [Tq,Tk] scores of every head.
Tensor multi_head_attention(const Attention& p, const Tensor& queries, const Tensor& keys_values, int n_heads,
                            const Tensor& mask = {});

class IncrementalDecoder;

/// [n_patches, patch_dim] rows in (channel, y, x) order; throws ShapeError on a size mismatch.
Tensor flatten_patches(const VLMConfig& config, const Image& image);

/// Miniature visually-conditioned autoregressive LM: frozen patch encoder,
/// perceiver resampler, decoder blocks with tanh-gated cross-attention.
class VisionLanguageModel {
 public:
  explicit VisionLanguageModel(VLMConfig config);

  VisionLanguageModel(const VisionLanguageModel&) = delete;
  VisionLanguageModel& operator=(const VisionLanguageModel&) = delete;
  VisionLanguageModel(VisionLanguageModel&&) = default;
  VisionLanguageModel& operator=(VisionLanguageModel&&) = default;

  /// Independent copy (same structure, cloned values and flags).
  VisionLanguageModel clone() const;

  const VLMConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// [n_patches, d_model] from the frozen encoder.
  Tensor encode_image(const Image& image) const;
  /// [n_latents, d_model] regardless of patch count.
  Tensor resample(const Tensor& patch_features) const;
  Tensor visual_tokens(const Image& image) const { return resample(encode_image(image)); }

  /// Next-token logits [T, vocab] for a single-image sequence.
  Tensor decode_logits(const Tensor& visual_tokens, std::span<const int> tokens) const;
  /// Interleaved form: position t cross-attends only to visuals[image_of[t]].
  Tensor decode_logits(std::span<const Tensor> visuals, std::span<const int> tokens,
                       std::span<const int> image_of) const;

  /// Teacher-forced -sum_{t>=1} log P(token_t | tokens_<t, image).
  Tensor sequence_nll(const Image& image, std::span<const int> tokens) const;
  Tensor sequence_nll_from_visual(const Tensor& visual_tokens, std::span<const int> tokens) const;

  /// Adds one adapter after each self-attention, cross-attention and
  /// feed-forward sublayer of every decoder block.
  void insert_adapters();
  bool has_adapters() const { return has_adapters_; }

  void set_partition(PartitionMode mode);

  /// KV-cached decoder over precomputed visual token sets.
  IncrementalDecoder start_decoding(std::vector<Tensor> visuals) const;

  const std::vector<DecoderBlock>& blocks() const { return blocks_; }

 private:
  friend class IncrementalDecoder;

  void build();
  Adapter make_adapter(const std::string& prefix, Rng& rng);
  void check_tokens(std::span<const int> tokens) const;

  VLMConfig config_;
  ParameterStore params_;
  bool has_adapters_ = false;

  // Vision encoder (always frozen).
  Linear patch_proj_;
  Tensor patch_pos_;
  Norm patch_norm_;
  // Resampler.
  Tensor latents_;
  std::vector<ResamplerBlock> resampler_;
  Norm resampler_out_norm_;
  // Text decoder.
  Tensor token_embed_;
  Tensor pos_embed_;
  std::vector<DecoderBlock> blocks_;
  Norm final_norm_;
  Linear head_;
};

/// Incremental inference state: pushes one token at a time and returns the
/// next-token logits. Copyable so beam search can fork hypotheses.
class IncrementalDecoder {
 public:
  /// Consumes `token` at the next position, cross-attending to image slot
  /// `image`, and returns logits over the vocabulary.
  std::vector<double> push(int token, int image);
  std::size_t length() const { return length_; }
  std::size_t image_count() const { return cross_->size(); }

 private:
  friend class VisionLanguageModel;
  struct CrossKV {
    // Per block: keys/values projected from one image's visual tokens.
    std::vector<std::vector<double>> keys, values;
    std::size_t rows = 0;
  };
  const VisionLanguageModel* model_ = nullptr;
  std::shared_ptr<const std::vector<CrossKV>> cross_;
  std::vector<std::vector<double>> self_keys_, self_values_;  // per block, [t, d]
  std::size_t length_ = 0;
};

}  // namespace fewvlm
