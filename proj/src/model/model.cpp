// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/model/model.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>

namespace fewvlm {

namespace {

constexpr double kMaskValue = -1e9;

Tensor random_normal(Rng& rng, Shape shape, double stddev) {
  std::vector<double> v(numel_of(shape));
  for (double& x : v) x = rng.normal() * stddev;
  return Tensor::from(std::move(shape), std::move(v));
}

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

class Builder {
 public:
  Builder(ParameterStore& store, Rng& rng) : store_(store), rng_(rng) {}

  Tensor normal(const std::string& name, Shape shape, double stddev, ParamGroup group) {
    return store_.add(name, random_normal(rng_, std::move(shape), stddev), group, false);
  }
  Tensor constant(const std::string& name, Shape shape, double value, ParamGroup group) {
    return store_.add(name, Tensor::full(std::move(shape), value), group, false);
  }
  Linear linear(const std::string& name, int in, int out, ParamGroup group, double gain = 1.0) {
    return {normal(name + ".w", {sz(in), sz(out)}, gain / std::sqrt(static_cast<double>(in)), group),
            constant(name + ".b", {sz(out)}, 0.0, group)};
  }
  Norm norm(const std::string& name, int d) {
    return {constant(name + ".g", {sz(d)}, 1.0, ParamGroup::kLayerNorm),
            constant(name + ".b", {sz(d)}, 0.0, ParamGroup::kLayerNorm)};
  }
  Attention attention(const std::string& name, int d, ParamGroup group, double out_gain) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    return {normal(name + ".wq", {sz(d), sz(d)}, s, group), normal(name + ".wk", {sz(d), sz(d)}, s, group),
            normal(name + ".wv", {sz(d), sz(d)}, s, group), linear(name + ".out", d, d, group, out_gain)};
  }
  FeedForward feed_forward(const std::string& name, int d, int hidden, ParamGroup group, double out_gain) {
    return {linear(name + ".up", d, hidden, group), linear(name + ".down", hidden, d, group, out_gain)};
  }

 private:
  ParameterStore& store_;
  Rng& rng_;
};

Tensor causal_mask(std::size_t t) {
  std::vector<double> m(t * t, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) m[i * t + j] = kMaskValue;
  return Tensor::from({t, t}, std::move(m));
}

}  // namespace

void VLMConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("VLMConfig: " + what); };
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (n_decoder_blocks <= 0) fail("n_decoder_blocks must be positive");
  if (n_latents <= 0 || n_resampler_blocks <= 0) fail("resampler sizes must be positive");
  if (patch_grid_h <= 0 || patch_grid_w <= 0 || patch_size <= 0 || image_channels <= 0) fail("bad image geometry");
  if (adapter_bottleneck <= 0 || adapter_bottleneck >= d_model) fail("adapter_bottleneck must be in (0, d_model)");
  if (max_seq_len <= 1) fail("max_seq_len must be > 1");
  if (ff_mult <= 0) fail("ff_mult must be positive");
}

void to_json(nlohmann::json& j, const VLMConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"d_model", c.d_model},
                     {"n_heads", c.n_heads},
                     {"n_decoder_blocks", c.n_decoder_blocks},
                     {"n_latents", c.n_latents},
                     {"n_resampler_blocks", c.n_resampler_blocks},
                     {"patch_grid", {c.patch_grid_h, c.patch_grid_w}},
                     {"patch_size", c.patch_size},
                     {"image_channels", c.image_channels},
                     {"adapter_bottleneck", c.adapter_bottleneck},
                     {"max_seq_len", c.max_seq_len},
                     {"ff_mult", c.ff_mult},
                     {"patch_positions", c.patch_positions},
                     {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, VLMConfig& c) {
  VLMConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.d_model = j.value("d_model", d.d_model);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.n_decoder_blocks = j.value("n_decoder_blocks", d.n_decoder_blocks);
  c.n_latents = j.value("n_latents", d.n_latents);
  c.n_resampler_blocks = j.value("n_resampler_blocks", d.n_resampler_blocks);
  if (j.contains("patch_grid")) {
    c.patch_grid_h = j.at("patch_grid").at(0).get<int>();
    c.patch_grid_w = j.at("patch_grid").at(1).get<int>();
  }
  c.patch_size = j.value("patch_size", d.patch_size);
  c.image_channels = j.value("image_channels", d.image_channels);
  c.adapter_bottleneck = j.value("adapter_bottleneck", d.adapter_bottleneck);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.ff_mult = j.value("ff_mult", d.ff_mult);
  c.patch_positions = j.value("patch_positions", d.patch_positions);
  c.init_seed = j.value("init_seed", d.init_seed);
}

Tensor multi_head_attention(const Attention& p, const Tensor& queries, const Tensor& keys_values, int n_heads,
                            const Tensor& mask) {
  const Tensor q = matmul(queries, p.wq);
  const Tensor k = matmul(keys_values, p.wk);
  const Tensor v = matmul(keys_values, p.wv);
  const std::size_t d = q.dim(1);
  const std::size_t dh = d / sz(n_heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(sz(n_heads));
  for (std::size_t h = 0; h < sz(n_heads); ++h) {
    const Tensor qh = n_heads == 1 ? q : slice(q, 1, h * dh, (h + 1) * dh);
    const Tensor kh = n_heads == 1 ? k : slice(k, 1, h * dh, (h + 1) * dh);
    const Tensor vh = n_heads == 1 ? v : slice(v, 1, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (mask.defined()) scores = add(scores, mask);
    heads.push_back(matmul(softmax(scores), vh));
  }
  const Tensor joined = n_heads == 1 ? heads.front() : concat(heads, 1);
  return p.out(joined);
}

// ---------------------------------------------------------------------------

VisionLanguageModel::VisionLanguageModel(VLMConfig config) : config_(std::move(config)) {
  config_.validate();
  build();
  set_partition(PartitionMode::kNone);
}

void VisionLanguageModel::build() {
  Rng rng(config_.init_seed);
  Builder b(params_, rng);
  const int d = config_.d_model;
  const int hidden = d * config_.ff_mult;
  const double residual_gain = 1.0 / std::sqrt(2.0 * config_.n_decoder_blocks);

  patch_proj_ = {b.normal("vision.proj.w", {sz(config_.patch_dim()), sz(d)},
                          1.0 / std::sqrt(static_cast<double>(config_.patch_dim())), ParamGroup::kVisionEncoder),
                 b.normal("vision.proj.b", {sz(d)}, 0.1, ParamGroup::kVisionEncoder)};
  if (config_.patch_positions)
    patch_pos_ = b.normal("vision.pos", {sz(config_.n_patches()), sz(d)}, 0.5, ParamGroup::kVisionEncoder);
  patch_norm_ = {b.constant("vision.norm.g", {sz(d)}, 1.0, ParamGroup::kVisionEncoder),
                 b.constant("vision.norm.b", {sz(d)}, 0.0, ParamGroup::kVisionEncoder)};

  latents_ = b.normal("resampler.latents", {sz(config_.n_latents), sz(d)}, 1.0, ParamGroup::kResampler);
  for (int i = 0; i < config_.n_resampler_blocks; ++i) {
    const std::string pre = "resampler." + std::to_string(i);
    ResamplerBlock blk;
    blk.latent_norm = b.norm(pre + ".latent_norm", d);
    blk.feature_norm = b.norm(pre + ".feature_norm", d);
    blk.attn = b.attention(pre + ".attn", d, ParamGroup::kResampler, 1.0);
    blk.ff_norm = b.norm(pre + ".ff_norm", d);
    blk.ff = b.feed_forward(pre + ".ff", d, hidden, ParamGroup::kResampler, 1.0);
    resampler_.push_back(std::move(blk));
  }
  resampler_out_norm_ = b.norm("resampler.out_norm", d);

  token_embed_ = b.normal("lm.embed", {sz(config_.vocab_size), sz(d)}, 1.0, ParamGroup::kLmBlock);
  pos_embed_ = b.normal("lm.pos", {sz(config_.max_seq_len), sz(d)}, 0.1, ParamGroup::kLmBlock);
  for (int i = 0; i < config_.n_decoder_blocks; ++i) {
    const std::string pre = "dec." + std::to_string(i);
    DecoderBlock blk;
    blk.xattn_norm = b.norm(pre + ".xattn_norm", d);
    blk.xattn = b.attention(pre + ".xattn", d, ParamGroup::kGatedXattn, residual_gain);
    blk.attn_gate = b.constant(pre + ".attn_gate", {1}, 0.0, ParamGroup::kGatedXattn);
    blk.xff_norm = b.norm(pre + ".xff_norm", d);
    blk.xff = b.feed_forward(pre + ".xff", d, hidden, ParamGroup::kGatedXattn, residual_gain);
    blk.ff_gate = b.constant(pre + ".ff_gate", {1}, 0.0, ParamGroup::kGatedXattn);
    blk.self_norm = b.norm(pre + ".self_norm", d);
    blk.self_attn = b.attention(pre + ".self_attn", d, ParamGroup::kLmBlock, residual_gain);
    blk.ff_norm = b.norm(pre + ".ff_norm", d);
    blk.ff = b.feed_forward(pre + ".ff", d, hidden, ParamGroup::kLmBlock, residual_gain);
    blocks_.push_back(std::move(blk));
  }
  final_norm_ = b.norm("lm.final_norm", d);
  head_ = b.linear("lm.head", d, config_.vocab_size, ParamGroup::kLmBlock);
}

Adapter VisionLanguageModel::make_adapter(const std::string& prefix, Rng& rng) {
  const int d = config_.d_model;
  const int k = config_.adapter_bottleneck;
  Builder b(params_, rng);
  Adapter a;
  a.down = {b.normal(prefix + ".down.w", {sz(d), sz(k)}, 0.01, ParamGroup::kAdapter),
            b.constant(prefix + ".down.b", {sz(k)}, 0.0, ParamGroup::kAdapter)};
  a.up = {b.constant(prefix + ".up.w", {sz(k), sz(d)}, 0.0, ParamGroup::kAdapter),
          b.constant(prefix + ".up.b", {sz(d)}, 0.0, ParamGroup::kAdapter)};
  return a;
}

void VisionLanguageModel::insert_adapters() {
  if (has_adapters_) throw ModelError("insert_adapters: adapters already inserted");
  Rng rng(derive_seed(config_.init_seed, tag_of("adapters")));
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string pre = "dec." + std::to_string(i) + ".adapter";
    blocks_[i].xattn_adapter = make_adapter(pre + ".xattn", rng);
    blocks_[i].self_adapter = make_adapter(pre + ".self", rng);
    blocks_[i].ff_adapter = make_adapter(pre + ".ff", rng);
  }
  has_adapters_ = true;
  for (auto& p : params_)
    if (p.group == ParamGroup::kAdapter) p.value.set_requires_grad(p.trainable);
}

void VisionLanguageModel::set_partition(PartitionMode mode) {
  if (mode == PartitionMode::kAdapter && !has_adapters_)
    throw ModelError("set_partition: adapter mode requires insert_adapters() first");
  params_.set_all_trainable(false);
  switch (mode) {
    case PartitionMode::kNone: break;
    case PartitionMode::kFinetune:
      params_.set_group_trainable(ParamGroup::kResampler, true);
      params_.set_group_trainable(ParamGroup::kGatedXattn, true);
      break;
    case PartitionMode::kAdapter:
      params_.set_group_trainable(ParamGroup::kAdapter, true);
      params_.set_group_trainable(ParamGroup::kLayerNorm, true);
      break;
    case PartitionMode::kPretrain:
      params_.set_all_trainable(true);
      params_.set_group_trainable(ParamGroup::kVisionEncoder, false);
      break;
  }
}

VisionLanguageModel VisionLanguageModel::clone() const {
  VisionLanguageModel copy(config_);
  if (has_adapters_) copy.insert_adapters();
  copy.params_.assign_from(params_);
  return copy;
}

Tensor flatten_patches(const VLMConfig& config, const Image& image) {
  const auto p = sz(config.patch_size);
  if (image.channels != sz(config.image_channels) || image.height != sz(config.image_height()) ||
      image.width != sz(config.image_width()) || image.pixels.size() != image.channels * image.height * image.width)
    throw ShapeError("encode_image: expected " + std::to_string(config.image_channels) + "x" +
                     std::to_string(config.image_height()) + "x" + std::to_string(config.image_width()) + ", got " +
                     std::to_string(image.channels) + "x" + std::to_string(image.height) + "x" +
                     std::to_string(image.width));
  const std::size_t gh = sz(config.patch_grid_h), gw = sz(config.patch_grid_w);
  const std::size_t pd = sz(config.patch_dim());
  std::vector<double> flat(gh * gw * pd);
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      double* dst = flat.data() + (py * gw + px) * pd;
      for (std::size_t c = 0; c < image.channels; ++c)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x) *dst++ = image.at(c, py * p + y, px * p + x);
    }
  return Tensor::from({gh * gw, pd}, std::move(flat));
}

Tensor VisionLanguageModel::encode_image(const Image& image) const {
  Tensor features = patch_proj_(flatten_patches(config_, image));
  if (patch_pos_.defined()) features = add(features, patch_pos_);
  return patch_norm_(features);
}

Tensor VisionLanguageModel::resample(const Tensor& patch_features) const {
  if (patch_features.rank() != 2 || patch_features.dim(1) != sz(config_.d_model))
    throw ShapeError("resample: expected [n, " + std::to_string(config_.d_model) + "], got " +
                     shape_str(patch_features.shape()));
  Tensor x = latents_;
  for (const auto& blk : resampler_) {
    const Tensor kv = blk.feature_norm(patch_features);
    x = add(x, multi_head_attention(blk.attn, blk.latent_norm(x), kv, config_.n_heads));
    x = add(x, blk.ff(blk.ff_norm(x)));
  }
  return resampler_out_norm_(x);
}

void VisionLanguageModel::check_tokens(std::span<const int> tokens) const {
  if (tokens.empty()) throw ShapeError("decode_logits: empty token sequence");
  if (tokens.size() > sz(config_.max_seq_len))
    throw ShapeError("decode_logits: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                     std::to_string(config_.max_seq_len));
  for (int t : tokens)
    if (t < 0 || t >= config_.vocab_size)
      throw ShapeError("decode_logits: token id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(config_.vocab_size));
}

Tensor VisionLanguageModel::decode_logits(const Tensor& visual_tokens, std::span<const int> tokens) const {
  const std::vector<int> image_of(tokens.size(), 0);
  return decode_logits(std::span<const Tensor>(&visual_tokens, 1), tokens, image_of);
}

Tensor VisionLanguageModel::decode_logits(std::span<const Tensor> visuals, std::span<const int> tokens,
                                          std::span<const int> image_of) const {
  check_tokens(tokens);
  if (visuals.empty()) throw ShapeError("decode_logits: no visual tokens");
  if (image_of.size() != tokens.size()) throw ShapeError("decode_logits: image_of length must match tokens");
  const std::size_t t = tokens.size();

  Tensor kv = visuals.size() == 1 ? visuals.front() : concat(std::vector<Tensor>(visuals.begin(), visuals.end()), 0);
  Tensor xmask;
  if (visuals.size() > 1) {
    std::vector<std::size_t> offsets{0};
    for (const auto& v : visuals) offsets.push_back(offsets.back() + v.dim(0));
    std::vector<double> m(t * offsets.back(), kMaskValue);
    for (std::size_t i = 0; i < t; ++i) {
      const auto img = static_cast<std::size_t>(image_of[i]);
      if (img >= visuals.size()) throw ShapeError("decode_logits: image index out of range");
      for (std::size_t j = offsets[img]; j < offsets[img + 1]; ++j) m[i * offsets.back() + j] = 0.0;
    }
    xmask = Tensor::from({t, offsets.back()}, std::move(m));
  } else {
    for (int img : image_of)
      if (img != 0) throw ShapeError("decode_logits: image index out of range");
  }
  const Tensor smask = causal_mask(t);

  Tensor h = add(embedding(token_embed_, tokens), slice(pos_embed_, 0, 0, t));
  for (const auto& blk : blocks_) {
    Tensor a = multi_head_attention(blk.xattn, blk.xattn_norm(h), kv, config_.n_heads, xmask);
    if (blk.xattn_adapter) a = (*blk.xattn_adapter)(a);
    h = add(h, mul(a, tanh(blk.attn_gate)));
    h = add(h, mul(blk.xff(blk.xff_norm(h)), tanh(blk.ff_gate)));

    Tensor s = multi_head_attention(blk.self_attn, blk.self_norm(h), blk.self_norm(h), config_.n_heads, smask);
    if (blk.self_adapter) s = (*blk.self_adapter)(s);
    h = add(h, s);
    Tensor f = blk.ff(blk.ff_norm(h));
    if (blk.ff_adapter) f = (*blk.ff_adapter)(f);
    h = add(h, f);
  }
  return head_(final_norm_(h));
}

Tensor VisionLanguageModel::sequence_nll_from_visual(const Tensor& visual_tokens, std::span<const int> tokens) const {
  if (tokens.size() < 2) throw ShapeError("sequence_nll: need at least two tokens");
  const Tensor logits = decode_logits(visual_tokens, tokens.first(tokens.size() - 1));
  return cross_entropy(logits, tokens.subspan(1));
}

Tensor VisionLanguageModel::sequence_nll(const Image& image, std::span<const int> tokens) const {
  return sequence_nll_from_visual(visual_tokens(image), tokens);
}

// ---------------------------------------------------------------------------
// Incremental decoding

namespace {

using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<const RowVec>;

MatMap mat(const Tensor& t) { return MatMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1))); }
VecMap vec(const Tensor& t) { return VecMap(t.data().data(), static_cast<Eigen::Index>(t.numel())); }

RowVec norm_row(const Norm& n, const RowVec& x) {
  const auto d = static_cast<double>(x.size());
  double mu = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) mu += x[j];
  mu /= d;
  double var = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) var += (x[j] - mu) * (x[j] - mu);
  var /= d;
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  RowVec out(x.size());
  const double* g = n.gain.data().data();
  const double* b = n.bias.data().data();
  for (Eigen::Index j = 0; j < x.size(); ++j) out[j] = (x[j] - mu) * inv * g[j] + b[j];
  return out;
}

RowVec linear_row(const Linear& l, const RowVec& x) { return x * mat(l.weight) + vec(l.bias); }

RowVec gelu_row(RowVec x) {
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = 0.5 * x[j] * (1.0 + std::erf(x[j] * 0.70710678118654752440));
  return x;
}

RowVec ff_row(const FeedForward& f, const RowVec& x) { return linear_row(f.down, gelu_row(linear_row(f.up, x))); }

RowVec adapter_row(const Adapter& a, const RowVec& x) { return x + linear_row(a.up, gelu_row(linear_row(a.down, x))); }

// Attention of one query row over `rows` cached keys/values stored row-major [rows, d].
RowVec attend_row(const RowVec& q, const double* keys, const double* values, std::size_t rows, std::size_t d,
                  std::size_t heads) {
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  RowVec out = RowVec::Zero(static_cast<Eigen::Index>(d));
  std::vector<double> w(rows);
  for (std::size_t h = 0; h < heads; ++h) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < rows; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < dh; ++k) s += q[static_cast<Eigen::Index>(h * dh + k)] * keys[j * d + h * dh + k];
      w[j] = s * inv_sqrt;
      mx = std::max(mx, w[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < rows; ++j) z += (w[j] = std::exp(w[j] - mx));
    for (std::size_t j = 0; j < rows; ++j) {
      const double p = w[j] / z;
      for (std::size_t k = 0; k < dh; ++k) out[static_cast<Eigen::Index>(h * dh + k)] += p * values[j * d + h * dh + k];
    }
  }
  return out;
}

}  // namespace

IncrementalDecoder VisionLanguageModel::start_decoding(std::vector<Tensor> visuals) const {
  if (visuals.empty()) throw ShapeError("start_decoding: no visual tokens");
  auto cross = std::make_shared<std::vector<IncrementalDecoder::CrossKV>>();
  NoGradGuard no_grad;
  for (const auto& v : visuals) {
    IncrementalDecoder::CrossKV kv;
    kv.rows = v.dim(0);
    for (const auto& blk : blocks_) {
      const Tensor k = matmul(v, blk.xattn.wk);
      const Tensor val = matmul(v, blk.xattn.wv);
      kv.keys.emplace_back(k.data().begin(), k.data().end());
      kv.values.emplace_back(val.data().begin(), val.data().end());
    }
    cross->push_back(std::move(kv));
  }
  IncrementalDecoder dec;
  dec.model_ = this;
  dec.cross_ = std::move(cross);
  dec.self_keys_.resize(blocks_.size());
  dec.self_values_.resize(blocks_.size());
  return dec;
}

std::vector<double> IncrementalDecoder::push(int token, int image) {
  const VisionLanguageModel& m = *model_;
  const VLMConfig& cfg = m.config_;
  if (token < 0 || token >= cfg.vocab_size)
    throw ShapeError("decode: token id " + std::to_string(token) + " outside vocabulary");
  if (length_ >= sz(cfg.max_seq_len))
    throw ShapeError("decode: sequence length exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  if (image < 0 || static_cast<std::size_t>(image) >= cross_->size()) throw ShapeError("decode: image index out of range");
  const std::size_t d = sz(cfg.d_model);
  const std::size_t heads = sz(cfg.n_heads);
  const CrossKV& kv = (*cross_)[static_cast<std::size_t>(image)];

  RowVec x = mat(m.token_embed_).row(token) + mat(m.pos_embed_).row(static_cast<Eigen::Index>(length_));
  for (std::size_t b = 0; b < m.blocks_.size(); ++b) {
    const DecoderBlock& blk = m.blocks_[b];
    {
      const RowVec q = norm_row(blk.xattn_norm, x) * mat(blk.xattn.wq);
      RowVec a = linear_row(blk.xattn.out, attend_row(q, kv.keys[b].data(), kv.values[b].data(), kv.rows, d, heads));
      if (blk.xattn_adapter) a = adapter_row(*blk.xattn_adapter, a);
      x += std::tanh(blk.attn_gate.item()) * a;
      x += std::tanh(blk.ff_gate.item()) * ff_row(blk.xff, norm_row(blk.xff_norm, x));
    }
    {
      const RowVec u = norm_row(blk.self_norm, x);
      const RowVec q = u * mat(blk.self_attn.wq);
      const RowVec k = u * mat(blk.self_attn.wk);
      const RowVec v = u * mat(blk.self_attn.wv);
      self_keys_[b].insert(self_keys_[b].end(), k.data(), k.data() + d);
      self_values_[b].insert(self_values_[b].end(), v.data(), v.data() + d);
      RowVec s = linear_row(blk.self_attn.out,
                            attend_row(q, self_keys_[b].data(), self_values_[b].data(), length_ + 1, d, heads));
      if (blk.self_adapter) s = adapter_row(*blk.self_adapter, s);
      x += s;
      RowVec f = ff_row(blk.ff, norm_row(blk.ff_norm, x));
      if (blk.ff_adapter) f = adapter_row(*blk.ff_adapter, f);
      x += f;
    }
  }
  ++length_;
  const RowVec logits = linear_row(m.head_, norm_row(m.final_norm_, x));
  return {logits.data(), logits.data() + logits.size()};
}

}  // namespace fewvlm
