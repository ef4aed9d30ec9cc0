// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/scorer/scorer.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fewvlm/core/checkpoint.hpp"
#include "fewvlm/core/optim.hpp"
#include "fewvlm/core/rng.hpp"

namespace fewvlm {

namespace {

Tensor randn(Rng& rng, Shape shape, double stddev) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * stddev;
  return Tensor::from(std::move(shape), std::move(v));
}

std::vector<double> unit(std::span<const double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  std::vector<double> out(v.begin(), v.end());
  if (n > 0.0)
    for (auto& x : out) x /= n;
  return out;
}

}  // namespace

DualEncoder::DualEncoder(const VisionLanguageModel& vision_source, ScorerConfig cfg)
    : cfg_(cfg), vcfg_(vision_source.config()) {
  if (cfg_.d_embed < 1 || cfg_.d_text < 1) throw ConfigError("scorer: embedding sizes must be positive");
  if (!(cfg_.init_temperature > 0.0)) throw ConfigError("scorer: temperature must be positive");
  const auto& src = vision_source.params();
  auto copy = [&](const std::string& name) {
    return params_.add("SCORER." + name, src.at(name).value.clone(), ParamGroup::kVisionEncoder, false);
  };
  proj_w_ = copy("vision.proj.w");
  proj_b_ = copy("vision.proj.b");
  if (src.contains("vision.pos")) patch_pos_ = copy("vision.pos");
  norm_g_ = copy("vision.norm.g");
  norm_b_ = copy("vision.norm.b");

  Rng rng(cfg_.init_seed);
  const auto d = static_cast<std::size_t>(vcfg_.d_model);
  const auto e = static_cast<std::size_t>(cfg_.d_embed);
  const auto dt = static_cast<std::size_t>(cfg_.d_text);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  auto add = [&](const std::string& name, Tensor t) {
    return params_.add("SCORER." + name, std::move(t), ParamGroup::kScorer, true);
  };
  query_ = add("pool.query", randn(rng, {1, d}, 1.0));
  wk_ = add("pool.wk", randn(rng, {d, d}, inv_sqrt_d));
  wv_ = add("pool.wv", randn(rng, {d, d}, inv_sqrt_d));
  img_w_ = add("image.proj.w", randn(rng, {d, e}, inv_sqrt_d));
  img_b_ = add("image.proj.b", Tensor::zeros({e}));
  embed_ = add("text.embed", randn(rng, {static_cast<std::size_t>(vcfg_.vocab_size), dt}, 1.0));
  txt_w_ = add("text.proj.w", randn(rng, {dt, e}, 1.0 / std::sqrt(static_cast<double>(dt))));
  txt_b_ = add("text.proj.b", Tensor::zeros({e}));
  log_scale_ = add("log_inv_temperature", Tensor::from({1}, {std::log(1.0 / cfg_.init_temperature)}));
}

Tensor DualEncoder::patch_features(const Image& image) const {
  Tensor f = ::fewvlm::add(matmul(flatten_patches(vcfg_, image), proj_w_), proj_b_);
  if (patch_pos_.defined()) f = ::fewvlm::add(f, patch_pos_);
  return layer_norm(f, norm_g_, norm_b_);
}

Tensor DualEncoder::image_projection(const Tensor& features) const {
  const double inv = 1.0 / std::sqrt(static_cast<double>(vcfg_.d_model));
  const Tensor keys = matmul(features, wk_);
  const Tensor values = matmul(features, wv_);
  const Tensor weights = softmax(scale(matmul(query_, transpose(keys)), inv));
  return ::fewvlm::add(matmul(matmul(weights, values), img_w_), img_b_);
}

Tensor DualEncoder::text_projection(std::span<const int> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("scorer: empty text");
  for (int t : tokens)
    if (t < 0 || t >= vcfg_.vocab_size) throw std::invalid_argument("scorer: token id outside vocabulary");
  const Tensor rows = embedding(embed_, tokens);
  const Tensor pool = Tensor::full({1, tokens.size()}, 1.0 / static_cast<double>(tokens.size()));
  return ::fewvlm::add(matmul(matmul(pool, rows), txt_w_), txt_b_);
}

std::vector<double> DualEncoder::embed_image(const Image& image) const {
  NoGradGuard guard;
  const Tensor p = image_projection(patch_features(image));
  return unit(p.data());
}

std::vector<double> DualEncoder::embed_text(std::span<const int> tokens) const {
  NoGradGuard guard;
  const Tensor p = text_projection(tokens);
  return unit(p.data());
}

double DualEncoder::similarity(const Image& image, std::span<const int> tokens) const {
  const auto a = embed_image(image);
  const auto b = embed_text(tokens);
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::clamp(dot, -1.0, 1.0);
}

double DualEncoder::temperature() const { return std::exp(-log_scale_.at(0)); }

void DualEncoder::set_temperature(double t) {
  if (!(t > 0.0)) throw std::invalid_argument("scorer: temperature must be positive");
  log_scale_.mutable_data()[0] = std::log(1.0 / t);
}

Tensor DualEncoder::info_nce(const std::vector<Tensor>& features, const std::vector<std::vector<int>>& texts) const {
  if (features.size() != texts.size() || features.empty())
    throw std::invalid_argument("info_nce: need equally many (>= 1) images and texts");
  std::vector<Tensor> img, txt;
  for (std::size_t i = 0; i < features.size(); ++i) {
    img.push_back(image_projection(features[i]));
    txt.push_back(text_projection(texts[i]));
  }
  const Tensor logits = mul(cosine_similarity(concat(img, 0), concat(txt, 0)), exp(log_scale_));
  std::vector<int> targets(features.size());
  std::iota(targets.begin(), targets.end(), 0);
  const Tensor both = ::fewvlm::add(cross_entropy(logits, targets), cross_entropy(transpose(logits), targets));
  return scale(both, 0.5 / static_cast<double>(features.size()));
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

ContrastiveLog train_contrastive(DualEncoder& scorer, const std::vector<ContrastivePair>& pairs,
                                 const ContrastiveConfig& cfg) {
  if (cfg.batch < 1 || static_cast<std::size_t>(cfg.batch) > pairs.size())
    throw std::invalid_argument("train_contrastive: batch " + std::to_string(cfg.batch) + " exceeds " +
                                std::to_string(pairs.size()) + " pairs");
  std::vector<Tensor> features;
  {
    NoGradGuard guard;
    for (const auto& p : pairs) features.push_back(scorer.patch_features(p.image));
  }
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  OptimizerState opt(scorer.params(), ocfg);
  Rng rng(derive_seed(cfg.seed, tag_of("contrastive")));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t b = static_cast<std::size_t>(cfg.batch);
  ContrastiveLog log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    std::size_t steps = 0;
    // Drop the ragged tail so every batch has the same number of negatives.
    for (std::size_t start = 0; start + b <= order.size(); start += b) {
      std::vector<Tensor> f;
      std::vector<std::vector<int>> t;
      for (std::size_t i = start; i < start + b; ++i) {
        f.push_back(features[order[i]]);
        t.push_back(pairs[order[i]].tokens);
      }
      Graph g;
      const Tensor loss = scorer.info_nce(f, t);
      g.backward(loss);
      adamw_step(scorer.params(), opt, 1.0);
      total += loss.item();
      ++steps;
    }
    log.epoch_loss.push_back(total / static_cast<double>(steps));
  }
  return log;
}

double matched_margin(const DualEncoder& scorer, const std::vector<ContrastivePair>& pairs) {
  if (pairs.size() < 2) throw std::invalid_argument("matched_margin: need at least 2 pairs");
  std::vector<std::vector<double>> img, txt;
  for (const auto& p : pairs) {
    img.push_back(scorer.embed_image(p.image));
    txt.push_back(scorer.embed_text(p.tokens));
  }
  double matched = 0.0, mismatched = 0.0;
  const std::size_t n = pairs.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double c = cosine(img[i], txt[j]);
      (i == j ? matched : mismatched) += c;
    }
  return matched / static_cast<double>(n) - mismatched / static_cast<double>(n * (n - 1));
}

void save_scorer(const DualEncoder& scorer, const std::string& path) { save_checkpoint(path, scorer.params()); }

void load_scorer(DualEncoder& scorer, const std::string& path) { load_checkpoint_into(path, scorer.params()); }

}  // namespace fewvlm
