// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/adapt/train.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fewvlm/core/optim.hpp"
#include "fewvlm/core/rng.hpp"
#include "fewvlm/tasks/scene.hpp"

namespace fewvlm {

Example example_of(const Sample& s) {
  Example e;
  e.id = s.id;
  e.images = {s.image};
  e.tokens = s.tokens;
  e.image_of.assign(s.tokens.size(), 0);
  return e;
}

Example example_of(const Document& d, std::uint64_t id) {
  return {id, d.images, d.tokens, d.image_of};
}

std::vector<Example> examples_of(const std::vector<Sample>& samples) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(example_of(s));
  return out;
}

Tensor example_nll(const VisionLanguageModel& model, const Example& ex, double jitter) {
  if (ex.tokens.size() < 2) throw std::invalid_argument("example_nll: need at least two tokens");
  std::vector<Tensor> visuals;
  visuals.reserve(ex.images.size());
  for (const auto& img : ex.images)
    visuals.push_back(model.visual_tokens(jitter == 1.0 ? img : color_jitter(img, jitter)));
  const Tensor logits = model.decode_logits(visuals, ex.tokens, ex.image_of);
  const std::size_t t = ex.tokens.size();
  return cross_entropy(slice(logits, 0, 0, t - 1), std::span<const int>(ex.tokens).subspan(1));
}

Tensor mean_nll(const VisionLanguageModel& model, std::span<const Example* const> batch,
                std::span<const double> jitters) {
  if (batch.empty()) throw std::invalid_argument("mean_nll: empty batch");
  if (jitters.size() != batch.size()) throw std::invalid_argument("mean_nll: jitters must align with batch");
  Tensor total = example_nll(model, *batch[0], jitters[0]);
  for (std::size_t i = 1; i < batch.size(); ++i) total = add(total, example_nll(model, *batch[i], jitters[i]));
  return scale(total, 1.0 / static_cast<double>(batch.size()));
}

CombinedLoss combined_loss(const VisionLanguageModel& model, std::span<const Example* const> gt,
                           std::span<const double> gt_jitter, std::span<const Example* const> pseudo,
                           std::span<const double> pseudo_jitter, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("combined_loss: alpha must lie in [0, 1]");
  if (alpha > 0.0 && gt.empty()) throw std::invalid_argument("combined_loss: alpha > 0 needs ground-truth samples");
  if (alpha < 1.0 && pseudo.empty()) throw std::invalid_argument("combined_loss: alpha < 1 needs pseudo-labels");
  CombinedLoss out;
  // A side with zero weight is still measured for the log, outside the graph.
  auto measure = [&](std::span<const Example* const> b, std::span<const double> j) {
    NoGradGuard guard;
    return mean_nll(model, b, j).item();
  };
  Tensor gt_term, ps_term;
  if (alpha > 0.0) {
    const Tensor m = mean_nll(model, gt, gt_jitter);
    out.gt = m.item();
    gt_term = scale(m, alpha);
  } else if (!gt.empty()) {
    out.gt = measure(gt, gt_jitter);
  }
  if (alpha < 1.0) {
    const Tensor m = mean_nll(model, pseudo, pseudo_jitter);
    out.pseudo = m.item();
    ps_term = scale(m, 1.0 - alpha);
  } else if (!pseudo.empty()) {
    out.pseudo = measure(pseudo, pseudo_jitter);
  }
  if (gt_term.defined() && ps_term.defined())
    out.total = add(gt_term, ps_term);
  else
    out.total = gt_term.defined() ? gt_term : ps_term;
  return out;
}

EpochPlan supervised_plan(std::size_t n, int batch, std::uint64_t seed, int min_steps) {
  if (n == 0) throw std::invalid_argument("training set is empty");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (min_steps < 0) throw std::invalid_argument("min_steps_per_epoch must be >= 0");
  const std::size_t b = std::min(static_cast<std::size_t>(batch), n);
  return [n, b, seed, min_steps](int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(derive_seed(seed, tag_of("supervised-order")), static_cast<std::uint64_t>(epoch)));
    std::vector<MixedBatch> out;
    do {
      rng.shuffle(order);
      for (std::size_t i = 0; i < n; i += b) {
        MixedBatch mb;
        mb.gt.assign(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + b)));
        out.push_back(std::move(mb));
      }
    } while (out.size() < static_cast<std::size_t>(min_steps));
    return out;
  };
}

AdaptationReport run_training(VisionLanguageModel& model, const std::vector<Example>& gt,
                              const std::vector<Example>& pseudo, const EpochPlan& plan, double alpha,
                              const TrainConfig& cfg, const Validator& validate, std::string method) {
  if (cfg.epochs < 1) throw std::invalid_argument("training needs at least one epoch");
  AdaptationReport report;
  report.method = std::move(method);
  report.trainable_params = model.params().count_trainable_elements();
  report.total_params = model.params().count_elements();
  if (report.trainable_params == 0) throw std::invalid_argument("training: no trainable parameters");

  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  OptimizerState opt(model.params(), ocfg);
  Rng jitter_rng(derive_seed(cfg.seed, tag_of("jitter")));
  auto draw = [&](std::size_t n) {
    std::vector<double> j(n, 1.0);
    if (cfg.color_jitter)
      for (auto& v : j) v = jitter_rng.uniform(0.9, 1.1);
    return j;
  };

  report.initial_metric = validate(model);
  report.best_metric = -std::numeric_limits<double>::infinity();
  std::optional<ParameterStore> best;
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr_schedule(cfg.lr, epoch, cfg.decay_period, cfg.decay_factor);
    opt.config.lr = log.lr;
    const auto batches = plan(epoch);
    if (batches.empty()) throw std::invalid_argument("training: epoch plan produced no batches");
    for (const auto& mb : batches) {
      std::vector<const Example*> g, p;
      for (auto i : mb.gt) g.push_back(&gt.at(i));
      for (auto i : mb.pseudo) p.push_back(&pseudo.at(i));
      const auto gj = draw(g.size());
      const auto pj = draw(p.size());
      Graph graph;
      const CombinedLoss loss = combined_loss(model, g, gj, p, pj, alpha);
      graph.backward(loss.total);
      adamw_step(model.params(), opt, cfg.clip);
      log.train_loss += loss.total.item();
      log.gt_loss += loss.gt;
      log.pseudo_loss += loss.pseudo;
    }
    const double nb = static_cast<double>(batches.size());
    log.train_loss /= nb;
    log.gt_loss /= nb;
    log.pseudo_loss /= nb;
    log.val_metric = validate(model);
    report.epochs.push_back(log);
    report.epochs_run = epoch + 1;
    if (log.val_metric > report.best_metric) {
      report.best_metric = log.val_metric;
      report.best_epoch = epoch;
      best = model.params().clone();
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  model.params().assign_from(*best);
  report.fingerprint = model.params().fingerprint();
  return report;
}

void to_json(nlohmann::json& j, const AdaptationReport& r) {
  j = nlohmann::json::object();
  j["method"] = r.method;
  j["epochs_run"] = r.epochs_run;
  j["initial_metric"] = r.initial_metric;
  j["best_metric"] = r.best_metric;
  j["best_epoch"] = r.best_epoch;
  j["checkpoint_path"] = r.checkpoint_path;
  j["trainable_params"] = r.trainable_params;
  j["total_params"] = r.total_params;
  j["alpha"] = r.alpha ? nlohmann::json(*r.alpha) : nlohmann::json(nullptr);
  j["filter"] = r.filter;
  j["warnings"] = r.warnings;
  j["fingerprint"] = r.fingerprint;
  auto epochs = nlohmann::json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"gt_loss", e.gt_loss},
                      {"pseudo_loss", e.pseudo_loss},
                      {"val_metric", e.val_metric},
                      {"lr", e.lr}});
  j["epochs"] = epochs;
}

void from_json(const nlohmann::json& j, AdaptationReport& r) {
  r.method = j.at("method").get<std::string>();
  r.epochs_run = j.at("epochs_run").get<int>();
  r.initial_metric = j.at("initial_metric").get<double>();
  r.best_metric = j.at("best_metric").get<double>();
  r.best_epoch = j.at("best_epoch").get<int>();
  r.checkpoint_path = j.at("checkpoint_path").get<std::string>();
  r.trainable_params = j.at("trainable_params").get<std::size_t>();
  r.total_params = j.at("total_params").get<std::size_t>();
  if (!j.at("alpha").is_null()) r.alpha = j["alpha"].get<double>();
  r.filter = j.at("filter").get<std::string>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  r.fingerprint = j.at("fingerprint").get<std::uint64_t>();
  r.epochs.clear();
  for (const auto& e : j.at("epochs"))
    r.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("gt_loss").get<double>(),
                        e.at("pseudo_loss").get<double>(), e.at("val_metric").get<double>(), e.at("lr").get<double>()});
}

void save_report(const AdaptationReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << nlohmann::json(r).dump(2) << '\n';
}

AdaptationReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return nlohmann::json::parse(in).get<AdaptationReport>();
}

void write_metrics_csv(const AdaptationReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,train_loss,gt_loss,pseudo_loss,val_metric,lr\n";
  out << std::setprecision(17);
  for (const auto& e : r.epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.gt_loss << ',' << e.pseudo_loss << ',' << e.val_metric << ','
        << e.lr << '\n';
}

}  // namespace fewvlm
