// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fewvlm/decoding/decoding.hpp"
#include "fewvlm/model/model.hpp"
#include "fewvlm/tasks/dataset.hpp"

namespace fewvlm {

/// A training sequence with its images; token t cross-attends to images[image_of[t]].
struct Example {
  std::uint64_t id = 0;
  std::vector<Image> images;
  std::vector<int> tokens;
  std::vector<int> image_of;
};

Example example_of(const Sample& s);
Example example_of(const Document& d, std::uint64_t id = 0);
std::vector<Example> examples_of(const std::vector<Sample>& samples);

/// -sum_{t>=1} log P(token_t | <t) with every image brightness-scaled by `jitter`.
Tensor example_nll(const VisionLanguageModel& model, const Example& ex, double jitter = 1.0);

/// Mean of example_nll over the batch; `jitters` aligns with `batch`.
Tensor mean_nll(const VisionLanguageModel& model, std::span<const Example* const> batch,
                std::span<const double> jitters);

/// Indices into the ground-truth and pseudo-labelled example lists.
struct MixedBatch {
  std::vector<std::size_t> gt;
  std::vector<std::size_t> pseudo;
};

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 12;
  int batch = 8;
  double clip = 1.0;
  int decay_period = 4;
  double decay_factor = 0.1;
  double weight_decay = 0.0;
  bool color_jitter = true;
  int min_steps_per_epoch = 0;  // further reshuffled passes until an epoch has this many steps
  int patience = 0;  // epochs without improvement before stopping; 0 runs every epoch
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double gt_loss = 0.0;
  double pseudo_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
};

struct AdaptationReport {
  std::string method;  // finetune, adapter, icl, semisup
  int epochs_run = 0;
  double initial_metric = 0.0;
  double best_metric = 0.0;
  int best_epoch = -1;  // epoch whose parameters were kept (early-stop epoch)
  std::string checkpoint_path;
  std::vector<EpochLog> epochs;
  std::size_t trainable_params = 0;
  std::size_t total_params = 0;
  std::optional<double> alpha;
  std::string filter;
  std::vector<std::string> warnings;
  std::uint64_t fingerprint = 0;  // of the kept parameters
};

void to_json(nlohmann::json& j, const AdaptationReport& r);
void from_json(const nlohmann::json& j, AdaptationReport& r);
void save_report(const AdaptationReport& r, const std::string& path);
AdaptationReport load_report(const std::string& path);
/// epoch,train_loss,gt_loss,pseudo_loss,val_metric,lr
void write_metrics_csv(const AdaptationReport& r, const std::string& path);

/// Validation metric of a model (higher is better). Only this callback sees
/// validation data.
using Validator = std::function<double(const VisionLanguageModel&)>;
/// Batches of one epoch.
using EpochPlan = std::function<std::vector<MixedBatch>(int epoch)>;

/// Shuffled single-source batches of size min(batch, n); the last batch of a
/// pass may be smaller. Passes repeat with fresh shuffles until the epoch has
/// at least `min_steps` batches.
EpochPlan supervised_plan(std::size_t n, int batch, std::uint64_t seed, int min_steps = 0);

/// Loss of one batch: alpha * mean-NLL(gt) + (1 - alpha) * mean-NLL(pseudo).
/// An empty side is allowed only when its weight is zero.
struct CombinedLoss {
  Tensor total;
  double gt = 0.0;
  double pseudo = 0.0;
};
CombinedLoss combined_loss(const VisionLanguageModel& model, std::span<const Example* const> gt,
                           std::span<const double> gt_jitter, std::span<const Example* const> pseudo,
                           std::span<const double> pseudo_jitter, double alpha);

/// Shared optimisation loop: AdamW with global-norm clipping and step decay,
/// one validation per epoch, best epoch restored into `model` at the end.
AdaptationReport run_training(VisionLanguageModel& model, const std::vector<Example>& gt,
                              const std::vector<Example>& pseudo, const EpochPlan& plan, double alpha,
                              const TrainConfig& cfg, const Validator& validate, std::string method);

}  // namespace fewvlm
