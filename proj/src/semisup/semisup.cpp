// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/semisup/semisup.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "fewvlm/core/rng.hpp"

namespace fewvlm {

std::string composition_name(Composition c) { return c == Composition::kEqual ? "equal" : "proportional"; }

Composition parse_composition(const std::string& s) {
  if (s == "equal") return Composition::kEqual;
  if (s == "proportional") return Composition::kProportional;
  throw std::invalid_argument("unknown composition policy '" + s + "'");
}

void SemiSupConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("semisup: alpha must lie in [0, 1]");
  if (batch < 2) throw std::invalid_argument("semisup: batch must be >= 2 to hold both sources");
  if (epochs < 1) throw std::invalid_argument("semisup: epochs must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("semisup: lr must be positive");
}

std::pair<int, int> batch_composition(Composition policy, int batch, std::size_t n_gt, std::size_t n_pseudo) {
  if (batch < 2) throw std::invalid_argument("batch composition: batch must be >= 2");
  if (n_gt == 0 || n_pseudo == 0) throw std::invalid_argument("batch composition: both sources must be nonempty");
  int gt = 0;
  if (policy == Composition::kEqual) {
    gt = (batch + 1) / 2;
  } else {
    const double share = static_cast<double>(n_gt) / static_cast<double>(n_gt + n_pseudo);
    gt = static_cast<int>(std::lround(share * batch));
    gt = std::clamp(gt, 1, batch - 1);
  }
  return {gt, batch - gt};
}

void MixedBatchStream::Source::reshuffle() {
  order.resize(size);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, cycles++));
  rng.shuffle(order);
  cursor = 0;
}

std::size_t MixedBatchStream::Source::next() {
  if (cursor == order.size()) reshuffle();
  return order[cursor++];
}

MixedBatchStream::MixedBatchStream(std::size_t n_gt, std::size_t n_pseudo, Composition policy, int batch,
                                   std::uint64_t seed, int min_steps) {
  if (min_steps < 0) throw std::invalid_argument("MixedBatchStream: min_steps must be >= 0");
  std::tie(per_gt_, per_ps_) = batch_composition(policy, batch, n_gt, n_pseudo);
  min_steps_ = static_cast<std::size_t>(min_steps);
  gt_.size = n_gt;
  gt_.seed = derive_seed(seed, tag_of("gt-stream"));
  ps_.size = n_pseudo;
  ps_.seed = derive_seed(seed, tag_of("pseudo-stream"));
}

std::vector<MixedBatch> MixedBatchStream::epoch(int /*index*/) {
  gt_.reshuffle();
  ps_.reshuffle();
  auto steps_for = [](std::size_t n, int per) { return (n + static_cast<std::size_t>(per) - 1) / static_cast<std::size_t>(per); };
  const std::size_t steps = std::max({steps_for(gt_.size, per_gt_), steps_for(ps_.size, per_ps_), min_steps_});
  std::vector<MixedBatch> out(steps);
  for (auto& mb : out) {
    for (int i = 0; i < per_gt_; ++i) mb.gt.push_back(gt_.next());
    for (int i = 0; i < per_ps_; ++i) mb.pseudo.push_back(ps_.next());
  }
  return out;
}

AdaptationReport train_semisup(VisionLanguageModel& model, const std::vector<Sample>& gt,
                               const std::vector<Sample>& pseudo, const std::vector<Sample>& val,
                               const SemiSupConfig& cfg, const AdaptConfig& run) {
  cfg.validate();
  if (gt.empty()) throw std::invalid_argument("train_semisup: ground-truth set is empty");
  if (val.empty()) throw std::invalid_argument("train_semisup: validation set is empty");
  model.set_partition(PartitionMode::kFinetune);
  TrainConfig tc = run.train;
  tc.lr = cfg.lr;
  tc.epochs = cfg.epochs;
  tc.batch = cfg.batch;
  tc.seed = cfg.seed;
  const TaskKind task = gt.front().task;
  const auto gt_ex = examples_of(gt);
  const auto validate = task_validator(val, task, run.beam, run.jobs);

  AdaptationReport r;
  if (cfg.alpha == 1.0 || pseudo.empty()) {
    // Pseudo-labels carry no weight: the run is plain supervised training.
    r = run_training(model, gt_ex, {}, supervised_plan(gt_ex.size(), tc.batch, tc.seed, tc.min_steps_per_epoch), 1.0, tc, validate,
                     "semisup");
    if (pseudo.empty()) r.warnings.push_back("train_semisup: no pseudo-labels, ran supervised fine-tuning");
  } else {
    const auto ps_ex = examples_of(pseudo);
    auto stream = std::make_shared<MixedBatchStream>(gt_ex.size(), ps_ex.size(), cfg.composition, cfg.batch, cfg.seed,
                                                     tc.min_steps_per_epoch);
    EpochPlan plan = [stream](int e) { return stream->epoch(e); };
    r = run_training(model, gt_ex, ps_ex, plan, cfg.alpha, tc, validate, "semisup");
  }
  r.alpha = cfg.alpha;
  if (!run.checkpoint_path.empty()) persist_adaptation(model, r, run.checkpoint_path);
  return r;
}

}  // namespace fewvlm
