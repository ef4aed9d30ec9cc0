// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fewvlm/adapt/adaptation.hpp"
#include "fewvlm/adapt/train.hpp"
#include "fewvlm/tasks/dataset.hpp"

namespace fewvlm {

enum class Composition { kEqual, kProportional };

std::string composition_name(Composition c);
Composition parse_composition(const std::string& s);

struct SemiSupConfig {
  double alpha = 0.1;
  int batch = 8;
  int epochs = 12;
  double lr = 1e-3;
  Composition composition = Composition::kEqual;
  std::uint64_t seed = 0;
  bool warm_start = false;  // start from the stage-1 model instead of the base model

  void validate() const;
};

/// (n_gt, n_pseudo) per batch. Equal: gt takes the extra slot of an odd
/// batch. Proportional: round(batch * n_gt_total / total), kept in [1, batch-1].
std::pair<int, int> batch_composition(Composition policy, int batch, std::size_t n_gt, std::size_t n_pseudo);

/// Deterministic stream of mixed batches. Each source is reshuffled at the
/// start of every epoch and whenever it runs out mid-epoch; an epoch is
/// long enough for both sources to be visited at least once.
class MixedBatchStream {
 public:
  /// An epoch is one pass over the larger source, extended (cycling both
  /// sources) to at least `min_steps` batches.
  MixedBatchStream(std::size_t n_gt, std::size_t n_pseudo, Composition policy, int batch, std::uint64_t seed,
                   int min_steps = 0);
  std::vector<MixedBatch> epoch(int index);
  int n_gt_per_batch() const { return per_gt_; }
  int n_pseudo_per_batch() const { return per_ps_; }

 private:
  struct Source {
    std::size_t size = 0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::uint64_t cycles = 0;
    void reshuffle();
    std::size_t next();
  };
  Source gt_, ps_;
  int per_gt_ = 0, per_ps_ = 0;
  std::size_t min_steps_ = 0;
};

/// Stage 3: trains `model` (a fresh copy of the base model, finetune
/// partition) on ground truth plus pseudo-labels with the combined loss.
/// alpha = 1 runs exactly the supervised finetune stream; an empty pseudo set
/// falls back to it with a warning.
AdaptationReport train_semisup(VisionLanguageModel& model, const std::vector<Sample>& gt,
                               const std::vector<Sample>& pseudo, const std::vector<Sample>& val,
                               const SemiSupConfig& cfg, const AdaptConfig& run);

}  // namespace fewvlm
