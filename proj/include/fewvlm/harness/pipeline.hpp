// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fewvlm/eval/evaluate.hpp"
#include "fewvlm/eval/metrics.hpp"
#include "fewvlm/harness/config.hpp"
#include "fewvlm/model/model.hpp"
#include "fewvlm/scorer/scorer.hpp"
#include "fewvlm/selflabel/selflabel.hpp"

namespace fewvlm {

struct RunOptions {
  std::string out_dir;  // reports; defaults to the config's work_dir
  bool resume = false;  // reuse persisted stage artifacts
};

struct PseudoStats {
  std::size_t generated = 0;  // candidates produced by the labeller
  std::size_t images = 0;     // pool images
  std::size_t kept = 0;
  std::size_t dropped = 0;    // unparseable generations
  double kept_fraction = 0.0; // kept / images
  double mean_log_likelihood = 0.0;
  std::optional<double> mean_contrastive;
  double mean_length = 0.0;   // words per kept label
};

struct StageMetrics {
  TaskMetrics val;
  std::optional<TaskMetrics> test;
};

struct SeedReport {
  std::uint64_t seed = 0;
  std::optional<StageMetrics> zero_shot;
  std::optional<StageMetrics> stage1;
  std::optional<StageMetrics> stage3;
  std::optional<PseudoStats> pseudo;
  std::string failed_stage;  // empty when every stage finished
  std::string error;
  std::vector<std::string> warnings;
};

struct MetricsReport {
  static constexpr int kVersion = 1;
  ExperimentConfig config;
  std::vector<SeedReport> seeds;
  /// Mean and sd of the primary validation metric over seeds that reached the stage.
  std::optional<MeanSd> zero_shot, stage1, stage3;
  bool complete() const;
  /// Recomputes the summaries from the per-seed entries.
  void summarize();
};

void to_json(nlohmann::json& j, const TaskMetrics& m);
void from_json(const nlohmann::json& j, TaskMetrics& m);
void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);
void write_report(const MetricsReport& r, const std::string& path);
MetricsReport read_report(const std::string& path);

/// The seed's data split (the test split only when evaluate_test is set).
SplitSpec experiment_split(const ExperimentConfig& cfg, std::uint64_t seed);

/// Throws ConfigError for labeller/method/task combinations without a labeller.
void check_labeller(const ExperimentConfig& cfg);

/// Raw pseudo-labels from the configured labeller (`stage1` may be null for the icl labeller).
LabelResult generate_labels(const ExperimentConfig& cfg, const VisionLanguageModel& base,
                            const VisionLanguageModel* stage1, const SplitSpec& split);

/// Loads `cfg.base_model`, or the cached base in the work dir, or pretrains it.
VisionLanguageModel obtain_base_model(const ExperimentConfig& cfg, bool resume);
/// Loads `cfg.scorer_model`, or the cached scorer, or trains one on generated pairs.
DualEncoder obtain_scorer(const ExperimentConfig& cfg, const VisionLanguageModel& base, bool resume);
/// Image/caption pairs for the scorer, drawn from both caption styles.
std::vector<ContrastivePair> scorer_pairs(int count, std::uint64_t seed);

/// Stage 1 for one seed: the adapted model (θ₀ itself for icl) and its validation metrics.
struct Stage1Result {
  std::optional<VisionLanguageModel> model;  // empty for icl
  StageMetrics metrics;
};
Stage1Result run_stage1(const ExperimentConfig& cfg, const VisionLanguageModel& base, std::uint64_t seed,
                        bool resume);

/// Runs zero-shot → stage 1 → labelling → filter → stage 3 → evaluation for
/// every seed and writes `<out>/report.json`. Artifacts are content-addressed
/// under `<work_dir>/seed_<s>/`. A failing stage is recorded in the report
/// and the remaining stages of that seed are skipped.
MetricsReport run_pipeline(const ExperimentConfig& cfg, const RunOptions& opt);

extern const std::vector<double> kSweepAlphas;

/// One report per alpha under `<out>/alpha_<a>/report.json`, plus `<out>/sweep_alpha.csv`.
std::vector<MetricsReport> sweep_alpha(const ExperimentConfig& cfg, const std::vector<double>& alphas,
                                       const RunOptions& opt);

/// One report per filter under `<out>/filter_<i>/report.json`, plus `<out>/sweep_filter.csv`.
std::vector<MetricsReport> sweep_filter(const ExperimentConfig& cfg, const std::vector<FilterSpec>& filters,
                                        const RunOptions& opt);
std::vector<FilterSpec> default_filter_grid();

struct AdaptationCell {
  AdaptMethod method = AdaptMethod::kFinetune;
  int n = 0;
  std::vector<double> per_seed;
  MeanSd summary;
  bool base_unchanged = true;
};

/// Stage-1 metric for {finetune, adapter, icl} × `n_grid`; writes
/// `<out>/compare_adaptation.csv`.
std::vector<AdaptationCell> compare_adaptation(const ExperimentConfig& cfg, const std::vector<int>& n_grid,
                                               const RunOptions& opt);

}  // namespace fewvlm
