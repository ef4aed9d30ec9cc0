// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fewvlm/decoding/decoding.hpp"
#include "fewvlm/model/model.hpp"
#include "fewvlm/scorer/scorer.hpp"
#include "fewvlm/tasks/dataset.hpp"

namespace fewvlm {

enum class LabelSource { kBeam, kClosedSet, kIclQa };

std::string source_name(LabelSource s);
LabelSource parse_source(const std::string& s);

struct PseudoLabel {
  std::uint64_t image_id = 0;
  TaskKind task = TaskKind::kCaption;
  /// Training-format sequence: BOS ... EOS (a force-finished beam keeps its
  /// tokens without EOS; see to_samples).
  std::vector<int> tokens;
  double log_likelihood = 0.0;
  std::optional<double> contrastive_score;
  LabelSource source = LabelSource::kBeam;
  int rank = 0;  // beam rank for kBeam, 0 otherwise
};

struct LabelResult {
  std::vector<PseudoLabel> labels;
  std::size_t dropped = 0;
  std::vector<std::string> warnings;
};

/// All beam candidates (up to `beam.beam_width`) per image, decoded from BOS.
LabelResult label_captions(const VisionLanguageModel& model, const std::vector<PoolImage>& pool,
                           const BeamConfig& beam, int jobs = 1);

/// The closed-set winner per image.
LabelResult label_classes(const VisionLanguageModel& model, const std::vector<PoolImage>& pool,
                          const std::vector<std::vector<int>>& class_texts, int jobs = 1);

struct ParsedQa {
  std::vector<int> question;  // words between the cue and the first Answer:
  std::vector<int> answer;    // words after it, stop token removed
};

/// Splits "[Question:] q Answer: a [SEP|EOS]" at the first Answer:. Fails on
/// an empty span, a nested Question:/Answer: or a missing stop token.
std::optional<ParsedQa> parse_qa(std::span<const int> generated, bool require_stop = true);

/// Prompts with `shots` RICES-selected supports and the "Question:" cue (no
/// supports when shots = 0), keeps the top beam per image and parses it.
/// log_likelihood is the generation's score under its prompt.
LabelResult label_vqa(const VisionLanguageModel& model, const std::vector<PoolImage>& pool,
                      const std::vector<Sample>& supports, int shots, const BeamConfig& beam, int jobs = 1);

enum class FilterKind { kNone, kContrastiveTopFrac, kLikelihoodTopFrac, kContrastiveThreshold };

struct FilterSpec {
  FilterKind kind = FilterKind::kNone;
  std::optional<double> fraction;
  std::optional<double> threshold;

  static FilterSpec none() { return {}; }
  static FilterSpec contrastive_topfrac(double f) { return {FilterKind::kContrastiveTopFrac, f, std::nullopt}; }
  static FilterSpec likelihood_topfrac(double f) { return {FilterKind::kLikelihoodTopFrac, f, std::nullopt}; }
  static FilterSpec contrastive_threshold(double t) { return {FilterKind::kContrastiveThreshold, std::nullopt, t}; }

  /// Throws std::invalid_argument unless exactly the matching field is set.
  void validate() const;
  std::string describe() const;
};

std::string filter_kind_name(FilterKind k);
FilterKind parse_filter_kind(const std::string& s);

/// Fills contrastive_score for every label from the scorer.
void attach_contrastive_scores(std::vector<PseudoLabel>& labels, const std::vector<PoolImage>& pool,
                               const DualEncoder& scorer);

/// Per image keeps the best candidate (by similarity for the contrastive
/// kinds, by likelihood otherwise), then keeps the top ceil(fraction * images)
/// or those above the threshold. Output is sorted by image id.
std::vector<PseudoLabel> filter(const std::vector<PseudoLabel>& labels, const FilterSpec& spec);

/// Pseudo-labels as training samples (images looked up in the pool; EOS
/// appended when a force-finished label lacks it).
std::vector<Sample> to_samples(const std::vector<PseudoLabel>& labels, const std::vector<PoolImage>& pool);

void write_labels(const std::string& path, const std::vector<PseudoLabel>& labels);
std::vector<PseudoLabel> read_labels(const std::string& path);

}  // namespace fewvlm
