// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace fewvlm {

/// Word sequences here exclude BOS/EOS/SEP.
bool exact_match(std::span<const int> prediction, std::span<const int> reference);

/// Multiset-overlap F1 over words; 0 when either side is empty (1 when both are).
double token_f1(std::span<const int> prediction, std::span<const int> reference);

/// Geometric mean of clipped 1-gram and 2-gram precision. Orders the
/// prediction is too short to have count as precision 0 (1 when the
/// reference is equally short).
double ngram_score(std::span<const int> prediction, std::span<const int> reference);

/// Drops BOS, EOS, SEP and PAD.
std::vector<int> content_words(std::span<const int> tokens);

/// Mean and sample standard deviation (sd = 0 for fewer than two values).
struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};
MeanSd mean_sd(std::span<const double> values);

}  // namespace fewvlm
