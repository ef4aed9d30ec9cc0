// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "fewvlm/tasks/vocab.hpp"

namespace fewvlm {

bool exact_match(std::span<const int> prediction, std::span<const int> reference) {
  return std::equal(prediction.begin(), prediction.end(), reference.begin(), reference.end());
}

double token_f1(std::span<const int> prediction, std::span<const int> reference) {
  if (prediction.empty() && reference.empty()) return 1.0;
  if (prediction.empty() || reference.empty()) return 0.0;
  std::map<int, int> ref;
  for (int t : reference) ++ref[t];
  int overlap = 0;
  for (int t : prediction) {
    auto it = ref.find(t);
    if (it != ref.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(prediction.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

namespace {

double clipped_precision(std::span<const int> pred, std::span<const int> ref, std::size_t n) {
  if (pred.size() < n) return ref.size() < n ? 1.0 : 0.0;
  std::map<std::vector<int>, int> ref_counts;
  for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[std::vector<int>(ref.begin() + i, ref.begin() + i + n)];
  int hit = 0;
  const std::size_t total = pred.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) {
    auto it = ref_counts.find(std::vector<int>(pred.begin() + i, pred.begin() + i + n));
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++hit;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

double ngram_score(std::span<const int> prediction, std::span<const int> reference) {
  if (prediction.empty()) return reference.empty() ? 1.0 : 0.0;
  const double p1 = clipped_precision(prediction, reference, 1);
  const double p2 = clipped_precision(prediction, reference, 2);
  return std::sqrt(p1 * p2);
}

std::vector<int> content_words(std::span<const int> tokens) {
  std::vector<int> out;
  for (int t : tokens)
    if (t != tok::kBos && t != tok::kEos && t != tok::kSep && t != tok::kPad) out.push_back(t);
  return out;
}

MeanSd mean_sd(std::span<const double> values) {
  MeanSd r;
  if (values.empty()) return r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  if (values.size() < 2) return r;
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return r;
}

}  // namespace fewvlm
