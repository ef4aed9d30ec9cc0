// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "fewvlm/core/rng.hpp"
#include "fewvlm/selflabel/selflabel.hpp"

namespace fewvlm::testing {

/// Up to 1000 candidates over up to 120 images. Scores come from a coarse
/// grid so that equal keys are common.
inline std::vector<PseudoLabel> random_labels(Rng& rng) {
  std::vector<PseudoLabel> out;
  const std::size_t images = 1 + rng.below(120);
  for (std::size_t i = 0; i < images && out.size() < 1000; ++i) {
    const int k = 1 + static_cast<int>(rng.below(3));
    for (int r = 0; r < k; ++r) {
      PseudoLabel l;
      l.image_id = 1000 + 7 * i;
      l.tokens = {1, 7 + r, 2};
      l.rank = r;
      l.log_likelihood = -static_cast<double>(rng.below(12)) * 0.5;
      l.contrastive_score = static_cast<double>(rng.below(21)) * 0.1 - 1.0;
      out.push_back(l);
    }
  }
  rng.shuffle(out);
  return out;
}

/// Two-pass reference: per-image best by the filter key (likelihood, then
/// beam rank, on ties), then a full sort across images.
inline std::vector<PseudoLabel> filter_oracle(const std::vector<PseudoLabel>& labels, const FilterSpec& spec) {
  const bool contrastive = spec.kind == FilterKind::kContrastiveTopFrac || spec.kind == FilterKind::kContrastiveThreshold;
  auto key = [&](const PseudoLabel& l) { return contrastive ? *l.contrastive_score : l.log_likelihood; };
  std::map<std::uint64_t, std::vector<PseudoLabel>> groups;
  for (const auto& l : labels) groups[l.image_id].push_back(l);
  std::vector<PseudoLabel> best;
  for (auto& [id, g] : groups) {
    std::sort(g.begin(), g.end(), [&](const PseudoLabel& a, const PseudoLabel& b) {
      if (key(a) != key(b)) return key(a) > key(b);
      if (a.log_likelihood != b.log_likelihood) return a.log_likelihood > b.log_likelihood;
      return a.rank < b.rank;
    });
    best.push_back(g.front());
  }
  std::vector<PseudoLabel> out;
  if (spec.kind == FilterKind::kNone) {
    out = best;
  } else if (spec.kind == FilterKind::kContrastiveThreshold) {
    for (const auto& l : best)
      if (key(l) > *spec.threshold) out.push_back(l);
  } else {
    std::sort(best.begin(), best.end(), [&](const PseudoLabel& a, const PseudoLabel& b) {
      if (key(a) != key(b)) return key(a) > key(b);
      return a.image_id < b.image_id;
    });
    std::size_t n = 0;
    while (static_cast<double>(n) < *spec.fraction * static_cast<double>(best.size()) - 1e-9) ++n;
    out.assign(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(std::min(n, best.size())));
  }
  std::sort(out.begin(), out.end(), [](const PseudoLabel& a, const PseudoLabel& b) { return a.image_id < b.image_id; });
  return out;
}

inline bool same_labels(const std::vector<PseudoLabel>& a, const std::vector<PseudoLabel>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].image_id != b[i].image_id || a[i].tokens != b[i].tokens || a[i].rank != b[i].rank ||
        a[i].log_likelihood != b[i].log_likelihood || a[i].contrastive_score != b[i].contrastive_score)
      return false;
  return true;
}

inline const std::vector<double>& oracle_fractions() {
  static const std::vector<double> f{0.05, 0.1, 0.25, 1.0 / 3.0, 0.5, 2.0 / 3.0, 0.9, 1.0};
  return f;
}

}  // namespace fewvlm::testing
