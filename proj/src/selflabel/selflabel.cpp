// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/selflabel/selflabel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "fewvlm/adapt/prompt.hpp"
#include "fewvlm/core/parallel.hpp"
#include "fewvlm/tasks/scene.hpp"
#include "fewvlm/tasks/vocab.hpp"

namespace fewvlm {

std::string source_name(LabelSource s) {
  switch (s) {
    case LabelSource::kBeam: return "beam";
    case LabelSource::kClosedSet: return "closed_set";
    case LabelSource::kIclQa: return "icl_qa";
  }
  return "?";
}

LabelSource parse_source(const std::string& s) {
  if (s == "beam") return LabelSource::kBeam;
  if (s == "closed_set") return LabelSource::kClosedSet;
  if (s == "icl_qa") return LabelSource::kIclQa;
  throw std::invalid_argument("unknown label source '" + s + "'");
}

namespace {

LabelResult flatten(std::vector<std::vector<PseudoLabel>> per_image, std::size_t dropped) {
  LabelResult r;
  for (auto& v : per_image)
    for (auto& l : v) r.labels.push_back(std::move(l));
  r.dropped = dropped;
  return r;
}

}  // namespace

LabelResult label_captions(const VisionLanguageModel& model, const std::vector<PoolImage>& pool,
                           const BeamConfig& beam, int jobs) {
  if (pool.empty()) throw std::invalid_argument("label_captions: empty pool");
  const VlmSequenceModel seq(model);
  std::vector<std::vector<PseudoLabel>> out(pool.size());
  parallel_for(pool.size(), jobs, [&](std::size_t i) {
    for (const auto& c : beam_search(seq, DecodeInput::single(pool[i].image, {tok::kBos}), beam)) {
      PseudoLabel l;
      l.image_id = pool[i].id;
      l.task = TaskKind::kCaption;
      l.tokens = c.tokens;
      l.log_likelihood = c.log_likelihood;
      l.source = LabelSource::kBeam;
      l.rank = c.rank;
      out[i].push_back(std::move(l));
    }
  });
  return flatten(std::move(out), 0);
}

LabelResult label_classes(const VisionLanguageModel& model, const std::vector<PoolImage>& pool,
                          const std::vector<std::vector<int>>& class_texts, int jobs) {
  if (pool.empty()) throw std::invalid_argument("label_classes: empty pool");
  const VlmSequenceModel seq(model);
  std::vector<std::vector<PseudoLabel>> out(pool.size());
  parallel_for(pool.size(), jobs, [&](std::size_t i) {
    const auto r = classify_closed_set(seq, pool[i].image, class_texts);
    PseudoLabel l;
    l.image_id = pool[i].id;
    l.task = TaskKind::kClassify;
    l.tokens = class_texts[static_cast<std::size_t>(r.index)];
    l.log_likelihood = r.log_likelihoods[static_cast<std::size_t>(r.index)];
    l.source = LabelSource::kClosedSet;
    out[i].push_back(std::move(l));
  });
  return flatten(std::move(out), 0);
}

std::optional<ParsedQa> parse_qa(std::span<const int> generated, bool require_stop) {
  std::vector<int> g(generated.begin(), generated.end());
  if (!g.empty() && g.front() == tok::kQuestion) g.erase(g.begin());
  const bool stopped = !g.empty() && (g.back() == tok::kSep || g.back() == tok::kEos);
  if (stopped)
    g.pop_back();
  else if (require_stop)
    return std::nullopt;
  const auto a = std::find(g.begin(), g.end(), tok::kAnswer);
  if (a == g.end()) return std::nullopt;
  ParsedQa qa{{g.begin(), a}, {a + 1, g.end()}};
  if (qa.question.empty() || qa.answer.empty()) return std::nullopt;
  auto clean = [](const std::vector<int>& span) {
    return std::none_of(span.begin(), span.end(), [](int t) {
      return t == tok::kQuestion || t == tok::kAnswer || t == tok::kOutput || t == tok::kSep || t == tok::kBos ||
             t == tok::kEos || t == tok::kPad;
    });
  };
  if (!clean(qa.question) || !clean(qa.answer)) return std::nullopt;
  return qa;
}

LabelResult label_vqa(const VisionLanguageModel& model, const std::vector<PoolImage>& pool,
                      const std::vector<Sample>& supports, int shots, const BeamConfig& beam, int jobs) {
  if (pool.empty()) throw std::invalid_argument("label_vqa: empty pool");
  if (shots < 0) throw std::invalid_argument("label_vqa: shots must be >= 0");
  if (static_cast<std::size_t>(shots) > supports.size())
    throw std::invalid_argument("label_vqa: " + std::to_string(shots) + " shots but only " +
                                std::to_string(supports.size()) + " supports");
  const VlmSequenceModel seq(model);
  const RicesIndex index(model, supports);
  std::vector<std::vector<PseudoLabel>> out(pool.size());
  parallel_for(pool.size(), jobs, [&](std::size_t i) {
    std::vector<Sample> chosen;
    if (shots > 0) chosen = index.select(pool[i].image, static_cast<std::size_t>(shots));
    const auto cands = icl_infer(seq, build_prompt(chosen, pool[i].image, TaskKind::kVqa), beam);
    if (cands.empty()) return;
    const auto parsed = parse_qa(cands.front().generated());
    if (!parsed) return;
    PseudoLabel l;
    l.image_id = pool[i].id;
    l.task = TaskKind::kVqa;
    l.tokens = {tok::kBos, tok::kQuestion};
    l.tokens.insert(l.tokens.end(), parsed->question.begin(), parsed->question.end());
    l.tokens.push_back(tok::kAnswer);
    l.tokens.insert(l.tokens.end(), parsed->answer.begin(), parsed->answer.end());
    l.tokens.push_back(tok::kEos);
    l.log_likelihood = cands.front().log_likelihood;
    l.source = LabelSource::kIclQa;
    out[i].push_back(std::move(l));
  });
  std::size_t dropped = 0;
  for (const auto& v : out) dropped += v.empty() ? 1 : 0;
  LabelResult r = flatten(std::move(out), dropped);
  if (2 * dropped > pool.size())
    r.warnings.push_back("label_vqa: " + std::to_string(dropped) + " of " + std::to_string(pool.size()) +
                         " generations could not be parsed");
  return r;
}

std::string filter_kind_name(FilterKind k) {
  switch (k) {
    case FilterKind::kNone: return "none";
    case FilterKind::kContrastiveTopFrac: return "contrastive_topfrac";
    case FilterKind::kLikelihoodTopFrac: return "likelihood_topfrac";
    case FilterKind::kContrastiveThreshold: return "contrastive_threshold";
  }
  return "?";
}

FilterKind parse_filter_kind(const std::string& s) {
  for (auto k : {FilterKind::kNone, FilterKind::kContrastiveTopFrac, FilterKind::kLikelihoodTopFrac,
                 FilterKind::kContrastiveThreshold})
    if (filter_kind_name(k) == s) return k;
  throw std::invalid_argument("unknown filter kind '" + s + "'");
}

void FilterSpec::validate() const {
  const bool wants_fraction = kind == FilterKind::kContrastiveTopFrac || kind == FilterKind::kLikelihoodTopFrac;
  const bool wants_threshold = kind == FilterKind::kContrastiveThreshold;
  if (fraction.has_value() != wants_fraction)
    throw std::invalid_argument("filter " + filter_kind_name(kind) + (wants_fraction ? " needs" : " takes no") +
                                " fraction");
  if (threshold.has_value() != wants_threshold)
    throw std::invalid_argument("filter " + filter_kind_name(kind) + (wants_threshold ? " needs" : " takes no") +
                                " threshold");
  if (fraction && !(*fraction > 0.0 && *fraction <= 1.0))
    throw std::invalid_argument("filter fraction must lie in (0, 1]");
  if (threshold && !std::isfinite(*threshold)) throw std::invalid_argument("filter threshold must be finite");
}

std::string FilterSpec::describe() const {
  std::ostringstream os;
  os << filter_kind_name(kind);
  if (fraction) os << ":" << *fraction;
  if (threshold) os << ":" << *threshold;
  return os.str();
}

void attach_contrastive_scores(std::vector<PseudoLabel>& labels, const std::vector<PoolImage>& pool,
                               const DualEncoder& scorer) {
  std::unordered_map<std::uint64_t, const PoolImage*> by_id;
  for (const auto& p : pool) by_id[p.id] = &p;
  for (auto& l : labels) {
    auto it = by_id.find(l.image_id);
    if (it == by_id.end()) throw std::invalid_argument("scores: image " + std::to_string(l.image_id) + " not in pool");
    l.contrastive_score = scorer.similarity(it->second->image, l.tokens);
  }
}

std::vector<PseudoLabel> filter(const std::vector<PseudoLabel>& labels, const FilterSpec& spec) {
  spec.validate();
  const bool contrastive = spec.kind == FilterKind::kContrastiveTopFrac || spec.kind == FilterKind::kContrastiveThreshold;
  if (contrastive)
    for (const auto& l : labels)
      if (!l.contrastive_score)
        throw std::invalid_argument("filter " + filter_kind_name(spec.kind) + " needs contrastive scores (run the scorer)");
  auto key = [&](const PseudoLabel& l) { return contrastive ? *l.contrastive_score : l.log_likelihood; };

  // Pass 1: best candidate per image.
  std::map<std::uint64_t, const PseudoLabel*> best;
  for (const auto& l : labels) {
    auto [it, fresh] = best.emplace(l.image_id, &l);
    if (fresh) continue;
    const PseudoLabel& cur = *it->second;
    bool better = key(l) > key(cur);
    if (key(l) == key(cur)) {
      if (l.log_likelihood != cur.log_likelihood)
        better = l.log_likelihood > cur.log_likelihood;
      else
        better = l.rank < cur.rank;
    }
    if (better) it->second = &l;
  }
  std::vector<const PseudoLabel*> kept;
  for (const auto& [id, l] : best) kept.push_back(l);

  // Pass 2: selection across images.
  if (spec.kind == FilterKind::kContrastiveThreshold) {
    std::erase_if(kept, [&](const PseudoLabel* l) { return !(key(*l) > *spec.threshold); });
    if (kept.empty())
      throw std::invalid_argument("filter: no pseudo-label scores above " + std::to_string(*spec.threshold) +
                                  "; lower the threshold");
  } else if (spec.kind != FilterKind::kNone) {
    const auto n = static_cast<std::size_t>(std::ceil(*spec.fraction * static_cast<double>(kept.size()) - 1e-9));
    std::stable_sort(kept.begin(), kept.end(), [&](const PseudoLabel* a, const PseudoLabel* b) {
      if (key(*a) != key(*b)) return key(*a) > key(*b);
      return a->image_id < b->image_id;
    });
    kept.resize(std::min(n, kept.size()));
    std::sort(kept.begin(), kept.end(), [](const PseudoLabel* a, const PseudoLabel* b) { return a->image_id < b->image_id; });
  }
  std::vector<PseudoLabel> out;
  out.reserve(kept.size());
  for (const auto* l : kept) out.push_back(*l);
  return out;
}

std::vector<Sample> to_samples(const std::vector<PseudoLabel>& labels, const std::vector<PoolImage>& pool) {
  std::unordered_map<std::uint64_t, const PoolImage*> by_id;
  for (const auto& p : pool) by_id[p.id] = &p;
  std::vector<Sample> out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    auto it = by_id.find(l.image_id);
    if (it == by_id.end()) throw std::invalid_argument("to_samples: image " + std::to_string(l.image_id) + " not in pool");
    Sample s;
    s.id = l.image_id;
    s.scene = it->second->scene;
    s.image = it->second->image;
    s.task = l.task;
    s.tokens = l.tokens;
    if (s.tokens.empty() || s.tokens.back() != tok::kEos) s.tokens.push_back(tok::kEos);
    if (l.task == TaskKind::kClassify) {
      const auto words = Vocabulary::standard().detokenize(s.tokens);
      const auto& names = color_names();
      const auto c = std::find(names.begin(), names.end(), words);
      if (c == names.end()) throw std::invalid_argument("to_samples: '" + words + "' is not a class name");
      s.class_id = static_cast<int>(c - names.begin());
    }
    if (l.task == TaskKind::kVqa) {
      const auto parsed = parse_qa(std::span<const int>(s.tokens).subspan(1));
      s.question_type = parsed ? question_type_of(Vocabulary::standard().detokenize(parsed->question)).value_or(-1) : -1;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_labels(const std::string& path, const std::vector<PseudoLabel>& labels) {
  std::vector<const PseudoLabel*> sorted;
  for (const auto& l : labels) sorted.push_back(&l);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const PseudoLabel* a, const PseudoLabel* b) { return a->image_id < b->image_id; });
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto* l : sorted) {
    nlohmann::json j;
    j["image_id"] = l->image_id;
    j["task"] = task_name(l->task);
    j["text"] = Vocabulary::standard().detokenize(l->tokens);
    j["tokens"] = l->tokens;
    j["log_likelihood"] = l->log_likelihood;
    j["contrastive_score"] = l->contrastive_score ? nlohmann::json(*l->contrastive_score) : nlohmann::json(nullptr);
    j["source"] = source_name(l->source);
    j["rank"] = l->rank;
    out << j.dump() << '\n';
  }
}

std::vector<PseudoLabel> read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<PseudoLabel> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    PseudoLabel l;
    l.image_id = j.at("image_id").get<std::uint64_t>();
    l.task = parse_task(j.at("task").get<std::string>());
    l.tokens = j.at("tokens").get<std::vector<int>>();
    l.log_likelihood = j.at("log_likelihood").get<double>();
    if (!j.at("contrastive_score").is_null()) l.contrastive_score = j["contrastive_score"].get<double>();
    l.source = parse_source(j.at("source").get<std::string>());
    l.rank = j.at("rank").get<int>();
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace fewvlm
