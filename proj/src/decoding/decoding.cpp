// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/decoding/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "fewvlm/tasks/vocab.hpp"

namespace fewvlm {

namespace {

class VlmState final : public SequenceState {
 public:
  explicit VlmState(IncrementalDecoder dec) : dec_(std::move(dec)) {}
  std::vector<double> push(int token, int image) override { return dec_.push(token, image); }
  std::unique_ptr<SequenceState> fork() const override { return std::make_unique<VlmState>(dec_); }

 private:
  IncrementalDecoder dec_;
};

}  // namespace

std::unique_ptr<SequenceState> VlmSequenceModel::begin(std::span<const Image> images) const {
  NoGradGuard guard;
  std::vector<Tensor> visuals;
  visuals.reserve(images.size());
  for (const auto& img : images) visuals.push_back(model_->visual_tokens(img));
  return std::make_unique<VlmState>(model_->start_decoding(std::move(visuals)));
}

DecodeInput DecodeInput::single(const Image& image, std::vector<int> prefix) {
  DecodeInput in;
  in.images = {image};
  in.prefix_images.assign(prefix.size(), 0);
  in.prefix = std::move(prefix);
  return in;
}

void DecodeInput::validate() const {
  if (prefix.empty() || prefix.front() != tok::kBos) throw DecodeError("decode: prefix must start with BOS");
  if (prefix_images.size() != prefix.size()) throw DecodeError("decode: prefix_images must align with prefix");
  const int n = static_cast<int>(images.size());
  if (query_image < 0 || query_image >= n) throw DecodeError("decode: query image slot out of range");
  for (int s : prefix_images)
    if (s < 0 || s >= n) throw DecodeError("decode: prefix image slot out of range");
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

namespace {

struct Primed {
  std::unique_ptr<SequenceState> state;
  std::vector<double> logp;
};

Primed prime(const SequenceModel& model, const DecodeInput& input) {
  input.validate();
  if (static_cast<int>(input.prefix.size()) > model.max_length())
    throw DecodeError("decode: prefix of " + std::to_string(input.prefix.size()) +
                      " tokens exceeds the context limit of " + std::to_string(model.max_length()));
  Primed p{model.begin(input.images), {}};
  std::vector<double> logits;
  for (std::size_t i = 0; i < input.prefix.size(); ++i) logits = p.state->push(input.prefix[i], input.prefix_images[i]);
  p.logp = log_softmax(logits);
  return p;
}

struct Hyp {
  std::vector<int> generated;
  double ll = 0.0;
  std::unique_ptr<SequenceState> state;
  std::vector<double> logp;
};

}  // namespace

std::vector<ScoredCandidate> beam_search(const SequenceModel& model, const DecodeInput& input, const BeamConfig& cfg) {
  if (cfg.beam_width < 1) throw DecodeError("beam_search: beam_width must be >= 1");
  if (cfg.max_len < 1) throw DecodeError("beam_search: max_len must be >= 1");
  const int vocab = model.vocab_size();
  for (int t : cfg.stop_tokens)
    if (t < 0 || t >= vocab) throw DecodeError("beam_search: stop token outside vocabulary");
  auto is_stop = [&](int t) { return std::find(cfg.stop_tokens.begin(), cfg.stop_tokens.end(), t) != cfg.stop_tokens.end(); };
  const std::size_t width = static_cast<std::size_t>(cfg.beam_width);

  Primed p = prime(model, input);
  std::vector<Hyp> alive;
  alive.push_back({{}, 0.0, std::move(p.state), std::move(p.logp)});
  std::vector<ScoredCandidate> done;

  auto retire = [&](std::vector<int> gen, double ll, bool finished) {
    ScoredCandidate c;
    c.tokens = input.prefix;
    c.tokens.insert(c.tokens.end(), gen.begin(), gen.end());
    c.prefix_length = input.prefix.size();
    c.log_likelihood = ll;
    c.finished = finished;
    c.truncated = !finished;
    done.push_back(std::move(c));
  };
  auto order = [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.log_likelihood != b.log_likelihood) return a.log_likelihood > b.log_likelihood;
    return a.tokens < b.tokens;
  };

  for (int step = 0; step < cfg.max_len && !alive.empty(); ++step) {
    // (score, token, parent)
    std::vector<std::tuple<double, int, std::size_t>> cands;
    cands.reserve(alive.size() * static_cast<std::size_t>(vocab));
    for (std::size_t h = 0; h < alive.size(); ++h)
      for (int v = 0; v < vocab; ++v) cands.emplace_back(alive[h].ll + alive[h].logp[static_cast<std::size_t>(v)], v, h);
    const std::size_t keep = std::min(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const auto& a, const auto& b) {
                        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
                        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
                        return std::get<2>(a) < std::get<2>(b);
                      });
    const bool last_step = step + 1 == cfg.max_len;
    const std::size_t position = input.prefix.size() + static_cast<std::size_t>(step);
    const bool context_full = static_cast<int>(position) >= model.max_length();
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto [score, v, h] = cands[i];
      std::vector<int> gen = alive[h].generated;
      gen.push_back(v);
      if (is_stop(v)) {
        retire(std::move(gen), score, true);
      } else if (last_step || context_full) {
        retire(std::move(gen), score, false);
      } else {
        Hyp n;
        n.generated = std::move(gen);
        n.ll = score;
        n.state = alive[h].state->fork();
        n.logp = log_softmax(n.state->push(v, input.query_image));
        next.push_back(std::move(n));
      }
    }
    alive = std::move(next);
    // Extensions never raise a score, so once `width` finished results beat
    // every live hypothesis the search can stop.
    if (done.size() >= width && !alive.empty()) {
      std::sort(done.begin(), done.end(), order);
      double best_alive = -std::numeric_limits<double>::infinity();
      for (const auto& a : alive) best_alive = std::max(best_alive, a.ll);
      if (best_alive <= done[width - 1].log_likelihood) break;
    }
  }
  std::sort(done.begin(), done.end(), order);
  if (done.size() > width) done.resize(width);
  for (std::size_t i = 0; i < done.size(); ++i) done[i].rank = static_cast<int>(i);
  return done;
}

std::vector<ScoredCandidate> beam_search(const SequenceModel& model, const Image& image, std::vector<int> prefix,
                                         int beam_width, int max_len) {
  BeamConfig cfg;
  cfg.beam_width = beam_width;
  cfg.max_len = max_len;
  return beam_search(model, DecodeInput::single(image, std::move(prefix)), cfg);
}

namespace {

double score_from(SequenceState& state, std::vector<double> logp, std::span<const int> continuation, int image,
                  int vocab) {
  double total = 0.0;
  for (std::size_t i = 0; i < continuation.size(); ++i) {
    const int t = continuation[i];
    if (t < 0 || t >= vocab) throw DecodeError("score: token id outside vocabulary");
    total += logp[static_cast<std::size_t>(t)];
    if (i + 1 < continuation.size()) logp = log_softmax(state.push(t, image));
  }
  return total;
}

}  // namespace

double score_continuation(const SequenceModel& model, const DecodeInput& input, std::span<const int> continuation) {
  if (input.prefix.size() + continuation.size() > static_cast<std::size_t>(model.max_length()) + 1)
    throw DecodeError("score: sequence exceeds the context limit");
  Primed p = prime(model, input);
  return score_from(*p.state, std::move(p.logp), continuation, input.query_image, model.vocab_size());
}

double score_sequence(const SequenceModel& model, const Image& image, std::span<const int> tokens) {
  if (tokens.size() < 2 || tokens.front() != tok::kBos) throw DecodeError("score_sequence: tokens must start with BOS");
  return score_continuation(model, DecodeInput::single(image, {tok::kBos}), tokens.subspan(1));
}

ClassifyResult classify_continuations(const SequenceModel& model, const DecodeInput& input,
                                      const std::vector<std::vector<int>>& continuations) {
  if (continuations.empty()) throw DecodeError("classify: need at least one class");
  Primed p = prime(model, input);
  ClassifyResult r;
  for (const auto& c : continuations) {
    if (c.empty()) throw DecodeError("classify: empty class text");
    auto state = p.state->fork();
    r.log_likelihoods.push_back(score_from(*state, p.logp, c, input.query_image, model.vocab_size()));
  }
  for (std::size_t i = 1; i < r.log_likelihoods.size(); ++i)
    if (r.log_likelihoods[i] > r.log_likelihoods[static_cast<std::size_t>(r.index)]) r.index = static_cast<int>(i);
  return r;
}

ClassifyResult classify_closed_set(const SequenceModel& model, const Image& image,
                                   const std::vector<std::vector<int>>& class_texts) {
  std::vector<std::vector<int>> conts;
  for (const auto& t : class_texts) {
    if (t.size() < 2 || t.front() != tok::kBos) throw DecodeError("classify: class text must start with BOS");
    conts.emplace_back(t.begin() + 1, t.end());
  }
  return classify_continuations(model, DecodeInput::single(image, {tok::kBos}), conts);
}

}  // namespace fewvlm
