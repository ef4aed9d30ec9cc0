// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/harness/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "fewvlm/tasks/vocab.hpp"

namespace fewvlm {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  std::set<std::string> k(known.begin(), known.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!k.count(it.key())) throw ConfigError(std::string(what) + ": unknown field '" + it.key() + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

std::string palette_name(Palette p) { return p == Palette::kInDistribution ? "in_distribution" : "shifted"; }
Palette parse_palette(const std::string& s) {
  if (s == "in_distribution") return Palette::kInDistribution;
  if (s == "shifted") return Palette::kShifted;
  throw ConfigError("unknown pool palette '" + s + "'");
}

std::string labeller_name(Labeller l) { return l == Labeller::kIcl ? "icl" : "stage1"; }
Labeller parse_labeller(const std::string& s) {
  if (s == "icl") return Labeller::kIcl;
  if (s == "stage1") return Labeller::kStage1;
  throw ConfigError("unknown labeller '" + s + "'");
}

}  // namespace

void to_json(json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},       {"epochs", c.epochs},
       {"batch", c.batch}, {"clip", c.clip},
       {"decay_period", c.decay_period}, {"decay_factor", c.decay_factor},
       {"weight_decay", c.weight_decay}, {"color_jitter", c.color_jitter},
       {"min_steps_per_epoch", c.min_steps_per_epoch},
       {"patience", c.patience},         {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j, {"lr", "epochs", "batch", "clip", "decay_period", "decay_factor", "weight_decay", "color_jitter",
                     "min_steps_per_epoch", "patience", "seed"},
                 "train");
  read(j, "lr", c.lr);
  read(j, "epochs", c.epochs);
  read(j, "batch", c.batch);
  read(j, "clip", c.clip);
  read(j, "decay_period", c.decay_period);
  read(j, "decay_factor", c.decay_factor);
  read(j, "weight_decay", c.weight_decay);
  read(j, "color_jitter", c.color_jitter);
  read(j, "min_steps_per_epoch", c.min_steps_per_epoch);
  read(j, "patience", c.patience);
  read(j, "seed", c.seed);
}

void to_json(json& j, const BeamConfig& c) {
  j = {{"beam_width", c.beam_width}, {"max_len", c.max_len}, {"stop_tokens", c.stop_tokens}};
}

void from_json(const json& j, BeamConfig& c) {
  reject_unknown(j, {"beam_width", "max_len", "stop_tokens"}, "beam");
  read(j, "beam_width", c.beam_width);
  read(j, "max_len", c.max_len);
  read(j, "stop_tokens", c.stop_tokens);
}

void to_json(json& j, const CorpusConfig& c) {
  j = {{"size", c.size},
       {"interleaved_fraction", c.interleaved_fraction},
       {"qa_fraction", c.qa_fraction},
       {"qa_types", c.qa_types},
       {"seed", c.seed}};
}

void from_json(const json& j, CorpusConfig& c) {
  reject_unknown(j, {"size", "interleaved_fraction", "qa_fraction", "qa_types", "seed"}, "corpus");
  read(j, "size", c.size);
  read(j, "interleaved_fraction", c.interleaved_fraction);
  read(j, "qa_fraction", c.qa_fraction);
  read(j, "qa_types", c.qa_types);
  read(j, "seed", c.seed);
}

void to_json(json& j, const FilterSpec& c) {
  j = {{"kind", filter_kind_name(c.kind)},
       {"fraction", c.fraction ? json(*c.fraction) : json(nullptr)},
       {"threshold", c.threshold ? json(*c.threshold) : json(nullptr)}};
}

void from_json(const json& j, FilterSpec& c) {
  reject_unknown(j, {"kind", "fraction", "threshold"}, "filter");
  c = FilterSpec();
  try {
    c.kind = parse_filter_kind(j.at("kind").get<std::string>());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("filter.kind: ") + e.what());
  }
  if (j.contains("fraction") && !j["fraction"].is_null()) c.fraction = j["fraction"].get<double>();
  if (j.contains("threshold") && !j["threshold"].is_null()) c.threshold = j["threshold"].get<double>();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void to_json(json& j, const SemiSupConfig& c) {
  j = {{"alpha", c.alpha},
       {"batch", c.batch},
       {"epochs", c.epochs},
       {"lr", c.lr},
       {"composition", composition_name(c.composition)},
       {"seed", c.seed},
       {"warm_start", c.warm_start}};
}

void from_json(const json& j, SemiSupConfig& c) {
  reject_unknown(j, {"alpha", "batch", "epochs", "lr", "composition", "seed", "warm_start"}, "semisup");
  read(j, "alpha", c.alpha);
  read(j, "batch", c.batch);
  read(j, "epochs", c.epochs);
  read(j, "lr", c.lr);
  if (j.contains("composition")) {
    try {
      c.composition = parse_composition(j["composition"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  read(j, "seed", c.seed);
  read(j, "warm_start", c.warm_start);
}

void to_json(json& j, const ScorerConfig& c) {
  j = {{"d_embed", c.d_embed},
       {"d_text", c.d_text},
       {"init_temperature", c.init_temperature},
       {"init_seed", c.init_seed}};
}

void from_json(const json& j, ScorerConfig& c) {
  reject_unknown(j, {"d_embed", "d_text", "init_temperature", "init_seed"}, "scorer");
  read(j, "d_embed", c.d_embed);
  read(j, "d_text", c.d_text);
  read(j, "init_temperature", c.init_temperature);
  read(j, "init_seed", c.init_seed);
}

void to_json(json& j, const ContrastiveConfig& c) {
  j = {{"epochs", c.epochs}, {"lr", c.lr}, {"batch", c.batch}, {"seed", c.seed}};
}

void from_json(const json& j, ContrastiveConfig& c) {
  reject_unknown(j, {"epochs", "lr", "batch", "seed"}, "contrastive");
  read(j, "epochs", c.epochs);
  read(j, "lr", c.lr);
  read(j, "batch", c.batch);
  read(j, "seed", c.seed);
}

std::string method_name(AdaptMethod m) {
  switch (m) {
    case AdaptMethod::kFinetune: return "finetune";
    case AdaptMethod::kAdapter: return "adapter";
    case AdaptMethod::kIcl: return "icl";
  }
  return "?";
}

AdaptMethod parse_method(const std::string& s) {
  if (s == "finetune") return AdaptMethod::kFinetune;
  if (s == "adapter") return AdaptMethod::kAdapter;
  if (s == "icl") return AdaptMethod::kIcl;
  throw ConfigError("unknown adaptation method '" + s + "'");
}

void ExperimentConfig::validate() const {
  if (n < 1) throw ConfigError("n must be >= 1");
  if (o < n) throw ConfigError("o must be >= n");
  if (m < 1) throw ConfigError("m must be >= 1");
  if (pool_size < 1) throw ConfigError("pool_size must be >= 1");
  if (test_size < 0) throw ConfigError("test_size must be >= 0");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (shots < 0) throw ConfigError("shots must be >= 0");
  if (stage1.epochs < 1 || stage1.batch < 1 || !(stage1.lr > 0.0)) throw ConfigError("stage1: bad training settings");
  if (beam.beam_width < 1 || beam.max_len < 1) throw ConfigError("beam: width and max_len must be >= 1");
  if (scorer_pairs < contrastive.batch) throw ConfigError("scorer_pairs must be >= contrastive.batch");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  try {
    filter.validate();
    semisup.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  pretrain.model.validate();
  if (pretrain.model.vocab_size != Vocabulary::standard().size())
    throw ConfigError("pretrain.model.vocab_size must equal the vocabulary size (" +
                      std::to_string(Vocabulary::standard().size()) + ")");
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json::object();
  j["task"] = task_name(c.task);
  j["n"] = c.n;
  j["o"] = c.o;
  j["m"] = c.m;
  j["pool_size"] = c.pool_size;
  j["test_size"] = c.test_size;
  j["pool_palette"] = palette_name(c.pool_palette);
  j["seeds"] = c.seeds;
  j["method"] = method_name(c.method);
  j["stage1"] = c.stage1;
  j["shots"] = c.shots;
  j["labeller"] = labeller_name(c.labeller);
  j["beam"] = c.beam;
  j["filter"] = c.filter;
  j["semisup"] = c.semisup;
  j["evaluate_test"] = c.evaluate_test;
  j["pretrain"] = c.pretrain;
  j["scorer"] = c.scorer;
  j["contrastive"] = c.contrastive;
  j["scorer_pairs"] = c.scorer_pairs;
  j["base_model"] = c.base_model;
  j["scorer_model"] = c.scorer_model;
  j["work_dir"] = c.work_dir;
  j["jobs"] = c.jobs;
}

void from_json(const json& j, ExperimentConfig& c) {
  reject_unknown(j, {"task", "n", "o", "m", "pool_size", "test_size", "pool_palette", "seeds", "method", "stage1",
                     "shots", "labeller", "beam", "filter", "semisup", "evaluate_test", "pretrain", "scorer",
                     "contrastive", "scorer_pairs", "base_model", "scorer_model", "work_dir", "jobs"},
                 "experiment");
  TaskKind task = TaskKind::kCaption;
  if (j.contains("task")) {
    try {
      task = parse_task(j["task"].get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("task: ") + e.what());
    }
  }
  c = default_config(task);
  read(j, "n", c.n);
  read(j, "o", c.o);
  read(j, "m", c.m);
  read(j, "pool_size", c.pool_size);
  read(j, "test_size", c.test_size);
  if (j.contains("pool_palette")) c.pool_palette = parse_palette(j["pool_palette"].get<std::string>());
  read(j, "seeds", c.seeds);
  if (j.contains("method")) c.method = parse_method(j["method"].get<std::string>());
  read(j, "stage1", c.stage1);
  read(j, "shots", c.shots);
  if (j.contains("labeller")) c.labeller = parse_labeller(j["labeller"].get<std::string>());
  read(j, "beam", c.beam);
  read(j, "filter", c.filter);
  read(j, "semisup", c.semisup);
  read(j, "evaluate_test", c.evaluate_test);
  read(j, "pretrain", c.pretrain);
  read(j, "scorer", c.scorer);
  read(j, "contrastive", c.contrastive);
  read(j, "scorer_pairs", c.scorer_pairs);
  read(j, "base_model", c.base_model);
  read(j, "scorer_model", c.scorer_model);
  read(j, "work_dir", c.work_dir);
  read(j, "jobs", c.jobs);
}

std::string canonical_json(const ExperimentConfig& c) { return json(c).dump(2) + "\n"; }

ExperimentConfig parse_experiment_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

ExperimentConfig default_config(TaskKind task) {
  ExperimentConfig c;
  c.task = task;
  c.stage1.lr = 1e-3;
  c.stage1.min_steps_per_epoch = 25;
  c.semisup.lr = 1e-3;
  switch (task) {
    case TaskKind::kCaption:
      c.n = 10;
      c.semisup.alpha = 0.1;
      break;
    case TaskKind::kClassify:
      c.n = 1;
      c.semisup.alpha = 0.1;
      break;
    case TaskKind::kVqa:
      c.n = 1;
      c.semisup.alpha = 0.5;
      c.labeller = Labeller::kIcl;
      break;
  }
  return c;
}

}  // namespace fewvlm
