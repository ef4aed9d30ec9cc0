// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/harness/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fewvlm/adapt/adaptation.hpp"
#include "fewvlm/core/rng.hpp"
#include "fewvlm/model/io.hpp"
#include "fewvlm/selflabel/selflabel.hpp"
#include "fewvlm/semisup/semisup.hpp"
#include "fewvlm/tasks/scene.hpp"
#include "fewvlm/tasks/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fewvlm {

const std::vector<double> kSweepAlphas{0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0};

namespace {

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string key_of(const json& j) { return hex(tag_of(j.dump())); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

std::string seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return (fs::path(cfg.work_dir) / ("seed_" + std::to_string(seed))).string();
}

json stage1_key(const ExperimentConfig& cfg, const VisionLanguageModel& base, std::uint64_t seed) {
  return {{"base", base.params().fingerprint()}, {"task", task_name(cfg.task)}, {"n", cfg.n},
          {"o", cfg.o},                          {"m", cfg.m},                  {"method", method_name(cfg.method)},
          {"train", cfg.stage1},                 {"shots", cfg.shots},          {"beam", cfg.beam},
          {"seed", seed}};
}

json labels_key(const ExperimentConfig& cfg, const json& s1key) {
  return {{"stage1", s1key},
          {"pool_size", cfg.pool_size},
          {"palette", cfg.pool_palette == Palette::kShifted ? "shifted" : "in_distribution"},
          {"labeller", cfg.labeller == Labeller::kIcl ? "icl" : "stage1"}};
}

bool needs_scorer(const FilterSpec& f) {
  return f.kind == FilterKind::kContrastiveTopFrac || f.kind == FilterKind::kContrastiveThreshold;
}

StageMetrics measure(const Predictor& p, const SplitSpec& split, TaskKind task, int jobs) {
  StageMetrics m;
  m.val = evaluate(p, split.validation, task, jobs);
  if (!split.test.empty()) m.test = evaluate(p, split.test, task, jobs);
  return m;
}

json stage_json(const StageMetrics& m) {
  json j = {{"val", m.val}};
  if (m.test) j["test"] = *m.test;
  return j;
}

StageMetrics stage_from(const json& j) {
  StageMetrics m;
  m.val = j.at("val").get<TaskMetrics>();
  if (j.contains("test")) m.test = j["test"].get<TaskMetrics>();
  return m;
}

json pseudo_json(const PseudoStats& p) {
  return {{"generated", p.generated},
          {"images", p.images},
          {"kept", p.kept},
          {"dropped", p.dropped},
          {"kept_fraction", p.kept_fraction},
          {"mean_log_likelihood", p.mean_log_likelihood},
          {"mean_contrastive", p.mean_contrastive ? json(*p.mean_contrastive) : json(nullptr)},
          {"mean_length", p.mean_length}};
}

PseudoStats pseudo_from(const json& j) {
  PseudoStats p;
  p.generated = j.at("generated").get<std::size_t>();
  p.images = j.at("images").get<std::size_t>();
  p.kept = j.at("kept").get<std::size_t>();
  p.dropped = j.at("dropped").get<std::size_t>();
  p.kept_fraction = j.at("kept_fraction").get<double>();
  p.mean_log_likelihood = j.at("mean_log_likelihood").get<double>();
  if (!j.at("mean_contrastive").is_null()) p.mean_contrastive = j["mean_contrastive"].get<double>();
  p.mean_length = j.at("mean_length").get<double>();
  return p;
}

PseudoStats stats_of(const std::vector<PseudoLabel>& kept, std::size_t generated, std::size_t images,
                     std::size_t dropped) {
  PseudoStats s;
  s.generated = generated;
  s.images = images;
  s.kept = kept.size();
  s.dropped = dropped;
  s.kept_fraction = images ? static_cast<double>(kept.size()) / static_cast<double>(images) : 0.0;
  if (kept.empty()) return s;
  double ll = 0.0, len = 0.0, cs = 0.0;
  bool all_scored = true;
  for (const auto& l : kept) {
    ll += l.log_likelihood;
    int words = 0;
    for (int t : l.tokens)
      if (t != tok::kBos && t != tok::kEos && t != tok::kPad) ++words;
    len += words;
    if (l.contrastive_score)
      cs += *l.contrastive_score;
    else
      all_scored = false;
  }
  const double n = static_cast<double>(kept.size());
  s.mean_log_likelihood = ll / n;
  s.mean_length = len / n;
  if (all_scored) s.mean_contrastive = cs / n;
  return s;
}

/// Generates (or reloads) the raw pseudo-labels for one seed.
LabelResult obtain_labels(const ExperimentConfig& cfg, const VisionLanguageModel& base,
                          const std::optional<VisionLanguageModel>& stage1, const SplitSpec& split,
                          const std::string& path, bool resume) {
  const std::string meta = path + ".meta.json";
  if (resume && fs::exists(meta)) {
    LabelResult r;
    r.labels = read_labels(path);
    const json m = read_json(meta);
    r.dropped = m.at("dropped").get<std::size_t>();
    r.warnings = m.at("warnings").get<std::vector<std::string>>();
    return r;
  }
  LabelResult r = generate_labels(cfg, base, stage1 ? &*stage1 : nullptr, split);
  write_labels(path, r.labels);
  write_text(meta, json{{"dropped", r.dropped}, {"warnings", r.warnings}}.dump(2) + "\n");
  return r;
}

}  // namespace

void check_labeller(const ExperimentConfig& cfg) {
  if (cfg.labeller == Labeller::kIcl && cfg.task != TaskKind::kVqa)
    throw ConfigError("labeller 'icl' is only available for the vqa task");
  if (cfg.labeller == Labeller::kStage1 && cfg.method == AdaptMethod::kIcl)
    throw ConfigError("method 'icl' has no stage-1 model to label with; use labeller 'icl'");
}

namespace {

}  // namespace

SplitSpec experiment_split(const ExperimentConfig& cfg, std::uint64_t seed) {
  SplitConfig sc;
  sc.task = cfg.task;
  sc.n = cfg.n;
  sc.o = cfg.o;
  sc.m = cfg.m;
  sc.pool_size = cfg.pool_size;
  sc.test_size = cfg.evaluate_test ? cfg.test_size : 0;
  sc.pool_palette = cfg.pool_palette;
  sc.seed = derive_seed(seed, tag_of("data"));
  return make_split(sc);
}

LabelResult generate_labels(const ExperimentConfig& cfg, const VisionLanguageModel& base,
                            const VisionLanguageModel* stage1, const SplitSpec& split) {
  if (cfg.labeller == Labeller::kIcl) return label_vqa(base, split.pool, split.labelled, cfg.shots, cfg.beam, cfg.jobs);
  if (!stage1) throw ConfigError("labeller 'stage1' needs a stage-1 model");
  switch (cfg.task) {
    case TaskKind::kCaption: return label_captions(*stage1, split.pool, cfg.beam, cfg.jobs);
    case TaskKind::kClassify: return label_classes(*stage1, split.pool, class_texts(), cfg.jobs);
    case TaskKind::kVqa: return label_vqa(*stage1, split.pool, {}, 0, cfg.beam, cfg.jobs);
  }
  return {};
}

void to_json(json& j, const TaskMetrics& m) {
  j = {{"task", task_name(m.task)}, {"count", m.count},    {"exact_match", m.exact_match},
       {"token_f1", m.token_f1},    {"ngram", m.ngram},    {"top1", m.top1},
       {"vqa_exact", m.vqa_exact},  {"primary", m.primary()}};
}

void from_json(const json& j, TaskMetrics& m) {
  m.task = parse_task(j.at("task").get<std::string>());
  m.count = j.at("count").get<std::size_t>();
  m.exact_match = j.at("exact_match").get<double>();
  m.token_f1 = j.at("token_f1").get<double>();
  m.ngram = j.at("ngram").get<double>();
  m.top1 = j.at("top1").get<double>();
  m.vqa_exact = j.at("vqa_exact").get<double>();
}

bool MetricsReport::complete() const {
  for (const auto& s : seeds)
    if (!s.failed_stage.empty()) return false;
  return !seeds.empty();
}

void MetricsReport::summarize() {
  auto summary = [&](auto member) -> std::optional<MeanSd> {
    std::vector<double> v;
    for (const auto& s : seeds)
      if (const auto& st = s.*member) v.push_back(st->val.primary());
    if (v.empty()) return std::nullopt;
    return mean_sd(v);
  };
  zero_shot = summary(&SeedReport::zero_shot);
  stage1 = summary(&SeedReport::stage1);
  stage3 = summary(&SeedReport::stage3);
}

void to_json(json& j, const MetricsReport& r) {
  auto ms = [](const std::optional<MeanSd>& m) {
    return m ? json{{"mean", m->mean}, {"sd", m->sd}} : json(nullptr);
  };
  json seeds = json::array();
  for (const auto& s : r.seeds) {
    json e = {{"seed", s.seed}, {"failed_stage", s.failed_stage}, {"error", s.error}, {"warnings", s.warnings}};
    e["zero_shot"] = s.zero_shot ? stage_json(*s.zero_shot) : json(nullptr);
    e["stage1"] = s.stage1 ? stage_json(*s.stage1) : json(nullptr);
    e["stage3"] = s.stage3 ? stage_json(*s.stage3) : json(nullptr);
    e["pseudo_labels"] = s.pseudo ? pseudo_json(*s.pseudo) : json(nullptr);
    seeds.push_back(std::move(e));
  }
  j = {{"report_version", MetricsReport::kVersion},
       {"config", r.config},
       {"complete", r.complete()},
       {"seeds", seeds},
       {"summary", {{"zero_shot", ms(r.zero_shot)}, {"stage1", ms(r.stage1)}, {"stage3", ms(r.stage3)}}}};
}

void from_json(const json& j, MetricsReport& r) {
  if (j.at("report_version").get<int>() != MetricsReport::kVersion)
    throw std::runtime_error("unsupported report_version");
  r = MetricsReport();
  r.config = j.at("config").get<ExperimentConfig>();
  for (const auto& e : j.at("seeds")) {
    SeedReport s;
    s.seed = e.at("seed").get<std::uint64_t>();
    s.failed_stage = e.at("failed_stage").get<std::string>();
    s.error = e.at("error").get<std::string>();
    s.warnings = e.at("warnings").get<std::vector<std::string>>();
    if (!e.at("zero_shot").is_null()) s.zero_shot = stage_from(e["zero_shot"]);
    if (!e.at("stage1").is_null()) s.stage1 = stage_from(e["stage1"]);
    if (!e.at("stage3").is_null()) s.stage3 = stage_from(e["stage3"]);
    if (!e.at("pseudo_labels").is_null()) s.pseudo = pseudo_from(e["pseudo_labels"]);
    r.seeds.push_back(std::move(s));
  }
  r.summarize();
}

void write_report(const MetricsReport& r, const std::string& path) { write_text(path, json(r).dump(2) + "\n"); }

MetricsReport read_report(const std::string& path) { return read_json(path).get<MetricsReport>(); }

VisionLanguageModel obtain_base_model(const ExperimentConfig& cfg, bool resume) {
  std::string path = cfg.base_model;
  if (path.empty()) path = (fs::path(cfg.work_dir) / ("base_" + key_of(json(cfg.pretrain)) + ".ckpt")).string();
  // The base model is a precondition of every run and is keyed by its config, so it is reused whenever present.
  (void)resume;
  if (fs::exists(path + ".json")) {
    VisionLanguageModel m = load_model(path);
    if (m.config().vocab_size != Vocabulary::standard().size())
      throw ConfigError("base model " + path + " has vocab_size " + std::to_string(m.config().vocab_size) +
                        ", expected " + std::to_string(Vocabulary::standard().size()));
    return m;
  }
  PretrainConfig pc = cfg.pretrain;
  pc.jobs = cfg.jobs;
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  auto result = pretrain_base(pc, path + ".curve.csv");
  save_report(result.report, path + ".report.json");
  save_model(result.model, path);
  return std::move(result.model);
}

std::vector<ContrastivePair> scorer_pairs(int count, std::uint64_t seed) {
  const std::uint64_t root = derive_seed(seed, tag_of("scorer-pairs"));
  std::vector<ContrastivePair> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const SceneSpec scene = random_scene(derive_seed(root, static_cast<std::uint64_t>(i)));
    const CaptionStyle style = (i % 2 == 0) ? CaptionStyle::kPretrain : CaptionStyle::kTarget;
    out.push_back({render(scene), caption_of(scene, style)});
  }
  return out;
}

DualEncoder obtain_scorer(const ExperimentConfig& cfg, const VisionLanguageModel& base, bool resume) {
  (void)resume;
  DualEncoder scorer(base, cfg.scorer);
  std::string path = cfg.scorer_model;
  if (path.empty()) {
    const json key = {{"base", base.params().fingerprint()},
                      {"scorer", cfg.scorer},
                      {"contrastive", cfg.contrastive},
                      {"pairs", cfg.scorer_pairs}};
    path = (fs::path(cfg.work_dir) / ("scorer_" + key_of(key) + ".ckpt")).string();
  }
  if (fs::exists(path)) {
    load_scorer(scorer, path);
    return scorer;
  }
  const auto pairs = scorer_pairs(cfg.scorer_pairs, cfg.contrastive.seed);
  train_contrastive(scorer, pairs, cfg.contrastive);
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  save_scorer(scorer, path);
  return scorer;
}

Stage1Result run_stage1(const ExperimentConfig& cfg, const VisionLanguageModel& base, std::uint64_t seed,
                        bool resume) {
  const SplitSpec split = experiment_split(cfg, seed);
  Stage1Result r;
  if (cfg.method == AdaptMethod::kIcl) {
    IclPredictor p(base, split.labelled, cfg.shots, cfg.beam);
    r.metrics = measure(p, split, cfg.task, cfg.jobs);
    return r;
  }
  const std::string path =
      (fs::path(seed_dir(cfg, seed)) / ("stage1_" + key_of(stage1_key(cfg, base, seed)) + ".ckpt")).string();
  if (resume && fs::exists(path + ".report.json")) {
    r.model = load_model(path);
  } else {
    fs::create_directories(seed_dir(cfg, seed));
    VisionLanguageModel m = base.clone();
    AdaptConfig ac;
    ac.train = cfg.stage1;
    ac.train.seed = derive_seed(seed, tag_of("stage1"));
    ac.beam = cfg.beam;
    ac.jobs = cfg.jobs;
    ac.checkpoint_path = path;
    AdaptationReport rep = cfg.method == AdaptMethod::kAdapter ? train_adapters(m, split.labelled, split.validation, ac)
                                                               : finetune(m, split.labelled, split.validation, ac);
    write_metrics_csv(rep, path + ".csv");
    r.model = std::move(m);
  }
  r.model->set_partition(PartitionMode::kNone);
  DirectPredictor p(*r.model, cfg.beam);
  r.metrics = measure(p, split, cfg.task, cfg.jobs);
  return r;
}

MetricsReport run_pipeline(const ExperimentConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  check_labeller(cfg);
  const std::string out = opt.out_dir.empty() ? cfg.work_dir : opt.out_dir;
  const VisionLanguageModel base = obtain_base_model(cfg, opt.resume);
  std::optional<DualEncoder> scorer;
  if (needs_scorer(cfg.filter)) scorer.emplace(obtain_scorer(cfg, base, opt.resume));

  MetricsReport report;
  report.config = cfg;
  std::ostringstream summary_csv;
  summary_csv << "seed,zero_shot,stage1,stage3,pseudo_kept,failed_stage\n";
  for (std::uint64_t seed : cfg.seeds) {
    SeedReport sr;
    sr.seed = seed;
    std::string stage = "data";
    try {
      const SplitSpec split = experiment_split(cfg, seed);
      stage = "zero_shot";
      {
        DirectPredictor p(base, cfg.beam);
        sr.zero_shot = measure(p, split, cfg.task, cfg.jobs);
      }
      stage = "stage1";
      Stage1Result s1 = run_stage1(cfg, base, seed, opt.resume);
      sr.stage1 = s1.metrics;

      stage = "pseudo_label";
      const json s1key = stage1_key(cfg, base, seed);
      const json lkey = labels_key(cfg, s1key);
      const std::string dir = seed_dir(cfg, seed);
      const std::string labels_path = (fs::path(dir) / ("labels_" + key_of(lkey) + ".jsonl")).string();
      LabelResult raw = obtain_labels(cfg, base, s1.model, split, labels_path, opt.resume);
      for (const auto& w : raw.warnings) sr.warnings.push_back(w);

      stage = "filter";
      if (scorer) attach_contrastive_scores(raw.labels, split.pool, *scorer);
      const auto kept = filter(raw.labels, cfg.filter);
      sr.pseudo = stats_of(kept, raw.labels.size(), split.pool.size(), raw.dropped);

      stage = "stage3";
      json skey = {{"labels", lkey}, {"filter", cfg.filter}, {"semisup", cfg.semisup}, {"train", cfg.stage1}};
      if (scorer) skey["scorer"] = scorer->params().fingerprint();
      const std::string s3path = (fs::path(dir) / ("stage3_" + key_of(skey) + ".ckpt")).string();
      std::optional<VisionLanguageModel> s3;
      if (opt.resume && fs::exists(s3path + ".report.json")) {
        s3 = load_model(s3path);
        for (const auto& w : load_report(s3path + ".report.json").warnings) sr.warnings.push_back(w);
      } else {
        const bool warm = cfg.semisup.warm_start && s1.model;
        VisionLanguageModel m = warm ? s1.model->clone() : base.clone();
        SemiSupConfig sc = cfg.semisup;
        sc.seed = derive_seed(seed, tag_of("stage3"));
        AdaptConfig ac;
        ac.train = cfg.stage1;
        ac.beam = cfg.beam;
        ac.jobs = cfg.jobs;
        ac.checkpoint_path = s3path;
        const auto pseudo = to_samples(kept, split.pool);
        AdaptationReport rep = train_semisup(m, split.labelled, pseudo, split.validation, sc, ac);
        rep.filter = cfg.filter.describe();
        save_report(rep, s3path + ".report.json");
        write_metrics_csv(rep, s3path + ".csv");
        for (const auto& w : rep.warnings) sr.warnings.push_back(w);
        s3 = std::move(m);
      }
      s3->set_partition(PartitionMode::kNone);
      DirectPredictor p(*s3, cfg.beam);
      sr.stage3 = measure(p, split, cfg.task, cfg.jobs);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      sr.failed_stage = stage;
      sr.error = e.what();
    }
    auto cell = [](const std::optional<StageMetrics>& m) { return m ? fmt(m->val.primary()) : std::string(); };
    summary_csv << seed << ',' << cell(sr.zero_shot) << ',' << cell(sr.stage1) << ',' << cell(sr.stage3) << ','
                << (sr.pseudo ? std::to_string(sr.pseudo->kept) : std::string()) << ',' << sr.failed_stage << '\n';
    report.seeds.push_back(std::move(sr));
  }
  report.summarize();
  write_report(report, (fs::path(out) / "report.json").string());
  write_text((fs::path(out) / "summary.csv").string(), summary_csv.str());
  return report;
}

std::vector<MetricsReport> sweep_alpha(const ExperimentConfig& cfg, const std::vector<double>& alphas,
                                       const RunOptions& opt) {
  const std::string out = opt.out_dir.empty() ? cfg.work_dir : opt.out_dir;
  std::vector<MetricsReport> reports;
  std::ostringstream csv;
  csv << "alpha,mean,sd,complete\n";
  bool first = true;
  for (double a : alphas) {
    ExperimentConfig c = cfg;
    c.semisup.alpha = a;
    RunOptions o{(fs::path(out) / ("alpha_" + fmt(a))).string(), opt.resume || !first};
    first = false;
    reports.push_back(run_pipeline(c, o));
    const auto& s = reports.back().stage3;
    csv << fmt(a) << ',' << (s ? fmt(s->mean) : "") << ',' << (s ? fmt(s->sd) : "") << ','
        << (reports.back().complete() ? 1 : 0) << '\n';
  }
  write_text((fs::path(out) / "sweep_alpha.csv").string(), csv.str());
  return reports;
}

std::vector<FilterSpec> default_filter_grid() {
  std::vector<FilterSpec> out{FilterSpec::none()};
  for (double f : {0.1, 0.3, 0.5}) out.push_back(FilterSpec::contrastive_topfrac(f));
  for (double f : {0.1, 0.3, 0.5}) out.push_back(FilterSpec::likelihood_topfrac(f));
  return out;
}

std::vector<MetricsReport> sweep_filter(const ExperimentConfig& cfg, const std::vector<FilterSpec>& filters,
                                        const RunOptions& opt) {
  const std::string out = opt.out_dir.empty() ? cfg.work_dir : opt.out_dir;
  std::vector<MetricsReport> reports;
  std::ostringstream csv;
  csv << "filter,mean,sd,mean_kept,mean_length,complete\n";
  for (std::size_t i = 0; i < filters.size(); ++i) {
    ExperimentConfig c = cfg;
    c.filter = filters[i];
    RunOptions o{(fs::path(out) / ("filter_" + std::to_string(i))).string(), opt.resume || i > 0};
    reports.push_back(run_pipeline(c, o));
    const auto& r = reports.back();
    double kept = 0.0, len = 0.0;
    int n = 0;
    for (const auto& s : r.seeds)
      if (s.pseudo) {
        kept += static_cast<double>(s.pseudo->kept);
        len += s.pseudo->mean_length;
        ++n;
      }
    csv << filters[i].describe() << ',' << (r.stage3 ? fmt(r.stage3->mean) : "") << ','
        << (r.stage3 ? fmt(r.stage3->sd) : "") << ',' << (n ? fmt(kept / n) : "") << ','
        << (n ? fmt(len / n) : "") << ',' << (r.complete() ? 1 : 0) << '\n';
  }
  write_text((fs::path(out) / "sweep_filter.csv").string(), csv.str());
  return reports;
}

std::vector<AdaptationCell> compare_adaptation(const ExperimentConfig& cfg, const std::vector<int>& n_grid,
                                               const RunOptions& opt) {
  cfg.validate();
  if (n_grid.empty()) throw ConfigError("compare-adaptation: the N grid is empty");
  const std::string out = opt.out_dir.empty() ? cfg.work_dir : opt.out_dir;
  const VisionLanguageModel base = obtain_base_model(cfg, opt.resume);
  std::vector<AdaptationCell> cells;
  std::ostringstream csv;
  csv << "method,n,mean,sd,seeds,base_unchanged\n";
  for (AdaptMethod m : {AdaptMethod::kFinetune, AdaptMethod::kAdapter, AdaptMethod::kIcl}) {
    for (int n : n_grid) {
      ExperimentConfig c = cfg;
      c.method = m;
      c.n = n;
      c.o = std::max(c.o, n);
      c.validate();
      AdaptationCell cell;
      cell.method = m;
      cell.n = n;
      const std::uint64_t before = base.params().fingerprint();
      for (std::uint64_t seed : c.seeds)
        cell.per_seed.push_back(run_stage1(c, base, seed, opt.resume).metrics.val.primary());
      cell.base_unchanged = base.params().fingerprint() == before;
      cell.summary = mean_sd(cell.per_seed);
      csv << method_name(m) << ',' << n << ',' << fmt(cell.summary.mean) << ',' << fmt(cell.summary.sd) << ','
          << cell.per_seed.size() << ',' << (cell.base_unchanged ? 1 : 0) << '\n';
      cells.push_back(std::move(cell));
    }
  }
  write_text((fs::path(out) / "compare_adaptation.csv").string(), csv.str());
  return cells;
}

}  // namespace fewvlm
