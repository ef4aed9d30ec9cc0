// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewvlm/model/image.hpp"
#include "fewvlm/tasks/scene.hpp"

namespace fewvlm {

enum class TaskKind { kCaption, kClassify, kVqa };

std::string task_name(TaskKind t);
TaskKind parse_task(const std::string& s);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One labelled example. `tokens` is BOS ... EOS.
struct Sample {
  std::uint64_t id = 0;
  SceneSpec scene;
  Image image;
  TaskKind task = TaskKind::kCaption;
  std::vector<int> tokens;
  std::optional<int> class_id;
  std::optional<int> question_type;

  /// Throws DatasetError if the task/field invariants are broken.
  void validate() const;
};

/// Image-only record of the unlabelled pool.
struct PoolImage {
  std::uint64_t id = 0;
  SceneSpec scene;
  Image image;
};

/// Grouping key used by balanced sampling (class id or question type); 0 for captions.
int group_of(const Sample& s);
int group_count(TaskKind task);

/// Generates the labelled sample with this id. `group` forces the class or
/// question type; otherwise it follows the natural distribution.
Sample make_sample(TaskKind task, std::uint64_t id, std::uint64_t root_seed, std::optional<int> group = std::nullopt);
PoolImage make_pool_image(std::uint64_t id, std::uint64_t root_seed, Palette palette);

/// Two-stage protocol: O per group uniformly without replacement, then N per
/// group from those O. Output is grouped by ascending group key.
std::vector<Sample> balanced_sample(const std::vector<Sample>& population, int O, int N, std::uint64_t seed);

struct SplitConfig {
  TaskKind task = TaskKind::kCaption;
  int n = 10;            // captions: total; classify/vqa: per group
  int o = 50;            // balanced-sampling stage-1 size per group
  int m = 200;           // validation size
  int pool_size = 500;
  int test_size = 500;
  Palette pool_palette = Palette::kInDistribution;
  std::uint64_t seed = 0;
};

struct SplitSpec {
  std::vector<Sample> labelled;
  std::vector<PoolImage> pool;
  std::vector<Sample> validation;
  std::vector<Sample> test;
};

/// Id ranges are disjoint per split, so the four sets never share an id.
SplitSpec make_split(const SplitConfig& cfg);

/// One pretraining document: an interleaved image/text sequence. Position t
/// of `tokens` cross-attends to images[image_of[t]].
struct Document {
  std::vector<Image> images;
  std::vector<int> tokens;
  std::vector<int> image_of;
};

struct CorpusConfig {
  int size = 20000;
  double interleaved_fraction = 0.3;  // documents with 2-4 captioned images
  double qa_fraction = 0.0;           // documents made of question/answer segments
  std::vector<int> qa_types{0, 1, 2, 3};
  std::uint64_t seed = 0;
};

/// Pretraining corpus in the pretrain caption style (plus optional QA documents).
std::vector<Document> make_pretrain_corpus(const CorpusConfig& cfg);

// JSON lines persistence. Images are re-rendered on load.
void write_samples(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> read_samples(const std::string& path);
void write_pool(const std::string& path, const std::vector<PoolImage>& pool);
std::vector<PoolImage> read_pool(const std::string& path);

}  // namespace fewvlm
