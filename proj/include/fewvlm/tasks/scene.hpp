// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fewvlm/model/image.hpp"

namespace fewvlm {

inline constexpr int kGridSide = 4;       // 4x4 cells
inline constexpr int kCellPixels = 2;     // each cell is 2x2 pixels
inline constexpr int kImageSide = kGridSide * kCellPixels;
inline constexpr int kNumShapes = 3;
inline constexpr int kNumColors = 8;      // named palette entries
inline constexpr int kPaletteSize = 16;   // entries 8..15 form the shifted (unnamed) palette
inline constexpr int kMaxObjects = 3;
inline constexpr int kNumQuestionTypes = 8;

enum class Palette { kInDistribution, kShifted };

const std::array<std::string, kNumShapes>& shape_names();
const std::array<std::string, kNumColors>& color_names();
std::array<double, 3> palette_rgb(int color);

struct SceneObject {
  int shape = 0;
  int color = 0;
  int cell = 0;  // row * 4 + col
  bool operator==(const SceneObject&) const = default;
};

/// Objects are kept in raster (cell) order.
struct SceneSpec {
  std::vector<SceneObject> objects;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on a violated invariant.
  void validate() const;
  bool operator==(const SceneSpec&) const = default;
};

void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

/// 1-3 objects in distinct cells; colors from the requested palette half.
SceneSpec random_scene(std::uint64_t seed, Palette palette = Palette::kInDistribution);

/// 3 x 8 x 8 image. Background 0. square fills its cell, disc lights the main
/// diagonal, bar lights the top row.
Image render(const SceneSpec& scene);

/// Global brightness scale drawn from U[0.9, 1.1].
Image color_jitter(const Image& image, double scale);

enum class CaptionStyle { kPretrain, kTarget };

/// "a red square a blue disc" or "the image shows 2 objects : square in red , disc in blue".
std::string caption_text(const SceneSpec& scene, CaptionStyle style);
std::vector<int> caption_of(const SceneSpec& scene, CaptionStyle style);

struct QaPair {
  std::string question;
  std::string answer;
};

/// Question template names, indexed by question type.
const std::array<std::string, kNumQuestionTypes>& question_type_names();

/// nullopt when the template does not apply to the scene. Any choice inside
/// the template is seeded from the scene, so the result is a pure function.
std::optional<QaPair> make_vqa(const SceneSpec& scene, int question_type);

/// "Question: <q> Answer: <a>"
std::string qa_text(const QaPair& qa);

/// Leading words that identify each template; used to type generated questions.
std::optional<int> question_type_of(const std::string& question);

/// Class of a classification scene: the color of its first object.
int class_of(const SceneSpec& scene);
std::vector<std::vector<int>> class_texts();

}  // namespace fewvlm
