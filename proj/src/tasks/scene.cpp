// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/tasks/scene.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "fewvlm/core/rng.hpp"
#include "fewvlm/tasks/vocab.hpp"

namespace fewvlm {

const std::array<std::string, kNumShapes>& shape_names() {
  static const std::array<std::string, kNumShapes> n{"square", "disc", "bar"};
  return n;
}

const std::array<std::string, kNumColors>& color_names() {
  static const std::array<std::string, kNumColors> n{"red", "green", "blue", "yellow",
                                                     "cyan", "magenta", "white", "orange"};
  return n;
}

std::array<double, 3> palette_rgb(int color) {
  static const std::array<std::array<double, 3>, kPaletteSize> rgb{{
      {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}, {1.0, 1.0, 0.0},
      {0.0, 1.0, 1.0}, {1.0, 0.0, 1.0}, {1.0, 1.0, 1.0}, {1.0, 0.5, 0.0},
      // shifted palette: brown, purple, gray, pink, olive, navy, teal, maroon
      {0.5, 0.25, 0.0}, {0.5, 0.0, 0.5}, {0.5, 0.5, 0.5}, {1.0, 0.6, 0.8},
      {0.5, 0.5, 0.0}, {0.0, 0.0, 0.5}, {0.0, 0.5, 0.5}, {0.5, 0.0, 0.0},
  }};
  if (color < 0 || color >= kPaletteSize) throw std::invalid_argument("palette index out of range");
  return rgb[static_cast<std::size_t>(color)];
}

void SceneSpec::validate() const {
  if (objects.empty() || objects.size() > kMaxObjects)
    throw std::invalid_argument("scene must hold 1-3 objects, got " + std::to_string(objects.size()));
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    if (o.shape < 0 || o.shape >= kNumShapes) throw std::invalid_argument("scene: bad shape");
    if (o.color < 0 || o.color >= kPaletteSize) throw std::invalid_argument("scene: bad color");
    if (o.cell < 0 || o.cell >= kGridSide * kGridSide) throw std::invalid_argument("scene: bad cell");
    if (i > 0 && objects[i - 1].cell >= o.cell)
      throw std::invalid_argument("scene: objects must occupy distinct cells in raster order");
  }
}

void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = nlohmann::json::object();
  j["seed"] = s.seed;
  auto objs = nlohmann::json::array();
  for (const auto& o : s.objects) objs.push_back({{"shape", o.shape}, {"color", o.color}, {"cell", o.cell}});
  j["objects"] = objs;
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  s.seed = j.at("seed").get<std::uint64_t>();
  s.objects.clear();
  for (const auto& o : j.at("objects"))
    s.objects.push_back({o.at("shape").get<int>(), o.at("color").get<int>(), o.at("cell").get<int>()});
  s.validate();
}

SceneSpec random_scene(std::uint64_t seed, Palette palette) {
  Rng rng(seed);
  SceneSpec s;
  s.seed = seed;
  const int n = 1 + static_cast<int>(rng.below(kMaxObjects));
  std::vector<int> cells(kGridSide * kGridSide);
  for (int i = 0; i < kGridSide * kGridSide; ++i) cells[static_cast<std::size_t>(i)] = i;
  rng.shuffle(cells);
  cells.resize(static_cast<std::size_t>(n));
  std::sort(cells.begin(), cells.end());
  const int color_base = palette == Palette::kInDistribution ? 0 : kNumColors;
  for (int c : cells) {
    SceneObject o;
    o.cell = c;
    o.shape = static_cast<int>(rng.below(kNumShapes));
    o.color = color_base + static_cast<int>(rng.below(kNumColors));
    s.objects.push_back(o);
  }
  return s;
}

Image render(const SceneSpec& scene) {
  scene.validate();
  Image img(3, kImageSide, kImageSide, 0.0);
  for (const auto& o : scene.objects) {
    const auto rgb = palette_rgb(o.color);
    const std::size_t y0 = static_cast<std::size_t>(o.cell / kGridSide) * kCellPixels;
    const std::size_t x0 = static_cast<std::size_t>(o.cell % kGridSide) * kCellPixels;
    for (std::size_t dy = 0; dy < kCellPixels; ++dy) {
      for (std::size_t dx = 0; dx < kCellPixels; ++dx) {
        bool lit = false;
        switch (o.shape) {
          case 0: lit = true; break;
          case 1: lit = dy == dx; break;
          default: lit = dy == 0; break;
        }
        if (!lit) continue;
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y0 + dy, x0 + dx) = rgb[c];
      }
    }
  }
  return img;
}

Image color_jitter(const Image& image, double scale) {
  Image out = image;
  for (double& p : out.pixels) p *= scale;
  return out;
}

namespace {

const std::string& named_color(int color) {
  if (color < 0 || color >= kNumColors)
    throw std::invalid_argument("color " + std::to_string(color) + " has no name (shifted palette)");
  return color_names()[static_cast<std::size_t>(color)];
}

const std::string& shape_name(int shape) { return shape_names()[static_cast<std::size_t>(shape)]; }

std::string quadrant(int cell) {
  const int row = cell / kGridSide, col = cell % kGridSide;
  return std::string(row < kGridSide / 2 ? "top" : "bottom") + (col < kGridSide / 2 ? " left" : " right");
}

}  // namespace

std::string caption_text(const SceneSpec& scene, CaptionStyle style) {
  scene.validate();
  std::ostringstream os;
  if (style == CaptionStyle::kPretrain) {
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      const auto& o = scene.objects[i];
      os << (i ? " " : "") << "a " << named_color(o.color) << ' ' << shape_name(o.shape);
    }
  } else {
    os << "the image shows " << scene.objects.size() << " objects :";
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      const auto& o = scene.objects[i];
      os << (i ? " ," : "") << ' ' << shape_name(o.shape) << " in " << named_color(o.color);
    }
  }
  return os.str();
}

std::vector<int> caption_of(const SceneSpec& scene, CaptionStyle style) {
  return Vocabulary::standard().tokenize(caption_text(scene, style));
}

const std::array<std::string, kNumQuestionTypes>& question_type_names() {
  static const std::array<std::string, kNumQuestionTypes> n{
      "color_of_shape", "count",           "presence",         "shape_of_color",
      "position",       "count_of_shape",  "color_presence",   "shape_left"};
  return n;
}

std::optional<QaPair> make_vqa(const SceneSpec& scene, int question_type) {
  scene.validate();
  if (question_type < 0 || question_type >= kNumQuestionTypes)
    throw std::invalid_argument("question type out of range: " + std::to_string(question_type));
  Rng rng(derive_seed(scene.seed, tag_of("vqa") + static_cast<std::uint64_t>(question_type)));
  const auto& objs = scene.objects;
  for (const auto& o : objs) {
    if (o.color >= kNumColors) return std::nullopt;
  }
  auto count_shape = [&](int s) {
    return static_cast<int>(std::count_if(objs.begin(), objs.end(), [&](const SceneObject& o) { return o.shape == s; }));
  };
  auto count_color = [&](int c) {
    return static_cast<int>(std::count_if(objs.begin(), objs.end(), [&](const SceneObject& o) { return o.color == c; }));
  };
  auto count_pair = [&](int s, int c) {
    return static_cast<int>(
        std::count_if(objs.begin(), objs.end(), [&](const SceneObject& o) { return o.shape == s && o.color == c; }));
  };
  auto pick = [&](auto pred) -> std::optional<SceneObject> {
    std::vector<SceneObject> cands;
    for (const auto& o : objs)
      if (pred(o)) cands.push_back(o);
    if (cands.empty()) return std::nullopt;
    return cands[rng.below(cands.size())];
  };

  QaPair qa;
  switch (question_type) {
    case 0: {
      auto o = pick([&](const SceneObject& x) { return count_shape(x.shape) == 1; });
      if (!o) return std::nullopt;
      qa = {"what color is the " + shape_name(o->shape), named_color(o->color)};
      break;
    }
    case 1:
      qa = {"how many objects are there", std::to_string(objs.size())};
      break;
    case 2: {
      int s, c;
      if (rng.below(2) == 0) {
        const auto& o = objs[rng.below(objs.size())];
        s = o.shape;
        c = o.color;
      } else {
        s = static_cast<int>(rng.below(kNumShapes));
        c = static_cast<int>(rng.below(kNumColors));
      }
      qa = {"is there a " + named_color(c) + " " + shape_name(s), count_pair(s, c) > 0 ? "yes" : "no"};
      break;
    }
    case 3: {
      auto o = pick([&](const SceneObject& x) { return count_color(x.color) == 1; });
      if (!o) return std::nullopt;
      qa = {"what shape is the " + named_color(o->color) + " object", shape_name(o->shape)};
      break;
    }
    case 4: {
      auto o = pick([&](const SceneObject& x) { return count_pair(x.shape, x.color) == 1; });
      if (!o) return std::nullopt;
      qa = {"where is the " + named_color(o->color) + " " + shape_name(o->shape), quadrant(o->cell)};
      break;
    }
    case 5: {
      const int s = static_cast<int>(rng.below(kNumShapes));
      qa = {"how many " + shape_name(s) + " are there", std::to_string(count_shape(s))};
      break;
    }
    case 6: {
      int c;
      if (rng.below(2) == 0)
        c = objs[rng.below(objs.size())].color;
      else
        c = static_cast<int>(rng.below(kNumColors));
      qa = {"is there a " + named_color(c) + " object", count_color(c) > 0 ? "yes" : "no"};
      break;
    }
    default: {
      auto o = pick([&](const SceneObject& x) { return count_shape(x.shape) == 1; });
      if (!o) return std::nullopt;
      qa = {"is the " + shape_name(o->shape) + " on the left", (o->cell % kGridSide) < kGridSide / 2 ? "yes" : "no"};
      break;
    }
  }
  return qa;
}

std::string qa_text(const QaPair& qa) { return "Question: " + qa.question + " Answer: " + qa.answer; }

std::optional<int> question_type_of(const std::string& question) {
  std::istringstream is(question);
  std::vector<std::string> w;
  for (std::string s; is >> s;) w.push_back(s);
  auto at = [&](std::size_t i) { return i < w.size() ? w[i] : std::string(); };
  auto is_shape = [](const std::string& s) {
    return std::find(shape_names().begin(), shape_names().end(), s) != shape_names().end();
  };
  if (at(0) == "what" && at(1) == "color") return 0;
  if (at(0) == "how" && at(1) == "many") return at(2) == "objects" ? 1 : 5;
  if (at(0) == "is" && at(1) == "there") return is_shape(at(4)) ? 2 : 6;
  if (at(0) == "what" && at(1) == "shape") return 3;
  if (at(0) == "where") return 4;
  if (at(0) == "is" && at(1) == "the") return 7;
  return std::nullopt;
}

int class_of(const SceneSpec& scene) {
  scene.validate();
  return scene.objects.front().color;
}

std::vector<std::vector<int>> class_texts() {
  std::vector<std::vector<int>> out;
  for (const auto& c : color_names()) out.push_back(Vocabulary::standard().tokenize(c));
  return out;
}

}  // namespace fewvlm
