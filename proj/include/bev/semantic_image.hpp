#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace bev {

using ClassIndex = std::uint8_t;
using Rgb = std::array<std::uint8_t, 3>;

/// Row-major grid of class indices.
using LabelMap = Eigen::Matrix<ClassIndex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Row-major per-pixel flags (visibility, field of view).
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ClassDef {
  std::string name;
  Rgb color{};
  bool is_object = false;

  bool operator==(const ClassDef&) const = default;
};

class Palette {
 public:
  Palette() = default;
  /// Checks uniqueness of names and colors and the presence of "occluded".
  explicit Palette(std::vector<ClassDef> classes);

  /// road, sidewalk, person, car, truck, bus, bike, obstacle, vegetation, occluded
  static std::shared_ptr<const Palette> standard();

  std::size_t size() const { return classes_.size(); }
  const ClassDef& operator[](std::size_t i) const { return classes_[i]; }
  const std::vector<ClassDef>& classes() const { return classes_; }

  std::optional<ClassIndex> find(std::string_view name) const;
  /// Throws a palette error when the name is unknown.
  ClassIndex index_of(std::string_view name) const;
  std::optional<ClassIndex> find_color(const Rgb& color) const;
  ClassIndex occluded() const { return occluded_; }

  bool operator==(const Palette& other) const { return classes_ == other.classes_; }

 private:
  std::vector<ClassDef> classes_;
  ClassIndex occluded_ = 0;
};

using PaletteRef = std::shared_ptr<const Palette>;

struct SemanticImage {
  LabelMap labels;
  PaletteRef palette;

  SemanticImage() = default;
  SemanticImage(int width, int height, PaletteRef palette, ClassIndex fill = 0);
  SemanticImage(LabelMap labels, PaletteRef palette);

  int width() const { return static_cast<int>(labels.cols()); }
  int height() const { return static_cast<int>(labels.rows()); }
  ClassIndex operator()(int row, int col) const { return labels(row, col); }
  ClassIndex& operator()(int row, int col) { return labels(row, col); }

  /// Throws a palette error if any index is outside the palette.
  void validate() const;
};

bool same_palette(const SemanticImage& a, const SemanticImage& b);

}  // namespace bev
