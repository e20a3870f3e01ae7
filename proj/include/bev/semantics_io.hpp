#pragma once

// Palette files, color <-> index conversion, one-hot planes, class weights
// and lossless PNG label storage.

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "bev/semantic_image.hpp"

namespace bev {

/// 8-bit interleaved RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Rgb at(int row, int col) const {
    const std::size_t o = 3 * (static_cast<std::size_t>(row) * width + col);
    return {data[o], data[o + 1], data[o + 2]};
  }
};

/// One plane per class, each row holding the H*W pixels of that plane.
template <class Scalar>
using Planes = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RgbImage index_to_color(const SemanticImage& img);

/// Strict mode rejects colors missing from the palette; otherwise they map
/// to `fallback`.
SemanticImage color_to_index(const RgbImage& img, PaletteRef palette, bool strict = true,
                             ClassIndex fallback = 0);

template <class Scalar>
Planes<Scalar> encode_onehot(const SemanticImage& img) {
  Planes<Scalar> planes = Planes<Scalar>::Zero(static_cast<Eigen::Index>(img.palette->size()),
                                                static_cast<Eigen::Index>(img.labels.size()));
  const ClassIndex* src = img.labels.data();
  for (Eigen::Index p = 0; p < planes.cols(); ++p) planes(src[p], p) = Scalar(1);
  return planes;
}

/// Per-pixel argmax; ties go to the lowest class index.
template <class Scalar>
SemanticImage decode_argmax(const Eigen::Ref<const Planes<Scalar>>& logits, int width, int height,
                            PaletteRef palette);

/// Class weights w_c = 1 / ln(k + f_c) from per-class pixel counts.
Eigen::VectorXd class_weights(std::span<const std::uint64_t> counts, double k = 1.02);

void count_classes(const SemanticImage& img, std::span<std::uint64_t> counts);

/// Palette text format, one class per line: `name #RRGGBB [object]`.
Palette parse_palette(std::string_view text);
std::string format_palette(const Palette& palette);
PaletteRef load_palette(const std::filesystem::path& path);

enum class PngLayout { Rgb, Indexed };

void save_rgb_png(const std::filesystem::path& path, const RgbImage& img);
RgbImage load_rgb_png(const std::filesystem::path& path);

void save_label_png(const std::filesystem::path& path, const SemanticImage& img,
                    PngLayout layout = PngLayout::Rgb);
/// Reads RGB label PNGs, or indexed PNGs whose palette matches exactly.
SemanticImage load_label_png(const std::filesystem::path& path, PaletteRef palette);

}  // namespace bev
