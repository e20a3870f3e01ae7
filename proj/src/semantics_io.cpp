#include "bev/semantics_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <png.h>

#include "bev/error.hpp"

namespace bev {

// ---------------------------------------------------------------------------
// Palette and SemanticImage

Palette::Palette(std::vector<ClassDef> classes) : classes_(std::move(classes)) {
  if (classes_.empty() || classes_.size() > 255) {
    throw Error(ErrorKind::Palette, "palette must hold between 1 and 255 classes");
  }
  std::set<std::string> names;
  std::set<Rgb> colors;
  int occluded_count = 0;
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    const auto& c = classes_[i];
    if (!names.insert(c.name).second) throw Error(ErrorKind::Palette, "duplicate class name '" + c.name + "'");
    if (!colors.insert(c.color).second) throw Error(ErrorKind::Palette, "duplicate color for class '" + c.name + "'");
    if (c.name == "occluded") {
      ++occluded_count;
      occluded_ = static_cast<ClassIndex>(i);
    }
  }
  if (occluded_count != 1) throw Error(ErrorKind::Palette, "palette must contain exactly one 'occluded' class");
}

std::shared_ptr<const Palette> Palette::standard() {
  static const auto palette = std::make_shared<const Palette>(std::vector<ClassDef>{
      {"road", {128, 64, 128}, false},
      {"sidewalk", {244, 35, 232}, false},
      {"person", {220, 20, 60}, true},
      {"car", {0, 0, 142}, true},
      {"truck", {0, 0, 70}, true},
      {"bus", {0, 60, 100}, true},
      {"bike", {255, 0, 0}, true},
      {"obstacle", {0, 0, 0}, false},
      {"vegetation", {107, 142, 35}, false},
      {"occluded", {150, 150, 150}, false},
  });
  return palette;
}

std::optional<ClassIndex> Palette::find(std::string_view name) const {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (classes_[i].name == name) return static_cast<ClassIndex>(i);
  }
  return std::nullopt;
}

ClassIndex Palette::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw Error(ErrorKind::Palette, "unknown class '" + std::string(name) + "'");
}

std::optional<ClassIndex> Palette::find_color(const Rgb& color) const {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (classes_[i].color == color) return static_cast<ClassIndex>(i);
  }
  return std::nullopt;
}

SemanticImage::SemanticImage(int width, int height, PaletteRef palette_, ClassIndex fill)
    : labels(LabelMap::Constant(height, width, fill)), palette(std::move(palette_)) {}

SemanticImage::SemanticImage(LabelMap labels_, PaletteRef palette_)
    : labels(std::move(labels_)), palette(std::move(palette_)) {}

void SemanticImage::validate() const {
  if (!palette) throw Error(ErrorKind::Palette, "image has no palette");
  if (labels.size() > 0 && labels.maxCoeff() >= palette->size()) {
    throw Error(ErrorKind::Palette, "class index outside palette");
  }
}

bool same_palette(const SemanticImage& a, const SemanticImage& b) {
  if (a.palette == b.palette) return true;
  return a.palette && b.palette && *a.palette == *b.palette;
}

// ---------------------------------------------------------------------------
// Color conversion

RgbImage index_to_color(const SemanticImage& img) {
  img.validate();
  RgbImage out{img.width(), img.height(), {}};
  out.data.resize(3 * static_cast<std::size_t>(img.labels.size()));
  const ClassIndex* src = img.labels.data();
  for (Eigen::Index p = 0; p < img.labels.size(); ++p) {
    const Rgb& c = (*img.palette)[src[p]].color;
    std::memcpy(&out.data[3 * p], c.data(), 3);
  }
  return out;
}

SemanticImage color_to_index(const RgbImage& img, PaletteRef palette, bool strict, ClassIndex fallback) {
  SemanticImage out(img.width, img.height, palette);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const Rgb color = img.at(r, c);
      if (auto idx = palette->find_color(color)) {
        out(r, c) = *idx;
      } else if (strict) {
        std::ostringstream os;
        os << "color (" << int(color[0]) << "," << int(color[1]) << "," << int(color[2])
           << ") at pixel (row " << r << ", col " << c << ") is not in the palette";
        throw Error(ErrorKind::Decode, os.str());
      } else {
        out(r, c) = fallback;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// One-hot / argmax

template <class Scalar>
SemanticImage decode_argmax(const Eigen::Ref<const Planes<Scalar>>& logits, int width, int height,
                            PaletteRef palette) {
  if (logits.rows() != static_cast<Eigen::Index>(palette->size()) ||
      logits.cols() != static_cast<Eigen::Index>(width) * height) {
    throw Error(ErrorKind::Shape, "logit planes do not match palette size and image dimensions");
  }
  SemanticImage out(width, height, palette);
  ClassIndex* dst = out.labels.data();
  for (Eigen::Index p = 0; p < logits.cols(); ++p) {
    Eigen::Index best = 0;
    Scalar best_value = logits(0, p);
    for (Eigen::Index c = 1; c < logits.rows(); ++c) {
      if (logits(c, p) > best_value) {
        best_value = logits(c, p);
        best = c;
      }
    }
    dst[p] = static_cast<ClassIndex>(best);
  }
  return out;
}

template SemanticImage decode_argmax<float>(const Eigen::Ref<const Planes<float>>&, int, int, PaletteRef);
template SemanticImage decode_argmax<double>(const Eigen::Ref<const Planes<double>>&, int, int, PaletteRef);

// ---------------------------------------------------------------------------
// Class weights

Eigen::VectorXd class_weights(std::span<const std::uint64_t> counts, double k) {
  if (!(k > 1.0)) throw Error(ErrorKind::Configuration, "class weight constant k must exceed 1");
  std::uint64_t total = 0;
  for (auto n : counts) total += n;
  if (counts.empty() || total == 0) throw Error(ErrorKind::Configuration, "class weights need at least one pixel");
  Eigen::VectorXd w(static_cast<Eigen::Index>(counts.size()));
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double f = static_cast<double>(counts[c]) / static_cast<double>(total);
    w(static_cast<Eigen::Index>(c)) = 1.0 / std::log(k + f);
  }
  return w;
}

void count_classes(const SemanticImage& img, std::span<std::uint64_t> counts) {
  const ClassIndex* src = img.labels.data();
  for (Eigen::Index p = 0; p < img.labels.size(); ++p) {
    if (src[p] >= counts.size()) throw Error(ErrorKind::Palette, "class index outside histogram");
    ++counts[src[p]];
  }
}

// ---------------------------------------------------------------------------
// Palette files

Palette parse_palette(std::string_view text) {
  std::vector<ClassDef> classes;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find("//"); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string name, hex, flag;
    if (!(fields >> name)) continue;
    if (!(fields >> hex) || hex.size() != 7 || hex[0] != '#') {
      throw Error(ErrorKind::Palette, "line " + std::to_string(line_no) + ": expected `name #RRGGBB [object]`");
    }
    ClassDef def;
    def.name = name;
    for (int i = 0; i < 3; ++i) {
      def.color[i] = static_cast<std::uint8_t>(std::stoi(hex.substr(1 + 2 * i, 2), nullptr, 16));
    }
    while (fields >> flag) {
      if (flag == "object") {
        def.is_object = true;
      } else {
        throw Error(ErrorKind::Palette, "line " + std::to_string(line_no) + ": unknown flag '" + flag + "'");
      }
    }
    classes.push_back(std::move(def));
  }
  return Palette(std::move(classes));
}

std::string format_palette(const Palette& palette) {
  std::ostringstream os;
  for (const auto& c : palette.classes()) {
    os << c.name << " #" << std::hex << std::uppercase << std::setfill('0');
    for (auto v : c.color) os << std::setw(2) << int(v);
    os << std::dec;
    if (c.is_object) os << " object";
    os << '\n';
  }
  return os.str();
}

PaletteRef load_palette(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open palette file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return std::make_shared<const Palette>(parse_palette(ss.str()));
}

// ---------------------------------------------------------------------------
// PNG

namespace {

// Writes next to the destination and renames, so readers never see a
// truncated file after an interrupted run.
void write_png(const std::filesystem::path& path, png_image& image, const void* buffer, const void* colormap) {
  auto tmp = path;
  tmp += ".partial";
  if (!png_image_write_to_file(&image, tmp.c_str(), 0, buffer, 0, colormap)) {
    std::string msg = image.message;
    png_image_free(&image);
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw Error(ErrorKind::Io, "cannot write " + path.string() + ": " + msg);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void save_rgb_png(const std::filesystem::path& path, const RgbImage& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  write_png(path, image, img.data.data(), nullptr);
}

RgbImage load_rgb_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorKind::Decode, "cannot read " + path.string() + ": " + msg);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out{static_cast<int>(image.width), static_cast<int>(image.height), {}};
  out.data.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorKind::Decode, "cannot decode " + path.string() + ": " + msg);
  }
  return out;
}

void save_label_png(const std::filesystem::path& path, const SemanticImage& img, PngLayout layout) {
  if (layout == PngLayout::Rgb) {
    save_rgb_png(path, index_to_color(img));
    return;
  }
  img.validate();
  std::vector<std::uint8_t> colormap;
  for (const auto& c : img.palette->classes()) colormap.insert(colormap.end(), c.color.begin(), c.color.end());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB_COLORMAP;
  image.colormap_entries = static_cast<png_uint_32>(img.palette->size());
  write_png(path, image, img.labels.data(), colormap.data());
}

SemanticImage load_label_png(const std::filesystem::path& path, PaletteRef palette) {
  // Indexed files are expanded to RGB and matched against the palette colors,
  // which are unique, so both layouts decode to the same indices.
  return color_to_index(load_rgb_png(path), std::move(palette), true);
}

}  // namespace bev
