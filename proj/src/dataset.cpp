#include "bev/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "bev/occlusion.hpp"
#include "bev/scene.hpp"
#include "bev/semantics_io.hpp"
#include "bev/warp.hpp"

namespace bev {

namespace {

[[noreturn]] void manifest_error(const std::string& msg) { throw Error(ErrorKind::Manifest, msg); }

}  // namespace

std::vector<const ManifestEntry*> Manifest::split(const std::string& tag) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& s : samples) {
    if (tag == "all" || s.split == tag) out.push_back(&s);
  }
  return out;
}

Manifest Manifest::load(const std::filesystem::path& dir) {
  const auto path = dir / kManifestFile;
  std::ifstream is(path);
  if (!is) manifest_error("cannot open " + path.string());
  Manifest m;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto bad = [&](const std::string& why) {
      manifest_error(path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    if (key == "birdseye-manifest") {
      int version = 0;
      ls >> version;
      if (version != 1) bad("unsupported manifest version");
      header = true;
    } else if (key == "seed") {
      if (!(ls >> m.seed)) bad("malformed seed");
    } else if (key == "palette") {
      ls >> m.palette_file;
    } else if (key == "rig") {
      ls >> m.rig_file;
    } else if (key == "sample") {
      ManifestEntry e;
      if (!(ls >> e.id >> e.split)) bad("sample needs an id and a split tag");
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) bad("expected key=path, got '" + kv + "'");
        e.files[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      m.samples.push_back(std::move(e));
    } else {
      bad("unknown record '" + key + "'");
    }
  }
  if (!header) manifest_error(path.string() + " lacks the birdseye-manifest header");
  return m;
}

void Manifest::save(const std::filesystem::path& dir) const {
  const auto path = dir / kManifestFile;
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    os << "birdseye-manifest 1\n";
    os << "seed " << seed << '\n';
    os << "palette " << palette_file << '\n';
    os << "rig " << rig_file << '\n';
    for (const auto& s : samples) {
      os << "sample " << s.id << ' ' << s.split;
      for (const auto& [k, v] : s.files) os << ' ' << k << '=' << v;
      os << '\n';
    }
    if (!os.flush()) throw Error(ErrorKind::Io, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string sample_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  return buf;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::vector<std::string> split_tags(std::size_t count, double train_fraction) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw Error(ErrorKind::Configuration, "train fraction must lie in [0, 1]");
  }
  const auto train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(count)));
  std::vector<std::string> tags(count, "val");
  for (std::size_t i = 0; i < std::min(train, count); ++i) tags[i] = "train";
  return tags;
}

double parse_split_fractions(const std::string& text) {
  const auto sep = text.find_first_of("/,");
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || !(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorKind::Configuration, "invalid split '" + text + "'; expected e.g. 0.9/0.1");
    }
    return v;
  };
  const double train = number(text.substr(0, sep));
  if (sep != std::string::npos) {
    const double val = number(text.substr(sep + 1));
    if (std::abs(train + val - 1.0) > 1e-9) {
      throw Error(ErrorKind::Configuration, "split fractions '" + text + "' must sum to 1");
    }
  }
  return train;
}

GeneratedSample generate_sample(const PipelineConfig& cfg, std::uint64_t seed, std::size_t index) {
  const std::uint64_t base = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index)));
  constexpr int kAttempts = 16;
  for (int attempt = 0;; ++attempt) {
    ToyScene scene;
    try {
      scene = generate_scene(splitmix64(base + static_cast<std::uint64_t>(attempt)), cfg.scene, cfg.grid,
                             cfg.palette, cfg.policy);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Generation || attempt + 1 >= kAttempts) throw;
      continue;
    }
    GeneratedSample out;
    for (const auto& cam : cfg.rig) out.cameras.emplace(cam.name, render_camera(scene, cam, cfg.sky()));
    out.bev = render_bev_gt(scene);
    std::vector<CameraMountBev> mounts;
    for (const auto& cam : cfg.rig) mounts.push_back(mount_from_camera(cam, cfg.grid));
    out.occluded = label_occlusion(out.bev, mounts, cfg.policy);
    return out;
  }
}

std::vector<std::string> rig_priority(const std::vector<CameraModel>& rig) {
  std::vector<std::string> names;
  for (const auto& cam : rig) names.push_back(cam.name);
  return names;
}

CropResize CropResize::center(int src_w, int src_h, int out_w, int out_h) {
  if (src_w <= 0 || src_h <= 0 || out_w <= 0 || out_h <= 0) {
    throw Error(ErrorKind::Shape, "crop sizes must be positive");
  }
  CropResize cr;
  cr.out_w = out_w;
  cr.out_h = out_h;
  // Compare src_w / src_h against out_w / out_h without rounding.
  if (static_cast<long long>(src_w) * out_h >= static_cast<long long>(src_h) * out_w) {
    cr.crop_h = src_h;
    cr.crop_w = static_cast<int>(std::lround(static_cast<double>(src_h) * out_w / out_h));
  } else {
    cr.crop_w = src_w;
    cr.crop_h = static_cast<int>(std::lround(static_cast<double>(src_w) * out_h / out_w));
  }
  cr.crop_w = std::clamp(cr.crop_w, 1, src_w);
  cr.crop_h = std::clamp(cr.crop_h, 1, src_h);
  cr.x0 = (src_w - cr.crop_w) / 2;
  cr.y0 = (src_h - cr.crop_h) / 2;
  return cr;
}

Eigen::Matrix3d CropResize::output_to_source() const {
  Eigen::Matrix3d a = Eigen::Matrix3d::Identity();
  a(0, 0) = static_cast<double>(crop_w) / out_w;
  a(1, 1) = static_cast<double>(crop_h) / out_h;
  a(0, 2) = x0;
  a(1, 2) = y0;
  return a;
}

SemanticImage crop_resize(const SemanticImage& src, const CropResize& cr) {
  if (cr.x0 < 0 || cr.y0 < 0 || cr.x0 + cr.crop_w > src.width() || cr.y0 + cr.crop_h > src.height()) {
    throw Error(ErrorKind::Shape, "crop window exceeds the image");
  }
  SemanticImage out(cr.out_w, cr.out_h, src.palette);
  for (int i = 0; i < cr.out_h; ++i) {
    const int r = cr.y0 + static_cast<int>((i + 0.5) * cr.crop_h / cr.out_h);
    for (int j = 0; j < cr.out_w; ++j) {
      out(i, j) = src(r, cr.x0 + static_cast<int>((j + 0.5) * cr.crop_w / cr.out_w));
    }
  }
  return out;
}

Eigen::Matrix3d normalize_pixels(int width, int height) {
  Eigen::Matrix3d n = Eigen::Matrix3d::Identity();
  n(0, 0) = 2.0 / width;
  n(1, 1) = 2.0 / height;
  n(0, 2) = -1.0;
  n(1, 2) = -1.0;
  return n;
}

Eigen::Matrix3d network_homography(const CameraModel& cam, const BevGrid& grid, const CropResize& cam_crop,
                                   const CropResize& bev_crop) {
  const IpmHomography hom = ipm_homography(cam, grid);
  return normalize_pixels(cam_crop.out_w, cam_crop.out_h) * cam_crop.output_to_source().inverse() *
         hom.image_from_bev * bev_crop.output_to_source() *
         normalize_pixels(bev_crop.out_w, bev_crop.out_h).inverse();
}

PreparedSet load_prepared(const PipelineConfig& cfg, const std::filesystem::path& dataset_dir,
                          const std::string& split) {
  const Manifest manifest = Manifest::load(dataset_dir);
  const PaletteRef palette = load_palette(dataset_dir / manifest.palette_file);
  const std::vector<CameraModel> rig = load_rig(dataset_dir / manifest.rig_file);
  const int out_w = cfg.network.input_width;
  const int out_h = cfg.network.input_height;

  PreparedSet set;
  set.rig = rig;
  set.palette = palette;
  set.bev_crop = CropResize::center(cfg.grid.cols(), cfg.grid.rows(), out_w, out_h);
  for (const auto& cam : rig) set.camera_crops[cam.name] = CropResize::center(cam.width, cam.height, out_w, out_h);
  const ClassIndex fill = palette->occluded();

  for (const ManifestEntry* e : manifest.split(split)) {
    auto load = [&](const std::string& key) {
      const auto it = e->files.find(key);
      if (it == e->files.end()) manifest_error("sample " + e->id + " has no '" + key + "' entry");
      const auto path = dataset_dir / it->second;
      if (!std::filesystem::exists(path)) manifest_error("sample " + e->id + ": missing file " + path.string());
      return load_label_png(path, palette);
    };
    PreparedSample s;
    s.id = e->id;
    std::vector<SemanticImage> views;
    for (const auto& cam : rig) {
      SemanticImage full = load(cam.name);
      if (full.width() != cam.width || full.height() != cam.height) {
        manifest_error("sample " + e->id + ": image '" + cam.name + "' does not match the rig resolution");
      }
      s.inputs.emplace(cam.name, crop_resize(full, set.camera_crops.at(cam.name)));
      views.push_back(std::move(full));
    }
    SemanticImage target = load(kOccludedKey);
    if (target.width() != cfg.grid.cols() || target.height() != cfg.grid.rows()) {
      manifest_error("sample " + e->id + ": label size does not match the configured BEV grid");
    }
    s.target = crop_resize(target, set.bev_crop);
    SemanticImage stitched = e->files.count(kHomographyKey) ? load(kHomographyKey)
                                                            : homography_image(rig, views, cfg.grid, fill, rig_priority(rig));
    s.baseline = crop_resize(stitched, set.bev_crop);
    s.inputs.emplace(kHomographyKey, s.baseline);
    set.samples.push_back(std::move(s));
  }
  return set;
}

}  // namespace bev
