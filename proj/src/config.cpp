#include "bev/config.hpp"

#include <fstream>

#include "bev/semantics_io.hpp"
#include "bev/unetxst.hpp"

namespace bev {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::Configuration, msg); }

json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) config_error("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    config_error(path.string() + ": " + e.what());
  }
}

/// Reads `key` from `obj` into `out` when present, naming the section on type errors.
template <class T>
void take(const json& obj, const char* section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(std::string(section) + "." + key + " has the wrong type");
  }
}

const json& section(const json& doc, const char* name) {
  static const json empty = json::object();
  if (!doc.contains(name)) return empty;
  if (!doc.at(name).is_object()) config_error(std::string("section '") + name + "' must be an object");
  return doc.at(name);
}

void reject_unknown(const json& obj, const char* where, std::initializer_list<const char*> known) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) config_error(std::string("unknown key '") + key + "' in " + where);
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

const char* rule_name(BlockRule r) {
  switch (r) {
    case BlockRule::AlwaysBlocks: return "always_blocks";
    case BlockRule::NeverBlocks: return "never_blocks";
    case BlockRule::BlocksExceptTaller: return "blocks_except_taller";
  }
  return "?";
}

}  // namespace

void TrainConfig::validate() const {
  adam.validate();
  if (batch_size < 1) config_error("batch_size must be positive");
  if (epochs < 1) config_error("epochs must be positive");
  if (patience < 1) config_error("patience must be positive");
  if (max_steps < 0) config_error("max_steps must be non-negative");
  if (!(weight_k > 1.0)) config_error("weight_k must exceed 1");
}

void PipelineConfig::validate() const {
  if (!palette) config_error("no palette");
  if (rig.empty()) config_error("the rig has no cameras");
  grid.validate();
  scene.validate();
  training.validate();
  if (policy.size() != palette->size()) config_error("policy does not match the palette");
  palette->index_of(sky_class);
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) config_error("train_fraction must lie in [0, 1]");
  NetworkConfig probe;
  probe.levels = network.levels;
  probe.base_channels = network.base_channels;
  probe.input_width = network.input_width;
  probe.input_height = network.input_height;
  probe.variant = Variant::MultiInputPlain;
  probe.input_cameras = {"probe"};
  probe.validate();
  for (const auto& cam : rig) {
    if (cam.width <= 0 || cam.height <= 0) config_error("camera '" + cam.name + "' has no resolution");
    if (!(cam.fov_deg > 0.0 && cam.fov_deg < 180.0)) config_error("camera '" + cam.name + "' needs 0 < fov < 180");
  }
}

PipelineConfig default_config() {
  PipelineConfig c;
  c.rig = default_rig();
  c.palette = Palette::standard();
  c.policy = OcclusionPolicy::standard(c.palette);
  return c;
}

std::vector<CameraModel> rig_from_json(const json& doc) {
  if (!doc.contains("cameras") || !doc.at("cameras").is_array() || doc.at("cameras").empty()) {
    config_error("rig needs a non-empty 'cameras' array");
  }
  std::vector<CameraModel> rig;
  for (const auto& j : doc.at("cameras")) {
    CameraModel cam;
    double yaw = 0.0, pitch = 0.0, roll = 0.0;
    std::vector<double> position{0.0, 0.0, 0.0};
    take(j, "camera", "name", cam.name);
    take(j, "camera", "width", cam.width);
    take(j, "camera", "height", cam.height);
    take(j, "camera", "hfov_deg", cam.fov_deg);
    take(j, "camera", "yaw_deg", yaw);
    take(j, "camera", "pitch_deg", pitch);
    take(j, "camera", "roll_deg", roll);
    take(j, "camera", "position", position);
    if (cam.name.empty()) config_error("every camera needs a name");
    if (position.size() != 3) config_error("camera '" + cam.name + "' position needs 3 values");
    const Eigen::Vector3d c(position[0], position[1], position[2]);
    if (j.contains("rotation")) {
      std::vector<double> r;
      take(j, "camera", "rotation", r);
      if (r.size() != 9) config_error("camera '" + cam.name + "' rotation needs 9 values");
      const Eigen::Matrix3d rot = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(r.data());
      cam.extrinsics = Extrinsics(rot, -rot * c);
    } else {
      cam.extrinsics = Extrinsics::from_pose(yaw, pitch, roll, c);
    }
    if (j.contains("intrinsics")) {
      const json& in = j.at("intrinsics");
      take(in, "intrinsics", "focal_u", cam.intrinsics.focal_u);
      take(in, "intrinsics", "focal_v", cam.intrinsics.focal_v);
      take(in, "intrinsics", "center_u", cam.intrinsics.center_u);
      take(in, "intrinsics", "center_v", cam.intrinsics.center_v);
      take(in, "intrinsics", "skew", cam.intrinsics.skew);
    } else {
      cam.intrinsics = Intrinsics::from_fov(cam.fov_deg, cam.width, cam.height);
    }
    rig.push_back(cam);
  }
  return rig;
}

json rig_to_json(const std::vector<CameraModel>& rig) {
  json cams = json::array();
  for (const auto& cam : rig) {
    const Eigen::Vector3d c = cam.extrinsics.center();
    const Eigen::Matrix3d& r = cam.extrinsics.rotation();
    cams.push_back({{"name", cam.name},
                    {"width", cam.width},
                    {"height", cam.height},
                    {"hfov_deg", cam.fov_deg},
                    {"position", {c.x(), c.y(), c.z()}},
                    {"rotation", {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2)}},
                    {"intrinsics",
                     {{"focal_u", cam.intrinsics.focal_u},
                      {"focal_v", cam.intrinsics.focal_v},
                      {"center_u", cam.intrinsics.center_u},
                      {"center_v", cam.intrinsics.center_v},
                      {"skew", cam.intrinsics.skew}}}});
  }
  return {{"cameras", cams}};
}

std::vector<CameraModel> load_rig(const std::filesystem::path& path) { return rig_from_json(read_json(path)); }

OcclusionPolicy policy_from_json(const json& doc, PaletteRef palette) {
  if (!doc.contains("classes") || !doc.at("classes").is_object()) config_error("policy needs a 'classes' object");
  const json& classes = doc.at("classes");
  std::vector<ClassRule> rules(palette->size());
  for (std::size_t c = 0; c < palette->size(); ++c) {
    const std::string& name = (*palette)[c].name;
    if (!classes.contains(name)) config_error("policy has no rule for class '" + name + "'");
    const json& j = classes.at(name);
    std::string rule;
    take(j, "policy", "rule", rule);
    if (rule == "always_blocks") {
      rules[c].rule = BlockRule::AlwaysBlocks;
    } else if (rule == "never_blocks") {
      rules[c].rule = BlockRule::NeverBlocks;
    } else if (rule == "blocks_except_taller") {
      rules[c].rule = BlockRule::BlocksExceptTaller;
    } else {
      config_error("class '" + name + "' has unknown rule '" + rule + "'");
    }
    std::vector<std::string> taller;
    take(j, "policy", "taller", taller);
    for (const auto& t : taller) {
      auto idx = palette->find(t);
      if (!idx) config_error("taller-set of '" + name + "' names unknown class '" + t + "'");
      rules[c].taller.push_back(*idx);
    }
    if (j.contains("height_m")) {
      double h = 0.0;
      take(j, "policy", "height_m", h);
      rules[c].height_m = h;
    }
  }
  for (const auto& [key, value] : classes.items()) {
    if (!palette->find(key)) config_error("policy names class '" + key + "' missing from the palette");
  }
  return OcclusionPolicy(std::move(palette), std::move(rules));
}

json policy_to_json(const OcclusionPolicy& policy) {
  json classes = json::object();
  const Palette& pal = *policy.palette();
  for (std::size_t c = 0; c < pal.size(); ++c) {
    const ClassRule& r = policy[static_cast<ClassIndex>(c)];
    json j{{"rule", rule_name(r.rule)}};
    if (!r.taller.empty()) {
      json t = json::array();
      for (ClassIndex k : r.taller) t.push_back(pal[k].name);
      j["taller"] = t;
    }
    if (r.height_m) j["height_m"] = *r.height_m;
    classes[pal[c].name] = j;
  }
  return {{"classes", classes}};
}

PipelineConfig config_from_json(const json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) config_error("configuration must be a JSON object");
  reject_unknown(doc, "configuration",
                 {"camera_geometry", "semantics_io", "occlusion_labeler", "scene_synth", "unetxst", "cli"});
  PipelineConfig c = default_config();
  c.base_dir = base_dir;

  const json& cg = section(doc, "camera_geometry");
  reject_unknown(cg, "camera_geometry", {"rig", "grid"});
  if (cg.contains("rig") && cg.at("rig").is_object()) {
    c.rig = rig_from_json(cg.at("rig"));
  } else if (cg.contains("rig")) {
    std::string p;
    take(cg, "camera_geometry", "rig", p);
    c.rig_file = resolve(base_dir, p);
    c.rig = load_rig(*c.rig_file);
  }
  if (cg.contains("grid")) {
    const json& g = cg.at("grid");
    reject_unknown(g, "camera_geometry.grid", {"width_m", "height_m", "px_per_m", "origin"});
    take(g, "grid", "width_m", c.grid.width_m);
    take(g, "grid", "height_m", c.grid.height_m);
    take(g, "grid", "px_per_m", c.grid.px_per_m);
    std::string origin = "centered";
    take(g, "grid", "origin", origin);
    if (origin == "centered") {
      c.grid.origin = GridOrigin::Centered;
    } else if (origin == "edge_aligned") {
      c.grid.origin = GridOrigin::EdgeAligned;
    } else {
      config_error("grid origin must be 'centered' or 'edge_aligned'");
    }
  }

  const json& sio = section(doc, "semantics_io");
  reject_unknown(sio, "semantics_io", {"palette", "palette_text", "weight_k", "weight_occluded"});
  if (sio.contains("palette_text")) {
    std::string text;
    take(sio, "semantics_io", "palette_text", text);
    c.palette = std::make_shared<const Palette>(parse_palette(text));
    c.policy = OcclusionPolicy::standard(c.palette);
  } else if (sio.contains("palette")) {
    std::string p;
    take(sio, "semantics_io", "palette", p);
    c.palette_file = resolve(base_dir, p);
    c.palette = load_palette(*c.palette_file);
    c.policy = OcclusionPolicy::standard(c.palette);
  }
  take(sio, "semantics_io", "weight_k", c.training.weight_k);
  take(sio, "semantics_io", "weight_occluded", c.training.weight_occluded);

  const json& occ = section(doc, "occlusion_labeler");
  reject_unknown(occ, "occlusion_labeler", {"policy"});
  if (occ.contains("policy") && occ.at("policy").is_object()) {
    c.policy = policy_from_json(occ.at("policy"), c.palette);
  } else if (occ.contains("policy")) {
    std::string p;
    take(occ, "occlusion_labeler", "policy", p);
    c.policy_file = resolve(base_dir, p);
    c.policy = policy_from_json(read_json(*c.policy_file), c.palette);
  }

  const json& sc = section(doc, "scene_synth");
  reject_unknown(sc, "scene_synth",
                 {"density", "vehicle_density", "pedestrian_density", "static_density", "road_width_min",
                  "road_width_max", "road_offset_max", "sidewalk_width_min", "sidewalk_width_max", "max_retries",
                  "sky"});
  take(sc, "scene_synth", "density", c.scene.density);
  take(sc, "scene_synth", "vehicle_density", c.scene.vehicle_density);
  take(sc, "scene_synth", "pedestrian_density", c.scene.pedestrian_density);
  take(sc, "scene_synth", "static_density", c.scene.static_density);
  take(sc, "scene_synth", "road_width_min", c.scene.road_width_min);
  take(sc, "scene_synth", "road_width_max", c.scene.road_width_max);
  take(sc, "scene_synth", "road_offset_max", c.scene.road_offset_max);
  take(sc, "scene_synth", "sidewalk_width_min", c.scene.sidewalk_width_min);
  take(sc, "scene_synth", "sidewalk_width_max", c.scene.sidewalk_width_max);
  take(sc, "scene_synth", "max_retries", c.scene.max_retries);
  take(sc, "scene_synth", "sky", c.sky_class);

  const json& net = section(doc, "unetxst");
  reject_unknown(net, "unetxst", {"network", "training"});
  if (net.contains("network")) {
    const json& n = net.at("network");
    reject_unknown(n, "unetxst.network", {"levels", "base_channels", "input_width", "input_height"});
    take(n, "network", "levels", c.network.levels);
    take(n, "network", "base_channels", c.network.base_channels);
    take(n, "network", "input_width", c.network.input_width);
    take(n, "network", "input_height", c.network.input_height);
  }
  if (net.contains("training")) {
    const json& t = net.at("training");
    reject_unknown(t, "unetxst.training",
                   {"lr", "beta1", "beta2", "eps", "batch_size", "epochs", "patience", "max_steps", "seed"});
    take(t, "training", "lr", c.training.adam.lr);
    take(t, "training", "beta1", c.training.adam.beta1);
    take(t, "training", "beta2", c.training.adam.beta2);
    take(t, "training", "eps", c.training.adam.eps);
    take(t, "training", "batch_size", c.training.batch_size);
    take(t, "training", "epochs", c.training.epochs);
    take(t, "training", "patience", c.training.patience);
    take(t, "training", "max_steps", c.training.max_steps);
    take(t, "training", "seed", c.training.seed);
  }

  const json& cli = section(doc, "cli");
  reject_unknown(cli, "cli", {"seed", "dataset_dir", "run_dir", "train_fraction"});
  take(cli, "cli", "seed", c.seed);
  std::string dir;
  if (cli.contains("dataset_dir")) {
    take(cli, "cli", "dataset_dir", dir);
    c.dataset_dir = resolve(base_dir, dir);
  } else {
    c.dataset_dir = (base_dir / c.dataset_dir).lexically_normal();
  }
  if (cli.contains("run_dir")) {
    take(cli, "cli", "run_dir", dir);
    c.run_dir = resolve(base_dir, dir);
  } else {
    c.run_dir = (base_dir / c.run_dir).lexically_normal();
  }
  take(cli, "cli", "train_fraction", c.train_fraction);

  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return config_from_json(read_json(path), base);
}

json PipelineConfig::to_json() const {
  json doc;
  doc["camera_geometry"]["grid"] = {{"width_m", grid.width_m},
                                    {"height_m", grid.height_m},
                                    {"px_per_m", grid.px_per_m},
                                    {"origin", grid.origin == GridOrigin::Centered ? "centered" : "edge_aligned"}};
  doc["camera_geometry"]["rig"] = rig_to_json(rig);
  doc["semantics_io"] = {{"palette_text", format_palette(*palette)},
                         {"weight_k", training.weight_k},
                         {"weight_occluded", training.weight_occluded}};
  doc["occlusion_labeler"]["policy"] = policy_to_json(policy);
  doc["scene_synth"] = {{"density", scene.density},
                        {"vehicle_density", scene.vehicle_density},
                        {"pedestrian_density", scene.pedestrian_density},
                        {"static_density", scene.static_density},
                        {"road_width_min", scene.road_width_min},
                        {"road_width_max", scene.road_width_max},
                        {"road_offset_max", scene.road_offset_max},
                        {"sidewalk_width_min", scene.sidewalk_width_min},
                        {"sidewalk_width_max", scene.sidewalk_width_max},
                        {"max_retries", scene.max_retries},
                        {"sky", sky_class}};
  doc["unetxst"]["network"] = {{"levels", network.levels},
                               {"base_channels", network.base_channels},
                               {"input_width", network.input_width},
                               {"input_height", network.input_height}};
  doc["unetxst"]["training"] = {{"lr", training.adam.lr},
                                {"beta1", training.adam.beta1},
                                {"beta2", training.adam.beta2},
                                {"eps", training.adam.eps},
                                {"batch_size", training.batch_size},
                                {"epochs", training.epochs},
                                {"patience", training.patience},
                                {"max_steps", training.max_steps},
                                {"seed", training.seed}};
  doc["cli"] = {{"seed", seed},
                {"dataset_dir", std::filesystem::absolute(dataset_dir).lexically_normal().string()},
                {"run_dir", std::filesystem::absolute(run_dir).lexically_normal().string()},
                {"train_fraction", train_fraction}};
  return doc;
}

}  // namespace bev
