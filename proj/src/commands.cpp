#include "bev/commands.hpp"

#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#include "bev/checkpoint.hpp"
#include "bev/dataset.hpp"
#include "bev/metrics.hpp"
#include "bev/occlusion.hpp"
#include "bev/semantics_io.hpp"
#include "bev/training.hpp"
#include "bev/unetxst.hpp"
#include "bev/warp.hpp"

namespace bev {

namespace {

namespace fs = std::filesystem;

void write_text_atomic(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    os << text;
    if (!os.flush()) throw Error(ErrorKind::Io, "cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

fs::path sample_dir(const std::string& id) { return fs::path("samples") / id; }

std::map<std::string, std::string> sample_files(const std::vector<CameraModel>& rig, const std::string& id) {
  std::map<std::string, std::string> files;
  const fs::path d = sample_dir(id);
  for (const auto& cam : rig) files[cam.name] = (d / (cam.name + ".png")).generic_string();
  files[kBevKey] = (d / "bev.png").generic_string();
  files[kOccludedKey] = (d / "occluded.png").generic_string();
  return files;
}

// Checks that a dataset was produced with the palette the configuration uses,
// since the occlusion policy and the class weights are defined over it.
PaletteRef dataset_palette(const PipelineConfig& cfg, const fs::path& dir, const Manifest& manifest) {
  PaletteRef palette = load_palette(dir / manifest.palette_file);
  if (!(*palette == *cfg.palette)) {
    throw Error(ErrorKind::Configuration, "dataset palette in " + dir.string() + " differs from the configured one");
  }
  return palette;
}

Model<float> load_model(const fs::path& checkpoint) { return Model<float>::from_arrays(load_checkpoint(checkpoint)); }

// Evaluation and prediction must crop to the resolution the model was
// trained at, whatever the configuration says.
PipelineConfig with_model_shape(PipelineConfig cfg, const NetworkConfig& nc) {
  cfg.network.levels = nc.levels;
  cfg.network.base_channels = nc.base_channels;
  cfg.network.input_width = nc.input_width;
  cfg.network.input_height = nc.input_height;
  return cfg;
}

}  // namespace

int cmd_gen_dataset(const PipelineConfig& cfg, const fs::path& dir, std::size_t count, std::uint64_t seed,
                    double train_fraction, const CommandIo& io) {
  cfg.validate();
  fs::create_directories(dir / "samples");

  Manifest previous;
  const bool resuming = fs::exists(dir / kManifestFile);
  if (resuming) {
    previous = Manifest::load(dir);
    if (previous.seed != seed) {
      throw Error(ErrorKind::Configuration, "dataset in " + dir.string() + " was generated with seed " +
                                                std::to_string(previous.seed) + ", refusing to resume with seed " +
                                                std::to_string(seed));
    }
  }
  write_text_atomic(dir / "palette.txt", format_palette(*cfg.palette));
  write_text_atomic(dir / "rig.json", rig_to_json(cfg.rig).dump(2) + "\n");

  const std::vector<std::string> tags = split_tags(count, train_fraction);
  std::vector<int> status(count, 0);  // 0 skipped, 1 written, 2 failed
  std::vector<std::string> failures(count);
  std::mutex log_mutex;
  parallel_for(count, io.threads, [&](std::size_t i) {
    const std::string id = sample_id(i);
    const auto files = sample_files(cfg.rig, id);
    bool complete = true;
    for (const auto& [key, rel] : files) complete = complete && fs::exists(dir / rel);
    if (complete) return;
    try {
      fs::create_directories(dir / sample_dir(id));
      const GeneratedSample s = generate_sample(cfg, seed, i);
      for (const auto& [name, img] : s.cameras) save_label_png(dir / files.at(name), img);
      save_label_png(dir / files.at(kBevKey), s.bev);
      save_label_png(dir / files.at(kOccludedKey), s.occluded);
      status[i] = 1;
    } catch (const std::exception& e) {
      status[i] = 2;
      failures[i] = e.what();
    }
  });

  Manifest m;
  m.seed = seed;
  std::map<std::string, const ManifestEntry*> old;
  for (const auto& e : previous.samples) old[e.id] = &e;
  std::size_t written = 0;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < count; ++i) {
    if (status[i] == 2) {
      io.err << "sample " << sample_id(i) << ": " << failures[i] << '\n';
      ++failed;
      continue;
    }
    written += status[i] == 1;
    ManifestEntry e{sample_id(i), tags[i], sample_files(cfg.rig, sample_id(i))};
    // A stitched image survives a resume only when its sample was kept.
    const auto it = old.find(e.id);
    if (status[i] == 0 && it != old.end()) {
      const auto h = it->second->files.find(kHomographyKey);
      if (h != it->second->files.end()) e.files[kHomographyKey] = h->second;
    }
    m.samples.push_back(std::move(e));
  }
  m.save(dir);
  io.out << "generated " << written << ", kept " << (count - written - failed) << ", failed " << failed << " in "
         << dir.string() << '\n';
  return failed == 0 ? 0 : 1;
}

int cmd_ipm_stitch(const PipelineConfig& cfg, const fs::path& dir, const std::optional<std::string>& sample,
                   const CommandIo& io) {
  cfg.validate();
  Manifest m = Manifest::load(dir);
  const PaletteRef palette = dataset_palette(cfg, dir, m);
  const std::vector<CameraModel> rig = load_rig(dir / m.rig_file);

  std::vector<ManifestEntry*> todo;
  for (auto& e : m.samples) {
    if (!sample || e.id == *sample) todo.push_back(&e);
  }
  if (sample && todo.empty()) throw Error(ErrorKind::Manifest, "no sample '" + *sample + "' in " + dir.string());

  std::vector<std::string> failures(todo.size());
  parallel_for(todo.size(), io.threads, [&](std::size_t k) {
    ManifestEntry& e = *todo[k];
    try {
      std::vector<SemanticImage> views;
      for (const auto& cam : rig) {
        const auto it = e.files.find(cam.name);
        if (it == e.files.end()) throw Error(ErrorKind::Manifest, "no '" + cam.name + "' image");
        views.push_back(load_label_png(dir / it->second, palette));
      }
      const SemanticImage stitched = homography_image(rig, views, cfg.grid, palette->occluded(), rig_priority(rig));
      const std::string rel = (sample_dir(e.id) / "homography.png").generic_string();
      save_label_png(dir / rel, stitched);
      e.files[kHomographyKey] = rel;
    } catch (const std::exception& ex) {
      failures[k] = ex.what();
    }
  });
  std::size_t failed = 0;
  for (std::size_t k = 0; k < todo.size(); ++k) {
    if (failures[k].empty()) continue;
    io.err << "sample " << todo[k]->id << ": " << failures[k] << '\n';
    ++failed;
  }
  m.save(dir);
  io.out << "stitched " << (todo.size() - failed) << " of " << todo.size() << " samples\n";
  return failed == 0 ? 0 : 1;
}

int cmd_occlusion(const PipelineConfig& cfg, const fs::path& dir, const CommandIo& io) {
  cfg.validate();
  Manifest m = Manifest::load(dir);
  const PaletteRef palette = dataset_palette(cfg, dir, m);
  const std::vector<CameraModel> rig = load_rig(dir / m.rig_file);
  std::vector<CameraMountBev> mounts;
  for (const auto& cam : rig) mounts.push_back(mount_from_camera(cam, cfg.grid));

  std::vector<std::string> failures(m.samples.size());
  parallel_for(m.samples.size(), io.threads, [&](std::size_t k) {
    ManifestEntry& e = m.samples[k];
    try {
      const auto it = e.files.find(kBevKey);
      if (it == e.files.end()) throw Error(ErrorKind::Manifest, "no 'bev' label");
      const SemanticImage gt = load_label_png(dir / it->second, palette);
      if (gt.width() != cfg.grid.cols() || gt.height() != cfg.grid.rows()) {
        throw Error(ErrorKind::Configuration, "BEV label size does not match the configured grid");
      }
      const std::string rel = (sample_dir(e.id) / "occluded.png").generic_string();
      save_label_png(dir / rel, label_occlusion(gt, mounts, cfg.policy));
      e.files[kOccludedKey] = rel;
    } catch (const std::exception& ex) {
      failures[k] = ex.what();
    }
  });
  std::size_t failed = 0;
  for (std::size_t k = 0; k < m.samples.size(); ++k) {
    if (failures[k].empty()) continue;
    io.err << "sample " << m.samples[k].id << ": " << failures[k] << '\n';
    ++failed;
  }
  m.save(dir);
  io.out << "labelled " << (m.samples.size() - failed) << " of " << m.samples.size() << " samples\n";
  return failed == 0 ? 0 : 1;
}

int cmd_train(const PipelineConfig& cfg, const fs::path& dir, const std::string& variant, const fs::path& run_dir,
              const CommandIo& io) {
  cfg.validate();
  if (variant == "baseline") throw Error(ErrorKind::Configuration, "the homography baseline has nothing to train");
  const Variant v = parse_variant(variant);
  {
    const Manifest m = Manifest::load(dir);
    dataset_palette(cfg, dir, m);
  }
  const PreparedSet train_set = load_prepared(cfg, dir, "train");
  const PreparedSet val_set = load_prepared(cfg, dir, "val");
  io.out << "training " << to_string(v) << " on " << train_set.samples.size() << " samples, validating on "
         << val_set.samples.size() << '\n';

  Model<float> model = Model<float>::build(network_config(cfg, v, train_set), cfg.training.seed);
  TrainOptions opts;
  opts.run_dir = run_dir;
  opts.config_snapshot = cfg.to_json();
  opts.log = &io.out;
  opts.threads = io.threads;
  const TrainResult r = train(model, train_set, val_set, cfg.training, opts);
  io.out << "best epoch " << r.best_epoch;
  if (r.best_miou) io.out << " val_miou " << *r.best_miou;
  io.out << "; checkpoints in " << run_dir.string() << '\n';
  return 0;
}

int cmd_eval(const PipelineConfig& cfg, const fs::path& dir, const std::optional<fs::path>& checkpoint,
             const std::string& split, const std::string& variant, const std::optional<fs::path>& report,
             const CommandIo& io) {
  cfg.validate();
  {
    const Manifest m = Manifest::load(dir);
    dataset_palette(cfg, dir, m);
  }
  ConfusionMatrix cm;
  PaletteRef palette;
  if (variant == "baseline") {
    const PreparedSet set = load_prepared(cfg, dir, split);
    if (set.samples.empty()) throw Error(ErrorKind::Manifest, "split '" + split + "' is empty");
    cm = evaluate_baseline(set);
    palette = set.palette;
  } else {
    if (!checkpoint) throw Error(ErrorKind::Configuration, "evaluating a model needs --checkpoint");
    const Model<float> model = load_model(*checkpoint);
    if (!variant.empty() && parse_variant(variant) != model.config().variant) {
      throw Error(ErrorKind::Configuration, "checkpoint holds a " + to_string(model.config().variant) +
                                                " model, not " + variant);
    }
    const PreparedSet set = load_prepared(with_model_shape(cfg, model.config()), dir, split);
    if (set.samples.empty()) throw Error(ErrorKind::Manifest, "split '" + split + "' is empty");
    cm = evaluate(model, set, io.threads);
    palette = set.palette;
  }
  const EvaluationReport rep = make_report(cm, *palette);
  if (report) {
    std::ostringstream os;
    write_report_csv(os, rep);
    write_text_atomic(*report, os.str());
    io.out << "report written to " << report->string() << '\n';
  } else {
    write_report_csv(io.out, rep);
  }
  return 0;
}

int cmd_predict(const PipelineConfig& cfg, const fs::path& dir, const fs::path& checkpoint,
                const std::string& sample, const fs::path& png, const CommandIo& io) {
  cfg.validate();
  const Model<float> model = load_model(checkpoint);
  const PreparedSet set = load_prepared(with_model_shape(cfg, model.config()), dir, "all");
  for (const auto& s : set.samples) {
    if (s.id != sample) continue;
    std::map<std::string, SemanticImage> views;
    for (const auto& name : model.config().input_cameras) views.emplace(name, s.inputs.at(name));
    save_label_png(png, predict(model, views, set.palette));
    io.out << "prediction for " << sample << " written to " << png.string() << '\n';
    return 0;
  }
  throw Error(ErrorKind::Manifest, "no sample '" + sample + "' in " + dir.string());
}

}  // namespace bev
