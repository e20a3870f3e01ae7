// Configuration, dataset preparation and the batch commands, end to end on
// tiny datasets in a scratch folder.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <gtest/gtest.h>

#include "bev/commands.hpp"
#include "bev/config.hpp"
#include "bev/dataset.hpp"
#include "bev/error.hpp"
#include "bev/semantics_io.hpp"
#include "support.hpp"

namespace bev {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "bev_pipeline_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

PipelineConfig small_config() {
  PipelineConfig cfg = config_from_json(json::parse(R"({
    "unetxst": {"network": {"levels": 2, "base_channels": 2, "input_width": 64, "input_height": 32},
                "training": {"epochs": 1, "batch_size": 2, "max_steps": 2}}
  })"),
                                        ".");
  return cfg;
}

struct Quiet {
  std::ostringstream out, err;
  CommandIo io{out, err};
};

TEST(Config, EmptyDocumentGivesTheDefaults) {
  const PipelineConfig c = config_from_json(json::object(), ".");
  EXPECT_EQ(c.rig.size(), 4u);
  EXPECT_EQ(c.palette->size(), 10u);
  EXPECT_EQ(c.grid.cols(), 140);
  EXPECT_EQ(c.grid.rows(), 88);
  EXPECT_EQ(c.training.batch_size, 5);
  EXPECT_EQ(c.training.epochs, 30);
  EXPECT_DOUBLE_EQ(c.training.adam.lr, 1e-4);
}

TEST(Config, SnapshotReloadsFromAnyFolder) {
  const PipelineConfig c = small_config();
  json snap = c.to_json();
  const fs::path elsewhere = fresh_dir("snapshot");
  json again = config_from_json(snap, elsewhere).to_json();
  EXPECT_EQ(again["cli"], snap["cli"]);
  // Camera poses go through a decomposition and may move in the last bit.
  const json& cams = snap["camera_geometry"]["rig"]["cameras"];
  const json& cams2 = again["camera_geometry"]["rig"]["cameras"];
  ASSERT_EQ(cams.size(), cams2.size());
  for (std::size_t k = 0; k < cams.size(); ++k) {
    for (const char* key : {"position", "rotation"}) {
      for (std::size_t i = 0; i < cams[k][key].size(); ++i) {
        EXPECT_NEAR(cams[k][key][i].get<double>(), cams2[k][key][i].get<double>(), 1e-12);
      }
    }
  }
  snap.erase("camera_geometry");
  again.erase("camera_geometry");
  EXPECT_EQ(again, snap);
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  EXPECT_THROW(config_from_json(json::parse(R"({"unetxst": {"training": {"lr": 0}}})"), "."), Error);
  EXPECT_THROW(config_from_json(json::parse(R"({"scene": {}})"), "."), Error);
  EXPECT_THROW(config_from_json(json::parse(R"({"cli": {"train_fraction": 1.5}})"), "."), Error);
  EXPECT_THROW(config_from_json(json::parse(R"({"unetxst": {"training": {"batch_size": "5"}}})"), "."), Error);
}

TEST(Config, RigAndPolicyRoundTripThroughJson) {
  const PipelineConfig c = default_config();
  const auto rig = rig_from_json(rig_to_json(c.rig));
  ASSERT_EQ(rig.size(), c.rig.size());
  for (std::size_t k = 0; k < rig.size(); ++k) {
    EXPECT_EQ(rig[k].name, c.rig[k].name);
    EXPECT_TRUE(rig[k].extrinsics.rotation().isApprox(c.rig[k].extrinsics.rotation(), 1e-12));
    EXPECT_TRUE(intrinsics_matrix(rig[k].intrinsics).isApprox(intrinsics_matrix(c.rig[k].intrinsics), 1e-12));
  }
  EXPECT_EQ(policy_to_json(policy_from_json(policy_to_json(c.policy), c.palette)), policy_to_json(c.policy));
}

TEST(Split, FractionsAndTags) {
  EXPECT_DOUBLE_EQ(parse_split_fractions("0.9"), 0.9);
  EXPECT_DOUBLE_EQ(parse_split_fractions("0.8/0.2"), 0.8);
  EXPECT_DOUBLE_EQ(parse_split_fractions("0.7,0.3"), 0.7);
  EXPECT_THROW(parse_split_fractions("0.9/0.2"), Error);
  EXPECT_THROW(parse_split_fractions("x"), Error);
  const auto tags = split_tags(10, 0.9);
  EXPECT_EQ(std::count(tags.begin(), tags.end(), "train"), 9);
  EXPECT_EQ(tags.back(), "val");
}

TEST(CropResize, CenterCropKeepsTheAspectRatio) {
  const CropResize cr = CropResize::center(140, 88, 128, 64);
  EXPECT_EQ(cr.crop_w, 140);
  EXPECT_EQ(cr.crop_h, 70);
  EXPECT_EQ(cr.y0, 9);
  // The output center maps to the source center.
  const Eigen::Vector3d c = cr.output_to_source() * Eigen::Vector3d(64.0, 32.0, 1.0);
  EXPECT_NEAR(c.x() / c.z(), 70.0, 1e-12);
  EXPECT_NEAR(c.y() / c.z(), 44.0, 1e-12);
}

TEST(GenDataset, OneSampleHasEveryFile) {
  const fs::path dir = fresh_dir("one");
  Quiet q;
  ASSERT_EQ(cmd_gen_dataset(small_config(), dir, 1, 42, 0.9, q.io), 0) << q.err.str();
  const Manifest m = Manifest::load(dir);
  ASSERT_EQ(m.samples.size(), 1u);
  EXPECT_EQ(m.seed, 42u);
  const ManifestEntry& e = m.samples[0];
  for (const char* key : {"front", "rear", "left", "right", "bev", "occluded"}) {
    ASSERT_TRUE(e.files.count(key)) << key;
    EXPECT_TRUE(fs::exists(dir / e.files.at(key))) << key;
  }
  EXPECT_TRUE(fs::exists(dir / "palette.txt"));
  EXPECT_TRUE(fs::exists(dir / "rig.json"));
}

TEST(GenDataset, RerunIsByteIdenticalAndSplitsNinetyTen) {
  const fs::path a = fresh_dir("rerun_a"), b = fresh_dir("rerun_b");
  Quiet q;
  ASSERT_EQ(cmd_gen_dataset(small_config(), a, 10, 7, 0.9, q.io), 0);
  ASSERT_EQ(cmd_gen_dataset(small_config(), b, 10, 7, 0.9, q.io), 0);
  int files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 10 * 6 + 3);
  const Manifest m = Manifest::load(a);
  EXPECT_EQ(m.split("train").size(), 9u);
  EXPECT_EQ(m.split("val").size(), 1u);
}

TEST(GenDataset, ResumeKeepsSamplesAndRefusesAnotherSeed) {
  const fs::path dir = fresh_dir("resume");
  Quiet q;
  ASSERT_EQ(cmd_gen_dataset(small_config(), dir, 2, 3, 0.5, q.io), 0);
  const std::string first = slurp(dir / Manifest::load(dir).samples[0].files.at("bev"));
  ASSERT_EQ(cmd_gen_dataset(small_config(), dir, 3, 3, 0.5, q.io), 0);
  EXPECT_EQ(Manifest::load(dir).samples.size(), 3u);
  EXPECT_EQ(slurp(dir / Manifest::load(dir).samples[0].files.at("bev")), first);
  EXPECT_THROW(cmd_gen_dataset(small_config(), dir, 3, 4, 0.5, q.io), Error);
}

TEST(IpmStitch, OneOutputPerSampleAndCorruptInputsAreListed) {
  const fs::path dir = fresh_dir("stitch");
  Quiet q;
  ASSERT_EQ(cmd_gen_dataset(small_config(), dir, 3, 5, 0.9, q.io), 0);
  ASSERT_EQ(cmd_ipm_stitch(small_config(), dir, std::nullopt, q.io), 0) << q.err.str();
  Manifest m = Manifest::load(dir);
  for (const auto& e : m.samples) {
    ASSERT_TRUE(e.files.count(kHomographyKey));
    const SemanticImage h = load_label_png(dir / e.files.at(kHomographyKey), test::palette());
    EXPECT_EQ(h.width(), 140);
    EXPECT_EQ(h.height(), 88);
  }
  std::ofstream(dir / m.samples[1].files.at("left"), std::ios::trunc) << "garbage";
  Quiet q2;
  EXPECT_NE(cmd_ipm_stitch(small_config(), dir, std::nullopt, q2.io), 0);
  EXPECT_NE(q2.err.str().find(m.samples[1].id), std::string::npos);
  EXPECT_EQ(q2.err.str().find(m.samples[0].id), std::string::npos);
}

TEST(Occlusion, RecomputingReproducesTheGeneratedLabels) {
  const fs::path dir = fresh_dir("occlusion");
  Quiet q;
  ASSERT_EQ(cmd_gen_dataset(small_config(), dir, 2, 9, 0.5, q.io), 0);
  const Manifest m = Manifest::load(dir);
  const std::string before = slurp(dir / m.samples[0].files.at(kOccludedKey));
  ASSERT_EQ(cmd_occlusion(small_config(), dir, q.io), 0);
  EXPECT_EQ(slurp(dir / m.samples[0].files.at(kOccludedKey)), before);
}

TEST(LoadPrepared, MissingFileNamesTheSample) {
  const fs::path dir = fresh_dir("missing");
  Quiet q;
  ASSERT_EQ(cmd_gen_dataset(small_config(), dir, 2, 1, 0.5, q.io), 0);
  ASSERT_EQ(cmd_ipm_stitch(small_config(), dir, std::nullopt, q.io), 0);
  const Manifest m = Manifest::load(dir);
  fs::remove(dir / m.samples[1].files.at("rear"));
  try {
    load_prepared(small_config(), dir, "all");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(m.samples[1].id), std::string::npos);
  }
}

TEST(Eval, BaselineReportAndPerfectCopy) {
  const fs::path dir = fresh_dir("eval");
  Quiet q;
  ASSERT_EQ(cmd_gen_dataset(small_config(), dir, 2, 11, 0.5, q.io), 0);
  ASSERT_EQ(cmd_ipm_stitch(small_config(), dir, std::nullopt, q.io), 0);
  ASSERT_EQ(cmd_eval(small_config(), dir, std::nullopt, "all", "baseline", dir / "report.csv", q.io), 0);
  std::istringstream report(slurp(dir / "report.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(report, line)) ++rows;
  EXPECT_EQ(rows, 1 + 10 + 1);

  // A homography image identical to the target scores a perfect MIoU.
  for (const auto& e : Manifest::load(dir).samples) {
    fs::copy_file(dir / e.files.at(kOccludedKey), dir / e.files.at(kHomographyKey),
                  fs::copy_options::overwrite_existing);
  }
  std::ostringstream out;
  Quiet sink;
  CommandIo io{out, sink.err};
  ASSERT_EQ(cmd_eval(small_config(), dir, std::nullopt, "all", "baseline", std::nullopt, io), 0);
  EXPECT_NE(out.str().find("miou,1.000000"), std::string::npos) << out.str();
}

TEST(TrainEvalPredict, TinyRunFillsTheRunFolder) {
  const fs::path dir = fresh_dir("train"), run = fresh_dir("train_run");
  Quiet q;
  const PipelineConfig cfg = small_config();
  ASSERT_EQ(cmd_gen_dataset(cfg, dir, 4, 13, 0.5, q.io), 0);
  ASSERT_EQ(cmd_ipm_stitch(cfg, dir, std::nullopt, q.io), 0);
  ASSERT_EQ(cmd_train(cfg, dir, "xst", run, q.io), 0) << q.err.str();
  for (const char* f : {"config.json", "metrics.csv", "best.ckpt", "last.ckpt"}) EXPECT_TRUE(fs::exists(run / f)) << f;
  EXPECT_EQ(slurp(run / "metrics.csv").rfind("epoch,loss,steps,miou,iou_road", 0), 0u);

  ASSERT_EQ(cmd_eval(cfg, dir, run / "best.ckpt", "val", "xst", run / "eval.csv", q.io), 0);
  EXPECT_THROW(cmd_eval(cfg, dir, run / "best.ckpt", "val", "plain", std::nullopt, q.io), Error);

  const std::string id = Manifest::load(dir).samples[0].id;
  ASSERT_EQ(cmd_predict(cfg, dir, run / "best.ckpt", id, run / "pred.png", q.io), 0);
  const SemanticImage pred = load_label_png(run / "pred.png", cfg.palette);
  EXPECT_EQ(pred.width(), cfg.network.input_width);
  EXPECT_EQ(pred.height(), cfg.network.input_height);
  EXPECT_THROW(cmd_train(cfg, dir, "baseline", run, q.io), Error);
}

// The executable itself: argument handling and exit codes.
int run_tool(const std::string& args) {
  const std::string cmd = std::string(BEVTOOL_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Bevtool, ExitCodes) {
  const fs::path dir = fresh_dir("tool");
  EXPECT_EQ(run_tool("show-config"), 0);
  EXPECT_NE(run_tool(""), 0);
  EXPECT_NE(run_tool("frobnicate"), 0);
  EXPECT_EQ(run_tool("gen-dataset --count 1 --seed 2 --out " + dir.string()), 0);
  EXPECT_TRUE(fs::exists(dir / kManifestFile));
  EXPECT_EQ(run_tool("gen-dataset --count 1 --seed 3 --out " + dir.string()), 2);
  EXPECT_EQ(run_tool("ipm-stitch --data " + dir.string()), 0);
  EXPECT_EQ(run_tool("eval --variant baseline --split all --data " + dir.string()), 0);
  EXPECT_EQ(run_tool("train --data " + dir.string()), 2);  // --variant is required
}

}  // namespace
}  // namespace bev
