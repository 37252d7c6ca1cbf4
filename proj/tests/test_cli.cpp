#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "tvae/cli.hpp"

namespace fs = std::filesystem;
using namespace tvae;

namespace {

struct Result {
  int status;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "tvae");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tvae_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::uint8_t> bytes(const fs::path& p) { return read_file_bytes(p.string()); }

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

const std::vector<std::string> kSmallData{"--set", "data.count=24", "--set", "data.source_count=24",
                                          "--set", "data.canvas=24", "--set", "data.translation_std_px=2"};

const std::vector<std::string> kTinyModel{"--set", "model.kernel_size=3",  "--set", "model.channels=3",
                                          "--set", "model.generator.hidden_units=6", "--set",
                                          "model.generator.n_freq=3", "--set", "train.batch_size=8"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, MakeDatasetIsByteIdenticalAcrossRuns) {
  const auto root = scratch("determinism");
  for (const char* d : {"a", "b"}) {
    const auto r = run_cli(concat({"make-dataset", "--variant", "mnist-u", "--seed", "7", "--out", (root / d).string()},
                                  kSmallData));
    ASSERT_EQ(r.status, 0) << r.err;
  }
  for (const char* f : {"images.tvst", "ground_truth.tsv", "manifest.txt"})
    EXPECT_EQ(bytes(root / "a" / f), bytes(root / "b" / f)) << f;
  EXPECT_TRUE(fs::exists(root / "a" / "resolved_config.txt"));
  const auto other = run_cli(concat({"make-dataset", "--seed", "8", "--out", (root / "c").string()}, kSmallData));
  ASSERT_EQ(other.status, 0);
  EXPECT_NE(bytes(root / "a" / "images.tvst"), bytes(root / "c" / "images.tvst"));
}

TEST(Cli, OtherDatasetKinds) {
  const auto root = scratch("kinds");
  auto r = run_cli(concat({"make-dataset", "--variant", "multi", "--out", (root / "m").string(), "--set",
                           "data.multi.canvas=60", "--set", "data.multi.objects=2"},
                          kSmallData));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "m" / "objects.tsv"));
  r = run_cli({"make-dataset", "--variant", "shapes", "--out", (root / "s").string(), "--set",
               "data.shapes.canvas=20", "--set", "data.shapes.translation_steps=1"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(data::load_dataset((root / "s").string()).size(), 3 * 40 * 6);
}

TEST(Cli, UnknownConfigKeyIsRejectedByName) {
  const auto root = scratch("unknown_key");
  write_text(root / "c.txt", "seed=3\nmodel.zdim=4\n");
  const auto r = run_cli({"make-dataset", "--config", (root / "c.txt").string(), "--out", (root / "o").string()});
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("model.zdim"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(root / "o"));
}

TEST(Cli, SchemaViolationsNameTheKey) {
  const auto root = scratch("schema");
  auto r = run_cli({"make-dataset", "--set", "data.count=-4", "--out", (root / "o").string()});
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("data.count"), std::string::npos);
  r = run_cli({"make-dataset", "--set", "data.normalize=zscore", "--out", (root / "o").string()});
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("data.normalize"), std::string::npos);
  r = run_cli({"train", "--device", "gpu", "--out", (root / "o").string()});
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("device"), std::string::npos);
  r = run_cli({"train", "--temperature-schedule", "cosine", "--out", (root / "o").string()});
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("temperature"), std::string::npos);
}

TEST(Cli, UnknownFlagOrSubcommandPrintsUsage) {
  auto r = run_cli({"make-dataset", "--colour", "red"});
  EXPECT_NE(r.status, 0);
  EXPECT_FALSE(r.err.empty());
  r = run_cli({"paint"});
  EXPECT_NE(r.status, 0);
  r = run_cli({});
  EXPECT_NE(r.status, 0);
  r = run_cli({"make-dataset", "--group", "p5"});
  EXPECT_NE(r.status, 0);
}

TEST(Cli, FlagsOverrideFileOverrideDefaults) {
  const auto root = scratch("precedence");
  write_text(root / "c.txt", "seed=3\ndata.count=5\nmodel.z_dim=4\n");
  cli::Flags f;
  f.config = (root / "c.txt").string();
  f.seed = 9;
  f.group = "p8";
  f.out = (root / "o").string();
  const auto c = cli::resolve("train", f);
  EXPECT_EQ(c.get("seed"), "9");
  EXPECT_EQ(c.get("data.count"), "5");
  EXPECT_EQ(c.get("model.z_dim"), "4");
  EXPECT_EQ(c.get("model.variant"), "FULL_P8");
  EXPECT_EQ(c.get("train.batch_size"), "100");
  f.variant = "V2";
  EXPECT_EQ(cli::resolve("train", f).get("model.r"), "8");
  EXPECT_EQ(cli::resolve("train", f).get("model.variant"), "V2");
}

TEST(Cli, OutputRootFromEnvironment) {
  const auto root = scratch("env");
  ::setenv("TVAE_OUTPUT_ROOT", root.string().c_str(), 1);
  const auto r = run_cli(concat({"make-dataset"}, kSmallData));
  ::unsetenv("TVAE_OUTPUT_ROOT");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "make-dataset" / "images.tvst"));
}

TEST(Cli, TrainEvalDetectReconstructEmbed) {
  const auto root = scratch("pipeline");
  const auto data_dir = (root / "data").string();
  ASSERT_EQ(run_cli(concat({"make-dataset", "--seed", "1", "--out", data_dir}, kSmallData)).status, 0);
  const auto run_dir = (root / "run").string();
  auto r = run_cli(concat({"train", "--data", data_dir, "--epochs", "2", "--z-dim", "2", "--variant", "FULL", "--group",
                           "p4", "--temperature-schedule", "linear:1:0.5:1", "--out", run_dir},
                          kTinyModel));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto ckpt = (root / "run" / "checkpoint.tvae").string();
  const auto loaded = load_checkpoint<float>(ckpt);
  EXPECT_EQ(loaded.metadata.at("train.epochs_completed"), "2");
  EXPECT_EQ(loaded.model.config().image_height, 24);
  EXPECT_TRUE(fs::exists(root / "run" / "train_log.tsv"));
  EXPECT_TRUE(fs::exists(root / "run" / "resolved_config.txt"));

  const std::vector<std::string> eval_args{"eval", "--checkpoint", ckpt, "--data", data_dir, "--set",
                                           "eval.rmse_images=3", "--set", "eval.rmse_rotations=4"};
  r = run_cli(concat(eval_args, {"--out", (root / "eval1").string()}));
  ASSERT_EQ(r.status, 0) << r.err;
  r = run_cli(concat(eval_args, {"--out", (root / "eval2").string()}));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(bytes(root / "eval1" / "metrics.txt"), bytes(root / "eval2" / "metrics.txt"));
  const auto metrics = read_key_values((root / "eval1" / "metrics.txt").string());
  EXPECT_TRUE(metrics.count("rotation_circular_corr"));
  ASSERT_TRUE(metrics.count("clustering_accuracy"));
  if (metrics.at("clustering_accuracy") != "undefined") {
    const double acc = std::stod(metrics.at("clustering_accuracy"));
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 100.0);
  }
  EXPECT_TRUE(fs::exists(root / "eval1" / "metrics.tsv"));

  const auto multi_dir = (root / "multi").string();
  ASSERT_EQ(run_cli(concat({"make-dataset", "--variant", "multi", "--out", multi_dir, "--set", "data.multi.canvas=60",
                            "--set", "data.multi.objects=2"},
                           kSmallData))
                .status,
            0);
  r = run_cli({"detect", "--checkpoint", ckpt, "--data", multi_dir, "--out", (root / "det").string(), "--set",
               "detect.max_images=3", "--set", "detect.peak_threshold=0"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "det" / "detections.tsv"));
  const auto summary = read_key_values((root / "det" / "detect_summary.txt").string());
  EXPECT_TRUE(summary.count("recall"));
  EXPECT_TRUE(fs::exists(root / "det" / "crops.png"));

  r = run_cli({"reconstruct", "--checkpoint", ckpt, "--data", data_dir, "--out", (root / "rec").string(), "--set",
               "reconstruct.count=5"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "rec" / "aligned.png"));

  r = run_cli({"embed", "--checkpoint", ckpt, "--data", data_dir, "--out", (root / "emb").string()});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto z = data::read_stack((root / "emb" / "embeddings.tvst").string());
  EXPECT_EQ(z.dims, (std::vector<std::uint64_t>{24, 2}));
}

TEST(Cli, MissingCheckpointIsAnError) {
  const auto root = scratch("missing");
  const auto r = run_cli({"eval", "--out", (root / "o").string()});
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("--checkpoint"), std::string::npos);
}
