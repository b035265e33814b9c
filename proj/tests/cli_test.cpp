#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "msaec/cli.hpp"
#include "msaec/datagen.hpp"
#include "msaec/model.hpp"

namespace msaec {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("msaec_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<double> read_f64(const fs::path& p) {
  const std::string bytes = slurp(p);
  std::vector<double> v(bytes.size() / 8);
  std::memcpy(v.data(), bytes.data(), v.size() * 8);
  return v;
}

std::string tiny_checkpoint(const fs::path& dir, bool causal = true) {
  ModelConfig c = ModelConfig::tiny();
  c.causal = causal;
  const std::string path = (dir / (causal ? "tiny.ckpt" : "tiny_nc.ckpt")).string();
  save_checkpoint(path, init_params(c, 4));
  return path;
}

std::pair<std::string, std::string> input_pair(const fs::path& dir, std::size_t n, std::uint64_t seed) {
  MixtureSpec s;
  s.id = "in";
  s.far = {"", seed, static_cast<double>(n) / 16000.0, 0.0, -1.0, -20.0};
  s.near = {"", seed + 1, static_cast<double>(n) / 16000.0, 0.1, -1.0, -20.0};
  s.rir.seed = seed + 2;
  const MixtureItem item = make_mixture(s);
  const std::string mix = (dir / "mix.wav").string(), far = (dir / "far.wav").string();
  write_wav(mix, item.mixture);
  write_wav(far, item.far);
  return {mix, far};
}

TEST(CliConfig, DefaultsAreTable1) {
  const auto cfg = resolve_cli_config(nullptr, {});
  EXPECT_EQ(model_config_from_json(cfg["model"]), ModelConfig::table1());
  EXPECT_EQ(cfg["seed"], 0);
}

TEST(CliConfig, PresetThenExplicitKeys) {
  const auto cfg = resolve_cli_config({{"model", {{"preset", "tiny"}, {"repeats", 3}}}}, {"model.causal=false"});
  ModelConfig expected = ModelConfig::tiny();
  expected.repeats = 3;
  expected.causal = false;
  EXPECT_EQ(model_config_from_json(cfg["model"]), expected);
}

TEST(CliConfig, OverridesWinOverFile) {
  const auto cfg = resolve_cli_config({{"seed", 3}, {"train", {{"loss", "sum"}}}}, {"seed=9", "train.loss=mean"});
  EXPECT_EQ(cfg["seed"], 9);
  EXPECT_EQ(cfg["train"]["loss"], "mean");
}

TEST(CliConfig, RejectsUnknownAndMistypedKeys) {
  try {
    resolve_cli_config(nullptr, {"train.learning_rate=1"});
    FAIL() << "unknown key accepted";
  } catch (const UsageError& e) {
    for (const auto& k : cli_config_keys()) EXPECT_NE(std::string(e.what()).find(k), std::string::npos) << k;
  }
  EXPECT_THROW(resolve_cli_config({{"model", {{"bogus", 1}}}}, {}), UsageError);
  EXPECT_THROW(resolve_cli_config(nullptr, {"model.num_filters=wide"}), UsageError);
  EXPECT_THROW(resolve_cli_config(nullptr, {"seed"}), UsageError);
  EXPECT_THROW(resolve_cli_config(nullptr, {"model.attention_heads=7"}), UsageError);
}

TEST(Cli, RfReportsTable1Numbers) {
  const CliRun r = cli({"rf"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("30720 samples / 1.92 s"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("seed: 0"), std::string::npos);
  EXPECT_NE(r.out.find("config: {"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"fly"}).code, kExitUsage);
  EXPECT_EQ(cli({"rf", "--no-such-flag"}).code, kExitUsage);
  const CliRun bad_key = cli({"rf", "--set", "model.bogus=1"});
  EXPECT_EQ(bad_key.code, kExitUsage);
  EXPECT_NE(bad_key.err.find("model.num_filters"), std::string::npos);
  EXPECT_NE(bad_key.err.find("Usage"), std::string::npos);
  EXPECT_EQ(cli({"infer", "--out", scratch_dir("usage").string()}).code, kExitUsage);
}

TEST(Cli, SeedFlagWinsAndIsPrinted) {
  const fs::path dir = scratch_dir("seed");
  std::ofstream(dir / "c.json") << R"({"seed": 5, "model": {"preset": "tiny"}})";
  const CliRun r = cli({"rf", "--config", (dir / "c.json").string(), "--set", "seed=6", "--seed", "7"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("seed: 7"), std::string::npos);
  EXPECT_NE(r.out.find("\"num_filters\":64"), std::string::npos);
}

TEST(Cli, RuntimeErrorsExitOne) {
  const fs::path dir = scratch_dir("runtime");
  const auto [mix, far] = input_pair(dir, 4000, 1);
  EXPECT_EQ(cli({"infer", "--checkpoint", (dir / "absent.ckpt").string(), "--mix", mix, "--far", far, "--out",
                 (dir / "o").string()})
                .code,
            kExitRuntime);
  EXPECT_EQ(cli({"rf", "--config", (dir / "absent.json").string()}).code, kExitRuntime);
}

TEST(Cli, SynthDataIsReproducible) {
  const fs::path a = scratch_dir("synth_a"), b = scratch_dir("synth_b");
  const std::vector<std::string> common{"--seed", "11", "--ser", "0,3.5,7", "--snr", "10", "--t60", "0.2,0.4",
                                        "--set",  "data.count=4", "--set", "data.duration=0.5"};
  auto args_a = std::vector<std::string>{"synth-data", "--out", a.string()};
  auto args_b = std::vector<std::string>{"synth-data", "--out", b.string()};
  args_a.insert(args_a.end(), common.begin(), common.end());
  args_b.insert(args_b.end(), common.begin(), common.end());
  ASSERT_EQ(cli(args_a).code, 0);
  ASSERT_EQ(cli(args_b).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
    ++files;
  }
  EXPECT_EQ(files, 4u * 3u + 2u);
  const auto records = read_manifest((a / kManifestName).string());
  for (const auto& r : records) {
    EXPECT_TRUE(r.spec.ser_db == 0.0 || r.spec.ser_db == 3.5 || r.spec.ser_db == 7.0);
    EXPECT_EQ(r.spec.snr_db, 10.0);
  }
}

TEST(Cli, TrainNeedsSplitAndWritesCheckpoint) {
  const fs::path data = scratch_dir("train_data"), out = scratch_dir("train_out");
  ASSERT_EQ(cli({"synth-data", "--out", data.string(), "--set", "data.count=3", "--set", "data.duration=0.25"}).code,
            0);
  const std::string manifest = (data / kManifestName).string();
  const std::vector<std::string> base{"train",        "--data", manifest,           "--out", out.string(),
                                      "--set",        "model.preset=tiny", "--set", "train.epochs_max=2",
                                      "--set",        "train.lr_start=1e-3", "--set", "train.lr_end=1e-4"};
  EXPECT_EQ(cli(base).code, kExitUsage);
  auto args = base;
  args.insert(args.end(), {"--set", "train.val_fraction=0.34"});
  const CliRun r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("train items: 2, validation items: 1"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(out / "best.ckpt"));
  EXPECT_TRUE(fs::exists(out / "train_log.jsonl"));
  const ModelParams p = load_checkpoint((out / "best.ckpt").string());
  EXPECT_EQ(p.config, ModelConfig::tiny());
}

TEST(Cli, InferOnSilenceKeepsLength) {
  const fs::path dir = scratch_dir("silence");
  const std::string ckpt = tiny_checkpoint(dir);
  write_wav((dir / "zeros.wav").string(), std::vector<double>(8011, 0.0));
  const std::string z = (dir / "zeros.wav").string();
  const CliRun r = cli({"infer", "--checkpoint", ckpt, "--mix", z, "--far", z, "--out", (dir / "o").string(),
                     "--save-attention"});
  ASSERT_EQ(r.code, 0) << r.err;
  const WavData w = read_wav((dir / "o" / "estimate.wav").string());
  EXPECT_EQ(w.samples.size(), 8011u);
  EXPECT_TRUE(fs::exists(dir / "o" / "attention.csv"));
}

TEST(Cli, StreamMatchesInfer) {
  const fs::path dir = scratch_dir("stream");
  const std::string ckpt = tiny_checkpoint(dir);
  const auto [mix, far] = input_pair(dir, 16000 + 13, 21);
  ASSERT_EQ(cli({"infer", "--checkpoint", ckpt, "--mix", mix, "--far", far, "--out", (dir / "off").string()}).code,
            0);
  const CliRun s = cli({"stream", "--checkpoint", ckpt, "--mix", mix, "--far", far, "--out", (dir / "on").string()});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_NE(s.out.find("latency 20 samples"), std::string::npos) << s.out;
  const auto off = read_f64(dir / "off" / "estimate.f64");
  const auto on = read_f64(dir / "on" / "estimate.f64");
  ASSERT_EQ(off.size(), 16013u);
  ASSERT_EQ(on.size(), off.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < off.size(); ++i) worst = std::max(worst, std::abs(off[i] - on[i]));
  EXPECT_LE(worst, 1e-5);
}

TEST(Cli, StreamRejectsNoncausalAndShortInput) {
  const fs::path dir = scratch_dir("stream_err");
  const auto [mix, far] = input_pair(dir, 4000, 31);
  EXPECT_EQ(cli({"stream", "--checkpoint", tiny_checkpoint(dir, false), "--mix", mix, "--far", far, "--out",
                 (dir / "o").string()})
                .code,
            kExitRuntime);
  write_wav((dir / "short.wav").string(), std::vector<double>(10, 0.0));
  const std::string s = (dir / "short.wav").string();
  EXPECT_EQ(cli({"stream", "--checkpoint", tiny_checkpoint(dir), "--mix", s, "--far", s, "--out",
                 (dir / "o").string()})
                .code,
            kExitRuntime);
}

TEST(Cli, EvaluateIdentityTable) {
  const fs::path data = scratch_dir("eval_data"), out = scratch_dir("eval_out");
  ASSERT_EQ(cli({"synth-data", "--out", data.string(), "--set", "data.count=3", "--set", "data.duration=0.5",
                 "--set", "data.protocol=test"})
                .code,
            0);
  const CliRun r = cli({"evaluate", "--data", (data / kManifestName).string(), "--out", out.string(), "--set",
                     "eval.methods=[\"identity\"]"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("PESQ: unavailable"), std::string::npos);
  std::istringstream csv(slurp(out / "report.csv"));
  std::string line;
  std::getline(csv, line);
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    EXPECT_NE(line.find(",identity,"), std::string::npos);
    EXPECT_NE(line.find(",0,"), std::string::npos) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 3u);
  EXPECT_EQ(cli({"evaluate", "--data", (data / kManifestName).string(), "--out", out.string(), "--set",
                 "eval.methods=[\"model\"]"})
                .code,
            kExitUsage);
  fs::remove(data / "item00001_near.wav");
  fs::remove(data / "item00002_mix.wav");
  const CliRun missing = cli({"evaluate", "--data", (data / kManifestName).string(), "--out", out.string()});
  EXPECT_EQ(missing.code, kExitRuntime);
  EXPECT_NE(missing.out.find("FAILED item00002"), std::string::npos) << missing.out;
}

TEST(Cli, InspectAttentionGridShape) {
  const fs::path dir = scratch_dir("attn");
  const CliRun r = cli({"inspect-attention", "--set", "model.preset=tiny", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream grid(slurp(dir / "attention.csv"));
  std::string line;
  std::getline(grid, line);
  EXPECT_EQ(line, "# frames=799 heads=4 layers=10");
  std::getline(grid, line);
  std::size_t rows = 0;
  while (std::getline(grid, line)) {
    std::stringstream cells(line);
    std::string cell;
    double total = 0.0;
    std::size_t count = 0;
    while (std::getline(cells, cell, ',')) {
      if (count++ >= 2) total += std::stod(cell);
    }
    EXPECT_EQ(count, 12u);
    EXPECT_NEAR(total, 1.0, 1e-12);
    ++rows;
  }
  EXPECT_EQ(rows, 799u * 4u);
}

}  // namespace
}  // namespace msaec
