#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "msaec/error.hpp"
#include "msaec/eval.hpp"
#include "test_util.hpp"

namespace msaec {
namespace {

namespace fs = std::filesystem;
using testing::random_vector;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("msaec_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Stand-in for the ITU scorer: identical files score 4.5, others 2.0 plus
// a tenth of the degraded file's size parity.
fs::path fake_scorer(const fs::path& dir) {
  const fs::path p = dir / "fake_pesq.sh";
  std::ofstream(p) << "#!/bin/sh\n"
                      "[ \"$1\" = \"+16000\" ] || exit 3\n"
                      "echo \"Reading reference $2\"\n"
                      "if cmp -s \"$2\" \"$3\"; then s=4.500; else s=2.000; fi\n"
                      "echo \"P.862 Prediction (Raw MOS, MOS-LQO):  = $s   4.549\"\n";
  fs::permissions(p, fs::perms::owner_all);
  return p;
}

fs::path script(const fs::path& dir, const std::string& name, const std::string& body) {
  const fs::path p = dir / name;
  std::ofstream(p) << "#!/bin/sh\n" << body;
  fs::permissions(p, fs::perms::owner_all);
  return p;
}

std::vector<double> convolve_oracle(const std::vector<double>& x, const std::vector<double>& h) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t n = 0; n < x.size(); ++n) {
    for (std::size_t k = 0; k < h.size() && k <= n; ++k) y[n] += h[k] * x[n - k];
  }
  return y;
}

MixtureSpec linear_spec(const std::string& id, std::uint64_t seed, double duration, double near_begin) {
  MixtureSpec s;
  s.id = id;
  s.far = {"", 10 * seed + 1, duration, 0.0, -1.0, -20.0};
  s.near = {"", 10 * seed + 2, duration, near_begin, -1.0, -20.0};
  s.rir.t60 = 0.2;
  s.rir.length = 512;
  s.rir.seed = 10 * seed + 3;
  s.ser_db = 0.0;
  s.seed = 10 * seed + 4;
  return s;
}

TEST(Erle, IdentityIsZero) {
  std::mt19937_64 rng(1);
  const auto mic = random_vector(1000, rng);
  EXPECT_EQ(erle_db(mic, mic, {{0, 1000}}), 0.0);
}

TEST(Erle, TenfoldAmplitudeIsTwentyDb) {
  std::mt19937_64 rng(2);
  const auto mic = random_vector(1000, rng);
  std::vector<double> res(mic);
  for (double& v : res) v /= 10.0;
  EXPECT_NEAR(erle_db(mic, res, {{0, 500}, {700, 1000}}), 20.0, 1e-12);
}

TEST(Erle, SilentResidualIsCapped) {
  std::mt19937_64 rng(3);
  const auto mic = random_vector(100, rng);
  EXPECT_EQ(erle_db(mic, std::vector<double>(100, 0.0), {{0, 100}}), kErleCapDb);
  std::vector<double> tiny(100, 1e-12);
  EXPECT_EQ(erle_db(mic, tiny, {{0, 100}}), kErleCapDb);
}

TEST(Erle, OnlyRegionsCount) {
  std::vector<double> mic(200, 1.0), res(200, 1.0);
  for (std::size_t i = 100; i < 200; ++i) res[i] = 1000.0;
  EXPECT_EQ(erle_db(mic, res, {{0, 100}}), 0.0);
}

TEST(Erle, ScaleInvariant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto mic = random_vector(300, rng);
    const auto res = random_vector(300, rng, -0.1, 0.1);
    const double c = scale(rng);
    std::vector<double> mic_c(mic), res_c(res);
    for (double& v : mic_c) v *= c;
    for (double& v : res_c) v *= c;
    EXPECT_NEAR(erle_db(mic, res, {{10, 250}}), erle_db(mic_c, res_c, {{10, 250}}), 1e-9);
  }
}

TEST(Erle, Errors) {
  const std::vector<double> a(10, 1.0), b(11, 1.0);
  EXPECT_THROW(erle_db(a, a, {}), ContractError);
  EXPECT_THROW(erle_db(a, a, {{3, 3}}), ContractError);
  EXPECT_THROW(erle_db(a, b, {{0, 5}}), DimensionError);
  EXPECT_THROW(erle_db(a, a, {{0, 20}}), DimensionError);
}

TEST(Nlms, SingleTapEchoConverges) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> white(0.0, 0.1);
  const std::size_t n = 5 * 16000;
  std::vector<double> far(n);
  for (double& v : far) v = white(rng);
  std::vector<double> mic(n, 0.0);
  for (std::size_t i = 37; i < n; ++i) mic[i] = 0.5 * far[i - 37];
  std::vector<double> w;
  const Waveform res = nlms_cancel(far, mic, {}, &w);
  const double erle = erle_db(mic, res, {{n / 2, n}});
  EXPECT_GE(erle, 30.0);
  EXPECT_NEAR(w[37], 0.5, 1e-3);
}

TEST(Nlms, NegligibleStepKeepsInitialWeights) {
  std::mt19937_64 rng(6);
  const auto far = random_vector(400, rng);
  const auto mic = random_vector(400, rng);
  const auto h = random_vector(16, rng);
  std::vector<double> w(h);
  NlmsConfig cfg;
  cfg.taps = 16;
  cfg.mu = 1e-300;
  const Waveform res = nlms_cancel(far, mic, cfg, &w);
  const auto echo = convolve_oracle(far, h);
  for (std::size_t i = 0; i < 400; ++i) EXPECT_NEAR(res[i], mic[i] - echo[i], 1e-12);
  for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(w[k], h[k], 1e-280);
}

TEST(Nlms, ZeroFarLeavesMicUntouched) {
  std::mt19937_64 rng(7);
  const auto mic = random_vector(1000, rng);
  std::vector<double> w;
  const Waveform res = nlms_cancel(std::vector<double>(1000, 0.0), mic, {}, &w);
  EXPECT_EQ(res, mic);
  for (double v : w) EXPECT_EQ(v, 0.0);
}

TEST(Nlms, Errors) {
  const std::vector<double> x(1000, 0.0);
  NlmsConfig cfg;
  cfg.mu = 2.0;
  EXPECT_THROW(nlms_cancel(x, x, cfg), ContractError);
  cfg.mu = 0.0;
  EXPECT_THROW(nlms_cancel(x, x, cfg), ContractError);
  cfg = {};
  cfg.taps = 1001;
  EXPECT_THROW(nlms_cancel(x, x, cfg), DimensionError);
  EXPECT_THROW(nlms_cancel(x, std::vector<double>(999, 0.0), {}), DimensionError);
  std::vector<double> bad_init(3, 0.0);
  EXPECT_THROW(nlms_cancel(x, x, {}, &bad_init), DimensionError);
}

TEST(Nlms, ResidualPowerBoundedOnCorpus) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    MixtureSpec s = linear_spec("s" + std::to_string(seed), seed, 2.0, 0.6);
    s.rir.length = 0;
    s.nonlinearity.mode = static_cast<NonlinearMode>(seed % 4);
    s.snr_db = 20.0;
    const MixtureItem item = make_mixture(s);
    for (double mu : {0.1, 0.5, 1.0}) {
      NlmsConfig cfg;
      cfg.mu = mu;
      const Waveform res = nlms_cancel(item.far, item.mixture, cfg);
      EXPECT_LE(10.0 * std::log10(mean_power(res) / mean_power(item.mixture)), 3.0) << seed << " mu " << mu;
    }
  }
}

TEST(Pesq, ParsesFinalScoreLine) {
  EXPECT_EQ(parse_pesq_output("P.862 Prediction (Raw MOS, MOS-LQO):  = 3.214   3.100\n"), 3.214);
  EXPECT_EQ(parse_pesq_output("loading 2 files\nscore 2.5\n"), 2.5);
  EXPECT_EQ(parse_pesq_output("first = 1.0\nsecond = 2.25\nbye\n"), 2.25);
  EXPECT_FALSE(parse_pesq_output("no numbers here\n"));
  EXPECT_FALSE(parse_pesq_output(""));
}

TEST(Pesq, FakeScorerCeilingAndIdentity) {
  const fs::path dir = scratch_dir("pesq");
  const fs::path scorer = fake_scorer(dir);
  std::mt19937_64 rng(8);
  const auto clean = random_vector(1600, rng, -0.5, 0.5);
  const auto mix = random_vector(1600, rng, -0.5, 0.5);
  write_wav((dir / "clean.wav").string(), clean);
  write_wav((dir / "mix.wav").string(), mix);
  const std::string c = (dir / "clean.wav").string(), m = (dir / "mix.wav").string();
  EXPECT_EQ(run_pesq_scorer(scorer.string(), c, c), 4.5);
  const PesqResult ident = delta_pesq(m, c, m, scorer.string());
  ASSERT_TRUE(ident.available);
  EXPECT_EQ(ident.delta_pesq, 0.0);
  const PesqResult perfect = delta_pesq(c, c, m, scorer.string());
  EXPECT_EQ(perfect.pesq, 4.5);
  EXPECT_EQ(perfect.delta_pesq, 2.5);
  fs::remove_all(dir);
}

TEST(Pesq, MissingScorerIsUnavailable) {
  const PesqResult r = delta_pesq("a.wav", "b.wav", "c.wav", "");
  EXPECT_FALSE(r.available);
  EXPECT_FALSE(r.reason.empty());
}

TEST(Pesq, ScorerFailuresThrow) {
  const fs::path dir = scratch_dir("pesq_fail");
  EXPECT_THROW(run_pesq_scorer(script(dir, "exit.sh", "exit 4\n").string(), "a", "b"), IoError);
  EXPECT_THROW(run_pesq_scorer(script(dir, "junk.sh", "echo nothing useful\n").string(), "a", "b"), IoError);
  EXPECT_THROW(run_pesq_scorer((dir / "absent").string(), "a", "b"), IoError);
  fs::remove_all(dir);
}

class DatasetEval : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch_dir("dataset"));
    std::vector<MixtureSpec> specs;
    const double sers[] = {0.0, 3.5, 7.0};
    for (std::uint64_t i = 0; i < 6; ++i) {
      MixtureSpec s = linear_spec("ev" + std::to_string(i), i + 1, 4.0, 3.0);
      s.ser_db = sers[i % 3];
      specs.push_back(s);
    }
    generate_dataset(specs, dir_->string());
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
  }
  static std::string manifest() { return (*dir_ / kManifestName).string(); }
  static fs::path* dir_;
};

fs::path* DatasetEval::dir_ = nullptr;

TEST_F(DatasetEval, IdentityGivesZeroErle) {
  const EvalReport r = evaluate_dataset(manifest(), {identity_method()});
  ASSERT_EQ(r.rows.size(), 6u);
  for (const auto& row : r.rows) {
    ASSERT_TRUE(row.erle_db);
    EXPECT_EQ(*row.erle_db, 0.0);
    EXPECT_FALSE(row.delta_pesq);
  }
  EXPECT_NE(r.pesq_status.find("unavailable"), std::string::npos);
  const auto agg = r.aggregates();
  ASSERT_EQ(agg.size(), 3u);
  for (const auto& a : agg) {
    EXPECT_EQ(a.count, 2u);
    EXPECT_EQ(a.mean_erle_db, 0.0);
    EXPECT_NEAR(a.erle_of_mean_db, 0.0, 1e-12);
  }
  EXPECT_EQ(agg[0].ser_db, 0.0);
  EXPECT_EQ(agg[2].ser_db, 7.0);
}

TEST_F(DatasetEval, RowsAreItemsTimesMethods) {
  const ModelParams p = init_params(ModelConfig::tiny(), 1);
  const EvalReport r = evaluate_dataset(manifest(), {identity_method(), nlms_method(), model_method(p)});
  EXPECT_EQ(r.rows.size(), 18u);
  EXPECT_EQ(r.aggregates().size(), 9u);
  EXPECT_TRUE(r.failures.empty());
  const std::string table = r.table();
  for (const char* m : {"identity", "nlms", "model"}) EXPECT_NE(table.find(m), std::string::npos);
  std::size_t csv_lines = 0;
  std::istringstream csv(r.csv());
  for (std::string line; std::getline(csv, line);) ++csv_lines;
  EXPECT_EQ(csv_lines, 19u);
}

TEST_F(DatasetEval, NlmsOnLinearItems) {
  const EvalReport r = evaluate_dataset(manifest(), {nlms_method()});
  double sum = 0.0;
  for (const auto& row : r.rows) sum += *row.erle_db;
  EXPECT_GE(sum / static_cast<double>(r.rows.size()), 20.0);
}

TEST_F(DatasetEval, AggregatesRecomputableFromRows) {
  const EvalReport r = evaluate_dataset(manifest(), {identity_method(), nlms_method()});
  for (const auto& a : r.aggregates()) {
    double db = 0.0, ratio = 0.0;
    std::size_t n = 0;
    for (const auto& row : r.rows) {
      if (row.method != a.method || row.ser_db != a.ser_db) continue;
      db += *row.erle_db;
      ratio += row.mic_power / row.residual_power;
      ++n;
    }
    EXPECT_EQ(n, a.count);
    EXPECT_NEAR(a.mean_erle_db, db / n, 1e-9);
    EXPECT_NEAR(a.erle_of_mean_db, 10.0 * std::log10(ratio / n), 1e-9);
  }
}

TEST_F(DatasetEval, DeterministicAcrossJobs) {
  const ModelParams p = init_params(ModelConfig::tiny(), 2);
  const std::vector<EvalMethod> methods{nlms_method(), model_method(p)};
  const EvalReport a = evaluate_dataset(manifest(), methods, {"", "", 1});
  const EvalReport b = evaluate_dataset(manifest(), methods, {"", "", 3});
  EXPECT_EQ(a.csv(), b.csv());
  EXPECT_EQ(a.table(), b.table());
}

TEST_F(DatasetEval, ScorerFillsDeltaPesq) {
  const fs::path work = scratch_dir("work");
  const EvalReport r =
      evaluate_dataset(manifest(), {identity_method(), nlms_method()}, {fake_scorer(work).string(), work.string(), 2});
  EXPECT_EQ(r.pesq_status, "ok");
  ASSERT_EQ(r.rows.size(), 12u);
  for (const auto& row : r.rows) {
    ASSERT_TRUE(row.delta_pesq) << row.id;
    if (row.method == "identity") EXPECT_EQ(*row.delta_pesq, 0.0);
  }
  fs::remove_all(work);
}

TEST(DatasetEvalFailures, MissingFilesItemizedAndEvaluationContinues) {
  const fs::path dir = scratch_dir("missing");
  std::vector<MixtureSpec> specs{linear_spec("keep", 1, 1.0, 0.5), linear_spec("lost", 2, 1.0, 0.5)};
  generate_dataset(specs, dir.string());
  fs::remove(dir / "lost_mix.wav");
  const EvalReport r = evaluate_dataset((dir / kManifestName).string(), {identity_method()});
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].id, "lost");
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].id, "keep");
  EXPECT_NE(r.table().find("FAILED lost"), std::string::npos);
  fs::remove_all(dir);
}

TEST(RunMethod, ModelEstimatePaddedToInputLength) {
  const ModelParams p = init_params(ModelConfig::tiny(), 3);
  std::mt19937_64 rng(9);
  const auto far = random_vector(1013, rng);
  const auto mix = random_vector(1013, rng);
  const Waveform est = run_method(model_method(p), far, mix);
  ASSERT_EQ(est.size(), 1013u);
  const std::size_t covered = (ModelConfig::tiny().frames_for(1013) - 1) * 20 + 40;
  for (std::size_t i = covered; i < est.size(); ++i) EXPECT_EQ(est[i], 0.0);
}

}  // namespace
}  // namespace msaec
