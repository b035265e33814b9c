// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "msaec/cli.hpp"
#include "msaec/datagen.hpp"
#include "msaec/eval.hpp"
#include "msaec/grad_check.hpp"
#include "msaec/layers.hpp"
#include "msaec/model.hpp"
#include "msaec/ops.hpp"
#include "msaec/trainer.hpp"

using namespace msaec;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

void fill(Tensor t, std::mt19937_64& rng, double lo = -0.5, double hi = 0.5) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.mutable_data()) v = dist(rng);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("msaec_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// ---- 1 ----
Verdict gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  const auto track = [&worst](double e) { worst = std::max(worst, e); };
  constexpr int kSeeds = 20;
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    {
      Tensor x = random_tensor({4, 12}, rng, -1, 1, true);
      Tensor k = random_tensor({4, 2, 3}, rng, -1, 1, true);
      Tensor b = random_tensor({4}, rng, -1, 1, true);
      const Tensor w = random_tensor({4, 12}, rng);
      Conv1dOptions o;
      o.dilation = 1 + seed % 3;
      o.left_pad = 2 * o.dilation;
      o.groups = 2;
      track(grad_check([&] { return sum(mul(w, conv1d(x, k, b, o))); }, {x, k, b}));
    }
    {
      Tensor x = random_tensor({3, 5}, rng, -1, 1, true);
      Tensor k = random_tensor({3, 1, 8}, rng, -1, 1, true);
      const Tensor w = random_tensor({1, 4 * 4 + 8}, rng);
      track(grad_check([&] { return sum(mul(w, conv1d_transpose(x, k, 4))); }, {x, k}));
    }
    {
      Tensor x = random_tensor({3, 7}, rng, -1, 1, true);
      const Tensor w = random_tensor({3, 7}, rng);
      for (NormMode mode : {NormMode::kGlobal, NormMode::kCumulative}) {
        NormParams p = make_norm(3, mode);
        fill(p.gain, rng, 0.5, 1.5);
        fill(p.bias, rng);
        track(grad_check([&] { return sum(mul(w, normalize(x, p))); }, {x, p.gain, p.bias}));
      }
      PReLUParams a = make_prelu(3, 0.3);
      track(grad_check([&] { return sum(mul(w, prelu(x, a))); }, {x, a.alpha}));
    }
    {
      const bool causal = seed % 2 == 0;
      ConvBlockParams p = make_conv_block(3, 4, 2, 3, 1u << (seed % 3), causal ? NormMode::kCumulative
                                                                               : NormMode::kGlobal);
      std::vector<NamedTensor> named;
      p.collect("", named);
      std::vector<Tensor> params;
      for (auto& nt : named) {
        if (nt.name.find("gain") != std::string::npos) {
          fill(nt.tensor, rng, 0.5, 1.5);
        } else if (nt.name.find("alpha") == std::string::npos) {
          fill(nt.tensor, rng);
        }
        params.push_back(nt.tensor);
      }
      Tensor e = random_tensor({3, 9}, rng, -1, 1, true);
      params.push_back(e);
      const Tensor wr = random_tensor({3, 9}, rng), ws = random_tensor({2, 9}, rng);
      track(grad_check(
          [&] {
            const ConvBlockOutput out = conv_block(e, p, causal);
            return add(sum(mul(wr, out.residual)), sum(mul(ws, out.skip)));
          },
          params));
    }
    {
      LSTMParams p = make_lstm(3, 4);
      fill(p.w_input, rng);
      fill(p.w_hidden, rng);
      fill(p.bias, rng);
      Tensor inputs = random_tensor({6, 3}, rng, -1, 1, true);
      track(grad_check(
          [&] {
            LSTMState s = lstm_zero_state(4);
            Tensor loss = Tensor::scalar(0.0);
            for (std::size_t t = 0; t < 6; ++t) {
              s = lstm_step(slice(inputs, 0, t, 1), s, p);
              loss = add(loss, sum(mul(s.h, s.c)));
            }
            return loss;
          },
          {inputs, p.w_input, p.w_hidden, p.bias}));
    }
    {
      AttentionParams p = make_attention(4, 8, seed % 2 ? 4 : 2, AttentionScale::kModelWidth);
      for (auto* t : {&p.w_query, &p.w_key, &p.w_value, &p.w_out}) fill(*t, rng, -1, 1);
      Tensor q = random_tensor({1, 4}, rng, -1, 1, true);
      Tensor kv = random_tensor({6, 4}, rng, -1, 1, true);
      const Tensor w = random_tensor({1, 4}, rng);
      track(grad_check([&] { return sum(mul(w, multi_head_attention(q, kv, p).context)); },
                       {q, kv, p.w_query, p.w_key, p.w_value, p.w_out}));
    }
    {
      // End to end on the tiny configuration.
      const ModelParams p = init_params(ModelConfig::tiny(), 2000 + seed);
      const std::size_t len = 1600;
      const Tensor mix = random_tensor({1, len}, rng);
      const Tensor far = random_tensor({1, len}, rng);
      const Tensor target =
          add(forward_full(mix, far, p).estimate, scale(random_tensor({1, len}, rng), 1e-6)).detach();
      GradCheckOptions opts;
      opts.eps = 1e-6;
      opts.samples_per_tensor = 2;
      opts.seed = static_cast<std::uint64_t>(seed);
      track(grad_check(
          [&] {
            const Tensor d = sub(forward_full(mix, far, p).estimate, target);
            return mean(mul(d, d));
          },
          p.tensors(), opts));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 300.0,
          "max rel err " + fmt("%.2e", worst) + " over " + std::to_string(kSeeds) + " seeds (< 1e-4), " +
              fmt("%.0f", secs) + " s (< 300 s)"};
}

// ---- 2 ----
Verdict causality_and_rf() {
  std::vector<std::string> notes;
  bool ok = true;
  {
    const ModelParams p = init_params(ModelConfig::tiny(), 31);
    std::mt19937_64 rng(31);
    const std::size_t len = 8000, s = 20, l = 40;
    const Tensor mix = random_tensor({1, len}, rng), far = random_tensor({1, len}, rng);
    const ForwardResult base = forward_full(mix, far, p);
    bool exact = true;
    for (std::size_t t : {50u, 200u, 390u}) {
      auto m = mix.to_vector(), f = far.to_vector();
      for (std::size_t n = t * s + l; n < len; ++n) {
        m[n] += 0.5;
        f[n] -= 0.5;
      }
      const ForwardResult r = forward_full(Tensor::from({1, len}, m), Tensor::from({1, len}, f), p);
      const std::size_t n_filters = p.config.num_filters, frames = base.masks.dim(1);
      for (std::size_t ch = 0; ch < n_filters; ++ch) {
        for (std::size_t k = 0; k <= t; ++k) exact &= base.masks[ch * frames + k] == r.masks[ch * frames + k];
      }
      for (std::size_t n = 0; n < (t + 1) * s; ++n) exact &= base.estimate[n] == r.estimate[n];
    }
    ok &= exact;
    notes.push_back(std::string("future perturbation ") + (exact ? "no effect" : "LEAKS"));
  }
  {
    ModelConfig c = ModelConfig::tiny();
    ModelParams p = init_params(c, 32);
    p.input_norm.mode = NormMode::kNone;
    for (auto& b : p.blocks) b.norm1.mode = b.norm2.mode = NormMode::kNone;
    const std::size_t rf = receptive_field(c).frames, frames = rf + 20, t = rf + 10, j = c.num_blocks();
    std::mt19937_64 rng(32);
    const Tensor mix = random_tensor({c.num_filters, frames}, rng, 0, 1);
    const Tensor far = random_tensor({c.num_filters, frames}, rng, 0, 1);
    const auto base = extractor_forward(mix, far, p).features.to_vector();
    const auto unchanged = [&](std::size_t frame) {
      auto m = mix.to_vector();
      for (std::size_t n = 0; n < c.num_filters; ++n) m[n * frames + frame] += 1.0;
      const auto f = extractor_forward(Tensor::from(mix.shape(), m), far, p).features.to_vector();
      const std::size_t b = t * j * c.skip_channels, e = (t + 1) * j * c.skip_channels;
      return std::equal(base.begin() + b, base.begin() + e, f.begin() + b);
    };
    bool outside = true;
    for (std::size_t k = 0; k + rf <= t; ++k) outside &= unchanged(k);
    const bool edge_inside = !unchanged(t - rf + 1);
    ok &= outside && edge_inside;
    notes.push_back("probe rf " + std::to_string(rf) + " frames: outside " + (outside ? "exactly 0" : "NONZERO") +
                    ", edge " + (edge_inside ? "inside" : "MISSED"));
  }
  {
    std::ostringstream out, err;
    const int code = run_cli({"rf"}, out, err);
    const bool printed = code == 0 && out.str().find("30720 samples / 1.92 s") != std::string::npos;
    ok &= printed;
    notes.push_back(std::string("rf cli ") + (printed ? "30720 samples / 1.92 s" : "WRONG"));
  }
  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  return {ok, detail};
}

// ---- 3 ----
Verdict streaming_equivalence() {
  const auto t0 = Clock::now();
  const fs::path dir = scratch("stream");
  save_checkpoint((dir / "m.ckpt").string(), init_params(ModelConfig::tiny(), 41));
  const ModelParams p = load_checkpoint((dir / "m.ckpt").string());
  double worst = 0.0;
  for (int u = 0; u < 10; ++u) {
    std::mt19937_64 rng(4100 + u);
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    std::vector<double> mix(32000), far(32000);
    for (auto& v : mix) v = dist(rng);
    for (auto& v : far) v = dist(rng);
    const auto offline = forward_full(mix, far, p).estimate.to_vector();
    StreamState s = stream_init(p);
    std::vector<double> streamed;
    for (std::size_t i = 0; i < mix.size(); i += 20) {
      const auto y = stream_process_frame(s, p, std::span(mix).subspan(i, 20), std::span(far).subspan(i, 20));
      streamed.insert(streamed.end(), y.begin(), y.end());
    }
    const auto tail = stream_flush(s, p);
    streamed.insert(streamed.end(), tail.begin(), tail.end());
    const std::size_t lat = stream_latency(p.config);
    if (streamed.size() != offline.size() + lat) return {false, "length mismatch"};
    for (std::size_t n = 0; n < offline.size(); ++n) worst = std::max(worst, std::abs(streamed[n + lat] - offline[n]));
  }
  fs::remove_all(dir);
  const double secs = seconds_since(t0);
  return {worst <= 1e-5 && secs < 60.0,
          "max |stream - offline| " + fmt("%.2e", worst) + " on 10 x 2 s (<= 1e-5), " + fmt("%.0f", secs) +
              " s (< 60 s)"};
}

// ---- 4 ----
Verdict overfit_smoke() {
  const auto t0 = Clock::now();
  std::vector<MixtureItem> mixes;
  std::vector<TrainItem> items;
  for (int i = 0; i < 8; ++i) {
    MixtureSpec s;
    s.id = "overfit" + std::to_string(i);
    s.far = {"", 100u + i, 1.0, 0.0, -1.0, -20.0};
    s.near = {"", 200u + i, 1.0, 0.5, -1.0, -20.0};
    s.rir.t60 = 0.2;
    s.rir.length = 512;
    s.rir.seed = 300 + i;
    s.ser_db = 0.0;
    s.seed = 400 + i;
    MixtureItem m = make_mixture(s);
    const std::size_t n = m.mixture.size();
    items.push_back({s.id, Tensor::from({1, n}, m.far), Tensor::from({1, n}, m.mixture), Tensor::from({1, n}, m.near)});
    mixes.push_back(std::move(m));
  }
  ModelParams p = init_params(ModelConfig::tiny(), 1);
  const std::vector<Tensor> tensors = p.tensors();
  OptimizerState opt = adam_init(tensors);
  const std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  const double before = evaluate_loss(p, items, LossReduction::kMean, jobs);
  constexpr std::size_t kSteps = 500, kBatch = 8;
  for (std::size_t step = 0; step < kSteps; ++step) {
    std::vector<const TrainItem*> batch;
    for (std::size_t b = 0; b < kBatch; ++b) batch.push_back(&items[(step * kBatch + b) % items.size()]);
    const StepResult r = batch_gradients(p, batch, LossReduction::kMean, jobs);
    adam_step(tensors, r.grads, opt, 1e-3);
  }
  const double after = evaluate_loss(p, items, LossReduction::kMean, jobs);
  double erle_sum = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Waveform est = run_method(model_method(p), mixes[i].far, mixes[i].mixture);
    erle_sum += erle_db(mixes[i].mixture, est, mixes[i].single_talk);
  }
  const double drop = 1.0 - after / before, erle = erle_sum / 8.0, secs = seconds_since(t0);
  return {drop >= 0.95 && erle >= 15.0 && secs < 1800.0,
          "MSE " + fmt("%.3e", before) + " -> " + fmt("%.3e", after) + " (drop " + fmt("%.1f", 100 * drop) +
              " %, need >= 95 %), ERLE " + fmt("%.1f", erle) + " dB (>= 15), " + fmt("%.0f", secs) + " s"};
}

// ---- 5 ----
Verdict nlms_anchor() {
  const auto t0 = Clock::now();
  double total = 0.0;
  constexpr int kItems = 6;
  for (int i = 0; i < kItems; ++i) {
    MixtureSpec s;
    s.id = "nlms" + std::to_string(i);
    s.far = {"", 500u + i, 4.0, 0.0, -1.0, -20.0};
    s.near = {"", 600u + i, 4.0, 4.0, -1.0, -20.0};  // never active
    s.rir.t60 = kT60Grid[i % 7];
    s.rir.length = 512;
    s.rir.seed = 700 + i;
    const Waveform far = synth_source(s.far);
    const Waveform echo = make_echo(far, synth_rir(s.rir), s.nonlinearity).nonlinear;
    const Waveform res = nlms_cancel(far, echo, {});
    total += erle_db(echo, res, {{echo.size() / 2, echo.size()}});
  }
  const double mean = total / kItems, secs = seconds_since(t0);
  return {mean >= 20.0 && secs < 120.0,
          "mean ERLE " + fmt("%.1f", mean) + " dB over the final half of " + std::to_string(kItems) +
              " items (>= 20), " + fmt("%.0f", secs) + " s"};
}

// ---- 6 ----
// Independent activity detector: 10 ms windows at or above -60 dBFS.
std::vector<bool> active_mask(const Waveform& x) {
  const std::size_t w = 160;
  std::vector<bool> m(x.size(), false);
  for (std::size_t b = 0; b < x.size(); b += w) {
    const std::size_t e = std::min(x.size(), b + w);
    double p = 0.0;
    for (std::size_t i = b; i < e; ++i) p += x[i] * x[i];
    p /= static_cast<double>(e - b);
    const bool on = p >= 1e-6;
    for (std::size_t i = b; i < e; ++i) m[i] = on;
  }
  return m;
}

Verdict data_fidelity() {
  std::vector<MixtureSpec> specs;
  ProtocolOptions train_opts;
  train_opts.count = 25;
  train_opts.seed = 61;
  ProtocolOptions test_opts = train_opts;
  test_opts.seed = 62;
  test_opts.id_prefix = "test";
  test_opts.snr_db = 10.0;
  for (auto& s : training_protocol(train_opts)) specs.push_back(s);
  for (auto& s : test_protocol(test_opts)) specs.push_back(s);
  double worst_ser = 0.0, worst_snr = 0.0;
  bool exact = true;
  std::vector<double> seen;
  for (const auto& spec : specs) {
    const MixtureItem item = make_mixture(spec);
    const auto near_on = active_mask(item.near), echo_on = active_mask(item.echo);
    double pn = 0.0, pe = 0.0;
    for (std::size_t i = 0; i < item.near.size(); ++i) {
      if (near_on[i] && echo_on[i]) {
        pn += item.near[i] * item.near[i];
        pe += item.echo[i] * item.echo[i];
      }
    }
    worst_ser = std::max(worst_ser, std::abs(10.0 * std::log10(pn / pe) - spec.ser_db));
    if (spec.snr_db) {
      double ps = 0.0, pw = 0.0;
      for (std::size_t i = 0; i < item.near.size(); ++i) {
        const double clean = item.near[i] + item.echo[i];
        ps += clean * clean;
        pw += item.noise[i] * item.noise[i];
      }
      worst_snr = std::max(worst_snr, std::abs(10.0 * std::log10(ps / pw) - *spec.snr_db));
    }
    for (std::size_t i = 0; i < item.near.size(); ++i) {
      exact &= item.mixture[i] - item.echo[i] - item.noise[i] == item.near[i];
    }
    if (std::find(seen.begin(), seen.end(), spec.ser_db) == seen.end()) seen.push_back(spec.ser_db);
  }
  bool covered = true;
  for (double v : {-6.0, -3.0, 0.0, 3.0, 6.0, 3.5, 7.0}) covered &= std::find(seen.begin(), seen.end(), v) != seen.end();
  return {worst_ser <= 0.1 && worst_snr <= 0.1 && exact && covered,
          "50 items, max SER err " + fmt("%.4f", worst_ser) + " dB, max SNR err " + fmt("%.4f", worst_snr) +
              " dB (<= 0.1), decomposition " + (exact ? "exact" : "INEXACT") + ", SER grid " +
              (covered ? "covered" : "NOT covered")};
}

// ---- 7 ----
Verdict attention_sanity() {
  const ModelParams p = init_params(ModelConfig::table1(), 71);
  MixtureSpec s;
  s.far = {"", 71, 1.0, 0.0, -1.0, -20.0};
  s.near = {"", 72, 1.0, 0.4, -1.0, -20.0};
  s.rir.seed = 73;
  const MixtureItem item = make_mixture(s);
  const Tensor att = forward_full(item.mixture, item.far, p).attention;
  const std::size_t frames = att.dim(0), heads = att.dim(1), layers = att.dim(2);
  double worst = 0.0, min_w = 1.0;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t h = 0; h < heads; ++h) {
      double total = 0.0;
      for (std::size_t j = 0; j < layers; ++j) {
        const double w = att[(t * heads + h) * layers + j];
        min_w = std::min(min_w, w);
        total += w;
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  const fs::path dir = scratch("attention");
  std::ostringstream out, err;
  const int code = run_cli({"inspect-attention", "--out", dir.string(), "--seed", "71"}, out, err);
  std::istringstream grid(slurp(dir / "attention.csv"));
  std::string header;
  std::getline(grid, header);
  const std::string expected = "# frames=" + std::to_string(frames) + " heads=16 layers=24";
  const bool cli_ok = code == 0 && header == expected;
  fs::remove_all(dir);
  return {min_w >= 0.0 && worst <= 1e-6 && heads == 16 && layers == 24 && cli_ok,
          std::to_string(frames) + "x" + std::to_string(heads) + "x" + std::to_string(layers) + ", min weight " +
              fmt("%.2e", min_w) + ", max |sum-1| " + fmt("%.1e", worst) + " (<= 1e-6), cli grid " +
              (cli_ok ? "T x 16 x 24" : "WRONG: " + header)};
}

// ---- 8 ----
Verdict schedule_fidelity() {
  const TrainConfig c;
  const bool endpoints = lr_schedule(0, c) == 1e-4 && lr_schedule(199, c) == 1e-8;
  std::vector<double> trace{1.0, 0.8, 0.7};
  std::size_t stop_at = 0;
  for (int e = 0; e < 30 && stop_at == 0; ++e) {
    trace.push_back(0.75);
    if (early_stop_check(trace, c.early_stop_patience)) stop_at = trace.size();
  }
  const std::size_t stagnant = stop_at - 3;
  return {endpoints && stagnant == 10,
          std::string("lr(0) = ") + fmt("%.0e", lr_schedule(0, c)) + ", lr(199) = " + fmt("%.0e", lr_schedule(199, c)) +
              " (exact: " + (endpoints ? "yes" : "NO") + "), stop after " + std::to_string(stagnant) +
              " stagnant epochs (10)"};
}

// ---- 9 ----
Verdict format_round_trips() {
  const fs::path dir = scratch("formats");
  bool ckpt_ok = true;
  for (const ModelConfig& c : {ModelConfig::tiny(), ModelConfig::table1()}) {
    const ModelParams p = init_params(c, 91);
    const std::string path = (dir / "m.ckpt").string();
    save_checkpoint(path, p);
    const std::string first = slurp(path);
    const ModelParams back = load_checkpoint(path);
    save_checkpoint(path, back);
    ckpt_ok &= slurp(path) == first && back.config == c;
    const auto a = p.tensors(), b = back.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t k = 0; k < a[i].numel(); ++k) {
        ckpt_ok &= static_cast<double>(static_cast<float>(a[i][k])) == b[i][k];
      }
    }
  }
  std::vector<double> every;
  for (int v = -32768; v <= 32767; ++v) every.push_back(v / 32768.0);
  write_wav((dir / "all.wav").string(), every);
  const bool wav_ok = read_wav((dir / "all.wav").string()).samples == every;

  ProtocolOptions o;
  o.count = 6;
  o.seed = 93;
  o.duration = 1.0;
  o.snr_db = 10.0;
  generate_dataset(training_protocol(o), (dir / "a").string(), 2);
  regenerate_dataset((dir / "a" / kManifestName).string(), (dir / "b").string(), 3);
  bool regen_ok = true;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    regen_ok &= slurp(e.path()) == slurp(dir / "b" / e.path().filename());
    ++files;
  }
  regen_ok &= files == 6 * 3 + 1;
  fs::remove_all(dir);
  return {ckpt_ok && wav_ok && regen_ok, std::string("checkpoint ") + (ckpt_ok ? "bit-exact" : "MISMATCH") +
                                             ", WAV all 65536 codes " + (wav_ok ? "exact" : "MISMATCH") +
                                             ", regeneration " + (regen_ok ? "byte-identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"causality and receptive field", causality_and_rf},
      {"streaming equivalence", streaming_equivalence},
      {"overfit smoke", overfit_smoke},
      {"NLMS anchor", nlms_anchor},
      {"data-pipeline fidelity", data_fidelity},
      {"attention sanity", attention_sanity},
      {"schedule fidelity", schedule_fidelity},
      {"format round-trips", format_round_trips},
  };
  // Optional argument: comma-free list of criterion numbers to run, e.g. "139".
  const std::string only = argc > 1 ? argv[1] : "";
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && only.find(static_cast<char>('1' + i)) == std::string::npos) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::printf("[%s] %zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
