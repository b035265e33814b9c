#include "msaec/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include "msaec/error.hpp"
#include "msaec/parallel.hpp"

namespace msaec {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double db10(double ratio) { return 10.0 * std::log10(ratio); }

// Rounds to a multiple of 2^-32 so that sums of a few such values are exact.
double snap(double x) { return std::ldexp(std::nearbyint(std::ldexp(x, 32)), -32); }

void normalize_energy(Waveform& g) {
  double energy = 0.0;
  for (double v : g) energy += v * v;
  if (!(energy > 0.0) || !std::isfinite(energy)) throw ContractError("impulse response has no energy");
  const double s = 1.0 / std::sqrt(energy);
  for (double& v : g) v *= s;
}

}  // namespace

Waveform synth_rir(const RirSpec& spec) {
  if (!(spec.t60 > 0.0)) throw ContractError("T60 must be positive");
  if (spec.sample_rate == 0) throw ContractError("sample rate must be positive");
  const double fs = static_cast<double>(spec.sample_rate);
  const std::size_t length =
      spec.length != 0 ? spec.length : std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(spec.t60 * fs)));
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> white(0.0, 1.0);
  const double decay = 3.0 * std::numbers::ln10 / (fs * spec.t60);
  Waveform g(length);
  for (std::size_t n = 0; n < length; ++n) g[n] = white(rng) * std::exp(-decay * static_cast<double>(n));
  normalize_energy(g);
  return g;
}

Waveform load_rir(const RirSpec& spec) {
  if (spec.path.empty()) return synth_rir(spec);
  WavData wav = read_wav(spec.path);
  if (wav.sample_rate != spec.sample_rate) {
    throw IoError(spec.path + ": sample rate " + std::to_string(wav.sample_rate) + ", expected " +
                  std::to_string(spec.sample_rate));
  }
  if (spec.length != 0 && wav.samples.size() > spec.length) wav.samples.resize(spec.length);
  normalize_energy(wav.samples);
  return wav.samples;
}

double estimate_t60(std::span<const double> rir, std::size_t sample_rate) {
  std::vector<double> edc(rir.size() + 1, 0.0);
  for (std::size_t n = rir.size(); n-- > 0;) edc[n] = edc[n + 1] + rir[n] * rir[n];
  if (!(edc[0] > 0.0)) throw ContractError("impulse response has no energy");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < rir.size(); ++n) {
    const double level = db10(edc[n] / edc[0]);
    if (level > -5.0) continue;
    if (level < -25.0) break;
    const double x = static_cast<double>(n);
    sx += x;
    sy += level;
    sxx += x * x;
    sxy += x * level;
    ++count;
  }
  if (count < 2) throw ContractError("impulse response too short to fit a decay");
  const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);  // dB per sample
  return -60.0 / slope / static_cast<double>(sample_rate);
}

std::string to_string(NonlinearMode mode) {
  switch (mode) {
    case NonlinearMode::kLinear:
      return "linear";
    case NonlinearMode::kHardClip:
      return "hard_clip";
    case NonlinearMode::kSigmoid:
      return "sigmoid";
    case NonlinearMode::kClipThenSigmoid:
      return "clip_then_sigmoid";
  }
  return "linear";
}

NonlinearMode parse_nonlinear_mode(const std::string& name) {
  for (auto m : {NonlinearMode::kLinear, NonlinearMode::kHardClip, NonlinearMode::kSigmoid,
                 NonlinearMode::kClipThenSigmoid}) {
    if (to_string(m) == name) return m;
  }
  throw ContractError("unknown nonlinearity '" + name + "' (linear, hard_clip, sigmoid, clip_then_sigmoid)");
}

Waveform hard_clip(std::span<const double> x, double clip_ratio) {
  if (!(clip_ratio > 0.0 && clip_ratio <= 1.0)) throw ContractError("clip_ratio must be in (0, 1]");
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  Waveform out(x.begin(), x.end());
  if (peak == 0.0) return out;
  const double threshold = clip_ratio * peak;
  for (double& v : out) v = std::clamp(v, -threshold, threshold);
  return out;
}

Waveform sigmoid_distort(std::span<const double> x, const NonlinearitySpec& spec) {
  Waveform out(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double b = spec.poly_linear * x[n] + spec.poly_quadratic * x[n] * x[n];
    const double a = b > 0.0 ? spec.slope_positive : spec.slope_negative;
    out[n] = spec.gain * (2.0 / (1.0 + std::exp(-a * b)) - 1.0);
  }
  return out;
}

Waveform apply_nonlinearity(std::span<const double> x, const NonlinearitySpec& spec) {
  switch (spec.mode) {
    case NonlinearMode::kLinear:
      return Waveform(x.begin(), x.end());
    case NonlinearMode::kHardClip:
      return hard_clip(x, spec.clip_ratio);
    case NonlinearMode::kSigmoid:
      return sigmoid_distort(x, spec);
    case NonlinearMode::kClipThenSigmoid:
      return sigmoid_distort(hard_clip(x, spec.clip_ratio), spec);
  }
  return Waveform(x.begin(), x.end());
}

Waveform convolve(std::span<const double> x, std::span<const double> g) {
  if (g.empty()) throw ContractError("empty impulse response");
  Waveform y(x.size(), 0.0);
  for (std::size_t n = 0; n < x.size(); ++n) {
    const std::size_t taps = std::min(n + 1, g.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < taps; ++k) acc += g[k] * x[n - k];
    y[n] = acc;
  }
  return y;
}

Echo make_echo(std::span<const double> x, std::span<const double> g, const NonlinearitySpec& spec) {
  if (x.empty()) throw ContractError("empty far-end signal");
  Echo e;
  e.linear = convolve(x, g);
  e.nonlinear = spec.mode == NonlinearMode::kLinear ? e.linear : convolve(apply_nonlinearity(x, spec), g);
  return e;
}

std::vector<Region> silent_regions(std::span<const double> x, std::size_t sample_rate) {
  const std::size_t window = std::max<std::size_t>(1, sample_rate / 100);
  std::vector<Region> out;
  for (std::size_t begin = 0; begin < x.size(); begin += window) {
    const std::size_t end = std::min(begin + window, x.size());
    double energy = 0.0;
    for (std::size_t n = begin; n < end; ++n) energy += x[n] * x[n];
    energy /= static_cast<double>(end - begin);
    if (energy > 0.0 && db10(energy) >= kSilenceDbfs) continue;
    if (!out.empty() && out.back().end == begin) {
      out.back().end = end;
    } else {
      out.push_back({begin, end});
    }
  }
  return out;
}

std::vector<Region> complement(const std::vector<Region>& regions, std::size_t length) {
  std::vector<Region> out;
  std::size_t cursor = 0;
  for (const Region& r : regions) {
    if (r.begin > cursor) out.push_back({cursor, r.begin});
    cursor = std::max(cursor, r.end);
  }
  if (cursor < length) out.push_back({cursor, length});
  return out;
}

std::vector<Region> intersect(const std::vector<Region>& a, const std::vector<Region>& b) {
  std::vector<Region> out;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const std::size_t begin = std::max(a[i].begin, b[j].begin);
    const std::size_t end = std::min(a[i].end, b[j].end);
    if (begin < end) out.push_back({begin, end});
    if (a[i].end < b[j].end) {
      ++i;
    } else {
      ++j;
    }
  }
  return out;
}

std::size_t total_length(const std::vector<Region>& regions) {
  std::size_t n = 0;
  for (const Region& r : regions) n += r.end - r.begin;
  return n;
}

double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

double mean_power(std::span<const double> x, const std::vector<Region>& regions) {
  if (regions.empty()) return mean_power(x);
  double s = 0.0;
  std::size_t n = 0;
  for (const Region& r : regions) {
    for (std::size_t i = r.begin; i < r.end && i < x.size(); ++i) s += x[i] * x[i];
    n += r.end - r.begin;
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

SerMix mix_at_ser(std::span<const double> near, std::span<const double> echo, double ser_db,
                  const std::vector<Region>& regions) {
  if (near.size() != echo.size()) {
    throw DimensionError("mix_at_ser: near has " + std::to_string(near.size()) + " samples, echo " +
                         std::to_string(echo.size()));
  }
  const double p_near = mean_power(near, regions);
  const double p_echo = mean_power(echo, regions);
  if (!(p_near > 0.0)) throw ContractError("near-end signal is silent over the SER region");
  if (!(p_echo > 0.0)) throw ContractError("echo is silent over the SER region");
  SerMix out;
  out.alpha = std::sqrt(p_near / (p_echo * std::pow(10.0, ser_db / 10.0)));
  out.scaled_echo.resize(echo.size());
  out.mixture.resize(echo.size());
  for (std::size_t n = 0; n < echo.size(); ++n) {
    out.scaled_echo[n] = out.alpha * echo[n];
    out.mixture[n] = near[n] + out.scaled_echo[n];
  }
  out.realized_ser_db = db10(p_near / mean_power(out.scaled_echo, regions));
  return out;
}

NoisyMix add_noise_at_snr(std::span<const double> mixture, std::optional<double> snr_db, std::uint64_t seed) {
  NoisyMix out;
  out.mixture.assign(mixture.begin(), mixture.end());
  out.noise.assign(mixture.size(), 0.0);
  out.realized_snr_db = std::numeric_limits<double>::infinity();
  if (!snr_db) return out;
  const double p_mix = mean_power(mixture);
  if (!(p_mix > 0.0)) throw ContractError("cannot add noise at an SNR to a silent mixture");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> white(0.0, 1.0);
  for (double& v : out.noise) v = white(rng);
  const double s = std::sqrt(p_mix / (mean_power(out.noise) * std::pow(10.0, *snr_db / 10.0)));
  for (std::size_t n = 0; n < mixture.size(); ++n) {
    out.noise[n] *= s;
    out.mixture[n] += out.noise[n];
  }
  out.realized_snr_db = db10(p_mix / mean_power(out.noise));
  return out;
}

Waveform synth_source(const SourceSpec& spec, std::size_t sample_rate) {
  if (!(spec.duration > 0.0)) throw ContractError("source duration must be positive");
  const double fs = static_cast<double>(sample_rate);
  const std::size_t n = static_cast<std::size_t>(std::lround(spec.duration * fs));
  const std::size_t begin = std::min(n, static_cast<std::size_t>(std::lround(std::max(0.0, spec.active_begin) * fs)));
  const std::size_t end =
      spec.active_end < 0.0 ? n : std::min(n, static_cast<std::size_t>(std::lround(spec.active_end * fs)));
  Waveform x(n, 0.0);
  if (begin >= end) return x;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  const double f0 = 90.0 + 140.0 * uni(rng);
  const double vibrato_rate = 0.3 + uni(rng);
  const double syllable_rate = 3.0 + 3.0 * uni(rng);
  const double vibrato_phase = two_pi * uni(rng);
  const double syllable_phase = two_pi * uni(rng);
  constexpr int kHarmonics = 10;
  std::vector<double> harmonic_phase(kHarmonics), harmonic_gain(kHarmonics);
  for (int h = 0; h < kHarmonics; ++h) {
    harmonic_phase[h] = two_pi * uni(rng);
    harmonic_gain[h] = (0.5 + uni(rng)) / (h + 1);
  }
  std::normal_distribution<double> white(0.0, 1.0);
  double ar1 = 0.0, ar2 = 0.0, phase = 0.0;
  const std::size_t fade = std::min<std::size_t>(sample_rate / 100, (end - begin) / 2);
  for (std::size_t i = begin; i < end; ++i) {
    const double t = static_cast<double>(i) / fs;
    phase += two_pi * f0 * (1.0 + 0.08 * std::sin(two_pi * vibrato_rate * t + vibrato_phase)) / fs;
    double voiced = 0.0;
    for (int h = 0; h < kHarmonics; ++h) voiced += harmonic_gain[h] * std::sin((h + 1) * phase + harmonic_phase[h]);
    const double noise = white(rng) + 1.3 * ar1 - 0.6 * ar2;
    ar2 = ar1;
    ar1 = noise;
    const double s = 0.5 + 0.5 * std::sin(two_pi * syllable_rate * t + syllable_phase);
    double v = (0.2 + 0.8 * s * s) * (voiced + 0.05 * noise);
    const std::size_t from_edge = std::min(i - begin, end - 1 - i);
    if (from_edge < fade) v *= 0.5 - 0.5 * std::cos(std::numbers::pi * (from_edge + 0.5) / fade);
    x[i] = v;
  }
  const double rms = std::sqrt(mean_power(std::span(x).subspan(begin, end - begin)));
  const double target = std::pow(10.0, spec.level_db / 20.0);
  for (double& v : x) v *= target / rms;
  return x;
}

Waveform load_source(const SourceSpec& spec, std::size_t sample_rate) {
  if (spec.path.empty()) return synth_source(spec, sample_rate);
  WavData wav = read_wav(spec.path);
  if (wav.sample_rate != sample_rate) {
    throw IoError(spec.path + ": sample rate " + std::to_string(wav.sample_rate) + ", expected " +
                  std::to_string(sample_rate));
  }
  return wav.samples;
}

MixtureItem make_mixture(const MixtureSpec& spec, std::size_t sample_rate) {
  MixtureItem item;
  item.far = load_source(spec.far, sample_rate);
  Waveform near = load_source(spec.near, sample_rate);
  const std::size_t n = std::min(item.far.size(), near.size());
  if (n == 0) throw ContractError(spec.id + ": empty source");
  item.far.resize(n);
  near.resize(n);

  RirSpec rir = spec.rir;
  rir.sample_rate = sample_rate;
  const Echo echo = make_echo(item.far, load_rir(rir), spec.nonlinearity);
  const Waveform& raw_echo = echo.nonlinear;

  const auto double_talk_of = [n, sample_rate](std::span<const double> near_sig, std::span<const double> echo_sig) {
    return intersect(complement(silent_regions(near_sig, sample_rate), n),
                     complement(silent_regions(echo_sig, sample_rate), n));
  };
  const std::vector<Region> region = double_talk_of(near, raw_echo);
  if (region.empty()) throw ContractError(spec.id + ": no double-talk region to set the SER on");
  const SerMix mixed = mix_at_ser(near, raw_echo, spec.ser_db, region);
  const NoisyMix noisy = add_noise_at_snr(mixed.mixture, spec.snr_db, spec.seed);

  double peak = 0.0;
  for (double v : noisy.mixture) peak = std::max(peak, std::abs(v));
  item.output_gain = peak > 0.99 ? 0.99 / peak : 1.0;
  item.near.resize(n);
  item.echo.resize(n);
  item.noise.resize(n);
  item.mixture.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    item.near[i] = snap(item.output_gain * near[i]);
    item.echo[i] = snap(item.output_gain * mixed.scaled_echo[i]);
    item.noise[i] = snap(item.output_gain * noisy.noise[i]);
    item.mixture[i] = item.near[i] + item.echo[i] + item.noise[i];
  }
  item.single_talk = silent_regions(item.near, sample_rate);
  item.double_talk = double_talk_of(item.near, item.echo);
  item.realized_ser_db = db10(mean_power(item.near, item.double_talk) / mean_power(item.echo, item.double_talk));
  if (spec.snr_db) {
    Waveform clean(n);
    for (std::size_t i = 0; i < n; ++i) clean[i] = item.near[i] + item.echo[i];
    item.realized_snr_db = db10(mean_power(clean) / mean_power(item.noise));
  }
  return item;
}

namespace {

std::vector<MixtureSpec> protocol(const ProtocolOptions& opts, std::span<const double> default_ser) {
  if (opts.count == 0) return {};
  if (!(opts.duration > 0.0)) throw ContractError("duration must be positive");
  const std::vector<double> sers = opts.ser_grid.empty() ? std::vector<double>(default_ser.begin(), default_ser.end())
                                                         : opts.ser_grid;
  const std::vector<double> t60s =
      opts.t60_grid.empty() ? std::vector<double>(std::begin(kT60Grid), std::end(kT60Grid)) : opts.t60_grid;
  const std::vector<NonlinearMode> modes =
      opts.modes.empty() ? std::vector<NonlinearMode>{NonlinearMode::kLinear, NonlinearMode::kHardClip,
                                                      NonlinearMode::kSigmoid, NonlinearMode::kClipThenSigmoid}
                         : opts.modes;
  std::mt19937_64 rng(opts.seed);
  const auto pick = [&rng](std::size_t size) { return std::uniform_int_distribution<std::size_t>(0, size - 1)(rng); };
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<MixtureSpec> specs;
  for (std::size_t i = 0; i < opts.count; ++i) {
    MixtureSpec s;
    char id[32];
    std::snprintf(id, sizeof id, "%05zu", i);
    s.id = opts.id_prefix + id;
    s.far.seed = rng();
    s.far.duration = opts.duration;
    s.near.seed = rng();
    s.near.duration = opts.duration;
    // Leading far-end single talk, then double talk.
    s.near.active_begin = opts.duration * (0.25 + 0.25 * uni(rng));
    s.near.level_db = -25.0 + 10.0 * uni(rng);
    s.rir.seed = rng();
    s.rir.t60 = t60s[pick(t60s.size())];
    s.nonlinearity.mode = modes[pick(modes.size())];
    s.ser_db = sers[pick(sers.size())];
    s.snr_db = opts.snr_db;
    s.seed = rng();
    specs.push_back(std::move(s));
  }
  return specs;
}

json regions_to_json(const std::vector<Region>& regions) {
  json out = json::array();
  for (const Region& r : regions) out.push_back({r.begin, r.end});
  return out;
}

std::vector<Region> regions_from_json(const json& j) {
  std::vector<Region> out;
  for (const auto& r : j) out.push_back({r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()});
  return out;
}

json source_to_json(const SourceSpec& s) {
  return {{"path", s.path},
          {"seed", s.seed},
          {"duration", s.duration},
          {"active_begin", s.active_begin},
          {"active_end", s.active_end},
          {"level_db", s.level_db}};
}

SourceSpec source_from_json(const json& j) {
  SourceSpec s;
  s.path = j.at("path").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.duration = j.at("duration").get<double>();
  s.active_begin = j.at("active_begin").get<double>();
  s.active_end = j.at("active_end").get<double>();
  s.level_db = j.at("level_db").get<double>();
  return s;
}

std::optional<double> optional_number(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<MixtureSpec> training_protocol(const ProtocolOptions& opts) { return protocol(opts, kTrainSerGrid); }

std::vector<MixtureSpec> test_protocol(const ProtocolOptions& opts) { return protocol(opts, kTestSerGrid); }

json to_json(const ManifestRecord& r) {
  const MixtureSpec& s = r.spec;
  return {{"id", s.id},
          {"far_path", r.far_path},
          {"mixture_path", r.mixture_path},
          {"near_path", r.near_path},
          {"sample_rate", kDatasetSampleRate},
          {"samples", r.samples},
          {"far", source_to_json(s.far)},
          {"near", source_to_json(s.near)},
          {"rir", {{"t60", s.rir.t60}, {"length", s.rir.length}, {"seed", s.rir.seed}, {"path", s.rir.path}}},
          {"nonlinearity",
           {{"mode", to_string(s.nonlinearity.mode)},
            {"clip_ratio", s.nonlinearity.clip_ratio},
            {"poly_linear", s.nonlinearity.poly_linear},
            {"poly_quadratic", s.nonlinearity.poly_quadratic},
            {"slope_positive", s.nonlinearity.slope_positive},
            {"slope_negative", s.nonlinearity.slope_negative},
            {"gain", s.nonlinearity.gain}}},
          {"ser_db", s.ser_db},
          {"snr_db", optional_json(s.snr_db)},
          {"noise_seed", s.seed},
          {"single_talk", regions_to_json(r.single_talk)},
          {"double_talk", regions_to_json(r.double_talk)},
          {"realized_ser_db", r.realized_ser_db},
          {"realized_snr_db", optional_json(r.realized_snr_db)},
          {"output_gain", r.output_gain}};
}

ManifestRecord record_from_json(const json& j) {
  ManifestRecord r;
  MixtureSpec& s = r.spec;
  s.id = j.at("id").get<std::string>();
  r.far_path = j.at("far_path").get<std::string>();
  r.mixture_path = j.at("mixture_path").get<std::string>();
  r.near_path = j.at("near_path").get<std::string>();
  r.samples = j.at("samples").get<std::size_t>();
  s.far = source_from_json(j.at("far"));
  s.near = source_from_json(j.at("near"));
  const json& rir = j.at("rir");
  s.rir.t60 = rir.at("t60").get<double>();
  s.rir.length = rir.at("length").get<std::size_t>();
  s.rir.seed = rir.at("seed").get<std::uint64_t>();
  s.rir.path = rir.at("path").get<std::string>();
  const json& nl = j.at("nonlinearity");
  s.nonlinearity.mode = parse_nonlinear_mode(nl.at("mode").get<std::string>());
  s.nonlinearity.clip_ratio = nl.at("clip_ratio").get<double>();
  s.nonlinearity.poly_linear = nl.at("poly_linear").get<double>();
  s.nonlinearity.poly_quadratic = nl.at("poly_quadratic").get<double>();
  s.nonlinearity.slope_positive = nl.at("slope_positive").get<double>();
  s.nonlinearity.slope_negative = nl.at("slope_negative").get<double>();
  s.nonlinearity.gain = nl.at("gain").get<double>();
  s.ser_db = j.at("ser_db").get<double>();
  s.snr_db = optional_number(j.at("snr_db"));
  s.seed = j.at("noise_seed").get<std::uint64_t>();
  r.single_talk = regions_from_json(j.at("single_talk"));
  r.double_talk = regions_from_json(j.at("double_talk"));
  r.realized_ser_db = j.at("realized_ser_db").get<double>();
  r.realized_snr_db = optional_number(j.at("realized_snr_db"));
  r.output_gain = j.at("output_gain").get<double>();
  return r;
}

std::vector<ManifestRecord> generate_dataset(const std::vector<MixtureSpec>& specs, const std::string& out_dir,
                                             std::size_t jobs) {
  std::set<std::string> ids;
  for (const auto& s : specs) {
    if (s.id.empty() || !ids.insert(s.id).second) throw ContractError("mixture ids must be unique and non-empty");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create directory " + out_dir);

  std::vector<ManifestRecord> records(specs.size());
  parallel_for(specs.size(), jobs, [&](std::size_t i) {
    const MixtureSpec& spec = specs[i];
    const MixtureItem item = make_mixture(spec);
    ManifestRecord& r = records[i];
    r.spec = spec;
    r.far_path = spec.id + "_far.wav";
    r.mixture_path = spec.id + "_mix.wav";
    r.near_path = spec.id + "_near.wav";
    write_wav((fs::path(out_dir) / r.far_path).string(), item.far);
    write_wav((fs::path(out_dir) / r.mixture_path).string(), item.mixture);
    write_wav((fs::path(out_dir) / r.near_path).string(), item.near);
    r.single_talk = item.single_talk;
    r.double_talk = item.double_talk;
    r.realized_ser_db = item.realized_ser_db;
    r.realized_snr_db = item.realized_snr_db;
    r.output_gain = item.output_gain;
    r.samples = item.mixture.size();
  });

  const std::string manifest = (fs::path(out_dir) / kManifestName).string();
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest);
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw IoError("write failed: " + manifest);
  return records;
}

std::vector<ManifestRecord> read_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path);
  std::vector<ManifestRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw IoError(manifest_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::vector<ManifestRecord> regenerate_dataset(const std::string& manifest_path, const std::string& out_dir,
                                               std::size_t jobs) {
  std::vector<MixtureSpec> specs;
  for (auto& r : read_manifest(manifest_path)) specs.push_back(std::move(r.spec));
  return generate_dataset(specs, out_dir, jobs);
}

std::vector<Utterance> load_dataset(const std::string& manifest_path) {
  const fs::path dir = fs::path(manifest_path).parent_path();
  std::vector<Utterance> out;
  for (const auto& r : read_manifest(manifest_path)) {
    Utterance u;
    u.id = r.spec.id;
    u.far = read_wav((dir / r.far_path).string()).samples;
    u.mixture = read_wav((dir / r.mixture_path).string()).samples;
    u.near = read_wav((dir / r.near_path).string()).samples;
    if (u.far.size() != u.mixture.size() || u.near.size() != u.mixture.size()) {
      throw IoError(r.spec.id + ": WAV lengths disagree");
    }
    u.single_talk = r.single_talk;
    u.ser_db = r.spec.ser_db;
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace msaec
