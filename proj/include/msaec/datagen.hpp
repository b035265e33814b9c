#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace msaec {

using Waveform = std::vector<double>;

inline constexpr std::size_t kDatasetSampleRate = 16000;

// ---- WAV (RIFF PCM, mono, 16-bit) ----

struct WavData {
  Waveform samples;  // full scale +-1.0
  std::size_t sample_rate = kDatasetSampleRate;
};

void write_wav(const std::string& path, std::span<const double> samples, std::size_t sample_rate = kDatasetSampleRate);
WavData read_wav(const std::string& path);
// Value of x after a 16-bit write/read round trip.
double quantize16(double x);

// ---- Room impulse response ----

struct RirSpec {
  double t60 = 0.4;          // seconds
  std::size_t length = 0;    // samples; 0 selects round(t60 * sample_rate)
  std::uint64_t seed = 0;
  std::string path;          // measured RIR; overrides the synthetic model
  std::size_t sample_rate = kDatasetSampleRate;
};

// T60 values of the reverberation sweep.
inline constexpr double kT60Grid[] = {0.2, 0.4, 0.6, 0.8, 0.9, 1.0, 1.25};

// Exponentially decaying white noise with unit energy.
Waveform synth_rir(const RirSpec& spec);
// synth_rir, or the WAV at spec.path normalized to unit energy.
Waveform load_rir(const RirSpec& spec);

// Decay time estimated from the Schroeder energy decay curve (linear fit of
// the -5..-25 dB range, extrapolated to -60 dB).
double estimate_t60(std::span<const double> rir, std::size_t sample_rate = kDatasetSampleRate);

// ---- Loudspeaker nonlinearity ----

enum class NonlinearMode { kLinear, kHardClip, kSigmoid, kClipThenSigmoid };

struct NonlinearitySpec {
  NonlinearMode mode = NonlinearMode::kLinear;
  double clip_ratio = 0.8;  // threshold as a fraction of the peak
  double poly_linear = 1.5;
  double poly_quadratic = -0.3;
  double slope_positive = 4.0;
  double slope_negative = 0.5;
  double gain = 0.8;
};

std::string to_string(NonlinearMode mode);
NonlinearMode parse_nonlinear_mode(const std::string& name);

Waveform hard_clip(std::span<const double> x, double clip_ratio);
Waveform sigmoid_distort(std::span<const double> x, const NonlinearitySpec& spec = {});
Waveform apply_nonlinearity(std::span<const double> x, const NonlinearitySpec& spec);

// Full linear convolution truncated to x.size().
Waveform convolve(std::span<const double> x, std::span<const double> g);

struct Echo {
  Waveform linear;     // x * g
  Waveform nonlinear;  // nl(x) * g
};

Echo make_echo(std::span<const double> x, std::span<const double> g, const NonlinearitySpec& spec);

// ---- Activity labels ----

struct Region {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  bool operator==(const Region&) const = default;
};

inline constexpr double kSilenceDbfs = -60.0;

// 10 ms windows whose energy is below -60 dBFS, merged into regions.
std::vector<Region> silent_regions(std::span<const double> x, std::size_t sample_rate = kDatasetSampleRate);
// Complement of `regions` within [0, length).
std::vector<Region> complement(const std::vector<Region>& regions, std::size_t length);
std::vector<Region> intersect(const std::vector<Region>& a, const std::vector<Region>& b);
std::size_t total_length(const std::vector<Region>& regions);

double mean_power(std::span<const double> x);
double mean_power(std::span<const double> x, const std::vector<Region>& regions);

// ---- Mixing ----

struct SerMix {
  Waveform mixture;
  Waveform scaled_echo;
  double alpha = 1.0;
  double realized_ser_db = 0.0;
};

// Scales echo so that near/echo power over `regions` (whole signal when
// empty) equals ser_db.
SerMix mix_at_ser(std::span<const double> near, std::span<const double> echo, double ser_db,
                  const std::vector<Region>& regions = {});

struct NoisyMix {
  Waveform mixture;
  Waveform noise;
  double realized_snr_db = 0.0;
};

// White Gaussian noise at snr_db over the whole utterance; no noise when
// snr_db is empty.
NoisyMix add_noise_at_snr(std::span<const double> mixture, std::optional<double> snr_db, std::uint64_t seed);

// ---- Sources and mixtures ----

// A waveform read from `path`, or a synthetic voiced/unvoiced source.
struct SourceSpec {
  std::string path;
  std::uint64_t seed = 0;
  double duration = 2.0;       // seconds
  double active_begin = 0.0;   // seconds; silence outside [begin, end)
  double active_end = -1.0;    // < 0: until the end
  double level_db = -20.0;     // RMS of the active part, dBFS
};

Waveform synth_source(const SourceSpec& spec, std::size_t sample_rate = kDatasetSampleRate);
Waveform load_source(const SourceSpec& spec, std::size_t sample_rate = kDatasetSampleRate);

struct MixtureSpec {
  std::string id;
  SourceSpec far;
  SourceSpec near;
  RirSpec rir;
  NonlinearitySpec nonlinearity;
  double ser_db = 0.0;
  std::optional<double> snr_db;
  std::uint64_t seed = 0;  // noise
};

inline constexpr double kTrainSerGrid[] = {-6.0, -3.0, 0.0, 3.0, 6.0};
inline constexpr double kTestSerGrid[] = {0.0, 3.5, 7.0};

struct MixtureItem {
  Waveform far;
  Waveform near;
  Waveform echo;  // scaled
  Waveform noise;
  Waveform mixture;
  std::vector<Region> single_talk;  // near-end silent
  std::vector<Region> double_talk;  // near-end and echo both active
  double realized_ser_db = 0.0;
  std::optional<double> realized_snr_db;
  double output_gain = 1.0;  // applied to near/echo/noise to keep the mixture in range
};

// Components are rounded to a 2^-32 grid so mixture - echo - noise == near
// holds exactly.
MixtureItem make_mixture(const MixtureSpec& spec, std::size_t sample_rate = kDatasetSampleRate);

struct ProtocolOptions {
  std::size_t count = 10;
  std::uint64_t seed = 0;
  double duration = 2.0;
  std::vector<double> ser_grid;           // empty: protocol default
  std::optional<double> snr_db;
  std::vector<double> t60_grid;           // empty: kT60Grid
  std::vector<NonlinearMode> modes;       // empty: all four
  std::string id_prefix = "item";
};

std::vector<MixtureSpec> training_protocol(const ProtocolOptions& opts);
std::vector<MixtureSpec> test_protocol(const ProtocolOptions& opts);

// ---- Dataset on disk ----

struct ManifestRecord {
  MixtureSpec spec;
  std::string far_path;  // relative to the manifest directory
  std::string mixture_path;
  std::string near_path;
  std::vector<Region> single_talk;
  std::vector<Region> double_talk;
  double realized_ser_db = 0.0;
  std::optional<double> realized_snr_db;
  double output_gain = 1.0;
  std::size_t samples = 0;
};

nlohmann::json to_json(const ManifestRecord& record);
ManifestRecord record_from_json(const nlohmann::json& j);

inline constexpr const char* kManifestName = "manifest.jsonl";

// Writes <id>_far.wav, <id>_mix.wav, <id>_near.wav and manifest.jsonl.
std::vector<ManifestRecord> generate_dataset(const std::vector<MixtureSpec>& specs, const std::string& out_dir,
                                             std::size_t jobs = 1);

std::vector<ManifestRecord> read_manifest(const std::string& manifest_path);

// Rebuilds every item of an existing manifest into out_dir.
std::vector<ManifestRecord> regenerate_dataset(const std::string& manifest_path, const std::string& out_dir,
                                               std::size_t jobs = 1);

struct Utterance {
  std::string id;
  Waveform far;
  Waveform mixture;
  Waveform near;
  std::vector<Region> single_talk;
  double ser_db = 0.0;
};

std::vector<Utterance> load_dataset(const std::string& manifest_path);

}  // namespace msaec
