#include "msaec/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>

#include "msaec/datagen.hpp"
#include "msaec/error.hpp"
#include "msaec/eval.hpp"
#include "msaec/trainer.hpp"

namespace msaec {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Kind { kUint, kNumber, kBool, kString, kNumberList, kStringList, kNumberOrNull };

const std::vector<std::pair<std::string, Kind>>& key_table() {
  static const std::vector<std::pair<std::string, Kind>> table{
      {"seed", Kind::kUint},
      {"jobs", Kind::kUint},
      {"model.preset", Kind::kString},
      {"model.num_filters", Kind::kUint},
      {"model.filter_length", Kind::kUint},
      {"model.bottleneck_channels", Kind::kUint},
      {"model.skip_channels", Kind::kUint},
      {"model.hidden_channels", Kind::kUint},
      {"model.kernel_size", Kind::kUint},
      {"model.blocks_per_repeat", Kind::kUint},
      {"model.repeats", Kind::kUint},
      {"model.attention_width", Kind::kUint},
      {"model.attention_heads", Kind::kUint},
      {"model.stride", Kind::kUint},
      {"model.causal", Kind::kBool},
      {"model.fusion", Kind::kString},
      {"model.attention_scale", Kind::kString},
      {"train.epochs_max", Kind::kUint},
      {"train.lr_start", Kind::kNumber},
      {"train.lr_end", Kind::kNumber},
      {"train.early_stop_patience", Kind::kUint},
      {"train.batch_size", Kind::kUint},
      {"train.checkpoint_every", Kind::kUint},
      {"train.loss", Kind::kString},
      {"train.grad_clip", Kind::kNumber},
      {"train.val_fraction", Kind::kNumberOrNull},
      {"data.protocol", Kind::kString},
      {"data.count", Kind::kUint},
      {"data.duration", Kind::kNumber},
      {"data.ser", Kind::kNumberList},
      {"data.snr", Kind::kNumberOrNull},
      {"data.t60", Kind::kNumberList},
      {"data.modes", Kind::kStringList},
      {"data.id_prefix", Kind::kString},
      {"nlms.taps", Kind::kUint},
      {"nlms.mu", Kind::kNumber},
      {"nlms.delta", Kind::kNumber},
      {"eval.methods", Kind::kStringList},
  };
  return table;
}

const std::vector<std::string> kSections{"model", "train", "data", "nlms", "eval"};

std::string valid_keys_text() {
  std::string s;
  for (const auto& k : cli_config_keys()) s += (s.empty() ? "" : ", ") + k;
  return s;
}

bool kind_accepts(Kind kind, const json& v) {
  switch (kind) {
    case Kind::kUint:
      return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    case Kind::kNumber:
      return v.is_number();
    case Kind::kBool:
      return v.is_boolean();
    case Kind::kString:
      return v.is_string();
    case Kind::kNumberOrNull:
      return v.is_number() || v.is_null();
    case Kind::kNumberList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); });
    case Kind::kStringList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
  }
  return false;
}

json::json_pointer pointer(const std::string& dotted) {
  std::string p = "/" + dotted;
  std::replace(p.begin(), p.end(), '.', '/');
  return json::json_pointer(p);
}

void set_key(json& cfg, const std::string& key, const json& value) {
  const auto& table = key_table();
  const auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == key; });
  if (it == table.end()) throw UsageError("unknown config key '" + key + "'; valid keys: " + valid_keys_text());
  // Model dimensions may be null before the preset is applied.
  const bool model_dim = key.rfind("model.", 0) == 0 && key != "model.preset";
  if (!(kind_accepts(it->second, value) || (model_dim && value.is_null()))) {
    throw UsageError("config key '" + key + "' has a value of the wrong type: " + value.dump());
  }
  cfg[pointer(key)] = value;
}

std::string fusion_name(InputFusion f) { return f == InputFusion::kSum ? "sum" : "concat"; }
std::string scale_name(AttentionScale s) { return s == AttentionScale::kHeadWidth ? "head_width" : "model_width"; }

}  // namespace

std::vector<std::string> cli_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, kind] : key_table()) keys.push_back(k);
  return keys;
}

json to_json(const ModelConfig& c) {
  return {{"num_filters", c.num_filters},
          {"filter_length", c.filter_length},
          {"bottleneck_channels", c.bottleneck_channels},
          {"skip_channels", c.skip_channels},
          {"hidden_channels", c.hidden_channels},
          {"kernel_size", c.kernel_size},
          {"blocks_per_repeat", c.blocks_per_repeat},
          {"repeats", c.repeats},
          {"attention_width", c.attention_width},
          {"attention_heads", c.attention_heads},
          {"stride", c.stride},
          {"causal", c.causal},
          {"fusion", fusion_name(c.fusion)},
          {"attention_scale", scale_name(c.attention_scale)}};
}

ModelConfig model_config_from_json(const json& m) {
  const std::string preset = m.value("preset", std::string("table1"));
  ModelConfig c;
  if (preset == "table1") {
    c = ModelConfig::table1();
  } else if (preset == "tiny") {
    c = ModelConfig::tiny();
  } else {
    throw UsageError("model.preset must be 'table1' or 'tiny', got '" + preset + "'");
  }
  const auto dim = [&](const char* key, std::size_t& field) {
    if (m.contains(key) && !m.at(key).is_null()) field = m.at(key).get<std::size_t>();
  };
  dim("num_filters", c.num_filters);
  dim("filter_length", c.filter_length);
  dim("bottleneck_channels", c.bottleneck_channels);
  dim("skip_channels", c.skip_channels);
  dim("hidden_channels", c.hidden_channels);
  dim("kernel_size", c.kernel_size);
  dim("blocks_per_repeat", c.blocks_per_repeat);
  dim("repeats", c.repeats);
  dim("attention_width", c.attention_width);
  dim("attention_heads", c.attention_heads);
  dim("stride", c.stride);
  if (m.contains("causal") && !m.at("causal").is_null()) c.causal = m.at("causal").get<bool>();
  if (m.contains("fusion") && !m.at("fusion").is_null()) {
    const std::string f = m.at("fusion").get<std::string>();
    if (f != "concat" && f != "sum") throw UsageError("model.fusion must be 'concat' or 'sum'");
    c.fusion = f == "sum" ? InputFusion::kSum : InputFusion::kConcat;
  }
  if (m.contains("attention_scale") && !m.at("attention_scale").is_null()) {
    const std::string s = m.at("attention_scale").get<std::string>();
    if (s != "model_width" && s != "head_width") {
      throw UsageError("model.attention_scale must be 'model_width' or 'head_width'");
    }
    c.attention_scale = s == "head_width" ? AttentionScale::kHeadWidth : AttentionScale::kModelWidth;
  }
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw UsageError(std::string("model config: ") + e.what());
  }
  return c;
}

json default_cli_config() {
  const TrainConfig t;
  const NlmsConfig n;
  json model = to_json(ModelConfig::table1());
  model["preset"] = "table1";
  return {{"seed", 0},
          {"jobs", 1},
          {"model", model},
          {"train",
           {{"epochs_max", t.epochs_max},
            {"lr_start", t.lr_start},
            {"lr_end", t.lr_end},
            {"early_stop_patience", t.early_stop_patience},
            {"batch_size", t.batch_size},
            {"checkpoint_every", t.checkpoint_every},
            {"loss", "mean"},
            {"grad_clip", t.grad_clip},
            {"val_fraction", nullptr}}},
          {"data",
           {{"protocol", "train"},
            {"count", 10},
            {"duration", 2.0},
            {"ser", json::array()},
            {"snr", nullptr},
            {"t60", json::array()},
            {"modes", json::array()},
            {"id_prefix", "item"}}},
          {"nlms", {{"taps", n.taps}, {"mu", n.mu}, {"delta", n.delta}}},
          {"eval", {{"methods", json::array({"identity", "nlms"})}}}};
}

json resolve_cli_config(const json& file, const std::vector<std::string>& overrides) {
  json cfg = default_cli_config();
  // Preset dimensions are re-derived unless given explicitly.
  for (auto& [k, v] : cfg["model"].items()) {
    if (k != "preset") v = nullptr;
  }
  if (!file.is_null()) {
    if (!file.is_object()) throw UsageError("config file must hold a JSON object");
    for (const auto& [k, v] : file.items()) {
      if (std::find(kSections.begin(), kSections.end(), k) != kSections.end() && v.is_object()) {
        for (const auto& [sub, value] : v.items()) set_key(cfg, k + "." + sub, value);
      } else {
        set_key(cfg, k, v);
      }
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), text = o.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    set_key(cfg, key, value);
  }
  const ModelConfig mc = model_config_from_json(cfg["model"]);
  const std::string preset = cfg["model"]["preset"];
  cfg["model"] = to_json(mc);
  cfg["model"]["preset"] = preset;
  return cfg;
}

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string checkpoint;
  std::string scorer;
  std::optional<bool> causal;
  std::vector<double> ser;
  std::optional<double> snr;
  std::vector<double> t60;
  bool save_attention = false;
  std::string data;
  std::string mix;
  std::string far;
  bool resume = false;
};

struct Context {
  json cfg;
  const Options& opts;
  std::ostream& out;
};

json load_config(const Options& o) {
  json file;
  if (!o.config_path.empty()) {
    std::ifstream f(o.config_path);
    if (!f) throw IoError("cannot open config file " + o.config_path);
    file = json::parse(f, nullptr, false);
    if (file.is_discarded()) throw UsageError("config file " + o.config_path + " is not valid JSON");
  }
  std::vector<std::string> overrides = o.overrides;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  if (o.jobs) overrides.push_back("jobs=" + std::to_string(*o.jobs));
  if (o.causal) overrides.push_back(std::string("model.causal=") + (*o.causal ? "true" : "false"));
  if (!o.ser.empty()) overrides.push_back("data.ser=" + json(o.ser).dump());
  if (o.snr) overrides.push_back("data.snr=" + json(*o.snr).dump());
  if (!o.t60.empty()) overrides.push_back("data.t60=" + json(o.t60).dump());
  return resolve_cli_config(file, overrides);
}

fs::path require_out(const Context& c) {
  if (c.opts.out.empty()) throw UsageError("--out is required");
  const fs::path out(c.opts.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

void write_raw(const fs::path& path, std::span<const double> x) {
  std::string bytes;
  for (double v : x) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
  write_text(path, bytes);
}

std::size_t jobs_of(const Context& c) { return std::max<std::size_t>(1, c.cfg["jobs"].get<std::size_t>()); }
std::uint64_t seed_of(const Context& c) { return c.cfg["seed"].get<std::uint64_t>(); }

Waveform read_input(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string(flag) + " is required");
  WavData w = read_wav(path);
  if (w.sample_rate != kSampleRate) {
    throw IoError(path + ": sample rate " + std::to_string(w.sample_rate) + ", expected " +
                  std::to_string(kSampleRate));
  }
  return std::move(w.samples);
}

std::pair<Waveform, Waveform> read_pair(const Options& o) {
  Waveform mix = read_input(o.mix, "--mix");
  Waveform far = read_input(o.far, "--far");
  if (mix.size() != far.size()) {
    throw DimensionError("--mix has " + std::to_string(mix.size()) + " samples, --far " + std::to_string(far.size()));
  }
  return {std::move(mix), std::move(far)};
}

ModelParams model_for(const Context& c) {
  if (!c.opts.checkpoint.empty()) return load_checkpoint(c.opts.checkpoint);
  return init_params(model_config_from_json(c.cfg["model"]), seed_of(c));
}

std::string attention_grid(const Tensor& attention) {
  const std::size_t frames = attention.dim(0), heads = attention.dim(1), layers = attention.dim(2);
  std::ostringstream s;
  s << "# frames=" << frames << " heads=" << heads << " layers=" << layers << "\n";
  s << "frame,head";
  for (std::size_t j = 0; j < layers; ++j) s << ",layer" << j;
  s << "\n" << std::setprecision(17);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t h = 0; h < heads; ++h) {
      s << t << "," << h;
      for (std::size_t j = 0; j < layers; ++j) s << "," << attention[(t * heads + h) * layers + j];
      s << "\n";
    }
  }
  return s.str();
}

void write_estimate(const fs::path& out, std::span<const double> estimate) {
  write_wav((out / "estimate.wav").string(), estimate);
  write_raw(out / "estimate.f64", estimate);
}

int cmd_synth_data(Context& c) {
  const fs::path out = require_out(c);
  const json& d = c.cfg["data"];
  ProtocolOptions p;
  p.count = d["count"];
  p.seed = seed_of(c);
  p.duration = d["duration"];
  p.ser_grid = d["ser"].get<std::vector<double>>();
  if (!d["snr"].is_null()) p.snr_db = d["snr"].get<double>();
  p.t60_grid = d["t60"].get<std::vector<double>>();
  for (const auto& m : d["modes"]) p.modes.push_back(parse_nonlinear_mode(m.get<std::string>()));
  p.id_prefix = d["id_prefix"];
  const std::string protocol = d["protocol"];
  if (protocol != "train" && protocol != "test") throw UsageError("data.protocol must be 'train' or 'test'");
  const auto specs = protocol == "train" ? training_protocol(p) : test_protocol(p);
  const auto records = generate_dataset(specs, out.string(), jobs_of(c));
  write_text(out / "config.json", c.cfg.dump(2) + "\n");
  c.out << "wrote " << records.size() << " mixtures to " << (out / kManifestName).string() << "\n";
  return kExitOk;
}

int cmd_train(Context& c) {
  const fs::path out = require_out(c);
  if (c.opts.data.empty()) throw UsageError("--data <manifest> is required");
  const json& t = c.cfg["train"];
  if (t["val_fraction"].is_null()) throw UsageError("train needs an explicit split: --set train.val_fraction=<0..1>");
  const double frac = t["val_fraction"];
  if (!(frac > 0.0 && frac < 1.0)) throw UsageError("train.val_fraction must lie in (0, 1)");
  json tj = t;
  tj.erase("val_fraction");
  tj["seed"] = seed_of(c);
  tj["jobs"] = jobs_of(c);
  TrainConfig tc;
  try {
    tc = train_config_from_json(tj);
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const ModelConfig mc = model_config_from_json(c.cfg["model"]);

  const auto utterances = load_dataset(c.opts.data);
  auto items = make_train_items(utterances);
  const std::size_t n_val = static_cast<std::size_t>(std::lround(frac * static_cast<double>(items.size())));
  if (n_val == 0 || n_val >= items.size()) {
    throw UsageError("val_fraction " + std::to_string(frac) + " leaves an empty split of " +
                     std::to_string(items.size()) + " items");
  }
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(tc.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<TrainItem> train_items, val_items;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_val ? val_items : train_items).push_back(items[order[k]]);
  }
  write_text(out / "config.json", c.cfg.dump(2) + "\n");
  c.out << "train items: " << train_items.size() << ", validation items: " << val_items.size() << "\n";

  TrainOptions to;
  to.out_dir = out.string();
  to.resume = c.opts.resume;
  to.on_epoch_end = [&](const EpochRecord& r) {
    c.out << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss << " lr " << r.lr
          << (r.best ? " *" : "") << "\n";
    return true;
  };
  const TrainResult r = train(mc, train_items, val_items, tc, to);
  c.out << "best epoch " << r.log.best_epoch << " val " << r.log.best_val_loss
        << (r.stopped_early ? " (early stop)" : "") << "\n";
  c.out << "checkpoint " << (out / kBestCheckpointName).string() << "\n";
  return kExitOk;
}

int cmd_infer(Context& c) {
  const fs::path out = require_out(c);
  if (c.opts.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const ModelParams params = load_checkpoint(c.opts.checkpoint);
  const auto [mix, far] = read_pair(c.opts);
  const ForwardResult r = forward_full(mix, far, params);
  Waveform estimate(r.estimate.data().begin(), r.estimate.data().end());
  estimate.resize(mix.size(), 0.0);
  write_estimate(out, estimate);
  if (c.opts.save_attention) write_text(out / "attention.csv", attention_grid(r.attention));
  c.out << "wrote " << estimate.size() << " samples to " << (out / "estimate.wav").string() << "\n";
  return kExitOk;
}

int cmd_stream(Context& c) {
  const fs::path out = require_out(c);
  if (c.opts.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const ModelParams params = load_checkpoint(c.opts.checkpoint);
  const auto [mix, far] = read_pair(c.opts);
  const ModelConfig& mc = params.config;
  const std::size_t frames = mc.frames_for(mix.size());
  if (frames == 0) {
    throw DimensionError("input of " + std::to_string(mix.size()) + " samples is shorter than one frame");
  }
  // Only the samples an offline pass would cover; L is a multiple of the hop.
  const std::size_t covered = mc.output_length(frames);
  StreamState state = stream_init(params);
  Waveform streamed;
  for (std::size_t pos = 0; pos < covered; pos += mc.stride) {
    const auto y = stream_process_frame(state, params, std::span(mix).subspan(pos, mc.stride),
                                        std::span(far).subspan(pos, mc.stride));
    streamed.insert(streamed.end(), y.begin(), y.end());
  }
  const auto tail = stream_flush(state, params);
  streamed.insert(streamed.end(), tail.begin(), tail.end());
  const std::size_t latency = stream_latency(mc);
  Waveform estimate(streamed.begin() + static_cast<std::ptrdiff_t>(latency), streamed.end());
  estimate.resize(mix.size(), 0.0);
  write_estimate(out, estimate);
  c.out << "streamed " << covered / mc.stride << " hops of " << mc.stride << " samples, latency " << latency
        << " samples (" << 1000.0 * static_cast<double>(latency) / kSampleRate << " ms)\n";
  return kExitOk;
}

int cmd_evaluate(Context& c) {
  const fs::path out = require_out(c);
  if (c.opts.data.empty()) throw UsageError("--data <manifest> is required");
  const json& n = c.cfg["nlms"];
  NlmsConfig nc;
  nc.taps = n["taps"];
  nc.mu = n["mu"];
  nc.delta = n["delta"];
  try {
    nc.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  std::optional<ModelParams> params;
  std::vector<EvalMethod> methods;
  auto names = c.cfg["eval"]["methods"].get<std::vector<std::string>>();
  if (!c.opts.checkpoint.empty() && std::find(names.begin(), names.end(), "model") == names.end()) {
    names.push_back("model");
  }
  for (const auto& name : names) {
    if (name == "identity") {
      methods.push_back(identity_method());
    } else if (name == "nlms") {
      methods.push_back(nlms_method(nc));
    } else if (name == "model") {
      if (c.opts.checkpoint.empty()) throw UsageError("method 'model' needs --checkpoint");
      params = load_checkpoint(c.opts.checkpoint);
      methods.push_back(model_method(*params));
    } else {
      throw UsageError("unknown method '" + name + "'; valid: identity, nlms, model");
    }
  }
  if (methods.empty()) throw UsageError("eval.methods is empty");
  EvalOptions eo;
  eo.scorer = c.opts.scorer;
  eo.work_dir = (out / "pesq_work").string();
  eo.jobs = jobs_of(c);
  const EvalReport report = evaluate_dataset(c.opts.data, methods, eo);
  write_text(out / "report.txt", report.table());
  write_text(out / "report.csv", report.csv());
  write_text(out / "config.json", c.cfg.dump(2) + "\n");
  c.out << report.table();
  return report.failures.empty() ? kExitOk : kExitRuntime;
}

int cmd_inspect_attention(Context& c) {
  const fs::path out = require_out(c);
  const ModelParams params = model_for(c);
  Waveform mix, far;
  if (c.opts.mix.empty() && c.opts.far.empty()) {
    MixtureSpec s;
    s.id = "probe";
    const std::uint64_t seed = seed_of(c);
    s.far = {"", seed * 4 + 1, 1.0, 0.0, -1.0, -20.0};
    s.near = {"", seed * 4 + 2, 1.0, 0.5, -1.0, -20.0};
    s.rir.seed = seed * 4 + 3;
    s.seed = seed * 4 + 4;
    const MixtureItem item = make_mixture(s);
    mix = item.mixture;
    far = item.far;
    c.out << "no --mix/--far given: using a synthetic 1 s mixture\n";
  } else {
    std::tie(mix, far) = read_pair(c.opts);
  }
  const ForwardResult r = forward_full(mix, far, params);
  write_text(out / "attention.csv", attention_grid(r.attention));
  c.out << "attention grid " << r.attention.dim(0) << " x " << r.attention.dim(1) << " x " << r.attention.dim(2)
        << " (frames x heads x layers) in " << (out / "attention.csv").string() << "\n";
  return kExitOk;
}

int cmd_rf(Context& c) {
  const ModelConfig mc =
      c.opts.checkpoint.empty() ? model_config_from_json(c.cfg["model"]) : load_checkpoint(c.opts.checkpoint).config;
  const ReceptiveField rf = receptive_field(mc);
  c.out << "receptive field (L*R*2^M): " << rf.nominal_samples << " samples / " << rf.nominal_seconds << " s\n";
  c.out << "receptive field (analytic): " << rf.frames << " frames / " << rf.analytic_samples << " samples / "
        << rf.analytic_seconds << " s\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale attention echo canceller"};
  app.require_subcommand(1);
  Options o;
  const auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON config file");
    sub->add_option("--set", o.overrides, "Override key=value (repeatable)");
    sub->add_option("--seed", o.seed, "Random seed");
    sub->add_option("--jobs", o.jobs, "Worker threads");
  };
  const auto inputs = [&o](CLI::App* sub) {
    sub->add_option("--mix", o.mix, "Microphone WAV");
    sub->add_option("--far", o.far, "Far-end WAV");
  };
  CLI::App* synth = app.add_subcommand("synth-data", "Synthesize a dataset");
  common(synth);
  synth->add_option("--out", o.out, "Output directory");
  synth->add_option("--ser", o.ser, "SER grid in dB")->delimiter(',');
  synth->add_option("--snr", o.snr, "White-noise SNR in dB");
  synth->add_option("--t60", o.t60, "T60 grid in seconds")->delimiter(',');

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
  common(train_cmd);
  train_cmd->add_option("--out", o.out, "Output directory");
  train_cmd->add_option("--data", o.data, "Dataset manifest");
  train_cmd->add_option("--causal", o.causal, "Causal model (true/false)");
  train_cmd->add_flag("--resume", o.resume, "Continue from the state in --out");

  CLI::App* infer = app.add_subcommand("infer", "Offline inference");
  common(infer);
  inputs(infer);
  infer->add_option("--out", o.out, "Output directory");
  infer->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  infer->add_flag("--save-attention", o.save_attention, "Also write attention.csv");

  CLI::App* stream = app.add_subcommand("stream", "Frame-by-frame inference");
  common(stream);
  inputs(stream);
  stream->add_option("--out", o.out, "Output directory");
  stream->add_option("--checkpoint", o.checkpoint, "Model checkpoint");

  CLI::App* evaluate = app.add_subcommand("evaluate", "Evaluate methods on a dataset");
  common(evaluate);
  evaluate->add_option("--out", o.out, "Output directory");
  evaluate->add_option("--data", o.data, "Dataset manifest");
  evaluate->add_option("--checkpoint", o.checkpoint, "Model checkpoint (adds the model method)");
  evaluate->add_option("--scorer", o.scorer, "External PESQ scorer executable");

  CLI::App* inspect = app.add_subcommand("inspect-attention", "Dump attention weights");
  common(inspect);
  inputs(inspect);
  inspect->add_option("--out", o.out, "Output directory");
  inspect->add_option("--checkpoint", o.checkpoint, "Model checkpoint (default: seeded init)");
  inspect->add_option("--causal", o.causal, "Causal model (true/false)");

  CLI::App* rf = app.add_subcommand("rf", "Print the receptive field");
  common(rf);
  rf->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  rf->add_option("--causal", o.causal, "Causal model (true/false)");

  std::vector<std::string> argv_store{"msaec"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    Context c{load_config(o), o, out};
    out << "seed: " << c.cfg["seed"].get<std::uint64_t>() << "\n";
    out << "config: " << c.cfg.dump() << "\n";
    const std::string name = sub->get_name();
    if (name == "synth-data") return cmd_synth_data(c);
    if (name == "train") return cmd_train(c);
    if (name == "infer") return cmd_infer(c);
    if (name == "stream") return cmd_stream(c);
    if (name == "evaluate") return cmd_evaluate(c);
    if (name == "inspect-attention") return cmd_inspect_attention(c);
    return cmd_rf(c);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n" << sub->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace msaec
