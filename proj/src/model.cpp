#include "msaec/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "msaec/error.hpp"
#include "msaec/ops.hpp"

namespace msaec {
namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Tensor as_row(std::span<const double> samples) {
  if (samples.empty()) throw DimensionError("empty waveform");
  return Tensor::from({1, samples.size()}, std::vector<double>(samples.begin(), samples.end()));
}

}  // namespace

ModelConfig ModelConfig::table1() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.num_filters = 64;
  c.filter_length = 40;
  c.bottleneck_channels = 32;
  c.skip_channels = 32;
  c.hidden_channels = 64;
  c.kernel_size = 3;
  c.blocks_per_repeat = 5;
  c.repeats = 2;
  c.attention_width = 32;
  c.attention_heads = 4;
  return c;
}

void ModelConfig::validate() const {
  const auto fail = [](const std::string& what) { throw ContractError("model config: " + what); };
  if (num_filters == 0 || bottleneck_channels == 0 || skip_channels == 0 || hidden_channels == 0 ||
      attention_width == 0) {
    fail("channel counts must be positive");
  }
  if (filter_length == 0 || filter_length % 2 != 0) fail("filter_length must be even and positive");
  if (stride == 0 || filter_length % stride != 0) fail("stride must divide filter_length");
  if (kernel_size == 0) fail("kernel_size must be >= 1");
  if (blocks_per_repeat == 0 || repeats == 0) fail("blocks_per_repeat and repeats must be >= 1");
  if (blocks_per_repeat >= 31) fail("blocks_per_repeat too large");
  if (attention_heads == 0 || attention_width % attention_heads != 0) {
    fail("attention_heads must divide attention_width");
  }
}

std::size_t ModelConfig::frames_for(std::size_t samples) const {
  if (samples < filter_length) return 0;
  return (samples - filter_length) / stride + 1;
}

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out;
  out.push_back({"encoder_mix", encoder_mix});
  out.push_back({"encoder_far", encoder_far});
  out.push_back({"decoder", decoder});
  out.push_back({"input_norm_gain", input_norm.gain});
  out.push_back({"input_norm_bias", input_norm.bias});
  out.push_back({"bottleneck_kernel", bottleneck_kernel});
  out.push_back({"bottleneck_bias", bottleneck_bias});
  for (std::size_t j = 0; j < blocks.size(); ++j) blocks[j].collect("block" + std::to_string(j) + ".", out);
  attention.collect("attention.", out);
  lstm.collect("lstm.", out);
  out.push_back({"mask_kernel", mask_kernel});
  out.push_back({"mask_bias", mask_bias});
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& nt : named()) out.push_back(nt.tensor);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& nt : named()) n += nt.tensor.numel();
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = make_params(config);
  const auto src = named();
  const auto dst = copy.named();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto values = dst[i].tensor;
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), values.mutable_data().begin());
  }
  return copy;
}

ModelParams make_params(const ModelConfig& config) {
  config.validate();
  const std::size_t n = config.num_filters, l = config.filter_length;
  const NormMode norm = config.causal ? NormMode::kCumulative : NormMode::kGlobal;
  ModelParams p;
  p.config = config;
  p.encoder_mix = Tensor::zeros({n, 1, l});
  p.encoder_far = Tensor::zeros({n, 1, l});
  p.decoder = Tensor::zeros({n, 1, l});
  p.input_norm = make_norm(config.fused_channels(), norm);
  p.bottleneck_kernel = Tensor::zeros({config.bottleneck_channels, config.fused_channels(), 1});
  p.bottleneck_bias = Tensor::zeros({config.bottleneck_channels});
  for (std::size_t j = 0; j < config.num_blocks(); ++j) {
    p.blocks.push_back(make_conv_block(config.bottleneck_channels, config.hidden_channels, config.skip_channels,
                                       config.kernel_size, config.block_dilation(j), norm));
  }
  p.attention = make_attention(config.skip_channels, config.attention_width, config.attention_heads,
                               config.attention_scale);
  p.lstm = make_lstm(config.skip_channels, config.skip_channels);
  p.mask_kernel = Tensor::zeros({n, config.skip_channels, 1});
  p.mask_bias = Tensor::zeros({n});
  return p;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = make_params(config);
  std::mt19937_64 rng(seed);
  for (auto& nt : p.named()) {
    const std::string& name = nt.name;
    Tensor t = nt.tensor;
    if (ends_with(name, "alpha") || ends_with(name, "gain") || ends_with(name, "norm1_bias") ||
        ends_with(name, "norm2_bias") || name == "input_norm_bias") {
      continue;  // keep make_params defaults
    }
    if (name == "lstm.bias") {
      const std::size_t hidden = config.skip_channels;
      auto v = t.mutable_data();
      std::fill(v.begin() + static_cast<std::ptrdiff_t>(hidden), v.begin() + static_cast<std::ptrdiff_t>(2 * hidden),
                1.0);
      continue;
    }
    if (ends_with(name, "bias")) continue;
    const std::size_t fan_in = t.rank() == 3 ? t.dim(1) * t.dim(2) : t.dim(0);
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.mutable_data()) v = dist(rng);
  }
  return p;
}

Tensor encode(const Tensor& waveform, const Tensor& basis, std::size_t stride) {
  if (waveform.rank() != 2 || waveform.dim(0) != 1) {
    throw DimensionError("encode: waveform must be [1 x samples], got " + shape_str(waveform.shape()));
  }
  if (waveform.dim(1) < basis.dim(2)) {
    throw DimensionError("encode: input of " + std::to_string(waveform.dim(1)) + " samples is too short for L = " +
                         std::to_string(basis.dim(2)));
  }
  Conv1dOptions o;
  o.stride = stride;
  return relu(conv1d(waveform, basis, Tensor(), o));
}

Tensor decode(const Tensor& masked, const Tensor& basis, std::size_t stride) {
  return conv1d_transpose(masked, basis, stride);
}

ExtractorOutput extractor_forward(const Tensor& mix_rep, const Tensor& far_rep, const ModelParams& params) {
  if (mix_rep.shape() != far_rep.shape()) {
    throw DimensionError("extractor: mixture " + shape_str(mix_rep.shape()) + " vs far-end " +
                         shape_str(far_rep.shape()));
  }
  const ModelConfig& cfg = params.config;
  const Tensor fused = cfg.fusion == InputFusion::kConcat ? concat({mix_rep, far_rep}, 0) : add(mix_rep, far_rep);
  Tensor x = conv1d(normalize(fused, params.input_norm), params.bottleneck_kernel, params.bottleneck_bias, {});
  ExtractorOutput out;
  out.skips.reserve(params.blocks.size());
  for (const auto& block : params.blocks) {
    ConvBlockOutput b = conv_block(x, block, cfg.causal);
    out.skips.push_back(b.skip);
    x = b.residual;
  }
  out.features = interleave_columns(out.skips);
  return out;
}

CancellerState canceller_init(const ModelConfig& config) { return {lstm_zero_state(config.skip_channels)}; }

CancellerStep canceller_step(const Tensor& layer_features, const CancellerState& state, const ModelParams& params) {
  const AttentionOutput att = multi_head_attention(state.lstm.h, layer_features, params.attention);
  CancellerStep step;
  step.weights = att.weights;
  step.state.lstm = lstm_step(att.context, state.lstm, params.lstm);
  // Same arithmetic as the batched 1x1 conv in forward_full.
  step.mask = transpose(sigmoid(conv1d(transpose(step.state.lstm.h), params.mask_kernel, params.mask_bias, {})));
  return step;
}

ForwardResult forward_full(const Tensor& mix, const Tensor& far, const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  if (mix.shape() != far.shape()) {
    throw DimensionError("forward: mixture " + shape_str(mix.shape()) + " vs far-end " + shape_str(far.shape()));
  }
  const Tensor mix_rep = encode(mix, params.encoder_mix, cfg.stride);
  const Tensor far_rep = encode(far, params.encoder_far, cfg.stride);
  const ExtractorOutput ext = extractor_forward(mix_rep, far_rep, params);

  const std::size_t frames = mix_rep.dim(1);
  const std::size_t layers = params.blocks.size();
  const std::size_t heads = cfg.attention_heads;
  // Key/value projections do not depend on the recurrent query.
  const Tensor keys = matmul(ext.features, params.attention.w_key);
  const Tensor values = matmul(ext.features, params.attention.w_value);
  const double score_scale = params.attention.score_scale();

  std::vector<double> weights(frames * heads * layers);
  std::vector<Tensor> hidden;
  hidden.reserve(frames);
  LSTMState state = lstm_zero_state(cfg.skip_channels);
  for (std::size_t t = 0; t < frames; ++t) {
    const AttentionOutput att = attend_projected(matmul(state.h, params.attention.w_query),
                                                 slice(keys, 0, t * layers, layers),
                                                 slice(values, 0, t * layers, layers), heads, score_scale);
    std::copy(att.weights.data().begin(), att.weights.data().end(),
              weights.begin() + static_cast<std::ptrdiff_t>(t * heads * layers));
    state = lstm_step(matmul(att.context, params.attention.w_out), state, params.lstm);
    hidden.push_back(state.h);
  }
  ForwardResult result;
  result.masks = sigmoid(conv1d(transpose(concat(hidden, 0)), params.mask_kernel, params.mask_bias, {}));
  result.estimate = decode(mul(result.masks, mix_rep), params.decoder, cfg.stride);
  result.attention = Tensor::from({frames, heads, layers}, std::move(weights));
  return result;
}

ForwardResult forward_full(std::span<const double> mix, std::span<const double> far, const ModelParams& params) {
  return forward_full(as_row(mix), as_row(far), params);
}

ReceptiveField receptive_field(const ModelConfig& config, std::size_t sample_rate) {
  ReceptiveField rf;
  const std::size_t span = std::size_t{1} << config.blocks_per_repeat;
  rf.nominal_samples = config.repeats * span * config.filter_length;
  rf.nominal_seconds = static_cast<double>(rf.nominal_samples) / static_cast<double>(sample_rate);
  rf.frames = (config.kernel_size - 1) * config.repeats * (span - 1) + 1;
  rf.analytic_samples = (rf.frames - 1) * config.stride + config.filter_length;
  rf.analytic_seconds = static_cast<double>(rf.analytic_samples) / static_cast<double>(sample_rate);
  return rf;
}

std::size_t stream_latency(const ModelConfig& config) { return config.filter_length - config.stride; }

StreamState stream_init(const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  if (!cfg.causal) throw ContractError("streaming requires a causal model");
  StreamState s;
  s.mix_buffer.assign(cfg.filter_length, 0.0);
  s.far_buffer.assign(cfg.filter_length, 0.0);
  s.norm1.resize(params.blocks.size());
  s.norm2.resize(params.blocks.size());
  for (const auto& block : params.blocks) {
    const std::size_t span = block.dilation * (block.kernel_size() - 1) + 1;
    s.history.emplace_back(cfg.hidden_channels * span, 0.0);
  }
  s.lstm = lstm_zero_state(cfg.skip_channels);
  s.overlap.assign(cfg.filter_length, 0.0);
  return s;
}

namespace {

// Applies a cumulative norm to a [C x 1] column.
Tensor norm_column(const Tensor& column, CumulativeNorm& running, const NormParams& params) {
  std::vector<double> out(column.numel());
  running.step(column.data(), params, out);
  return Tensor::from(column.shape(), std::move(out));
}

void push_history(std::vector<double>& history, std::size_t channels, const Tensor& column) {
  const std::size_t span = history.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    double* row = history.data() + c * span;
    std::copy(row + 1, row + span, row);
    row[span - 1] = column[c];
  }
}

}  // namespace

std::vector<double> stream_process_frame(StreamState& state, const ModelParams& params,
                                         std::span<const double> mix_frame, std::span<const double> far_frame) {
  const ModelConfig& cfg = params.config;
  if (mix_frame.size() != cfg.stride || far_frame.size() != cfg.stride) {
    throw DimensionError("stream: frames must hold exactly " + std::to_string(cfg.stride) + " samples");
  }
  const auto shift_in = [&](std::vector<double>& buf, std::span<const double> hop) {
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(cfg.stride), buf.end(), buf.begin());
    std::copy(hop.begin(), hop.end(), buf.end() - static_cast<std::ptrdiff_t>(cfg.stride));
  };
  shift_in(state.mix_buffer, mix_frame);
  shift_in(state.far_buffer, far_frame);
  state.samples_seen += cfg.stride;
  if (state.samples_seen < cfg.filter_length) return std::vector<double>(cfg.stride, 0.0);

  const Tensor mix_rep = encode(as_row(state.mix_buffer), params.encoder_mix, cfg.stride);
  const Tensor far_rep = encode(as_row(state.far_buffer), params.encoder_far, cfg.stride);
  const Tensor fused = cfg.fusion == InputFusion::kConcat ? concat({mix_rep, far_rep}, 0) : add(mix_rep, far_rep);
  Tensor x = conv1d(norm_column(fused, state.input_norm, params.input_norm), params.bottleneck_kernel,
                    params.bottleneck_bias, {});

  std::vector<Tensor> skips;
  skips.reserve(params.blocks.size());
  for (std::size_t j = 0; j < params.blocks.size(); ++j) {
    const ConvBlockParams& block = params.blocks[j];
    Tensor y = prelu(conv1d(x, block.in_kernel, block.in_bias, {}), block.act1);
    y = norm_column(y, state.norm1[j], block.norm1);
    push_history(state.history[j], cfg.hidden_channels, y);
    const std::size_t span = state.history[j].size() / cfg.hidden_channels;
    Conv1dOptions dw;
    dw.dilation = block.dilation;
    dw.groups = cfg.hidden_channels;
    y = conv1d(Tensor::from({cfg.hidden_channels, span}, state.history[j]), block.dw_kernel, block.dw_bias, dw);
    y = norm_column(prelu(y, block.act2), state.norm2[j], block.norm2);
    skips.push_back(conv1d(y, block.skip_kernel, block.skip_bias, {}));
    x = add(conv1d(y, block.res_kernel, block.res_bias, {}), x);
  }

  CancellerState cs{state.lstm};
  const CancellerStep step = canceller_step(interleave_columns(skips), cs, params);
  state.lstm = step.state.lstm;
  const Tensor frame = decode(mul(transpose(step.mask), mix_rep), params.decoder, cfg.stride);
  ++state.frames_emitted;

  for (std::size_t i = 0; i < cfg.filter_length; ++i) state.overlap[i] += frame[i];
  std::vector<double> out(state.overlap.begin(), state.overlap.begin() + static_cast<std::ptrdiff_t>(cfg.stride));
  std::copy(state.overlap.begin() + static_cast<std::ptrdiff_t>(cfg.stride), state.overlap.end(),
            state.overlap.begin());
  std::fill(state.overlap.end() - static_cast<std::ptrdiff_t>(cfg.stride), state.overlap.end(), 0.0);
  return out;
}

std::vector<double> stream_flush(StreamState& state, const ModelParams& params) {
  const std::size_t tail = stream_latency(params.config);
  std::vector<double> out(state.overlap.begin(), state.overlap.begin() + static_cast<std::ptrdiff_t>(tail));
  std::fill(state.overlap.begin(), state.overlap.end(), 0.0);
  return out;
}

}  // namespace msaec
