#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msaec/layers.hpp"
#include "msaec/tensor.hpp"

namespace msaec {

// How the mixture and far-end representations enter the bottleneck.
enum class InputFusion {
  kConcat,  // stack both: 2N channels
  kSum,     // elementwise sum: N channels
};

struct ModelConfig {
  std::size_t num_filters = 512;          // N: encoder/decoder basis count
  std::size_t filter_length = 40;         // L: basis length in samples
  std::size_t bottleneck_channels = 128;  // E: bottleneck and residual path
  std::size_t skip_channels = 128;        // S: skip path, attention and LSTM width
  std::size_t hidden_channels = 256;      // H: inside each conv block
  std::size_t kernel_size = 3;            // K: depthwise kernel
  std::size_t blocks_per_repeat = 8;      // M: dilations 1, 2, ..., 2^(M-1)
  std::size_t repeats = 3;                // R
  std::size_t attention_width = 64;       // F: projection width
  std::size_t attention_heads = 16;       // h
  bool causal = true;
  std::size_t stride = 20;  // encoder hop in samples
  InputFusion fusion = InputFusion::kConcat;
  AttentionScale attention_scale = AttentionScale::kModelWidth;

  // The published configuration.
  static ModelConfig table1();
  // Small configuration used for gradient checks and desk-scale training.
  static ModelConfig tiny();

  // Throws ContractError on an inconsistent configuration.
  void validate() const;

  std::size_t num_blocks() const { return blocks_per_repeat * repeats; }
  std::size_t block_dilation(std::size_t block) const { return std::size_t{1} << (block % blocks_per_repeat); }
  std::size_t fused_channels() const { return fusion == InputFusion::kConcat ? 2 * num_filters : num_filters; }
  // Encoder frames for a waveform of `samples` samples; 0 if shorter than L.
  std::size_t frames_for(std::size_t samples) const;
  std::size_t output_length(std::size_t frames) const { return (frames - 1) * stride + filter_length; }

  bool operator==(const ModelConfig&) const = default;
};

inline constexpr std::size_t kSampleRate = 16000;

struct ModelParams {
  ModelConfig config;
  Tensor encoder_mix;  // [N x 1 x L]
  Tensor encoder_far;  // [N x 1 x L]
  Tensor decoder;      // [N x 1 x L]
  NormParams input_norm;
  Tensor bottleneck_kernel;  // [E x fused x 1]
  Tensor bottleneck_bias;    // [E]
  std::vector<ConvBlockParams> blocks;
  AttentionParams attention;
  LSTMParams lstm;
  Tensor mask_kernel;  // [N x S x 1]
  Tensor mask_bias;    // [N]

  // Every learnable tensor with a stable name, in checkpoint order.
  std::vector<NamedTensor> named() const;
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;
  // Deep copy; the result shares no storage with *this.
  ModelParams clone() const;
};

// Parameters with all weights zero, PReLU slopes 0.25 and unit norm gains.
ModelParams make_params(const ModelConfig& config);

// Seed-deterministic initialization: each weight uniform in
// +-sqrt(1/fan_in), biases zero except the LSTM forget gate (1).
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// waveform [1 x len] -> ReLU(frames * basis^T), laid out [N x T].
Tensor encode(const Tensor& waveform, const Tensor& basis, std::size_t stride);

// Overlap-add of per-frame w_k * V; masked [N x T] -> [1 x (T-1)*stride+L].
Tensor decode(const Tensor& masked, const Tensor& basis, std::size_t stride);

struct ExtractorOutput {
  std::vector<Tensor> skips;  // J tensors [S x T]
  Tensor features;            // [T*J x S]; row t*J + j is skip j at frame t
};

ExtractorOutput extractor_forward(const Tensor& mix_rep, const Tensor& far_rep, const ModelParams& params);

struct CancellerState {
  LSTMState lstm;  // lstm.h doubles as the next attention query
};

CancellerState canceller_init(const ModelConfig& config);

struct CancellerStep {
  Tensor mask;     // [1 x N], in (0, 1)
  Tensor weights;  // [h x J]
  CancellerState state;
};

// One time step: attention over the J layer features of frame t [J x S]
// queried by the previous hidden state, LSTM update, sigmoid mask.
CancellerStep canceller_step(const Tensor& layer_features, const CancellerState& state, const ModelParams& params);

struct ForwardResult {
  Tensor estimate;   // [1 x samples]
  Tensor masks;      // [N x T]
  Tensor attention;  // [T x h x J], not differentiable
};

ForwardResult forward_full(const Tensor& mix, const Tensor& far, const ModelParams& params);

// Convenience overload on plain sample vectors.
ForwardResult forward_full(std::span<const double> mix, std::span<const double> far, const ModelParams& params);

struct ReceptiveField {
  std::size_t nominal_samples = 0;  // R * 2^M * L
  double nominal_seconds = 0.0;
  std::size_t frames = 0;  // (K-1) * R * (2^M - 1) + 1 encoder frames
  std::size_t analytic_samples = 0;
  double analytic_seconds = 0.0;
};

ReceptiveField receptive_field(const ModelConfig& config, std::size_t sample_rate = kSampleRate);

// Causal frame-at-a-time inference state.
struct StreamState {
  std::vector<double> mix_buffer;  // last L input samples
  std::vector<double> far_buffer;
  std::size_t samples_seen = 0;
  CumulativeNorm input_norm;
  // Per block: norm statistics and the depthwise input history
  // [H x (dilation*(K-1)+1)], oldest column first.
  std::vector<CumulativeNorm> norm1;
  std::vector<CumulativeNorm> norm2;
  std::vector<std::vector<double>> history;
  LSTMState lstm;
  std::vector<double> overlap;  // pending overlap-add tail, L samples
  std::size_t frames_emitted = 0;
};

StreamState stream_init(const ModelParams& params);

// Consumes exactly `stride` samples of each input and returns `stride`
// output samples. The output is the offline estimate delayed by L - stride.
std::vector<double> stream_process_frame(StreamState& state, const ModelParams& params,
                                         std::span<const double> mix_frame, std::span<const double> far_frame);

// Emits the remaining L - stride samples of the last decoded frame.
std::vector<double> stream_flush(StreamState& state, const ModelParams& params);

std::size_t stream_latency(const ModelConfig& config);

// Versioned binary checkpoint; parameters stored as little-endian float32.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);
std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace msaec
