#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msaec/tensor.hpp"

namespace msaec {

// Floor added to the variance before the square root in gLN/cLN.
inline constexpr double kNormEpsilon = 1e-8;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct PReLUParams {
  Tensor alpha;  // [C]
};

enum class NormMode { kGlobal, kCumulative, kNone };

struct NormParams {
  Tensor gain;  // [C]
  Tensor bias;  // [C]
  NormMode mode = NormMode::kCumulative;
};

PReLUParams make_prelu(std::size_t channels, double alpha = 0.25);
NormParams make_norm(std::size_t channels, NormMode mode);

// x [C x T]; negative entries of channel c are scaled by alpha[c].
Tensor prelu(const Tensor& x, const PReLUParams& params);

// Normalizes with mean/variance over all C*T entries, then per-channel affine.
Tensor gln(const Tensor& x, const NormParams& params);

// At each step t, normalizes x[:, t] with statistics over channels and steps
// 0..t only, then per-channel affine.
Tensor cln(const Tensor& x, const NormParams& params);

// Dispatches on params.mode; kNone returns x unchanged.
Tensor normalize(const Tensor& x, const NormParams& params);

// Running statistics of cln for frame-at-a-time use. Produces the same
// values as cln() over the concatenated frames.
class CumulativeNorm {
 public:
  void reset();
  // in/out hold one time step of C channels.
  void step(std::span<const double> in, const NormParams& params, std::span<double> out);
  std::size_t steps() const { return steps_; }

 private:
  double sum_ = 0.0;
  double sum_sq_ = 0.0;
  std::size_t steps_ = 0;
};

struct ConvBlockParams {
  Tensor in_kernel;  // [H x E x 1]
  Tensor in_bias;    // [H]
  PReLUParams act1;
  NormParams norm1;
  Tensor dw_kernel;  // [H x 1 x K]
  Tensor dw_bias;    // [H]
  PReLUParams act2;
  NormParams norm2;
  Tensor res_kernel;   // [E x H x 1]
  Tensor res_bias;     // [E]
  Tensor skip_kernel;  // [S x H x 1]
  Tensor skip_bias;    // [S]
  std::size_t dilation = 1;

  std::size_t kernel_size() const { return dw_kernel.dim(2); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Zero-valued block; weights are filled by the model initializer.
ConvBlockParams make_conv_block(std::size_t residual_channels, std::size_t hidden_channels,
                                std::size_t skip_channels, std::size_t kernel_size, std::size_t dilation,
                                NormMode norm);

struct ConvBlockOutput {
  Tensor residual;  // [E x T]
  Tensor skip;      // [S x T]
};

// (left, right) zero padding of the depthwise conv that keeps the length.
// Causal puts all of dilation*(K-1) on the left; otherwise the extra sample
// of an odd total goes left.
std::pair<std::size_t, std::size_t> depthwise_padding(std::size_t dilation, std::size_t kernel_size, bool causal);

ConvBlockOutput conv_block(const Tensor& e_prev, const ConvBlockParams& params, bool causal);

struct LSTMParams {
  Tensor w_input;   // [I x 4S], gate order: input, forget, candidate, output
  Tensor w_hidden;  // [S x 4S]
  Tensor bias;      // [1 x 4S]

  std::size_t hidden_size() const { return w_hidden.dim(0); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct LSTMState {
  Tensor h;  // [1 x S]
  Tensor c;  // [1 x S]
};

LSTMParams make_lstm(std::size_t input_size, std::size_t hidden_size);
LSTMState lstm_zero_state(std::size_t hidden_size);

// Fused cell update from gate pre-activations [1 x 4S] and the previous
// cell state [1 x S]. Returns [2 x S] with rows (h, c).
Tensor lstm_cell(const Tensor& gates, const Tensor& c_prev);

// One step; the output y_t is the new state's h.
LSTMState lstm_step(const Tensor& x_t, const LSTMState& state, const LSTMParams& params);

// Softmax temperature of the attention scores.
enum class AttentionScale {
  kModelWidth,  // 1/sqrt(S)
  kHeadWidth,   // 1/sqrt(F/h)
};

// Compact multi-head attention: each projection is a single S x F matrix
// whose F columns are split into `heads` slices of width F/heads.
struct AttentionParams {
  Tensor w_query;  // [S x F]
  Tensor w_key;    // [S x F]
  Tensor w_value;  // [S x F]
  Tensor w_out;    // [F x S]
  std::size_t heads = 1;
  AttentionScale scale_mode = AttentionScale::kModelWidth;

  std::size_t model_width() const { return w_query.dim(0); }
  std::size_t projection_width() const { return w_query.dim(1); }
  double score_scale() const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

AttentionParams make_attention(std::size_t model_width, std::size_t projection_width, std::size_t heads,
                               AttentionScale scale_mode);

struct AttentionOutput {
  Tensor context;  // [1 x S] (or [1 x F] from attend_projected)
  Tensor weights;  // [heads x J], not differentiable
};

// Attention over already-projected query [1 x F], keys and values [J x F].
// The returned context is the concatenation of the heads, [1 x F].
AttentionOutput attend_projected(const Tensor& query, const Tensor& keys, const Tensor& values, std::size_t heads,
                                 double score_scale);

// q [1 x S] attends over the J rows of keys_values [J x S].
AttentionOutput multi_head_attention(const Tensor& q, const Tensor& keys_values, const AttentionParams& params);

}  // namespace msaec
