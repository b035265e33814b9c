#include "msaec/layers.hpp"

#include <algorithm>
#include <cmath>

#include "msaec/error.hpp"
#include "msaec/ops.hpp"

namespace msaec {
namespace {

void require_channels(const Tensor& x, const Tensor& per_channel, const char* op) {
  if (x.rank() != 2) throw DimensionError(std::string(op) + ": expected [C x T], got " + shape_str(x.shape()));
  if (per_channel.rank() != 1 || per_channel.dim(0) != x.dim(0)) {
    throw DimensionError(std::string(op) + ": parameter " + shape_str(per_channel.shape()) + " for input " +
                         shape_str(x.shape()));
  }
}

double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

PReLUParams make_prelu(std::size_t channels, double alpha) { return {Tensor::full({channels}, alpha)}; }

NormParams make_norm(std::size_t channels, NormMode mode) {
  return {Tensor::full({channels}, 1.0), Tensor::zeros({channels}), mode};
}

Tensor prelu(const Tensor& x, const PReLUParams& params) {
  require_channels(x, params.alpha, "prelu");
  const std::size_t channels = x.dim(0), steps = x.dim(1);
  const auto xd = x.data();
  const auto ad = params.alpha.data();
  std::vector<double> out(x.numel());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < steps; ++t) {
      const double v = xd[c * steps + t];
      out[c * steps + t] = v >= 0.0 ? v : ad[c] * v;
    }
  }
  const Tensor alpha = params.alpha;
  return autodiff::record(Tensor::from(x.shape(), std::move(out)), {x, alpha},
                          [x, alpha, channels, steps](std::span<const double> g) {
                            const auto xd = x.data();
                            const auto ad = alpha.data();
                            std::span<double> gx, ga;
                            if (x.requires_grad()) gx = x.grad_buffer();
                            if (alpha.requires_grad()) ga = alpha.grad_buffer();
                            for (std::size_t c = 0; c < channels; ++c) {
                              double acc = 0.0;
                              for (std::size_t t = 0; t < steps; ++t) {
                                const std::size_t i = c * steps + t;
                                const double v = xd[i];
                                if (v >= 0.0) {
                                  if (!gx.empty()) gx[i] += g[i];
                                } else {
                                  if (!gx.empty()) gx[i] += g[i] * ad[c];
                                  acc += g[i] * v;
                                }
                              }
                              if (!ga.empty()) ga[c] += acc;
                            }
                          });
}

Tensor gln(const Tensor& x, const NormParams& params) {
  require_channels(x, params.gain, "gln");
  require_channels(x, params.bias, "gln");
  const std::size_t channels = x.dim(0), steps = x.dim(1);
  const double n = static_cast<double>(x.numel());
  const auto xd = x.data();
  double m = 0.0;
  for (double v : xd) m += v;
  m /= n;
  double var = 0.0;
  for (double v : xd) var += (v - m) * (v - m);
  var /= n;
  const double r = 1.0 / std::sqrt(var + kNormEpsilon);
  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  const auto gd = params.gain.data();
  const auto bd = params.bias.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t i = c * steps + t;
      xhat[i] = (xd[i] - m) * r;
      out[i] = gd[c] * xhat[i] + bd[c];
    }
  }
  const Tensor gain = params.gain;
  const Tensor bias = params.bias;
  return autodiff::record(
      Tensor::from(x.shape(), std::move(out)), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), r, n, channels, steps](std::span<const double> g) {
        const auto gd = gain.data();
        if (bias.requires_grad()) {
          auto gb = bias.grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t t = 0; t < steps; ++t) gb[c] += g[c * steps + t];
          }
        }
        if (gain.requires_grad()) {
          auto gg = gain.grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t t = 0; t < steps; ++t) gg[c] += g[c * steps + t] * xhat[c * steps + t];
          }
        }
        if (!x.requires_grad()) return;
        double mean_g = 0.0, mean_gx = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t t = 0; t < steps; ++t) {
            const std::size_t i = c * steps + t;
            const double gh = g[i] * gd[c];
            mean_g += gh;
            mean_gx += gh * xhat[i];
          }
        }
        mean_g /= n;
        mean_gx /= n;
        auto gx = x.grad_buffer();
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t t = 0; t < steps; ++t) {
            const std::size_t i = c * steps + t;
            gx[i] += r * (g[i] * gd[c] - mean_g - xhat[i] * mean_gx);
          }
        }
      });
}

void CumulativeNorm::reset() {
  sum_ = 0.0;
  sum_sq_ = 0.0;
  steps_ = 0;
}

void CumulativeNorm::step(std::span<const double> in, const NormParams& params, std::span<double> out) {
  const std::size_t channels = in.size();
  double col = 0.0, col_sq = 0.0;
  for (double v : in) {
    col += v;
    col_sq += v * v;
  }
  sum_ += col;
  sum_sq_ += col_sq;
  ++steps_;
  const double n = static_cast<double>(channels * steps_);
  const double m = sum_ / n;
  const double var = std::max(sum_sq_ / n - m * m, 0.0);
  const double r = 1.0 / std::sqrt(var + kNormEpsilon);
  const auto gd = params.gain.data();
  const auto bd = params.bias.data();
  for (std::size_t c = 0; c < channels; ++c) out[c] = gd[c] * ((in[c] - m) * r) + bd[c];
}

Tensor cln(const Tensor& x, const NormParams& params) {
  require_channels(x, params.gain, "cln");
  require_channels(x, params.bias, "cln");
  const std::size_t channels = x.dim(0), steps = x.dim(1);
  const auto xd = x.data();
  const auto gd = params.gain.data();
  const auto bd = params.bias.data();
  std::vector<double> means(steps), rs(steps), xhat(x.numel()), out(x.numel());
  std::vector<bool> clamped(steps, false);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    double col = 0.0, col_sq = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = xd[c * steps + t];
      col += v;
      col_sq += v * v;
    }
    sum += col;
    sum_sq += col_sq;
    const double n = static_cast<double>(channels * (t + 1));
    const double m = sum / n;
    double var = sum_sq / n - m * m;
    if (var < 0.0) {
      var = 0.0;
      clamped[t] = true;
    }
    means[t] = m;
    rs[t] = 1.0 / std::sqrt(var + kNormEpsilon);
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = c * steps + t;
      xhat[i] = (xd[i] - m) * rs[t];
      out[i] = gd[c] * xhat[i] + bd[c];
    }
  }
  const Tensor gain = params.gain;
  const Tensor bias = params.bias;
  return autodiff::record(
      Tensor::from(x.shape(), std::move(out)), {x, gain, bias},
      [x, gain, bias, means = std::move(means), rs = std::move(rs), xhat = std::move(xhat),
       clamped = std::move(clamped), channels, steps](std::span<const double> g) {
        const auto xd = x.data();
        const auto gd = gain.data();
        if (bias.requires_grad()) {
          auto gb = bias.grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t t = 0; t < steps; ++t) gb[c] += g[c * steps + t];
          }
        }
        if (gain.requires_grad()) {
          auto gg = gain.grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t t = 0; t < steps; ++t) gg[c] += g[c * steps + t] * xhat[c * steps + t];
          }
        }
        if (!x.requires_grad()) return;
        auto gx = x.grad_buffer();
        // Gradients w.r.t. the running sums S1_t = sum x and S2_t = sum x^2,
        // pushed back to every x[:, tau <= t] by reverse cumulative sums.
        std::vector<double> d_s1(steps), d_s2(steps);
        for (std::size_t t = 0; t < steps; ++t) {
          const double r = rs[t];
          const double m = means[t];
          const double n = static_cast<double>(channels * (t + 1));
          double d_r = 0.0, d_m = 0.0;
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t i = c * steps + t;
            const double gh = g[i] * gd[c];
            gx[i] += gh * r;
            d_r += gh * (xd[i] - m);
            d_m -= gh * r;
          }
          const double d_var = clamped[t] ? 0.0 : d_r * (-0.5 * r * r * r);
          d_s1[t] = (d_m - 2.0 * m * d_var) / n;
          d_s2[t] = d_var / n;
        }
        double acc1 = 0.0, acc2 = 0.0;
        for (std::size_t t = steps; t-- > 0;) {
          acc1 += d_s1[t];
          acc2 += d_s2[t];
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t i = c * steps + t;
            gx[i] += acc1 + 2.0 * xd[i] * acc2;
          }
        }
      });
}

Tensor normalize(const Tensor& x, const NormParams& params) {
  switch (params.mode) {
    case NormMode::kGlobal:
      return gln(x, params);
    case NormMode::kCumulative:
      return cln(x, params);
    case NormMode::kNone:
      break;
  }
  return x;
}

void ConvBlockParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + "in_kernel", in_kernel});
  out.push_back({prefix + "in_bias", in_bias});
  out.push_back({prefix + "act1_alpha", act1.alpha});
  out.push_back({prefix + "norm1_gain", norm1.gain});
  out.push_back({prefix + "norm1_bias", norm1.bias});
  out.push_back({prefix + "dw_kernel", dw_kernel});
  out.push_back({prefix + "dw_bias", dw_bias});
  out.push_back({prefix + "act2_alpha", act2.alpha});
  out.push_back({prefix + "norm2_gain", norm2.gain});
  out.push_back({prefix + "norm2_bias", norm2.bias});
  out.push_back({prefix + "res_kernel", res_kernel});
  out.push_back({prefix + "res_bias", res_bias});
  out.push_back({prefix + "skip_kernel", skip_kernel});
  out.push_back({prefix + "skip_bias", skip_bias});
}

ConvBlockParams make_conv_block(std::size_t residual_channels, std::size_t hidden_channels,
                                std::size_t skip_channels, std::size_t kernel_size, std::size_t dilation,
                                NormMode norm) {
  ConvBlockParams p;
  p.in_kernel = Tensor::zeros({hidden_channels, residual_channels, 1});
  p.in_bias = Tensor::zeros({hidden_channels});
  p.act1 = make_prelu(hidden_channels);
  p.norm1 = make_norm(hidden_channels, norm);
  p.dw_kernel = Tensor::zeros({hidden_channels, 1, kernel_size});
  p.dw_bias = Tensor::zeros({hidden_channels});
  p.act2 = make_prelu(hidden_channels);
  p.norm2 = make_norm(hidden_channels, norm);
  p.res_kernel = Tensor::zeros({residual_channels, hidden_channels, 1});
  p.res_bias = Tensor::zeros({residual_channels});
  p.skip_kernel = Tensor::zeros({skip_channels, hidden_channels, 1});
  p.skip_bias = Tensor::zeros({skip_channels});
  p.dilation = dilation;
  return p;
}

std::pair<std::size_t, std::size_t> depthwise_padding(std::size_t dilation, std::size_t kernel_size, bool causal) {
  const std::size_t total = dilation * (kernel_size - 1);
  if (causal) return {total, 0};
  const std::size_t left = (total + 1) / 2;
  return {left, total - left};
}

ConvBlockOutput conv_block(const Tensor& e_prev, const ConvBlockParams& params, bool causal) {
  if (e_prev.rank() != 2 || e_prev.dim(0) != params.in_kernel.dim(1)) {
    throw DimensionError("conv_block: input " + shape_str(e_prev.shape()) + " for in_kernel " +
                         shape_str(params.in_kernel.shape()));
  }
  const std::size_t hidden = params.in_kernel.dim(0);
  Tensor y = conv1d(e_prev, params.in_kernel, params.in_bias, {});
  y = normalize(prelu(y, params.act1), params.norm1);
  const auto [left, right] = depthwise_padding(params.dilation, params.kernel_size(), causal);
  Conv1dOptions dw;
  dw.dilation = params.dilation;
  dw.left_pad = left;
  dw.right_pad = right;
  dw.groups = hidden;
  y = conv1d(y, params.dw_kernel, params.dw_bias, dw);
  y = normalize(prelu(y, params.act2), params.norm2);
  ConvBlockOutput out;
  out.residual = add(conv1d(y, params.res_kernel, params.res_bias, {}), e_prev);
  out.skip = conv1d(y, params.skip_kernel, params.skip_bias, {});
  return out;
}

void LSTMParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + "w_input", w_input});
  out.push_back({prefix + "w_hidden", w_hidden});
  out.push_back({prefix + "bias", bias});
}

LSTMParams make_lstm(std::size_t input_size, std::size_t hidden_size) {
  LSTMParams p;
  p.w_input = Tensor::zeros({input_size, 4 * hidden_size});
  p.w_hidden = Tensor::zeros({hidden_size, 4 * hidden_size});
  p.bias = Tensor::zeros({1, 4 * hidden_size});
  return p;
}

LSTMState lstm_zero_state(std::size_t hidden_size) {
  return {Tensor::zeros({1, hidden_size}), Tensor::zeros({1, hidden_size})};
}

Tensor lstm_cell(const Tensor& gates, const Tensor& c_prev) {
  if (gates.rank() != 2 || c_prev.rank() != 2 || gates.dim(0) != 1 || c_prev.dim(0) != 1 ||
      gates.dim(1) != 4 * c_prev.dim(1)) {
    throw DimensionError("lstm_cell: gates " + shape_str(gates.shape()) + " with state " + shape_str(c_prev.shape()));
  }
  const std::size_t hidden = c_prev.dim(1);
  const auto gd = gates.data();
  const auto cd = c_prev.data();
  // act holds the activated gates (i, f, g, o) followed by tanh(c).
  std::vector<double> act(5 * hidden);
  std::vector<double> out(2 * hidden);
  for (std::size_t k = 0; k < hidden; ++k) {
    const double i = sigmoid_scalar(gd[k]);
    const double f = sigmoid_scalar(gd[hidden + k]);
    const double g = std::tanh(gd[2 * hidden + k]);
    const double o = sigmoid_scalar(gd[3 * hidden + k]);
    const double c = f * cd[k] + i * g;
    const double tc = std::tanh(c);
    act[k] = i;
    act[hidden + k] = f;
    act[2 * hidden + k] = g;
    act[3 * hidden + k] = o;
    act[4 * hidden + k] = tc;
    out[k] = o * tc;
    out[hidden + k] = c;
  }
  return autodiff::record(Tensor::from({2, hidden}, std::move(out)), {gates, c_prev},
                          [gates, c_prev, act = std::move(act), hidden](std::span<const double> g) {
                            const auto cd = c_prev.data();
                            std::span<double> gg, gc;
                            if (gates.requires_grad()) gg = gates.grad_buffer();
                            if (c_prev.requires_grad()) gc = c_prev.grad_buffer();
                            for (std::size_t k = 0; k < hidden; ++k) {
                              const double i = act[k], f = act[hidden + k], cand = act[2 * hidden + k];
                              const double o = act[3 * hidden + k], tc = act[4 * hidden + k];
                              const double gh = g[k];
                              const double dc = g[hidden + k] + gh * o * (1.0 - tc * tc);
                              if (!gg.empty()) {
                                gg[k] += dc * cand * i * (1.0 - i);
                                gg[hidden + k] += dc * cd[k] * f * (1.0 - f);
                                gg[2 * hidden + k] += dc * i * (1.0 - cand * cand);
                                gg[3 * hidden + k] += gh * tc * o * (1.0 - o);
                              }
                              if (!gc.empty()) gc[k] += dc * f;
                            }
                          });
}

LSTMState lstm_step(const Tensor& x_t, const LSTMState& state, const LSTMParams& params) {
  const Tensor gates = add(add(matmul(x_t, params.w_input), matmul(state.h, params.w_hidden)), params.bias);
  const Tensor hc = lstm_cell(gates, state.c);
  return {slice(hc, 0, 0, 1), slice(hc, 0, 1, 1)};
}

double AttentionParams::score_scale() const {
  const double width = scale_mode == AttentionScale::kModelWidth
                           ? static_cast<double>(model_width())
                           : static_cast<double>(projection_width() / heads);
  return 1.0 / std::sqrt(width);
}

void AttentionParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + "w_query", w_query});
  out.push_back({prefix + "w_key", w_key});
  out.push_back({prefix + "w_value", w_value});
  out.push_back({prefix + "w_out", w_out});
}

AttentionParams make_attention(std::size_t model_width, std::size_t projection_width, std::size_t heads,
                               AttentionScale scale_mode) {
  if (heads == 0 || projection_width % heads != 0) {
    throw ContractError("attention: head count must divide the projection width");
  }
  AttentionParams p;
  p.w_query = Tensor::zeros({model_width, projection_width});
  p.w_key = Tensor::zeros({model_width, projection_width});
  p.w_value = Tensor::zeros({model_width, projection_width});
  p.w_out = Tensor::zeros({projection_width, model_width});
  p.heads = heads;
  p.scale_mode = scale_mode;
  return p;
}

AttentionOutput attend_projected(const Tensor& query, const Tensor& keys, const Tensor& values, std::size_t heads,
                                 double score_scale) {
  if (query.rank() != 2 || keys.rank() != 2 || values.rank() != 2 || query.dim(0) != 1 ||
      keys.shape() != values.shape() || keys.dim(1) != query.dim(1)) {
    throw DimensionError("attention: query " + shape_str(query.shape()) + ", keys " + shape_str(keys.shape()) +
                         ", values " + shape_str(values.shape()));
  }
  const std::size_t width = query.dim(1);
  const std::size_t rows = keys.dim(0);
  if (heads == 0 || width % heads != 0) throw DimensionError("attention: heads must divide the projection width");
  const std::size_t head_width = width / heads;
  const auto qd = query.data();
  const auto kd = keys.data();
  const auto vd = values.data();
  std::vector<double> weights(heads * rows);
  std::vector<double> out(width, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    double* w = weights.data() + h * rows;
    const std::size_t c0 = h * head_width;
    double peak = -INFINITY;
    for (std::size_t j = 0; j < rows; ++j) {
      double s = 0.0;
      for (std::size_t c = c0; c < c0 + head_width; ++c) s += qd[c] * kd[j * width + c];
      w[j] = s * score_scale;
      peak = std::max(peak, w[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < rows; ++j) {
      w[j] = std::exp(w[j] - peak);
      total += w[j];
    }
    for (std::size_t j = 0; j < rows; ++j) w[j] /= total;
    for (std::size_t j = 0; j < rows; ++j) {
      for (std::size_t c = c0; c < c0 + head_width; ++c) out[c] += w[j] * vd[j * width + c];
    }
  }
  AttentionOutput result;
  result.weights = Tensor::from({heads, rows}, weights);
  result.context = autodiff::record(
      Tensor::from({1, width}, std::move(out)), {query, keys, values},
      [query, keys, values, weights = std::move(weights), heads, rows, width, head_width,
       score_scale](std::span<const double> g) {
        const auto qd = query.data();
        const auto kd = keys.data();
        const auto vd = values.data();
        std::span<double> gq, gk, gv;
        if (query.requires_grad()) gq = query.grad_buffer();
        if (keys.requires_grad()) gk = keys.grad_buffer();
        if (values.requires_grad()) gv = values.grad_buffer();
        std::vector<double> d_score(rows);
        for (std::size_t h = 0; h < heads; ++h) {
          const double* w = weights.data() + h * rows;
          const std::size_t c0 = h * head_width;
          double dot = 0.0;
          for (std::size_t j = 0; j < rows; ++j) {
            double dw = 0.0;
            for (std::size_t c = c0; c < c0 + head_width; ++c) {
              dw += g[c] * vd[j * width + c];
              if (!gv.empty()) gv[j * width + c] += w[j] * g[c];
            }
            d_score[j] = dw;
            dot += w[j] * dw;
          }
          for (std::size_t j = 0; j < rows; ++j) {
            const double ds = w[j] * (d_score[j] - dot) * score_scale;
            for (std::size_t c = c0; c < c0 + head_width; ++c) {
              if (!gq.empty()) gq[c] += ds * kd[j * width + c];
              if (!gk.empty()) gk[j * width + c] += ds * qd[c];
            }
          }
        }
      });
  return result;
}

AttentionOutput multi_head_attention(const Tensor& q, const Tensor& keys_values, const AttentionParams& params) {
  const std::size_t s = params.model_width();
  if (q.rank() != 2 || q.dim(0) != 1 || q.dim(1) != s || keys_values.rank() != 2 || keys_values.dim(1) != s) {
    throw DimensionError("multi_head_attention: query " + shape_str(q.shape()) + ", keys/values " +
                         shape_str(keys_values.shape()) + " for width " + std::to_string(s));
  }
  AttentionOutput heads = attend_projected(matmul(q, params.w_query), matmul(keys_values, params.w_key),
                                           matmul(keys_values, params.w_value), params.heads, params.score_scale());
  heads.context = matmul(heads.context, params.w_out);
  return heads;
}

}  // namespace msaec
