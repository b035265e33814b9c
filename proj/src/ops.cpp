#include "msaec/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msaec/error.hpp"

namespace msaec {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
  }
}

template <typename Fn>
Tensor unary(const Tensor& x, Fn&& fn) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(in[i]);
  return Tensor::from(x.shape(), std::move(out));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return autodiff::record(Tensor::from(a.shape(), std::move(out)), {a, b}, [a, b](std::span<const double> g) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto ga = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return autodiff::record(Tensor::from(a.shape(), std::move(out)), {a, b}, [a, b](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return autodiff::record(Tensor::from(a.shape(), std::move(out)), {a, b}, [a, b](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return autodiff::record(unary(x, [factor](double v) { return v * factor; }), {x},
                          [x, factor](std::span<const double> g) {
                            auto gx = x.grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
                          });
}

Tensor relu(const Tensor& x) {
  return autodiff::record(unary(x, [](double v) { return v > 0.0 ? v : 0.0; }), {x}, [x](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) gx[i] += g[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  auto y = out.data();
  std::vector<double> saved(y.begin(), y.end());
  return autodiff::record(out, {x}, [x, saved = std::move(saved)](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * saved[i] * (1.0 - saved[i]);
  });
}

Tensor tanh(const Tensor& x) {
  Tensor out = unary(x, [](double v) { return std::tanh(v); });
  auto y = out.data();
  std::vector<double> saved(y.begin(), y.end());
  return autodiff::record(out, {x}, [x, saved = std::move(saved)](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - saved[i] * saved[i]);
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return autodiff::record(Tensor::scalar(total), {x}, [x](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (double& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return autodiff::record(Tensor::from(std::move(shape), x.to_vector()), {x}, [x](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), p = a.dim(1), n = b.dim(1);
  if (b.dim(0) != p) {
    throw DimensionError("matmul: inner dimensions " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = ad[i * p + k];
      if (aik == 0.0) continue;
      const double* brow = bd.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aik * brow[j];
    }
  }
  return autodiff::record(Tensor::from({m, n}, std::move(out)), {a, b}, [a, b, m, p, n](std::span<const double> g) {
    const auto ad = a.data();
    const auto bd = b.data();
    if (a.requires_grad()) {
      // dA = dC * B^T
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < p; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bd[k * n + j];
          ga[i * p + k] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      // dB = A^T * dC
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < p; ++k) {
          const double aik = ad[i * p + k];
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[k * n + j] += aik * g[i * n + j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  const auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xd[i * c + j];
  }
  return autodiff::record(Tensor::from({c, r}, std::move(out)), {x}, [x, r, c](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice");
  if (axis > 1 || count == 0 || start + count > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const std::size_t out_rows = axis == 0 ? count : rows;
  const std::size_t out_cols = axis == 0 ? cols : count;
  const std::size_t r0 = axis == 0 ? start : 0;
  const std::size_t c0 = axis == 0 ? 0 : start;
  std::vector<double> out(out_rows * out_cols);
  const auto xd = x.data();
  for (std::size_t i = 0; i < out_rows; ++i) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((r0 + i) * cols + c0), out_cols,
                out.begin() + static_cast<std::ptrdiff_t>(i * out_cols));
  }
  return autodiff::record(Tensor::from({out_rows, out_cols}, std::move(out)), {x},
                          [x, out_rows, out_cols, r0, c0, cols](std::span<const double> g) {
                            auto gx = x.grad_buffer();
                            for (std::size_t i = 0; i < out_rows; ++i) {
                              for (std::size_t j = 0; j < out_cols; ++j) {
                                gx[(r0 + i) * cols + c0 + j] += g[i * out_cols + j];
                              }
                            }
                          });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  const std::size_t fixed = parts[0].dim(1 - axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat");
    if (p.dim(1 - axis) != fixed) throw DimensionError("concat: mismatched " + shape_str(p.shape()));
    total += p.dim(axis);
  }
  const std::size_t rows = axis == 0 ? total : fixed;
  const std::size_t cols = axis == 0 ? fixed : total;
  std::vector<double> out(rows * cols);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const auto pd = p.data();
    const std::size_t pr = p.dim(0), pc = p.dim(1);
    for (std::size_t i = 0; i < pr; ++i) {
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t r = axis == 0 ? offset + i : i;
        const std::size_t c = axis == 0 ? j : offset + j;
        out[r * cols + c] = pd[i * pc + j];
      }
    }
    offset += p.dim(axis);
  }
  return autodiff::record(
      Tensor::from({rows, cols}, std::move(out)), parts,
      [parts, offsets, axis, cols](std::span<const double> g) {
        for (std::size_t k = 0; k < parts.size(); ++k) {
          const auto& p = parts[k];
          if (!p.requires_grad()) continue;
          auto gp = p.grad_buffer();
          const std::size_t pr = p.dim(0), pc = p.dim(1);
          for (std::size_t i = 0; i < pr; ++i) {
            for (std::size_t j = 0; j < pc; ++j) {
              const std::size_t r = axis == 0 ? offsets[k] + i : i;
              const std::size_t c = axis == 0 ? j : offsets[k] + j;
              gp[i * pc + j] += g[r * cols + c];
            }
          }
        }
      });
}

Tensor interleave_columns(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("interleave_columns of zero tensors");
  const std::size_t channels = parts[0].dim(0);
  const std::size_t steps = parts[0].dim(1);
  for (const auto& p : parts) {
    require_rank(p, 2, "interleave_columns");
    if (p.dim(0) != channels || p.dim(1) != steps) {
      throw DimensionError("interleave_columns: mismatched " + shape_str(p.shape()));
    }
  }
  const std::size_t count = parts.size();
  std::vector<double> out(steps * count * channels);
  for (std::size_t j = 0; j < count; ++j) {
    const auto pd = parts[j].data();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t t = 0; t < steps; ++t) out[(t * count + j) * channels + c] = pd[c * steps + t];
    }
  }
  return autodiff::record(Tensor::from({steps * count, channels}, std::move(out)), parts,
                          [parts, count, channels, steps](std::span<const double> g) {
                            for (std::size_t j = 0; j < count; ++j) {
                              if (!parts[j].requires_grad()) continue;
                              auto gp = parts[j].grad_buffer();
                              for (std::size_t c = 0; c < channels; ++c) {
                                for (std::size_t t = 0; t < steps; ++t) {
                                  gp[c * steps + t] += g[(t * count + j) * channels + c];
                                }
                              }
                            }
                          });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t d = x.dim(axis);
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * d * inner + in;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < d; ++k) peak = std::max(peak, xd[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double e = std::exp(xd[base + k * inner] - peak);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < d; ++k) out[base + k * inner] /= total;
    }
  }
  Tensor result = Tensor::from(x.shape(), std::move(out));
  return autodiff::record(result, {x}, [x, y = result.to_vector(), outer, inner, d](std::span<const double> g) {
    auto gx = x.grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * d * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < d; ++k) {
          const std::size_t i = base + k * inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

std::size_t conv1d_output_length(std::size_t input_length, std::size_t kernel_size, const Conv1dOptions& opts) {
  const std::size_t padded = input_length + opts.left_pad + opts.right_pad;
  const std::size_t span = opts.dilation * (kernel_size - 1) + 1;
  if (padded < span) return 0;
  return (padded - span) / opts.stride + 1;
}

Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, const Conv1dOptions& opts) {
  require_rank(input, 2, "conv1d input");
  require_rank(kernel, 3, "conv1d kernel");
  if (opts.stride < 1 || opts.dilation < 1 || opts.groups < 1) {
    throw ContractError("conv1d: stride, dilation and groups must be >= 1");
  }
  const std::size_t c_in = input.dim(0), t_in = input.dim(1);
  const std::size_t c_out = kernel.dim(0), k_size = kernel.dim(2);
  const std::size_t groups = opts.groups;
  if (c_in % groups != 0 || c_out % groups != 0 || kernel.dim(1) != c_in / groups) {
    throw DimensionError("conv1d: input " + shape_str(input.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()) + " at groups=" + std::to_string(groups));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " for " + std::to_string(c_out) + " outputs");
  }
  const std::size_t t_out = conv1d_output_length(t_in, k_size, opts);
  if (t_out == 0) throw DimensionError("conv1d: empty output for input length " + std::to_string(t_in));

  const std::size_t cin_g = c_in / groups;
  const std::size_t cout_g = c_out / groups;
  const auto xd = input.data();
  const auto wd = kernel.data();
  std::vector<double> out(c_out * t_out, 0.0);

  // For tap k, output t reads input index t*stride + k*dilation - left_pad.
  // Returns the half-open range of t for which that index is in bounds.
  const auto valid_range = [=](std::size_t k) {
    const long long shift = static_cast<long long>(k * opts.dilation) - static_cast<long long>(opts.left_pad);
    const long long s = static_cast<long long>(opts.stride);
    long long lo = 0;
    if (shift < 0) lo = (-shift + s - 1) / s;
    long long hi = static_cast<long long>(t_out);
    const long long max_t = (static_cast<long long>(t_in) - 1 - shift);
    if (max_t < 0) return std::pair<std::size_t, std::size_t>{0, 0};
    hi = std::min(hi, max_t / s + 1);
    if (lo >= hi) return std::pair<std::size_t, std::size_t>{0, 0};
    return std::pair<std::size_t, std::size_t>{static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  };

  for (std::size_t co = 0; co < c_out; ++co) {
    double* orow = out.data() + co * t_out;
    if (bias.defined()) std::fill_n(orow, t_out, bias[co]);
    const std::size_t g = co / cout_g;
    for (std::size_t ci = 0; ci < cin_g; ++ci) {
      const double* xrow = xd.data() + (g * cin_g + ci) * t_in;
      for (std::size_t k = 0; k < k_size; ++k) {
        const double w = wd[(co * cin_g + ci) * k_size + k];
        if (w == 0.0) continue;
        const auto [lo, hi] = valid_range(k);
        const long long shift = static_cast<long long>(k * opts.dilation) - static_cast<long long>(opts.left_pad);
        for (std::size_t t = lo; t < hi; ++t) {
          orow[t] += w * xrow[static_cast<long long>(t * opts.stride) + shift];
        }
      }
    }
  }

  return autodiff::record(
      Tensor::from({c_out, t_out}, std::move(out)), {input, kernel, bias},
      [input, kernel, bias, opts, c_out, t_in, t_out, k_size, cin_g, cout_g, valid_range](std::span<const double> g) {
        const auto xd = input.data();
        const auto wd = kernel.data();
        std::span<double> gx, gw;
        if (input.requires_grad()) gx = input.grad_buffer();
        if (kernel.requires_grad()) gw = kernel.grad_buffer();
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad_buffer();
          for (std::size_t co = 0; co < c_out; ++co) {
            double acc = 0.0;
            for (std::size_t t = 0; t < t_out; ++t) acc += g[co * t_out + t];
            gb[co] += acc;
          }
        }
        for (std::size_t co = 0; co < c_out; ++co) {
          const double* grow = g.data() + co * t_out;
          const std::size_t grp = co / cout_g;
          for (std::size_t ci = 0; ci < cin_g; ++ci) {
            const std::size_t row = (grp * cin_g + ci) * t_in;
            for (std::size_t k = 0; k < k_size; ++k) {
              const std::size_t widx = (co * cin_g + ci) * k_size + k;
              const auto [lo, hi] = valid_range(k);
              const long long shift =
                  static_cast<long long>(k * opts.dilation) - static_cast<long long>(opts.left_pad);
              if (!gx.empty()) {
                const double w = wd[widx];
                for (std::size_t t = lo; t < hi; ++t) {
                  gx[row + static_cast<std::size_t>(static_cast<long long>(t * opts.stride) + shift)] += w * grow[t];
                }
              }
              if (!gw.empty()) {
                double acc = 0.0;
                for (std::size_t t = lo; t < hi; ++t) {
                  acc += grow[t] * xd[row + static_cast<std::size_t>(static_cast<long long>(t * opts.stride) + shift)];
                }
                gw[widx] += acc;
              }
            }
          }
        }
      });
}

Tensor conv1d_transpose(const Tensor& input, const Tensor& kernel, std::size_t stride) {
  require_rank(input, 2, "conv1d_transpose input");
  require_rank(kernel, 3, "conv1d_transpose kernel");
  if (stride < 1) throw ContractError("conv1d_transpose: stride must be >= 1");
  const std::size_t c_in = input.dim(0), t_in = input.dim(1);
  if (kernel.dim(0) != c_in) {
    throw DimensionError("conv1d_transpose: input " + shape_str(input.shape()) + " vs kernel " +
                         shape_str(kernel.shape()));
  }
  const std::size_t c_out = kernel.dim(1), k_size = kernel.dim(2);
  if (t_in > 1 && k_size < stride) throw ContractError("conv1d_transpose: kernel shorter than stride leaves gaps");
  const std::size_t t_out = (t_in - 1) * stride + k_size;
  const auto xd = input.data();
  const auto wd = kernel.data();
  std::vector<double> out(c_out * t_out, 0.0);
  for (std::size_t ci = 0; ci < c_in; ++ci) {
    for (std::size_t t = 0; t < t_in; ++t) {
      const double v = xd[ci * t_in + t];
      if (v == 0.0) continue;
      for (std::size_t co = 0; co < c_out; ++co) {
        const double* w = wd.data() + (ci * c_out + co) * k_size;
        double* o = out.data() + co * t_out + t * stride;
        for (std::size_t k = 0; k < k_size; ++k) o[k] += v * w[k];
      }
    }
  }
  return autodiff::record(Tensor::from({c_out, t_out}, std::move(out)), {input, kernel},
                          [input, kernel, c_in, t_in, c_out, k_size, t_out, stride](std::span<const double> g) {
                            const auto xd = input.data();
                            const auto wd = kernel.data();
                            std::span<double> gx, gw;
                            if (input.requires_grad()) gx = input.grad_buffer();
                            if (kernel.requires_grad()) gw = kernel.grad_buffer();
                            for (std::size_t ci = 0; ci < c_in; ++ci) {
                              for (std::size_t t = 0; t < t_in; ++t) {
                                const double v = xd[ci * t_in + t];
                                double acc = 0.0;
                                for (std::size_t co = 0; co < c_out; ++co) {
                                  const std::size_t wbase = (ci * c_out + co) * k_size;
                                  const double* go = g.data() + co * t_out + t * stride;
                                  for (std::size_t k = 0; k < k_size; ++k) {
                                    acc += wd[wbase + k] * go[k];
                                    if (!gw.empty()) gw[wbase + k] += v * go[k];
                                  }
                                }
                                if (!gx.empty()) gx[ci * t_in + t] += acc;
                              }
                            }
                          });
}

}  // namespace msaec
