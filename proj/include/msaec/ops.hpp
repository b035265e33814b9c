#pragma once

#include <cstddef>
#include <vector>

#include "msaec/tensor.hpp"

namespace msaec {

// Elementwise ops require identical shapes; there is no broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Same values, new shape with the same element count.
Tensor reshape(const Tensor& x, Shape shape);

// Rank-2 matrix product [M x P] * [P x N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Rank-2 slicing and joining along axis 0 (rows) or 1 (columns).
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t count);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// Given J tensors of shape [C x T], returns [T*J x C] where row t*J + j is
// column t of part j.
Tensor interleave_columns(const std::vector<Tensor>& parts);

// Numerically stable softmax along `axis` of a tensor of any rank.
Tensor softmax(const Tensor& x, std::size_t axis);

struct Conv1dOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t left_pad = 0;
  std::size_t right_pad = 0;
  std::size_t groups = 1;
};

std::size_t conv1d_output_length(std::size_t input_length, std::size_t kernel_size, const Conv1dOptions& opts);

// input [C_in x T_in], kernel [C_out x C_in/groups x K], bias [C_out] or
// undefined. Zero padding is applied per side.
Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, const Conv1dOptions& opts);

// input [C_in x T_in], kernel [C_in x C_out x K]. Overlap-adds one scaled
// kernel copy per input frame at `stride` offsets; T_out = (T_in-1)*stride+K.
Tensor conv1d_transpose(const Tensor& input, const Tensor& kernel, std::size_t stride);

}  // namespace msaec
