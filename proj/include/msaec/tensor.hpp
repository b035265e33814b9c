#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace msaec {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the first gradient contribution
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major array of doubles. Handles share the underlying node, so
// copying a Tensor is cheap and both copies observe the same gradient.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // Direct write access for initializers and optimizers. Never recorded.
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double operator[](std::size_t flat) const { return node_->value[flat]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  // Allocates a zero gradient on first use.
  std::span<double> grad_buffer() const;
  void zero_grad() { node_->grad.clear(); }

  // New leaf holding a copy of the values and no gradient history.
  Tensor detach() const;
  std::vector<double> to_vector() const { return node_->value; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of differentiable operations. Activate with TapeScope; ops
// executed while no tape is active (or with no grad-requiring input) are
// not recorded.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  struct Entry {
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::shared_ptr<detail::Node> output;
    BackwardFn backward;
  };

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Runs backward on the thread's active tape.
void backward(const Tensor& loss);

namespace autodiff {

// Registers `out` as the result of an op over `inputs`. When a tape is active
// and any input requires grad, `out` is marked differentiable and `fn` is
// recorded; `fn` receives d(loss)/d(out) and must accumulate into the input
// grad buffers.
Tensor record(Tensor out, std::initializer_list<Tensor> inputs, Tape::BackwardFn fn);
Tensor record(Tensor out, const std::vector<Tensor>& inputs, Tape::BackwardFn fn);

// True if recording an op over `inputs` would happen.
bool will_record(std::initializer_list<Tensor> inputs);

}  // namespace autodiff
}  // namespace msaec
