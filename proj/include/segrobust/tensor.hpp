#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace segrobust {

// Dense row-major shape; extents are positive.
using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

// One vertex of the recorded forward graph. `parents` holds only the
// gradient-requiring inputs (the traversal set for the reverse sweep);
// backward_fn captures whatever saved values it needs.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the reverse sweep touches it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  // Zero-filled grad buffer, allocated on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

// While alive, suppresses graph recording; forwards run value-only.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_recording_enabled();

// Value-semantics handle to a dense float64 N-D array participating in a
// reverse-mode differentiation graph.
class Tensor {
 public:
  Tensor() = default;  // undefined tensor (used e.g. for "no bias")

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);  // shape {1}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t rank() const;
  int64_t numel() const;
  int64_t extent(int64_t axis) const;
  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();  // in-place edits (optimizer, init)
  double item() const;                  // scalar tensors only

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  const std::vector<double>& grad() const;  // throws if no grad populated
  void zero_grad();

  // Deep copy of the value, detached from any graph.
  Tensor clone_detached() const;

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor wrap_node(std::shared_ptr<detail::TensorNode> node);
};

// Reverse sweep from a scalar loss: visits the recorded graph in reverse
// topological order exactly once and populates grad on every
// gradient-requiring tensor on the path. Accumulation is additive, so
// fan-out sums path gradients; callers zero grads between passes.
void backward(const Tensor& loss);

enum class Padding {
  None,             // kernel 1, stride 1
  Same,             // kernel 3, stride 1, one zero voxel each side
  HalveAsymmetric,  // kernel 3, stride 2, pad (1, 2); even extents halve
};

// Elementwise; shapes must match exactly (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor sum(const Tensor& a);           // -> shape {1}
Tensor channel_sums(const Tensor& a);  // [C, ...] -> [C], sums over the rest

// input [C_in,D,H,W] * kernel [C_out,C_in,k,k,k] (k in {1,3}) -> [C_out,...].
// bias may be undefined or [C_out]. Valid combinations: (k=3, stride 1,
// Same), (k=3, stride 2, HalveAsymmetric), (k=1, stride 1, None).
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, Padding padding);

// Per-channel standardization over the spatial extent of [C,D,H,W], then
// affine gamma/beta (both shape [C]). Variance is biased; eps > 0 guards
// constant channels.
Tensor instance_norm(const Tensor& input, const Tensor& gamma,
                     const Tensor& beta, double eps);

// max(x, slope*x); derivative at 0 is the slope.
Tensor leaky_relu(const Tensor& a, double slope);

// Per-voxel softmax over the class channel of [N,D,H,W] with logits divided
// by the temperature. Max-subtraction keeps the exponentials in range.
Tensor softmax_channels(const Tensor& logits, double temperature);

// Each voxel of [C,D,H,W] replicated into a 2x2x2 block.
Tensor upsample_nearest2(const Tensor& a);

// Whole-channel dropout: in training mode zeroes each channel with the given
// probability and scales survivors by 1/(1-rate); identity otherwise.
Tensor dropout_channels(const Tensor& a, double rate, uint64_t seed,
                        bool training);

// Stack along the channel axis; spatial extents must match.
Tensor concat_channels(const Tensor& a, const Tensor& b);

}  // namespace segrobust
