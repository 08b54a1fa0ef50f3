#include "segrobust/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "segrobust/error.hpp"
#include "segrobust/rng.hpp"

namespace segrobust {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

std::vector<double>& TensorNode::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

using detail::TensorNode;

namespace {

thread_local int g_no_grad_depth = 0;

void check_shape(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

std::shared_ptr<TensorNode> new_node(Shape shape) {
  auto node = std::make_shared<TensorNode>();
  const int64_t n = shape_numel(shape);
  if (n <= 0 || std::any_of(shape.begin(), shape.end(),
                            [](int64_t e) { return e <= 0; })) {
    throw ShapeError("tensor extents must be positive, got " +
                     shape_to_string(shape));
  }
  node->shape = std::move(shape);
  node->value.assign(static_cast<size_t>(n), 0.0);
  return node;
}

// y[0..n) += a * x[0..n)
inline void axpy(double a, const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline double dot(const double* x, const double* y, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_recording_enabled() { return g_no_grad_depth == 0; }

Tensor wrap_node(std::shared_ptr<TensorNode> node) {
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) { return wrap_node(new_node(std::move(shape))); }

Tensor Tensor::full(Shape shape, double value) {
  auto node = new_node(std::move(shape));
  std::fill(node->value.begin(), node->value.end(), value);
  return wrap_node(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  auto node = new_node(std::move(shape));
  if (static_cast<int64_t>(data.size()) != node->numel()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_to_string(node->shape));
  }
  node->value = std::move(data);
  return wrap_node(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
int64_t Tensor::rank() const { return static_cast<int64_t>(node_->shape.size()); }
int64_t Tensor::numel() const { return node_->numel(); }
int64_t Tensor::extent(int64_t axis) const { return node_->shape.at(axis); }
const std::vector<double>& Tensor::data() const { return node_->value; }
std::vector<double>& Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  check_shape(numel() == 1, "item() requires a scalar tensor, got shape " +
                                shape_to_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) {
    throw Error("tensor has no populated gradient");
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::clone_detached() const {
  auto node = new_node(node_->shape);
  node->value = node_->value;
  return wrap_node(std::move(node));
}

// ---------------------------------------------------------------------------
// Reverse sweep
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? shape_to_string(loss.shape()) : "?"));
  }
  TensorNode* root = loss.node();
  if (!root->requires_grad) {
    throw Error("backward on a tensor that does not require gradients");
  }

  // Iterative post-order DFS over gradient-requiring parents.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      TensorNode* parent = top.node->parents[top.next_parent++].get();
      if (visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!grad_recording_enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void attach(const std::shared_ptr<TensorNode>& result, const char* op,
            std::initializer_list<const Tensor*> grad_parents,
            std::function<void(TensorNode&)> fn) {
  result->op = op;
  result->requires_grad = true;
  for (const Tensor* t : grad_parents) {
    if (t->defined() && t->requires_grad()) result->parents.push_back(t->node_ptr());
  }
  result->backward_fn = std::move(fn);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check_shape(a.shape() == b.shape(),
              std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                  " vs " + shape_to_string(b.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto out = new_node(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + bv[i];
  if (should_record({&a, &b})) {
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    attach(out, "add", {&a, &b}, [an, bn](TensorNode& self) {
      if (an->requires_grad) axpy(1.0, self.grad.data(), an->grad_buffer().data(), self.numel());
      if (bn->requires_grad) axpy(1.0, self.grad.data(), bn->grad_buffer().data(), self.numel());
    });
  }
  return wrap_node(std::move(out));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto out = new_node(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] - bv[i];
  if (should_record({&a, &b})) {
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    attach(out, "sub", {&a, &b}, [an, bn](TensorNode& self) {
      if (an->requires_grad) axpy(1.0, self.grad.data(), an->grad_buffer().data(), self.numel());
      if (bn->requires_grad) axpy(-1.0, self.grad.data(), bn->grad_buffer().data(), self.numel());
    });
  }
  return wrap_node(std::move(out));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto out = new_node(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * bv[i];
  if (should_record({&a, &b})) {
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    attach(out, "mul", {&a, &b}, [an, bn](TensorNode& self) {
      const int64_t n = self.numel();
      if (an->requires_grad) {
        auto& g = an->grad_buffer();
        for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->grad_buffer();
        for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * an->value[i];
      }
    });
  }
  return wrap_node(std::move(out));
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  auto out = new_node(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] / bv[i];
  if (should_record({&a, &b})) {
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    attach(out, "div", {&a, &b}, [an, bn](TensorNode& self) {
      const int64_t n = self.numel();
      if (an->requires_grad) {
        auto& g = an->grad_buffer();
        for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] / bn->value[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->grad_buffer();
        for (int64_t i = 0; i < n; ++i) {
          g[i] -= self.grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
        }
      }
    });
  }
  return wrap_node(std::move(out));
}

Tensor add_scalar(const Tensor& a, double s) {
  auto out = new_node(a.shape());
  const auto& av = a.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + s;
  if (should_record({&a})) {
    auto an = a.node_ptr();
    attach(out, "add_scalar", {&a}, [an](TensorNode& self) {
      axpy(1.0, self.grad.data(), an->grad_buffer().data(), self.numel());
    });
  }
  return wrap_node(std::move(out));
}

Tensor mul_scalar(const Tensor& a, double s) {
  auto out = new_node(a.shape());
  const auto& av = a.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * s;
  if (should_record({&a})) {
    auto an = a.node_ptr();
    attach(out, "mul_scalar", {&a}, [an, s](TensorNode& self) {
      axpy(s, self.grad.data(), an->grad_buffer().data(), self.numel());
    });
  }
  return wrap_node(std::move(out));
}

Tensor sum(const Tensor& a) {
  auto out = new_node({1});
  double s = 0.0;
  for (double v : a.data()) s += v;
  out->value[0] = s;
  if (should_record({&a})) {
    auto an = a.node_ptr();
    attach(out, "sum", {&a}, [an](TensorNode& self) {
      auto& g = an->grad_buffer();
      const double gs = self.grad[0];
      for (double& v : g) v += gs;
    });
  }
  return wrap_node(std::move(out));
}

Tensor channel_sums(const Tensor& a) {
  check_shape(a.rank() >= 2, "channel_sums requires rank >= 2, got " +
                                 shape_to_string(a.shape()));
  const int64_t c = a.extent(0);
  const int64_t inner = a.numel() / c;
  auto out = new_node({c});
  const double* av = a.data().data();
  for (int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    const double* base = av + ch * inner;
    for (int64_t i = 0; i < inner; ++i) s += base[i];
    out->value[ch] = s;
  }
  if (should_record({&a})) {
    auto an = a.node_ptr();
    attach(out, "channel_sums", {&a}, [an, c, inner](TensorNode& self) {
      auto& g = an->grad_buffer();
      for (int64_t ch = 0; ch < c; ++ch) {
        const double gs = self.grad[ch];
        double* base = g.data() + ch * inner;
        for (int64_t i = 0; i < inner; ++i) base[i] += gs;
      }
    });
  }
  return wrap_node(std::move(out));
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int64_t ci, d, h, w;     // input
  int64_t co, k;           // kernel
  int64_t od, oh, ow;      // output
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride,
                   Padding padding) {
  check_shape(input.rank() == 4, "conv3d input must be [C,D,H,W], got " +
                                     shape_to_string(input.shape()));
  check_shape(kernel.rank() == 5,
              "conv3d kernel must be [Co,Ci,k,k,k], got " +
                  shape_to_string(kernel.shape()));
  ConvDims dm{};
  dm.ci = input.extent(0);
  dm.d = input.extent(1);
  dm.h = input.extent(2);
  dm.w = input.extent(3);
  dm.co = kernel.extent(0);
  dm.k = kernel.extent(2);
  check_shape(kernel.extent(1) == dm.ci,
              "conv3d: input has " + std::to_string(dm.ci) +
                  " channels but kernel expects " +
                  std::to_string(kernel.extent(1)));
  check_shape(kernel.extent(3) == dm.k && kernel.extent(4) == dm.k,
              "conv3d kernel must be cubic, got " +
                  shape_to_string(kernel.shape()));
  if (dm.k != 1 && dm.k != 3) {
    throw ConfigError("conv3d supports kernel extents 1 and 3, got " +
                      std::to_string(dm.k));
  }
  const bool valid =
      (dm.k == 3 && stride == 1 && padding == Padding::Same) ||
      (dm.k == 3 && stride == 2 && padding == Padding::HalveAsymmetric) ||
      (dm.k == 1 && stride == 1 && padding == Padding::None);
  if (!valid) {
    throw ConfigError("conv3d: unsupported kernel/stride/padding combination");
  }
  if (stride == 2) {
    if (dm.d % 2 || dm.h % 2 || dm.w % 2) {
      throw ShapeError("stride-2 conv3d requires even spatial extents, got " +
                       shape_to_string(input.shape()));
    }
    dm.od = dm.d / 2;
    dm.oh = dm.h / 2;
    dm.ow = dm.w / 2;
  } else {
    dm.od = dm.d;
    dm.oh = dm.h;
    dm.ow = dm.w;
  }
  return dm;
}

// kernel 3, stride 1, same padding: shifted-row multiply-accumulate.
void conv3_s1_forward(const double* in, const double* k, double* out,
                      const ConvDims& dm) {
  const int64_t plane = dm.h * dm.w, vol = dm.d * plane;
  for (int64_t co = 0; co < dm.co; ++co) {
    double* ob = out + co * vol;
    for (int64_t ci = 0; ci < dm.ci; ++ci) {
      const double* ib = in + ci * vol;
      const double* kb = k + (co * dm.ci + ci) * 27;
      for (int64_t kd = 0; kd < 3; ++kd) {
        const int64_t dz = kd - 1;
        const int64_t z0 = std::max<int64_t>(0, -dz);
        const int64_t z1 = dm.d - std::max<int64_t>(0, dz);
        for (int64_t kh = 0; kh < 3; ++kh) {
          const int64_t dy = kh - 1;
          const int64_t y0 = std::max<int64_t>(0, -dy);
          const int64_t y1 = dm.h - std::max<int64_t>(0, dy);
          for (int64_t kw = 0; kw < 3; ++kw) {
            const int64_t dx = kw - 1;
            const int64_t x0 = std::max<int64_t>(0, -dx);
            const int64_t x1 = dm.w - std::max<int64_t>(0, dx);
            const double wv = kb[(kd * 3 + kh) * 3 + kw];
            const int64_t n = x1 - x0;
            for (int64_t z = z0; z < z1; ++z) {
              for (int64_t y = y0; y < y1; ++y) {
                axpy(wv, ib + (z + dz) * plane + (y + dy) * dm.w + x0 + dx,
                     ob + z * plane + y * dm.w + x0, n);
              }
            }
          }
        }
      }
    }
  }
}

void conv3_s1_backward_input(const double* gout, const double* k, double* gin,
                             const ConvDims& dm) {
  const int64_t plane = dm.h * dm.w, vol = dm.d * plane;
  for (int64_t co = 0; co < dm.co; ++co) {
    const double* gb = gout + co * vol;
    for (int64_t ci = 0; ci < dm.ci; ++ci) {
      double* ib = gin + ci * vol;
      const double* kb = k + (co * dm.ci + ci) * 27;
      for (int64_t kd = 0; kd < 3; ++kd) {
        const int64_t dz = kd - 1;
        const int64_t z0 = std::max<int64_t>(0, -dz);
        const int64_t z1 = dm.d - std::max<int64_t>(0, dz);
        for (int64_t kh = 0; kh < 3; ++kh) {
          const int64_t dy = kh - 1;
          const int64_t y0 = std::max<int64_t>(0, -dy);
          const int64_t y1 = dm.h - std::max<int64_t>(0, dy);
          for (int64_t kw = 0; kw < 3; ++kw) {
            const int64_t dx = kw - 1;
            const int64_t x0 = std::max<int64_t>(0, -dx);
            const int64_t x1 = dm.w - std::max<int64_t>(0, dx);
            const double wv = kb[(kd * 3 + kh) * 3 + kw];
            const int64_t n = x1 - x0;
            for (int64_t z = z0; z < z1; ++z) {
              for (int64_t y = y0; y < y1; ++y) {
                axpy(wv, gb + z * plane + y * dm.w + x0,
                     ib + (z + dz) * plane + (y + dy) * dm.w + x0 + dx, n);
              }
            }
          }
        }
      }
    }
  }
}

void conv3_s1_backward_kernel(const double* gout, const double* in, double* gk,
                              const ConvDims& dm) {
  const int64_t plane = dm.h * dm.w, vol = dm.d * plane;
  for (int64_t co = 0; co < dm.co; ++co) {
    const double* gb = gout + co * vol;
    for (int64_t ci = 0; ci < dm.ci; ++ci) {
      const double* ib = in + ci * vol;
      double* kb = gk + (co * dm.ci + ci) * 27;
      for (int64_t kd = 0; kd < 3; ++kd) {
        const int64_t dz = kd - 1;
        const int64_t z0 = std::max<int64_t>(0, -dz);
        const int64_t z1 = dm.d - std::max<int64_t>(0, dz);
        for (int64_t kh = 0; kh < 3; ++kh) {
          const int64_t dy = kh - 1;
          const int64_t y0 = std::max<int64_t>(0, -dy);
          const int64_t y1 = dm.h - std::max<int64_t>(0, dy);
          for (int64_t kw = 0; kw < 3; ++kw) {
            const int64_t dx = kw - 1;
            const int64_t x0 = std::max<int64_t>(0, -dx);
            const int64_t x1 = dm.w - std::max<int64_t>(0, dx);
            const int64_t n = x1 - x0;
            double s = 0.0;
            for (int64_t z = z0; z < z1; ++z) {
              for (int64_t y = y0; y < y1; ++y) {
                s += dot(gb + z * plane + y * dm.w + x0,
                         ib + (z + dz) * plane + (y + dy) * dm.w + x0 + dx, n);
              }
            }
            kb[(kd * 3 + kh) * 3 + kw] += s;
          }
        }
      }
    }
  }
}

// kernel 3, stride 2, pad (1,2): output voxel o reads input 2o-1+ki per
// axis, i.e. the even-indexed taps of the same-padded stride-1 sweep, so
// even extents halve exactly.
void conv3_s2_forward(const double* in, const double* k, double* out,
                      const ConvDims& dm) {
  const int64_t plane = dm.h * dm.w, vol = dm.d * plane;
  const int64_t oplane = dm.oh * dm.ow, ovol = dm.od * oplane;
  for (int64_t co = 0; co < dm.co; ++co) {
    double* ob = out + co * ovol;
    for (int64_t ci = 0; ci < dm.ci; ++ci) {
      const double* ib = in + ci * vol;
      const double* kb = k + (co * dm.ci + ci) * 27;
      for (int64_t kd = 0; kd < 3; ++kd) {
        const int64_t z0 = (kd == 0) ? 1 : 0;
        for (int64_t kh = 0; kh < 3; ++kh) {
          const int64_t y0 = (kh == 0) ? 1 : 0;
          for (int64_t kw = 0; kw < 3; ++kw) {
            const int64_t x0 = (kw == 0) ? 1 : 0;
            const double wv = kb[(kd * 3 + kh) * 3 + kw];
            for (int64_t z = z0; z < dm.od; ++z) {
              const int64_t zi = 2 * z + kd - 1;
              for (int64_t y = y0; y < dm.oh; ++y) {
                const int64_t yi = 2 * y + kh - 1;
                const double* irow = ib + zi * plane + yi * dm.w + kw - 1;
                double* orow = ob + z * oplane + y * dm.ow;
                for (int64_t x = x0; x < dm.ow; ++x) {
                  orow[x] += wv * irow[2 * x];
                }
              }
            }
          }
        }
      }
    }
  }
}

void conv3_s2_backward_input(const double* gout, const double* k, double* gin,
                             const ConvDims& dm) {
  const int64_t plane = dm.h * dm.w, vol = dm.d * plane;
  const int64_t oplane = dm.oh * dm.ow, ovol = dm.od * oplane;
  for (int64_t co = 0; co < dm.co; ++co) {
    const double* gb = gout + co * ovol;
    for (int64_t ci = 0; ci < dm.ci; ++ci) {
      double* ib = gin + ci * vol;
      const double* kb = k + (co * dm.ci + ci) * 27;
      for (int64_t kd = 0; kd < 3; ++kd) {
        const int64_t z0 = (kd == 0) ? 1 : 0;
        for (int64_t kh = 0; kh < 3; ++kh) {
          const int64_t y0 = (kh == 0) ? 1 : 0;
          for (int64_t kw = 0; kw < 3; ++kw) {
            const int64_t x0 = (kw == 0) ? 1 : 0;
            const double wv = kb[(kd * 3 + kh) * 3 + kw];
            for (int64_t z = z0; z < dm.od; ++z) {
              const int64_t zi = 2 * z + kd - 1;
              for (int64_t y = y0; y < dm.oh; ++y) {
                const int64_t yi = 2 * y + kh - 1;
                double* irow = ib + zi * plane + yi * dm.w + kw - 1;
                const double* orow = gb + z * oplane + y * dm.ow;
                for (int64_t x = x0; x < dm.ow; ++x) {
                  irow[2 * x] += wv * orow[x];
                }
              }
            }
          }
        }
      }
    }
  }
}

void conv3_s2_backward_kernel(const double* gout, const double* in, double* gk,
                              const ConvDims& dm) {
  const int64_t plane = dm.h * dm.w, vol = dm.d * plane;
  const int64_t oplane = dm.oh * dm.ow, ovol = dm.od * oplane;
  for (int64_t co = 0; co < dm.co; ++co) {
    const double* gb = gout + co * ovol;
    for (int64_t ci = 0; ci < dm.ci; ++ci) {
      const double* ib = in + ci * vol;
      double* kb = gk + (co * dm.ci + ci) * 27;
      for (int64_t kd = 0; kd < 3; ++kd) {
        const int64_t z0 = (kd == 0) ? 1 : 0;
        for (int64_t kh = 0; kh < 3; ++kh) {
          const int64_t y0 = (kh == 0) ? 1 : 0;
          for (int64_t kw = 0; kw < 3; ++kw) {
            const int64_t x0 = (kw == 0) ? 1 : 0;
            double s = 0.0;
            for (int64_t z = z0; z < dm.od; ++z) {
              const int64_t zi = 2 * z + kd - 1;
              for (int64_t y = y0; y < dm.oh; ++y) {
                const int64_t yi = 2 * y + kh - 1;
                const double* irow = ib + zi * plane + yi * dm.w + kw - 1;
                const double* orow = gb + z * oplane + y * dm.ow;
                for (int64_t x = x0; x < dm.ow; ++x) {
                  s += orow[x] * irow[2 * x];
                }
              }
            }
            kb[(kd * 3 + kh) * 3 + kw] += s;
          }
        }
      }
    }
  }
}

// kernel 1: pure channel mixing.
void conv1_forward(const double* in, const double* k, double* out,
                   const ConvDims& dm) {
  const int64_t vol = dm.d * dm.h * dm.w;
  for (int64_t co = 0; co < dm.co; ++co) {
    for (int64_t ci = 0; ci < dm.ci; ++ci) {
      axpy(k[co * dm.ci + ci], in + ci * vol, out + co * vol, vol);
    }
  }
}

void conv1_backward_input(const double* gout, const double* k, double* gin,
                          const ConvDims& dm) {
  const int64_t vol = dm.d * dm.h * dm.w;
  for (int64_t co = 0; co < dm.co; ++co) {
    for (int64_t ci = 0; ci < dm.ci; ++ci) {
      axpy(k[co * dm.ci + ci], gout + co * vol, gin + ci * vol, vol);
    }
  }
}

void conv1_backward_kernel(const double* gout, const double* in, double* gk,
                           const ConvDims& dm) {
  const int64_t vol = dm.d * dm.h * dm.w;
  for (int64_t co = 0; co < dm.co; ++co) {
    for (int64_t ci = 0; ci < dm.ci; ++ci) {
      gk[co * dm.ci + ci] += dot(gout + co * vol, in + ci * vol, vol);
    }
  }
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, Padding padding) {
  const ConvDims dm = conv_dims(input, kernel, stride, padding);
  if (bias.defined()) {
    check_shape(bias.rank() == 1 && bias.extent(0) == dm.co,
                "conv3d bias must be [C_out], got " +
                    shape_to_string(bias.shape()));
  }
  auto out = new_node({dm.co, dm.od, dm.oh, dm.ow});
  const double* in = input.data().data();
  const double* k = kernel.data().data();
  double* ov = out->value.data();
  if (dm.k == 1) {
    conv1_forward(in, k, ov, dm);
  } else if (stride == 1) {
    conv3_s1_forward(in, k, ov, dm);
  } else {
    conv3_s2_forward(in, k, ov, dm);
  }
  if (bias.defined()) {
    const int64_t ovol = dm.od * dm.oh * dm.ow;
    for (int64_t co = 0; co < dm.co; ++co) {
      const double b = bias.data()[co];
      double* base = ov + co * ovol;
      for (int64_t i = 0; i < ovol; ++i) base[i] += b;
    }
  }
  if (should_record({&input, &kernel, &bias})) {
    auto in_n = input.node_ptr();
    auto k_n = kernel.node_ptr();
    auto b_n = bias.defined() ? bias.node_ptr() : nullptr;
    const int s = stride;
    attach(out, "conv3d", {&input, &kernel, &bias},
           [in_n, k_n, b_n, dm, s](TensorNode& self) {
             const double* g = self.grad.data();
             if (in_n->requires_grad) {
               double* gin = in_n->grad_buffer().data();
               if (dm.k == 1) {
                 conv1_backward_input(g, k_n->value.data(), gin, dm);
               } else if (s == 1) {
                 conv3_s1_backward_input(g, k_n->value.data(), gin, dm);
               } else {
                 conv3_s2_backward_input(g, k_n->value.data(), gin, dm);
               }
             }
             if (k_n->requires_grad) {
               double* gk = k_n->grad_buffer().data();
               if (dm.k == 1) {
                 conv1_backward_kernel(g, in_n->value.data(), gk, dm);
               } else if (s == 1) {
                 conv3_s1_backward_kernel(g, in_n->value.data(), gk, dm);
               } else {
                 conv3_s2_backward_kernel(g, in_n->value.data(), gk, dm);
               }
             }
             if (b_n && b_n->requires_grad) {
               double* gb = b_n->grad_buffer().data();
               const int64_t ovol = dm.od * dm.oh * dm.ow;
               for (int64_t co = 0; co < dm.co; ++co) {
                 double sgrad = 0.0;
                 const double* base = g + co * ovol;
                 for (int64_t i = 0; i < ovol; ++i) sgrad += base[i];
                 gb[co] += sgrad;
               }
             }
           });
  }
  return wrap_node(std::move(out));
}

// ---------------------------------------------------------------------------
// Normalization and activations
// ---------------------------------------------------------------------------

Tensor instance_norm(const Tensor& input, const Tensor& gamma,
                     const Tensor& beta, double eps) {
  check_shape(input.rank() == 4, "instance_norm input must be [C,D,H,W], got " +
                                     shape_to_string(input.shape()));
  if (eps <= 0) throw ConfigError("instance_norm requires eps > 0");
  const int64_t c = input.extent(0);
  const int64_t vol = input.numel() / c;
  check_shape(gamma.rank() == 1 && gamma.extent(0) == c &&
                  beta.rank() == 1 && beta.extent(0) == c,
              "instance_norm affine parameters must be [C]");
  auto out = new_node(input.shape());
  std::vector<double> mean(c), inv_sd(c);
  const double* in = input.data().data();
  double* ov = out->value.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* base = in + ch * vol;
    double m = 0.0;
    for (int64_t i = 0; i < vol; ++i) m += base[i];
    m /= static_cast<double>(vol);
    double var = 0.0;
    for (int64_t i = 0; i < vol; ++i) {
      const double d = base[i] - m;
      var += d * d;
    }
    var /= static_cast<double>(vol);
    const double inv = 1.0 / std::sqrt(var + eps);
    mean[ch] = m;
    inv_sd[ch] = inv;
    const double gscale = gamma.data()[ch] * inv;
    const double shift = beta.data()[ch] - gscale * m;
    double* ob = ov + ch * vol;
    for (int64_t i = 0; i < vol; ++i) ob[i] = gscale * base[i] + shift;
  }
  if (should_record({&input, &gamma, &beta})) {
    auto in_n = input.node_ptr();
    auto g_n = gamma.node_ptr();
    auto b_n = beta.node_ptr();
    attach(out, "instance_norm", {&input, &gamma, &beta},
           [in_n, g_n, b_n, mean = std::move(mean), inv_sd = std::move(inv_sd),
            c, vol](TensorNode& self) {
             const double* g = self.grad.data();
             const double* in = in_n->value.data();
             for (int64_t ch = 0; ch < c; ++ch) {
               const double* gb = g + ch * vol;
               const double* xb = in + ch * vol;
               const double m = mean[ch], inv = inv_sd[ch];
               double sum_g = 0.0, sum_gx = 0.0;
               for (int64_t i = 0; i < vol; ++i) {
                 const double xh = (xb[i] - m) * inv;
                 sum_g += gb[i];
                 sum_gx += gb[i] * xh;
               }
               if (b_n->requires_grad) b_n->grad_buffer()[ch] += sum_g;
               if (g_n->requires_grad) g_n->grad_buffer()[ch] += sum_gx;
               if (in_n->requires_grad) {
                 double* gib = in_n->grad_buffer().data() + ch * vol;
                 const double gam = g_n->value[ch];
                 const double mg = sum_g / static_cast<double>(vol);
                 const double mgx = sum_gx / static_cast<double>(vol);
                 for (int64_t i = 0; i < vol; ++i) {
                   const double xh = (xb[i] - m) * inv;
                   gib[i] += gam * inv * (gb[i] - mg - xh * mgx);
                 }
               }
             }
           });
  }
  return wrap_node(std::move(out));
}

Tensor leaky_relu(const Tensor& a, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw ConfigError("leaky_relu slope must be in (0,1), got " +
                      std::to_string(slope));
  }
  auto out = new_node(a.shape());
  const auto& av = a.data();
  for (size_t i = 0; i < av.size(); ++i) {
    out->value[i] = av[i] > 0.0 ? av[i] : slope * av[i];
  }
  if (should_record({&a})) {
    auto an = a.node_ptr();
    attach(out, "leaky_relu", {&a}, [an, slope](TensorNode& self) {
      auto& g = an->grad_buffer();
      const int64_t n = self.numel();
      for (int64_t i = 0; i < n; ++i) {
        // derivative at exactly 0 is the slope
        g[i] += self.grad[i] * (an->value[i] > 0.0 ? 1.0 : slope);
      }
    });
  }
  return wrap_node(std::move(out));
}

Tensor softmax_channels(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) {
    throw ConfigError("softmax temperature must be positive, got " +
                      std::to_string(temperature));
  }
  check_shape(logits.rank() >= 2,
              "softmax_channels requires rank >= 2, got " +
                  shape_to_string(logits.shape()));
  const int64_t c = logits.extent(0);
  const int64_t vol = logits.numel() / c;
  auto out = new_node(logits.shape());
  const double* in = logits.data().data();
  double* ov = out->value.data();
  for (int64_t s = 0; s < vol; ++s) {
    double mx = in[s];
    for (int64_t ch = 1; ch < c; ++ch) mx = std::max(mx, in[ch * vol + s]);
    double denom = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double e = std::exp((in[ch * vol + s] - mx) / temperature);
      ov[ch * vol + s] = e;
      denom += e;
    }
    for (int64_t ch = 0; ch < c; ++ch) ov[ch * vol + s] /= denom;
  }
  if (should_record({&logits})) {
    auto ln = logits.node_ptr();
    attach(out, "softmax_channels", {&logits},
           [ln, c, vol, temperature](TensorNode& self) {
             auto& g = ln->grad_buffer();
             const double* p = self.value.data();
             const double* go = self.grad.data();
             for (int64_t s = 0; s < vol; ++s) {
               double inner = 0.0;
               for (int64_t ch = 0; ch < c; ++ch) {
                 inner += p[ch * vol + s] * go[ch * vol + s];
               }
               for (int64_t ch = 0; ch < c; ++ch) {
                 g[ch * vol + s] += p[ch * vol + s] *
                                    (go[ch * vol + s] - inner) / temperature;
               }
             }
           });
  }
  return wrap_node(std::move(out));
}

Tensor upsample_nearest2(const Tensor& a) {
  check_shape(a.rank() == 4, "upsample_nearest2 input must be [C,D,H,W]");
  const int64_t c = a.extent(0), d = a.extent(1), h = a.extent(2),
                w = a.extent(3);
  auto out = new_node({c, 2 * d, 2 * h, 2 * w});
  const double* in = a.data().data();
  double* ov = out->value.data();
  const int64_t oplane = 4 * h * w, ow = 2 * w;
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t z = 0; z < d; ++z) {
      for (int64_t y = 0; y < h; ++y) {
        const double* irow = in + ((ch * d + z) * h + y) * w;
        for (int64_t rz = 0; rz < 2; ++rz) {
          for (int64_t ry = 0; ry < 2; ++ry) {
            double* orow =
                ov + (ch * 2 * d + 2 * z + rz) * oplane + (2 * y + ry) * ow;
            for (int64_t x = 0; x < w; ++x) {
              orow[2 * x] = irow[x];
              orow[2 * x + 1] = irow[x];
            }
          }
        }
      }
    }
  }
  if (should_record({&a})) {
    auto an = a.node_ptr();
    attach(out, "upsample_nearest2", {&a}, [an, c, d, h, w](TensorNode& self) {
      auto& g = an->grad_buffer();
      const double* go = self.grad.data();
      const int64_t oplane2 = 2 * h * 2 * w, ow = 2 * w;
      for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t z = 0; z < d; ++z) {
          for (int64_t y = 0; y < h; ++y) {
            double* grow = g.data() + ((ch * d + z) * h + y) * w;
            for (int64_t rz = 0; rz < 2; ++rz) {
              for (int64_t ry = 0; ry < 2; ++ry) {
                const double* orow = go + (ch * 2 * d + 2 * z + rz) * oplane2 +
                                     (2 * y + ry) * ow;
                for (int64_t x = 0; x < w; ++x) {
                  grow[x] += orow[2 * x] + orow[2 * x + 1];
                }
              }
            }
          }
        }
      }
    });
  }
  return wrap_node(std::move(out));
}

Tensor dropout_channels(const Tensor& a, double rate, uint64_t seed,
                        bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must be in [0,1), got " +
                      std::to_string(rate));
  }
  check_shape(a.rank() == 4, "dropout_channels input must be [C,D,H,W]");
  if (!training || rate == 0.0) {
    // identity, but still a distinct graph node so fan-out counts stay sane
    auto out = new_node(a.shape());
    out->value = a.data();
    if (should_record({&a})) {
      auto an = a.node_ptr();
      attach(out, "dropout_identity", {&a}, [an](TensorNode& self) {
        axpy(1.0, self.grad.data(), an->grad_buffer().data(), self.numel());
      });
    }
    return wrap_node(std::move(out));
  }
  const int64_t c = a.extent(0);
  const int64_t vol = a.numel() / c;
  std::vector<double> scale(c);
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (int64_t ch = 0; ch < c; ++ch) {
    scale[ch] = rng.uniform01() < rate ? 0.0 : keep_scale;
  }
  auto out = new_node(a.shape());
  const double* in = a.data().data();
  double* ov = out->value.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    const double s = scale[ch];
    const double* ib = in + ch * vol;
    double* ob = ov + ch * vol;
    for (int64_t i = 0; i < vol; ++i) ob[i] = s * ib[i];
  }
  if (should_record({&a})) {
    auto an = a.node_ptr();
    attach(out, "dropout_channels", {&a},
           [an, scale = std::move(scale), c, vol](TensorNode& self) {
             auto& g = an->grad_buffer();
             const double* go = self.grad.data();
             for (int64_t ch = 0; ch < c; ++ch) {
               axpy(scale[ch], go + ch * vol, g.data() + ch * vol, vol);
             }
           });
  }
  return wrap_node(std::move(out));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check_shape(a.rank() == 4 && b.rank() == 4,
              "concat_channels inputs must be [C,D,H,W]");
  check_shape(a.extent(1) == b.extent(1) && a.extent(2) == b.extent(2) &&
                  a.extent(3) == b.extent(3),
              "concat_channels: spatial extents differ, " +
                  shape_to_string(a.shape()) + " vs " +
                  shape_to_string(b.shape()));
  const int64_t ca = a.extent(0), cb = b.extent(0);
  auto out = new_node({ca + cb, a.extent(1), a.extent(2), a.extent(3)});
  std::copy(a.data().begin(), a.data().end(), out->value.begin());
  std::copy(b.data().begin(), b.data().end(), out->value.begin() + a.numel());
  if (should_record({&a, &b})) {
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    const int64_t na = a.numel(), nb = b.numel();
    attach(out, "concat_channels", {&a, &b}, [an, bn, na, nb](TensorNode& self) {
      if (an->requires_grad) {
        axpy(1.0, self.grad.data(), an->grad_buffer().data(), na);
      }
      if (bn->requires_grad) {
        axpy(1.0, self.grad.data() + na, bn->grad_buffer().data(), nb);
      }
    });
  }
  return wrap_node(std::move(out));
}

}  // namespace segrobust
