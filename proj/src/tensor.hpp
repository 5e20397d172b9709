#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace gdpo {

namespace detail {
struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // same length as value iff requires_grad
  bool requires_grad = false;
};
}  // namespace detail

// Dense 64-bit tensor with value semantics over shared storage. Values are
// immutable by convention once an op has produced them; grad is the only
// buffer mutated afterwards.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, bool requires_grad = false);
  Tensor(std::vector<int> shape, std::vector<double> data,
         bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v,
                     bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(impl_->value.size()); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);

  std::span<double> value() { return impl_->value; }
  std::span<const double> value() const { return impl_->value; }
  std::span<double> grad();
  std::span<const double> grad() const;

  double item() const;  // scalar tensors only
  void zero_grad();

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Record-then-reverse tape. Single-threaded; one tape per loss evaluation.
// Ops called with a null tape run in inference mode (no recording, outputs
// never require grad).
class Tape {
 public:
  void record(std::shared_ptr<detail::TensorImpl> output,
              std::function<void()> backward_fn);

  // Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse. Grads of
  // op outputs are reset first, so leaf grads accumulate across repeated
  // calls while internal flows stay single-pass.
  void backward(const Tensor& loss);

  void clear();
  size_t size() const { return ops_.size(); }

 private:
  struct Op {
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void()> fn;
  };
  std::vector<Op> ops_;
};

// Spec-style free function.
void backward(const Tensor& loss, Tape& tape);

// ---- primitives ------------------------------------------------------
// Binary elementwise ops broadcast over leading axes: the smaller operand's
// shape must equal a trailing suffix of the larger's.
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor add_scalar(Tape* tape, const Tensor& a, double s);
Tensor mul_scalar(Tape* tape, const Tensor& a, double s);

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);  // 2-D
Tensor transpose(Tape* tape, const Tensor& a);                // 2-D

Tensor relu(Tape* tape, const Tensor& a);
Tensor gelu(Tape* tape, const Tensor& a);

// log(max(x, floor)); gradient is zero on the clamped region
Tensor log_clamped(Tape* tape, const Tensor& a, double floor);
Tensor clamp_min(Tape* tape, const Tensor& a, double lo);

Tensor softmax(Tape* tape, const Tensor& a, int axis);
Tensor log_softmax(Tape* tape, const Tensor& a, int axis);
std::pair<Tensor, Tensor> softmax_log_softmax(Tape* tape, const Tensor& a,
                                              int axis);

// Normalization over the last axis with learnable gain/bias of that width.
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, double eps = 1e-5);

// Row lookup: table [v,d], indices in [0,v) -> [len(indices), d]
Tensor embedding(Tape* tape, const Tensor& table,
                 std::span<const int> indices);

Tensor sum_all(Tape* tape, const Tensor& a);   // -> scalar
Tensor mean_all(Tape* tape, const Tensor& a);  // -> scalar
Tensor sum_axis(Tape* tape, const Tensor& a, int axis);

Tensor concat(Tape* tape, const Tensor& a, const Tensor& b, int axis);
Tensor reshape(Tape* tape, const Tensor& a, std::vector<int> new_shape);

// 2-D row gather: out = a[rows, :]
Tensor select_rows(Tape* tape, const Tensor& a, std::span<const int> rows);
// 2-D per-row element pick: out[i] = a[i, idx[i]]
Tensor gather_per_row(Tape* tape, const Tensor& a, std::span<const int> idx);
// For [n*n, k] pair-major tensors: swaps rows (i*n+j) and (j*n+i)
Tensor pair_transpose(Tape* tape, const Tensor& a, int n);

}  // namespace gdpo
