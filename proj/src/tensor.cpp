#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "error.hpp"

namespace gdpo {

namespace {

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

bool is_suffix(const std::vector<int>& small, const std::vector<int>& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

bool grad_wanted(Tape* tape, const Tensor& a) {
  return tape != nullptr && a.requires_grad();
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, bool requires_grad) {
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->value.assign(static_cast<size_t>(shape_size(impl_->shape)), 0.0);
  impl_->requires_grad = requires_grad;
  if (requires_grad) impl_->grad.assign(impl_->value.size(), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data,
               bool requires_grad) {
  if (shape_size(shape) != static_cast<int64_t>(data.size()))
    throw_invalid("tensor data length " + std::to_string(data.size()) +
                  " does not match shape " + shape_str(shape));
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->value = std::move(data);
  impl_->requires_grad = requires_grad;
  if (requires_grad) impl_->grad.assign(impl_->value.size(), 0.0);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor({}, {v}, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.impl_->value.begin(), t.impl_->value.end(), v);
  return t;
}

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on)
    impl_->grad.assign(impl_->value.size(), 0.0);
  else
    impl_->grad.clear();
}

std::span<double> Tensor::grad() {
  if (!impl_->requires_grad)
    throw_invalid("grad requested on a tensor without requires_grad");
  return impl_->grad;
}

std::span<const double> Tensor::grad() const {
  if (!impl_->requires_grad)
    throw_invalid("grad requested on a tensor without requires_grad");
  return impl_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw_invalid("item() on non-scalar tensor");
  return impl_->value[0];
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tape::record(std::shared_ptr<detail::TensorImpl> output,
                  std::function<void()> backward_fn) {
  ops_.push_back({std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw_invalid("backward requires a scalar loss, got shape " +
                  shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw_invalid("backward on a loss that does not require grad");
  for (auto& op : ops_)
    if (op.output->requires_grad)
      std::fill(op.output->grad.begin(), op.output->grad.end(), 0.0);
  loss.impl()->grad[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it)
    if (it->fn) it->fn();
}

void Tape::clear() { ops_.clear(); }

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

// ---- helpers -----------------------------------------------------------

namespace {

Tensor make_output(Tape* tape, std::vector<int> shape, bool any_input_grad) {
  Tensor out(std::move(shape), tape != nullptr && any_input_grad);
  return out;
}

}  // namespace

// ---- elementwise binary with leading-axis broadcast ---------------------

namespace {

enum class BinKind { add, sub, mul };

Tensor binary_op(Tape* tape, const Tensor& a, const Tensor& b, BinKind kind) {
  const bool a_big = a.size() >= b.size();
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  if (!is_suffix(small.shape(), big.shape()))
    throw_invalid("broadcast requires one shape to be a trailing suffix of "
                  "the other; got " +
                  shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int64_t nb = big.size();
  const int64_t ns = std::max<int64_t>(small.size(), 1);

  bool needs = a.requires_grad() || b.requires_grad();
  Tensor out = make_output(tape, big.shape(), needs);
  auto ov = out.value();
  auto bv = big.value();
  auto sv = small.value();
  const double sign = (kind == BinKind::sub && !a_big) ? -1.0 : 1.0;
  for (int64_t i = 0; i < nb; ++i) {
    double x = bv[i], y = sv[i % ns];
    switch (kind) {
      case BinKind::add: ov[i] = x + y; break;
      case BinKind::sub: ov[i] = sign * (x - y); break;  // sign fixes a-b order
      case BinKind::mul: ov[i] = x * y; break;
    }
  }
  if (tape && needs) {
    auto oi = out.impl();
    auto bi = big.impl();
    auto si = small.impl();
    tape->record(oi, [oi, bi, si, nb, ns, kind, sign]() {
      const auto& g = oi->grad;
      if (bi->requires_grad) {
        auto& gb = bi->grad;
        for (int64_t i = 0; i < nb; ++i) {
          double d = g[i];
          if (kind == BinKind::mul) d *= si->value[i % ns];
          if (kind == BinKind::sub) d *= sign;
          gb[i] += d;
        }
      }
      if (si->requires_grad) {
        auto& gs = si->grad;
        for (int64_t i = 0; i < nb; ++i) {
          double d = g[i];
          if (kind == BinKind::mul) d *= bi->value[i];
          if (kind == BinKind::sub) d *= -sign;
          gs[i % ns] += d;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, BinKind::add);
}
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, BinKind::sub);
}
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, BinKind::mul);
}

Tensor add_scalar(Tape* tape, const Tensor& a, double s) {
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] + s;
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai]() {
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor mul_scalar(Tape* tape, const Tensor& a, double s) {
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] * s;
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai, s]() {
      for (size_t i = 0; i < oi->grad.size(); ++i)
        ai->grad[i] += s * oi->grad[i];
    });
  }
  return out;
}

// ---- matmul / transpose --------------------------------------------------

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw_invalid("matmul expects 2-D tensors, got " + shape_str(a.shape()) +
                  " and " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw_invalid("matmul inner dimensions disagree: " +
                  shape_str(a.shape()) + " x " + shape_str(b.shape()));
  bool needs = a.requires_grad() || b.requires_grad();
  Tensor out = make_output(tape, {m, n}, needs);
  auto ov = out.value();
  auto av = a.value();
  auto bv = b.value();
  for (int i = 0; i < m; ++i) {
    double* orow = &ov[static_cast<size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      const double x = av[static_cast<size_t>(i) * k + p];
      if (x == 0.0) continue;
      const double* brow = &bv[static_cast<size_t>(p) * n];
      for (int j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  if (tape && needs) {
    auto oi = out.impl();
    auto ai = a.impl();
    auto bi = b.impl();
    tape->record(oi, [oi, ai, bi, m, k, n]() {
      const auto& g = oi->grad;
      if (ai->requires_grad) {  // dA += G * B^T
        auto& ga = ai->grad;
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const double gij = g[static_cast<size_t>(i) * n + j];
            if (gij == 0.0) continue;
            const double* brow = &bi->value[0];
            for (int p = 0; p < k; ++p)
              ga[static_cast<size_t>(i) * k + p] +=
                  gij * brow[static_cast<size_t>(p) * n + j];
          }
      }
      if (bi->requires_grad) {  // dB += A^T * G
        auto& gb = bi->grad;
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const double aip = ai->value[static_cast<size_t>(i) * k + p];
            if (aip == 0.0) continue;
            const double* grow = &g[static_cast<size_t>(i) * n];
            double* gbrow = &gb[static_cast<size_t>(p) * n];
            for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
          }
      }
    });
  }
  return out;
}

Tensor transpose(Tape* tape, const Tensor& a) {
  if (a.rank() != 2) throw_invalid("transpose expects a 2-D tensor");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = make_output(tape, {n, m}, a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      ov[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai, m, n]() {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ai->grad[static_cast<size_t>(i) * n + j] +=
              oi->grad[static_cast<size_t>(j) * m + i];
    });
  }
  return out;
}

// ---- pointwise nonlinearities ---------------------------------------------

Tensor relu(Tape* tape, const Tensor& a) {
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai]() {
      for (size_t i = 0; i < oi->grad.size(); ++i)
        if (ai->value[i] > 0.0) ai->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor gelu(Tape* tape, const Tensor& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (int64_t i = 0; i < a.size(); ++i) {
    const double x = av[i];
    ov[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai]() {
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        const double x = ai->value[i];
        const double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        ai->grad[i] += oi->grad[i] * (phi + x * pdf);
      }
    });
  }
  return out;
}

Tensor log_clamped(Tape* tape, const Tensor& a, double floor) {
  if (floor <= 0.0) throw_invalid("log_clamped floor must be positive");
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (int64_t i = 0; i < a.size(); ++i)
    ov[i] = std::log(av[i] > floor ? av[i] : floor);
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai, floor]() {
      for (size_t i = 0; i < oi->grad.size(); ++i)
        if (ai->value[i] > floor) ai->grad[i] += oi->grad[i] / ai->value[i];
    });
  }
  return out;
}

Tensor clamp_min(Tape* tape, const Tensor& a, double lo) {
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] > lo ? av[i] : lo;
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai, lo]() {
      for (size_t i = 0; i < oi->grad.size(); ++i)
        if (ai->value[i] > lo) ai->grad[i] += oi->grad[i];
    });
  }
  return out;
}

// ---- softmax family --------------------------------------------------------

namespace {

struct AxisView {
  int64_t outer, k, inner;
};

AxisView axis_view(const Tensor& a, int axis) {
  if (axis < 0 || axis >= a.rank())
    throw_invalid("axis " + std::to_string(axis) + " invalid for shape " +
                  shape_str(a.shape()));
  AxisView v{1, a.dim(axis), 1};
  for (int i = 0; i < axis; ++i) v.outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) v.inner *= a.dim(i);
  return v;
}

void check_finite(const Tensor& a, const char* op) {
  for (double x : a.value())
    if (!std::isfinite(x))
      throw_numeric(std::string(op) + ": non-finite input value");
}

}  // namespace

Tensor softmax(Tape* tape, const Tensor& a, int axis) {
  check_finite(a, "softmax");
  AxisView v = axis_view(a, axis);
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t in = 0; in < v.inner; ++in) {
      const int64_t base = o * v.k * v.inner + in;
      double mx = av[base];
      for (int64_t j = 1; j < v.k; ++j)
        mx = std::max(mx, av[base + j * v.inner]);
      double z = 0.0;
      for (int64_t j = 0; j < v.k; ++j) {
        double e = std::exp(av[base + j * v.inner] - mx);
        ov[base + j * v.inner] = e;
        z += e;
      }
      for (int64_t j = 0; j < v.k; ++j) ov[base + j * v.inner] /= z;
    }
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai, v]() {
      for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t in = 0; in < v.inner; ++in) {
          const int64_t base = o * v.k * v.inner + in;
          double dot = 0.0;
          for (int64_t j = 0; j < v.k; ++j)
            dot += oi->grad[base + j * v.inner] * oi->value[base + j * v.inner];
          for (int64_t j = 0; j < v.k; ++j) {
            const int64_t p = base + j * v.inner;
            ai->grad[p] += oi->value[p] * (oi->grad[p] - dot);
          }
        }
    });
  }
  return out;
}

Tensor log_softmax(Tape* tape, const Tensor& a, int axis) {
  check_finite(a, "log_softmax");
  AxisView v = axis_view(a, axis);
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t in = 0; in < v.inner; ++in) {
      const int64_t base = o * v.k * v.inner + in;
      double mx = av[base];
      for (int64_t j = 1; j < v.k; ++j)
        mx = std::max(mx, av[base + j * v.inner]);
      double z = 0.0;
      for (int64_t j = 0; j < v.k; ++j)
        z += std::exp(av[base + j * v.inner] - mx);
      const double lse = mx + std::log(z);
      for (int64_t j = 0; j < v.k; ++j)
        ov[base + j * v.inner] = av[base + j * v.inner] - lse;
    }
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai, v]() {
      for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t in = 0; in < v.inner; ++in) {
          const int64_t base = o * v.k * v.inner + in;
          double gsum = 0.0;
          for (int64_t j = 0; j < v.k; ++j)
            gsum += oi->grad[base + j * v.inner];
          for (int64_t j = 0; j < v.k; ++j) {
            const int64_t p = base + j * v.inner;
            ai->grad[p] += oi->grad[p] - std::exp(oi->value[p]) * gsum;
          }
        }
    });
  }
  return out;
}

std::pair<Tensor, Tensor> softmax_log_softmax(Tape* tape, const Tensor& a,
                                              int axis) {
  return {softmax(tape, a, axis), log_softmax(tape, a, axis)};
}

// ---- layer norm -------------------------------------------------------------

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, double eps) {
  if (x.rank() < 1) throw_invalid("layer_norm expects rank >= 1");
  const int k = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != k || bias.rank() != 1 ||
      bias.dim(0) != k)
    throw_invalid("layer_norm gain/bias must be vectors of the last-axis width");
  const int64_t rows = x.size() / k;
  bool needs = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  Tensor out = make_output(tape, x.shape(), needs);
  auto ov = out.value();
  auto xv = x.value();
  auto gv = gain.value();
  auto bv = bias.value();
  // keep normalized activations for the backward pass
  std::vector<double> xhat;
  std::vector<double> inv_std;
  if (tape && needs) {
    xhat.resize(static_cast<size_t>(x.size()));
    inv_std.resize(static_cast<size_t>(rows));
  }
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = &xv[static_cast<size_t>(r) * k];
    double mean = 0.0;
    for (int j = 0; j < k; ++j) mean += row[j];
    mean /= k;
    double var = 0.0;
    for (int j = 0; j < k; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= k;
    const double is = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < k; ++j) {
      const double xh = (row[j] - mean) * is;
      ov[static_cast<size_t>(r) * k + j] = gv[j] * xh + bv[j];
      if (!xhat.empty()) xhat[static_cast<size_t>(r) * k + j] = xh;
    }
    if (!inv_std.empty()) inv_std[static_cast<size_t>(r)] = is;
  }
  if (tape && needs) {
    auto oi = out.impl();
    auto xi = x.impl();
    auto gi = gain.impl();
    auto bi = bias.impl();
    tape->record(oi, [oi, xi, gi, bi, rows, k, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)]() {
      for (int64_t r = 0; r < rows; ++r) {
        const size_t off = static_cast<size_t>(r) * k;
        const double* g = &oi->grad[off];
        const double* xh = &xhat[off];
        if (bi->requires_grad)
          for (int j = 0; j < k; ++j) bi->grad[j] += g[j];
        if (gi->requires_grad)
          for (int j = 0; j < k; ++j) gi->grad[j] += g[j] * xh[j];
        if (xi->requires_grad) {
          double mean_h = 0.0, mean_hx = 0.0;
          for (int j = 0; j < k; ++j) {
            const double h = g[j] * gi->value[j];
            mean_h += h;
            mean_hx += h * xh[j];
          }
          mean_h /= k;
          mean_hx /= k;
          const double is = inv_std[static_cast<size_t>(r)];
          for (int j = 0; j < k; ++j) {
            const double h = g[j] * gi->value[j];
            xi->grad[off + j] += is * (h - mean_h - xh[j] * mean_hx);
          }
        }
      }
    });
  }
  return out;
}

// ---- gather / reductions / shape ops ---------------------------------------

Tensor embedding(Tape* tape, const Tensor& table, std::span<const int> indices) {
  if (table.rank() != 2) throw_invalid("embedding table must be 2-D");
  const int v = table.dim(0), d = table.dim(1);
  const int r = static_cast<int>(indices.size());
  for (int idx : indices)
    if (idx < 0 || idx >= v)
      throw_invalid("embedding index " + std::to_string(idx) +
                    " out of range [0," + std::to_string(v) + ")");
  Tensor out = make_output(tape, {r, d}, table.requires_grad());
  auto ov = out.value();
  auto tv = table.value();
  for (int i = 0; i < r; ++i)
    std::copy_n(&tv[static_cast<size_t>(indices[i]) * d], d,
                &ov[static_cast<size_t>(i) * d]);
  if (grad_wanted(tape, table)) {
    auto oi = out.impl();
    auto ti = table.impl();
    std::vector<int> idx(indices.begin(), indices.end());
    tape->record(oi, [oi, ti, idx = std::move(idx), d]() {
      for (size_t i = 0; i < idx.size(); ++i) {
        const double* g = &oi->grad[i * static_cast<size_t>(d)];
        double* tg = &ti->grad[static_cast<size_t>(idx[i]) * d];
        for (int j = 0; j < d; ++j) tg[j] += g[j];
      }
    });
  }
  return out;
}

Tensor sum_all(Tape* tape, const Tensor& a) {
  double s = 0.0;
  for (double x : a.value()) s += x;
  Tensor out = make_output(tape, {}, a.requires_grad());
  out.value()[0] = s;
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai]() {
      const double g = oi->grad[0];
      for (auto& x : ai->grad) x += g;
    });
  }
  return out;
}

Tensor mean_all(Tape* tape, const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (double x : a.value()) s += x;
  Tensor out = make_output(tape, {}, a.requires_grad());
  out.value()[0] = s * inv;
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai, inv]() {
      const double g = oi->grad[0] * inv;
      for (auto& x : ai->grad) x += g;
    });
  }
  return out;
}

Tensor sum_axis(Tape* tape, const Tensor& a, int axis) {
  AxisView v = axis_view(a, axis);
  std::vector<int> oshape;
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis) oshape.push_back(a.dim(i));
  Tensor out = make_output(tape, oshape, a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t in = 0; in < v.inner; ++in) {
      double s = 0.0;
      for (int64_t j = 0; j < v.k; ++j)
        s += av[o * v.k * v.inner + j * v.inner + in];
      ov[o * v.inner + in] = s;
    }
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai, v]() {
      for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t in = 0; in < v.inner; ++in) {
          const double g = oi->grad[o * v.inner + in];
          for (int64_t j = 0; j < v.k; ++j)
            ai->grad[o * v.k * v.inner + j * v.inner + in] += g;
        }
    });
  }
  return out;
}

Tensor concat(Tape* tape, const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != b.rank()) throw_invalid("concat rank mismatch");
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis && a.dim(i) != b.dim(i))
      throw_invalid("concat shapes differ off-axis: " + shape_str(a.shape()) +
                    " vs " + shape_str(b.shape()));
  AxisView va = axis_view(a, axis);
  AxisView vb = axis_view(b, axis);
  std::vector<int> oshape = a.shape();
  oshape[static_cast<size_t>(axis)] = a.dim(axis) + b.dim(axis);
  bool needs = a.requires_grad() || b.requires_grad();
  Tensor out = make_output(tape, oshape, needs);
  auto ov = out.value();
  auto av = a.value();
  auto bv = b.value();
  const int64_t ko = va.k + vb.k;
  for (int64_t o = 0; o < va.outer; ++o) {
    for (int64_t j = 0; j < va.k; ++j)
      std::copy_n(&av[(o * va.k + j) * va.inner], va.inner,
                  &ov[(o * ko + j) * va.inner]);
    for (int64_t j = 0; j < vb.k; ++j)
      std::copy_n(&bv[(o * vb.k + j) * vb.inner], vb.inner,
                  &ov[(o * ko + va.k + j) * va.inner]);
  }
  if (tape && needs) {
    auto oi = out.impl();
    auto ai = a.impl();
    auto bi = b.impl();
    tape->record(oi, [oi, ai, bi, va, vb, ko]() {
      for (int64_t o = 0; o < va.outer; ++o) {
        if (ai->requires_grad)
          for (int64_t j = 0; j < va.k; ++j)
            for (int64_t in = 0; in < va.inner; ++in)
              ai->grad[(o * va.k + j) * va.inner + in] +=
                  oi->grad[(o * ko + j) * va.inner + in];
        if (bi->requires_grad)
          for (int64_t j = 0; j < vb.k; ++j)
            for (int64_t in = 0; in < vb.inner; ++in)
              bi->grad[(o * vb.k + j) * vb.inner + in] +=
                  oi->grad[(o * ko + va.k + j) * va.inner + in];
      }
    });
  }
  return out;
}

Tensor reshape(Tape* tape, const Tensor& a, std::vector<int> new_shape) {
  if (shape_size(new_shape) != a.size())
    throw_invalid("reshape size mismatch: " + shape_str(a.shape()) + " -> " +
                  shape_str(new_shape));
  Tensor out = make_output(tape, std::move(new_shape), a.requires_grad());
  std::copy(a.value().begin(), a.value().end(), out.value().begin());
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai]() {
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor select_rows(Tape* tape, const Tensor& a, std::span<const int> rows) {
  if (a.rank() != 2) throw_invalid("select_rows expects a 2-D tensor");
  const int r = a.dim(0), k = a.dim(1);
  for (int i : rows)
    if (i < 0 || i >= r) throw_invalid("select_rows index out of range");
  Tensor out =
      make_output(tape, {static_cast<int>(rows.size()), k}, a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(&av[static_cast<size_t>(rows[i]) * k], k, &ov[i * k]);
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    std::vector<int> idx(rows.begin(), rows.end());
    tape->record(oi, [oi, ai, idx = std::move(idx), k]() {
      for (size_t i = 0; i < idx.size(); ++i) {
        const double* g = &oi->grad[i * static_cast<size_t>(k)];
        double* ag = &ai->grad[static_cast<size_t>(idx[i]) * k];
        for (int j = 0; j < k; ++j) ag[j] += g[j];
      }
    });
  }
  return out;
}

Tensor gather_per_row(Tape* tape, const Tensor& a, std::span<const int> idx) {
  if (a.rank() != 2) throw_invalid("gather_per_row expects a 2-D tensor");
  const int r = a.dim(0), k = a.dim(1);
  if (static_cast<int>(idx.size()) != r)
    throw_invalid("gather_per_row needs one index per row");
  for (int j : idx)
    if (j < 0 || j >= k) throw_invalid("gather_per_row index out of range");
  Tensor out = make_output(tape, {r}, a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (int i = 0; i < r; ++i)
    ov[static_cast<size_t>(i)] = av[static_cast<size_t>(i) * k + idx[i]];
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    std::vector<int> ix(idx.begin(), idx.end());
    tape->record(oi, [oi, ai, ix = std::move(ix), k]() {
      for (size_t i = 0; i < ix.size(); ++i)
        ai->grad[i * static_cast<size_t>(k) + ix[i]] += oi->grad[i];
    });
  }
  return out;
}

Tensor pair_transpose(Tape* tape, const Tensor& a, int n) {
  if (a.rank() != 2 || a.dim(0) != n * n)
    throw_invalid("pair_transpose expects a [n*n, k] tensor");
  const int k = a.dim(1);
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  auto ov = out.value();
  auto av = a.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      std::copy_n(&av[(static_cast<size_t>(j) * n + i) * k], k,
                  &ov[(static_cast<size_t>(i) * n + j) * k]);
  if (grad_wanted(tape, a)) {
    auto oi = out.impl();
    auto ai = a.impl();
    tape->record(oi, [oi, ai, n, k]() {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double* g = &oi->grad[(static_cast<size_t>(i) * n + j) * k];
          double* ag = &ai->grad[(static_cast<size_t>(j) * n + i) * k];
          for (int c = 0; c < k; ++c) ag[c] += g[c];
        }
    });
  }
  return out;
}

}  // namespace gdpo
