#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, so parameters
// can be handed to an optimizer and to the forward pass at the same time.
// Every op whose inputs require gradients appends an entry to the calling
// thread's tape; backward() replays that tape in reverse and clears it.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sre {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Pairwise summation: deterministic, and exact for 2^n copies of one value.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;

  void accumulate(std::size_t i, double g) {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    grad[i] += g;
  }
  std::span<double> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<TensorNode>()) {
    if (shape_size(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_size(shape)) + " values, got " +
                       std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double value) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor(Shape{}, {value}, requires_grad);
  }
  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }

  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape[1] + c]; }
  double item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  // All-zero view when nothing has been accumulated yet.
  std::vector<double> grad() const {
    return has_grad() ? node_->grad : std::vector<double>(size(), 0.0);
  }
  void zero_grad() { node_->grad.clear(); }

  // Deep copy, detached from any tape.
  Tensor clone(bool requires_grad = false) const { return Tensor(shape(), node_->data, requires_grad); }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// ---------------------------------------------------------------------------
// Tape

struct TapeEntry {
  std::string op;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::shared_ptr<TensorNode> output;
  std::function<void()> backward;
};

class Tape {
 public:
  void record(TapeEntry entry) { entries_.push_back(std::move(entry)); }
  void clear() { entries_.clear(); }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<TapeEntry>& entries() const { return entries_; }

 private:
  std::vector<TapeEntry> entries_;
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline Tape& active_tape() {
  thread_local Tape tape;
  return tape;
}

// Suspends recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!detail::grad_mode()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// Registers `out` as produced from `inputs`. The backward rule reads
// out's grad and accumulates into the inputs that require gradients.
inline void record_op(std::string name, std::vector<Tensor> inputs, Tensor& out,
                      std::function<void()> backward) {
  out.set_requires_grad(true);
  TapeEntry entry{std::move(name), {}, out.node(), std::move(backward)};
  entry.inputs.reserve(inputs.size());
  for (const auto& t : inputs) entry.inputs.push_back(t.node());
  active_tape().record(std::move(entry));
}

inline void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: loss does not depend on any tensor that requires grad");
  }
  loss.node()->accumulate(0, 1.0);
  auto& tape = active_tape();
  const auto& entries = tape.entries();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (!it->output->grad.empty()) it->backward();
  }
  tape.clear();
}

// ---------------------------------------------------------------------------
// Ops

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(a.shape()));
  }
}

template <class F, class DF>
Tensor unary(const char* name, const Tensor& x, F f, DF df) {
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  Tensor y(x.shape(), std::move(out));
  if (should_record({&x})) {
    auto xn = x.node();
    auto yn = y.node();
    record_op(name, {x}, y, [xn, yn, df] {
      if (!xn->requires_grad) return;
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i] * df(xn->data[i], yn->data[i]);
    });
  }
  return y;
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor y(a.shape(), std::move(out));
  if (should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    record_op("add", {a, b}, y, [an, bn, yn] {
      for (auto* n : {an.get(), bn.get()}) {
        if (!n->requires_grad) continue;
        auto g = n->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i];
      }
    });
  }
  return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("subtract", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor y(a.shape(), std::move(out));
  if (should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    record_op("subtract", {a, b}, y, [an, bn, yn] {
      if (an->requires_grad) {
        auto g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= yn->grad[i];
      }
    });
  }
  return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("multiply", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor y(a.shape(), std::move(out));
  if (should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    record_op("multiply", {a, b}, y, [an, bn, yn] {
      if (an->requires_grad) {
        auto g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i] * an->data[i];
      }
    });
  }
  return y;
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank("matrix-multiply", a, 2);
  detail::require_rank("matrix-multiply", b, 2);
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matrix-multiply: inner dimensions differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto m = static_cast<Eigen::Index>(b.dim(1));
  Tensor y = Tensor::zeros({a.dim(0), b.dim(1)});
  detail::MutMap(y.mutable_data().data(), n, m).noalias() =
      detail::ConstMap(a.data().data(), n, k) * detail::ConstMap(b.data().data(), k, m);
  if (should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    record_op("matrix-multiply", {a, b}, y, [an, bn, yn, n, k, m] {
      detail::ConstMap dy(yn->grad.data(), n, m);
      if (an->requires_grad) {
        detail::MutMap(an->grad_buffer().data(), n, k).noalias() +=
            dy * detail::ConstMap(bn->data.data(), k, m).transpose();
      }
      if (bn->requires_grad) {
        detail::MutMap(bn->grad_buffer().data(), k, m).noalias() +=
            detail::ConstMap(an->data.data(), n, k).transpose() * dy;
      }
    });
  }
  return y;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  Tensor y({c, r}, std::move(out));
  if (should_record({&a})) {
    auto an = a.node(), yn = y.node();
    record_op("transpose", {a}, y, [an, yn, r, c] {
      auto g = an->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += yn->grad[j * r + i];
    });
  }
  return y;
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary("tanh", x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid(double x) {
  // Branches keep exp() from overflowing for large |x|.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary("sigmoid", x, [](double v) { return sigmoid(v); },
                       [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary("log", x, [](double v) { return std::log(v); },
                       [](double v, double) { return 1.0 / v; });
}

inline Tensor sum(const Tensor& x) {
  Tensor y = Tensor::scalar(pairwise_sum(x.data()));
  if (should_record({&x})) {
    auto xn = x.node(), yn = y.node();
    record_op("sum", {x}, y, [xn, yn] {
      auto g = xn->grad_buffer();
      for (double& v : g) v += yn->grad[0];
    });
  }
  return y;
}

inline Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  const double n = static_cast<double>(x.size());
  Tensor y = Tensor::scalar(pairwise_sum(x.data()) / n);
  if (should_record({&x})) {
    auto xn = x.node(), yn = y.node();
    record_op("mean", {x}, y, [xn, yn, n] {
      auto g = xn->grad_buffer();
      for (double& v : g) v += yn->grad[0] / n;
    });
  }
  return y;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor y(std::move(shape), x.values());
  if (should_record({&x})) {
    auto xn = x.node(), yn = y.node();
    record_op("reshape", {x}, y, [xn, yn] {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i];
    });
  }
  return y;
}

// [d0, d1, ...] -> [d0, d1*d2*...]; rank-1 inputs become a single row.
inline Tensor flatten(const Tensor& x) {
  if (x.rank() <= 1) return reshape(x, {1, x.size()});
  return reshape(x, {x.dim(0), x.size() / x.dim(0)});
}

// x: [rows, cols], bias: [cols], added to every row.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank("broadcast-add", x, 2);
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("broadcast-add: bias shape " + shape_str(bias.shape()) +
                     " does not match columns of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.values());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias[c];
  Tensor y(x.shape(), std::move(out));
  if (should_record({&x, &bias})) {
    auto xn = x.node(), bn = bias.node(), yn = y.node();
    record_op("broadcast-add", {x, bias}, y, [xn, bn, yn, rows, cols] {
      if (xn->requires_grad) {
        auto g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        auto g = bn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) g[c] += yn->grad[r * cols + c];
      }
    });
  }
  return y;
}

// Mean binary cross-entropy of sigmoid(logit) against {0,1} labels, in the
// form max(l,0) - l*y + log1p(exp(-|l|)) so large margins never hit log(0).
inline Tensor bce_with_logits(const Tensor& logit, const Tensor& label) {
  detail::require_same_shape("bce_with_logits", logit, label);
  if (logit.size() == 0) throw ShapeError("bce_with_logits: empty input");
  for (double y : label.data()) {
    if (y != 0.0 && y != 1.0) {
      throw std::invalid_argument("bce_with_logits: label " + std::to_string(y) + " is not in {0,1}");
    }
  }
  std::vector<double> terms(logit.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double l = logit[i];
    terms[i] = std::max(l, 0.0) - l * label[i] + std::log1p(std::exp(-std::abs(l)));
  }
  const double n = static_cast<double>(terms.size());
  Tensor out = Tensor::scalar(pairwise_sum(terms) / n);
  if (should_record({&logit, &label})) {
    auto ln = logit.node(), yn = label.node(), on = out.node();
    record_op("bce_with_logits", {logit, label}, out, [ln, yn, on, n] {
      if (!ln->requires_grad) return;
      auto g = ln->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += on->grad[0] * (sigmoid(ln->data[i]) - yn->data[i]) / n;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8).
// Five-point stencil, truncation O(step^4).
// `coords` restricts the check to a subset of coordinates (all when empty).
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                double step, std::span<const std::size_t> coords = {}) {
  Tensor probe = x.clone(true);
  active_tape().clear();
  Tensor y = f(probe);
  if (y.size() != 1) throw ShapeError("finite_diff_check: function is not scalar-valued");
  std::vector<double> analytic(x.size(), 0.0);
  if (y.requires_grad()) {
    backward(y);
    analytic = probe.grad();
  }
  active_tape().clear();

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(x.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    coords = all;
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t i : coords) {
    auto at = [&](double offset) {
      Tensor moved = x.clone();
      moved.mutable_data()[i] += offset;
      return f(moved).item();
    };
    const double numeric = (8.0 * (at(step) - at(-step)) - (at(2.0 * step) - at(-2.0 * step))) / (12.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8));
  }
  return worst;
}

}  // namespace sre
