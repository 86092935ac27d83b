#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchcast/errors.hpp"
#include "patchcast/rng.hpp"

namespace patchcast {

struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<double> values;   // row-major
  std::vector<double> grad;     // same length as values when requires_grad
  bool requires_grad = false;
};

std::string shape_str(const std::vector<std::size_t>& shape);

/// Handle to an n-dimensional row-major array of doubles. Copying a Tensor
/// copies the handle; clone() copies the storage. Values are treated as
/// immutable once the tensor has entered a recorded operation; grad buffers
/// are the only mutable state touched by backward().
class Tensor {
 public:
  Tensor() : d_(std::make_shared<TensorData>()) {}
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0,
                  bool requires_grad = false);

  static Tensor from_values(std::vector<std::size_t> shape,
                            std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double v) { return from_values({1}, {v}); }

  const std::vector<std::size_t>& shape() const { return d_->shape; }
  std::size_t ndim() const { return d_->shape.size(); }
  std::size_t numel() const { return d_->values.size(); }
  std::size_t rows() const;  // 2-d convenience
  std::size_t cols() const;

  std::vector<double>& values() { return d_->values; }
  const std::vector<double>& values() const { return d_->values; }
  double value() const;  // scalar tensors only
  double operator[](std::size_t i) const { return d_->values[i]; }
  double& operator[](std::size_t i) { return d_->values[i]; }
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t i, std::size_t j);

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool on);
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  bool defined() const { return !d_->shape.empty(); }
  Tensor clone() const;  // deep copy, detached from any record

  std::shared_ptr<TensorData> data_ptr() const { return d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

/// Ordered record of the differentiable operations executed against it.
/// Execution order is a valid topological order of the value graph, so
/// backward() replays the record once, in reverse. Per-call gradients are
/// staged in a scratch map and folded into the persistent grad buffers at
/// the end, which makes repeated backward() calls accumulate for every
/// tensor. clear() drops the record and the value graph it keeps alive;
/// tensor values themselves are untouched.
class Tape {
 public:
  using GradMap = std::unordered_map<TensorData*, std::vector<double>>;
  using BackFn = std::function<void(GradMap&)>;

  void record(BackFn fn) { ops_.push_back(std::move(fn)); }
  void backward(const Tensor& loss);
  void clear() { ops_.clear(); }
  std::size_t size() const { return ops_.size(); }

  /// Staged gradient for `t` in the current backward call, or null if no
  /// gradient has reached it yet.
  static std::vector<double>* find_grad(GradMap& gm,
                                        const std::shared_ptr<TensorData>& t);
  /// Staged gradient slot for `t`, zero-created on first touch.
  static std::vector<double>& grad_slot(GradMap& gm,
                                        const std::shared_ptr<TensorData>& t);

 private:
  std::vector<BackFn> ops_;
};

enum class RunMode { train, eval };

// Differentiable operations. Passing tape == nullptr evaluates without
// recording (inference); gradients are recorded only when an input
// requires them. Binary elementwise ops support trailing-dimension
// broadcasting of `b` against `a` (b's shape must be a suffix of a's).
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor transpose(const Tensor& x, Tape* tape = nullptr);
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor div(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scalar_mul(const Tensor& x, double k, Tape* tape = nullptr);
Tensor scalar_add(const Tensor& x, double c, Tape* tape = nullptr);
Tensor exp(const Tensor& x, Tape* tape = nullptr);
Tensor log(const Tensor& x, Tape* tape = nullptr);  // throws DomainError on x <= 0
Tensor softplus(const Tensor& x, Tape* tape = nullptr);
Tensor gelu(const Tensor& x, Tape* tape = nullptr);
Tensor softmax(const Tensor& x, std::size_t axis, Tape* tape = nullptr);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps, Tape* tape = nullptr);

/// Inverted dropout: train mode zeroes each element independently with
/// probability `rate` and scales survivors by 1/(1-rate); eval mode is the
/// identity (same handle, bitwise). rate == 0 is the identity in both modes.
Tensor dropout(const Tensor& x, double rate, RunMode mode, Rng& rng,
               Tape* tape = nullptr);

Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape,
               Tape* tape = nullptr);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len,
                  Tape* tape = nullptr);
Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape = nullptr);
Tensor sum(const Tensor& x, Tape* tape = nullptr);
Tensor mean(const Tensor& x, Tape* tape = nullptr);

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = false;
};

/// Central-finite-difference check of the autodiff gradient of a scalar
/// function of x. f receives the tape it should record on (null during the
/// finite-difference evaluations). Relative error uses a small floor in the
/// denominator so near-zero gradients compare by absolute error.
GradCheckReport gradient_check(
    const std::function<Tensor(const Tensor&, Tape*)>& f, const Tensor& x,
    double step = 1e-4, double tolerance = 1e-4);

}  // namespace patchcast
