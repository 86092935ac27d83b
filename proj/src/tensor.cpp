#include "patchcast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace patchcast {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

void check_shape_positive(const std::vector<std::size_t>& shape) {
  if (shape.empty()) {
    throw DimensionError("tensor shape must have at least one extent");
  }
  for (std::size_t e : shape) {
    if (e == 0) {
      throw DimensionError("tensor extents must be positive, got " +
                           shape_str(shape));
    }
  }
}

std::vector<double>* staged(Tape::GradMap& gm, const std::shared_ptr<TensorData>& t) {
  return Tape::find_grad(gm, t);
}

std::vector<double>& slot(Tape::GradMap& gm, const std::shared_ptr<TensorData>& t) {
  return Tape::grad_slot(gm, t);
}

bool track(const Tape* tape, const Tensor& a) {
  return tape != nullptr && a.requires_grad();
}

bool track(const Tape* tape, const Tensor& a, const Tensor& b) {
  return tape != nullptr && (a.requires_grad() || b.requires_grad());
}

Tensor make_result(std::vector<std::size_t> shape, std::vector<double> values,
                   bool requires_grad) {
  return Tensor::from_values(std::move(shape), std::move(values), requires_grad);
}

// Trailing-dimension broadcast: b's shape must equal a suffix of a's shape.
// Returns the length of one b-sized block inside a.
std::size_t broadcast_block(const Tensor& a, const Tensor& b, const char* op) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() > as.size() ||
      !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(as) +
                         " and " + shape_str(bs) +
                         " are not trailing-broadcast compatible");
  }
  return b.numel();
}

}  // namespace

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill, bool requires_grad)
    : d_(std::make_shared<TensorData>()) {
  check_shape_positive(shape);
  d_->shape = std::move(shape);
  d_->values.assign(shape_numel(d_->shape), fill);
  d_->requires_grad = requires_grad;
  if (requires_grad) d_->grad.assign(d_->values.size(), 0.0);
}

Tensor Tensor::from_values(std::vector<std::size_t> shape,
                           std::vector<double> values, bool requires_grad) {
  check_shape_positive(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.d_->shape = std::move(shape);
  t.d_->values = std::move(values);
  t.d_->requires_grad = requires_grad;
  if (requires_grad) t.d_->grad.assign(t.d_->values.size(), 0.0);
  return t;
}

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw DimensionError("rows(): tensor is not 2-d, shape " + shape_str(shape()));
  return d_->shape[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw DimensionError("cols(): tensor is not 2-d, shape " + shape_str(shape()));
  return d_->shape[1];
}

double Tensor::value() const {
  if (numel() != 1) {
    throw DimensionError("value(): tensor is not scalar, shape " + shape_str(shape()));
  }
  return d_->values[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  return d_->values[i * cols() + j];
}

double& Tensor::at(std::size_t i, std::size_t j) {
  return d_->values[i * cols() + j];
}

void Tensor::set_requires_grad(bool on) {
  d_->requires_grad = on;
  if (on && d_->grad.size() != d_->values.size()) {
    d_->grad.assign(d_->values.size(), 0.0);
  }
}

std::vector<double>& Tensor::grad() {
  if (!d_->requires_grad) {
    throw ParameterError("grad(): tensor does not require gradients");
  }
  if (d_->grad.size() != d_->values.size()) d_->grad.assign(d_->values.size(), 0.0);
  return d_->grad;
}

const std::vector<double>& Tensor::grad() const {
  return const_cast<Tensor*>(this)->grad();
}

void Tensor::zero_grad() {
  std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.d_->shape = d_->shape;
  t.d_->values = d_->values;
  t.d_->requires_grad = d_->requires_grad;
  if (d_->requires_grad) t.d_->grad.assign(d_->values.size(), 0.0);
  return t;
}

std::vector<double>* Tape::find_grad(GradMap& gm,
                                     const std::shared_ptr<TensorData>& t) {
  auto it = gm.find(t.get());
  return it == gm.end() ? nullptr : &it->second;
}

std::vector<double>& Tape::grad_slot(GradMap& gm,
                                     const std::shared_ptr<TensorData>& t) {
  auto it = gm.find(t.get());
  if (it == gm.end()) {
    it = gm.emplace(t.get(), std::vector<double>(t->values.size(), 0.0)).first;
  }
  return it->second;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw DimensionError("backward: loss must be scalar, got shape " +
                         shape_str(loss.shape()));
  }
  GradMap gm;
  gm[loss.data_ptr().get()] = {1.0};
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(gm);
  for (auto& [data, g] : gm) {
    if (!data->requires_grad) continue;
    if (data->grad.size() != data->values.size()) {
      data->grad.assign(data->values.size(), 0.0);
    }
    for (std::size_t i = 0; i < g.size(); ++i) data->grad[i] += g[i];
  }
}

// ---------------------------------------------------------------------------
// operations

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  Tensor c = make_result({m, n}, std::move(out), track(tape, a, b));
  if (c.requires_grad()) {
    tape->record([ad = a.data_ptr(), bd = b.data_ptr(), cd = c.data_ptr(), m, k,
                  n](Tape::GradMap& gm) {
      const std::vector<double>* gc = staged(gm, cd);
      if (!gc) return;
      if (ad->requires_grad) {
        auto& ga = slot(gm, ad);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            const double* gcrow = gc->data() + i * n;
            const double* brow = bd->values.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) s += gcrow[j] * brow[j];
            ga[i * k + p] += s;
          }
        }
      }
      if (bd->requires_grad) {
        auto& gb = slot(gm, bd);
        for (std::size_t i = 0; i < m; ++i) {
          const double* gcrow = gc->data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = ad->values[i * k + p];
            if (aip == 0.0) continue;
            double* gbrow = gb.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * gcrow[j];
          }
        }
      }
    });
  }
  return c;
}

Tensor transpose(const Tensor& x, Tape* tape) {
  if (x.ndim() != 2) {
    throw DimensionError("transpose: expected 2-d tensor, got " + shape_str(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.values()[i * n + j];
  Tensor y = make_result({n, m}, std::move(out), track(tape, x));
  if (y.requires_grad()) {
    tape->record([xd = x.data_ptr(), yd = y.data_ptr(), m, n](Tape::GradMap& gm) {
      const std::vector<double>* gy = staged(gm, yd);
      if (!gy || !xd->requires_grad) return;
      auto& gx = slot(gm, xd);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += (*gy)[j * m + i];
    });
  }
  return y;
}

namespace {

template <typename Fwd>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, Tape* tape,
                        const char* name, Fwd fwd,
                        // dfa, dfb evaluated at (a_i, b_i)
                        double (*dfa)(double, double),
                        double (*dfb)(double, double)) {
  const std::size_t block = broadcast_block(a, b, name);
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fwd(a.values()[i], b.values()[i % block]);
  }
  Tensor c = make_result(a.shape(), std::move(out), track(tape, a, b));
  if (c.requires_grad()) {
    tape->record([ad = a.data_ptr(), bd = b.data_ptr(), cd = c.data_ptr(), block,
                  n, dfa, dfb](Tape::GradMap& gm) {
      const std::vector<double>* gc = staged(gm, cd);
      if (!gc) return;
      if (ad->requires_grad) {
        auto& ga = slot(gm, ad);
        for (std::size_t i = 0; i < n; ++i) {
          ga[i] += (*gc)[i] * dfa(ad->values[i], bd->values[i % block]);
        }
      }
      if (bd->requires_grad) {
        auto& gb = slot(gm, bd);
        for (std::size_t i = 0; i < n; ++i) {
          gb[i % block] += (*gc)[i] * dfb(ad->values[i], bd->values[i % block]);
        }
      }
    });
  }
  return c;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  return broadcast_binary(
      a, b, tape, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  return broadcast_binary(
      a, b, tape, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  return broadcast_binary(
      a, b, tape, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b, Tape* tape) {
  return broadcast_binary(
      a, b, tape, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

namespace {

template <typename Fwd, typename Dfdx>
Tensor unary_op(const Tensor& x, Tape* tape, Fwd fwd, Dfdx dfdx) {
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x.values()[i]);
  Tensor y = make_result(x.shape(), std::move(out), track(tape, x));
  if (y.requires_grad()) {
    tape->record([xd = x.data_ptr(), yd = y.data_ptr(), n, dfdx](Tape::GradMap& gm) {
      const std::vector<double>* gy = staged(gm, yd);
      if (!gy || !xd->requires_grad) return;
      auto& gx = slot(gm, xd);
      for (std::size_t i = 0; i < n; ++i) {
        gx[i] += (*gy)[i] * dfdx(xd->values[i], yd->values[i]);
      }
    });
  }
  return y;
}

}  // namespace

Tensor scalar_mul(const Tensor& x, double k, Tape* tape) {
  return unary_op(
      x, tape, [k](double v) { return v * k; },
      [k](double, double) { return k; });
}

Tensor scalar_add(const Tensor& x, double c, Tape* tape) {
  return unary_op(
      x, tape, [c](double v) { return v + c; },
      [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x, Tape* tape) {
  return unary_op(
      x, tape, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& x, Tape* tape) {
  for (double v : x.values()) {
    if (!(v > 0.0)) {
      throw DomainError("log: input must be positive, got " + std::to_string(v));
    }
  }
  return unary_op(
      x, tape, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor softplus(const Tensor& x, Tape* tape) {
  return unary_op(
      x, tape,
      [](double v) {
        if (v > 30.0) return v;
        if (v < -30.0) return std::exp(v);
        return std::log1p(std::exp(v));
      },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Tensor gelu(const Tensor& x, Tape* tape) {
  return unary_op(
      x, tape,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor softmax(const Tensor& x, std::size_t axis, Tape* tape) {
  if (axis >= x.ndim()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(x.shape()));
  }
  const auto& sh = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
  const std::size_t len = sh[axis];

  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = x.values()[base];
      for (std::size_t l = 1; l < len; ++l) {
        mx = std::max(mx, x.values()[base + l * inner]);
      }
      double s = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(x.values()[base + l * inner] - mx);
        out[base + l * inner] = e;
        s += e;
      }
      const double inv = 1.0 / s;
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] *= inv;
    }
  }
  Tensor y = make_result(sh, std::move(out), track(tape, x));
  if (y.requires_grad()) {
    tape->record([xd = x.data_ptr(), yd = y.data_ptr(), outer, inner,
                  len](Tape::GradMap& gm) {
      const std::vector<double>* gy = staged(gm, yd);
      if (!gy || !xd->requires_grad) return;
      auto& gx = slot(gm, xd);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            dot += (*gy)[idx] * yd->values[idx];
          }
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            gx[idx] += yd->values[idx] * ((*gy)[idx] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps, Tape* tape) {
  if (x.ndim() == 0) throw DimensionError("layer_norm: undefined input tensor");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias length must match last axis " +
                         std::to_string(d) + ", got " + shape_str(gain.shape()) +
                         " and " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_sd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sd[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gain.values()[j] + bias.values()[j];
    }
  }
  const bool rec = tape != nullptr && (x.requires_grad() || gain.requires_grad() ||
                                       bias.requires_grad());
  Tensor y = make_result(x.shape(), std::move(out), rec);
  if (rec) {
    tape->record([xd = x.data_ptr(), gd = gain.data_ptr(), bd = bias.data_ptr(),
                  yd = y.data_ptr(), xhat = std::move(xhat),
                  inv_sd = std::move(inv_sd), rows, d](Tape::GradMap& gm) {
      const std::vector<double>* gy = staged(gm, yd);
      if (!gy) return;
      if (gd->requires_grad) {
        auto& gg = slot(gm, gd);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j)
            gg[j] += (*gy)[r * d + j] * xhat[r * d + j];
      }
      if (bd->requires_grad) {
        auto& gb = slot(gm, bd);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += (*gy)[r * d + j];
      }
      if (xd->requires_grad) {
        auto& gx = slot(gm, xd);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;  // mean(dyg), mean(dyg*xhat)
          for (std::size_t j = 0; j < d; ++j) {
            const double dyg = (*gy)[r * d + j] * gd->values[j];
            m1 += dyg;
            m2 += dyg * xhat[r * d + j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dyg = (*gy)[r * d + j] * gd->values[j];
            gx[r * d + j] += inv_sd[r] * (dyg - m1 - xhat[r * d + j] * m2);
          }
        }
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& x, double rate, RunMode mode, Rng& rng, Tape* tape) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ParameterError("dropout: rate must be in [0, 1), got " +
                         std::to_string(rate));
  }
  if (mode == RunMode::eval || rate == 0.0) return x;
  const std::size_t n = x.numel();
  const double scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(n);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : scale;
    out[i] = x.values()[i] * mask[i];
  }
  Tensor y = make_result(x.shape(), std::move(out), track(tape, x));
  if (y.requires_grad()) {
    tape->record([xd = x.data_ptr(), yd = y.data_ptr(), mask = std::move(mask),
                  n](Tape::GradMap& gm) {
      const std::vector<double>* gy = staged(gm, yd);
      if (!gy || !xd->requires_grad) return;
      auto& gx = slot(gm, xd);
      for (std::size_t i = 0; i < n; ++i) gx[i] += (*gy)[i] * mask[i];
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape, Tape* tape) {
  check_shape_positive(new_shape);
  if (shape_numel(new_shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) +
                         " as " + shape_str(new_shape));
  }
  Tensor y = make_result(std::move(new_shape), x.values(), track(tape, x));
  if (y.requires_grad()) {
    tape->record([xd = x.data_ptr(), yd = y.data_ptr()](Tape::GradMap& gm) {
      const std::vector<double>* gy = staged(gm, yd);
      if (!gy || !xd->requires_grad) return;
      auto& gx = slot(gm, xd);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*gy)[i];
    });
  }
  return y;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len, Tape* tape) {
  if (x.ndim() != 2 || len == 0 || start + len > x.cols()) {
    throw DimensionError("slice_cols: invalid slice [" + std::to_string(start) +
                         ", " + std::to_string(start + len) + ") of " +
                         shape_str(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * len);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < len; ++j)
      out[i * len + j] = x.values()[i * n + start + j];
  Tensor y = make_result({m, len}, std::move(out), track(tape, x));
  if (y.requires_grad()) {
    tape->record([xd = x.data_ptr(), yd = y.data_ptr(), start, len, m,
                  n](Tape::GradMap& gm) {
      const std::vector<double>* gy = staged(gm, yd);
      if (!gy || !xd->requires_grad) return;
      auto& gx = slot(gm, xd);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j)
          gx[i * n + start + j] += (*gy)[i * len + j];
    });
  }
  return y;
}

Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch, " + shape_str(p.shape()) +
                           " vs " + std::to_string(m) + " rows");
    }
    total += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out[i * total + off + j] = p.values()[i * w + j];
    off += w;
  }
  Tensor y = make_result({m, total}, std::move(out), tape != nullptr && any_grad);
  if (y.requires_grad()) {
    std::vector<std::shared_ptr<TensorData>> srcs;
    srcs.reserve(parts.size());
    for (const Tensor& p : parts) srcs.push_back(p.data_ptr());
    tape->record([srcs = std::move(srcs), yd = y.data_ptr(), m,
                  total](Tape::GradMap& gm) {
      const std::vector<double>* gy = staged(gm, yd);
      if (!gy) return;
      std::size_t off = 0;
      for (const auto& sd : srcs) {
        const std::size_t w = sd->values.size() / m;
        if (sd->requires_grad) {
          auto& gs = slot(gm, sd);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
              gs[i * w + j] += (*gy)[i * total + off + j];
        }
        off += w;
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& x, Tape* tape) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor y = make_result({1}, {s}, track(tape, x));
  if (y.requires_grad()) {
    tape->record([xd = x.data_ptr(), yd = y.data_ptr()](Tape::GradMap& gm) {
      const std::vector<double>* gy = staged(gm, yd);
      if (!gy || !xd->requires_grad) return;
      auto& gx = slot(gm, xd);
      for (double& g : gx) g += (*gy)[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& x, Tape* tape) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  Tensor y = make_result({1}, {s * inv_n}, track(tape, x));
  if (y.requires_grad()) {
    tape->record([xd = x.data_ptr(), yd = y.data_ptr(), inv_n](Tape::GradMap& gm) {
      const std::vector<double>* gy = staged(gm, yd);
      if (!gy || !xd->requires_grad) return;
      auto& gx = slot(gm, xd);
      for (double& g : gx) g += (*gy)[0] * inv_n;
    });
  }
  return y;
}

GradCheckReport gradient_check(
    const std::function<Tensor(const Tensor&, Tape*)>& f, const Tensor& x,
    double step, double tolerance) {
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Tape tape;
  Tensor loss = f(probe, &tape);
  if (loss.numel() != 1) {
    throw DimensionError("gradient_check: f must be scalar-valued");
  }
  tape.backward(loss);
  const std::vector<double> autodiff = probe.grad();

  GradCheckReport report;
  report.checked = x.numel();
  Tensor fd_point = x.clone();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = fd_point[i];
    fd_point[i] = orig + step;
    const double up = f(fd_point, nullptr).value();
    fd_point[i] = orig - step;
    const double down = f(fd_point, nullptr).value();
    fd_point[i] = orig;
    const double fd = (up - down) / (2.0 * step);
    const double abs_err = std::abs(autodiff[i] - fd);
    const double rel_err =
        abs_err / std::max({std::abs(autodiff[i]), std::abs(fd), 1e-6});
    if (rel_err > report.max_rel_error) {
      report.max_rel_error = rel_err;
      report.worst_index = i;
    }
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace patchcast
