#include "patchcast/patching.hpp"

#include <string>

namespace patchcast {

std::size_t downsampled_len(std::size_t len, std::size_t window) {
  return window == 0 ? 0 : len / window;
}

std::size_t patch_count(std::size_t len, std::size_t patch_len, std::size_t stride) {
  if (len < patch_len) return 0;
  return (len - patch_len) / stride + 1;
}

Tensor scale_transform(const Tensor& x, std::size_t window, Tape* tape) {
  if (window == 0) throw ParameterError("scale_transform: window must be positive");
  if (x.ndim() != 2) {
    throw DimensionError("scale_transform: expected [L, D] input, got " +
                         shape_str(x.shape()));
  }
  if (window == 1) return x;
  const std::size_t len = x.rows(), d = x.cols();
  if (len < window) {
    throw ParameterError("scale_transform: series length " + std::to_string(len) +
                         " shorter than window " + std::to_string(window));
  }
  const std::size_t out_len = len / window;
  const double inv_w = 1.0 / static_cast<double>(window);
  std::vector<double> out(out_len * d, 0.0);
  for (std::size_t i = 0; i < out_len; ++i) {
    for (std::size_t k = 0; k < window; ++k) {
      const double* row = x.values().data() + (i * window + k) * d;
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] *= inv_w;
  }
  Tensor y = Tensor::from_values({out_len, d}, std::move(out),
                                 tape != nullptr && x.requires_grad());
  if (y.requires_grad()) {
    tape->record([xd = x.data_ptr(), yd = y.data_ptr(), out_len, d, window,
                  inv_w](Tape::GradMap& gm) {
      const std::vector<double>* gy = Tape::find_grad(gm, yd);
      if (!gy || !xd->requires_grad) return;
      std::vector<double>& gx = Tape::grad_slot(gm, xd);
      for (std::size_t i = 0; i < out_len; ++i)
        for (std::size_t k = 0; k < window; ++k)
          for (std::size_t j = 0; j < d; ++j)
            gx[(i * window + k) * d + j] += (*gy)[i * d + j] * inv_w;
    });
  }
  return y;
}

PatchSet patchify(const Tensor& x, std::size_t patch_len, std::size_t stride,
                  std::size_t scale_index, Tape* tape) {
  if (patch_len == 0 || stride == 0) {
    throw ParameterError("patchify: patch length and stride must be positive");
  }
  if (x.ndim() != 2) {
    throw DimensionError("patchify: expected [L, D] input, got " +
                         shape_str(x.shape()));
  }
  const std::size_t len = x.rows(), d = x.cols();
  if (len < patch_len) {
    throw ParameterError("patchify: scale " + std::to_string(scale_index) +
                         " has length " + std::to_string(len) +
                         ", shorter than patch length " + std::to_string(patch_len));
  }
  const std::size_t n = patch_count(len, patch_len, stride);
  const std::size_t width = patch_len * d;
  std::vector<double> out(n * width);
  for (std::size_t p = 0; p < n; ++p) {
    const double* src = x.values().data() + p * stride * d;
    double* dst = out.data() + p * width;
    for (std::size_t i = 0; i < width; ++i) dst[i] = src[i];
  }
  Tensor patches = Tensor::from_values({n, width}, std::move(out),
                                       tape != nullptr && x.requires_grad());
  if (patches.requires_grad()) {
    tape->record([xd = x.data_ptr(), pd = patches.data_ptr(), n, width, stride,
                  d](Tape::GradMap& gm) {
      const std::vector<double>* gp = Tape::find_grad(gm, pd);
      if (!gp || !xd->requires_grad) return;
      std::vector<double>& gx = Tape::grad_slot(gm, xd);
      for (std::size_t p = 0; p < n; ++p)
        for (std::size_t i = 0; i < width; ++i)
          gx[p * stride * d + i] += (*gp)[p * width + i];
    });
  }
  return PatchSet{patches, scale_index, patch_len, d};
}

std::vector<ScaleSpec> default_scale_specs(std::size_t lookback, bool hourly,
                                           Warnings* warnings) {
  const std::vector<std::size_t> windows =
      hourly ? std::vector<std::size_t>{1, 24, 168}
             : std::vector<std::size_t>{1, 4, 16};
  std::vector<ScaleSpec> specs;
  for (std::size_t w : windows) {
    const std::size_t len = downsampled_len(lookback, w);
    if (len < 2) {
      if (warnings) {
        warnings->push_back("scale with window " + std::to_string(w) +
                            " dropped: downsampled length " +
                            std::to_string(len) + " < 2 at lookback " +
                            std::to_string(lookback));
      }
      continue;
    }
    ScaleSpec spec;
    spec.window = w;
    spec.patch_len = std::min<std::size_t>(16, len);
    spec.stride = std::max<std::size_t>(1, spec.patch_len / 2);
    specs.push_back(spec);
  }
  if (specs.empty()) {
    throw ParameterError("default_scale_specs: lookback " +
                         std::to_string(lookback) + " supports no scales");
  }
  return specs;
}

}  // namespace patchcast
