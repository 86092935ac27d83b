#include "patchcast/model.hpp"

#include <cmath>

namespace patchcast {

namespace {

// softplus(x) = 1 at this raw-variance bias, so fresh models predict unit
// variance on normalized targets
const double kUnitVarianceBias = std::log(std::exp(1.0) - 1.0);

Tensor uniform_matrix(std::vector<std::size_t> shape, double bound, Rng& rng) {
  Tensor t{std::move(shape)};
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for a [fan_in, fan_out] weight
Tensor linear_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return uniform_matrix({fan_in, fan_out},
                        1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

void push(std::vector<std::pair<std::string, Tensor>>& out, std::string name,
          const Tensor& t) {
  if (t.defined()) out.emplace_back(std::move(name), t);
}

}  // namespace

void ModelConfig::validate() const {
  if (scales.empty()) throw ParameterError("model config: no scales");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ParameterError("model config: d_model " + std::to_string(d_model) +
                         " must be a positive multiple of n_heads " +
                         std::to_string(n_heads));
  }
  if (n_layers == 0 || ff_width == 0) {
    throw ParameterError("model config: n_layers and ff_width must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ParameterError("model config: dropout must be in [0, 1), got " +
                         std::to_string(dropout));
  }
  if (var_floor <= 0.0) throw ParameterError("model config: variance floor must be positive");
  if (lambda < 0.0) throw ParameterError("model config: lambda must be non-negative");
  if (lookback == 0 || horizon == 0 || n_targets == 0) {
    throw ParameterError("model config: lookback, horizon and target count must be positive");
  }
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const ScaleSpec& spec = scales[s];
    if (spec.window == 0 || spec.patch_len == 0 || spec.stride == 0) {
      throw ParameterError("model config: scale " + std::to_string(s) +
                           " has a zero window, patch length or stride");
    }
    const std::size_t len = scale_len(s);
    if (len < spec.patch_len) {
      throw ParameterError("model config: scale " + std::to_string(s) +
                           " downsamples lookback " + std::to_string(lookback) +
                           " to " + std::to_string(len) +
                           ", shorter than patch length " +
                           std::to_string(spec.patch_len));
    }
  }
}

std::size_t ModelConfig::scale_len(std::size_t s) const {
  return downsampled_len(lookback, scales[s].window);
}

std::size_t ModelConfig::n_patches(std::size_t s) const {
  return patch_count(scale_len(s), scales[s].patch_len, scales[s].stride);
}

std::vector<std::pair<std::string, Tensor>> ModelParameters::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const std::string p = "scale" + std::to_string(s) + ".";
    const ScaleBranchParams& b = scales[s];
    push(out, p + "patch_w", b.patch_w);
    push(out, p + "patch_b", b.patch_b);
    push(out, p + "pos", b.pos);
    for (std::size_t l = 0; l < b.layers.size(); ++l) {
      const std::string q = p + "layer" + std::to_string(l) + ".";
      const EncoderLayerParams& e = b.layers[l];
      push(out, q + "wq", e.wq);
      push(out, q + "wk", e.wk);
      push(out, q + "wv", e.wv);
      push(out, q + "wo", e.wo);
      push(out, q + "ln1_g", e.ln1_g);
      push(out, q + "ln1_b", e.ln1_b);
      push(out, q + "ln2_g", e.ln2_g);
      push(out, q + "ln2_b", e.ln2_b);
      push(out, q + "ff_w1", e.ff_w1);
      push(out, q + "ff_b1", e.ff_b1);
      push(out, q + "ff_w2", e.ff_w2);
      push(out, q + "ff_b2", e.ff_b2);
    }
    push(out, p + "lnf_g", b.lnf_g);
    push(out, p + "lnf_b", b.lnf_b);
    push(out, p + "hor_w", b.hor_w);
    push(out, p + "hor_b", b.hor_b);
  }
  push(out, "future.w", future_w);
  push(out, "future.b", future_b);
  push(out, "fusion.w1", fusion.w1);
  push(out, "fusion.b1", fusion.b1);
  push(out, "fusion.mean_w", fusion.mean_w);
  push(out, "fusion.mean_b", fusion.mean_b);
  push(out, "fusion.var_w", fusion.var_w);
  push(out, "fusion.var_b", fusion.var_b);
  return out;
}

std::vector<Tensor> ModelParameters::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) {
    (void)name;
    out.push_back(t);
  }
  return out;
}

void ModelParameters::set_requires_grad(bool on) {
  for (auto& t : all()) t.set_requires_grad(on);
}

ModelParameters ModelParameters::clone() const {
  ModelParameters c;
  c.scales.reserve(scales.size());
  for (const ScaleBranchParams& b : scales) {
    ScaleBranchParams nb;
    nb.patch_w = b.patch_w.clone();
    nb.patch_b = b.patch_b.clone();
    nb.pos = b.pos.clone();
    for (const EncoderLayerParams& e : b.layers) {
      EncoderLayerParams ne;
      ne.wq = e.wq.clone();
      ne.wk = e.wk.clone();
      ne.wv = e.wv.clone();
      ne.wo = e.wo.clone();
      ne.ln1_g = e.ln1_g.clone();
      ne.ln1_b = e.ln1_b.clone();
      ne.ln2_g = e.ln2_g.clone();
      ne.ln2_b = e.ln2_b.clone();
      ne.ff_w1 = e.ff_w1.clone();
      ne.ff_b1 = e.ff_b1.clone();
      ne.ff_w2 = e.ff_w2.clone();
      ne.ff_b2 = e.ff_b2.clone();
      nb.layers.push_back(std::move(ne));
    }
    nb.lnf_g = b.lnf_g.clone();
    nb.lnf_b = b.lnf_b.clone();
    nb.hor_w = b.hor_w.clone();
    nb.hor_b = b.hor_b.clone();
    c.scales.push_back(std::move(nb));
  }
  if (future_w.defined()) c.future_w = future_w.clone();
  if (future_b.defined()) c.future_b = future_b.clone();
  c.fusion.w1 = fusion.w1.clone();
  c.fusion.b1 = fusion.b1.clone();
  c.fusion.mean_w = fusion.mean_w.clone();
  c.fusion.mean_b = fusion.mean_b.clone();
  c.fusion.var_w = fusion.var_w.clone();
  c.fusion.var_b = fusion.var_b.clone();
  return c;
}

std::size_t parameter_count(const ModelConfig& config) {
  const std::size_t d = config.d_model, ff = config.ff_width, h = config.horizon;
  std::size_t total = 0;
  for (std::size_t s = 0; s < config.scales.size(); ++s) {
    const std::size_t p = config.scales[s].patch_len;
    const std::size_t n = config.n_patches(s);
    total += p * d + d;            // patch projection
    total += n * d;                // positions
    total += config.n_layers * (4 * d * d + 4 * d + d * ff + ff + ff * d + d);
    total += 2 * d;                // final norm
    total += n * d * h * d + h * d;  // horizon map
  }
  if (config.has_future_path()) total += config.n_futures * d + d;
  const std::size_t fusion_in =
      (config.scales.size() + (config.has_future_path() ? 1 : 0)) * d;
  total += fusion_in * d + d;  // fusion hidden
  total += 2 * (d + 1);        // mean and raw-variance heads
  return total;
}

ModelParameters init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.d_model, ff = config.ff_width, h = config.horizon;

  ModelParameters params;
  for (std::size_t s = 0; s < config.scales.size(); ++s) {
    const std::size_t p = config.scales[s].patch_len;
    const std::size_t n = config.n_patches(s);
    ScaleBranchParams b;
    b.patch_w = linear_weight(p, d, rng);
    b.patch_b = Tensor({d});
    b.pos = uniform_matrix({n, d}, 0.02, rng);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      EncoderLayerParams e;
      e.wq = linear_weight(d, d, rng);
      e.wk = linear_weight(d, d, rng);
      e.wv = linear_weight(d, d, rng);
      e.wo = linear_weight(d, d, rng);
      e.ln1_g = Tensor({d}, 1.0);
      e.ln1_b = Tensor({d});
      e.ln2_g = Tensor({d}, 1.0);
      e.ln2_b = Tensor({d});
      e.ff_w1 = linear_weight(d, ff, rng);
      e.ff_b1 = Tensor({ff});
      e.ff_w2 = linear_weight(ff, d, rng);
      e.ff_b2 = Tensor({d});
      b.layers.push_back(std::move(e));
    }
    b.lnf_g = Tensor({d}, 1.0);
    b.lnf_b = Tensor({d});
    b.hor_w = linear_weight(n * d, h * d, rng);
    b.hor_b = Tensor({h * d});
    params.scales.push_back(std::move(b));
  }
  if (config.has_future_path()) {
    params.future_w = linear_weight(config.n_futures, d, rng);
    params.future_b = Tensor({d});
  }
  const std::size_t fusion_in =
      (config.scales.size() + (config.has_future_path() ? 1 : 0)) * d;
  params.fusion.w1 = linear_weight(fusion_in, d, rng);
  params.fusion.b1 = Tensor({d});
  params.fusion.mean_w = linear_weight(d, 1, rng);
  params.fusion.mean_b = Tensor({1});
  params.fusion.var_w = linear_weight(d, 1, rng);
  params.fusion.var_b = Tensor({1}, kUnitVarianceBias);
  return params;
}

namespace {

Rng& dropout_rng(const ForwardOptions& opt, const ModelConfig& config) {
  static Rng idle(0);  // never consumed: eval mode and rate 0 return early
  if (opt.mode == RunMode::train && config.dropout > 0.0 && opt.rng == nullptr) {
    throw ParameterError("forward: train mode with dropout needs a generator");
  }
  return opt.rng ? *opt.rng : idle;
}

Tensor attention_block(const Tensor& tokens, const EncoderLayerParams& layer,
                       const ModelConfig& config, const ForwardOptions& opt,
                       Rng& rng) {
  Tape* tape = opt.tape;
  const std::size_t d = config.d_model;
  const std::size_t dh = d / config.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor normed = layer_norm(tokens, layer.ln1_g, layer.ln1_b, 1e-5, tape);
  Tensor q = matmul(normed, layer.wq, tape);
  Tensor k = matmul(normed, layer.wk, tape);
  Tensor v = matmul(normed, layer.wv, tape);

  std::vector<Tensor> heads;
  heads.reserve(config.n_heads);
  for (std::size_t head = 0; head < config.n_heads; ++head) {
    Tensor qh = slice_cols(q, head * dh, dh, tape);
    Tensor kh = slice_cols(k, head * dh, dh, tape);
    Tensor vh = slice_cols(v, head * dh, dh, tape);
    Tensor scores = scalar_mul(matmul(qh, transpose(kh, tape), tape), scale, tape);
    Tensor weights = softmax(scores, 1, tape);
    heads.push_back(matmul(weights, vh, tape));
  }
  Tensor merged = config.n_heads == 1 ? heads[0] : concat_cols(heads, tape);
  Tensor projected = matmul(merged, layer.wo, tape);
  projected = dropout(projected, config.dropout, opt.mode, rng, tape);
  Tensor after_attn = add(tokens, projected, tape);

  Tensor normed2 = layer_norm(after_attn, layer.ln2_g, layer.ln2_b, 1e-5, tape);
  Tensor hidden = gelu(add(matmul(normed2, layer.ff_w1, tape), layer.ff_b1, tape), tape);
  Tensor ffout = add(matmul(hidden, layer.ff_w2, tape), layer.ff_b2, tape);
  ffout = dropout(ffout, config.dropout, opt.mode, rng, tape);
  return add(after_attn, ffout, tape);
}

}  // namespace

Tensor encode_scale(const Tensor& x_scaled, const ScaleBranchParams& branch,
                    const ModelConfig& config, std::size_t scale_index,
                    const ForwardOptions& opt) {
  Tape* tape = opt.tape;
  Rng& rng = dropout_rng(opt, config);
  const ScaleSpec& spec = config.scales.at(scale_index);

  PatchSet ps = patchify(x_scaled, spec.patch_len, spec.stride, scale_index, tape);
  const std::size_t n = ps.count();
  if (n != config.n_patches(scale_index)) {
    throw DimensionError("encode_scale: scale " + std::to_string(scale_index) +
                         " produced " + std::to_string(n) + " patches, config expects " +
                         std::to_string(config.n_patches(scale_index)));
  }

  Tensor tokens = add(matmul(ps.patches, branch.patch_w, tape), branch.patch_b, tape);
  tokens = add(tokens, branch.pos, tape);
  tokens = dropout(tokens, config.dropout, opt.mode, rng, tape);

  for (const EncoderLayerParams& layer : branch.layers) {
    tokens = attention_block(tokens, layer, config, opt, rng);
  }
  tokens = layer_norm(tokens, branch.lnf_g, branch.lnf_b, 1e-5, tape);

  Tensor flat = reshape(tokens, {1, n * config.d_model}, tape);
  Tensor mapped = add(matmul(flat, branch.hor_w, tape), branch.hor_b, tape);
  return reshape(mapped, {config.horizon, config.d_model}, tape);
}

Tensor project_future(const Tensor& z, const ModelParameters& params, Tape* tape) {
  if (!params.future_w.defined()) {
    throw ParameterError("project_future: model has no future pathway");
  }
  if (z.ndim() != 2 || z.cols() != params.future_w.rows()) {
    throw DimensionError("project_future: z shape " + shape_str(z.shape()) +
                         " does not match weight " +
                         shape_str(params.future_w.shape()));
  }
  return add(matmul(z, params.future_w, tape), params.future_b, tape);
}

GaussianForecast fuse_and_head(const std::vector<Tensor>& per_scale,
                               const Tensor& z_embed, const FusionParams& fusion,
                               const ModelConfig& config,
                               const ForwardOptions& opt) {
  Tape* tape = opt.tape;
  Rng& rng = dropout_rng(opt, config);
  if (per_scale.empty()) throw DimensionError("fuse_and_head: no scale features");

  std::vector<Tensor> parts = per_scale;
  if (z_embed.defined()) parts.push_back(z_embed);
  const std::size_t h = parts.front().rows();
  for (const Tensor& p : parts) {
    if (p.rows() != h || p.cols() != config.d_model) {
      throw DimensionError("fuse_and_head: feature block " + shape_str(p.shape()) +
                           " does not match [" + std::to_string(h) + ", " +
                           std::to_string(config.d_model) + "]");
    }
  }

  Tensor joined = parts.size() == 1 ? parts[0] : concat_cols(parts, tape);
  Tensor hidden = gelu(add(matmul(joined, fusion.w1, tape), fusion.b1, tape), tape);
  hidden = dropout(hidden, config.dropout, opt.mode, rng, tape);

  GaussianForecast out;
  out.mean = add(matmul(hidden, fusion.mean_w, tape), fusion.mean_b, tape);
  Tensor raw = add(matmul(hidden, fusion.var_w, tape), fusion.var_b, tape);
  out.variance = scalar_add(softplus(raw, tape), config.var_floor, tape);
  return out;
}

GaussianForecast forward(const Tensor& x, const Tensor& z,
                         const ModelParameters& params, const ModelConfig& config,
                         const ForwardOptions& opt) {
  Tape* tape = opt.tape;
  if (x.ndim() != 2 || x.rows() != config.lookback || x.cols() != config.n_targets) {
    throw DimensionError("forward: lookback stage expected [" +
                         std::to_string(config.lookback) + ", " +
                         std::to_string(config.n_targets) + "], got " +
                         shape_str(x.shape()));
  }
  if (config.has_future_path()) {
    if (!z.defined() || z.rows() != config.horizon || z.cols() != config.n_futures) {
      throw DimensionError("forward: future stage expected [" +
                           std::to_string(config.horizon) + ", " +
                           std::to_string(config.n_futures) + "], got " +
                           (z.defined() ? shape_str(z.shape()) : "no tensor"));
    }
  }
  if (params.scales.size() != config.scales.size()) {
    throw DimensionError("forward: parameters hold " +
                         std::to_string(params.scales.size()) +
                         " scale branches, config expects " +
                         std::to_string(config.scales.size()));
  }

  Tensor z_embed;
  if (config.has_future_path()) z_embed = project_future(z, params, tape);

  std::vector<Tensor> mean_cols, var_cols;
  mean_cols.reserve(config.n_targets);
  var_cols.reserve(config.n_targets);
  for (std::size_t channel = 0; channel < config.n_targets; ++channel) {
    Tensor xc = config.n_targets == 1 ? x : slice_cols(x, channel, 1, tape);
    std::vector<Tensor> features;
    features.reserve(config.scales.size());
    for (std::size_t s = 0; s < config.scales.size(); ++s) {
      if (static_cast<int>(s) == opt.zero_scale) {
        features.push_back(Tensor({config.horizon, config.d_model}, 0.0));
        continue;
      }
      Tensor xs = scale_transform(xc, config.scales[s].window, tape);
      features.push_back(encode_scale(xs, params.scales[s], config, s, opt));
    }
    GaussianForecast one = fuse_and_head(features, z_embed, params.fusion, config, opt);
    mean_cols.push_back(one.mean);
    var_cols.push_back(one.variance);
  }

  GaussianForecast out;
  out.mean = config.n_targets == 1 ? mean_cols[0] : concat_cols(mean_cols, tape);
  out.variance = config.n_targets == 1 ? var_cols[0] : concat_cols(var_cols, tape);
  return out;
}

}  // namespace patchcast
