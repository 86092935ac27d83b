#include <doctest.h>

#include <cmath>

#include "patchcast/model.hpp"

using namespace patchcast;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.scales = {ScaleSpec{1, 4, 2}};
  c.d_model = 8;
  c.n_heads = 1;
  c.n_layers = 1;
  c.ff_width = 16;
  c.dropout = 0.0;
  c.lookback = 8;
  c.horizon = 2;
  c.n_targets = 1;
  c.n_futures = 1;
  return c;
}

ModelConfig two_scale_config() {
  ModelConfig c;
  c.scales = {ScaleSpec{1, 16, 8}, ScaleSpec{4, 6, 3}};
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 2;
  c.ff_width = 16;
  c.dropout = 0.0;
  c.lookback = 24;
  c.horizon = 5;
  c.n_targets = 2;
  c.n_futures = 2;
  return c;
}

Tensor random_input(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t{{rows, cols}};
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_SUITE("model_core") {

TEST_CASE("config validation") {
  ModelConfig c = micro_config();
  CHECK_NOTHROW(c.validate());

  ModelConfig bad = c;
  bad.d_model = 9;
  bad.n_heads = 2;
  CHECK_THROWS_AS(bad.validate(), ParameterError);

  bad = c;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);

  bad = c;
  bad.var_floor = 0.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);

  bad = c;
  bad.lambda = -0.5;
  CHECK_THROWS_AS(bad.validate(), ParameterError);

  bad = c;
  bad.scales.clear();
  CHECK_THROWS_AS(bad.validate(), ParameterError);

  bad = c;
  bad.lookback = 3;  // below the patch length
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("parameter count matches the hand count on the micro config") {
  ModelConfig c = micro_config();
  // patch 4*8+8=40, pos 3*8=24, encoder 4*64+32+(128+16+128+8)=568,
  // final norm 16, horizon map 24*16+16=400, future 16, fusion 136+18
  CHECK(parameter_count(c) == 1218);

  ModelParameters p = init_model(c, 1);
  std::size_t total = 0;
  for (const Tensor& t : p.all()) total += t.numel();
  CHECK(total == 1218);

  ModelConfig two = two_scale_config();
  ModelParameters p2 = init_model(two, 1);
  std::size_t total2 = 0;
  for (const Tensor& t : p2.all()) total2 += t.numel();
  CHECK(total2 == parameter_count(two));
}

TEST_CASE("init is deterministic and finite") {
  ModelConfig c = two_scale_config();
  ModelParameters a = init_model(c, 7);
  ModelParameters b = init_model(c, 7);
  ModelParameters other = init_model(c, 8);

  auto an = a.named(), bn = b.named(), on = other.named();
  REQUIRE(an.size() == bn.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < an.size(); ++i) {
    CHECK(an[i].first == bn[i].first);
    CHECK(same_values(an[i].second, bn[i].second));
    for (double v : an[i].second.values()) CHECK(std::isfinite(v));
    if (!same_values(an[i].second, on[i].second)) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("fresh model predicts near-unit variance on zero input") {
  ModelConfig c = two_scale_config();
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    ModelParameters p = init_model(c, seed);
    GaussianForecast f = forward(Tensor({24, 2}), Tensor({5, 2}), p, c, {});
    for (double v : f.variance.values()) {
      CHECK(v >= 0.5);
      CHECK(v <= 2.0);
    }
  }
}

TEST_CASE("encode_scale shape contract and mode equivalence") {
  ModelConfig c = two_scale_config();
  ModelParameters p = init_model(c, 3);
  for (std::size_t s = 0; s < 2; ++s) {
    Tensor xs = random_input(c.scale_len(s), 1, 10 + s);
    Tensor enc = encode_scale(xs, p.scales[s], c, s, {});
    CHECK(enc.rows() == c.horizon);
    CHECK(enc.cols() == c.d_model);

    Rng rng(1);
    ForwardOptions train_opt;
    train_opt.mode = RunMode::train;
    train_opt.rng = &rng;
    Tensor enc_train = encode_scale(xs, p.scales[s], c, s, train_opt);
    CHECK(same_values(enc, enc_train));  // dropout 0: mode is irrelevant
  }
}

TEST_CASE("positional embeddings break patch permutation symmetry") {
  ModelConfig c = micro_config();
  c.scales = {ScaleSpec{1, 4, 4}};  // two non-overlapping patches
  ModelParameters p = init_model(c, 5);

  Tensor x = random_input(8, 1, 21);
  Tensor swapped{{8, 1}};
  for (std::size_t i = 0; i < 4; ++i) {
    swapped[i] = x[i + 4];
    swapped[i + 4] = x[i];
  }
  Tensor a = encode_scale(x, p.scales[0], c, 0, {});
  Tensor b = encode_scale(swapped, p.scales[0], c, 0, {});
  CHECK_FALSE(same_values(a, b));
}

TEST_CASE("project_future is a per-step affine map") {
  ModelConfig c = two_scale_config();
  ModelParameters p = init_model(c, 4);

  Tensor z{{5, 2}};
  z.at(1, 0) = 3.0;
  z.at(1, 1) = -2.0;
  z.at(2, 0) = 3.0;
  z.at(2, 1) = -2.0;

  for (auto& v : p.future_b.values()) v = 0.0;
  Tensor zero_w = p.future_w.clone();
  for (auto& v : p.future_w.values()) v = 0.0;
  Tensor embedded = project_future(z, p);
  for (double v : embedded.values()) CHECK(v == 0.0);
  p.future_w.values() = zero_w.values();

  Tensor e2 = project_future(z, p);
  for (std::size_t j = 0; j < c.d_model; ++j) {
    CHECK(e2.at(1, j) == e2.at(2, j));  // equal z rows embed equally
  }

  ModelConfig single = micro_config();
  ModelParameters sp = init_model(single, 9);
  for (auto& v : sp.future_w.values()) v = 0.0;
  for (auto& v : sp.future_b.values()) v = 0.0;
  sp.future_w[0] = 1.0;  // weight column e1
  Tensor z1 = Tensor::from_values({2, 1}, {4.5, -1.25});
  Tensor e3 = project_future(z1, sp);
  CHECK(e3.at(0, 0) == 4.5);
  CHECK(e3.at(1, 0) == -1.25);
  for (std::size_t j = 1; j < 8; ++j) CHECK(e3.at(0, j) == 0.0);

  CHECK_THROWS_AS(project_future(Tensor({2, 3}), sp), DimensionError);
}

TEST_CASE("fuse_and_head floors the variance and sees every scale") {
  ModelConfig c = two_scale_config();
  ModelParameters p = init_model(c, 6);

  std::vector<Tensor> features = {random_input(5, 8, 31), random_input(5, 8, 32)};
  Tensor z_embed = random_input(5, 8, 33);

  // push the raw-variance head hard negative: the floor must hold
  for (auto& v : p.fusion.var_b.values()) v = -100.0;
  GaussianForecast f = fuse_and_head(features, z_embed, p.fusion, c, {});
  CHECK(f.mean.rows() == 5);
  CHECK(f.mean.cols() == 1);
  for (double v : f.variance.values()) CHECK(v >= c.var_floor);

  std::vector<Tensor> silenced = {Tensor({5, 8}, 0.0), features[1]};
  GaussianForecast g = fuse_and_head(silenced, z_embed, p.fusion, c, {});
  CHECK_FALSE(same_values(f.mean, g.mean));

  CHECK_THROWS_AS(fuse_and_head({random_input(4, 8, 34), features[1]}, z_embed,
                                p.fusion, c, ForwardOptions{}),
                  DimensionError);

  // single scale, no future pathway: plain head path
  ModelConfig lone = micro_config();
  lone.n_futures = 0;
  ModelParameters lp = init_model(lone, 2);
  GaussianForecast lf = fuse_and_head({random_input(2, 8, 35)}, Tensor{},
                                      lp.fusion, lone, {});
  CHECK(lf.mean.rows() == 2);
  for (double v : lf.variance.values()) CHECK(v >= lone.var_floor);
}

TEST_CASE("forward shape contract and determinism") {
  ModelConfig c = two_scale_config();
  ModelParameters p = init_model(c, 11);
  Tensor x = random_input(24, 2, 41);
  Tensor z = random_input(5, 2, 42);

  GaussianForecast a = forward(x, z, p, c, {});
  CHECK(a.mean.rows() == 5);
  CHECK(a.mean.cols() == 2);
  CHECK(a.variance.rows() == 5);
  CHECK(a.variance.cols() == 2);
  for (double v : a.variance.values()) CHECK(v >= c.var_floor);

  GaussianForecast b = forward(x, z, p, c, {});
  CHECK(same_values(a.mean, b.mean));  // eval is bitwise deterministic
  CHECK(same_values(a.variance, b.variance));

  CHECK_THROWS_WITH_AS(forward(random_input(23, 2, 43), z, p, c, ForwardOptions{}),
                       doctest::Contains("lookback"), DimensionError);
  CHECK_THROWS_WITH_AS(forward(x, Tensor{}, p, c, ForwardOptions{}),
                       doctest::Contains("future"), DimensionError);
}

TEST_CASE("train-mode dropout is seed-dependent") {
  ModelConfig c = two_scale_config();
  c.dropout = 0.2;
  ModelParameters p = init_model(c, 12);
  Tensor x = random_input(24, 2, 44);
  Tensor z = random_input(5, 2, 45);

  Rng r1(100), r2(100), r3(200);
  ForwardOptions o1{RunMode::train, &r1, nullptr, -1};
  ForwardOptions o2{RunMode::train, &r2, nullptr, -1};
  ForwardOptions o3{RunMode::train, &r3, nullptr, -1};
  GaussianForecast f1 = forward(x, z, p, c, o1);
  GaussianForecast f2 = forward(x, z, p, c, o2);
  GaussianForecast f3 = forward(x, z, p, c, o3);
  CHECK(same_values(f1.mean, f2.mean));       // same seed, same mask
  CHECK_FALSE(same_values(f1.mean, f3.mean))  // different seed, different mask
  ;

  CHECK_THROWS_AS(forward(x, z, p, c, ForwardOptions{RunMode::train, nullptr,
                                                     nullptr, -1}),
                  ParameterError);
}

TEST_CASE("channel permutation permutes forecasts identically") {
  ModelConfig c = two_scale_config();
  ModelParameters p = init_model(c, 13);
  Tensor x = random_input(24, 2, 46);
  Tensor z = random_input(5, 2, 47);

  Tensor x_swapped{{24, 2}};
  for (std::size_t i = 0; i < 24; ++i) {
    x_swapped.at(i, 0) = x.at(i, 1);
    x_swapped.at(i, 1) = x.at(i, 0);
  }
  GaussianForecast f = forward(x, z, p, c, {});
  GaussianForecast g = forward(x_swapped, z, p, c, {});
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(f.mean.at(i, 0) == g.mean.at(i, 1));
    CHECK(f.mean.at(i, 1) == g.mean.at(i, 0));
    CHECK(f.variance.at(i, 0) == g.variance.at(i, 1));
  }
}

TEST_CASE("zeroed future pathway matches the pathless model") {
  ModelConfig with = two_scale_config();
  ModelConfig without = with;
  without.n_futures = 0;

  ModelParameters pw = init_model(with, 14);
  ModelParameters po = init_model(without, 15);

  // transplant the shared weights, then silence the future pathway
  auto wn = pw.named();
  auto on = po.named();
  std::size_t oi = 0;
  for (auto& [name, t] : wn) {
    if (name.rfind("future.", 0) == 0) {
      for (auto& v : t.values()) v = 0.0;
      continue;
    }
    REQUIRE(on[oi].first == name);
    if (name == "fusion.w1") {
      // rows beyond the scale features feed on z_embed only
      const std::size_t shared = on[oi].second.numel();
      for (std::size_t i = 0; i < shared; ++i) on[oi].second[i] = t[i];
    } else {
      on[oi].second.values() = t.values();
    }
    ++oi;
  }

  Tensor x = random_input(24, 2, 48);
  Tensor z{{5, 2}, 7.25};  // arbitrary: the zeroed pathway must ignore it
  GaussianForecast f = forward(x, z, pw, with, {});
  GaussianForecast g = forward(x, Tensor{}, po, without, {});
  CHECK(same_values(f.mean, g.mean));
  CHECK(same_values(f.variance, g.variance));
}

TEST_CASE("clone detaches parameter storage") {
  ModelConfig c = micro_config();
  ModelParameters a = init_model(c, 16);
  ModelParameters b = a.clone();
  a.fusion.mean_w[0] += 1.0;
  CHECK(b.fusion.mean_w[0] != a.fusion.mean_w[0]);
  a.scales[0].layers[0].wq[3] += 1.0;
  CHECK(b.scales[0].layers[0].wq[3] != a.scales[0].layers[0].wq[3]);
}

TEST_CASE("full-model gradients match finite differences on the micro config") {
  ModelConfig c = micro_config();
  ModelParameters params = init_model(c, 17);
  Tensor x = random_input(8, 1, 51);
  Tensor z = random_input(2, 1, 52);
  Tensor y = random_input(2, 1, 53);

  // Gaussian-style loss exercising both heads
  auto loss_of = [&](Tape* tape) {
    ForwardOptions opt;
    opt.tape = tape;
    GaussianForecast f = forward(x, z, params, c, opt);
    Tensor err = sub(f.mean, y, tape);
    Tensor fit = div(mul(err, err, tape), f.variance, tape);
    return add(mean(fit, tape), mean(log(f.variance, tape), tape), tape);
  };

  params.set_requires_grad(true);
  Tape tape;
  tape.backward(loss_of(&tape));

  const double h = 1e-4;
  double max_rel = 0.0;
  std::size_t checked = 0;
  for (auto& [name, t] : params.named()) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double up = loss_of(nullptr).value();
      t[i] = orig - h;
      const double down = loss_of(nullptr).value();
      t[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double ad = t.grad()[i];
      const double rel = std::abs(ad - fd) /
                         std::max({std::abs(ad), std::abs(fd), 1e-6});
      if (rel > max_rel) max_rel = rel;
      ++checked;
    }
    INFO("worst so far ", max_rel, " after ", name);
    CHECK(max_rel < 1e-4);
  }
  CHECK(checked == 1218);
}

}  // TEST_SUITE
