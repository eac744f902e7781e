#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>

#include "hvacbench/net.hpp"
#include "support.hpp"

using namespace hvacbench;

namespace {

// loss = sum of squares of outputs; analytic d loss / d out = 2 out
double quadratic_loss(const MlpParams& p, const Vec& x) {
  Vec y = mlp_forward(p, x);
  return y.squaredNorm();
}

void check_gradients(MlpParams& p, Rng& rng, double tol) {
  Vec x = Vec::NullaryExpr(p.input_dim(), [&](int) { return rng.uniform(-2, 2); });
  GradTape tape;
  Vec y = mlp_forward(p, x, &tape);
  MlpGrads grads = zero_grads(p);
  Vec dx = mlp_backward(p, tape, 2.0 * y, &grads);

  // input gradient against central differences
  for (int i = 0; i < std::min<int>(5, x.size()); ++i) {
    Vec xp = x, xm = x;
    xp(i) += 1e-6;
    xm(i) -= 1e-6;
    double fd = (quadratic_loss(p, xp) - quadratic_loss(p, xm)) / 2e-6;
    CHECK(std::abs(dx(i) - fd) / std::max(1.0, std::abs(fd)) < tol);
  }
  // sampled parameter coordinates against central differences
  for (int l = 0; l < p.layer_count(); ++l) {
    for (int probe = 0; probe < 6; ++probe) {
      int r = rng.uniform_int(0, static_cast<int>(p.weights[l].rows()) - 1);
      int c = rng.uniform_int(0, static_cast<int>(p.weights[l].cols()) - 1);
      double keep = p.weights[l](r, c);
      p.weights[l](r, c) = keep + 1e-6;
      double up = quadratic_loss(p, x);
      p.weights[l](r, c) = keep - 1e-6;
      double dn = quadratic_loss(p, x);
      p.weights[l](r, c) = keep;
      double fd = (up - dn) / 2e-6;
      CHECK(std::abs(grads.weights[l](r, c) - fd) / std::max(1.0, std::abs(fd)) < tol);
    }
    int r = rng.uniform_int(0, static_cast<int>(p.biases[l].size()) - 1);
    double keep = p.biases[l](r);
    p.biases[l](r) = keep + 1e-6;
    double up = quadratic_loss(p, x);
    p.biases[l](r) = keep - 1e-6;
    double dn = quadratic_loss(p, x);
    p.biases[l](r) = keep;
    double fd = (up - dn) / 2e-6;
    CHECK(std::abs(grads.biases[l](r) - fd) / std::max(1.0, std::abs(fd)) < tol);
  }
}

} // namespace

TEST_CASE("initialization is fan-in scaled, zero bias, seed deterministic") {
  MlpParams a = init_mlp(5, 16, {32, 32}, 4);
  MlpParams b = init_mlp(5, 16, {32, 32}, 4);
  MlpParams c = init_mlp(6, 16, {32, 32}, 4);
  REQUIRE(a.layer_count() == 3);
  for (int l = 0; l < 3; ++l) {
    CHECK((a.weights[l] - b.weights[l]).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.biases[l].cwiseAbs().maxCoeff() == 0.0);
    double bound = 1.0 / std::sqrt(static_cast<double>(a.weights[l].cols()));
    CHECK(a.weights[l].cwiseAbs().maxCoeff() <= bound);
    CHECK(a.weights[l].cwiseAbs().maxCoeff() > 0.5 * bound);  // actually spread out
  }
  CHECK((a.weights[0] - c.weights[0]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("reverse-mode gradients match finite differences on 20 architectures") {
  Rng rng(99);
  std::vector<std::vector<int>> shapes = {{512, 512}, {32, 32}};
  for (int extra = 0; extra < 18; ++extra) {
    std::vector<int> hidden;
    int depth = rng.uniform_int(1, 3);
    for (int l = 0; l < depth; ++l) hidden.push_back(rng.uniform_int(3, 24));
    shapes.push_back(hidden);
  }
  for (std::size_t arch = 0; arch < shapes.size(); ++arch) {
    int in = rng.uniform_int(4, 30);
    int out = rng.uniform_int(1, 8);
    MlpParams p = init_mlp(1000 + arch, in, shapes[arch], out);
    check_gradients(p, rng, 1e-5);
  }
}

TEST_CASE("input normalization participates in both passes") {
  Rng rng(7);
  MlpParams p = init_mlp(2, 6, {12}, 3);
  p.input_offset = Vec::NullaryExpr(6, [&](int) { return rng.uniform(-5, 5); });
  p.input_scale = Vec::NullaryExpr(6, [&](int) { return rng.uniform(0.1, 2.0); });
  check_gradients(p, rng, 1e-5);
}

TEST_CASE("batched passes agree with the single-sample passes") {
  Rng rng(13);
  MlpParams p = init_mlp(21, 10, {24, 24}, 5);
  p.input_offset = Vec::Constant(10, 0.5);
  p.input_scale = Vec::Constant(10, 1.5);
  int count = 17;
  Mat inputs = Mat::NullaryExpr(10, count, [&](int, int) { return rng.uniform(-2, 2); });
  BatchTape btape;
  Mat outs = mlp_forward_batch(p, inputs, &btape);
  Mat d_outs = Mat::NullaryExpr(5, count, [&](int, int) { return rng.uniform(-1, 1); });
  MlpGrads batch_grads = zero_grads(p);
  Mat d_ins = mlp_backward_batch(p, btape, d_outs, &batch_grads);

  MlpGrads sum_grads = zero_grads(p);
  for (int i = 0; i < count; ++i) {
    GradTape tape;
    Vec y = mlp_forward(p, inputs.col(i), &tape);
    CHECK((y - outs.col(i)).cwiseAbs().maxCoeff() < 1e-12);
    Vec dx = mlp_backward(p, tape, d_outs.col(i), &sum_grads);
    CHECK((dx - d_ins.col(i)).cwiseAbs().maxCoeff() < 1e-12);
  }
  for (int l = 0; l < p.layer_count(); ++l) {
    CHECK((batch_grads.weights[l] - sum_grads.weights[l]).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((batch_grads.biases[l] - sum_grads.biases[l]).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("first adam step moves a scalar parameter by the learning rate") {
  Vec x = Vec::Constant(1, 1.0);
  AdamVecState state = zero_adam_vec(1);
  AdamConfig cfg;
  cfg.lr = 0.001;
  adam_step_vec(x, state, Vec::Constant(1, 1.0), cfg);
  CHECK(x(0) == doctest::Approx(1.0 - 0.001).epsilon(1e-6));

  Vec bad = Vec::Constant(1, std::nan(""));
  CHECK_THROWS_AS(adam_step_vec(x, state, bad, cfg), std::runtime_error);
}

TEST_CASE("adam on networks decreases a quadratic and rejects non-finite gradients") {
  Rng rng(3);
  MlpParams p = init_mlp(77, 4, {8}, 2);
  AdamState state = zero_adam(p);
  AdamConfig cfg;
  Vec x = Vec::NullaryExpr(4, [&](int) { return rng.uniform(-1, 1); });
  double before = quadratic_loss(p, x);
  for (int it = 0; it < 200; ++it) {
    GradTape tape;
    Vec y = mlp_forward(p, x, &tape);
    MlpGrads g = zero_grads(p);
    mlp_backward(p, tape, 2.0 * y, &g);
    adam_step(p, state, g, cfg);
  }
  CHECK(quadratic_loss(p, x) < 0.01 * before);

  MlpGrads g = zero_grads(p);
  g.weights[0](0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adam_step(p, state, g, cfg), std::runtime_error);
}

TEST_CASE("policy head stays strictly inside the box, midpoint at zero net") {
  ActionBounds bounds = default_bounds(5);
  MlpParams zero = init_mlp(1, 12, {8}, 6);
  for (auto& w : zero.weights) w.setZero();
  Vec obs = Vec::Constant(12, 0.7);
  ControlAction mid = policy_act(zero, obs, bounds);
  CHECK((mid.mdot - bounds.midpoint().mdot).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(mid.t_supply == doctest::Approx(13.0).epsilon(1e-12));

  Rng rng(55);
  MlpParams wild = init_mlp(2, 12, {16}, 6);
  for (auto& w : wild.weights) w *= 400.0;  // drive the squash deep into saturation
  for (int trial = 0; trial < 200; ++trial) {
    Vec o = Vec::NullaryExpr(12, [&](int) { return rng.uniform(-3, 3); });
    ControlAction u = wild.weights.empty() ? mid : policy_act(wild, o, bounds);
    for (int i = 0; i < 5; ++i) {
      CHECK(u.mdot(i) > bounds.mdot_lo(i));
      CHECK(u.mdot(i) < bounds.mdot_hi(i));
    }
    CHECK(u.t_supply > bounds.tsupply_lo);
    CHECK(u.t_supply < bounds.tsupply_hi);
  }
}

TEST_CASE("stochastic samples are clipped and carry pre-clip densities") {
  ActionBounds bounds = default_bounds(5);
  MlpParams p = init_mlp(8, 12, {16}, 6);
  Vec log_std = Vec::Constant(6, -0.5);
  Rng rng(19);
  int clipped_count = 0;
  for (int trial = 0; trial < 500; ++trial) {
    Vec o = Vec::NullaryExpr(12, [&](int) { return rng.uniform(-3, 3); });
    PolicySample s = policy_sample(p, log_std, o, bounds, rng);
    Vec u = action_to_vec(s.action);
    Vec lo = bounds.lower(), hi = bounds.upper();
    for (int i = 0; i < 6; ++i) {
      CHECK(u(i) >= lo(i));
      CHECK(u(i) <= hi(i));
    }
    if ((s.sample.array().abs() > 1.0).any()) ++clipped_count;
    // density of the pre-clip draw under the sampling distribution
    Vec y = mlp_forward(p, o);
    Vec mean = y.array().tanh();
    CHECK(s.log_prob == doctest::Approx(gaussian_log_prob(mean, log_std, s.sample)).epsilon(1e-9));
  }
  CHECK(clipped_count > 0);  // sigma ~0.6 in a unit box must clip sometimes
}

TEST_CASE("network artifact round-trips exactly") {
  MlpParams p = init_mlp(123, 30, {32, 32}, 6);
  p.input_offset = Vec::Constant(30, 1.25);
  p.input_scale = Vec::Constant(30, 0.5);
  Vec log_std = Vec::Constant(6, -0.5);
  nlohmann::json meta = {{"program", "tou"}, {"lookahead", 3}};
  std::string path = "net_roundtrip.json";
  save_mlp(path, p, log_std, meta);
  Vec ls2;
  nlohmann::json meta2;
  MlpParams q = load_mlp(path, &ls2, &meta2);
  REQUIRE(q.layer_count() == p.layer_count());
  for (int l = 0; l < p.layer_count(); ++l) {
    CHECK((q.weights[l] - p.weights[l]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((q.biases[l] - p.biases[l]).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK((q.input_offset - p.input_offset).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ls2 - log_std).cwiseAbs().maxCoeff() == 0.0);
  CHECK(meta2.at("program") == "tou");
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_mlp("missing_net.json"), std::runtime_error);
}
