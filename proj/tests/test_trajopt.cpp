#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "hvacbench/trajopt.hpp"
#include "support.hpp"

using namespace hvacbench;
using testsupport::toy_building;

namespace {

// toy single-zone day slice: hand-checkable numbers throughout
TrajectoryProblem toy_problem(int steps) {
  TrajectoryProblem p;
  p.plant = toy_building();
  p.steps = steps;
  p.initial_temps = Vec::Constant(1, 25.3);
  ExogenousInput w;
  w.t_out = 30.0;
  w.q_solar = Vec::Constant(1, 400.0);
  p.w.assign(static_cast<std::size_t>(steps), w);
  p.price = Vec::Zero(steps);
  p.comfort_lo = Vec::Constant(steps, 20.0);
  p.comfort_hi = Vec::Constant(steps, 24.5);
  p.bounds.mdot_lo = Vec::Constant(1, 0.22);
  p.bounds.mdot_hi = Vec::Constant(1, 2.2);
  p.bounds.tsupply_lo = 10.0;
  p.bounds.tsupply_hi = 16.0;
  return p;
}

Vec constant_plan(int steps, int zones, double mdot, double tsup) {
  std::vector<ControlAction> seq(static_cast<std::size_t>(steps));
  for (auto& u : seq) {
    u.mdot = Vec::Constant(zones, mdot);
    u.t_supply = tsup;
  }
  return pack_actions(seq);
}

// richer multi-zone instance for derivative checks
TrajectoryProblem synth_problem(bool convex_plant, bool with_limit, bool with_terminal) {
  BuildingModel building = synth_building(11, 3);
  TrajectoryProblem p;
  p.steps = 4;
  p.cost = CostParams{};
  p.power = PowerParams{};
  p.bounds = default_bounds(3);
  p.initial_temps = Vec(3);
  p.initial_temps << 24.7, 22.1, 26.3;
  for (int k = 0; k < p.steps; ++k) {
    ExogenousInput w;
    w.t_out = 28.0 + 1.5 * k;
    w.q_solar = Vec(3);
    w.q_solar << 0.5 + 0.1 * k, 0.25, 0.8 - 0.05 * k;
    p.w.push_back(w);
  }
  p.price = Vec(4);
  p.price << 1.0, 10.0, 10.0, 1.0;
  p.comfort_lo = Vec::Constant(4, 21.0);
  p.comfort_hi = Vec::Constant(4, 23.0);
  if (with_limit) p.power_limit = Vec::Constant(4, 12.0);
  if (with_terminal) {
    p.terminal_cost = Vec(3);
    p.terminal_cost << 0.3, -0.2, 0.5;
  }
  if (convex_plant) {
    ControlAction op;
    op.mdot = 0.5 * (p.bounds.mdot_lo + p.bounds.mdot_hi);
    op.t_supply = 13.0;
    p.plant = linearize(building, p.power, Vec::Constant(3, 23.0), op, p.steps);
  } else {
    p.plant = building;
  }
  return p;
}

Vec interior_point(const TrajectoryProblem& p, std::uint64_t seed) {
  Rng rng(seed);
  Vec lo(p.action_dim()), hi(p.action_dim());
  lo << p.bounds.mdot_lo, p.bounds.tsupply_lo;
  hi << p.bounds.mdot_hi, p.bounds.tsupply_hi;
  Vec u(p.decision_dim());
  for (int k = 0; k < p.steps; ++k)
    for (int i = 0; i < p.action_dim(); ++i)
      u(k * p.action_dim() + i) = lo(i) + (0.1 + 0.8 * rng.uniform()) * (hi(i) - lo(i));
  return u;
}

void check_gradient(const TrajectoryProblem& p, const Vec& u, double tol) {
  Vec analytic = rollout_grad(p, u);
  for (int i = 0; i < u.size(); ++i) {
    double h = 1e-5 * std::max(1.0, std::abs(u(i)));
    Vec up = u, um = u;
    up(i) += h;
    um(i) -= h;
    double fd = (rollout_cost(p, up) - rollout_cost(p, um)) / (2.0 * h);
    CAPTURE(i);
    CHECK(std::abs(analytic(i) - fd) <= tol * std::max(1.0, std::abs(fd)));
  }
}

} // namespace

TEST_CASE("action packing round-trips and rejects ragged input") {
  std::vector<ControlAction> seq(3);
  Rng rng(5);
  for (auto& u : seq) {
    u.mdot = Vec::NullaryExpr(4, [&](Eigen::Index) { return rng.uniform(0.2, 3.0); });
    u.t_supply = rng.uniform(10.0, 16.0);
  }
  Vec packed = pack_actions(seq);
  REQUIRE(packed.size() == 15);
  CHECK(packed(4) == seq[0].t_supply);
  CHECK(packed(5) == seq[1].mdot(0));
  auto back = unpack_actions(packed, 4);
  REQUIRE(back.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(back[static_cast<std::size_t>(k)].mdot == seq[static_cast<std::size_t>(k)].mdot);
    CHECK(back[static_cast<std::size_t>(k)].t_supply == seq[static_cast<std::size_t>(k)].t_supply);
  }
  CHECK_THROWS_AS(unpack_actions(Vec::Zero(7), 4), std::invalid_argument);
}

TEST_CASE("rollout cost matches the hand-computed toy trajectory") {
  // x0 = 25.3, each step: x' = 0.9 x + 0.1 (13 - x) + 0.7
  // states 25.3 -> 22.24 -> 19.792, band [20, 24.5], weight 20, zero price:
  // 20*(0.8^2) + 0 + 20*(0.208^2) = 12.8 + 0.86528
  TrajectoryProblem p = toy_problem(3);
  Vec u = constant_plan(3, 1, 1.0, 13.0);
  std::vector<Vec> temps;
  double cost = rollout_cost(p, u, &temps);
  CHECK(cost == doctest::Approx(13.66528).epsilon(1e-12));
  REQUIRE(temps.size() == 4);
  CHECK(temps[1](0) == doctest::Approx(22.24).epsilon(1e-12));
  CHECK(temps[2](0) == doctest::Approx(19.792).epsilon(1e-12));

  SUBCASE("energy term adds price * power * hours") {
    p.price = Vec::Constant(3, 6.0);
    PowerBreakdown pb = total_power(p.power, unpack_actions(u, 1)[0], 30.0);
    double expect = 13.66528 + 3.0 * 6.0 * pb.total / 12.0;
    CHECK(rollout_cost(p, u) == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("terminal weights dot the final state") {
    // one more step past 19.792: 0.9 * 19.792 + 0.1 * (13 - 19.792) + 0.7
    p.terminal_cost = Vec::Constant(1, 2.5);
    CHECK(rollout_cost(p, u) == doctest::Approx(13.66528 + 2.5 * 17.8336).epsilon(1e-12));
  }
}

TEST_CASE("rollout gradient matches central differences on the bilinear plant") {
  TrajectoryProblem p = synth_problem(false, false, false);
  check_gradient(p, interior_point(p, 21), 1e-6);

  SUBCASE("with terminal weights") {
    p.terminal_cost = Vec(3);
    p.terminal_cost << 0.3, -0.2, 0.5;
    check_gradient(p, interior_point(p, 22), 1e-6);
  }
  SUBCASE("with a binding power limit") {
    p.power_limit = Vec::Constant(4, 10.0);
    check_gradient(p, interior_point(p, 23), 1e-6);
  }
}

TEST_CASE("rollout gradient matches central differences on the linearized plant") {
  TrajectoryProblem p = synth_problem(true, true, true);
  REQUIRE(p.convex());
  check_gradient(p, interior_point(p, 31), 1e-6);
  check_gradient(p, interior_point(p, 32), 1e-6);
}

TEST_CASE("rollout rejects malformed problems and diverging states") {
  TrajectoryProblem p = toy_problem(3);
  SUBCASE("price length") {
    p.price = Vec::Zero(2);
    CHECK_THROWS_AS(validate_problem(p), std::invalid_argument);
  }
  SUBCASE("negative price") {
    p.price(1) = -0.5;
    CHECK_THROWS_AS(validate_problem(p), std::invalid_argument);
  }
  SUBCASE("decision length") {
    CHECK_THROWS_AS(rollout_cost(p, Vec::Zero(5)), std::invalid_argument);
  }
  SUBCASE("non-finite state") {
    BuildingModel unstable = toy_building();
    unstable.A = Mat::Constant(1, 1, 1e160);
    p.plant = unstable;
    p.comfort_lo = Vec::Constant(3, -1e308);
    p.comfort_hi = Vec::Constant(3, 1e308);
    CHECK_THROWS_AS(rollout_cost(p, constant_plan(3, 1, 1.0, 13.0)),
                    std::runtime_error);
  }
}

namespace {

// independent closed-form objective for the 2-step convexified toy.
// linearizing the toy at (m0 = 1, ts0 = 13, T0 = 24) gives
//   x' = (0.9 - 0.1) x - 1.1 m + 0.1 ts + 1.1 + G w,  G w = 0.7
// and affine chiller power (17/3) m - (1/3)(ts - 13).
double toy2_closed_form(double m0, double ts0, double m1, double ts1) {
  auto bd = [](double x) {
    double lo = std::max(0.0, 20.0 - x), hi = std::max(0.0, x - 24.5);
    return (lo + hi) * (lo + hi);
  };
  auto power = [](double m, double ts) {
    return 17.0 / 3.0 * m - (ts - 13.0) / 3.0 + 0.0076 * m * m * m + 4.8865;
  };
  double x1 = 0.8 * 25.3 - 1.1 * m0 + 0.1 * ts0 + 1.8;
  double cost = 2.0 / 12.0 * (power(m0, ts0) + power(m1, ts1));
  return cost + 20.0 * (bd(25.3) + bd(x1));
}

TrajectoryProblem toy2_convex() {
  TrajectoryProblem p = toy_problem(2);
  ControlAction op;
  op.mdot = Vec::Constant(1, 1.0);
  op.t_supply = 13.0;
  p.plant = linearize(toy_building(), p.power, Vec::Constant(1, 24.0), op, 2);
  p.price = Vec::Constant(2, 2.0);
  return p;
}

} // namespace

TEST_CASE("projected solver matches a dense grid search on the convexified toy") {
  TrajectoryProblem p = toy2_convex();

  // cross-check the closed form against the library rollout first
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    double m0 = rng.uniform(0.22, 2.2), ts0 = rng.uniform(10.0, 16.0);
    double m1 = rng.uniform(0.22, 2.2), ts1 = rng.uniform(10.0, 16.0);
    Vec u(4);
    u << m0, ts0, m1, ts1;
    CHECK(rollout_cost(p, u) ==
          doctest::Approx(toy2_closed_form(m0, ts0, m1, ts1)).epsilon(1e-12));
  }

  const int n = 51;
  auto mdot_at = [&](int i) { return 0.22 + (2.2 - 0.22) * i / (n - 1); };
  auto tsup_at = [&](int i) { return 10.0 + 6.0 * i / (n - 1); };
  double best = 1e300;
  int bi = 0, bj = 0, bk = 0, bl = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) {
          double c = toy2_closed_form(mdot_at(i), tsup_at(j), mdot_at(k), tsup_at(l));
          if (c < best) {
            best = c;
            bi = i; bj = j; bk = k; bl = l;
          }
        }

  // second-step action carries no comfort consequence, so the energy term
  // drives it to the cheap corner of the box
  CHECK(bk == 0);
  CHECK(bl == n - 1);

  // objective variation across one grid cell around the winner
  double cell = 0.0;
  int at[4] = {bi, bj, bk, bl};
  for (int d = 0; d < 4; ++d)
    for (int dir = -1; dir <= 1; dir += 2) {
      int moved[4] = {at[0], at[1], at[2], at[3]};
      moved[d] += dir;
      if (moved[d] < 0 || moved[d] >= n) continue;
      double c = toy2_closed_form(mdot_at(moved[0]), tsup_at(moved[1]), mdot_at(moved[2]),
                                  tsup_at(moved[3]));
      cell = std::max(cell, std::abs(c - best));
    }

  SolveOptions opts;
  opts.max_iters = 5000;
  opts.tol = 1e-8;
  SolveReport report;
  Vec u0 = constant_plan(2, 1, 1.0, 13.0);
  Vec solution = solve_projected(p, u0, opts, &report);
  REQUIRE(report.converged);
  CHECK(report.objective <= best + 1e-7);
  CHECK(report.objective >= best - cell);
  CHECK(rollout_cost(p, solution) == report.objective);
  CHECK(solution(2) == 0.22);
  CHECK(solution(3) == 16.0);

  SUBCASE("a different start lands on the same objective") {
    Vec u1 = constant_plan(2, 1, 2.1, 15.5);
    SolveReport report2;
    solve_projected(p, u1, opts, &report2);
    REQUIRE(report2.converged);
    CHECK(std::abs(report2.objective - report.objective) <= 1e-5 * std::abs(report.objective));
  }

  SUBCASE("re-solving from the solution is a no-op") {
    SolveReport again;
    Vec resolved = solve_projected(p, solution, opts, &again);
    CHECK(again.iterations == 0);
    CHECK(again.converged);
    CHECK(resolved == solution);
  }
}

TEST_CASE("projected solver descends on the bilinear plant and respects bounds") {
  TrajectoryProblem p = synth_problem(false, true, false);
  Vec u0 = constant_plan(p.steps, 3, 1.0, 13.0);
  u0 = pack_actions(unpack_actions(u0, 3));  // keep layout explicit
  double f0 = rollout_cost(p, u0);
  SolveOptions opts;
  SolveReport report;
  Vec solution = solve_projected(p, u0, opts, &report);
  CHECK(report.objective < f0);
  CHECK(report.objective == rollout_cost(p, solution));
  CHECK(report.iterations >= 1);
  CHECK(report.seconds >= 0.0);
  Vec lo(p.action_dim()), hi(p.action_dim());
  lo << p.bounds.mdot_lo, p.bounds.tsupply_lo;
  hi << p.bounds.mdot_hi, p.bounds.tsupply_hi;
  for (int k = 0; k < p.steps; ++k)
    for (int i = 0; i < p.action_dim(); ++i) {
      CHECK(solution(k * p.action_dim() + i) >= lo(i) - 1e-15);
      CHECK(solution(k * p.action_dim() + i) <= hi(i) + 1e-15);
    }
}

namespace {

// convex sensitivity instance: mild band pressure keeps the optimum interior
TrajectoryProblem sensitivity_problem(bool with_limit) {
  BuildingModel building = synth_building(7, 2);
  TrajectoryProblem p;
  p.steps = 3;
  p.bounds = default_bounds(2);
  ControlAction op;
  op.mdot = 0.5 * (p.bounds.mdot_lo + p.bounds.mdot_hi);
  op.t_supply = 13.0;
  p.plant = linearize(building, p.power, Vec::Constant(2, 23.0), op, p.steps);
  p.initial_temps = Vec(2);
  p.initial_temps << 26.4, 26.6;
  for (int k = 0; k < p.steps; ++k) {
    ExogenousInput w;
    w.t_out = 32.0;
    w.q_solar = Vec(2);
    w.q_solar << 0.9 - 0.1 * k, 0.5;
    p.w.push_back(w);
  }
  p.price = Vec::Constant(3, 2.0);
  p.comfort_lo = Vec::Constant(3, 20.0);
  p.comfort_hi = Vec::Constant(3, 26.2);
  if (with_limit) p.power_limit = Vec::Constant(3, 9.0);
  p.terminal_cost = Vec(2);
  p.terminal_cost << 0.4, 0.7;
  return p;
}

// run to the acceptance floor of the monotone solver; the projected-gradient
// residual it lands on is plenty for central differences at delta = 5e-3
Vec tight_solve(const TrajectoryProblem& p, const Vec& init) {
  SolveOptions opts;
  opts.max_iters = 60000;
  opts.tol = 1e-10;
  SolveReport report;
  Vec u = solve_projected(p, init, opts, &report);
  REQUIRE(report.residual < 1e-5);
  return u;
}

} // namespace

TEST_CASE("first-action sensitivities match finite differences of the re-solved optimum") {
  for (bool with_limit : {false, true}) {
    CAPTURE(with_limit);
    TrajectoryProblem p = sensitivity_problem(with_limit);
    int ad = p.action_dim();
    int z = p.zones();
    Vec u_star = tight_solve(p, constant_plan(p.steps, z, 1.0, 13.0));
    FirstActionSensitivity sens = first_action_sensitivity(p, u_star);
    REQUIRE(sens.d_terminal.rows() == ad);
    REQUIRE(sens.d_terminal.cols() == z);
    CHECK_FALSE(sens.regularized);
    CHECK(sens.d_terminal.cwiseAbs().maxCoeff() > 0.0);

    double delta = 5e-3;
    for (int j = 0; j < z; ++j) {
      TrajectoryProblem pp = p, pm = p;
      pp.terminal_cost(j) += delta;
      pm.terminal_cost(j) -= delta;
      Vec up = tight_solve(pp, u_star);
      Vec um = tight_solve(pm, u_star);
      for (int i = 0; i < ad; ++i) {
        double fd = (up(i) - um(i)) / (2.0 * delta);
        CAPTURE(j);
        CAPTURE(i);
        CHECK(std::abs(sens.d_terminal(i, j) - fd) <= 5e-4 + 1e-3 * std::abs(fd));
      }
    }
    for (int j = 0; j < z; ++j) {
      TrajectoryProblem pp = p, pm = p;
      pp.initial_temps(j) += delta;
      pm.initial_temps(j) -= delta;
      Vec up = tight_solve(pp, u_star);
      Vec um = tight_solve(pm, u_star);
      for (int i = 0; i < ad; ++i) {
        double fd = (up(i) - um(i)) / (2.0 * delta);
        CAPTURE(j);
        CAPTURE(i);
        CHECK(std::abs(sens.d_state(i, j) - fd) <= 5e-4 + 1e-3 * std::abs(fd));
      }
    }
  }
}

TEST_CASE("saturated optima report zero first-action sensitivity") {
  TrajectoryProblem p = sensitivity_problem(false);
  p.initial_temps << 29.5, 29.8;
  p.comfort_hi = Vec::Constant(3, 22.0);
  p.price = Vec::Constant(3, 0.05);
  Vec u_star = tight_solve(p, constant_plan(p.steps, 2, 1.0, 13.0));
  // max cooling everywhere: flows pinned high, supply pinned low
  CHECK(u_star(0) == p.bounds.mdot_hi(0));
  CHECK(u_star(2) == p.bounds.tsupply_lo);
  FirstActionSensitivity sens = first_action_sensitivity(p, u_star);
  CHECK(sens.d_terminal.cwiseAbs().maxCoeff() == 0.0);
  CHECK(sens.d_state.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sensitivity rejects bilinear plants") {
  TrajectoryProblem p = toy_problem(2);
  CHECK_THROWS_AS(first_action_sensitivity(p, constant_plan(2, 1, 1.0, 13.0)),
                  std::invalid_argument);
}
