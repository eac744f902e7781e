#include "hvacbench/controllers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace hvacbench {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

} // namespace

std::string controller_name(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::Rbc: return "rbc";
    case ControllerKind::Opt: return "opt";
    case ControllerKind::Mpc: return "mpc";
    case ControllerKind::MpcConvex: return "mpc-c";
    case ControllerKind::MpcConvexLearned: return "mpc-cl";
    case ControllerKind::Dpc: return "dpc";
    case ControllerKind::Rlc: return "rlc";
  }
  throw std::invalid_argument("controller_name: unknown kind");
}

ControllerKind controller_from_name(const std::string& name) {
  for (ControllerKind kind : {ControllerKind::Rbc, ControllerKind::Opt, ControllerKind::Mpc,
                              ControllerKind::MpcConvex, ControllerKind::MpcConvexLearned,
                              ControllerKind::Dpc, ControllerKind::Rlc})
    if (controller_name(kind) == name) return kind;
  throw std::invalid_argument("controller_from_name: unknown controller '" + name + "'");
}

void validate_terminal_table(const TerminalCostTable& table, int zones) {
  require(table.interval_hours > 0, "terminal table: nonpositive interval");
  double covered = table.interval_hours * static_cast<double>(table.theta.size());
  require(std::abs(covered - 24.0) < 1e-9, "terminal table: slots do not tile 24 h");
  for (const Vec& th : table.theta) {
    require(th.size() == zones, "terminal table: weight dimension mismatch");
    require(th.allFinite(), "terminal table: non-finite weight");
  }
}

int terminal_slot_at(const TerminalCostTable& table, double hour) {
  double wrapped = std::fmod(hour, 24.0);
  if (wrapped < 0) wrapped += 24.0;
  auto slot = static_cast<std::size_t>(wrapped / table.interval_hours);
  if (slot >= table.theta.size()) slot = table.theta.size() - 1;
  return static_cast<int>(slot);
}

const Vec& terminal_weights_at(const TerminalCostTable& table, double hour) {
  return table.theta[static_cast<std::size_t>(terminal_slot_at(table, hour))];
}

void save_terminal_table(const std::string& path, const TerminalCostTable& table) {
  nlohmann::json doc;
  doc["format"] = "hvacbench-terminal-v1";
  doc["interval_hours"] = table.interval_hours;
  auto slots = nlohmann::json::array();
  for (const Vec& th : table.theta) {
    auto row = nlohmann::json::array();
    for (int i = 0; i < th.size(); ++i) row.push_back(th(i));
    slots.push_back(std::move(row));
  }
  doc["theta"] = std::move(slots);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_terminal_table: cannot write " + path);
  out << doc.dump(2) << "\n";
}

TerminalCostTable load_terminal_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_terminal_table: cannot read " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_terminal_table: bad json in " + path + ": " + e.what());
  }
  if (doc.value("format", "") != "hvacbench-terminal-v1")
    throw std::runtime_error("load_terminal_table: unrecognized format in " + path);
  TerminalCostTable table;
  table.interval_hours = doc.at("interval_hours").get<double>();
  for (const auto& row : doc.at("theta")) {
    Vec th(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) th(static_cast<int>(i)) = row[i].get<double>();
    table.theta.push_back(std::move(th));
  }
  if (table.theta.empty()) throw std::runtime_error("load_terminal_table: empty table");
  return table;
}

void validate_spec(const ControllerSpec& spec, const ControllerContext& ctx) {
  require(spec.lookahead >= 1, "controller spec: lookahead must be positive");
  bool needs_policy = spec.kind == ControllerKind::Dpc || spec.kind == ControllerKind::Rlc;
  require(needs_policy == spec.policy.has_value(),
          needs_policy ? "controller spec: missing policy network"
                       : "controller spec: unexpected policy network");
  bool needs_table = spec.kind == ControllerKind::MpcConvexLearned;
  require(needs_table == spec.terminal.has_value(),
          needs_table ? "controller spec: missing terminal cost table"
                      : "controller spec: unexpected terminal cost table");
  if (spec.terminal) validate_terminal_table(*spec.terminal, ctx.building.zones);
  if (spec.policy)
    require(spec.policy->output_dim() == ctx.building.zones + 1,
            "controller spec: policy output does not match the action size");
  if (spec.kind == ControllerKind::Rbc) {
    require(spec.rbc.gain > 0, "controller spec: rule gain must be positive");
    require(spec.rbc.precool_setpoint.size() == 0 ||
                spec.rbc.precool_setpoint.size() == ctx.building.zones,
            "controller spec: precool setpoint dimension");
  }
}

std::pair<double, double> event_window(const TariffProgram& tariff, const HorizonConfig& h) {
  switch (tariff.kind) {
    case ProgramKind::Tou: return {tariff.peak_start, tariff.peak_end};
    case ProgramKind::Pc: return {tariff.event_start, tariff.event_end};
    case ProgramKind::Rtp: break;
  }
  // RTP: the stretch where the day-ahead curve sits in its upper half
  double lo = tariff.dap.minCoeff(), hi = tariff.dap.maxCoeff();
  double threshold = 0.5 * (lo + hi);
  int first = -1, last = -1;
  for (int t = 0; t < tariff.dap.size(); ++t)
    if (tariff.dap(t) >= threshold) {
      if (first < 0) first = t;
      last = t;
    }
  if (first < 0) return {0.0, 0.0};
  return {h.hour_at(first), h.hour_at(last + 1)};
}

ControlAction rbc_act(const RbcConfig& cfg, const ControllerContext& ctx, const Vec& temps,
                      const DayScenario& day, int t) {
  const int z = ctx.building.zones;
  double hour = ctx.horizon.hour_at(t);
  auto [event_start, event_end] = event_window(day.tariff, ctx.horizon);

  Vec setpoint(z);
  if (hour >= event_start && hour < event_end)
    setpoint.setConstant(cfg.event_setpoint);
  else if (hour >= cfg.precool_start && hour < event_start)
    setpoint = cfg.precool_setpoint.size() == z ? cfg.precool_setpoint
                                                : Vec::Constant(z, cfg.baseline_setpoint);
  else
    setpoint.setConstant(cfg.baseline_setpoint);

  ControlAction u;
  u.mdot = (cfg.gain * (temps - setpoint).cwiseMax(0.0))
               .cwiseMax(ctx.bounds.mdot_lo)
               .cwiseMin(ctx.bounds.mdot_hi);
  bool cooling = ((temps - setpoint).array() > 0.0).any();
  u.t_supply = cooling ? ctx.bounds.tsupply_lo : ctx.bounds.tsupply_hi;
  return u;
}

namespace {

double rule_day_cost(const RbcConfig& cfg, const ControllerContext& ctx, const DayScenario& day) {
  Vec x = day.initial_temps;
  double total = 0;
  int n = ctx.horizon.steps_per_day;
  for (int t = 0; t < n; ++t) {
    ControlAction u = rbc_act(cfg, ctx, x, day, t);
    total += step_cost(ctx.cost, ctx.power, price_at(day.tariff, ctx.horizon, t),
                       day.comfort.lo(t), day.comfort.hi(t),
                       power_limit_at(day.tariff, ctx.horizon, t), x, u,
                       day.weather[static_cast<std::size_t>(t)].t_out);
    x = step_dynamics(ctx.building, x, u, day.weather[static_cast<std::size_t>(t)]);
  }
  return total;
}

} // namespace

RbcConfig rbc_grid_search(const ControllerContext& ctx, const std::vector<DayScenario>& train) {
  require(!train.empty(), "rbc_grid_search: no training days");
  const double precool_starts[] = {9.0, 10.0, 11.0};
  const double precool_sps[] = {20.5, 21.5, 22.5};
  const double event_sps[] = {24.0, 24.4};
  const double baselines[] = {23.0, 24.0};
  const double gains[] = {0.5, 1.0, 2.0};

  RbcConfig best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (double start : precool_starts)
    for (double pre : precool_sps)
      for (double event : event_sps)
        for (double base : baselines)
          for (double gain : gains) {
            RbcConfig cfg;
            cfg.precool_start = start;
            cfg.precool_setpoint = Vec::Constant(ctx.building.zones, pre);
            cfg.event_setpoint = event;
            cfg.baseline_setpoint = base;
            cfg.gain = gain;
            double mean = 0;
            for (const DayScenario& day : train) mean += rule_day_cost(cfg, ctx, day);
            mean /= static_cast<double>(train.size());
            if (mean < best_cost) {  // strict: ties keep the earliest precool start
              best_cost = mean;
              best = cfg;
            }
          }
  return best;
}

TrajectoryProblem lookahead_problem(const ControllerContext& ctx, const DayScenario& day, int t,
                                    int lookahead, bool convex, const ControlAction& op_action,
                                    const Vec& temps, const Vec* terminal) {
  require(t >= 0 && t < ctx.horizon.steps_per_day, "lookahead_problem: step out of range");
  require(lookahead >= 1, "lookahead_problem: empty horizon");
  const int n = ctx.horizon.steps_per_day;
  TrajectoryProblem p;
  p.steps = lookahead;
  p.power = ctx.power;
  p.cost = ctx.cost;
  p.bounds = ctx.bounds;
  p.initial_temps = temps;
  p.price = Vec(lookahead);
  p.comfort_lo = Vec(lookahead);
  p.comfort_hi = Vec(lookahead);
  bool limited = day.tariff.kind == ProgramKind::Pc;
  if (limited) p.power_limit = Vec(lookahead);
  for (int i = 0; i < lookahead; ++i) {
    int idx = std::min(t + i, n - 1);  // hold the day's last conditions past its end
    p.w.push_back(day.weather[static_cast<std::size_t>(idx)]);
    p.price(i) = planning_price_at(day.tariff, ctx.horizon, idx);
    p.comfort_lo(i) = day.comfort.lo(idx);
    p.comfort_hi(i) = day.comfort.hi(idx);
    if (limited) (*p.power_limit)(i) = *power_limit_at(day.tariff, ctx.horizon, idx);
  }
  if (terminal) p.terminal_cost = *terminal;
  if (convex)
    p.plant = linearize(ctx.building, ctx.power, temps, op_action, lookahead);
  else
    p.plant = ctx.building;
  return p;
}

namespace {

Vec tiled_action(const ControlAction& u, int steps) {
  Vec one = action_to_vec(u);
  Vec out(one.size() * steps);
  for (int k = 0; k < steps; ++k) out.segment(k * one.size(), one.size()) = one;
  return out;
}

} // namespace

Vec opt_plan(const ControllerContext& ctx, const DayScenario& day, const SolveOptions& opts,
             SolveReport* report) {
  const int n = ctx.horizon.steps_per_day;
  ControlAction mid = ctx.bounds.midpoint();
  TrajectoryProblem p =
      lookahead_problem(ctx, day, 0, n, false, mid, day.initial_temps, nullptr);
  // the open-loop baseline is billed and planned on realized prices
  for (int t = 0; t < n; ++t) p.price(t) = price_at(day.tariff, ctx.horizon, t);

  std::vector<Vec> starts;
  starts.push_back(tiled_action(mid, n));
  Rng rng(derive_seed(derive_seed(0x9e37u, day.label), "opt-start"));
  Vec lo = p.bounds.lower(), hi = p.bounds.upper();
  Vec random_start(p.decision_dim());
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < p.action_dim(); ++i)
      random_start(k * p.action_dim() + i) = rng.uniform(lo(i), hi(i));
  starts.push_back(random_start);
  ControlAction strong;  // cool hard: half-range flows, coldest supply air
  strong.mdot = 0.5 * (ctx.bounds.mdot_lo + ctx.bounds.mdot_hi);
  strong.t_supply = ctx.bounds.tsupply_lo;
  starts.push_back(tiled_action(strong, n));

  Vec best;
  SolveReport best_report;
  bool have = false;
  for (const Vec& start : starts) {
    SolveReport rep;
    Vec solution = solve_projected(p, start, opts, &rep);
    if (!have || rep.objective < best_report.objective) {
      best = solution;
      best_report = rep;
      have = true;
    }
  }
  if (report) *report = best_report;
  return best;
}

ControlAction mpc_act(const ControllerSpec& spec, const ControllerContext& ctx,
                      ControllerState& state, const Vec& temps, const DayScenario& day, int t,
                      MpcStepDetail* detail) {
  const int k = spec.lookahead;
  const int ad = ctx.building.zones + 1;
  ControlAction op = state.has_previous ? state.previous : ctx.bounds.midpoint();
  bool convex = spec.kind == ControllerKind::MpcConvex ||
                spec.kind == ControllerKind::MpcConvexLearned;
  const Vec* terminal = nullptr;
  Vec theta;
  if (spec.kind == ControllerKind::MpcConvexLearned) {
    theta = terminal_weights_at(*spec.terminal, ctx.horizon.hour_at(t + k));
    terminal = &theta;
  }

  Vec warm;
  if (state.has_plan && state.plan.size() == static_cast<Eigen::Index>(k) * ad) {
    warm = state.plan;  // shift one step, repeat the tail action
    warm.head((k - 1) * ad) = state.plan.tail((k - 1) * ad);
  } else {
    warm = tiled_action(ctx.bounds.midpoint(), k);
  }

  TrajectoryProblem p = lookahead_problem(ctx, day, t, k, convex, op, temps, terminal);
  if (detail) {
    detail->problem = p;
    detail->solved = false;
  }
  Vec solution;
  SolveReport rep;
  try {
    solution = solve_projected(p, warm, spec.solve, &rep);
  } catch (const std::runtime_error&) {
    ++state.solve_failures;  // keep flying on the previous action
    return state.has_previous ? state.previous : ctx.bounds.midpoint();
  }
  if (!rep.converged && rep.iterations >= spec.solve.max_iters) ++state.stale_solves;
  state.plan = solution;
  state.has_plan = true;
  if (detail) {
    detail->solution = solution;
    detail->solved = true;
  }
  return vec_to_action(solution.head(ad));
}

ControlAction act(const ControllerSpec& spec, const ControllerContext& ctx, ControllerState& state,
                  const Vec& temps, const DayScenario& day, int t, double* seconds) {
  require(t >= 0 && t < ctx.horizon.steps_per_day, "act: step out of range");
  validate_spec(spec, ctx);
  double t0 = wall_seconds();
  ControlAction u;
  switch (spec.kind) {
    case ControllerKind::Rbc:
      u = rbc_act(spec.rbc, ctx, temps, day, t);
      break;
    case ControllerKind::Opt: {
      if (!state.has_plan) {
        state.plan = opt_plan(ctx, day, spec.day_solve);
        state.has_plan = true;
      }
      int ad = ctx.building.zones + 1;
      u = vec_to_action(state.plan.segment(t * ad, ad));
      break;
    }
    case ControllerKind::Mpc:
    case ControllerKind::MpcConvex:
    case ControllerKind::MpcConvexLearned:
      u = mpc_act(spec, ctx, state, temps, day, t);
      break;
    case ControllerKind::Dpc:
    case ControllerKind::Rlc: {
      HorizonConfig h = ctx.horizon;
      h.lookahead = spec.lookahead;
      u = policy_act(*spec.policy, make_observation(day, h, temps, t), ctx.bounds);
      break;
    }
  }
  u = ctx.bounds.clamp(u);
  state.previous = u;
  state.has_previous = true;
  if (seconds) *seconds = wall_seconds() - t0;
  return u;
}

} // namespace hvacbench
