// the seven control strategies behind one act() interface
#ifndef HVACBENCH_CONTROLLERS_HPP
#define HVACBENCH_CONTROLLERS_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hvacbench/net.hpp"
#include "hvacbench/scenario.hpp"
#include "hvacbench/trajopt.hpp"

namespace hvacbench {

enum class ControllerKind { Rbc, Opt, Mpc, MpcConvex, MpcConvexLearned, Dpc, Rlc };

std::string controller_name(ControllerKind kind);
ControllerKind controller_from_name(const std::string& name);

// hourly linear state weights appended past the planning horizon
struct TerminalCostTable {
  std::vector<Vec> theta;       // one vector per hour of day
  double interval_hours = 1.0;  // theta slots tile 24 h
};

void validate_terminal_table(const TerminalCostTable& table, int zones);
void save_terminal_table(const std::string& path, const TerminalCostTable& table);
TerminalCostTable load_terminal_table(const std::string& path);
// slot index / weight vector for the hour containing the given absolute hour
// (wraps at 24)
int terminal_slot_at(const TerminalCostTable& table, double hour);
const Vec& terminal_weights_at(const TerminalCostTable& table, double hour);

// setpoint rules: precool before the event window, relax during it
struct RbcConfig {
  double precool_start = 10.0;  // hour of day
  Vec precool_setpoint;         // per zone, degC
  double event_setpoint = 24.4;
  double baseline_setpoint = 23.0;
  double gain = 1.0;            // kg/s of flow per degC of setpoint error
};

struct ControllerSpec {
  ControllerKind kind = ControllerKind::Rbc;
  int lookahead = 12;                        // K, steps
  std::optional<MlpParams> policy;           // DPC / RLC
  std::optional<TerminalCostTable> terminal; // MPC-CL
  RbcConfig rbc;
  SolveOptions solve;        // receding-horizon solves
  SolveOptions day_solve;    // the full-day open-loop solve
  ControllerSpec() { day_solve.max_iters = 5000; }
};

// fixed per evaluation run
struct ControllerContext {
  BuildingModel building;
  ActionBounds bounds;
  PowerParams power;
  CostParams cost;
  HorizonConfig horizon;
};

// mutable across one closed-loop episode
struct ControllerState {
  Vec plan;              // opt: the full day; mpc: warm start for the next solve
  bool has_plan = false;
  ControlAction previous;
  bool has_previous = false;
  int solve_failures = 0;
  int stale_solves = 0;  // receding solves that hit the iteration cap
};

void validate_spec(const ControllerSpec& spec, const ControllerContext& ctx);

// event window in hours for the scenario's program: the TOU peak, the PC
// limit event, or the top day-ahead-price stretch for RTP
std::pair<double, double> event_window(const TariffProgram& tariff, const HorizonConfig& h);

ControlAction rbc_act(const RbcConfig& cfg, const ControllerContext& ctx, const Vec& temps,
                      const DayScenario& day, int t);

// mean-train-cost search over the built-in rule grid; ties pick the earliest
// precool start under the fixed enumeration order
RbcConfig rbc_grid_search(const ControllerContext& ctx, const std::vector<DayScenario>& train);

// the K-step planning problem seen from step t: padded forecasts, planning
// prices, optionally a convex plant relinearized at (temps, op_action) and an
// hourly terminal weight for the horizon end
TrajectoryProblem lookahead_problem(const ControllerContext& ctx, const DayScenario& day, int t,
                                    int lookahead, bool convex, const ControlAction& op_action,
                                    const Vec& temps, const Vec* terminal);

// full-day open-loop plan, multi-start (midpoint, seeded interior, strong cooling)
Vec opt_plan(const ControllerContext& ctx, const DayScenario& day, const SolveOptions& opts,
             SolveReport* report = nullptr);

// solved planning problem behind one mpc action, for callers that
// differentiate through the solve
struct MpcStepDetail {
  TrajectoryProblem problem;
  Vec solution;
  bool solved = false; // false when the solver threw and a fallback was used
};

ControlAction mpc_act(const ControllerSpec& spec, const ControllerContext& ctx,
                      ControllerState& state, const Vec& temps, const DayScenario& day, int t,
                      MpcStepDetail* detail = nullptr);

// dispatch by kind; seconds receives the wall time of the kind-specific work
ControlAction act(const ControllerSpec& spec, const ControllerContext& ctx, ControllerState& state,
                  const Vec& temps, const DayScenario& day, int t, double* seconds = nullptr);

} // namespace hvacbench

#endif
