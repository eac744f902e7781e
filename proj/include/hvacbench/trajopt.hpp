// finite-horizon control problems over the thermal plant: rollout costs, exact
// adjoint gradients, projected first-order solver, first-action sensitivities
#ifndef HVACBENCH_TRAJOPT_HPP
#define HVACBENCH_TRAJOPT_HPP

#include <optional>
#include <variant>
#include <vector>

#include "hvacbench/thermal.hpp"

namespace hvacbench {

// decision vector layout: step-major [mdot_0, tsup_0, mdot_1, tsup_1, ...]
struct TrajectoryProblem {
  std::variant<BuildingModel, LinearizedModel> plant;
  PowerParams power;
  CostParams cost;
  int steps = 0;
  Vec initial_temps;
  std::vector<ExogenousInput> w;
  Vec price;
  Vec comfort_lo, comfort_hi;      // per-step scalars
  std::optional<Vec> power_limit;  // per-step caps when present
  ActionBounds bounds;
  Vec terminal_cost;               // linear weights on the final state; empty = none

  bool convex() const { return std::holds_alternative<LinearizedModel>(plant); }
  int zones() const { return static_cast<int>(initial_temps.size()); }
  int action_dim() const { return zones() + 1; }
  int decision_dim() const { return steps * action_dim(); }
};

void validate_problem(const TrajectoryProblem& p);

Vec pack_actions(const std::vector<ControlAction>& seq);
std::vector<ControlAction> unpack_actions(const Vec& u_seq, int zones);

// total cost of simulating u_seq; optionally returns the visited states
// (steps + 1 entries).  throws on non-finite states.
double rollout_cost(const TrajectoryProblem& p, const Vec& u_seq,
                    std::vector<Vec>* temps_out = nullptr);

// exact gradient d cost / d u_seq via one adjoint sweep; hinge subgradients
// are zero at their kinks
Vec rollout_grad(const TrajectoryProblem& p, const Vec& u_seq, double* cost_out = nullptr);

struct SolveOptions {
  int max_iters = 500;
  double tol = 1e-6;
  double lr = 0.08;  // step scale in box-normalized coordinates
};

struct SolveReport {
  double objective = 0;
  double residual = 0;
  int iterations = 0;
  bool converged = false;
  double seconds = 0;
};

// projected first-order descent with adaptive steps; the objective is
// non-increasing across accepted iterates; terminates when the projected
// gradient residual drops below tol
Vec solve_projected(const TrajectoryProblem& p, const Vec& u_init, const SolveOptions& opts,
                    SolveReport* report = nullptr);

struct FirstActionSensitivity {
  Mat d_terminal;  // action_dim x zones: d u0* / d terminal weights
  Mat d_state;     // action_dim x zones: d u0* / d initial temperatures
  bool regularized = false;  // the reduced system needed epsilon regularization
};

// implicit differentiation of the box-constrained optimum of a convex
// (linearized-plant) problem; active coordinates have zero sensitivity
FirstActionSensitivity first_action_sensitivity(const TrajectoryProblem& p, const Vec& u_star);

} // namespace hvacbench

#endif
