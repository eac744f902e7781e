// multi-zone bilinear thermal plant: dynamics, hvac power, step cost, linearization
#ifndef HVACBENCH_THERMAL_HPP
#define HVACBENCH_THERMAL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hvacbench/common.hpp"

namespace hvacbench {

// T(t+1) = A T + B diag(mdot) (1 t_supply - T) + G w, w = [t_out; per-zone solar]
struct BuildingModel {
  int zones = 0;
  Mat A;          // zones x zones, spectral radius < 1
  Mat B;          // zones x zones, positive diagonal
  Mat G;          // zones x (zones + 1), col 0 outdoor temp, cols 1.. solar
  Mat state_map;  // zones x zones invertible; identity unless stated otherwise
};

struct ControlAction {
  Vec mdot;             // kg/s per zone
  double t_supply = 0;  // degC
};

struct ActionBounds {
  Vec mdot_lo, mdot_hi;
  double tsupply_lo = 0, tsupply_hi = 0;

  int dim() const { return static_cast<int>(mdot_lo.size()) + 1; }
  Vec lower() const;  // flattened [mdot..., t_supply]
  Vec upper() const;
  ControlAction clamp(const ControlAction& u) const;
  ControlAction midpoint() const;
};

struct ExogenousInput {
  double t_out = 0;  // degC
  Vec q_solar;       // kW per zone

  Vec stacked() const;  // [t_out; q_solar]
};

struct PowerParams {
  double cop = 3.0;
  double fan_cubic = 0.0076;  // kW per (kg/s)^3
  double fan_idle = 4.8865;   // kW
};

// per-step temperature bounds over one day
struct ComfortSchedule {
  Vec lo, hi;
};

struct CostParams {
  double comfort_weight = 20.0;      // per degC^2 per zone per step
  double limit_weight = 10.0;        // per kW^2 per step, power-limit overruns
  double hours_per_step = 1.0 / 12;  // 5-minute steps
};

struct PowerBreakdown {
  double chiller = 0, fan = 0, total = 0;
};

// squared one-sided band violation: [max(0, lo-x) + max(0, x-hi)]^2
double band_deviation(double x, double lo, double hi);
// d band_deviation / dx; 0 inside the band and at the kinks
double band_deviation_grad(double x, double lo, double hi);

Vec step_dynamics(const BuildingModel& model, const Vec& temps,
                  const ControlAction& u, const ExogenousInput& w);

PowerBreakdown total_power(const PowerParams& pp, const ControlAction& u, double t_out);

struct StepCostTerms {
  double energy = 0, comfort = 0, limit = 0;
  double total() const { return energy + comfort + limit; }
};

StepCostTerms step_cost_terms(const CostParams& cp, const PowerParams& pp, double price,
                              double comfort_lo, double comfort_hi,
                              std::optional<double> power_limit, const Vec& temps,
                              const ControlAction& u, double t_out);

double step_cost(const CostParams& cp, const PowerParams& pp, double price,
                 double comfort_lo, double comfort_hi, std::optional<double> power_limit,
                 const Vec& temps, const ControlAction& u, double t_out);

// time-indexed affine dynamics around a stored operating trajectory;
// exact at the operating point.  affine chiller coefficients derive from
// (op_mdot, op_tsup) and the step's outdoor temperature.
struct LinearizedModel {
  int zones = 0;
  int steps = 0;
  double cop = 3.0;
  Mat G;
  Mat state_map;
  std::vector<Mat> temp_coef;   // A - B diag(m0)
  std::vector<Mat> mdot_coef;   // B diag(1 ts0 - T0)
  std::vector<Vec> tsup_coef;   // B m0
  std::vector<Vec> offset;      // -B (m0 .* (1 ts0 - T0))
  std::vector<Vec> op_mdot;
  std::vector<double> op_tsup;

  Vec step(int k, const Vec& temps, const ControlAction& u, const ExogenousInput& w) const;
  // affine chiller power: slope_mdot * sum(mdot) + slope_tsup * (t_supply - ts0)
  double chiller_power(int k, const ControlAction& u, double t_out) const;
  void chiller_coeffs(int k, double t_out, double* slope_mdot, double* slope_tsup) const;
};

LinearizedModel linearize(const BuildingModel& model, const PowerParams& pp,
                          const std::vector<Vec>& op_temps,
                          const std::vector<ControlAction>& op_actions);
// constant operating point replicated over `steps`
LinearizedModel linearize(const BuildingModel& model, const PowerParams& pp, const Vec& op_temps,
                          const ControlAction& op_action, int steps);

// seeded synthetic instance: stable A with adjacency couplings (perimeter ring
// plus core zone), cooling authority a few tenths of a degC per step at
// mid-range flow, exogenous gains scaled for realistic free-float temperatures
BuildingModel synth_building(std::uint64_t seed, int zones);
// flow boxes per zone (larger core zone last) and supply temperature box
ActionBounds default_bounds(int zones);

void save_building(const std::string& path, const BuildingModel& model,
                   const ActionBounds& bounds);
std::pair<BuildingModel, ActionBounds> load_building(const std::string& path);

} // namespace hvacbench

#endif
