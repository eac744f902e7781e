// demand-response day scenarios: tariffs, weather synthesis, observations, csv bundles
#ifndef HVACBENCH_SCENARIO_HPP
#define HVACBENCH_SCENARIO_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hvacbench/thermal.hpp"

namespace hvacbench {

struct HorizonConfig {
  int steps_per_day = 288;
  double hours_per_step = 1.0 / 12;
  int lookahead = 12;  // K

  double hour_at(int t) const { return t * hours_per_step; }
};
void validate_horizon(const HorizonConfig& h);  // steps * hours must cover 24 h

enum class ProgramKind { Tou, Rtp, Pc };

std::string program_name(ProgramKind kind);
ProgramKind program_from_name(const std::string& name);

// one struct, kind-tagged; only the matching fields are read
struct TariffProgram {
  ProgramKind kind = ProgramKind::Tou;
  // time-of-use
  double peak_price = 10.0, offpeak_price = 1.0;
  double peak_start = 12.0, peak_end = 18.0;  // hours, half-open window
  // real-time pricing: realized series billed, day-ahead series planned on
  Vec rtp, dap;
  // power-constrained
  double flat_price = 1.0;
  double limit_normal = 25.0, limit_event = 15.0;  // kW
  double event_start = 12.5, event_end = 16.5;
};

TariffProgram make_tou();
TariffProgram make_rtp(Vec rtp, Vec dap);
TariffProgram make_pc();
void validate_program(const TariffProgram& p, const HorizonConfig& h);

// realized price billed at step t
double price_at(const TariffProgram& p, const HorizonConfig& h, int t);
// price a controller is allowed to plan on (day-ahead series for RTP)
double planning_price_at(const TariffProgram& p, const HorizonConfig& h, int t);
// power cap at step t; empty outside the power-constrained program
std::optional<double> power_limit_at(const TariffProgram& p, const HorizonConfig& h, int t);

struct DayScenario {
  std::string label;
  std::vector<ExogenousInput> weather;  // length steps_per_day
  TariffProgram tariff;
  ComfortSchedule comfort;
  Vec initial_temps;
};

// occupied band during [7:00, 18:00), relaxed band otherwise
ComfortSchedule default_comfort_schedule(const HorizonConfig& h);

struct ClimateConfig {
  double mean_lo = 24.0, mean_hi = 29.0;  // daily mean outdoor temp, degC
  double amp_lo = 4.0, amp_hi = 7.0;      // half swing around the mean
  double solar_peak_lo = 1.2, solar_peak_hi = 2.0;  // kW at solar noon
  double hot_shift_lo = 0.5, hot_shift_hi = 3.0;    // extra lift for hot test days
  std::vector<double> orientation;                  // per-zone solar weights, cycled
};

// diurnal outdoor sinusoid (min ~05:00, max ~15:00), clipped half-sine solar,
// seeded day-ahead price curve with correlated realized noise for RTP
DayScenario generate_day(std::uint64_t seed, const HorizonConfig& h, ProgramKind kind,
                         const ClimateConfig& climate, int zones, const std::string& label);

struct ScenarioSplit {
  std::vector<DayScenario> train, test;
};

// disjoint train/test day sets; round(hot_day_fraction * n_test) test days get
// their outdoor profile lifted above the train-set maximum (generalization probe)
ScenarioSplit split_train_test(std::uint64_t seed, const HorizonConfig& h, ProgramKind kind,
                               const ClimateConfig& climate, int zones, int n_train, int n_test,
                               double hot_day_fraction);

// observation: [state, temps, K-step t_out forecast, K-step per-zone solar forecast,
// day-phase sin/cos] + day-ahead prices (RTP) or power limits (PC); forecasts hold
// the last value past the day end.  assumes the identity state map.
Vec make_observation(const DayScenario& s, const HorizonConfig& h, const Vec& temps, int t);
int observation_size(ProgramKind kind, int zones, int lookahead);

// columnar csv bundle + json manifest; loaders never consult rng state
void save_scenario_set(const std::string& dir, const HorizonConfig& h,
                       const std::vector<DayScenario>& days);
std::vector<DayScenario> load_scenario_set(const std::string& dir, HorizonConfig* h_out = nullptr);

} // namespace hvacbench

#endif
