#include "hvacbench/thermal.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace hvacbench {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

} // namespace

Vec ActionBounds::lower() const {
  Vec v(dim());
  v.head(mdot_lo.size()) = mdot_lo;
  v(dim() - 1) = tsupply_lo;
  return v;
}

Vec ActionBounds::upper() const {
  Vec v(dim());
  v.head(mdot_hi.size()) = mdot_hi;
  v(dim() - 1) = tsupply_hi;
  return v;
}

ControlAction ActionBounds::clamp(const ControlAction& u) const {
  ControlAction out;
  out.mdot = u.mdot.cwiseMax(mdot_lo).cwiseMin(mdot_hi);
  out.t_supply = std::min(std::max(u.t_supply, tsupply_lo), tsupply_hi);
  return out;
}

ControlAction ActionBounds::midpoint() const {
  ControlAction out;
  out.mdot = 0.5 * (mdot_lo + mdot_hi);
  out.t_supply = 0.5 * (tsupply_lo + tsupply_hi);
  return out;
}

Vec ExogenousInput::stacked() const {
  Vec w(q_solar.size() + 1);
  w(0) = t_out;
  w.tail(q_solar.size()) = q_solar;
  return w;
}

double band_deviation(double x, double lo, double hi) {
  require(lo <= hi, "band_deviation: lower bound above upper bound");
  double v = std::max(0.0, lo - x) + std::max(0.0, x - hi);
  return v * v;
}

double band_deviation_grad(double x, double lo, double hi) {
  require(lo <= hi, "band_deviation_grad: lower bound above upper bound");
  if (x < lo) return -2.0 * (lo - x);
  if (x > hi) return 2.0 * (x - hi);
  return 0.0;
}

Vec step_dynamics(const BuildingModel& model, const Vec& temps, const ControlAction& u,
                  const ExogenousInput& w) {
  require(temps.size() == model.zones, "step_dynamics: temperature dimension mismatch");
  require(u.mdot.size() == model.zones, "step_dynamics: mass-flow dimension mismatch");
  require(w.q_solar.size() == model.zones, "step_dynamics: solar dimension mismatch");
  return model.A * temps +
         model.B * (u.mdot.array() * (u.t_supply - temps.array())).matrix() +
         model.G * w.stacked();
}

PowerBreakdown total_power(const PowerParams& pp, const ControlAction& u, double t_out) {
  double flow = u.mdot.sum();
  PowerBreakdown p;
  p.chiller = flow / pp.cop * (t_out - u.t_supply);
  p.fan = pp.fan_cubic * flow * flow * flow + pp.fan_idle;
  p.total = p.chiller + p.fan;
  return p;
}

StepCostTerms step_cost_terms(const CostParams& cp, const PowerParams& pp, double price,
                              double comfort_lo, double comfort_hi,
                              std::optional<double> power_limit, const Vec& temps,
                              const ControlAction& u, double t_out) {
  require(price >= 0.0, "step_cost: negative price");
  StepCostTerms terms;
  PowerBreakdown p = total_power(pp, u, t_out);
  terms.energy = price * p.total * cp.hours_per_step;
  for (int i = 0; i < temps.size(); ++i)
    terms.comfort += cp.comfort_weight * band_deviation(temps(i), comfort_lo, comfort_hi);
  if (power_limit)
    terms.limit = cp.limit_weight * band_deviation(p.total, 0.0, *power_limit);
  return terms;
}

double step_cost(const CostParams& cp, const PowerParams& pp, double price, double comfort_lo,
                 double comfort_hi, std::optional<double> power_limit, const Vec& temps,
                 const ControlAction& u, double t_out) {
  return step_cost_terms(cp, pp, price, comfort_lo, comfort_hi, power_limit, temps, u, t_out)
      .total();
}

Vec LinearizedModel::step(int k, const Vec& temps, const ControlAction& u,
                          const ExogenousInput& w) const {
  require(k >= 0 && k < steps, "LinearizedModel::step: step index out of range");
  return temp_coef[k] * temps + mdot_coef[k] * u.mdot + tsup_coef[k] * u.t_supply + offset[k] +
         G * w.stacked();
}

void LinearizedModel::chiller_coeffs(int k, double t_out, double* slope_mdot,
                                     double* slope_tsup) const {
  // cop sits in the slopes; exact at (op_mdot, op_tsup)
  *slope_mdot = (t_out - op_tsup[k]) / cop;
  *slope_tsup = -op_mdot[k].sum() / cop;
}

double LinearizedModel::chiller_power(int k, const ControlAction& u, double t_out) const {
  double sm, st;
  chiller_coeffs(k, t_out, &sm, &st);
  return sm * u.mdot.sum() + st * (u.t_supply - op_tsup[k]);
}

LinearizedModel linearize(const BuildingModel& model, const PowerParams& pp,
                          const std::vector<Vec>& op_temps,
                          const std::vector<ControlAction>& op_actions) {
  require(!op_actions.empty(), "linearize: empty operating trajectory");
  require(op_temps.size() == op_actions.size(), "linearize: operating trajectory length mismatch");
  LinearizedModel lin;
  lin.zones = model.zones;
  lin.steps = static_cast<int>(op_actions.size());
  lin.cop = pp.cop;
  lin.G = model.G;
  lin.state_map = model.state_map;
  lin.temp_coef.reserve(op_actions.size());
  for (std::size_t k = 0; k < op_actions.size(); ++k) {
    const Vec& t0 = op_temps[k];
    const Vec& m0 = op_actions[k].mdot;
    double ts0 = op_actions[k].t_supply;
    require(t0.size() == model.zones && m0.size() == model.zones,
            "linearize: operating point dimension mismatch");
    Vec delta = Vec::Constant(model.zones, ts0) - t0;  // 1 ts0 - T0
    lin.temp_coef.push_back(model.A - model.B * m0.asDiagonal());
    lin.mdot_coef.push_back(model.B * delta.asDiagonal());
    lin.tsup_coef.push_back(model.B * m0);
    lin.offset.push_back(-model.B * (m0.array() * delta.array()).matrix());
    lin.op_mdot.push_back(m0);
    lin.op_tsup.push_back(ts0);
  }
  return lin;
}

LinearizedModel linearize(const BuildingModel& model, const PowerParams& pp, const Vec& op_temps,
                          const ControlAction& op_action, int steps) {
  require(steps >= 1, "linearize: nonpositive horizon");
  return linearize(model, pp, std::vector<Vec>(steps, op_temps),
                   std::vector<ControlAction>(steps, op_action));
}

BuildingModel synth_building(std::uint64_t seed, int zones) {
  require(zones >= 1, "synth_building: nonpositive zone count");
  Rng rng(derive_seed(seed, "synth_building"));
  BuildingModel m;
  m.zones = zones;
  m.A = Mat::Zero(zones, zones);
  m.B = Mat::Zero(zones, zones);
  m.G = Mat::Zero(zones, zones + 1);
  m.state_map = Mat::Identity(zones, zones);

  // perimeter ring with a core zone coupled to every perimeter zone
  std::vector<std::pair<int, int>> adjacent;
  int per = zones - 1;
  if (per >= 3)
    for (int i = 0; i < per; ++i) adjacent.emplace_back(i, (i + 1) % per);
  else if (per == 2)
    adjacent.emplace_back(0, 1);
  for (int i = 0; i < per; ++i) adjacent.emplace_back(i, zones - 1);

  for (auto [i, j] : adjacent) {
    double c = rng.uniform(0.002, 0.006);
    m.A(i, j) += c;
    m.A(j, i) += c;
  }
  for (int i = 0; i < zones; ++i) {
    double coupling = m.A.row(i).sum();
    m.A(i, i) = rng.uniform(0.955, 0.985) - coupling;
  }

  // retention fraction: free-float equilibrium ~ retention * t_out plus solar bump
  double retention = rng.uniform(0.78, 0.88);
  for (int i = 0; i < zones; ++i) {
    double leak = 1.0 - m.A.row(i).sum();
    m.G(i, 0) = leak * std::min(0.97, retention + rng.uniform(-0.03, 0.03));
    // 1.5 kW of solar lifts equilibrium by ~2-4 degC
    double bump = rng.uniform(2.0, 4.0);
    m.G(i, 1 + i) = bump * leak / 1.5;
    m.B(i, i) = rng.uniform(0.010, 0.022);
  }
  return m;
}

ActionBounds default_bounds(int zones) {
  require(zones >= 1, "default_bounds: nonpositive zone count");
  ActionBounds b;
  b.mdot_lo = Vec::Constant(zones, 0.22);
  b.mdot_hi = Vec::Constant(zones, 2.2);
  b.mdot_lo(zones - 1) = 0.32;  // core zone moves more air
  b.mdot_hi(zones - 1) = 3.2;
  b.tsupply_lo = 10.0;
  b.tsupply_hi = 16.0;
  return b;
}

namespace {

nlohmann::json matrix_to_json(const Mat& m) {
  std::vector<double> flat(static_cast<std::size_t>(m.size()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      flat[static_cast<std::size_t>(r) * static_cast<std::size_t>(m.cols()) +
           static_cast<std::size_t>(c)] = m(r, c);
  return nlohmann::json(flat);
}

Mat matrix_from_json(const nlohmann::json& j, int rows, int cols, const char* field) {
  auto flat = j.get<std::vector<double>>();
  if (static_cast<int>(flat.size()) != rows * cols)
    throw std::runtime_error(std::string("building file: bad element count in ") + field);
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = flat[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) +
                     static_cast<std::size_t>(c)];
  return m;
}

} // namespace

void save_building(const std::string& path, const BuildingModel& model,
                   const ActionBounds& bounds) {
  nlohmann::json j;
  j["version"] = 1;
  j["zones"] = model.zones;
  j["a"] = matrix_to_json(model.A);
  j["b"] = matrix_to_json(model.B);
  j["g"] = matrix_to_json(model.G);
  j["state_map"] = matrix_to_json(model.state_map);
  j["bounds"] = {{"mdot_lo", std::vector<double>(bounds.mdot_lo.begin(), bounds.mdot_lo.end())},
                 {"mdot_hi", std::vector<double>(bounds.mdot_hi.begin(), bounds.mdot_hi.end())},
                 {"tsupply_lo", bounds.tsupply_lo},
                 {"tsupply_hi", bounds.tsupply_hi}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("building file: cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

std::pair<BuildingModel, ActionBounds> load_building(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("building file: cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("building file: malformed json: " + std::string(e.what()));
  }
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw std::runtime_error("building file: unsupported version");
  BuildingModel m;
  m.zones = j.at("zones").get<int>();
  if (m.zones < 1) throw std::runtime_error("building file: nonpositive zone count");
  m.A = matrix_from_json(j.at("a"), m.zones, m.zones, "a");
  m.B = matrix_from_json(j.at("b"), m.zones, m.zones, "b");
  m.G = matrix_from_json(j.at("g"), m.zones, m.zones + 1, "g");
  m.state_map = matrix_from_json(j.at("state_map"), m.zones, m.zones, "state_map");
  const auto& jb = j.at("bounds");
  ActionBounds b;
  auto lo = jb.at("mdot_lo").get<std::vector<double>>();
  auto hi = jb.at("mdot_hi").get<std::vector<double>>();
  if (static_cast<int>(lo.size()) != m.zones || static_cast<int>(hi.size()) != m.zones)
    throw std::runtime_error("building file: bounds dimension mismatch");
  b.mdot_lo = Eigen::Map<const Vec>(lo.data(), m.zones);
  b.mdot_hi = Eigen::Map<const Vec>(hi.data(), m.zones);
  b.tsupply_lo = jb.at("tsupply_lo").get<double>();
  b.tsupply_hi = jb.at("tsupply_hi").get<double>();
  if ((b.mdot_lo.array() > b.mdot_hi.array()).any() || b.tsupply_lo > b.tsupply_hi)
    throw std::runtime_error("building file: inverted bounds");
  return {m, b};
}

} // namespace hvacbench
