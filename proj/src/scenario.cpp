#include "hvacbench/scenario.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace hvacbench {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

bool in_window(double hour, double start, double end) {
  return hour >= start && hour < end;
}

} // namespace

void validate_horizon(const HorizonConfig& h) {
  require(h.steps_per_day > 0, "horizon: nonpositive step count");
  require(h.hours_per_step > 0, "horizon: nonpositive step length");
  require(std::abs(h.steps_per_day * h.hours_per_step - 24.0) < 1e-9,
          "horizon: steps must tile a 24 h day");
  require(h.lookahead >= 1, "horizon: nonpositive lookahead");
}

std::string program_name(ProgramKind kind) {
  switch (kind) {
    case ProgramKind::Tou: return "tou";
    case ProgramKind::Rtp: return "rtp";
    case ProgramKind::Pc: return "pc";
  }
  return "tou";
}

ProgramKind program_from_name(const std::string& name) {
  if (name == "tou") return ProgramKind::Tou;
  if (name == "rtp") return ProgramKind::Rtp;
  if (name == "pc") return ProgramKind::Pc;
  throw std::invalid_argument("unknown program name: " + name);
}

TariffProgram make_tou() {
  TariffProgram p;
  p.kind = ProgramKind::Tou;
  return p;
}

TariffProgram make_rtp(Vec rtp, Vec dap) {
  TariffProgram p;
  p.kind = ProgramKind::Rtp;
  p.rtp = std::move(rtp);
  p.dap = std::move(dap);
  return p;
}

TariffProgram make_pc() {
  TariffProgram p;
  p.kind = ProgramKind::Pc;
  return p;
}

void validate_program(const TariffProgram& p, const HorizonConfig& h) {
  switch (p.kind) {
    case ProgramKind::Tou:
      require(p.peak_price > 0 && p.offpeak_price > 0, "tariff: prices must be positive");
      require(p.peak_start >= 0 && p.peak_end <= 24 && p.peak_start <= p.peak_end,
              "tariff: peak window outside the day");
      break;
    case ProgramKind::Rtp:
      require(p.rtp.size() == h.steps_per_day && p.dap.size() == h.steps_per_day,
              "tariff: price series length must match the day");
      require((p.rtp.array() > 0).all() && (p.dap.array() > 0).all(),
              "tariff: prices must be positive");
      break;
    case ProgramKind::Pc:
      require(p.flat_price > 0, "tariff: prices must be positive");
      require(p.limit_normal > 0 && p.limit_event > 0, "tariff: limits must be positive");
      require(p.event_start >= 0 && p.event_end <= 24 && p.event_start <= p.event_end,
              "tariff: event window outside the day");
      break;
  }
}

double price_at(const TariffProgram& p, const HorizonConfig& h, int t) {
  require(t >= 0 && t < h.steps_per_day, "price_at: step outside the day");
  switch (p.kind) {
    case ProgramKind::Tou:
      return in_window(h.hour_at(t), p.peak_start, p.peak_end) ? p.peak_price : p.offpeak_price;
    case ProgramKind::Rtp: return p.rtp(t);
    case ProgramKind::Pc: return p.flat_price;
  }
  return 0;
}

double planning_price_at(const TariffProgram& p, const HorizonConfig& h, int t) {
  if (p.kind == ProgramKind::Rtp) {
    require(t >= 0 && t < h.steps_per_day, "planning_price_at: step outside the day");
    return p.dap(t);
  }
  return price_at(p, h, t);
}

std::optional<double> power_limit_at(const TariffProgram& p, const HorizonConfig& h, int t) {
  if (p.kind != ProgramKind::Pc) return std::nullopt;
  require(t >= 0 && t < h.steps_per_day, "power_limit_at: step outside the day");
  return in_window(h.hour_at(t), p.event_start, p.event_end) ? p.limit_event : p.limit_normal;
}

ComfortSchedule default_comfort_schedule(const HorizonConfig& h) {
  ComfortSchedule c;
  c.lo = Vec(h.steps_per_day);
  c.hi = Vec(h.steps_per_day);
  for (int t = 0; t < h.steps_per_day; ++t) {
    bool occupied = in_window(h.hour_at(t), 7.0, 18.0);
    c.lo(t) = occupied ? 20.0 : 16.0;
    c.hi(t) = occupied ? 24.5 : 28.0;
  }
  return c;
}

namespace {

// min at 05:00, max at 15:00, continuous across midnight
double diurnal_temp(double hour, double mean, double amp) {
  double h = std::fmod(hour + 24.0, 24.0);
  if (h >= 5.0 && h <= 15.0) return mean - amp * std::cos(std::numbers::pi * (h - 5.0) / 10.0);
  double since_peak = h >= 15.0 ? h - 15.0 : h + 9.0;
  return mean + amp * std::cos(std::numbers::pi * since_peak / 14.0);
}

} // namespace

DayScenario generate_day(std::uint64_t seed, const HorizonConfig& h, ProgramKind kind,
                         const ClimateConfig& climate, int zones, const std::string& label) {
  validate_horizon(h);
  require(zones >= 1, "generate_day: nonpositive zone count");
  DayScenario day;
  day.label = label;
  day.comfort = default_comfort_schedule(h);

  Rng weather_rng(derive_seed(seed, "weather"));
  double mean = weather_rng.uniform(climate.mean_lo, climate.mean_hi);
  double amp = weather_rng.uniform(climate.amp_lo, climate.amp_hi);
  double solar_peak = weather_rng.uniform(climate.solar_peak_lo, climate.solar_peak_hi);
  std::vector<double> orientation = climate.orientation;
  if (orientation.empty()) orientation = {1.0, 0.75, 0.55, 0.9, 0.65};

  day.weather.resize(h.steps_per_day);
  for (int t = 0; t < h.steps_per_day; ++t) {
    double hour = h.hour_at(t);
    ExogenousInput w;
    w.t_out = diurnal_temp(hour, mean, amp);
    w.q_solar = Vec(zones);
    double sun = std::max(0.0, std::sin(std::numbers::pi * (hour - 6.0) / 14.0));
    if (hour < 6.0 || hour > 20.0) sun = 0.0;
    for (int i = 0; i < zones; ++i)
      w.q_solar(i) = solar_peak * orientation[i % orientation.size()] * sun;
    day.weather[t] = w;
  }

  Rng init_rng(derive_seed(seed, "initial_temps"));
  day.initial_temps = Vec::NullaryExpr(zones, [&](int) { return init_rng.uniform(20.0, 25.0); });

  switch (kind) {
    case ProgramKind::Tou: day.tariff = make_tou(); break;
    case ProgramKind::Pc: day.tariff = make_pc(); break;
    case ProgramKind::Rtp: {
      Rng price_rng(derive_seed(seed, "prices"));
      double base = price_rng.uniform(0.7, 1.0);
      double peak = price_rng.uniform(2.0, 3.0);
      double peak_hour = price_rng.uniform(15.0, 17.0);
      double width = price_rng.uniform(3.0, 4.0);
      Vec dap(h.steps_per_day), rtp(h.steps_per_day);
      double noise = 0.0;
      double rho = 0.9;
      double sigma = 0.12 * peak * std::sqrt(1.0 - rho * rho);
      for (int t = 0; t < h.steps_per_day; ++t) {
        double hour = h.hour_at(t);
        double bell = std::exp(-0.5 * (hour - peak_hour) * (hour - peak_hour) / (width * width));
        dap(t) = base + peak * bell;
        noise = rho * noise + sigma * price_rng.normal();
        rtp(t) = std::max(0.05, dap(t) + noise);
      }
      day.tariff = make_rtp(std::move(rtp), std::move(dap));
      break;
    }
  }
  validate_program(day.tariff, h);
  return day;
}

ScenarioSplit split_train_test(std::uint64_t seed, const HorizonConfig& h, ProgramKind kind,
                               const ClimateConfig& climate, int zones, int n_train, int n_test,
                               double hot_day_fraction) {
  require(n_train > 0 && n_test > 0, "split_train_test: empty split");
  require(hot_day_fraction >= 0.0 && hot_day_fraction <= 1.0,
          "split_train_test: hot-day fraction outside [0,1]");
  ScenarioSplit split;
  std::uint64_t scenario_seed = derive_seed(seed, "scenario");
  char label[32];
  double train_peak = -1e300;
  for (int i = 0; i < n_train; ++i) {
    std::snprintf(label, sizeof(label), "2021-07-%02d", i + 1);
    DayScenario day =
        generate_day(derive_seed(scenario_seed, label), h, kind, climate, zones, label);
    for (const auto& w : day.weather) train_peak = std::max(train_peak, w.t_out);
    split.train.push_back(std::move(day));
  }
  int n_hot = static_cast<int>(std::llround(hot_day_fraction * n_test));
  for (int i = 0; i < n_test; ++i) {
    std::snprintf(label, sizeof(label), "2021-08-%02d", i + 1);
    DayScenario day =
        generate_day(derive_seed(scenario_seed, label), h, kind, climate, zones, label);
    if (i >= n_test - n_hot) {
      Rng hot_rng(derive_seed(derive_seed(scenario_seed, label), "hot_shift"));
      double peak = -1e300;
      for (const auto& w : day.weather) peak = std::max(peak, w.t_out);
      double lift = train_peak - peak + hot_rng.uniform(climate.hot_shift_lo, climate.hot_shift_hi);
      for (auto& w : day.weather) w.t_out += lift;
    }
    split.test.push_back(std::move(day));
  }
  return split;
}

int observation_size(ProgramKind kind, int zones, int lookahead) {
  int base = 2 * zones + lookahead + zones * lookahead + 2;
  return kind == ProgramKind::Tou ? base : base + lookahead;
}

Vec make_observation(const DayScenario& s, const HorizonConfig& h, const Vec& temps, int t) {
  int n = h.steps_per_day;
  int k = h.lookahead;
  int zones = static_cast<int>(temps.size());
  require(t >= 0 && t < n, "make_observation: step outside the day");
  require(static_cast<int>(s.weather.size()) == n, "make_observation: weather length mismatch");
  Vec obs(observation_size(s.tariff.kind, zones, k));
  int at = 0;
  obs.segment(at, zones) = temps;  // state (identity state map)
  at += zones;
  obs.segment(at, zones) = temps;  // temperatures
  at += zones;
  for (int j = 0; j < k; ++j) obs(at++) = s.weather[std::min(t + j, n - 1)].t_out;
  for (int j = 0; j < k; ++j) {
    obs.segment(at, zones) = s.weather[std::min(t + j, n - 1)].q_solar;
    at += zones;
  }
  double phase = 2.0 * std::numbers::pi * (t % n) / n;
  obs(at++) = std::sin(phase);
  obs(at++) = std::cos(phase);
  if (s.tariff.kind == ProgramKind::Rtp)
    for (int j = 0; j < k; ++j) obs(at++) = s.tariff.dap(std::min(t + j, n - 1));
  if (s.tariff.kind == ProgramKind::Pc)
    for (int j = 0; j < k; ++j)
      obs(at++) = *power_limit_at(s.tariff, h, std::min(t + j, n - 1));
  return obs;
}

// ---------------------------- csv bundle ----------------------------

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

using Table = std::vector<std::vector<double>>;  // rows of data cells (first column dropped)

Table read_csv(const std::string& path, std::vector<std::string>* header_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("scenario bundle: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("scenario bundle: empty file " + path);
  auto header = split_line(line);
  if (header_out) *header_out = header;
  Table rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("scenario bundle: ragged row in " + path);
    std::vector<double> row;
    for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(std::strtod(cells[i].c_str(), nullptr));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_series_csv(const std::string& path, const std::vector<std::string>& columns,
                      const std::function<double(int col, int row)>& value, int rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("scenario bundle: cannot write " + path);
  out << "step";
  for (const auto& c : columns) out << "," << c;
  out << "\n";
  for (int r = 0; r < rows; ++r) {
    out << r;
    for (std::size_t c = 0; c < columns.size(); ++c) out << "," << format_full(value(static_cast<int>(c), r));
    out << "\n";
  }
}

} // namespace

void save_scenario_set(const std::string& dir, const HorizonConfig& h,
                       const std::vector<DayScenario>& days) {
  require(!days.empty(), "save_scenario_set: no days");
  validate_horizon(h);
  std::filesystem::create_directories(dir);
  int n = h.steps_per_day;
  int zones = static_cast<int>(days.front().initial_temps.size());
  ProgramKind kind = days.front().tariff.kind;

  std::vector<std::string> labels;
  for (const auto& d : days) labels.push_back(d.label);

  write_series_csv(dir + "/t_out.csv", labels,
                   [&](int c, int r) { return days[c].weather[r].t_out; }, n);

  std::vector<std::string> solar_cols;
  for (const auto& label : labels)
    for (int z = 0; z < zones; ++z) solar_cols.push_back(label + "/z" + std::to_string(z));
  write_series_csv(dir + "/solar.csv", solar_cols,
                   [&](int c, int r) { return days[c / zones].weather[r].q_solar(c % zones); }, n);

  write_series_csv(dir + "/initial_temps.csv", labels,
                   [&](int c, int r) { return days[c].initial_temps(r); }, zones);

  write_series_csv(dir + "/comfort.csv", {"lo", "hi"},
                   [&](int c, int r) {
                     return c == 0 ? days.front().comfort.lo(r) : days.front().comfort.hi(r);
                   },
                   n);

  if (kind == ProgramKind::Rtp) {
    write_series_csv(dir + "/price_rtp.csv", labels,
                     [&](int c, int r) { return days[c].tariff.rtp(r); }, n);
    write_series_csv(dir + "/price_dap.csv", labels,
                     [&](int c, int r) { return days[c].tariff.dap(r); }, n);
  }

  const TariffProgram& tariff = days.front().tariff;
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["program"] = program_name(kind);
  manifest["steps_per_day"] = n;
  manifest["hours_per_step"] = h.hours_per_step;
  manifest["lookahead"] = h.lookahead;
  manifest["zones"] = zones;
  manifest["labels"] = labels;
  manifest["tariff"] = {{"peak_price", tariff.peak_price},
                        {"offpeak_price", tariff.offpeak_price},
                        {"peak_start", tariff.peak_start},
                        {"peak_end", tariff.peak_end},
                        {"flat_price", tariff.flat_price},
                        {"limit_normal", tariff.limit_normal},
                        {"limit_event", tariff.limit_event},
                        {"event_start", tariff.event_start},
                        {"event_end", tariff.event_end}};
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw std::runtime_error("scenario bundle: cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

std::vector<DayScenario> load_scenario_set(const std::string& dir, HorizonConfig* h_out) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw std::runtime_error("scenario bundle: cannot open manifest in " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("scenario bundle: malformed manifest: " + std::string(e.what()));
  }
  if (!manifest.contains("version") || manifest["version"].get<int>() != 1)
    throw std::runtime_error("scenario bundle: unsupported manifest version");
  HorizonConfig h;
  h.steps_per_day = manifest.at("steps_per_day").get<int>();
  h.hours_per_step = manifest.at("hours_per_step").get<double>();
  h.lookahead = manifest.at("lookahead").get<int>();
  validate_horizon(h);
  if (h_out) *h_out = h;
  int n = h.steps_per_day;
  int zones = manifest.at("zones").get<int>();
  ProgramKind kind = program_from_name(manifest.at("program").get<std::string>());
  auto labels = manifest.at("labels").get<std::vector<std::string>>();

  Table t_out = read_csv(dir + "/t_out.csv", nullptr);
  Table solar = read_csv(dir + "/solar.csv", nullptr);
  Table init = read_csv(dir + "/initial_temps.csv", nullptr);
  Table comfort = read_csv(dir + "/comfort.csv", nullptr);
  if (static_cast<int>(t_out.size()) != n || static_cast<int>(comfort.size()) != n ||
      static_cast<int>(init.size()) != zones)
    throw std::runtime_error("scenario bundle: series length mismatch");
  Table rtp, dap;
  if (kind == ProgramKind::Rtp) {
    rtp = read_csv(dir + "/price_rtp.csv", nullptr);
    dap = read_csv(dir + "/price_dap.csv", nullptr);
  }

  const auto& jt = manifest.at("tariff");
  std::vector<DayScenario> days(labels.size());
  for (std::size_t d = 0; d < labels.size(); ++d) {
    DayScenario& day = days[d];
    day.label = labels[d];
    day.weather.resize(n);
    for (int t = 0; t < n; ++t) {
      day.weather[t].t_out = t_out[t][d];
      day.weather[t].q_solar = Vec(zones);
      for (int z = 0; z < zones; ++z)
        day.weather[t].q_solar(z) = solar[t][d * static_cast<std::size_t>(zones) + z];
    }
    day.initial_temps = Vec(zones);
    for (int z = 0; z < zones; ++z) day.initial_temps(z) = init[z][d];
    day.comfort.lo = Vec(n);
    day.comfort.hi = Vec(n);
    for (int t = 0; t < n; ++t) {
      day.comfort.lo(t) = comfort[t][0];
      day.comfort.hi(t) = comfort[t][1];
    }
    TariffProgram tariff;
    tariff.kind = kind;
    tariff.peak_price = jt.at("peak_price").get<double>();
    tariff.offpeak_price = jt.at("offpeak_price").get<double>();
    tariff.peak_start = jt.at("peak_start").get<double>();
    tariff.peak_end = jt.at("peak_end").get<double>();
    tariff.flat_price = jt.at("flat_price").get<double>();
    tariff.limit_normal = jt.at("limit_normal").get<double>();
    tariff.limit_event = jt.at("limit_event").get<double>();
    tariff.event_start = jt.at("event_start").get<double>();
    tariff.event_end = jt.at("event_end").get<double>();
    if (kind == ProgramKind::Rtp) {
      tariff.rtp = Vec(n);
      tariff.dap = Vec(n);
      for (int t = 0; t < n; ++t) {
        tariff.rtp(t) = rtp[t][d];
        tariff.dap(t) = dap[t][d];
      }
    }
    day.tariff = tariff;
    validate_program(day.tariff, h);
  }
  return days;
}

} // namespace hvacbench
