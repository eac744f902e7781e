#include "hvacbench/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hvacbench {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

HorizonConfig horizon_for(const ControllerContext& ctx, int lookahead) {
  HorizonConfig h = ctx.horizon;
  h.lookahead = lookahead;
  return h;
}

ProgramKind common_program(const std::vector<DayScenario>& days, const char* who) {
  if (days.empty()) throw std::invalid_argument(std::string(who) + ": no scenarios");
  ProgramKind kind = days.front().tariff.kind;
  for (const auto& d : days)
    if (d.tariff.kind != kind)
      throw std::invalid_argument(std::string(who) + ": mixed tariff programs");
  return kind;
}

// realized cost of one step at the true plant plus its first derivatives
struct StepCostGrad {
  double cost = 0;
  Vec d_temps;   // comfort term
  Vec d_action;  // energy + limit terms
};

StepCostGrad realized_step_cost(const ControllerContext& ctx, const DayScenario& day, int t,
                                const Vec& temps, const ControlAction& u) {
  const HorizonConfig& hz = ctx.horizon;
  double price = price_at(day.tariff, hz, t);
  auto limit = power_limit_at(day.tariff, hz, t);
  double t_out = day.weather[static_cast<std::size_t>(t)].t_out;
  double lo = day.comfort.lo(t), hi = day.comfort.hi(t);
  StepCostGrad out;
  out.cost = step_cost(ctx.cost, ctx.power, price, lo, hi, limit, temps, u, t_out);
  int z = ctx.building.zones;
  out.d_temps = Vec(z);
  for (int i = 0; i < z; ++i)
    out.d_temps(i) = ctx.cost.comfort_weight * band_deviation_grad(temps(i), lo, hi);
  double flow = u.mdot.sum();
  double coef = price * ctx.cost.hours_per_step;
  if (limit) {
    double p = total_power(ctx.power, u, t_out).total;
    coef += ctx.cost.limit_weight * band_deviation_grad(p, 0.0, *limit);
  }
  out.d_action = Vec(z + 1);
  out.d_action.head(z).setConstant(
      coef * ((t_out - u.t_supply) / ctx.power.cop + 3.0 * ctx.power.fan_cubic * flow * flow));
  out.d_action(z) = coef * (-flow / ctx.power.cop);
  return out;
}

Mat plant_d_temps(const BuildingModel& model, const ControlAction& u) {
  return model.A - model.B * u.mdot.asDiagonal();
}

// z x (z+1) jacobian of the next state in the action
Mat plant_d_action(const BuildingModel& model, const Vec& temps, const ControlAction& u) {
  int z = model.zones;
  Mat j(z, z + 1);
  Vec delta = Vec::Constant(z, u.t_supply) - temps;
  j.leftCols(z) = model.B * delta.asDiagonal();
  j.col(z) = model.B * u.mdot;
  return j;
}

// appends curve samples and keeps the episode axis strictly increasing
struct CurveRecorder {
  LearningCurve curve;
  double t0 = wall_seconds();

  void add(int episodes, double cost) {
    curve.points.push_back({episodes, wall_seconds() - t0, cost});
  }
  int last_episodes() const { return curve.points.empty() ? -1 : curve.points.back().episodes; }
};

} // namespace

void validate_train_config(const TrainRunConfig& cfg, int scenario_count) {
  require(cfg.batch >= 1, "train config: nonpositive batch");
  require(cfg.batch <= scenario_count, "train config: batch exceeds scenario count");
  require(cfg.epochs >= 1, "train config: nonpositive epochs");
  require(cfg.lr >= 0, "train config: negative learning rate");
  require(cfg.action_penalty >= 0, "train config: negative action penalty");
  require(cfg.eval_every >= 1, "train config: nonpositive eval cadence");
  require(cfg.lookahead >= 1, "train config: nonpositive lookahead");
  require(!cfg.hidden.empty(), "train config: no hidden layers");
  for (int wdt : cfg.hidden) require(wdt >= 1, "train config: bad hidden width");
}

void validate_ppo(const PpoConfig& cfg) {
  require(cfg.clip > 0 && cfg.clip < 1, "ppo config: clip outside (0, 1)");
  require(cfg.gae_lambda >= 0 && cfg.gae_lambda <= 1, "ppo config: lambda outside [0, 1]");
  require(cfg.discount >= 0 && cfg.discount <= 1, "ppo config: discount outside [0, 1]");
  require(cfg.epochs >= 1, "ppo config: nonpositive epochs");
  require(cfg.minibatch >= 1, "ppo config: nonpositive minibatch");
  require(cfg.value_coef >= 0, "ppo config: negative value coefficient");
  require(cfg.experience_episodes >= 1, "ppo config: empty experience");
}

void save_learning_curve(const std::string& path, const LearningCurve& curve) {
  for (std::size_t i = 1; i < curve.points.size(); ++i)
    if (curve.points[i].episodes <= curve.points[i - 1].episodes)
      throw std::invalid_argument("learning curve: episodes not strictly increasing");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("learning curve: cannot write " + path);
  out << "episodes,wall_seconds,mean_cost\n";
  for (const auto& pt : curve.points)
    out << pt.episodes << ',' << format_num(pt.wall_seconds) << ',' << format_full(pt.mean_cost)
        << '\n';
}

LearningCurve load_learning_curve(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("learning curve: cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != "episodes,wall_seconds,mean_cost")
    throw std::runtime_error("learning curve: bad header in " + path);
  LearningCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    CurvePoint pt;
    std::getline(row, cell, ',');
    pt.episodes = std::stoi(cell);
    std::getline(row, cell, ',');
    pt.wall_seconds = std::stod(cell);
    std::getline(row, cell, ',');
    pt.mean_cost = std::stod(cell);
    curve.points.push_back(pt);
  }
  return curve;
}

void write_run_manifest(const std::string& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("run manifest: cannot write " + path);
  out << doc.dump(2) << '\n';
}

double policy_day_cost(const ControllerContext& ctx, const MlpParams& params, int lookahead,
                       const DayScenario& day) {
  HorizonConfig hz = horizon_for(ctx, lookahead);
  Vec x = day.initial_temps;
  double total = 0;
  for (int t = 0; t < hz.steps_per_day; ++t) {
    Vec obs = make_observation(day, hz, x, t);
    ControlAction u = policy_act(params, obs, ctx.bounds);
    total += step_cost(ctx.cost, ctx.power, price_at(day.tariff, hz, t), day.comfort.lo(t),
                       day.comfort.hi(t), power_limit_at(day.tariff, hz, t), x, u,
                       day.weather[static_cast<std::size_t>(t)].t_out);
    x = step_dynamics(ctx.building, x, u, day.weather[static_cast<std::size_t>(t)]);
    if (!x.allFinite())
      throw std::runtime_error("policy rollout: non-finite state at step " + std::to_string(t));
  }
  return total;
}

void fit_observation_scaling(const ControllerContext& ctx, const std::vector<DayScenario>& days,
                             int lookahead, MlpParams& params) {
  require(!days.empty(), "observation scaling: no scenarios");
  HorizonConfig hz = horizon_for(ctx, lookahead);
  int dim = params.input_dim();
  Vec sum = Vec::Zero(dim), sumsq = Vec::Zero(dim);
  long count = 0;
  ControlAction mid = ctx.bounds.midpoint();
  for (const auto& day : days) {
    Vec x = day.initial_temps;
    for (int t = 0; t < hz.steps_per_day; ++t) {
      Vec obs = make_observation(day, hz, x, t);
      require(obs.size() == dim, "observation scaling: dimension mismatch");
      sum += obs;
      sumsq += obs.cwiseProduct(obs);
      ++count;
      x = step_dynamics(ctx.building, x, mid, day.weather[static_cast<std::size_t>(t)]);
    }
  }
  Vec mean = sum / static_cast<double>(count);
  Vec var = sumsq / static_cast<double>(count) - mean.cwiseProduct(mean);
  params.input_offset = mean;
  params.input_scale = Vec(dim);
  for (int i = 0; i < dim; ++i)
    params.input_scale(i) = 1.0 / std::max(std::sqrt(std::max(var(i), 0.0)), 1e-3);
}

// ---- differentiable policy training ----

namespace {

double dpc_day_loss(const ControllerContext& ctx, const DayScenario& day, const MlpParams& params,
                    double rho, const HorizonConfig& hz, MlpGrads* grads) {
  const BuildingModel& model = ctx.building;
  const int z = model.zones, ad = z + 1, n = hz.steps_per_day;
  const Vec lob = ctx.bounds.lower(), hib = ctx.bounds.upper();
  const Vec mid = 0.5 * (lob + hib), half = 0.5 * (hib - lob);

  std::vector<GradTape> tapes(static_cast<std::size_t>(n));
  std::vector<Vec> ys(static_cast<std::size_t>(n)), xs(static_cast<std::size_t>(n) + 1);
  std::vector<ControlAction> us(static_cast<std::size_t>(n));
  xs[0] = day.initial_temps;
  double loss = 0;
  for (int t = 0; t < n; ++t) {
    Vec obs = make_observation(day, hz, xs[static_cast<std::size_t>(t)], t);
    ys[static_cast<std::size_t>(t)] =
        mlp_forward(params, obs, grads ? &tapes[static_cast<std::size_t>(t)] : nullptr);
    const Vec& y = ys[static_cast<std::size_t>(t)];
    us[static_cast<std::size_t>(t)] = vec_to_action(squash_to_box(y, ctx.bounds));
    loss += realized_step_cost(ctx, day, t, xs[static_cast<std::size_t>(t)],
                               us[static_cast<std::size_t>(t)])
                .cost;
    for (int i = 0; i < ad; ++i)
      loss += rho * band_deviation(mid(i) + half(i) * y(i), lob(i), hib(i));
    xs[static_cast<std::size_t>(t) + 1] =
        step_dynamics(model, xs[static_cast<std::size_t>(t)], us[static_cast<std::size_t>(t)],
                      day.weather[static_cast<std::size_t>(t)]);
    if (!xs[static_cast<std::size_t>(t) + 1].allFinite())
      throw std::runtime_error("dpc rollout: non-finite state at step " + std::to_string(t));
  }
  if (!std::isfinite(loss))
    throw std::runtime_error("dpc loss: non-finite loss on scenario " + day.label);
  if (!grads) return loss;

  Vec lam = Vec::Zero(z);
  for (int t = n - 1; t >= 0; --t) {
    const Vec& x = xs[static_cast<std::size_t>(t)];
    const ControlAction& u = us[static_cast<std::size_t>(t)];
    const Vec& y = ys[static_cast<std::size_t>(t)];
    StepCostGrad sc = realized_step_cost(ctx, day, t, x, u);
    Vec a_u = sc.d_action + plant_d_action(model, x, u).transpose() * lam;
    Vec dy = a_u.cwiseProduct(squash_jacobian_diag(y, ctx.bounds));
    for (int i = 0; i < ad; ++i)
      dy(i) += rho * band_deviation_grad(mid(i) + half(i) * y(i), lob(i), hib(i)) * half(i);
    Vec dobs = mlp_backward(params, tapes[static_cast<std::size_t>(t)], dy, grads);
    // the observation feeds the current temperatures back twice: as the state
    // block and as the temperature block
    lam = sc.d_temps + plant_d_temps(model, u).transpose() * lam + dobs.head(z) +
          dobs.segment(z, z);
  }
  return loss;
}

} // namespace

double dpc_batch_loss(const ControllerContext& ctx, const std::vector<const DayScenario*>& batch,
                      const MlpParams& params, double action_penalty, int lookahead,
                      MlpGrads* grads) {
  require(!batch.empty(), "dpc loss: empty batch");
  HorizonConfig hz = horizon_for(ctx, lookahead);
  int n = static_cast<int>(batch.size());
  std::vector<double> losses(static_cast<std::size_t>(n), 0.0);
  std::vector<MlpGrads> slots;
  if (grads) slots.assign(static_cast<std::size_t>(n), zero_grads(params));
  parallel_for(n, [&](int i) {
    losses[static_cast<std::size_t>(i)] =
        dpc_day_loss(ctx, *batch[static_cast<std::size_t>(i)], params, action_penalty, hz,
                     grads ? &slots[static_cast<std::size_t>(i)] : nullptr);
  });
  double scale = 1.0 / n;
  double total = 0;
  for (double v : losses) total += v;
  if (grads) {
    *grads = zero_grads(params);
    for (const auto& g : slots) grads->add_scaled(g, scale);
  }
  return total * scale;
}

DpcResult train_dpc(const ControllerContext& ctx, const std::vector<DayScenario>& scenarios,
                    const TrainRunConfig& cfg) {
  common_program(scenarios, "train_dpc");
  validate_train_config(cfg, static_cast<int>(scenarios.size()));
  int obs_dim = observation_size(scenarios.front().tariff.kind, ctx.building.zones, cfg.lookahead);
  MlpParams params = init_mlp(derive_seed(cfg.seed, "dpc-init"), obs_dim, cfg.hidden,
                              ctx.building.zones + 1);
  fit_observation_scaling(ctx, scenarios, cfg.lookahead, params);
  AdamState opt = zero_adam(params);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Rng rng(derive_seed(cfg.seed, "dpc-train"));
  const int n = static_cast<int>(scenarios.size());

  auto eval_mean = [&]() {
    std::vector<double> costs(static_cast<std::size_t>(n), 0.0);
    parallel_for(n, [&](int i) {
      costs[static_cast<std::size_t>(i)] =
          policy_day_cost(ctx, params, cfg.lookahead, scenarios[static_cast<std::size_t>(i)]);
    });
    double s = 0;
    for (double v : costs) s += v;
    return s / n;
  };

  CurveRecorder rec;
  rec.add(0, eval_mean());
  int episodes = 0, updates = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> perm = rng.permutation(n);
    for (int start = 0; start < n; start += cfg.batch) {
      int count = std::min(cfg.batch, n - start);
      std::vector<const DayScenario*> batch;
      batch.reserve(static_cast<std::size_t>(count));
      for (int i = 0; i < count; ++i)
        batch.push_back(&scenarios[static_cast<std::size_t>(perm[static_cast<std::size_t>(start + i)])]);
      MlpGrads g = zero_grads(params);
      dpc_batch_loss(ctx, batch, params, cfg.action_penalty, cfg.lookahead, &g);
      adam_step(params, opt, g, acfg);
      episodes += count;
      ++updates;
      if (updates % cfg.eval_every == 0) rec.add(episodes, eval_mean());
    }
  }
  if (rec.last_episodes() != episodes) rec.add(episodes, eval_mean());
  return {std::move(params), std::move(rec.curve)};
}

// ---- terminal-cost training ----

double mpc_cl_day_cost(const ControllerContext& ctx, const DayScenario& day,
                       const TerminalCostTable& table, int lookahead, const SolveOptions& opts,
                       Vec* grad, int* failures) {
  validate_terminal_table(table, ctx.building.zones);
  const BuildingModel& model = ctx.building;
  const HorizonConfig& hz = ctx.horizon;
  const int z = model.zones, ad = z + 1, n = hz.steps_per_day;
  const int nth = static_cast<int>(table.theta.size()) * z;

  ControllerSpec spec;
  spec.kind = ControllerKind::MpcConvexLearned;
  spec.lookahead = lookahead;
  spec.terminal = table;
  spec.solve = opts;
  ControllerState state;

  Vec x = day.initial_temps;
  Mat p = Mat::Zero(z, nth); // d temps / d flattened table
  if (grad) grad->setZero(nth);
  if (failures) *failures = 0;
  double total = 0;
  for (int t = 0; t < n; ++t) {
    MpcStepDetail det;
    ControlAction u = mpc_act(spec, ctx, state, x, day, t, grad ? &det : nullptr);
    u = ctx.bounds.clamp(u); // identity for solver output; mirrors the dispatch path
    state.previous = u;
    state.has_previous = true;
    StepCostGrad sc = realized_step_cost(ctx, day, t, x, u);
    total += sc.cost;
    if (grad) {
      Mat du = Mat::Zero(ad, nth); // d applied action / d flattened table
      bool ok = det.solved;
      if (ok) {
        FirstActionSensitivity sens = first_action_sensitivity(det.problem, det.solution);
        if (sens.regularized) {
          ok = false;
        } else {
          int slot = terminal_slot_at(table, hz.hour_at(t + lookahead));
          du = sens.d_state * p;
          du.block(0, slot * z, ad, z) += sens.d_terminal;
        }
      }
      if (!ok && failures) ++(*failures);
      *grad += p.transpose() * sc.d_temps + du.transpose() * sc.d_action;
      p = plant_d_temps(model, u) * p + plant_d_action(model, x, u) * du;
    }
    x = step_dynamics(model, x, u, day.weather[static_cast<std::size_t>(t)]);
    if (!x.allFinite())
      throw std::runtime_error("mpc-cl rollout: non-finite state at step " + std::to_string(t));
  }
  return total;
}

MpcClResult train_mpc_cl(const ControllerContext& ctx, const std::vector<DayScenario>& scenarios,
                         const TrainRunConfig& cfg) {
  common_program(scenarios, "train_mpc_cl");
  validate_train_config(cfg, static_cast<int>(scenarios.size()));
  const int z = ctx.building.zones;
  TerminalCostTable table;
  table.interval_hours = 1.0;
  table.theta.assign(24, Vec::Zero(z));
  const int nth = 24 * z;
  Vec flat = Vec::Zero(nth);
  AdamVecState opt = zero_adam_vec(nth);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Rng rng(derive_seed(cfg.seed, "mpccl-train"));
  const int n = static_cast<int>(scenarios.size());

  auto eval_mean = [&]() {
    std::vector<double> costs(static_cast<std::size_t>(n), 0.0);
    parallel_for(n, [&](int i) {
      costs[static_cast<std::size_t>(i)] = mpc_cl_day_cost(
          ctx, scenarios[static_cast<std::size_t>(i)], table, cfg.lookahead, cfg.solve);
    });
    double s = 0;
    for (double v : costs) s += v;
    return s / n;
  };

  CurveRecorder rec;
  rec.add(0, eval_mean());
  MpcClResult result;
  int episodes = 0, updates = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> perm = rng.permutation(n);
    for (int start = 0; start < n; start += cfg.batch) {
      int count = std::min(cfg.batch, n - start);
      std::vector<Vec> grads(static_cast<std::size_t>(count));
      std::vector<int> fails(static_cast<std::size_t>(count), 0);
      parallel_for(count, [&](int i) {
        mpc_cl_day_cost(ctx,
                        scenarios[static_cast<std::size_t>(
                            perm[static_cast<std::size_t>(start + i)])],
                        table, cfg.lookahead, cfg.solve, &grads[static_cast<std::size_t>(i)],
                        &fails[static_cast<std::size_t>(i)]);
      });
      Vec g = Vec::Zero(nth);
      for (int i = 0; i < count; ++i) {
        g += grads[static_cast<std::size_t>(i)];
        result.sensitivity_failures += fails[static_cast<std::size_t>(i)];
      }
      g /= count;
      adam_step_vec(flat, opt, g, acfg);
      for (int s = 0; s < 24; ++s) table.theta[static_cast<std::size_t>(s)] = flat.segment(s * z, z);
      episodes += count;
      ++updates;
      if (updates % cfg.eval_every == 0) rec.add(episodes, eval_mean());
    }
  }
  if (rec.last_episodes() != episodes) rec.add(episodes, eval_mean());
  result.table = std::move(table);
  result.curve = std::move(rec.curve);
  return result;
}

// ---- reinforcement learning ----

std::vector<ExperienceTuple> collect_experience(const ControllerContext& ctx,
                                                const std::vector<DayScenario>& days,
                                                const MlpParams& actor, const Vec& log_std,
                                                int lookahead, int episodes, Rng& rng,
                                                double* mean_cost) {
  require(!days.empty(), "collect_experience: no scenarios");
  require(episodes >= 1, "collect_experience: nonpositive episode count");
  HorizonConfig hz = horizon_for(ctx, lookahead);
  const int n = hz.steps_per_day;
  std::vector<ExperienceTuple> out;
  out.reserve(static_cast<std::size_t>(episodes) * static_cast<std::size_t>(n));
  double cost_sum = 0;
  for (int e = 0; e < episodes; ++e) {
    const DayScenario& day = days[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(days.size()) - 1))];
    Vec x = day.initial_temps;
    for (int t = 0; t < n; ++t) {
      ExperienceTuple tup;
      tup.observation = make_observation(day, hz, x, t);
      PolicySample ps = policy_sample(actor, log_std, tup.observation, ctx.bounds, rng);
      tup.sample = ps.sample;
      tup.log_prob = ps.log_prob;
      double c = step_cost(ctx.cost, ctx.power, price_at(day.tariff, hz, t), day.comfort.lo(t),
                           day.comfort.hi(t), power_limit_at(day.tariff, hz, t), x, ps.action,
                           day.weather[static_cast<std::size_t>(t)].t_out);
      tup.reward = -c;
      cost_sum += c;
      x = step_dynamics(ctx.building, x, ps.action, day.weather[static_cast<std::size_t>(t)]);
      if (!x.allFinite())
        throw std::runtime_error("experience rollout: non-finite state at step " +
                                 std::to_string(t));
      tup.done = (t == n - 1);
      tup.next_observation = tup.done ? tup.observation : make_observation(day, hz, x, t + 1);
      out.push_back(std::move(tup));
    }
  }
  if (mean_cost) *mean_cost = cost_sum / episodes;
  return out;
}

void compute_gae(const std::vector<ExperienceTuple>& batch, double discount, double lambda,
                 const MlpParams& critic, Vec* advantages, Vec* targets) {
  require(!batch.empty(), "compute_gae: empty batch");
  require(advantages && targets, "compute_gae: missing outputs");
  const int n = static_cast<int>(batch.size());
  const int dim = static_cast<int>(batch.front().observation.size());
  Mat obs(dim, n), nobs(dim, n);
  for (int t = 0; t < n; ++t) {
    obs.col(t) = batch[static_cast<std::size_t>(t)].observation;
    nobs.col(t) = batch[static_cast<std::size_t>(t)].next_observation;
  }
  Vec v = mlp_forward_batch(critic, obs).row(0).transpose();
  Vec vn = mlp_forward_batch(critic, nobs).row(0).transpose();
  Vec raw(n);
  double acc = 0;
  for (int t = n - 1; t >= 0; --t) {
    const auto& tup = batch[static_cast<std::size_t>(t)];
    double carry = tup.done ? 0.0 : 1.0;
    double delta = tup.reward + discount * carry * vn(t) - v(t);
    acc = delta + discount * lambda * carry * acc;
    raw(t) = acc;
  }
  *targets = raw + v;
  double mean = raw.mean();
  double sd = std::sqrt((raw.array() - mean).square().mean());
  *advantages = (raw.array() - mean).matrix() / (sd + 1e-8);
}

double ppo_surrogate(double ratio, double advantage, double clip) {
  double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  return std::min(ratio * advantage, clipped * advantage);
}

namespace {

// matches the sampler's squash of network outputs to normalized means
inline double interior_tanh(double y) {
  double t = std::tanh(y);
  constexpr double margin = 1.0 - 1e-12;
  return std::min(std::max(t, -margin), margin);
}

} // namespace

PpoStats ppo_update(const std::vector<ExperienceTuple>& batch, const Vec& advantages,
                    const Vec& targets, MlpParams& actor, Vec& log_std, MlpParams& critic,
                    AdamState& actor_opt, AdamVecState& log_std_opt, AdamState& critic_opt,
                    const PpoConfig& cfg, double lr, Rng& rng) {
  validate_ppo(cfg);
  const int n = static_cast<int>(batch.size());
  require(n >= 1, "ppo_update: empty batch");
  require(advantages.size() == n && targets.size() == n, "ppo_update: misaligned advantages");
  const int ad = actor.output_dim();
  require(log_std.size() == ad, "ppo_update: log-std dimension mismatch");
  const int dim = static_cast<int>(batch.front().observation.size());
  AdamConfig acfg;
  acfg.lr = lr;
  PpoStats stats;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> perm = rng.permutation(n);
    for (int start = 0; start < n; start += cfg.minibatch) {
      const int m = std::min(cfg.minibatch, n - start);
      ++stats.minibatches;
      Mat obs(dim, m);
      for (int j = 0; j < m; ++j)
        obs.col(j) = batch[static_cast<std::size_t>(perm[static_cast<std::size_t>(start + j)])]
                         .observation;
      BatchTape tape;
      Mat y = mlp_forward_batch(actor, obs, &tape);
      Mat mean(ad, m);
      for (int j = 0; j < m; ++j)
        for (int i = 0; i < ad; ++i) mean(i, j) = interior_tanh(y(i, j));
      Vec dlp(m);
      bool overflow = false;
      for (int j = 0; j < m; ++j) {
        const auto& tup =
            batch[static_cast<std::size_t>(perm[static_cast<std::size_t>(start + j)])];
        double lp = gaussian_log_prob(mean.col(j), log_std, tup.sample);
        dlp(j) = lp - tup.log_prob;
        if (!std::isfinite(dlp(j)) || std::abs(dlp(j)) > 20.0) overflow = true;
      }
      if (overflow) {
        ++stats.skipped;
        continue;
      }
      Mat dy = Mat::Zero(ad, m);
      Vec dls = Vec::Zero(ad);
      for (int j = 0; j < m; ++j) {
        int row = perm[static_cast<std::size_t>(start + j)];
        const auto& tup = batch[static_cast<std::size_t>(row)];
        double adv = advantages(row);
        double eta = std::exp(dlp(j));
        bool clipped = (adv >= 0 && eta > 1.0 + cfg.clip) || (adv <= 0 && eta < 1.0 - cfg.clip);
        double dlogp = clipped ? 0.0 : -adv * eta / m;
        if (dlogp == 0.0) continue;
        for (int i = 0; i < ad; ++i) {
          double sigma = std::exp(log_std(i));
          double zscore = (tup.sample(i) - mean(i, j)) / sigma;
          dy(i, j) = dlogp * (zscore / sigma) * (1.0 - mean(i, j) * mean(i, j));
          dls(i) += dlogp * (zscore * zscore - 1.0);
        }
      }
      MlpGrads ag = zero_grads(actor);
      mlp_backward_batch(actor, tape, dy, &ag);
      adam_step(actor, actor_opt, ag, acfg);
      adam_step_vec(log_std, log_std_opt, dls, acfg);

      BatchTape ctape;
      Mat vmat = mlp_forward_batch(critic, obs, &ctape);
      Mat dv(1, m);
      for (int j = 0; j < m; ++j) {
        int row = perm[static_cast<std::size_t>(start + j)];
        dv(0, j) = cfg.value_coef * 2.0 * (vmat(0, j) - targets(row)) / m;
      }
      MlpGrads cg = zero_grads(critic);
      mlp_backward_batch(critic, ctape, dv, &cg);
      adam_step(critic, critic_opt, cg, acfg);
    }
  }
  return stats;
}

RlcResult train_rlc(const ControllerContext& ctx, const std::vector<DayScenario>& scenarios,
                    const TrainRunConfig& cfg, const PpoConfig& ppo) {
  common_program(scenarios, "train_rlc");
  validate_train_config(cfg, static_cast<int>(scenarios.size()));
  validate_ppo(ppo);
  const int z = ctx.building.zones, ad = z + 1;
  int obs_dim = observation_size(scenarios.front().tariff.kind, z, cfg.lookahead);
  RlcResult result;
  result.actor = init_mlp(derive_seed(cfg.seed, "rlc-actor"), obs_dim, cfg.hidden, ad);
  result.critic = init_mlp(derive_seed(cfg.seed, "rlc-critic"), obs_dim, cfg.hidden, 1);
  fit_observation_scaling(ctx, scenarios, cfg.lookahead, result.actor);
  result.critic.input_offset = result.actor.input_offset;
  result.critic.input_scale = result.actor.input_scale;
  result.log_std = Vec::Constant(ad, -0.5);
  AdamState actor_opt = zero_adam(result.actor), critic_opt = zero_adam(result.critic);
  AdamVecState log_std_opt = zero_adam_vec(ad);
  Rng rng(derive_seed(cfg.seed, "rlc-train"));
  const int n = static_cast<int>(scenarios.size());
  const int total = cfg.epochs * n; // episode budget

  auto eval_mean = [&]() {
    std::vector<double> costs(static_cast<std::size_t>(n), 0.0);
    parallel_for(n, [&](int i) {
      costs[static_cast<std::size_t>(i)] = policy_day_cost(
          ctx, result.actor, cfg.lookahead, scenarios[static_cast<std::size_t>(i)]);
    });
    double s = 0;
    for (double v : costs) s += v;
    return s / n;
  };

  CurveRecorder rec;
  rec.add(0, eval_mean());
  int episodes = 0, updates = 0;
  while (episodes < total) {
    int want = std::min(ppo.experience_episodes, total - episodes);
    auto exp = collect_experience(ctx, scenarios, result.actor, result.log_std, cfg.lookahead,
                                  want, rng);
    Vec adv, tgt;
    compute_gae(exp, ppo.discount, ppo.gae_lambda, result.critic, &adv, &tgt);
    PpoStats st = ppo_update(exp, adv, tgt, result.actor, result.log_std, result.critic,
                             actor_opt, log_std_opt, critic_opt, ppo, cfg.lr, rng);
    result.skipped_minibatches += st.skipped;
    episodes += want;
    ++updates;
    if (updates % cfg.eval_every == 0) rec.add(episodes, eval_mean());
  }
  if (rec.last_episodes() != episodes) rec.add(episodes, eval_mean());
  result.curve = std::move(rec.curve);
  return result;
}

} // namespace hvacbench
