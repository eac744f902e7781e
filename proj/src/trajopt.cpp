#include "hvacbench/trajopt.hpp"

#include <cmath>
#include <stdexcept>

namespace hvacbench {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// uniform view over the two plant kinds
struct PlantOps {
  const TrajectoryProblem& p;
  const BuildingModel* bilinear;
  const LinearizedModel* linear;

  explicit PlantOps(const TrajectoryProblem& problem) : p(problem) {
    bilinear = std::get_if<BuildingModel>(&p.plant);
    linear = std::get_if<LinearizedModel>(&p.plant);
  }

  Vec step(int k, const Vec& x, const ControlAction& u) const {
    return bilinear ? step_dynamics(*bilinear, x, u, p.w[k]) : linear->step(k, x, u, p.w[k]);
  }

  double power(int k, const ControlAction& u) const {
    if (bilinear) return total_power(p.power, u, p.w[k].t_out).total;
    double flow = u.mdot.sum();
    return linear->chiller_power(k, u, p.w[k].t_out) +
           p.power.fan_cubic * flow * flow * flow + p.power.fan_idle;
  }

  // d power / d mdot_i (uniform across zones) and d power / d t_supply
  void power_grad(int k, const ControlAction& u, double* d_mdot, double* d_tsup) const {
    double flow = u.mdot.sum();
    double fan = 3.0 * p.power.fan_cubic * flow * flow;
    if (bilinear) {
      *d_mdot = (p.w[k].t_out - u.t_supply) / p.power.cop + fan;
      *d_tsup = -flow / p.power.cop;
    } else {
      double sm, st;
      linear->chiller_coeffs(k, p.w[k].t_out, &sm, &st);
      *d_mdot = sm + fan;
      *d_tsup = st;
    }
  }

  // jacobians of the next state
  Mat d_temps(int k, const Vec& x, const ControlAction& u) const {
    if (bilinear) return bilinear->A - bilinear->B * u.mdot.asDiagonal();
    (void)x;
    return linear->temp_coef[k];
  }

  Mat d_mdot(int k, const Vec& x, const ControlAction& u) const {
    if (bilinear) {
      Vec delta = Vec::Constant(x.size(), u.t_supply) - x;
      return bilinear->B * delta.asDiagonal();
    }
    return linear->mdot_coef[k];
  }

  Vec d_tsup(int k, const Vec& x, const ControlAction& u) const {
    if (bilinear) return bilinear->B * u.mdot;
    (void)x;
    return linear->tsup_coef[k];
  }
};

} // namespace

void validate_problem(const TrajectoryProblem& p) {
  int z = p.zones();
  require(p.steps >= 1, "trajectory problem: nonpositive horizon");
  require(z >= 1, "trajectory problem: empty state");
  require(static_cast<int>(p.w.size()) == p.steps, "trajectory problem: exogenous length");
  require(p.price.size() == p.steps, "trajectory problem: price length");
  require((p.price.array() >= 0).all(), "trajectory problem: negative price");
  require(p.comfort_lo.size() == p.steps && p.comfort_hi.size() == p.steps,
          "trajectory problem: comfort length");
  require(!p.power_limit || p.power_limit->size() == p.steps,
          "trajectory problem: power limit length");
  require(p.bounds.mdot_lo.size() == z, "trajectory problem: bounds dimension");
  require(p.terminal_cost.size() == 0 || p.terminal_cost.size() == z,
          "trajectory problem: terminal weight dimension");
  if (const auto* lin = std::get_if<LinearizedModel>(&p.plant))
    require(lin->steps >= p.steps, "trajectory problem: linearization shorter than horizon");
}

Vec pack_actions(const std::vector<ControlAction>& seq) {
  require(!seq.empty(), "pack_actions: empty sequence");
  int ad = static_cast<int>(seq.front().mdot.size()) + 1;
  Vec u(static_cast<int>(seq.size()) * ad);
  for (std::size_t k = 0; k < seq.size(); ++k) {
    u.segment(static_cast<int>(k) * ad, ad - 1) = seq[k].mdot;
    u(static_cast<int>(k) * ad + ad - 1) = seq[k].t_supply;
  }
  return u;
}

std::vector<ControlAction> unpack_actions(const Vec& u_seq, int zones) {
  int ad = zones + 1;
  require(u_seq.size() % ad == 0, "unpack_actions: length not a multiple of the action size");
  std::vector<ControlAction> seq(static_cast<std::size_t>(u_seq.size() / ad));
  for (std::size_t k = 0; k < seq.size(); ++k) {
    seq[k].mdot = u_seq.segment(static_cast<int>(k) * ad, zones);
    seq[k].t_supply = u_seq(static_cast<int>(k) * ad + zones);
  }
  return seq;
}

namespace {

struct RolloutData {
  std::vector<Vec> temps;     // steps + 1
  std::vector<double> power;  // steps
  double cost = 0;
};

RolloutData run_rollout(const TrajectoryProblem& p, const Vec& u_seq) {
  require(u_seq.size() == p.decision_dim(), "rollout: decision vector length");
  PlantOps ops(p);
  int z = p.zones();
  int ad = p.action_dim();
  RolloutData data;
  data.temps.reserve(p.steps + 1);
  data.power.resize(p.steps);
  Vec x = p.initial_temps;
  data.temps.push_back(x);
  for (int k = 0; k < p.steps; ++k) {
    ControlAction u;
    u.mdot = u_seq.segment(k * ad, z);
    u.t_supply = u_seq(k * ad + z);
    double pw = ops.power(k, u);
    data.power[k] = pw;
    data.cost += p.price(k) * pw * p.cost.hours_per_step;
    for (int i = 0; i < z; ++i)
      data.cost += p.cost.comfort_weight * band_deviation(x(i), p.comfort_lo(k), p.comfort_hi(k));
    if (p.power_limit)
      data.cost += p.cost.limit_weight * band_deviation(pw, 0.0, (*p.power_limit)(k));
    x = ops.step(k, x, u);
    if (!x.allFinite())
      throw std::runtime_error("rollout: non-finite state at step " + std::to_string(k + 1));
    data.temps.push_back(x);
  }
  if (p.terminal_cost.size() > 0) data.cost += p.terminal_cost.dot(data.temps.back());
  return data;
}

} // namespace

double rollout_cost(const TrajectoryProblem& p, const Vec& u_seq, std::vector<Vec>* temps_out) {
  RolloutData data = run_rollout(p, u_seq);
  if (temps_out) *temps_out = std::move(data.temps);
  return data.cost;
}

Vec rollout_grad(const TrajectoryProblem& p, const Vec& u_seq, double* cost_out) {
  RolloutData data = run_rollout(p, u_seq);
  if (cost_out) *cost_out = data.cost;
  PlantOps ops(p);
  int z = p.zones();
  int ad = p.action_dim();
  Vec grad(p.decision_dim());
  Vec lambda = p.terminal_cost.size() > 0 ? Vec(p.terminal_cost) : Vec(Vec::Zero(z));
  for (int k = p.steps - 1; k >= 0; --k) {
    ControlAction u;
    u.mdot = u_seq.segment(k * ad, z);
    u.t_supply = u_seq(k * ad + z);
    const Vec& x = data.temps[static_cast<std::size_t>(k)];

    double coef = p.price(k) * p.cost.hours_per_step;
    if (p.power_limit)
      coef += p.cost.limit_weight *
              band_deviation_grad(data.power[static_cast<std::size_t>(k)], 0.0,
                                  (*p.power_limit)(k));
    double dp_m, dp_t;
    ops.power_grad(k, u, &dp_m, &dp_t);

    grad.segment(k * ad, z) =
        Vec::Constant(z, coef * dp_m) + ops.d_mdot(k, x, u).transpose() * lambda;
    grad(k * ad + z) = coef * dp_t + ops.d_tsup(k, x, u).dot(lambda);

    Vec comfort_grad(z);
    for (int i = 0; i < z; ++i)
      comfort_grad(i) =
          p.cost.comfort_weight * band_deviation_grad(x(i), p.comfort_lo(k), p.comfort_hi(k));
    lambda = ops.d_temps(k, x, u).transpose() * lambda + comfort_grad;
  }
  return grad;
}

namespace {

Vec tile_bounds(const Vec& per_step, int steps) {
  Vec out(per_step.size() * steps);
  for (int k = 0; k < steps; ++k) out.segment(k * per_step.size(), per_step.size()) = per_step;
  return out;
}

} // namespace

Vec solve_projected(const TrajectoryProblem& p, const Vec& u_init, const SolveOptions& opts,
                    SolveReport* report) {
  validate_problem(p);
  require(u_init.size() == p.decision_dim(), "solve_projected: init length");
  double t_start = wall_seconds();
  int dim = p.decision_dim();
  Vec lo = tile_bounds(p.bounds.lower(), p.steps);
  Vec hi = tile_bounds(p.bounds.upper(), p.steps);
  Vec range = hi - lo;
  for (int i = 0; i < dim; ++i)
    require(range(i) > 0, "solve_projected: degenerate action box");

  auto denorm = [&](const Vec& un) { return Vec(lo + un.cwiseProduct(range)); };
  auto clip01 = [](Vec v) { return v.cwiseMax(0.0).cwiseMin(1.0); };

  Vec un = clip01((u_init - lo).cwiseQuotient(range));
  double f = 0;
  Vec g = rollout_grad(p, denorm(un), &f).cwiseProduct(range);
  auto residual = [&](const Vec& point, const Vec& grad_n) {
    return (point - clip01(point - grad_n)).cwiseAbs().maxCoeff();
  };
  double res = residual(un, g);

  SolveReport rep;
  rep.iterations = 0;
  rep.converged = res < opts.tol;

  Vec m = Vec::Zero(dim), v = Vec::Zero(dim);
  double scale = 1.0;
  constexpr double eps = 1e-8;
  for (int it = 1; !rep.converged && it <= opts.max_iters; ++it) {
    rep.iterations = it;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g.cwiseProduct(g);
    double bc1 = 1.0 - std::pow(0.9, it);
    double bc2 = 1.0 - std::pow(0.999, it);
    Vec dir = (m / bc1).cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());

    bool accepted = false;
    double s = scale;
    for (int back = 0; back < 60 && !accepted; ++back) {
      Vec cand = clip01(un - opts.lr * s * dir);
      if ((cand - un).cwiseAbs().maxCoeff() == 0.0) break;
      double fc = rollout_cost(p, denorm(cand));
      if (fc <= f) {
        un = cand;
        f = fc;
        scale = std::min(s * 1.3, 4.0);
        accepted = true;
      } else {
        s *= 0.5;
      }
    }
    if (!accepted) {
      // adaptive direction rejected everywhere; fall back to the raw gradient
      double t = 1.0 / std::max(1.0, g.cwiseAbs().maxCoeff());
      for (int back = 0; back < 60 && !accepted; ++back) {
        Vec cand = clip01(un - t * g);
        if ((cand - un).cwiseAbs().maxCoeff() == 0.0) break;
        double fc = rollout_cost(p, denorm(cand));
        if (fc <= f) {
          un = cand;
          f = fc;
          accepted = true;
        } else {
          t *= 0.5;
        }
      }
    }
    g = rollout_grad(p, denorm(un), &f).cwiseProduct(range);
    res = residual(un, g);
    rep.converged = res < opts.tol;
    if (!accepted && !rep.converged) break;  // stationary under both directions
  }

  rep.objective = f;
  rep.residual = res;
  rep.seconds = wall_seconds() - t_start;
  if (report) *report = rep;
  return denorm(un);
}

FirstActionSensitivity first_action_sensitivity(const TrajectoryProblem& p, const Vec& u_star) {
  validate_problem(p);
  require(p.convex(), "first_action_sensitivity: needs a linearized plant");
  require(u_star.size() == p.decision_dim(), "first_action_sensitivity: solution length");
  const LinearizedModel& lin = std::get<LinearizedModel>(p.plant);
  int z = p.zones();
  int ad = p.action_dim();
  int H = p.steps;
  int dim = p.decision_dim();

  RolloutData data = run_rollout(p, u_star);
  Vec grad = rollout_grad(p, u_star);

  // curvature of the objective in the decision variables
  Mat hess = Mat::Zero(dim, dim);
  Mat cross_state = Mat::Zero(dim, z);   // d^2 J / du dx0
  Mat cross_theta = Mat::Zero(dim, z);   // d^2 J / du dtheta = state map at the horizon end

  // per-step action-block curvature: fan cubic and power-limit penalty
  for (int j = 0; j < H; ++j) {
    ControlAction u;
    u.mdot = u_star.segment(j * ad, z);
    u.t_supply = u_star(j * ad + z);
    double flow = u.mdot.sum();
    double fan_curv = 6.0 * p.power.fan_cubic * flow;
    double energy_coef = p.price(j) * p.cost.hours_per_step;
    hess.block(j * ad, j * ad, z, z).array() += energy_coef * fan_curv;
    if (p.power_limit) {
      double pw = data.power[static_cast<std::size_t>(j)];
      double limit = (*p.power_limit)(j);
      double violation = pw > limit ? pw - limit : (pw < 0.0 ? pw : 0.0);
      if (violation != 0.0) {
        double sm, st;
        lin.chiller_coeffs(j, p.w[j].t_out, &sm, &st);
        Vec dp(ad);
        dp.head(z).array() = sm + 3.0 * p.power.fan_cubic * flow * flow;
        dp(z) = st;
        Mat block = 2.0 * p.cost.limit_weight * (dp * dp.transpose());
        block.topLeftCorner(z, z).array() += 2.0 * p.cost.limit_weight * violation * fan_curv;
        hess.block(j * ad, j * ad, ad, ad) += block;
      }
    }
  }

  // comfort curvature mapped through the affine state sensitivities
  std::vector<Mat> s_to_state(H);  // S_{k,j} for the current k
  Mat state_sens = Mat::Identity(z, z);  // d x_k / d x0
  for (int k = 1; k <= H; ++k) {
    const Mat& f_prev = lin.temp_coef[k - 1];
    for (int j = 0; j < k - 1; ++j) s_to_state[j] = f_prev * s_to_state[j];
    Mat b_prev(z, ad);
    b_prev.leftCols(z) = lin.mdot_coef[k - 1];
    b_prev.col(z) = lin.tsup_coef[k - 1];
    s_to_state[k - 1] = b_prev;
    state_sens = f_prev * state_sens;

    if (k == H) {
      for (int j = 0; j < H; ++j)
        cross_theta.block(j * ad, 0, ad, z) = s_to_state[j].transpose();
    } else {
      Vec active(z);
      bool any = false;
      for (int i = 0; i < z; ++i) {
        const Vec& xk = data.temps[static_cast<std::size_t>(k)];
        bool out = xk(i) < p.comfort_lo(k) || xk(i) > p.comfort_hi(k);
        active(i) = out ? 2.0 * p.cost.comfort_weight : 0.0;
        any = any || out;
      }
      if (any) {
        for (int j = 0; j < k; ++j) {
          Mat dj = active.asDiagonal() * s_to_state[j];  // D_k S_{k,j}
          for (int l = 0; l <= j; ++l) {
            Mat blockjl = s_to_state[l].transpose() * dj;  // S_l' D S_j
            hess.block(l * ad, j * ad, ad, ad) += blockjl;
            if (l != j) hess.block(j * ad, l * ad, ad, ad) += blockjl.transpose();
          }
          cross_state.block(j * ad, 0, ad, z) += dj.transpose() * state_sens;
        }
      }
    }
  }

  // active box constraints: at a bound with the gradient pushing outward
  Vec lo = tile_bounds(p.bounds.lower(), H);
  Vec hi = tile_bounds(p.bounds.upper(), H);
  double kappa = 1e-9 * std::max(1.0, grad.cwiseAbs().maxCoeff());
  std::vector<int> free_idx;
  for (int i = 0; i < dim; ++i) {
    double margin = 1e-9 * (hi(i) - lo(i));
    bool at_lo = u_star(i) <= lo(i) + margin && grad(i) > kappa;
    bool at_hi = u_star(i) >= hi(i) - margin && grad(i) < -kappa;
    if (!at_lo && !at_hi) free_idx.push_back(i);
  }

  FirstActionSensitivity out;
  out.d_terminal = Mat::Zero(ad, z);
  out.d_state = Mat::Zero(ad, z);
  int nf = static_cast<int>(free_idx.size());
  if (nf == 0) return out;

  Mat hess_red(nf, nf);
  Mat rhs(nf, 2 * z);
  for (int a = 0; a < nf; ++a) {
    for (int b = 0; b < nf; ++b) hess_red(a, b) = hess(free_idx[a], free_idx[b]);
    rhs.row(a).head(z) = cross_theta.row(free_idx[a]);
    rhs.row(a).tail(z) = cross_state.row(free_idx[a]);
  }

  Eigen::LDLT<Mat> ldlt(hess_red);
  Mat solution;
  bool ok = ldlt.info() == Eigen::Success;
  if (ok) {
    solution = ldlt.solve(-rhs);
    double resid = (hess_red * solution + rhs).cwiseAbs().maxCoeff();
    ok = resid <= 1e-6 * std::max(1.0, rhs.cwiseAbs().maxCoeff());
  }
  if (!ok) {
    Mat regularized = hess_red + 1e-8 * Mat::Identity(nf, nf);
    solution = Eigen::LDLT<Mat>(regularized).solve(-rhs);
    out.regularized = true;
  }

  for (int a = 0; a < nf; ++a) {
    int i = free_idx[a];
    if (i < ad) {
      out.d_terminal.row(i) = solution.row(a).head(z);
      out.d_state.row(i) = solution.row(a).tail(z);
    }
  }
  return out;
}

} // namespace hvacbench
