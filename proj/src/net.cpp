#include "hvacbench/net.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace hvacbench {

namespace {

Vec apply_normalization(const MlpParams& p, const Vec& x) {
  if (p.input_offset.size() == 0) return x;
  return (x - p.input_offset).cwiseProduct(p.input_scale);
}

} // namespace

MlpParams init_mlp(std::uint64_t seed, int input_dim, const std::vector<int>& hidden,
                   int output_dim) {
  if (input_dim < 1 || output_dim < 1) throw std::invalid_argument("init_mlp: bad dimensions");
  Rng rng(derive_seed(seed, "mlp_init"));
  MlpParams p;
  std::vector<int> dims;
  dims.push_back(input_dim);
  for (int hdim : hidden) dims.push_back(hdim);
  dims.push_back(output_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    Mat w(dims[l + 1], dims[l]);
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vec::Zero(dims[l + 1]));
  }
  return p;
}

void MlpGrads::add_scaled(const MlpGrads& other, double factor) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += factor * other.weights[l];
    biases[l] += factor * other.biases[l];
  }
}

void MlpGrads::scale(double factor) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] *= factor;
    biases[l] *= factor;
  }
}

bool MlpGrads::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l)
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  return true;
}

MlpGrads zero_grads(const MlpParams& params) {
  MlpGrads g;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    g.weights.push_back(Mat::Zero(params.weights[l].rows(), params.weights[l].cols()));
    g.biases.push_back(Vec::Zero(params.biases[l].size()));
  }
  return g;
}

Vec mlp_forward(const MlpParams& params, const Vec& input, GradTape* tape) {
  if (input.size() != params.input_dim())
    throw std::invalid_argument("mlp_forward: input dimension mismatch");
  Vec x = apply_normalization(params, input);
  if (tape) {
    tape->input = x;
    tape->preacts.clear();
  }
  int depth = params.layer_count();
  for (int l = 0; l < depth; ++l) {
    Vec z = params.weights[l] * x + params.biases[l];
    if (tape) tape->preacts.push_back(z);
    x = l + 1 < depth ? z.cwiseMax(0.0) : z;
  }
  return x;
}

Vec mlp_backward(const MlpParams& params, const GradTape& tape, const Vec& d_output,
                 MlpGrads* grads) {
  int depth = params.layer_count();
  Vec delta = d_output;
  for (int l = depth - 1; l >= 0; --l) {
    if (l < depth - 1)  // relu mask; subgradient 0 at the kink
      delta = (tape.preacts[l].array() > 0).select(delta, 0.0);
    const Vec& layer_in =
        l == 0 ? tape.input : Vec(tape.preacts[l - 1].cwiseMax(0.0));
    if (grads) {
      grads->weights[l] += delta * layer_in.transpose();
      grads->biases[l] += delta;
    }
    delta = params.weights[l].transpose() * delta;
  }
  if (params.input_offset.size() > 0) delta = delta.cwiseProduct(params.input_scale);
  return delta;
}

Mat mlp_forward_batch(const MlpParams& params, const Mat& inputs, BatchTape* tape) {
  if (inputs.rows() != params.input_dim())
    throw std::invalid_argument("mlp_forward_batch: input dimension mismatch");
  Mat x = inputs;
  if (params.input_offset.size() > 0)
    x = (x.colwise() - params.input_offset).array().colwise() * params.input_scale.array();
  if (tape) {
    tape->input = x;
    tape->preacts.clear();
  }
  int depth = params.layer_count();
  for (int l = 0; l < depth; ++l) {
    Mat z = (params.weights[l] * x).colwise() + params.biases[l];
    if (tape) tape->preacts.push_back(z);
    x = l + 1 < depth ? z.cwiseMax(0.0) : z;
  }
  return x;
}

Mat mlp_backward_batch(const MlpParams& params, const BatchTape& tape, const Mat& d_outputs,
                       MlpGrads* grads) {
  int depth = params.layer_count();
  Mat delta = d_outputs;
  for (int l = depth - 1; l >= 0; --l) {
    if (l < depth - 1)
      delta = (tape.preacts[l].array() > 0).select(delta, 0.0);
    const Mat layer_in = l == 0 ? tape.input : Mat(tape.preacts[l - 1].cwiseMax(0.0));
    if (grads) {
      grads->weights[l] += delta * layer_in.transpose();
      grads->biases[l] += delta.rowwise().sum();
    }
    delta = params.weights[l].transpose() * delta;
  }
  if (params.input_offset.size() > 0)
    delta = delta.array().colwise() * params.input_scale.array();
  return delta;
}

AdamState zero_adam(const MlpParams& params) {
  AdamState s;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    s.m_w.push_back(Mat::Zero(params.weights[l].rows(), params.weights[l].cols()));
    s.v_w.push_back(Mat::Zero(params.weights[l].rows(), params.weights[l].cols()));
    s.m_b.push_back(Vec::Zero(params.biases[l].size()));
    s.v_b.push_back(Vec::Zero(params.biases[l].size()));
  }
  return s;
}

namespace {

template <typename T>
void adam_update(T& x, T& m, T& v, const T& g, long step, const AdamConfig& cfg) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  x -= (cfg.lr / bc1) * (m.array() / ((v.array() / bc2).sqrt() + cfg.eps)).matrix();
}

} // namespace

void adam_step(MlpParams& params, AdamState& state, const MlpGrads& grads,
               const AdamConfig& cfg) {
  if (!grads.all_finite()) throw std::runtime_error("adam_step: non-finite gradient");
  ++state.step;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    adam_update(params.weights[l], state.m_w[l], state.v_w[l], grads.weights[l], state.step, cfg);
    adam_update(params.biases[l], state.m_b[l], state.v_b[l], grads.biases[l], state.step, cfg);
  }
}

AdamVecState zero_adam_vec(int dim) {
  AdamVecState s;
  s.m = Vec::Zero(dim);
  s.v = Vec::Zero(dim);
  return s;
}

void adam_step_vec(Vec& x, AdamVecState& state, const Vec& grad, const AdamConfig& cfg) {
  if (!grad.allFinite()) throw std::runtime_error("adam_step: non-finite gradient");
  ++state.step;
  adam_update(x, state.m, state.v, grad, state.step, cfg);
}

// ---- action heads ----

namespace {

// keeps tanh output strictly inside (-1, 1) in floating point
inline double interior_tanh(double y) {
  double t = std::tanh(y);
  constexpr double margin = 1.0 - 1e-12;
  return std::min(std::max(t, -margin), margin);
}

} // namespace

Vec squash_to_box(const Vec& y, const ActionBounds& bounds) {
  Vec lo = bounds.lower(), hi = bounds.upper();
  Vec out(y.size());
  for (int i = 0; i < y.size(); ++i) {
    double mid = 0.5 * (lo(i) + hi(i));
    double half = 0.5 * (hi(i) - lo(i));
    out(i) = mid + half * interior_tanh(y(i));
  }
  return out;
}

Vec squash_jacobian_diag(const Vec& y, const ActionBounds& bounds) {
  Vec lo = bounds.lower(), hi = bounds.upper();
  Vec out(y.size());
  for (int i = 0; i < y.size(); ++i) {
    double t = interior_tanh(y(i));
    out(i) = 0.5 * (hi(i) - lo(i)) * (1.0 - t * t);
  }
  return out;
}

Vec action_to_vec(const ControlAction& u) {
  Vec v(u.mdot.size() + 1);
  v.head(u.mdot.size()) = u.mdot;
  v(u.mdot.size()) = u.t_supply;
  return v;
}

ControlAction vec_to_action(const Vec& u) {
  ControlAction a;
  a.mdot = u.head(u.size() - 1);
  a.t_supply = u(u.size() - 1);
  return a;
}

Vec normalize_action_vec(const Vec& u, const ActionBounds& bounds) {
  Vec lo = bounds.lower(), hi = bounds.upper();
  return (2.0 * (u - lo).array() / (hi - lo).array() - 1.0).matrix();
}

Vec denormalize_action_vec(const Vec& s, const ActionBounds& bounds) {
  Vec lo = bounds.lower(), hi = bounds.upper();
  return (lo.array() + 0.5 * (s.array() + 1.0) * (hi - lo).array()).matrix();
}

ControlAction policy_act(const MlpParams& params, const Vec& obs, const ActionBounds& bounds) {
  Vec y = mlp_forward(params, obs);
  if (y.size() != bounds.dim())
    throw std::invalid_argument("policy_act: network output does not match the action box");
  return vec_to_action(squash_to_box(y, bounds));
}

double gaussian_log_prob(const Vec& mean, const Vec& log_std, const Vec& sample) {
  double lp = 0.0;
  for (int i = 0; i < mean.size(); ++i) {
    double sigma = std::exp(log_std(i));
    double zscore = (sample(i) - mean(i)) / sigma;
    lp += -0.5 * zscore * zscore - log_std(i) - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

PolicySample policy_sample(const MlpParams& params, const Vec& log_std, const Vec& obs,
                           const ActionBounds& bounds, Rng& rng) {
  Vec y = mlp_forward(params, obs);
  if (y.size() != bounds.dim() || log_std.size() != y.size())
    throw std::invalid_argument("policy_sample: dimension mismatch");
  Vec mean(y.size());
  for (int i = 0; i < y.size(); ++i) mean(i) = interior_tanh(y(i));
  PolicySample out;
  out.sample = Vec(y.size());
  for (int i = 0; i < y.size(); ++i)
    out.sample(i) = mean(i) + std::exp(log_std(i)) * rng.normal();
  out.log_prob = gaussian_log_prob(mean, log_std, out.sample);
  Vec clipped = out.sample.cwiseMax(-1.0).cwiseMin(1.0);
  out.action = vec_to_action(denormalize_action_vec(clipped, bounds));
  return out;
}

// ---- artifact io ----

namespace {

nlohmann::json mat_json(const Mat& m) {
  std::vector<double> flat(static_cast<std::size_t>(m.size()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      flat[static_cast<std::size_t>(r) * m.cols() + c] = m(r, c);
  return nlohmann::json(flat);
}

std::vector<double> vec_std(const Vec& v) { return {v.begin(), v.end()}; }

Vec vec_from(const nlohmann::json& j) {
  auto flat = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(flat.data(), static_cast<int>(flat.size()));
}

} // namespace

void save_mlp(const std::string& path, const MlpParams& params, const Vec& log_std,
              const nlohmann::json& meta) {
  nlohmann::json j;
  j["version"] = 1;
  j["activation"] = "relu";
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    layers.push_back({{"rows", params.weights[l].rows()},
                      {"cols", params.weights[l].cols()},
                      {"w", mat_json(params.weights[l])},
                      {"b", vec_std(params.biases[l])}});
  }
  j["layers"] = layers;
  j["input_offset"] = vec_std(params.input_offset);
  j["input_scale"] = vec_std(params.input_scale);
  if (log_std.size() > 0) j["log_std"] = vec_std(log_std);
  j["meta"] = meta;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("network artifact: cannot write " + path);
  out << j.dump(2) << "\n";
}

MlpParams load_mlp(const std::string& path, Vec* log_std_out, nlohmann::json* meta_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("network artifact: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("network artifact: malformed json: " + std::string(e.what()));
  }
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw std::runtime_error("network artifact: unsupported version");
  MlpParams p;
  for (const auto& layer : j.at("layers")) {
    int rows = layer.at("rows").get<int>();
    int cols = layer.at("cols").get<int>();
    auto flat = layer.at("w").get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != rows * cols)
      throw std::runtime_error("network artifact: bad weight count");
    Mat w(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) w(r, c) = flat[static_cast<std::size_t>(r) * cols + c];
    p.weights.push_back(std::move(w));
    p.biases.push_back(vec_from(layer.at("b")));
  }
  p.input_offset = vec_from(j.at("input_offset"));
  p.input_scale = vec_from(j.at("input_scale"));
  if (log_std_out) *log_std_out = j.contains("log_std") ? vec_from(j["log_std"]) : Vec();
  if (meta_out) *meta_out = j.value("meta", nlohmann::json::object());
  return p;
}

} // namespace hvacbench
