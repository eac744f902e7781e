// small dense relu networks with hand-rolled reverse-mode gradients and Adam
#ifndef HVACBENCH_NET_HPP
#define HVACBENCH_NET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "hvacbench/thermal.hpp"

namespace hvacbench {

// relu hidden layers, linear output; optional fixed input normalization
// (x - offset) .* scale baked into the artifact
struct MlpParams {
  std::vector<Mat> weights;  // layer l maps in -> out, stored out x in
  std::vector<Vec> biases;
  Vec input_offset, input_scale;  // empty = identity

  int input_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
  int output_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.back().rows()); }
  int layer_count() const { return static_cast<int>(weights.size()); }
};

// scaled uniform fan-in init, biases zero, deterministic in the seed
MlpParams init_mlp(std::uint64_t seed, int input_dim, const std::vector<int>& hidden,
                   int output_dim);

// intermediate activations recorded by the forward pass
struct GradTape {
  Vec input;                  // normalized input
  std::vector<Vec> preacts;   // one per layer
};

struct BatchTape {
  Mat input;                  // inputs as columns
  std::vector<Mat> preacts;
};

struct MlpGrads {
  std::vector<Mat> weights;
  std::vector<Vec> biases;

  void add_scaled(const MlpGrads& other, double factor);
  void scale(double factor);
  bool all_finite() const;
};
MlpGrads zero_grads(const MlpParams& params);

Vec mlp_forward(const MlpParams& params, const Vec& input, GradTape* tape = nullptr);
// returns d loss / d raw input; accumulates parameter gradients when grads != nullptr
Vec mlp_backward(const MlpParams& params, const GradTape& tape, const Vec& d_output,
                 MlpGrads* grads);

Mat mlp_forward_batch(const MlpParams& params, const Mat& inputs, BatchTape* tape = nullptr);
Mat mlp_backward_batch(const MlpParams& params, const BatchTape& tape, const Mat& d_outputs,
                       MlpGrads* grads);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct AdamState {
  std::vector<Mat> m_w, v_w;
  std::vector<Vec> m_b, v_b;
  long step = 0;
};
AdamState zero_adam(const MlpParams& params);
// bias-corrected update; throws on non-finite gradients (training halt signal)
void adam_step(MlpParams& params, AdamState& state, const MlpGrads& grads,
               const AdamConfig& cfg);

struct AdamVecState {
  Vec m, v;
  long step = 0;
};
AdamVecState zero_adam_vec(int dim);
void adam_step_vec(Vec& x, AdamVecState& state, const Vec& grad, const AdamConfig& cfg);

// ---- action heads ----

// action = mid + halfrange * tanh(y); output kept strictly interior
Vec squash_to_box(const Vec& y, const ActionBounds& bounds);
// elementwise d action / d y at the squash output
Vec squash_jacobian_diag(const Vec& y, const ActionBounds& bounds);
Vec action_to_vec(const ControlAction& u);
ControlAction vec_to_action(const Vec& u);
// map to [-1, 1] box coordinates and back
Vec normalize_action_vec(const Vec& u, const ActionBounds& bounds);
Vec denormalize_action_vec(const Vec& s, const ActionBounds& bounds);

// deterministic policy: squashed network output, strictly inside the box
ControlAction policy_act(const MlpParams& params, const Vec& obs, const ActionBounds& bounds);

struct PolicySample {
  ControlAction action;  // clipped to the box, applied to the plant
  Vec sample;            // pre-clip draw in normalized box coordinates
  double log_prob;       // density of the pre-clip draw
};
// diagonal Gaussian in normalized coordinates around the squashed mean,
// state-independent log standard deviations
PolicySample policy_sample(const MlpParams& params, const Vec& log_std, const Vec& obs,
                           const ActionBounds& bounds, Rng& rng);
double gaussian_log_prob(const Vec& mean, const Vec& log_std, const Vec& sample);

void save_mlp(const std::string& path, const MlpParams& params, const Vec& log_std = Vec(),
              const nlohmann::json& meta = nlohmann::json::object());
MlpParams load_mlp(const std::string& path, Vec* log_std_out = nullptr,
                   nlohmann::json* meta_out = nullptr);

} // namespace hvacbench

#endif
