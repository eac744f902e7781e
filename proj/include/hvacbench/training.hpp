// offline trainers: policy learning through the unrolled plant, learned
// terminal costs for receding-horizon control, and clipped-ratio policy
// optimization with advantage estimation
#ifndef HVACBENCH_TRAINING_HPP
#define HVACBENCH_TRAINING_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "hvacbench/controllers.hpp"

namespace hvacbench {

struct TrainRunConfig {
  int batch = 4;                   // scenarios per update
  int epochs = 25;                 // passes over the scenario set
  double lr = 1e-3;                // presets of interest: 1e-3 and 5e-5
  std::uint64_t seed = 1;
  double action_penalty = 1.0;     // weight on pre-squash bound violations
  int eval_every = 1;              // updates between learning-curve samples
  int lookahead = 12;              // forecast window / planning horizon K
  std::vector<int> hidden = {64, 64};
  SolveOptions solve;              // receding-horizon solves (terminal-cost training)
};
void validate_train_config(const TrainRunConfig& cfg, int scenario_count);

struct PpoConfig {
  double clip = 0.2;
  double gae_lambda = 0.95;
  double discount = 0.99;
  int epochs = 4;                  // passes over each experience batch
  int minibatch = 256;
  double value_coef = 0.5;
  int experience_episodes = 4;     // episodes gathered per update
};
void validate_ppo(const PpoConfig& cfg);

struct CurvePoint {
  int episodes = 0;        // training episodes consumed so far
  double wall_seconds = 0; // elapsed trainer wall time at the sample
  double mean_cost = 0;    // deterministic closed-loop mean cost, train set
};
struct LearningCurve {
  std::vector<CurvePoint> points;
};

// csv with header episodes,wall_seconds,mean_cost; episodes must increase
void save_learning_curve(const std::string& path, const LearningCurve& curve);
LearningCurve load_learning_curve(const std::string& path);
void write_run_manifest(const std::string& path, const nlohmann::json& doc);

// deterministic closed-loop cost of a policy artifact over one day
double policy_day_cost(const ControllerContext& ctx, const MlpParams& params, int lookahead,
                       const DayScenario& day);

// per-dimension input normalization fitted from a constant-action sweep over
// the scenarios; written into the artifact so consumers need no side table
void fit_observation_scaling(const ControllerContext& ctx, const std::vector<DayScenario>& days,
                             int lookahead, MlpParams& params);

// ---- differentiable policy training ----

// mean over the batch of the full-day realized cost plus action_penalty times
// the squared pre-squash bound violation; parameter gradient is exact through
// the unrolled closed loop.  throws on non-finite loss or states.
double dpc_batch_loss(const ControllerContext& ctx, const std::vector<const DayScenario*>& batch,
                      const MlpParams& params, double action_penalty, int lookahead,
                      MlpGrads* grads = nullptr);

struct DpcResult {
  MlpParams policy;
  LearningCurve curve;
};
DpcResult train_dpc(const ControllerContext& ctx, const std::vector<DayScenario>& scenarios,
                    const TrainRunConfig& cfg);

// ---- terminal-cost training ----

// realized closed-loop day cost when every step solves the convexified
// lookahead problem under the table's hourly terminal weights.  grad, when
// given, receives d cost / d flattened table (slot-major) chained through the
// solved first actions; steps whose sensitivity is unavailable contribute
// zero and are counted in failures.
double mpc_cl_day_cost(const ControllerContext& ctx, const DayScenario& day,
                       const TerminalCostTable& table, int lookahead, const SolveOptions& opts,
                       Vec* grad = nullptr, int* failures = nullptr);

struct MpcClResult {
  TerminalCostTable table;
  LearningCurve curve;
  int sensitivity_failures = 0;
};
MpcClResult train_mpc_cl(const ControllerContext& ctx, const std::vector<DayScenario>& scenarios,
                         const TrainRunConfig& cfg);

// ---- reinforcement learning ----

struct ExperienceTuple {
  Vec observation;
  Vec sample;        // pre-clip draw in normalized action coordinates
  double log_prob = 0;
  double reward = 0; // negated step cost
  Vec next_observation;
  bool done = false;
};

// closed-loop episodes under the stochastic policy; scenario picked per
// episode by the rng; mean_cost, when given, receives the mean episode cost
std::vector<ExperienceTuple> collect_experience(const ControllerContext& ctx,
                                                const std::vector<DayScenario>& days,
                                                const MlpParams& actor, const Vec& log_std,
                                                int lookahead, int episodes, Rng& rng,
                                                double* mean_cost = nullptr);

// delta_t = r_t + discount * V(s') * (1 - done) - V(s); advantages are the
// exponentially weighted sums, normalized to zero mean / unit variance;
// targets keep the raw (unnormalized) advantage plus V(s)
void compute_gae(const std::vector<ExperienceTuple>& batch, double discount, double lambda,
                 const MlpParams& critic, Vec* advantages, Vec* targets);

// min(ratio * advantage, clip(ratio, 1 - clip, 1 + clip) * advantage)
double ppo_surrogate(double ratio, double advantage, double clip);

struct PpoStats {
  int minibatches = 0;
  int skipped = 0; // minibatches dropped for ratio overflow
};
PpoStats ppo_update(const std::vector<ExperienceTuple>& batch, const Vec& advantages,
                    const Vec& targets, MlpParams& actor, Vec& log_std, MlpParams& critic,
                    AdamState& actor_opt, AdamVecState& log_std_opt, AdamState& critic_opt,
                    const PpoConfig& cfg, double lr, Rng& rng);

struct RlcResult {
  MlpParams actor;
  Vec log_std;
  MlpParams critic;
  LearningCurve curve;
  int skipped_minibatches = 0;
};
RlcResult train_rlc(const ControllerContext& ctx, const std::vector<DayScenario>& scenarios,
                    const TrainRunConfig& cfg, const PpoConfig& ppo);

} // namespace hvacbench

#endif
