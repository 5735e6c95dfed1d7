#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "routenav/env.hpp"
#include "routenav/net.hpp"
#include "routenav/random.hpp"

namespace routenav {

struct TrainerConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  int epochs_per_update = 4;
  std::size_t rollout_horizon = 128;
  std::size_t minibatch_sequences = 8;
  std::size_t bptt_truncation = 64;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double lr = 3e-4;
  std::size_t n_envs = 16;
  int trials = 5;
  std::size_t max_episodes = 20000;
  // Gradients are rescaled to this global norm when larger; 0 disables.
  double max_grad_norm = 0.5;
  std::size_t eval_interval = 100;
  std::size_t eval_episodes = 100;
  bool adapt_curriculum = true;
  std::size_t curriculum_window = 500;
  double promote_threshold = 0.8;
  double divergence_threshold = 1e3;
  // Off by default so logs are byte-stable across runs.
  bool record_wall_clock = false;
  // Rollout, loss and evaluation passes; Adam and the master weights stay
  // double either way.
  Precision precision = Precision::float64;

  void validate() const;
};

// Time-major storage: column t * n_envs + slot.
struct RolloutBatch {
  std::size_t horizon = 0;
  std::size_t n_envs = 0;
  Eigen::MatrixXd inputs;                           // policy input rows x (T*B)
  std::vector<std::span<const std::uint8_t>> images;  // raw-image mode only
  std::vector<int> actions;
  std::vector<int> prev_action;            // action fed with this step, -1 = none
  std::vector<std::uint8_t> episode_start;  // hidden state zeroed before this step
  Eigen::VectorXd log_probs;
  Eigen::VectorXd rewards;
  Eigen::VectorXd values;
  std::vector<std::uint8_t> dones;
  Eigen::VectorXd bootstrap_values;  // V(s_T) per slot
  // Hidden state at the first step of each BPTT segment: [segment] -> H x B.
  std::vector<Eigen::MatrixXd> h_snapshots;
  std::vector<Eigen::MatrixXd> c_snapshots;
  double mean_abs_logit = 0.0;

  std::size_t columns() const { return horizon * n_envs; }
  std::size_t column(std::size_t t, std::size_t slot) const { return t * n_envs + slot; }
};

struct EpisodeRecord {
  double episode_return = 0.0;
  std::size_t steps = 0;
  bool completed = false;
};

// Recurrent and bookkeeping state carried across rollouts.
struct RolloutState {
  HiddenBatch hidden;
  std::vector<std::uint8_t> fresh;  // next step starts an episode
  std::vector<double> running_return;

  static RolloutState start(const NetShape& shape, std::size_t n_envs);
};

// Replaces sampling, e.g. with a scripted policy. Log-probabilities are still
// taken from the network.
using ActionOverride = std::function<Action(const EnvState&, const Observation&)>;

struct RolloutResult {
  RolloutBatch batch;
  std::vector<EpisodeRecord> finished;
};

RolloutResult collect_rollouts(const ComputeParams& params, VectorEnv& envs, RolloutState& state,
                               std::size_t horizon, std::size_t segment_length, Rng& rng,
                               const ActionOverride& override_action = {});
RolloutResult collect_rollouts(const PolicyParams& params, VectorEnv& envs, RolloutState& state,
                               std::size_t horizon, std::size_t segment_length, Rng& rng,
                               const ActionOverride& override_action = {});

struct GaeResult {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

// One slot's sequence. done[t] cuts bootstrapping after step t; `bootstrap` is
// V(s_T) used when the last step is not terminal.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda);
GaeResult compute_gae(const RolloutBatch& batch, double gamma, double lambda);

// Zero mean, unit variance in place (unchanged for fewer than two entries).
void normalize_advantages(Eigen::VectorXd& advantages);

struct LossStats {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

struct LossTerms {
  LossStats stats;
  Eigen::MatrixXd dlogits;  // dLoss/dlogits, |A| x M
  Eigen::VectorXd dvalues;  // dLoss/dvalues, M
};

// Clipped surrogate + value + entropy loss, averaged over the M columns, and
// its gradient with respect to the network outputs.
LossTerms ppo_loss_terms(const Eigen::MatrixXd& logits, const Eigen::VectorXd& values, std::span<const int> actions,
                         const Eigen::VectorXd& old_log_probs, const Eigen::VectorXd& advantages,
                         const Eigen::VectorXd& returns, const TrainerConfig& config);

struct Minibatch {
  SequenceInput input;
  std::vector<int> actions;
  Eigen::VectorXd old_log_probs;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

// Segments are (slot, segment index) pairs of length batch.horizon / n_segments.
Minibatch make_minibatch(const RolloutBatch& batch, const GaeResult& gae,
                         std::span<const std::pair<std::size_t, std::size_t>> segments, std::size_t segment_length);

struct LossAndGradient {
  LossStats stats;
  Gradients gradients;
};

LossAndGradient ppo_loss(const PolicyParams& params, const Minibatch& minibatch, const TrainerConfig& config);

struct TrainingRow {
  int trial = 0;
  std::uint64_t seed = 0;
  std::size_t episode = 0;
  double mean_reward = 0.0;
  double mean_steps = 0.0;
  double success_rate = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double wall_clock_s = 0.0;
  int level = 1;

  friend bool operator==(const TrainingRow&, const TrainingRow&) = default;
};

struct TrialResult {
  int trial = 0;
  std::uint64_t seed = 0;
  PolicyParams params;
  std::vector<TrainingRow> rows;
  std::size_t episodes = 0;
  std::size_t env_steps = 0;
  bool stopped_early = false;
};

struct TrainingLog {
  std::vector<TrialResult> trials;

  std::vector<TrainingRow> rows() const;
};

// Called after each evaluation row; returning true ends the trial.
using TrainCallback = std::function<bool(const TrialResult& progress, const PolicyParams& params)>;

struct TrainSetup {
  TrainerConfig trainer;
  EnvConfig env;
  NetShape shape;
  std::uint64_t seed = 0;
  // Parameter initialization override; trials otherwise init from their seed.
  std::optional<PolicyParams> initial_params;
};

// Seed of trial k.
std::uint64_t trial_seed(std::uint64_t seed, int trial);

TrialResult train_trial(const TrainSetup& setup, const Traversal& route, int trial,
                        const TrainCallback& callback = {});
TrainingLog train(const TrainSetup& setup, const Traversal& route, const TrainCallback& callback = {});

}  // namespace routenav
