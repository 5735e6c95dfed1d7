#include "routenav/ppo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "routenav/error.hpp"
#include "routenav/eval.hpp"

namespace routenav {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Index idx(std::size_t n) { return static_cast<Index>(n); }

int sample_action(const VectorXd& probs, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (int a = 0; a < kNumActions - 1; ++a) {
    acc += probs[a];
    if (u < acc) return a;
  }
  return kNumActions - 1;
}

}  // namespace

void TrainerConfig::validate() const {
  require(gamma > 0.0 && gamma <= 1.0, ErrorKind::config, "trainer: gamma must be in (0, 1]");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, ErrorKind::config, "trainer: gae_lambda must be in [0, 1]");
  require(clip > 0.0, ErrorKind::config, "trainer: clip must be > 0");
  require(epochs_per_update >= 1, ErrorKind::config, "trainer: epochs_per_update must be >= 1");
  require(rollout_horizon >= 1, ErrorKind::config, "trainer: rollout_horizon must be >= 1");
  require(bptt_truncation >= 1 && rollout_horizon % bptt_truncation == 0, ErrorKind::config,
          "trainer: bptt_truncation must divide rollout_horizon");
  require(minibatch_sequences >= 1, ErrorKind::config, "trainer: minibatch_sequences must be >= 1");
  require(entropy_coef >= 0.0 && value_coef >= 0.0, ErrorKind::config, "trainer: loss coefficients must be >= 0");
  require(lr >= 0.0, ErrorKind::config, "trainer: lr must be >= 0");
  require(n_envs >= 1, ErrorKind::config, "trainer: n_envs must be >= 1");
  require(trials >= 1, ErrorKind::config, "trainer: trials must be >= 1");
  require(eval_interval >= 1 && eval_episodes >= 1, ErrorKind::config,
          "trainer: eval_interval and eval_episodes must be >= 1");
  require(curriculum_window >= 1 && promote_threshold >= 0.0 && promote_threshold <= 1.0, ErrorKind::config,
          "trainer: invalid curriculum settings");
  require(max_grad_norm >= 0.0 && divergence_threshold > 0.0, ErrorKind::config,
          "trainer: invalid gradient guard settings");
}

RolloutState RolloutState::start(const NetShape& shape, std::size_t n_envs) {
  return {HiddenBatch::zeros(shape, n_envs), std::vector<std::uint8_t>(n_envs, 1), std::vector<double>(n_envs, 0.0)};
}

RolloutResult collect_rollouts(const PolicyParams& params, VectorEnv& envs, RolloutState& state,
                               std::size_t horizon, std::size_t segment_length, Rng& rng,
                               const ActionOverride& override_action) {
  return collect_rollouts(ComputeParams(params), envs, state, horizon, segment_length, rng, override_action);
}

RolloutResult collect_rollouts(const ComputeParams& params, VectorEnv& envs, RolloutState& state,
                               std::size_t horizon, std::size_t segment_length, Rng& rng,
                               const ActionOverride& override_action) {
  require(horizon >= 1 && segment_length >= 1 && horizon % segment_length == 0, ErrorKind::config,
          "rollout: segment length must divide the horizon");
  const std::size_t n = envs.size();
  require(state.hidden.h.cols() == idx(n), ErrorKind::shape, "rollout state does not match the env batch");
  const NetShape& shape = params.shape();

  RolloutResult result;
  RolloutBatch& b = result.batch;
  b.horizon = horizon;
  b.n_envs = n;
  const std::size_t cols = horizon * n;
  b.inputs.resize(idx(shape.conv ? 1 : shape.input_dim), idx(cols));
  if (shape.conv) b.images.resize(cols);
  b.actions.resize(cols);
  b.prev_action.resize(cols);
  b.episode_start.resize(cols);
  b.log_probs.resize(idx(cols));
  b.rewards.resize(idx(cols));
  b.values.resize(idx(cols));
  b.dones.resize(cols);

  std::vector<StepInput> inputs(n);
  std::vector<Action> actions(n);
  double abs_logit_sum = 0.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    if (t % segment_length == 0) {
      b.h_snapshots.push_back(state.hidden.h);
      b.c_snapshots.push_back(state.hidden.c);
    }
    const auto& obs = envs.observations();
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t col = b.column(t, s);
      inputs[s] = step_input(obs[s]);
      b.inputs.col(idx(col)) = Eigen::Map<const VectorXd>(inputs[s].bimodal.data(), idx(inputs[s].bimodal.size()));
      if (shape.conv) b.images[col] = inputs[s].image;
      b.prev_action[col] = state.hidden.prev_action[s];
      b.episode_start[col] = state.fresh[s];
    }
    const BatchOutput out = forward_batch(params, inputs, state.hidden);
    abs_logit_sum += out.logits.cwiseAbs().sum();
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t col = b.column(t, s);
      const VectorXd logits = out.logits.col(idx(s));
      int a = 0;
      if (override_action) {
        a = static_cast<int>(override_action(envs.states()[s], obs[s]));
      } else {
        a = sample_action(softmax(logits), rng);
      }
      actions[s] = static_cast<Action>(a);
      b.actions[col] = a;
      b.log_probs[idx(col)] = log_softmax_at(logits, a);
      b.values[idx(col)] = out.values[idx(s)];
    }
    const auto stepped = envs.step(actions);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t col = b.column(t, s);
      b.rewards[idx(col)] = stepped[s].reward;
      b.dones[col] = stepped[s].done ? 1 : 0;
      state.running_return[s] += stepped[s].reward;
      if (stepped[s].done) {
        result.finished.push_back({state.running_return[s], stepped[s].final_state.steps_taken,
                                   stepped[s].final_state.outcome == Outcome::completed});
        state.running_return[s] = 0.0;
        state.hidden.reset(s);
        state.fresh[s] = 1;
      } else {
        state.hidden.prev_action[s] = b.actions[col];
        state.fresh[s] = 0;
      }
    }
  }
  b.mean_abs_logit = abs_logit_sum / static_cast<double>(cols * kNumActions);

  // Bootstrap values from the states the next rollout will start in.
  const auto& obs = envs.observations();
  for (std::size_t s = 0; s < n; ++s) inputs[s] = step_input(obs[s]);
  HiddenBatch probe = state.hidden;
  b.bootstrap_values = forward_batch(params, inputs, probe).values;
  return result;
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  require(values.size() == n && dones.size() == n, ErrorKind::shape, "gae: rewards, values and dones differ in length");
  GaeResult r{VectorXd(idx(n)), VectorXd(idx(n))};
  double next_value = bootstrap;
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    r.advantages[idx(t)] = next_adv;
    r.returns[idx(t)] = next_adv + values[t];
    next_value = values[t];
  }
  return r;
}

GaeResult compute_gae(const RolloutBatch& batch, double gamma, double lambda) {
  const std::size_t T = batch.horizon, B = batch.n_envs;
  GaeResult out{VectorXd(idx(T * B)), VectorXd(idx(T * B))};
  std::vector<double> r(T), v(T);
  std::vector<std::uint8_t> d(T);
  for (std::size_t s = 0; s < B; ++s) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t col = batch.column(t, s);
      r[t] = batch.rewards[idx(col)];
      v[t] = batch.values[idx(col)];
      d[t] = batch.dones[col];
    }
    const GaeResult one = compute_gae(r, v, d, batch.bootstrap_values[idx(s)], gamma, lambda);
    for (std::size_t t = 0; t < T; ++t) {
      out.advantages[idx(batch.column(t, s))] = one.advantages[idx(t)];
      out.returns[idx(batch.column(t, s))] = one.returns[idx(t)];
    }
  }
  return out;
}

void normalize_advantages(VectorXd& advantages) {
  if (advantages.size() < 2) return;
  const double mean = advantages.mean();
  advantages.array() -= mean;
  const double var = advantages.squaredNorm() / static_cast<double>(advantages.size());
  if (var > 0.0) advantages /= std::sqrt(var);
  advantages.array() -= advantages.mean();
}

LossTerms ppo_loss_terms(const MatrixXd& logits, const VectorXd& values, std::span<const int> actions,
                         const VectorXd& old_log_probs, const VectorXd& advantages, const VectorXd& returns,
                         const TrainerConfig& config) {
  const Index m = logits.cols();
  require(m >= 1 && logits.rows() == kNumActions, ErrorKind::shape, "ppo loss: empty or malformed logits");
  require(values.size() == m && old_log_probs.size() == m && advantages.size() == m && returns.size() == m &&
              actions.size() == static_cast<std::size_t>(m),
          ErrorKind::shape, "ppo loss: minibatch fields differ in length");
  const double inv_m = 1.0 / static_cast<double>(m);
  LossTerms out;
  out.dlogits.resize(kNumActions, m);
  out.dvalues.resize(m);
  double policy = 0.0, value = 0.0, entropy = 0.0, clipped = 0.0;
  for (Index j = 0; j < m; ++j) {
    const VectorXd z = logits.col(j);
    const double mx = z.maxCoeff();
    const VectorXd logp = (z.array() - mx - std::log((z.array() - mx).exp().sum())).matrix();
    const VectorXd pi = logp.array().exp().matrix();
    const double h = -pi.dot(logp);
    const int a = actions[static_cast<std::size_t>(j)];
    const double ratio = std::exp(logp[a] - old_log_probs[j]);
    require(std::isfinite(ratio), ErrorKind::numeric, "ppo loss: non-finite probability ratio");
    const double adv = advantages[j];
    const double unclipped = ratio * adv;
    const double bounded = std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip) * adv;
    const bool clip_active = bounded < unclipped;
    policy -= std::min(unclipped, bounded);
    clipped += clip_active ? 1.0 : 0.0;
    entropy += h;

    VectorXd d = config.entropy_coef * (pi.array() * (logp.array() + h)).matrix();
    if (!clip_active) {
      d += adv * ratio * pi;
      d[a] -= adv * ratio;
    }
    out.dlogits.col(j) = d * inv_m;

    const double err = values[j] - returns[j];
    value += err * err;
    out.dvalues[j] = 2.0 * config.value_coef * err * inv_m;
  }
  out.stats.policy_loss = policy * inv_m;
  out.stats.value_loss = value * inv_m;
  out.stats.entropy = entropy * inv_m;
  out.stats.clip_fraction = clipped * inv_m;
  out.stats.loss =
      out.stats.policy_loss + config.value_coef * out.stats.value_loss - config.entropy_coef * out.stats.entropy;
  return out;
}

Minibatch make_minibatch(const RolloutBatch& batch, const GaeResult& gae,
                         std::span<const std::pair<std::size_t, std::size_t>> segments, std::size_t segment_length) {
  const std::size_t k = segments.size();
  const std::size_t cols = k * segment_length;
  require(k >= 1, ErrorKind::shape, "minibatch needs at least one segment");
  Minibatch mb;
  SequenceInput& in = mb.input;
  in.steps = segment_length;
  in.batch = k;
  in.bimodal.resize(batch.inputs.rows(), idx(cols));
  if (!batch.images.empty()) in.images.resize(cols);
  in.prev_action.resize(cols);
  in.episode_start.resize(cols);
  const Index h = batch.h_snapshots.front().rows();
  in.h0.resize(h, idx(k));
  in.c0.resize(h, idx(k));
  mb.actions.resize(cols);
  mb.old_log_probs.resize(idx(cols));
  mb.advantages.resize(idx(cols));
  mb.returns.resize(idx(cols));
  for (std::size_t j = 0; j < k; ++j) {
    const auto [slot, seg] = segments[j];
    require(slot < batch.n_envs && (seg + 1) * segment_length <= batch.horizon, ErrorKind::bounds,
            "minibatch segment outside the rollout");
    in.h0.col(idx(j)) = batch.h_snapshots[seg].col(idx(slot));
    in.c0.col(idx(j)) = batch.c_snapshots[seg].col(idx(slot));
    for (std::size_t t = 0; t < segment_length; ++t) {
      const std::size_t src = batch.column(seg * segment_length + t, slot);
      const std::size_t dst = t * k + j;
      in.bimodal.col(idx(dst)) = batch.inputs.col(idx(src));
      if (!batch.images.empty()) in.images[dst] = batch.images[src];
      in.prev_action[dst] = batch.prev_action[src];
      in.episode_start[dst] = batch.episode_start[src];
      mb.actions[dst] = batch.actions[src];
      mb.old_log_probs[idx(dst)] = batch.log_probs[idx(src)];
      mb.advantages[idx(dst)] = gae.advantages[idx(src)];
      mb.returns[idx(dst)] = gae.returns[idx(src)];
    }
  }
  return mb;
}

LossAndGradient ppo_loss(const PolicyParams& master, const Minibatch& minibatch, const TrainerConfig& config) {
  const ComputeParams params(master, config.precision);
  const SequenceOutput out = forward_sequence(params, minibatch.input);
  const LossTerms terms = ppo_loss_terms(out.logits, out.values, minibatch.actions, minibatch.old_log_probs,
                                         minibatch.advantages, minibatch.returns, config);
  return {terms.stats, backward_sequence(params, minibatch.input, out, terms.dlogits, terms.dvalues)};
}

std::vector<TrainingRow> TrainingLog::rows() const {
  std::vector<TrainingRow> out;
  for (const TrialResult& t : trials) out.insert(out.end(), t.rows.begin(), t.rows.end());
  return out;
}

std::uint64_t trial_seed(std::uint64_t seed, int trial) { return seed + static_cast<std::uint64_t>(trial); }

TrialResult train_trial(const TrainSetup& setup, const Traversal& route, int trial, const TrainCallback& callback) {
  const TrainerConfig& cfg = setup.trainer;
  cfg.validate();
  setup.env.validate();
  const auto started = std::chrono::steady_clock::now();

  TrialResult result;
  result.trial = trial;
  result.seed = trial_seed(setup.seed, trial);
  const std::uint64_t ts = result.seed;
  result.params = setup.initial_params ? *setup.initial_params : init_params(setup.shape, ts);
  PolicyParams& params = result.params;
  require(params.shape == setup.shape, ErrorKind::shape, "initial parameters do not match the network shape");
  OptState opt = OptState::zeros_like(params);

  CurriculumState curriculum;
  curriculum.max_level = setup.env.curriculum_levels;
  curriculum.window = cfg.curriculum_window;
  curriculum.promote_threshold = cfg.promote_threshold;
  VectorEnv envs(setup.env, route, cfg.n_envs, hash_seed({ts, 1}), curriculum, cfg.adapt_curriculum);
  RolloutState rollout_state = RolloutState::start(params.shape, cfg.n_envs);
  Rng action_rng = make_rng({ts, 2});
  Rng shuffle_rng = make_rng({ts, 3});

  EnvConfig eval_env = setup.env;
  eval_env.max_steps = 0;

  const std::size_t segs_per_slot = cfg.rollout_horizon / cfg.bptt_truncation;
  std::vector<std::pair<std::size_t, std::size_t>> segments;
  for (std::size_t s = 0; s < cfg.n_envs; ++s) {
    for (std::size_t g = 0; g < segs_per_slot; ++g) segments.emplace_back(s, g);
  }

  std::size_t next_eval = cfg.eval_interval;
  std::size_t update = 0;
  while (result.episodes < cfg.max_episodes) {
    RolloutResult roll = collect_rollouts(ComputeParams(params, cfg.precision), envs, rollout_state,
                                          cfg.rollout_horizon, cfg.bptt_truncation, action_rng);
    if (roll.batch.mean_abs_logit > cfg.divergence_threshold) {
      std::ostringstream msg;
      msg << "training diverged: mean |logit| " << roll.batch.mean_abs_logit << " exceeds "
          << cfg.divergence_threshold << " (trial " << trial << ", update " << update << ", episode "
          << result.episodes << ")";
      fail(ErrorKind::numeric, msg.str());
    }
    GaeResult gae = compute_gae(roll.batch, cfg.gamma, cfg.gae_lambda);
    normalize_advantages(gae.advantages);

    LossStats sum;
    std::size_t steps = 0;
    for (int epoch = 0; epoch < cfg.epochs_per_update; ++epoch) {
      for (std::size_t i = segments.size(); i > 1; --i) {
        std::swap(segments[i - 1], segments[std::uniform_int_distribution<std::size_t>(0, i - 1)(shuffle_rng)]);
      }
      for (std::size_t first = 0; first < segments.size(); first += cfg.minibatch_sequences) {
        const std::size_t count = std::min(cfg.minibatch_sequences, segments.size() - first);
        const Minibatch mb = make_minibatch(
            roll.batch, gae, std::span(segments).subspan(first, count), cfg.bptt_truncation);
        LossAndGradient lg = ppo_loss(params, mb, cfg);
        if (cfg.max_grad_norm > 0.0) {
          const double norm = global_norm(lg.gradients);
          if (norm > cfg.max_grad_norm) scale_gradients(lg.gradients, cfg.max_grad_norm / norm);
        }
        adam_step(params, lg.gradients, opt, cfg.lr);
        sum.policy_loss += lg.stats.policy_loss;
        sum.value_loss += lg.stats.value_loss;
        sum.entropy += lg.stats.entropy;
        ++steps;
      }
    }
    check_finite(params, "parameters after update");
    ++update;
    result.env_steps += roll.batch.columns();
    result.episodes += roll.finished.size();

    while (result.episodes >= next_eval && next_eval <= cfg.max_episodes) {
      NeuralAgent agent(params, cfg.precision);
      const DeploymentStats stats =
          run_episodes(agent, eval_env, route, cfg.eval_episodes, hash_seed({ts, 4, next_eval}));
      TrainingRow row;
      row.trial = trial;
      row.seed = ts;
      row.episode = next_eval;
      row.mean_reward = stats.mean_reward;
      row.mean_steps = stats.mean_steps;
      row.success_rate = stats.completed_pct / 100.0;
      row.policy_loss = sum.policy_loss / static_cast<double>(steps);
      row.value_loss = sum.value_loss / static_cast<double>(steps);
      row.entropy = sum.entropy / static_cast<double>(steps);
      row.level = envs.curriculum().level;
      if (cfg.record_wall_clock) {
        row.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      }
      result.rows.push_back(row);
      next_eval += cfg.eval_interval;
      if (callback && callback(result, params)) {
        result.stopped_early = true;
        return result;
      }
    }
  }
  return result;
}

TrainingLog train(const TrainSetup& setup, const Traversal& route, const TrainCallback& callback) {
  setup.trainer.validate();
  TrainingLog log;
  for (int k = 0; k < setup.trainer.trials; ++k) log.trials.push_back(train_trial(setup, route, k, callback));
  return log;
}

}  // namespace routenav
