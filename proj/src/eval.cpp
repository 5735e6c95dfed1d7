#include "routenav/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "routenav/error.hpp"

namespace routenav {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Index idx(std::size_t n) { return static_cast<Index>(n); }

struct AdamSlot {
  MatrixXd m, v;
};

void adam_update(MatrixXd& p, const MatrixXd& g, AdamSlot& s, double lr, std::uint64_t step) {
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
  s.m = kAdamBeta1 * s.m + (1.0 - kAdamBeta1) * g;
  s.v = kAdamBeta2 * s.v + (1.0 - kAdamBeta2) * g.cwiseAbs2();
  p.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + kAdamEps);
}

}  // namespace

PlaceClassifier train_place_classifier(const Traversal& reference, const ClassifierConfig& config) {
  require(config.epochs >= 0 && config.lr >= 0.0 && config.batch_size >= 1, ErrorKind::config,
          "classifier: invalid training settings");
  const std::size_t n = reference.size(), d = reference.dim();
  PlaceClassifier c{MatrixXd::Zero(idx(n), idx(d)), VectorXd::Zero(idx(n))};
  MatrixXd x(idx(d), idx(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto desc = reference.descriptor(i);
    for (std::size_t j = 0; j < d; ++j) x(idx(j), idx(i)) = desc[j];
  }

  AdamSlot sw{MatrixXd::Zero(idx(n), idx(d)), MatrixXd::Zero(idx(n), idx(d))};
  AdamSlot sb{MatrixXd::Zero(idx(n), 1), MatrixXd::Zero(idx(n), 1)};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng({config.seed, 0x766672});
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
    }
    for (std::size_t first = 0; first < n; first += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - first);
      MatrixXd xb(idx(d), idx(count));
      for (std::size_t k = 0; k < count; ++k) xb.col(idx(k)) = x.col(idx(order[first + k]));
      MatrixXd z = c.weights * xb;
      z.colwise() += c.bias;
      for (std::size_t k = 0; k < count; ++k) {
        auto col = z.col(idx(k));
        col = (col.array() - col.maxCoeff()).exp().matrix();
        col /= col.sum();
        col[idx(order[first + k])] -= 1.0;
      }
      z /= static_cast<double>(count);
      ++step;
      MatrixXd gb = z.rowwise().sum();
      adam_update(c.weights, z * xb.transpose(), sw, config.lr, step);
      MatrixXd bias = c.bias;
      adam_update(bias, gb, sb, config.lr, step);
      c.bias = bias.col(0);
    }
  }
  return c;
}

VectorXd classifier_logits(const PlaceClassifier& c, std::span<const float> descriptor) {
  require(descriptor.size() == c.dim(), ErrorKind::shape,
          "classifier expects " + std::to_string(c.dim()) + "-d descriptors, got " + std::to_string(descriptor.size()));
  VectorXd x(idx(descriptor.size()));
  for (std::size_t j = 0; j < descriptor.size(); ++j) x[idx(j)] = descriptor[j];
  return c.weights * x + c.bias;
}

std::vector<PlaceMatch> score_query(const PlaceClassifier& c, const Traversal& query) {
  require(query.dim() == c.dim(), ErrorKind::shape,
          "query '" + query.name() + "' is " + std::to_string(query.dim()) + "-d, classifier expects " +
              std::to_string(c.dim()));
  std::vector<PlaceMatch> out;
  out.reserve(query.size());
  for (std::size_t i = 0; i < query.size(); ++i) {
    const VectorXd z = classifier_logits(c, query.descriptor(i));
    Index best = 0;
    const double mx = z.maxCoeff(&best);
    const double total = (z.array() - mx).exp().sum();
    out.push_back({static_cast<std::size_t>(best), 1.0 / total});
  }
  return out;
}

PRCurve precision_recall(std::span<const PlaceMatch> matches, std::span<const std::size_t> truth,
                         std::size_t tolerance) {
  require(matches.size() == truth.size(), ErrorKind::shape, "precision_recall: predictions and ground truth differ in length");
  require(!matches.empty(), ErrorKind::degenerate_data, "precision_recall: empty input gives an empty curve");
  std::vector<std::size_t> order(matches.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return matches[a].score > matches[b].score; });
  const auto correct = [&](std::size_t i) {
    const std::size_t p = matches[i].predicted, t = truth[i];
    return (p > t ? p - t : t - p) <= tolerance;
  };
  PRCurve curve;
  curve.tolerance = tolerance;
  const double total = static_cast<double>(matches.size());
  std::size_t accepted = 0, hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    ++accepted;
    hits += correct(order[k]) ? 1 : 0;
    const double score = matches[order[k]].score;
    if (k + 1 < order.size() && matches[order[k + 1]].score == score) continue;
    curve.points.push_back(
        {score, static_cast<double>(hits) / static_cast<double>(accepted), static_cast<double>(hits) / total});
  }
  return curve;
}

double auc(const PRCurve& curve) {
  require(!curve.points.empty(), ErrorKind::degenerate_data, "auc: empty curve");
  double area = 0.0;
  double prev_r = 0.0, prev_p = curve.points.front().precision;
  for (const PRPoint& pt : curve.points) {
    area += (pt.recall - prev_r) * 0.5 * (pt.precision + prev_p);
    prev_r = pt.recall;
    prev_p = pt.precision;
  }
  return std::clamp(area, 0.0, 1.0);
}

VprResult evaluate_vpr(const Projection& projection, const Traversal& reference, const Traversal& query,
                       const ClassifierConfig& config, std::size_t tolerance) {
  require(reference.size() == query.size(), ErrorKind::alignment, "vpr: query and reference differ in length");
  const Traversal ref = project_traversal(projection, reference);
  const Traversal q = project_traversal(projection, query);
  const PlaceClassifier c = train_place_classifier(ref, config);
  const std::vector<PlaceMatch> matches = score_query(c, q);
  std::vector<std::size_t> truth(q.size());
  std::iota(truth.begin(), truth.end(), 0);
  VprResult r;
  r.condition = query.condition();
  r.dim = projection.out_dim();
  r.auc = auc(precision_recall(matches, truth, tolerance));
  std::size_t good = 0;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const std::size_t p = matches[i].predicted;
    good += (p > i ? p - i : i - p) <= tolerance ? 1 : 0;
  }
  r.top1 = static_cast<double>(good) / static_cast<double>(matches.size());
  return r;
}

void NeuralAgent::begin(std::size_t slots) { hidden_ = HiddenBatch::zeros(params_.shape(), slots); }

void NeuralAgent::act(std::span<const EnvState>, std::span<const Observation> observations,
                      std::span<const std::uint8_t> active, std::span<Rng> rngs, std::span<Action> actions) {
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < active.size(); ++i) {
    if (active[i]) live.push_back(i);
  }
  if (live.empty()) return;
  const NetShape& shape = params_.shape();
  HiddenBatch sub = HiddenBatch::zeros(shape, live.size());
  std::vector<StepInput> inputs(live.size());
  for (std::size_t k = 0; k < live.size(); ++k) {
    sub.h.col(idx(k)) = hidden_.h.col(idx(live[k]));
    sub.c.col(idx(k)) = hidden_.c.col(idx(live[k]));
    sub.prev_action[k] = hidden_.prev_action[live[k]];
    inputs[k] = step_input(observations[live[k]]);
  }
  const BatchOutput out = forward_batch(params_, inputs, sub);
  for (std::size_t k = 0; k < live.size(); ++k) {
    const std::size_t i = live[k];
    hidden_.h.col(idx(i)) = sub.h.col(idx(k));
    hidden_.c.col(idx(i)) = sub.c.col(idx(k));
    const VectorXd p = softmax(out.logits.col(idx(k)));
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rngs[i]);
    int a = kNumActions - 1;
    double acc = 0.0;
    for (int j = 0; j < kNumActions - 1; ++j) {
      acc += p[j];
      if (u < acc) {
        a = j;
        break;
      }
    }
    actions[i] = static_cast<Action>(a);
    hidden_.prev_action[i] = a;
  }
}

void OptimalAgent::act(std::span<const EnvState> states, std::span<const Observation>,
                       std::span<const std::uint8_t> active, std::span<Rng>, std::span<Action> actions) {
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (!active[i]) continue;
    const EnvState& s = states[i];
    actions[i] = s.target_index > s.current_index   ? Action::forward
                 : s.target_index < s.current_index ? Action::backward
                                                    : Action::stay;
  }
}

void RandomAgent::act(std::span<const EnvState> states, std::span<const Observation>,
                      std::span<const std::uint8_t> active, std::span<Rng> rngs, std::span<Action> actions) {
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (active[i]) actions[i] = static_cast<Action>(std::uniform_int_distribution<int>(0, kNumActions - 1)(rngs[i]));
  }
}

DeploymentStats run_episodes(Agent& agent, const EnvConfig& env, const Traversal& traversal, std::size_t episodes,
                             std::uint64_t seed) {
  require(episodes >= 1, ErrorKind::config, "deployment needs at least one episode");
  CurriculumState full;
  full.level = full.max_level = env.curriculum_levels;
  std::vector<EnvState> states(episodes);
  std::vector<Observation> obs(episodes);
  std::vector<Rng> rngs;
  rngs.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng r = make_rng({seed, e, 0});
    std::tie(states[e], obs[e]) = reset(env, full, traversal, r);
    rngs.push_back(make_rng({seed, e, 1}));
  }
  std::vector<std::uint8_t> active(episodes, 1);
  std::vector<Action> actions(episodes, Action::stay);
  std::vector<double> returns(episodes, 0.0);
  std::size_t live = episodes;
  agent.begin(episodes);
  while (live > 0) {
    agent.act(states, obs, active, rngs, actions);
    for (std::size_t e = 0; e < episodes; ++e) {
      if (!active[e]) continue;
      StepResult r = step(states[e], actions[e], env, traversal);
      returns[e] += r.reward;
      states[e] = r.state;
      obs[e] = std::move(r.observation);
      if (r.done) {
        active[e] = 0;
        --live;
      }
    }
  }
  DeploymentStats s;
  s.condition = std::string(to_string(traversal.condition()));
  s.episodes = episodes;
  std::size_t completed = 0;
  double steps = 0.0, reward = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    completed += states[e].outcome == Outcome::completed ? 1 : 0;
    steps += static_cast<double>(states[e].steps_taken);
    reward += returns[e];
  }
  const double n = static_cast<double>(episodes);
  s.completed_pct = 100.0 * static_cast<double>(completed) / n;
  s.failed_pct = 100.0 * static_cast<double>(episodes - completed) / n;
  s.mean_steps = steps / n;
  s.mean_reward = reward / n;
  return s;
}

DeploymentStats deploy(const PolicyParams& params, ObservationMode mode, const Traversal& traversal,
                       std::size_t episodes, std::uint64_t seed) {
  const NetShape& shape = params.shape;
  switch (mode) {
    case ObservationMode::bimodal:
      require(!shape.conv && shape.input_dim == traversal.dim() + 1, ErrorKind::shape,
              "checkpoint expects " + std::to_string(shape.input_dim - 1) + "-d descriptors, traversal '" +
                  traversal.name() + "' is " + std::to_string(traversal.dim()) + "-d");
      break;
    case ObservationMode::position_baseline:
      require(!shape.conv && shape.input_dim == 2, ErrorKind::shape, "checkpoint is not a position-baseline policy");
      break;
    case ObservationMode::raw_image:
      require(shape.conv, ErrorKind::shape, "checkpoint is not a raw-image policy");
      break;
  }
  EnvConfig env;
  env.n_frames = traversal.size();
  env.observation_mode = mode;
  NeuralAgent agent(params);
  return run_episodes(agent, env, traversal, episodes, seed);
}

DeploymentStats deploy(const PolicyParams& params, const Projection& projection, const Traversal& traversal,
                       std::size_t episodes, std::uint64_t seed) {
  require(projection.in_dim() == traversal.dim(), ErrorKind::shape,
          "projection expects " + std::to_string(projection.in_dim()) + "-d input, traversal '" + traversal.name() +
              "' is " + std::to_string(traversal.dim()) + "-d");
  return deploy(params, ObservationMode::bimodal, project_traversal(projection, traversal), episodes, seed);
}

std::vector<double> smooth_curve(std::span<const double> values, double weight) {
  require(weight >= 0.0 && weight < 1.0, ErrorKind::config, "smoothing weight must be in [0, 1)");
  // 1 - 0.9 is not the double nearest 0.1; rounding the complement to 12
  // decimals gives decimal weights their decimal complement.
  const double keep = std::round((1.0 - weight) * 1e12) / 1e12;
  std::vector<double> out;
  out.reserve(values.size());
  for (std::size_t t = 0; t < values.size(); ++t) {
    if (t == 0 || values[t] == out.back()) {
      out.push_back(values[t]);
    } else {
      out.push_back(weight * out.back() + keep * values[t]);
    }
  }
  return out;
}

std::optional<double> first_crossing(std::span<const double> x, std::span<const double> y, double threshold,
                                     double weight) {
  require(x.size() == y.size(), ErrorKind::shape, "first_crossing: x and y differ in length");
  const std::vector<double> s = smooth_curve(y, weight);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] >= threshold) return x[i];
  }
  return std::nullopt;
}

}  // namespace routenav
