#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "routenav/env.hpp"
#include "routenav/features.hpp"
#include "routenav/net.hpp"
#include "routenav/traversal.hpp"

namespace routenav {

// Single affine layer + softmax, one class per reference frame.
struct PlaceClassifier {
  Eigen::MatrixXd weights;  // N x d
  Eigen::VectorXd bias;     // N

  std::size_t classes() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(weights.cols()); }
};

struct ClassifierConfig {
  int epochs = 100;
  double lr = 0.01;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

// Zero-initialized, cross-entropy, Adam, shuffled minibatches.
PlaceClassifier train_place_classifier(const Traversal& reference, const ClassifierConfig& config);

struct PlaceMatch {
  std::size_t predicted = 0;
  double score = 0.0;  // max softmax probability
};

Eigen::VectorXd classifier_logits(const PlaceClassifier& c, std::span<const float> descriptor);
std::vector<PlaceMatch> score_query(const PlaceClassifier& c, const Traversal& query);

inline constexpr std::size_t kDefaultTolerance = 2;

struct PRPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct PRCurve {
  std::vector<PRPoint> points;  // descending threshold, recall non-decreasing
  std::size_t tolerance = kDefaultTolerance;
};

// Accepts matches with score >= threshold for every distinct observed score.
// A match is correct when |predicted - truth| <= tolerance.
PRCurve precision_recall(std::span<const PlaceMatch> matches, std::span<const std::size_t> truth,
                         std::size_t tolerance = kDefaultTolerance);

// Trapezoids over recall. The curve starts at recall 0 with the first
// precision and drops to precision 0 past the last recall.
double auc(const PRCurve& curve);

struct VprResult {
  Condition condition = Condition::reference;
  std::size_t dim = 0;
  double auc = 0.0;
  double top1 = 0.0;  // fraction within tolerance
};

// Projects reference and query with `projection`, trains the classifier on the
// reference, and scores the query with ground truth = frame index.
VprResult evaluate_vpr(const Projection& projection, const Traversal& reference, const Traversal& query,
                       const ClassifierConfig& config, std::size_t tolerance = kDefaultTolerance);

struct DeploymentStats {
  std::string condition;
  std::size_t episodes = 0;
  double completed_pct = 0.0;
  double failed_pct = 0.0;
  double mean_steps = 0.0;
  double mean_reward = 0.0;
};

// Chooses actions for a batch of concurrently running episodes. Slots with
// active[i] == 0 have finished and are ignored.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual void begin(std::size_t slots) = 0;
  virtual void act(std::span<const EnvState> states, std::span<const Observation> observations,
                   std::span<const std::uint8_t> active, std::span<Rng> rngs, std::span<Action> actions) = 0;
};

// Samples from the network's softmax.
class NeuralAgent final : public Agent {
 public:
  explicit NeuralAgent(const PolicyParams& params, Precision precision = Precision::float64)
      : params_(params, precision) {}
  void begin(std::size_t slots) override;
  void act(std::span<const EnvState> states, std::span<const Observation> observations,
           std::span<const std::uint8_t> active, std::span<Rng> rngs, std::span<Action> actions) override;

 private:
  ComputeParams params_;
  HiddenBatch hidden_;
};

// Moves straight towards the target.
class OptimalAgent final : public Agent {
 public:
  void begin(std::size_t) override {}
  void act(std::span<const EnvState> states, std::span<const Observation> observations,
           std::span<const std::uint8_t> active, std::span<Rng> rngs, std::span<Action> actions) override;
};

class RandomAgent final : public Agent {
 public:
  void begin(std::size_t) override {}
  void act(std::span<const EnvState> states, std::span<const Observation> observations,
           std::span<const std::uint8_t> active, std::span<Rng> rngs, std::span<Action> actions) override;
};

// Runs `episodes` independent episodes over the full target range with the
// step budget of `env`. Episode e draws start and target from hash(seed, e)
// and its action noise from a second stream, so results do not depend on how
// episodes are batched.
DeploymentStats run_episodes(Agent& agent, const EnvConfig& env, const Traversal& traversal, std::size_t episodes,
                             std::uint64_t seed);

// Deployment regime: ms = N, full target range, stochastic policy. The
// traversal must already be in the policy's feature space.
DeploymentStats deploy(const PolicyParams& params, ObservationMode mode, const Traversal& traversal,
                       std::size_t episodes, std::uint64_t seed);
// Projects `traversal` with the reference-fitted projection first.
DeploymentStats deploy(const PolicyParams& params, const Projection& projection, const Traversal& traversal,
                       std::size_t episodes, std::uint64_t seed);

// s_0 = x_0, s_t = w s_{t-1} + (1 - w) x_t.
std::vector<double> smooth_curve(std::span<const double> values, double weight);

// First x whose smoothed y reaches `threshold`; nullopt if never.
std::optional<double> first_crossing(std::span<const double> x, std::span<const double> y, double threshold,
                                     double weight);

}  // namespace routenav
