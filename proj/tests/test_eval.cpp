#include <cmath>

#include "routenav/eval.hpp"
#include "routenav/features.hpp"
#include "test_common.hpp"

using namespace routenav;

namespace {

std::vector<PlaceMatch> four_matches() {
  // Scores descend; predictions alternate right and wrong against truth 0..3.
  return {{0, 0.9}, {3, 0.8}, {2, 0.7}, {0, 0.6}};
}

const std::vector<std::size_t> kTruth4{0, 1, 2, 3};

}  // namespace

TEST(Classifier, RecognizesItsOwnTrainingFrames) {
  SynthConfig c;
  c.seed = 2;
  const TraversalSet s = generate_synthetic(c);
  const PlaceClassifier clf = train_place_classifier(s.reference, ClassifierConfig{});
  EXPECT_EQ(clf.classes(), 100u);
  EXPECT_EQ(clf.dim(), 64u);
  const std::vector<PlaceMatch> m = score_query(clf, s.reference);
  std::size_t near = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    near += (m[i].predicted > i ? m[i].predicted - i : i - m[i].predicted) <= kDefaultTolerance ? 1 : 0;
    EXPECT_GT(m[i].score, 0.0);
    EXPECT_LE(m[i].score, 1.0);
  }
  EXPECT_GE(near, 99u);
}

TEST(Classifier, LongerTrainingPredictsExactFrameIndices) {
  // Neighbouring frames are near-duplicates, so exact recall needs more epochs than the default.
  SynthConfig c;
  c.seed = 2;
  const TraversalSet s = generate_synthetic(c);
  ClassifierConfig cfg;
  cfg.epochs = 300;
  const std::vector<PlaceMatch> m = score_query(train_place_classifier(s.reference, cfg), s.reference);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m[i].predicted, i);
}

TEST(Classifier, ZeroEpochsGivesUniformScores) {
  ClassifierConfig cfg;
  cfg.epochs = 0;
  const PlaceClassifier clf = train_place_classifier(testing_util::axis_route(8), cfg);
  for (const PlaceMatch& m : score_query(clf, testing_util::axis_route(8))) EXPECT_NEAR(m.score, 1.0 / 8.0, 1e-15);
  cfg.epochs = -1;
  EXPECT_ROUTENAV_ERROR(train_place_classifier(testing_util::axis_route(8), cfg), ErrorKind::config, "");
}

TEST(Classifier, SameSeedSameWeights) {
  ClassifierConfig cfg;
  cfg.epochs = 5;
  const Traversal r = generate_synthetic(SynthConfig{}).reference;
  const PlaceClassifier a = train_place_classifier(r, cfg), b = train_place_classifier(r, cfg);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
}

TEST(PrecisionRecall, FourQueryHandExample) {
  const std::vector<PlaceMatch> m = four_matches();
  const PRCurve c = precision_recall(m, kTruth4, 0);
  ASSERT_EQ(c.points.size(), 4u);
  const double want_p[] = {1.0, 0.5, 2.0 / 3.0, 0.5};
  const double want_r[] = {0.25, 0.25, 0.5, 0.5};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(c.points[i].precision, want_p[i]);
    EXPECT_DOUBLE_EQ(c.points[i].recall, want_r[i]);
    EXPECT_EQ(c.points[i].threshold, m[i].score);
  }
  // 0.25 * 1 from the origin, then one trapezoid from recall 0.25 to 0.5.
  EXPECT_NEAR(auc(c), 0.25 + 0.25 * 0.5 * (0.5 + 2.0 / 3.0), 1e-15);
}

TEST(PrecisionRecall, ToleranceCountsNearbyPredictions) {
  const PRCurve c = precision_recall(four_matches(), kTruth4, 2);
  // Only the 0.6 match (predicts 0, truth 3) is outside distance 2.
  EXPECT_DOUBLE_EQ(c.points[2].precision, 1.0);
  EXPECT_DOUBLE_EQ(c.points[3].precision, 0.75);
  EXPECT_DOUBLE_EQ(c.points[3].recall, 0.75);
}

TEST(PrecisionRecall, TiedScoresShareOnePoint) {
  const std::vector<PlaceMatch> m{{0, 0.5}, {9, 0.5}, {2, 0.4}};
  const std::vector<std::size_t> t{0, 1, 2};
  const PRCurve c = precision_recall(m, t, 0);
  ASSERT_EQ(c.points.size(), 2u);
  EXPECT_DOUBLE_EQ(c.points[0].precision, 0.5);
  EXPECT_DOUBLE_EQ(c.points[1].recall, 2.0 / 3.0);
}

TEST(PrecisionRecall, InvariantToMonotoneScoreTransforms) {
  Rng rng = make_rng({3});
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, 49);
  std::vector<PlaceMatch> m(50);
  std::vector<std::size_t> truth(50);
  for (std::size_t i = 0; i < 50; ++i) {
    truth[i] = i;
    m[i] = {pick(rng), u(rng)};
  }
  std::vector<PlaceMatch> cubed = m;
  for (PlaceMatch& x : cubed) x.score = std::pow(x.score, 3.0);
  const PRCurve a = precision_recall(m, truth), b = precision_recall(cubed, truth);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].precision, b.points[i].precision);
    EXPECT_EQ(a.points[i].recall, b.points[i].recall);
  }
  EXPECT_EQ(auc(a), auc(b));
  // Recall never decreases along the curve and everything stays in [0, 1].
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    if (i > 0) EXPECT_GE(a.points[i].recall, a.points[i - 1].recall);
    EXPECT_GE(a.points[i].precision, 0.0);
    EXPECT_LE(a.points[i].precision, 1.0);
  }
}

TEST(PrecisionRecall, HugeToleranceMakesEveryMatchCorrect) {
  const PRCurve c = precision_recall(four_matches(), kTruth4, 100);
  for (const PRPoint& p : c.points) EXPECT_EQ(p.precision, 1.0);
  EXPECT_EQ(c.points.back().recall, 1.0);
  EXPECT_DOUBLE_EQ(auc(c), 1.0);
}

TEST(PrecisionRecall, EmptyAndMismatchedInputsAreErrors) {
  EXPECT_ROUTENAV_ERROR(precision_recall({}, {}), ErrorKind::degenerate_data, "");
  const std::vector<std::size_t> t{0};
  EXPECT_ROUTENAV_ERROR(precision_recall(four_matches(), t), ErrorKind::shape, "");
  EXPECT_ROUTENAV_ERROR(auc(PRCurve{}), ErrorKind::degenerate_data, "");
}

TEST(Vpr, ModerateConditionScoresAboveExtreme) {
  SynthConfig c;
  c.dim = 128;
  c.corpus_frames = 300;
  const TraversalSet s = generate_synthetic(c);
  const Projection p = fit_pca_whitening(fitting_pool(s), 64);
  const VprResult mod = evaluate_vpr(p, s.reference, s.variant(Condition::moderate), ClassifierConfig{});
  const VprResult ext = evaluate_vpr(p, s.reference, s.variant(Condition::extreme), ClassifierConfig{});
  EXPECT_EQ(mod.dim, 64u);
  EXPECT_EQ(mod.condition, Condition::moderate);
  EXPECT_GT(mod.auc, ext.auc);
  EXPECT_GE(mod.top1, ext.top1);
}

TEST(Deployment, OptimalAgentAlwaysCompletesAndBeatsRandom) {
  const Traversal route = testing_util::axis_route(40);
  EnvConfig env;
  env.n_frames = 40;
  OptimalAgent best;
  const DeploymentStats a = run_episodes(best, env, route, 200, 1);
  EXPECT_EQ(a.episodes, 200u);
  EXPECT_EQ(a.completed_pct, 100.0);
  EXPECT_EQ(a.failed_pct, 0.0);
  EXPECT_GT(a.mean_reward, 0.0);
  RandomAgent rnd;
  const DeploymentStats b = run_episodes(rnd, env, route, 200, 1);
  EXPECT_LT(b.completed_pct, a.completed_pct);
  EXPECT_GT(b.mean_steps, a.mean_steps);
  EXPECT_NEAR(b.completed_pct + b.failed_pct, 100.0, 1e-9);
}

TEST(Deployment, IsDeterministicForASeed) {
  const Traversal route = testing_util::axis_route(30);
  EnvConfig env;
  env.n_frames = 30;
  RandomAgent a, b;
  const DeploymentStats x = run_episodes(a, env, route, 100, 5), y = run_episodes(b, env, route, 100, 5);
  EXPECT_EQ(x.completed_pct, y.completed_pct);
  EXPECT_EQ(x.mean_steps, y.mean_steps);
}

TEST(Deployment, NetworkInputSizeMustMatchTraversal) {
  const PolicyParams params = init_params(shape_for(8, ObservationMode::bimodal), 1);
  EXPECT_ROUTENAV_ERROR(deploy(params, ObservationMode::bimodal, testing_util::axis_route(10, 4), 10, 0),
                        ErrorKind::shape, "");
}

TEST(Smoothing, DecimalWeightOnAStep) {
  const std::vector<double> v{0.0, 1.0, 1.0};
  const std::vector<double> s = smooth_curve(v, 0.9);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_EQ(s[1], 0.1);
  EXPECT_NEAR(s[2], 0.19, 1e-15);
}

TEST(Smoothing, ConstantSequenceIsUnchanged) {
  for (double c : {0.0, 0.3, 1.0, -7.25}) {
    const std::vector<double> v(50, c);
    EXPECT_EQ(smooth_curve(v, 0.9), v);
  }
  EXPECT_TRUE(smooth_curve({}, 0.5).empty());
  EXPECT_ROUTENAV_ERROR(smooth_curve(std::vector<double>{1.0}, 1.0), ErrorKind::config, "");
}

TEST(Smoothing, ZeroWeightIsIdentity) {
  const std::vector<double> v{0.3, -1.0, 2.5, 0.0};
  EXPECT_EQ(smooth_curve(v, 0.0), v);
}

TEST(FirstCrossing, UsesTheSmoothedCurve) {
  const std::vector<double> x{100, 200, 300, 400};
  const std::vector<double> y{0.0, 1.0, 1.0, 1.0};
  // Smoothed with 0.5: 0, 0.5, 0.75, 0.875.
  EXPECT_EQ(first_crossing(x, y, 0.7, 0.5), 300.0);
  EXPECT_EQ(first_crossing(x, y, 0.9, 0.5), std::nullopt);
  EXPECT_EQ(first_crossing(x, y, 0.0, 0.5), 100.0);
  EXPECT_ROUTENAV_ERROR(first_crossing(x, std::vector<double>{1.0}, 0.5, 0.5), ErrorKind::shape, "");
}
