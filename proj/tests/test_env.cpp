#include <map>
#include <set>

#include "oracles.hpp"
#include "routenav/env.hpp"
#include "test_common.hpp"

using namespace routenav;

namespace {

EnvConfig config_for(std::size_t n, std::size_t max_steps = 0) {
  EnvConfig c;
  c.n_frames = n;
  c.max_steps = max_steps;
  return c;
}

EnvState at(std::size_t current, std::size_t target, std::size_t steps = 0) {
  return {current, target, steps, 1, false, Outcome::in_progress};
}

}  // namespace

TEST(Goal, EncodesTargetFraction) {
  EXPECT_EQ(encode_goal(0, 100), 0.0);
  EXPECT_EQ(encode_goal(99, 100), 1.0);
  EXPECT_EQ(encode_goal(50, 101), 0.5);
  EXPECT_ROUTENAV_ERROR(encode_goal(100, 100), ErrorKind::bounds, "");
}

TEST(Observation, BimodalIsVisualThenGoal) {
  EXPECT_EQ(assemble_observation(std::vector<double>(64, 0.1), 0.5).bimodal.size(), 65u);
  EXPECT_EQ(assemble_observation(std::vector<double>(4096, 0.1), 0.5).bimodal.size(), 4097u);
  const Observation o = assemble_observation(std::vector<double>(8, 0.0), 0.3);
  EXPECT_EQ(o.bimodal.back(), 0.3);
  for (std::size_t i = 0; i + 1 < o.bimodal.size(); ++i) EXPECT_EQ(o.bimodal[i], 0.0);
}

TEST(SampleTarget, LevelOneAdmissibleSetMatchesFormula) {
  // ceil(1 * 70 / 7) = 10, clipped at the route start.
  Rng rng = make_rng({1});
  std::set<std::size_t> seen;
  for (int i = 0; i < 20000; ++i) seen.insert(sample_target(1, 0, 70, rng));
  std::set<std::size_t> want;
  for (std::size_t t = 1; t <= 10; ++t) want.insert(t);
  EXPECT_EQ(seen, want);
}

TEST(SampleTarget, IsUniformOverTheAdmissibleSet) {
  Rng rng = make_rng({2});
  std::map<std::size_t, int> counts;
  const int draws = 60000;
  for (int i = 0; i < draws; ++i) ++counts[sample_target(2, 30, 70, rng)];
  // radius ceil(140/7) = 20: 10..50 without 30 -> 40 targets.
  ASSERT_EQ(counts.size(), 40u);
  for (const auto& [t, c] : counts) EXPECT_NEAR(c, draws / 40.0, 5 * std::sqrt(draws / 40.0)) << t;
}

TEST(SampleTarget, NeverReturnsStartOverManyDraws) {
  Rng rng = make_rng({3});
  std::uniform_int_distribution<int> level(1, 7);
  std::uniform_int_distribution<std::size_t> start(0, 99);
  for (int i = 0; i < 100000; ++i) {
    const std::size_t s = start(rng);
    const int l = level(rng);
    const std::size_t t = sample_target(l, s, 100, rng);
    ASSERT_NE(t, s);
    ASSERT_LT(t, 100u);
    ASSERT_LE(t > s ? t - s : s - t, static_cast<std::size_t>(std::ceil(l * 100.0 / 7.0)));
  }
}

TEST(SampleTarget, TopLevelReachesEveryOtherIndex) {
  Rng rng = make_rng({4});
  for (std::size_t start : {0u, 9u, 19u}) {
    std::set<std::size_t> seen;
    for (int i = 0; i < 5000; ++i) seen.insert(sample_target(7, start, 20, rng));
    EXPECT_EQ(seen.size(), 19u);
    EXPECT_FALSE(seen.count(start));
  }
}

TEST(SampleTarget, Errors) {
  Rng rng = make_rng({5});
  EXPECT_ROUTENAV_ERROR(sample_target(1, 0, 1, rng), ErrorKind::config, "");
  EXPECT_ROUTENAV_ERROR(sample_target(0, 0, 10, rng), ErrorKind::bounds, "");
  EXPECT_ROUTENAV_ERROR(sample_target(8, 0, 10, rng), ErrorKind::bounds, "");
}

TEST(Reset, DeterministicAndNeverDone) {
  const Traversal route = testing_util::axis_route(30);
  const EnvConfig cfg = config_for(30);
  CurriculumState cur;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng a = make_rng({seed}), b = make_rng({seed});
    const auto [sa, oa] = reset(cfg, cur, route, a);
    const auto [sb, ob] = reset(cfg, cur, route, b);
    EXPECT_EQ(sa, sb);
    EXPECT_EQ(oa, ob);
    EXPECT_FALSE(sa.done);
    EXPECT_EQ(sa.outcome, Outcome::in_progress);
    EXPECT_EQ(sa.steps_taken, 0u);
  }
}

TEST(Reset, PositionBaselineObservesScaledIndex) {
  const Traversal route = testing_util::axis_route(30);
  EnvConfig cfg = config_for(30);
  cfg.observation_mode = ObservationMode::position_baseline;
  Rng rng = make_rng({6});
  const auto [s, o] = reset(cfg, CurriculumState{}, route, rng);
  ASSERT_EQ(o.bimodal.size(), 2u);
  EXPECT_DOUBLE_EQ(o.bimodal[0], static_cast<double>(s.current_index) / 29.0);
  EXPECT_DOUBLE_EQ(o.bimodal[1], static_cast<double>(s.target_index) / 29.0);
}

TEST(Reset, BimodalObservesTheFrameDescriptor) {
  const Traversal route = testing_util::axis_route(12, 5);
  Rng rng = make_rng({7});
  const auto [s, o] = reset(config_for(12), CurriculumState{}, route, rng);
  const auto d = route.descriptor(s.current_index);
  EXPECT_EQ(o.visual, std::vector<double>(d.begin(), d.end()));
  EXPECT_EQ(o.goal, encode_goal(s.target_index, 12));
}

TEST(Reset, MismatchedLengthIsAConfigError) {
  Rng rng = make_rng({8});
  EXPECT_ROUTENAV_ERROR(reset(config_for(31), CurriculumState{}, testing_util::axis_route(30), rng),
                        ErrorKind::config, "");
}

TEST(Step, ReachingTheTargetPaysOne) {
  const StepResult r = step(at(5, 6), Action::forward, config_for(20), testing_util::axis_route(20));
  EXPECT_EQ(r.reward, 1.0);
  EXPECT_TRUE(r.done);
  EXPECT_EQ(r.state.outcome, Outcome::completed);
}

TEST(Step, HeadingAwayPaysMinusOneOverBudget) {
  const StepResult r = step(at(5, 9), Action::backward, config_for(20, 100), testing_util::axis_route(20));
  EXPECT_EQ(r.reward, -0.01);
  EXPECT_FALSE(r.done);
  const StepResult d = step(at(5, 9), Action::backward, config_for(20), testing_util::axis_route(20));
  EXPECT_EQ(d.reward, -1.0 / 20.0);
}

TEST(Step, StayingIsNeitherRewardedNorPunished) {
  const StepResult r = step(at(5, 9), Action::stay, config_for(20), testing_util::axis_route(20));
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_FALSE(r.done);
  EXPECT_EQ(r.state.current_index, 5u);
}

TEST(Step, MovesAreClampedAndClampedMovesAreNotPunished) {
  const Traversal route = testing_util::axis_route(10);
  const StepResult low = step(at(0, 5), Action::backward, config_for(10), route);
  EXPECT_EQ(low.state.current_index, 0u);
  EXPECT_EQ(low.reward, 0.0);
  const StepResult high = step(at(9, 5), Action::forward, config_for(10), route);
  EXPECT_EQ(high.state.current_index, 9u);
  EXPECT_EQ(high.reward, 0.0);
}

TEST(Step, BudgetExhaustionFails) {
  const Traversal route = testing_util::axis_route(10);
  const StepResult r = step(at(2, 8, 2), Action::stay, config_for(10, 3), route);
  EXPECT_TRUE(r.done);
  EXPECT_EQ(r.state.outcome, Outcome::failed);
  EXPECT_EQ(r.state.steps_taken, 3u);
  EXPECT_ROUTENAV_ERROR(step(r.state, Action::stay, config_for(10, 3), route), ErrorKind::contract, "");
}

TEST(Step, GreedyWalkMatchesSearchOracle) {
  const std::size_t n = 15;
  const Traversal route = testing_util::axis_route(n);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = 0; t < n; ++t) {
      if (s == t) continue;
      EnvState st = at(s, t);
      std::size_t steps = 0;
      while (!st.done) {
        st = step(st, st.current_index < t ? Action::forward : Action::backward, config_for(n), route).state;
        ++steps;
      }
      EXPECT_EQ(steps, oracle::bfs_steps(n, s, t));
      EXPECT_EQ(st.outcome, Outcome::completed);
    }
  }
}

TEST(Curriculum, FullWindowOfSuccessesPromotes) {
  CurriculumState c;
  for (int i = 0; i < 499; ++i) c = update_curriculum(c, true);
  EXPECT_EQ(c.level, 1);
  c = update_curriculum(c, true);
  EXPECT_EQ(c.level, 2);
  EXPECT_TRUE(c.recent.empty());
}

TEST(Curriculum, BelowThresholdDoesNotPromote) {
  CurriculumState c;
  for (int i = 0; i < 500; ++i) c = update_curriculum(c, i >= 101);  // 79.8%, failures first
  EXPECT_EQ(c.level, 1);
  EXPECT_EQ(c.recent.size(), 500u);
  c = update_curriculum(c, true);  // drops a failure: 400/500 = 80%
  EXPECT_EQ(c.level, 2);
}

TEST(Curriculum, LevelIsCappedAndNeverDecreases) {
  CurriculumState c;
  c.level = 7;
  for (int i = 0; i < 1200; ++i) {
    const int before = c.level;
    c = update_curriculum(c, i % 3 != 0);
    EXPECT_GE(c.level, before);
    EXPECT_LE(c.recent.size(), c.window);
  }
  EXPECT_EQ(c.level, 7);
}

TEST(VectorEnvTest, SlotsReplayTheScalarEnvironment) {
  const Traversal route = testing_util::axis_route(25);
  EnvConfig cfg = config_for(25, 6);
  VectorEnv env(cfg, route, 3, 99, CurriculumState{}, false);
  std::vector<EnvState> mirror;
  std::vector<std::uint64_t> episode(3, 0);
  for (std::size_t s = 0; s < 3; ++s) {
    Rng rng = make_rng({99, s, 0});
    mirror.push_back(reset(cfg, CurriculumState{}, route, rng).first);
  }
  Rng pick_rng = make_rng({100});
  std::uniform_int_distribution<int> pick(0, 2);
  for (int t = 0; t < 200; ++t) {
    std::vector<Action> actions;
    for (int s = 0; s < 3; ++s) actions.push_back(static_cast<Action>(pick(pick_rng)));
    const auto results = env.step(actions);
    for (std::size_t s = 0; s < 3; ++s) {
      const StepResult r = step(mirror[s], actions[s], cfg, route);
      EXPECT_EQ(results[s].final_state, r.state);
      EXPECT_EQ(results[s].reward, r.reward);
      mirror[s] = r.state;
      if (r.done) {
        Rng rng = make_rng({99, s, ++episode[s]});
        mirror[s] = reset(cfg, CurriculumState{}, route, rng).first;
      }
      EXPECT_EQ(env.states()[s], mirror[s]);
    }
  }
  EXPECT_GT(env.episodes_finished(), 0u);
}

TEST(VectorEnvTest, SharedCurriculumAdvances) {
  const Traversal route = testing_util::axis_route(10);
  CurriculumState cur;
  cur.window = 20;
  VectorEnv env(config_for(10), route, 4, 1, cur, true);
  for (int t = 0; t < 400; ++t) {
    std::vector<Action> actions;
    for (const EnvState& s : env.states()) {
      actions.push_back(s.current_index < s.target_index ? Action::forward : Action::backward);
    }
    env.step(actions);
  }
  EXPECT_EQ(env.curriculum().level, 7);
  EXPECT_ROUTENAV_ERROR(env.step(std::vector<Action>(3, Action::stay)), ErrorKind::shape, "");
}
