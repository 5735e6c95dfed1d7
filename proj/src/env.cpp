#include "routenav/env.hpp"

#include <cmath>
#include <string>

#include "routenav/error.hpp"

namespace routenav {

std::string_view to_string(ObservationMode mode) {
  switch (mode) {
    case ObservationMode::bimodal: return "bimodal";
    case ObservationMode::position_baseline: return "position_baseline";
    case ObservationMode::raw_image: return "raw_image";
  }
  return "bimodal";
}

ObservationMode parse_observation_mode(std::string_view text) {
  if (text == "bimodal") return ObservationMode::bimodal;
  if (text == "position_baseline") return ObservationMode::position_baseline;
  if (text == "raw_image") return ObservationMode::raw_image;
  fail(ErrorKind::config, "unknown observation mode '" + std::string(text) + "'");
}

void EnvConfig::validate() const {
  require(n_frames >= 2, ErrorKind::config, "env: n_frames must be >= 2");
  require(step_budget() >= 1, ErrorKind::config, "env: max_steps must be >= 1");
  require(curriculum_levels >= 1, ErrorKind::config, "env: curriculum_levels must be >= 1");
}

double encode_goal(std::size_t target_index, std::size_t n_frames) {
  require(n_frames >= 2, ErrorKind::bounds, "encode_goal: N must be >= 2");
  require(target_index < n_frames, ErrorKind::bounds,
          "encode_goal: target " + std::to_string(target_index) + " outside [0, " + std::to_string(n_frames - 1) + "]");
  return static_cast<double>(target_index) / static_cast<double>(n_frames - 1);
}

Observation assemble_observation(std::vector<double> visual, double goal) {
  Observation o;
  o.bimodal.reserve(visual.size() + 1);
  o.bimodal.assign(visual.begin(), visual.end());
  o.bimodal.push_back(goal);
  o.visual = std::move(visual);
  o.goal = goal;
  return o;
}

std::size_t sample_target(int level, std::size_t start, std::size_t n_frames, Rng& rng, int levels) {
  require(levels >= 1 && level >= 1 && level <= levels, ErrorKind::bounds,
          "sample_target: level " + std::to_string(level) + " outside [1, " + std::to_string(levels) + "]");
  require(n_frames >= 2, ErrorKind::config, "sample_target: no valid target on a route of " +
                                                std::to_string(n_frames) + " frame(s)");
  require(start < n_frames, ErrorKind::bounds, "sample_target: start outside route");
  const std::size_t radius =
      (static_cast<std::size_t>(level) * n_frames + static_cast<std::size_t>(levels) - 1) / static_cast<std::size_t>(levels);
  const std::size_t lo = start > radius ? start - radius : 0;
  const std::size_t hi = std::min(n_frames - 1, start + radius);
  const std::size_t count = hi - lo;  // candidates in [lo, hi] except start
  std::uniform_int_distribution<std::size_t> pick(0, count - 1);
  const std::size_t k = lo + pick(rng);
  return k >= start ? k + 1 : k;
}

Observation observe(const EnvConfig& config, const Traversal& traversal, const EnvState& state) {
  const double goal = encode_goal(state.target_index, config.n_frames);
  switch (config.observation_mode) {
    case ObservationMode::bimodal: {
      const auto d = traversal.descriptor(state.current_index);
      return assemble_observation(std::vector<double>(d.begin(), d.end()), goal);
    }
    case ObservationMode::position_baseline:
      return assemble_observation({encode_goal(state.current_index, config.n_frames)}, goal);
    case ObservationMode::raw_image: {
      const Frame& f = traversal.frame(state.current_index);
      require(f.raw_image.has_value(), ErrorKind::config,
              "raw_image mode needs images on traversal '" + traversal.name() + "'");
      Observation o = assemble_observation({}, goal);
      o.image = *f.raw_image;
      return o;
    }
  }
  fail(ErrorKind::config, "unknown observation mode");
}

std::pair<EnvState, Observation> reset(const EnvConfig& config, const CurriculumState& curriculum,
                                       const Traversal& traversal, Rng& rng) {
  config.validate();
  require(traversal.size() == config.n_frames, ErrorKind::config,
          "env: traversal '" + traversal.name() + "' has " + std::to_string(traversal.size()) +
              " frames, config expects " + std::to_string(config.n_frames));
  EnvState s;
  s.current_index = std::uniform_int_distribution<std::size_t>(0, config.n_frames - 1)(rng);
  s.level = curriculum.level;
  s.target_index = sample_target(curriculum.level, s.current_index, config.n_frames, rng, config.curriculum_levels);
  return {s, observe(config, traversal, s)};
}

StepResult step(const EnvState& state, Action action, const EnvConfig& config, const Traversal& traversal) {
  require(!state.done, ErrorKind::contract, "env: step called on a finished episode");
  const std::size_t n = config.n_frames;
  StepResult r;
  r.state = state;
  EnvState& s = r.state;
  switch (action) {
    case Action::forward: s.current_index = std::min(n - 1, s.current_index + 1); break;
    case Action::backward: s.current_index = s.current_index == 0 ? 0 : s.current_index - 1; break;
    case Action::stay: break;
    default: fail(ErrorKind::bounds, "env: unknown action code " + std::to_string(static_cast<int>(action)));
  }
  s.steps_taken += 1;

  const auto distance = [&](std::size_t i) { return i > s.target_index ? i - s.target_index : s.target_index - i; };
  const std::size_t budget = config.step_budget();
  if (s.current_index == s.target_index) {
    r.reward = 1.0;
    s.outcome = Outcome::completed;
  } else {
    if (distance(s.current_index) > distance(state.current_index)) r.reward = -1.0 / static_cast<double>(budget);
    if (s.steps_taken >= budget) s.outcome = Outcome::failed;
  }
  s.done = s.outcome != Outcome::in_progress;
  r.done = s.done;
  r.observation = observe(config, traversal, s);
  return r;
}

CurriculumState update_curriculum(CurriculumState c, bool success) {
  c.recent.push_back(success);
  while (c.recent.size() > c.window) c.recent.pop_front();
  if (c.level < c.max_level && c.recent.size() == c.window) {
    std::size_t wins = 0;
    for (bool b : c.recent) wins += b ? 1 : 0;
    if (static_cast<double>(wins) >= c.promote_threshold * static_cast<double>(c.window)) {
      c.level += 1;
      c.recent.clear();
    }
  }
  return c;
}

VectorEnv::VectorEnv(EnvConfig config, const Traversal& traversal, std::size_t n_slots, std::uint64_t seed,
                     CurriculumState curriculum, bool adapt_curriculum)
    : config_(config),
      traversal_(&traversal),
      seed_(seed),
      curriculum_(std::move(curriculum)),
      adapt_curriculum_(adapt_curriculum),
      states_(n_slots),
      observations_(n_slots),
      slot_episode_(n_slots, 0) {
  require(n_slots >= 1, ErrorKind::config, "vector env needs at least one slot");
  config_.validate();
  for (std::size_t s = 0; s < n_slots; ++s) reset_slot(s);
}

void VectorEnv::reset_slot(std::size_t slot) {
  Rng rng = make_rng({seed_, slot, slot_episode_[slot]});
  auto [state, obs] = reset(config_, curriculum_, *traversal_, rng);
  states_[slot] = state;
  observations_[slot] = std::move(obs);
}

std::vector<VectorEnv::SlotResult> VectorEnv::step(std::span<const Action> actions) {
  require(actions.size() == states_.size(), ErrorKind::shape,
          "vector env: got " + std::to_string(actions.size()) + " actions for " + std::to_string(states_.size()) +
              " slots");
  std::vector<SlotResult> results(states_.size());
  for (std::size_t s = 0; s < states_.size(); ++s) {
    StepResult r = routenav::step(states_[s], actions[s], config_, *traversal_);
    results[s] = {r.state, r.reward, r.done};
    if (r.done) {
      ++episodes_finished_;
      if (adapt_curriculum_) curriculum_ = update_curriculum(std::move(curriculum_), r.state.outcome == Outcome::completed);
      ++slot_episode_[s];
      reset_slot(s);
    } else {
      states_[s] = r.state;
      observations_[s] = std::move(r.observation);
    }
  }
  return results;
}

}  // namespace routenav
