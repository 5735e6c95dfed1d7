#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "routenav/random.hpp"
#include "routenav/traversal.hpp"

namespace routenav {

// Codes are part of the checkpoint/rollout contract; do not reorder.
enum class Action : int { forward = 0, backward = 1, stay = 2 };
inline constexpr int kNumActions = 3;

enum class ObservationMode { bimodal, position_baseline, raw_image };
std::string_view to_string(ObservationMode mode);
ObservationMode parse_observation_mode(std::string_view text);

enum class Outcome { in_progress, completed, failed };

struct EnvConfig {
  std::size_t n_frames = 0;
  std::size_t max_steps = 0;  // 0 means "N", the traversal length
  int curriculum_levels = 7;
  ObservationMode observation_mode = ObservationMode::bimodal;

  std::size_t step_budget() const { return max_steps == 0 ? n_frames : max_steps; }
  void validate() const;
};

struct EnvState {
  std::size_t current_index = 0;
  std::size_t target_index = 0;
  std::size_t steps_taken = 0;
  int level = 1;
  bool done = false;
  Outcome outcome = Outcome::in_progress;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

// b = concat(visual, goal). In raw-image mode `visual` is empty, the pixels
// are exposed through `image` and `bimodal` carries only the goal.
struct Observation {
  std::vector<double> visual;
  double goal = 0.0;
  std::vector<double> bimodal;
  std::span<const std::uint8_t> image;

  friend bool operator==(const Observation& a, const Observation& b) {
    return a.visual == b.visual && a.goal == b.goal && a.bimodal == b.bimodal &&
           std::equal(a.image.begin(), a.image.end(), b.image.begin(), b.image.end());
  }
};

struct CurriculumState {
  int level = 1;
  int max_level = 7;
  std::size_t window = 500;
  double promote_threshold = 0.8;
  std::deque<bool> recent;

  friend bool operator==(const CurriculumState&, const CurriculumState&) = default;
};

double encode_goal(std::size_t target_index, std::size_t n_frames);
Observation assemble_observation(std::vector<double> visual, double goal);

// Uniform over targets with 1 <= |target - start| <= ceil(level * N / levels).
std::size_t sample_target(int level, std::size_t start, std::size_t n_frames, Rng& rng, int levels = 7);

Observation observe(const EnvConfig& config, const Traversal& traversal, const EnvState& state);

std::pair<EnvState, Observation> reset(const EnvConfig& config, const CurriculumState& curriculum,
                                       const Traversal& traversal, Rng& rng);

struct StepResult {
  EnvState state;
  Observation observation;
  double reward = 0.0;
  bool done = false;
};

StepResult step(const EnvState& state, Action action, const EnvConfig& config, const Traversal& traversal);

CurriculumState update_curriculum(CurriculumState c, bool success);

// A batch of independent episodes over one traversal. Slot s draws the start
// and target of its e-th episode from hash(seed, s, e); finished slots reset
// immediately, in slot order, after the shared curriculum has seen the
// outcome.
class VectorEnv {
 public:
  struct SlotResult {
    EnvState final_state;  // state reached by the step, before any reset
    double reward = 0.0;
    bool done = false;
  };

  VectorEnv(EnvConfig config, const Traversal& traversal, std::size_t n_slots, std::uint64_t seed,
            CurriculumState curriculum, bool adapt_curriculum);

  std::size_t size() const { return states_.size(); }
  const EnvConfig& config() const { return config_; }
  const Traversal& traversal() const { return *traversal_; }
  const std::vector<EnvState>& states() const { return states_; }
  const std::vector<Observation>& observations() const { return observations_; }
  const CurriculumState& curriculum() const { return curriculum_; }
  std::size_t episodes_finished() const { return episodes_finished_; }
  // Episode counter of each slot (number of resets after the first).
  const std::vector<std::uint64_t>& slot_episodes() const { return slot_episode_; }

  std::vector<SlotResult> step(std::span<const Action> actions);

 private:
  void reset_slot(std::size_t slot);

  EnvConfig config_;
  const Traversal* traversal_;
  std::uint64_t seed_;
  CurriculumState curriculum_;
  bool adapt_curriculum_;
  std::vector<EnvState> states_;
  std::vector<Observation> observations_;
  std::vector<std::uint64_t> slot_episode_;
  std::size_t episodes_finished_ = 0;
};

}  // namespace routenav
