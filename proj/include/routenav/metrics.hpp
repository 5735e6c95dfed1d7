#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "routenav/eval.hpp"
#include "routenav/ppo.hpp"

namespace routenav {

inline constexpr std::array<std::string_view, 13> kMetricsColumns{
    "run_id",     "trial",      "seed",    "condition",   "dim",        "episode",     "mean_reward",
    "mean_steps", "success_rate", "policy_loss", "value_loss", "entropy", "wall_clock_s"};

struct MetricsRow {
  std::string run_id;
  int trial = 0;
  std::uint64_t seed = 0;
  std::string condition;
  std::size_t dim = 0;
  std::size_t episode = 0;
  double mean_reward = 0.0;
  double mean_steps = 0.0;
  double success_rate = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double wall_clock_s = 0.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

// Shortest decimal text that round-trips; independent of the C locale.
std::string format_number(double value);
double parse_number(std::string_view text, std::string_view field);

std::vector<MetricsRow> metrics_rows(const TrainingLog& log, const std::string& run_id, const std::string& condition,
                                     std::size_t dim);

std::string metrics_csv(std::span<const MetricsRow> rows);
void write_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path);
// Columns may appear in any order; missing ones raise a schema error naming
// all of them.
std::vector<MetricsRow> parse_metrics(std::string_view csv, std::string_view source = "<memory>");
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

inline constexpr std::array<std::string_view, 7> kVprColumns{"run_id", "condition", "dim",  "tolerance",
                                                             "auc",    "top1",      "seed"};
struct VprRow {
  std::string run_id;
  VprResult result;
  std::size_t tolerance = 0;
  std::uint64_t seed = 0;
};
std::string vpr_csv(std::span<const VprRow> rows);

inline constexpr std::array<std::string_view, 10> kDeployColumns{
    "run_id", "trial", "seed", "condition", "dim", "episodes", "completed_pct", "failed_pct", "mean_steps",
    "mean_reward"};
struct DeployRow {
  std::string run_id;
  std::string trial;  // trial index or "mean"
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  DeploymentStats stats;
};
std::string deploy_csv(std::span<const DeployRow> rows);

enum class CurveMetric { reward, steps };

// One polyline per (run_id, dim): trials averaged per episode, then smoothed.
std::string render_training_curves(std::span<const MetricsRow> rows, CurveMetric metric, double weight = 0.9);
// Writes <stem>_reward.svg and <stem>_steps.svg; returns both paths.
std::vector<std::filesystem::path> render_training_figures(std::span<const MetricsRow> rows,
                                                           const std::filesystem::path& stem, double weight = 0.9);

}  // namespace routenav
