#include "routenav/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include "routenav/binary_io.hpp"
#include "routenav/error.hpp"

namespace routenav {

namespace {

template <typename T>
std::string integer_text(T v) {
  std::array<char, 32> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), r.ptr);
}

template <typename T>
T parse_integer(std::string_view text, std::string_view field) {
  T v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  require(r.ec == std::errc() && r.ptr == text.data() + text.size(), ErrorKind::schema,
          "column '" + std::string(field) + "': expected an integer, got '" + std::string(text) + "'");
  return v;
}

void check_label(const std::string& s, std::string_view what) {
  require(s.find_first_of(",\n\r\"") == std::string::npos, ErrorKind::schema,
          std::string(what) + " must not contain commas, quotes or newlines: '" + s + "'");
}

template <std::size_t N>
std::string header(const std::array<std::string_view, N>& cols) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ',';
    out += cols[i];
  }
  return out + '\n';
}

std::string join(std::initializer_list<std::string> cells) {
  std::string out;
  bool first = true;
  for (const std::string& c : cells) {
    if (!first) out += ',';
    out += c;
    first = false;
  }
  return out + '\n';
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::string format_number(double value) {
  require(std::isfinite(value), ErrorKind::numeric, "cannot format a non-finite number");
  if (value == 0.0) return "0";
  std::array<char, 64> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), r.ptr);
}

double parse_number(std::string_view text, std::string_view field) {
  double v = 0.0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  require(r.ec == std::errc() && r.ptr == text.data() + text.size(), ErrorKind::schema,
          "column '" + std::string(field) + "': expected a number, got '" + std::string(text) + "'");
  return v;
}

std::vector<MetricsRow> metrics_rows(const TrainingLog& log, const std::string& run_id, const std::string& condition,
                                     std::size_t dim) {
  std::vector<MetricsRow> out;
  for (const TrainingRow& r : log.rows()) {
    out.push_back({run_id, r.trial, r.seed, condition, dim, r.episode, r.mean_reward, r.mean_steps, r.success_rate,
                   r.policy_loss, r.value_loss, r.entropy, r.wall_clock_s});
  }
  return out;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = header(kMetricsColumns);
  for (const MetricsRow& r : rows) {
    check_label(r.run_id, "run_id");
    check_label(r.condition, "condition");
    out += join({r.run_id, integer_text(r.trial), integer_text(r.seed), r.condition, integer_text(r.dim),
                 integer_text(r.episode), format_number(r.mean_reward), format_number(r.mean_steps),
                 format_number(r.success_rate), format_number(r.policy_loss), format_number(r.value_loss),
                 format_number(r.entropy), format_number(r.wall_clock_s)});
  }
  return out;
}

void write_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path) {
  write_text_file(path, metrics_csv(rows));
}

std::vector<MetricsRow> parse_metrics(std::string_view csv, std::string_view source) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < csv.size()) {
    std::size_t end = csv.find('\n', start);
    if (end == std::string_view::npos) end = csv.size();
    std::string_view line = csv.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    start = end + 1;
  }
  require(!lines.empty(), ErrorKind::schema, std::string(source) + ": missing header");
  const std::vector<std::string_view> head = split(lines.front());
  std::map<std::string_view, std::size_t> at;
  for (std::size_t i = 0; i < head.size(); ++i) at[head[i]] = i;
  std::string missing;
  for (std::string_view c : kMetricsColumns) {
    if (!at.count(c)) missing += (missing.empty() ? "" : ", ") + std::string(c);
  }
  require(missing.empty(), ErrorKind::schema, std::string(source) + ": missing columns: " + missing);

  std::vector<MetricsRow> rows;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const std::vector<std::string_view> cells = split(lines[k]);
    require(cells.size() == head.size(), ErrorKind::schema,
            std::string(source) + ": line " + std::to_string(k + 1) + " has " + std::to_string(cells.size()) +
                " cells, header has " + std::to_string(head.size()));
    const auto cell = [&](std::string_view name) { return cells[at.at(name)]; };
    MetricsRow r;
    r.run_id = std::string(cell("run_id"));
    r.trial = parse_integer<int>(cell("trial"), "trial");
    r.seed = parse_integer<std::uint64_t>(cell("seed"), "seed");
    r.condition = std::string(cell("condition"));
    r.dim = parse_integer<std::size_t>(cell("dim"), "dim");
    r.episode = parse_integer<std::size_t>(cell("episode"), "episode");
    r.mean_reward = parse_number(cell("mean_reward"), "mean_reward");
    r.mean_steps = parse_number(cell("mean_steps"), "mean_steps");
    r.success_rate = parse_number(cell("success_rate"), "success_rate");
    r.policy_loss = parse_number(cell("policy_loss"), "policy_loss");
    r.value_loss = parse_number(cell("value_loss"), "value_loss");
    r.entropy = parse_number(cell("entropy"), "entropy");
    r.wall_clock_s = parse_number(cell("wall_clock_s"), "wall_clock_s");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  return parse_metrics(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path.string());
}

std::string vpr_csv(std::span<const VprRow> rows) {
  std::string out = header(kVprColumns);
  for (const VprRow& r : rows) {
    check_label(r.run_id, "run_id");
    out += join({r.run_id, std::string(to_string(r.result.condition)), integer_text(r.result.dim),
                 integer_text(r.tolerance), format_number(r.result.auc), format_number(r.result.top1),
                 integer_text(r.seed)});
  }
  return out;
}

std::string deploy_csv(std::span<const DeployRow> rows) {
  std::string out = header(kDeployColumns);
  for (const DeployRow& r : rows) {
    check_label(r.run_id, "run_id");
    out += join({r.run_id, r.trial, integer_text(r.seed), r.stats.condition, integer_text(r.dim),
                 integer_text(r.stats.episodes), format_number(r.stats.completed_pct),
                 format_number(r.stats.failed_pct), format_number(r.stats.mean_steps),
                 format_number(r.stats.mean_reward)});
  }
  return out;
}

}  // namespace routenav
