#include <cstdlib>
#include <fstream>
#include <sstream>

#include "routenav/binary_io.hpp"
#include "routenav/cli.hpp"
#include "routenav/metrics.hpp"
#include "test_common.hpp"

using namespace routenav;
using testing_util::TempDir;

namespace {

MetricsRow row(std::string run, std::size_t dim, int trial, std::size_t episode, double success) {
  MetricsRow r;
  r.run_id = std::move(run);
  r.trial = trial;
  r.seed = static_cast<std::uint64_t>(trial);
  r.condition = "reference";
  r.dim = dim;
  r.episode = episode;
  r.mean_reward = success - 0.5;
  r.mean_steps = 100.0 * (1.0 - success) + 3.0;
  r.success_rate = success;
  r.policy_loss = -0.01;
  r.value_loss = 0.125;
  r.entropy = 1.0986;
  return r;
}

struct CliOutcome {
  int code;
  std::string out, err;
};

CliOutcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_subcommand(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t count(const std::string& text, const std::string& what) {
  std::size_t n = 0;
  for (std::size_t p = text.find(what); p != std::string::npos; p = text.find(what, p + 1)) ++n;
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  const std::vector<std::uint8_t> b = read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

}  // namespace

TEST(MetricsCsv, EmptyLogIsHeaderOnly) {
  EXPECT_EQ(metrics_csv({}),
            "run_id,trial,seed,condition,dim,episode,mean_reward,mean_steps,success_rate,policy_loss,value_loss,"
            "entropy,wall_clock_s\n");
  EXPECT_TRUE(parse_metrics(metrics_csv({})).empty());
}

TEST(MetricsCsv, RoundTripsRows) {
  std::vector<MetricsRow> rows{row("a", 64, 0, 100, 0.1), row("a", 64, 1, 100, 1.0 / 3.0)};
  rows[1].wall_clock_s = 12.5;
  EXPECT_EQ(parse_metrics(metrics_csv(rows)), rows);
}

TEST(MetricsCsv, ColumnsMayBeReordered) {
  const std::string csv =
      "episode,run_id,trial,seed,condition,dim,mean_reward,mean_steps,success_rate,policy_loss,value_loss,"
      "entropy,wall_clock_s\n200,x,0,0,extreme,512,0.5,10,0.9,0,0,1,0\n";
  const std::vector<MetricsRow> rows = parse_metrics(csv);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].episode, 200u);
  EXPECT_EQ(rows[0].dim, 512u);
  EXPECT_EQ(rows[0].condition, "extreme");
}

TEST(MetricsCsv, MissingColumnsAreListedInASchemaError) {
  try {
    parse_metrics("run_id,trial,seed,condition,dim,mean_reward,mean_steps,policy_loss,value_loss,entropy\n");
    FAIL() << "expected schema error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
    const std::string m = e.what();
    EXPECT_NE(m.find("episode"), std::string::npos) << m;
    EXPECT_NE(m.find("success_rate"), std::string::npos) << m;
    EXPECT_NE(m.find("wall_clock_s"), std::string::npos) << m;
  }
}

TEST(MetricsCsv, NonNumericCellsAreSchemaErrors) {
  const std::string csv = std::string(metrics_csv({})) + "a,0,0,reference,64,100,abc,1,1,0,0,0,0\n";
  EXPECT_ROUTENAV_ERROR(parse_metrics(csv), ErrorKind::schema, "mean_reward");
}

TEST(MetricsCsv, TrainingLogConvertsToRows) {
  TrainingLog log;
  TrialResult t;
  t.trial = 1;
  t.seed = 8;
  TrainingRow r;
  r.trial = 1;
  r.seed = 8;
  r.episode = 100;
  r.success_rate = 0.5;
  t.rows = {r};
  log.trials.push_back(t);
  const std::vector<MetricsRow> rows = metrics_rows(log, "run", "moderate", 64);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].run_id, "run");
  EXPECT_EQ(rows[0].condition, "moderate");
  EXPECT_EQ(rows[0].dim, 64u);
  EXPECT_EQ(rows[0].seed, 8u);
  EXPECT_EQ(rows[0].success_rate, 0.5);
}

TEST(Curves, OnePolylinePerRunAndDimension) {
  std::vector<MetricsRow> rows;
  for (int trial = 0; trial < 3; ++trial) {
    for (std::size_t ep = 100; ep <= 500; ep += 100) {
      rows.push_back(row("a", 64, trial, ep, ep / 500.0));
      rows.push_back(row("b", 512, trial, ep, ep / 1000.0));
    }
  }
  const std::string svg = render_training_curves(rows, CurveMetric::reward);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_EQ(count(svg, "<polyline"), 2u);
  EXPECT_NE(svg.find("64-d"), std::string::npos);
  EXPECT_NE(svg.find("512-d"), std::string::npos);
  EXPECT_NE(svg.find(">episodes<"), std::string::npos);
  EXPECT_NE(svg.find(">average reward<"), std::string::npos);
  EXPECT_NE(render_training_curves(rows, CurveMetric::steps).find(">agent steps<"), std::string::npos);
}

TEST(Curves, FiguresAreWrittenAsTwoFiles) {
  TempDir dir("figs");
  const std::vector<MetricsRow> rows{row("a", 64, 0, 100, 0.2), row("a", 64, 0, 200, 0.4)};
  const auto paths = render_training_figures(rows, dir / "curves");
  ASSERT_EQ(paths.size(), 2u);
  EXPECT_EQ(paths[0].filename(), "curves_reward.svg");
  EXPECT_EQ(paths[1].filename(), "curves_steps.svg");
  for (const auto& p : paths) EXPECT_TRUE(std::filesystem::exists(p));
}

TEST(Cli, UnknownFlagIsAUsageError) {
  const CliOutcome o = run({"synth", "--bogus", "1"});
  EXPECT_EQ(o.code, kExitUsage);
  EXPECT_EQ(o.err.rfind("error: kind=usage message=\"", 0), 0u) << o.err;
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"fly"}).code, kExitUsage);
}

TEST(Cli, BadConfigValuesAreConfigErrors) {
  TempDir dir("badcfg");
  std::ofstream(dir / "c.json") << R"({"frames": "many"})";
  CliOutcome o = run({"synth", "--config", (dir / "c.json").string(), "--out", dir.path().string()});
  EXPECT_EQ(o.code, kExitConfig);
  EXPECT_NE(o.err.find("kind=config"), std::string::npos) << o.err;
  std::ofstream(dir / "d.json") << R"({"no_such_key": 1})";
  o = run({"synth", "--config", (dir / "d.json").string(), "--out", dir.path().string()});
  EXPECT_EQ(o.code, kExitConfig);
  EXPECT_NE(o.err.find("no_such_key"), std::string::npos) << o.err;
  o = run({"synth", "--frames", "1", "--out", dir.path().string()});
  EXPECT_EQ(o.code, kExitConfig);
}

TEST(Cli, MissingInputIsARuntimeError) {
  TempDir dir("missing");
  const CliOutcome o = run({"train", "--manifest", (dir / "nope.json").string(), "--out", dir.path().string()});
  EXPECT_EQ(o.code, kExitRuntime);
  EXPECT_NE(o.err.find("kind=io"), std::string::npos) << o.err;
  EXPECT_EQ(count(o.err, "\n"), 1u);
}

TEST(Cli, SynthIsByteIdenticalAcrossRuns) {
  TempDir dir("synth");
  for (const char* id : {"one", "two"}) {
    ASSERT_EQ(run({"synth", "--frames", "20", "--dim", "16", "--corpus-frames", "32", "--seed", "4", "--out",
                   dir.path().string(), "--run-id", id})
                  .code,
              kExitOk);
  }
  for (const char* f : {"dataset/manifest.json", "dataset/reference.cldt", "dataset/extreme.cldt"}) {
    ASSERT_TRUE(std::filesystem::exists(dir.path() / "one" / f)) << f;
    EXPECT_EQ(read_file_bytes(dir.path() / "one" / f), read_file_bytes(dir.path() / "two" / f)) << f;
  }
  const std::string manifest = slurp(dir.path() / "one" / "run.json");
  EXPECT_NE(manifest.find("\"subcommand\": \"synth\""), std::string::npos) << manifest;
  EXPECT_NE(manifest.find("\"dataset/reference.cldt\": \""), std::string::npos) << manifest;
}

TEST(Cli, PositionBaselineTrainingLogsEveryHundredEpisodes) {
  TempDir dir("train");
  ASSERT_EQ(run({"synth", "--frames", "12", "--dim", "8", "--corpus-frames", "0", "--out", dir.path().string(),
                 "--run-id", "data"})
                .code,
            kExitOk);
  const CliOutcome o = run({"train", "--manifest", (dir.path() / "data" / "dataset" / "manifest.json").string(),
                         "--mode", "position_baseline", "--trials", "1", "--max-episodes", "300", "--n-envs", "4",
                         "--rollout-horizon", "16", "--bptt-truncation", "8", "--eval-episodes", "10", "--out",
                         dir.path().string(), "--run-id", "pos"});
  ASSERT_EQ(o.code, kExitOk) << o.err;
  const std::vector<MetricsRow> rows = read_metrics(dir.path() / "pos" / "metrics.csv");
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].episode, 100 * (i + 1));
    EXPECT_EQ(rows[i].dim, 1u);
    EXPECT_EQ(rows[i].run_id, "pos");
  }
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "pos" / "trial_0.clck"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "pos" / "curves_reward.svg"));
}

TEST(Cli, ReportOnConstantSuccessKeepsRawCurve) {
  TempDir dir("report");
  std::vector<MetricsRow> rows;
  for (std::size_t ep = 100; ep <= 1000; ep += 100) rows.push_back(row("flat", 64, 0, ep, 1.0));
  write_metrics(rows, dir / "m.csv");
  const CliOutcome o = run({"report", "--metrics", (dir / "m.csv").string(), "--out", dir.path().string(), "--run-id",
                         "rep"});
  ASSERT_EQ(o.code, kExitOk) << o.err;
  EXPECT_NE(o.out.find("reaches 0.8 at episode 100"), std::string::npos) << o.out;
  std::istringstream csv(slurp(dir.path() / "rep" / "smoothed.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "run_id,dim,episode,mean_reward,smoothed_reward,mean_steps,smoothed_steps,success_rate,"
                  "smoothed_success");
  int n = 0;
  while (std::getline(csv, line)) {
    ++n;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    ASSERT_EQ(f.size(), 9u);
    EXPECT_EQ(f[3], f[4]);
    EXPECT_EQ(f[5], f[6]);
    EXPECT_EQ(f[7], "1");
    EXPECT_EQ(f[8], "1");
  }
  EXPECT_EQ(n, 10);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "rep" / "curves_steps.svg"));
}

TEST(Cli, OutputRootFlagBeatsEnvironmentVariable) {
  TempDir a("outflag"), b("outenv");
  ::setenv("ROUTENAV_OUT", b.path().string().c_str(), 1);
  ASSERT_EQ(run({"synth", "--frames", "10", "--dim", "4", "--corpus-frames", "0", "--run-id", "env"}).code, kExitOk);
  EXPECT_TRUE(std::filesystem::exists(b.path() / "env" / "run.json"));
  ASSERT_EQ(run({"synth", "--frames", "10", "--dim", "4", "--corpus-frames", "0", "--run-id", "flag", "--out",
                 a.path().string()})
                .code,
            kExitOk);
  ::unsetenv("ROUTENAV_OUT");
  EXPECT_TRUE(std::filesystem::exists(a.path() / "flag" / "run.json"));
  EXPECT_FALSE(std::filesystem::exists(b.path() / "flag"));
}
