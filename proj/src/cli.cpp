#include "routenav/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "routenav/binary_io.hpp"
#include "routenav/error.hpp"
#include "routenav/eval.hpp"
#include "routenav/features.hpp"
#include "routenav/metrics.hpp"
#include "routenav/net.hpp"
#include "routenav/ppo.hpp"
#include "routenav/traversal.hpp"

namespace routenav {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string sha256_hex(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) == 1, ErrorKind::io,
          "sha256 failed for " + path.string());
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::string escape_message(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out;
}

// ---------------------------------------------------------------- config

Json trainer_defaults() {
  const TrainerConfig t;
  return Json{{"gamma", t.gamma},
              {"gae_lambda", t.gae_lambda},
              {"clip", t.clip},
              {"epochs_per_update", t.epochs_per_update},
              {"rollout_horizon", t.rollout_horizon},
              {"minibatch_sequences", t.minibatch_sequences},
              {"bptt_truncation", t.bptt_truncation},
              {"entropy_coef", t.entropy_coef},
              {"value_coef", t.value_coef},
              {"lr", t.lr},
              {"n_envs", t.n_envs},
              {"trials", t.trials},
              {"max_episodes", t.max_episodes},
              {"max_grad_norm", t.max_grad_norm},
              {"eval_interval", t.eval_interval},
              {"eval_episodes", t.eval_episodes},
              {"adapt_curriculum", t.adapt_curriculum},
              {"curriculum_window", t.curriculum_window},
              {"promote_threshold", t.promote_threshold},
              {"divergence_threshold", t.divergence_threshold},
              {"record_wall_clock", t.record_wall_clock},
              {"precision", std::string(to_string(t.precision))}};
}

Json defaults_for(const std::string& cmd) {
  Json j{{"seed", 0}, {"run_id", cmd}, {"out", ""}};
  if (cmd == "synth") {
    const SynthConfig s;
    j["frames"] = s.n_frames;
    j["dim"] = s.dim;
    j["walk_step"] = s.walk_step;
    j["moderate_distortion"] = s.moderate.distortion;
    j["moderate_noise"] = s.moderate.noise;
    j["extreme_distortion"] = s.extreme.distortion;
    j["extreme_noise"] = s.extreme.noise;
    j["anisotropy"] = s.anisotropy;
    j["corpus_frames"] = s.corpus_frames;
    j["corpus_segment"] = s.corpus_segment;
  } else if (cmd == "reduce") {
    j["manifest"] = "";
    j["dims"] = Json::array({64});
  } else if (cmd == "train") {
    j["manifest"] = "";
    j["mode"] = "bimodal";
    j["encoder_relu"] = false;
    j["max_steps"] = 0;
    j["curriculum_levels"] = 7;
    j["weight"] = 0.9;
    j["trainer"] = trainer_defaults();
  } else if (cmd == "eval-vpr") {
    const ClassifierConfig c;
    j["manifest"] = "";
    j["dims"] = Json::array({64, 512, 2048, 4096});
    j["epochs"] = c.epochs;
    j["classifier_lr"] = c.lr;
    j["batch_size"] = c.batch_size;
    j["tolerance"] = kDefaultTolerance;
  } else if (cmd == "deploy") {
    j["manifest"] = "";
    j["mode"] = "bimodal";
    j["checkpoints"] = Json::array();
    j["projection"] = "";
    j["episodes"] = 500;
  } else if (cmd == "report") {
    j["metrics"] = Json::array();
    j["weight"] = 0.9;
    j["threshold"] = 0.8;
  }
  return j;
}

// Overlays `src` on `dst`; keys must already exist with the same JSON type.
void overlay(Json& dst, const Json& src, const std::string& where) {
  require(src.is_object(), ErrorKind::config, where + ": expected a JSON object");
  for (const auto& [key, value] : src.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    require(dst.contains(key), ErrorKind::config, "unknown config key '" + path + "'");
    Json& slot = dst[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
      continue;
    }
    const bool ok = (slot.is_number() && value.is_number()) || (slot.is_boolean() && value.is_boolean()) ||
                    (slot.is_string() && value.is_string()) || (slot.is_array() && value.is_array());
    require(ok, ErrorKind::config, "config key '" + path + "' has the wrong type");
    if (slot.is_number_integer() || slot.is_number_unsigned()) {
      require(value.is_number_integer() || value.is_number_unsigned(), ErrorKind::config,
              "config key '" + path + "' must be an integer");
      if (slot.is_number_unsigned() || slot.get<std::int64_t>() >= 0) {
        require(value.is_number_unsigned() || value.get<std::int64_t>() >= 0, ErrorKind::config,
                "config key '" + path + "' must be non-negative");
      }
    }
    slot = value;
  }
}

Json parse_flag_value(const Json& slot, const std::string& text, const std::string& path) {
  try {
    if (slot.is_string()) return text;
    if (slot.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      fail(ErrorKind::config, "flag for '" + path + "' expects true or false, got '" + text + "'");
    }
    if (slot.is_array()) {  // comma-separated integers
      Json arr = Json::array();
      std::size_t start = 0;
      while (start <= text.size()) {
        const std::size_t comma = std::min(text.find(',', start), text.size());
        arr.push_back(Json::parse(text.substr(start, comma - start)));
        start = comma + 1;
      }
      return arr;
    }
    return Json::parse(text);
  } catch (const Json::exception&) {
    fail(ErrorKind::config, "cannot parse value '" + text + "' for '" + path + "'");
  }
}

template <typename T>
T get(const Json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    fail(ErrorKind::config, "config key '" + key + "': " + e.what());
  }
}

TrainerConfig trainer_from(const Json& t) {
  TrainerConfig c;
  c.gamma = get<double>(t, "gamma");
  c.gae_lambda = get<double>(t, "gae_lambda");
  c.clip = get<double>(t, "clip");
  c.epochs_per_update = get<int>(t, "epochs_per_update");
  c.rollout_horizon = get<std::size_t>(t, "rollout_horizon");
  c.minibatch_sequences = get<std::size_t>(t, "minibatch_sequences");
  c.bptt_truncation = get<std::size_t>(t, "bptt_truncation");
  c.entropy_coef = get<double>(t, "entropy_coef");
  c.value_coef = get<double>(t, "value_coef");
  c.lr = get<double>(t, "lr");
  c.n_envs = get<std::size_t>(t, "n_envs");
  c.trials = get<int>(t, "trials");
  c.max_episodes = get<std::size_t>(t, "max_episodes");
  c.max_grad_norm = get<double>(t, "max_grad_norm");
  c.eval_interval = get<std::size_t>(t, "eval_interval");
  c.eval_episodes = get<std::size_t>(t, "eval_episodes");
  c.adapt_curriculum = get<bool>(t, "adapt_curriculum");
  c.curriculum_window = get<std::size_t>(t, "curriculum_window");
  c.promote_threshold = get<double>(t, "promote_threshold");
  c.divergence_threshold = get<double>(t, "divergence_threshold");
  c.record_wall_clock = get<bool>(t, "record_wall_clock");
  c.precision = parse_precision(get<std::string>(t, "precision"));
  c.validate();
  return c;
}

std::vector<std::size_t> dims_from(const Json& cfg) {
  const auto dims = get<std::vector<std::size_t>>(cfg, "dims");
  require(!dims.empty(), ErrorKind::config, "dims must not be empty");
  for (std::size_t d : dims) require(d > 0, ErrorKind::config, "dims must be positive");
  return dims;
}

// ---------------------------------------------------------------- run context

class Run {
 public:
  Run(std::string cmd, Json config) : cmd_(std::move(cmd)), config_(std::move(config)) {
    const std::string run_id = get<std::string>(config_, "run_id");
    require(!run_id.empty() && run_id.find_first_of("/\\,\"\n") == std::string::npos && run_id != "." &&
                run_id != "..",
            ErrorKind::config, "run_id must be a plain name without commas, quotes or slashes");
    fs::path root = get<std::string>(config_, "out");
    if (root.empty()) {
      const char* env = std::getenv("ROUTENAV_OUT");
      root = (env && *env) ? fs::path(env) : fs::path("runs");
    }
    dir_ = root / run_id;
    std::error_code ec;
    fs::create_directories(dir_, ec);
    require(!ec && fs::is_directory(dir_), ErrorKind::io, "cannot create output directory " + dir_.string());
  }

  const Json& config() const { return config_; }
  const fs::path& dir() const { return dir_; }
  std::string run_id() const { return get<std::string>(config_, "run_id"); }
  std::uint64_t seed() const { return get<std::uint64_t>(config_, "seed"); }

  void input(const fs::path& p) { inputs_[p.generic_string()] = sha256_hex(p); }
  fs::path output(const fs::path& rel) {
    outputs_.insert(rel.generic_string());
    return dir_ / rel;
  }

  fs::path finish() {
    Json m;
    m["tool"] = "routenav";
    m["subcommand"] = cmd_;
    m["seed"] = seed();
    m["config"] = config_;
    m["inputs"] = Json::object();
    for (const auto& [p, h] : inputs_) m["inputs"][p] = h;
    m["outputs"] = Json::object();
    for (const std::string& rel : outputs_) m["outputs"][rel] = sha256_hex(dir_ / rel);
    const fs::path path = dir_ / "run.json";
    write_text_file(path, m.dump(2) + "\n");
    return path;
  }

 private:
  std::string cmd_;
  Json config_;
  fs::path dir_;
  std::map<std::string, std::string> inputs_;
  std::set<std::string> outputs_;
};

fs::path required_path(const Json& cfg, const std::string& key) {
  const std::string p = get<std::string>(cfg, key);
  require(!p.empty(), ErrorKind::config, "'" + key + "' is required");
  return p;
}

// Manifest plus every descriptor table it references.
TraversalSet load_inputs(Run& run, const fs::path& manifest) {
  TraversalSet set = load_manifest(manifest);
  run.input(manifest);
  return set;
}

void write_set(Run& run, const TraversalSet& set, const fs::path& rel_dir) {
  const fs::path manifest = run.output(rel_dir / "manifest.json");
  write_manifest(set, manifest);
  run.output(rel_dir / (set.reference.name() + ".cldt"));
  for (const Traversal& v : set.variants) run.output(rel_dir / (v.name() + ".cldt"));
  if (set.fitting_corpus) run.output(rel_dir / (set.fitting_corpus->name() + ".cldt"));
}

std::size_t logged_dim(ObservationMode mode, const Traversal& route) {
  switch (mode) {
    case ObservationMode::bimodal: return route.dim();
    case ObservationMode::position_baseline: return 1;
    case ObservationMode::raw_image: return kImageBytes;
  }
  return 0;
}

// ---------------------------------------------------------------- subcommands

void cmd_synth(Run& run, std::ostream& out) {
  const Json& c = run.config();
  SynthConfig s;
  s.n_frames = get<std::size_t>(c, "frames");
  s.dim = get<std::size_t>(c, "dim");
  s.walk_step = get<double>(c, "walk_step");
  s.moderate = {get<double>(c, "moderate_distortion"), get<double>(c, "moderate_noise")};
  s.extreme = {get<double>(c, "extreme_distortion"), get<double>(c, "extreme_noise")};
  s.anisotropy = get<double>(c, "anisotropy");
  s.corpus_frames = get<std::size_t>(c, "corpus_frames");
  s.corpus_segment = get<std::size_t>(c, "corpus_segment");
  s.seed = run.seed();
  try {
    s.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  const TraversalSet set = generate_synthetic(s);
  write_set(run, set, "dataset");
  out << "wrote " << (run.dir() / "dataset" / "manifest.json").string() << "\n";
}

void cmd_reduce(Run& run, std::ostream& out) {
  const Json& c = run.config();
  const std::vector<std::size_t> dims = dims_from(c);
  const TraversalSet set = load_inputs(run, required_path(c, "manifest"));
  const std::size_t top = *std::max_element(dims.begin(), dims.end());
  const Projection full = fit_pca_whitening(fitting_pool(set), top);
  for (std::size_t d : dims) {
    const Projection p = full.truncated(d);
    const std::string tag = std::to_string(d);
    write_projection(p, run.output("projection_" + tag + ".clpj"));
    std::vector<Traversal> variants;
    for (const Traversal& v : set.variants) variants.push_back(project_traversal(p, v));
    TraversalSet reduced(project_traversal(p, set.reference), std::move(variants));
    reduced.image_seed = set.image_seed;
    write_set(run, reduced, "reduced_" + tag);
    out << "wrote " << (run.dir() / ("reduced_" + tag) / "manifest.json").string() << "\n";
  }
}

void cmd_train(Run& run, std::ostream& out) {
  const Json& c = run.config();
  const TraversalSet set = load_inputs(run, required_path(c, "manifest"));
  ObservationMode mode;
  try {
    mode = parse_observation_mode(get<std::string>(c, "mode"));
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  TrainSetup setup;
  try {
    setup.trainer = trainer_from(c.at("trainer"));
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  const Traversal route = mode == ObservationMode::raw_image
                              ? set.reference.with_images(set.image_seed.value_or(run.seed()))
                              : set.reference;
  setup.env.n_frames = route.size();
  setup.env.max_steps = get<std::size_t>(c, "max_steps");
  setup.env.curriculum_levels = get<int>(c, "curriculum_levels");
  setup.env.observation_mode = mode;
  try {
    setup.env.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  setup.shape = shape_for(route.dim(), mode);
  setup.shape.encoder_relu = get<bool>(c, "encoder_relu");
  setup.seed = run.seed();

  const TrainingLog log = train(setup, route, [&](const TrialResult& progress, const PolicyParams&) {
    const TrainingRow& r = progress.rows.back();
    out << "trial " << progress.trial << " episode " << r.episode << " success " << format_number(r.success_rate)
        << " level " << r.level << "\n";
    out.flush();
    return false;
  });
  const std::vector<MetricsRow> rows =
      metrics_rows(log, run.run_id(), std::string(to_string(route.condition())), logged_dim(mode, route));
  write_metrics(rows, run.output("metrics.csv"));
  for (const TrialResult& t : log.trials) {
    write_checkpoint(t.params, run.output("trial_" + std::to_string(t.trial) + ".clck"));
  }
  for (const fs::path& p : render_training_figures(rows, run.dir() / "curves", get<double>(c, "weight"))) {
    run.output(p.filename());
  }
  out << "wrote " << (run.dir() / "metrics.csv").string() << "\n";
}

void cmd_eval_vpr(Run& run, std::ostream& out) {
  const Json& c = run.config();
  const std::vector<std::size_t> dims = dims_from(c);
  const TraversalSet set = load_inputs(run, required_path(c, "manifest"));
  ClassifierConfig cc;
  cc.epochs = get<int>(c, "epochs");
  cc.lr = get<double>(c, "classifier_lr");
  cc.batch_size = get<std::size_t>(c, "batch_size");
  cc.seed = run.seed();
  require(cc.epochs >= 0 && cc.lr > 0 && cc.batch_size > 0, ErrorKind::config,
          "classifier needs epochs >= 0, classifier_lr > 0 and batch_size > 0");
  const std::size_t tolerance = get<std::size_t>(c, "tolerance");
  const std::size_t top = *std::max_element(dims.begin(), dims.end());
  const Projection full = fit_pca_whitening(fitting_pool(set), top);
  std::vector<VprRow> rows;
  for (std::size_t d : dims) {
    const Projection p = full.truncated(d);
    for (const Traversal& v : set.variants) {
      rows.push_back({run.run_id(), evaluate_vpr(p, set.reference, v, cc, tolerance), tolerance, run.seed()});
      out << to_string(v.condition()) << " " << d << "-d auc " << format_number(rows.back().result.auc) << "\n";
    }
  }
  write_text_file(run.output("vpr.csv"), vpr_csv(rows));
}

void cmd_deploy(Run& run, std::ostream& out) {
  const Json& c = run.config();
  const TraversalSet set = load_inputs(run, required_path(c, "manifest"));
  ObservationMode mode;
  try {
    mode = parse_observation_mode(get<std::string>(c, "mode"));
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  const auto checkpoints = get<std::vector<std::string>>(c, "checkpoints");
  require(!checkpoints.empty(), ErrorKind::config, "at least one checkpoint is required");
  const std::size_t episodes = get<std::size_t>(c, "episodes");
  require(episodes > 0, ErrorKind::config, "episodes must be positive");

  std::vector<Traversal> routes{set.reference};
  for (const Traversal& v : set.variants) routes.push_back(v);
  if (const std::string proj = get<std::string>(c, "projection"); !proj.empty()) {
    require(mode == ObservationMode::bimodal, ErrorKind::config, "a projection only applies to bimodal mode");
    const Projection p = read_projection(proj);
    run.input(proj);
    for (Traversal& r : routes) r = project_traversal(p, r);
  }
  if (mode == ObservationMode::raw_image) {
    for (Traversal& r : routes) r = r.with_images(set.image_seed.value_or(run.seed()));
  }

  std::vector<PolicyParams> policies;
  for (const std::string& path : checkpoints) {
    policies.push_back(read_checkpoint(path));
    run.input(path);
  }
  std::vector<DeployRow> rows;
  for (const Traversal& route : routes) {
    DeploymentStats mean;
    for (std::size_t k = 0; k < policies.size(); ++k) {
      const DeploymentStats s = deploy(policies[k], mode, route, episodes, run.seed());
      rows.push_back({run.run_id(), std::to_string(k), run.seed(), logged_dim(mode, route), s});
      mean.condition = s.condition;
      mean.episodes += s.episodes;
      mean.completed_pct += s.completed_pct;
      mean.failed_pct += s.failed_pct;
      mean.mean_steps += s.mean_steps;
      mean.mean_reward += s.mean_reward;
    }
    const double n = static_cast<double>(policies.size());
    mean.episodes /= policies.size();
    mean.completed_pct /= n;
    mean.failed_pct /= n;
    mean.mean_steps /= n;
    mean.mean_reward /= n;
    rows.push_back({run.run_id(), "mean", run.seed(), logged_dim(mode, route), mean});
    out << mean.condition << " completed " << format_number(mean.completed_pct) << "%\n";
  }
  write_text_file(run.output("deploy.csv"), deploy_csv(rows));
}

void cmd_report(Run& run, std::ostream& out) {
  const Json& c = run.config();
  const auto paths = get<std::vector<std::string>>(c, "metrics");
  require(!paths.empty(), ErrorKind::config, "at least one metrics CSV is required");
  const double weight = get<double>(c, "weight");
  const double threshold = get<double>(c, "threshold");
  require(weight >= 0.0 && weight < 1.0, ErrorKind::config, "weight must be in [0, 1)");
  std::vector<MetricsRow> rows;
  for (const std::string& p : paths) {
    const std::vector<MetricsRow> part = read_metrics(p);
    run.input(p);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  for (const fs::path& p : render_training_figures(rows, run.dir() / "curves", weight)) run.output(p.filename());

  // Trial means per (run, dim), smoothed.
  struct Acc {
    double reward = 0, steps = 0, success = 0;
    std::size_t n = 0;
  };
  std::map<std::pair<std::string, std::size_t>, std::map<std::size_t, Acc>> grouped;
  for (const MetricsRow& r : rows) {
    Acc& a = grouped[{r.run_id, r.dim}][r.episode];
    a.reward += r.mean_reward;
    a.steps += r.mean_steps;
    a.success += r.success_rate;
    a.n += 1;
  }
  std::string csv = "run_id,dim,episode,mean_reward,smoothed_reward,mean_steps,smoothed_steps,success_rate,"
                    "smoothed_success\n";
  for (const auto& [key, by_episode] : grouped) {
    std::vector<double> x, reward, steps, success;
    for (const auto& [ep, a] : by_episode) {
      const double n = static_cast<double>(a.n);
      x.push_back(static_cast<double>(ep));
      reward.push_back(a.reward / n);
      steps.push_back(a.steps / n);
      success.push_back(a.success / n);
    }
    const auto sr = smooth_curve(reward, weight), ss = smooth_curve(steps, weight),
               su = smooth_curve(success, weight);
    for (std::size_t i = 0; i < x.size(); ++i) {
      csv += key.first + "," + std::to_string(key.second) + "," + format_number(x[i]) + "," +
             format_number(reward[i]) + "," + format_number(sr[i]) + "," + format_number(steps[i]) + "," +
             format_number(ss[i]) + "," + format_number(success[i]) + "," + format_number(su[i]) + "\n";
    }
    const auto cross = first_crossing(x, success, threshold, weight);
    out << key.first << " " << key.second << "-d: smoothed success reaches " << format_number(threshold) << " at "
        << (cross ? "episode " + format_number(*cross) : std::string("never")) << "\n";
  }
  write_text_file(run.output("smoothed.csv"), csv);
}

using Handler = void (*)(Run&, std::ostream&);

struct Command {
  const char* name;
  const char* help;
  Handler handler;
};

constexpr Command kCommands[] = {
    {"synth", "Generate a synthetic reference route with moderate and extreme variants", cmd_synth},
    {"reduce", "Fit PCA whitening on reference data and write projected datasets", cmd_reduce},
    {"train", "Train recurrent PPO navigation agents", cmd_train},
    {"eval-vpr", "Place-recognition precision/recall AUC per dimension and condition", cmd_eval_vpr},
    {"deploy", "Deploy trained checkpoints on every traversal of a dataset", cmd_deploy},
    {"report", "Render training curves and smoothed summaries from metrics CSVs", cmd_report},
};

// Flag name for a config leaf: nested keys use their own name.
std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

struct FlagBinding {
  std::vector<std::string> path;
  std::string fallback;
  std::vector<std::string> values;
  CLI::Option* option = nullptr;
};

void bind_flags(const Json& node, std::vector<std::string> prefix, std::vector<FlagBinding>& out) {
  for (const auto& [key, value] : node.items()) {
    std::vector<std::string> path = prefix;
    path.push_back(key);
    if (value.is_object()) {
      bind_flags(value, path, out);
      continue;
    }
    out.push_back({path, value.dump(), {}, nullptr});
  }
}

}  // namespace

int run_subcommand(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  const auto report_error = [&](ErrorKind kind, std::string_view message) {
    err << "error: kind=" << to_string(kind) << " message=\"" << escape_message(message) << "\"\n";
    switch (kind) {
      case ErrorKind::usage: return kExitUsage;
      case ErrorKind::config: return kExitConfig;
      default: return kExitRuntime;
    }
  };

  CLI::App app{"Route navigation with compact visual features", "routenav"};
  app.require_subcommand(1);
  struct Bound {
    CLI::App* app;
    const Command* command;
    std::string config_path;
    std::vector<FlagBinding> flags;
  };
  std::vector<Bound> bound;
  bound.reserve(std::size(kCommands));
  for (const Command& cmd : kCommands) {
    Bound b{app.add_subcommand(cmd.name, cmd.help), &cmd, {}, {}};
    bound.push_back(std::move(b));
  }
  for (Bound& b : bound) {
    b.app->add_option("--config", b.config_path, "JSON config file; flags override its values");
    bind_flags(defaults_for(b.command->name), {}, b.flags);
    for (FlagBinding& f : b.flags) {
      std::string name = flag_name(f.path.back());
      if (f.path.back() == "checkpoints") name = "--checkpoint";
      const bool multi = f.path.back() == "checkpoints" || f.path.back() == "metrics";
      f.option = b.app->add_option(name, f.values, "default " + f.fallback);
      if (!multi) f.option->expected(1);
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return report_error(ErrorKind::usage, e.what());
  }

  try {
    for (Bound& b : bound) {
      if (!b.app->parsed()) continue;
      const std::string name = b.command->name;
      Json cfg = defaults_for(name);
      if (!b.config_path.empty()) {
        require(fs::exists(b.config_path), ErrorKind::config, "config file not found: " + b.config_path);
        const std::vector<std::uint8_t> bytes = read_file_bytes(b.config_path);
        Json file;
        try {
          file = Json::parse(bytes.begin(), bytes.end());
        } catch (const Json::parse_error& e) {
          fail(ErrorKind::config, b.config_path + ": invalid JSON: " + e.what());
        }
        overlay(cfg, file, "");
      }
      for (const FlagBinding& f : b.flags) {
        if (f.option->count() == 0) continue;
        Json* slot = &cfg;
        std::string path;
        for (const std::string& k : f.path) {
          slot = &(*slot)[k];
          path += (path.empty() ? "" : ".") + k;
        }
        if (slot->is_array() && (f.path.back() == "checkpoints" || f.path.back() == "metrics")) {
          *slot = f.values;
        } else {
          Json overlay_doc = Json::object();
          Json* cur = &overlay_doc;
          for (const std::string& k : f.path) cur = &(*cur)[k];
          *cur = parse_flag_value(*slot, f.values.front(), path);
          overlay(cfg, overlay_doc, "");
        }
      }
      Run run(name, cfg);
      b.command->handler(run, out);
      const fs::path manifest = run.finish();
      out << "run manifest " << manifest.string() << "\n";
      return kExitOk;
    }
    return report_error(ErrorKind::usage, "no subcommand given");
  } catch (const Error& e) {
    return report_error(e.kind(), e.what());
  } catch (const std::exception& e) {
    return report_error(ErrorKind::io, e.what());
  }
}

}  // namespace routenav
