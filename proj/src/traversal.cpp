#include "routenav/traversal.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "routenav/binary_io.hpp"
#include "routenav/error.hpp"
#include "routenav/random.hpp"

namespace routenav {

namespace {

constexpr std::array<char, 4> kTableMagic{'C', 'L', 'D', 'T'};
constexpr std::uint32_t kTableVersion = 1;

std::vector<float> to_unit_float(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) fail(ErrorKind::numeric, "cannot normalize a zero descriptor");
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v[i] / n);
  return out;
}

// Per-axis step scale; squared entries sum to one so a step has unit expected
// squared norm whatever the dimension.
Eigen::VectorXd axis_scale(std::size_t dim, double anisotropy) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(dim));
  for (std::size_t j = 0; j < dim; ++j) s[static_cast<Eigen::Index>(j)] = std::pow(double(j + 1), -anisotropy);
  return s / s.norm();
}

Eigen::VectorXd gaussian(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return v;
}

Traversal make_traversal(std::string name, Condition condition, const Eigen::MatrixXd& columns) {
  std::vector<Frame> frames(static_cast<std::size_t>(columns.cols()));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    frames[i].index = i;
    frames[i].descriptor = to_unit_float(columns.col(static_cast<Eigen::Index>(i)));
  }
  return Traversal(std::move(name), condition, std::move(frames));
}

}  // namespace

std::string_view to_string(Condition condition) {
  switch (condition) {
    case Condition::reference: return "reference";
    case Condition::moderate: return "moderate";
    case Condition::extreme: return "extreme";
  }
  return "reference";
}

Condition parse_condition(std::string_view text) {
  if (text == "reference") return Condition::reference;
  if (text == "moderate") return Condition::moderate;
  if (text == "extreme") return Condition::extreme;
  fail(ErrorKind::config, "unknown condition '" + std::string(text) + "'");
}

Traversal::Traversal(std::string name, Condition condition, std::vector<Frame> frames)
    : name_(std::move(name)), condition_(condition), frames_(std::move(frames)) {
  require(frames_.size() >= 2, ErrorKind::format,
          "traversal '" + name_ + "' needs at least 2 frames, got " + std::to_string(frames_.size()));
  dim_ = frames_.front().descriptor.size();
  require(dim_ >= 1, ErrorKind::format, "traversal '" + name_ + "' has zero-length descriptors");
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    const Frame& f = frames_[i];
    require(f.index == i, ErrorKind::format,
            "traversal '" + name_ + "': frame " + std::to_string(i) + " carries index " + std::to_string(f.index));
    require(f.descriptor.size() == dim_, ErrorKind::format,
            "traversal '" + name_ + "': frame " + std::to_string(i) + " has dim " +
                std::to_string(f.descriptor.size()) + ", expected " + std::to_string(dim_));
    double sq = 0.0;
    for (float v : f.descriptor) sq += double(v) * double(v);
    const double norm = std::sqrt(sq);
    require(std::abs(norm - 1.0) <= kUnitNormTolerance, ErrorKind::format,
            "traversal '" + name_ + "': descriptor " + std::to_string(i) + " has norm " + std::to_string(norm));
    if (f.raw_image) {
      require(f.raw_image->size() == kImageBytes, ErrorKind::shape,
              "traversal '" + name_ + "': raw image " + std::to_string(i) + " is not 84x84x3");
    }
  }
}

bool Traversal::has_images() const {
  return std::all_of(frames_.begin(), frames_.end(), [](const Frame& f) { return f.raw_image.has_value(); });
}

Traversal Traversal::with_images(std::uint64_t image_seed) const {
  std::vector<Frame> frames = frames_;
  for (Frame& f : frames) f.raw_image = make_raw_frame_image(f.index, condition_, image_seed);
  return Traversal(name_, condition_, std::move(frames));
}

TraversalSet::TraversalSet(Traversal reference_, std::vector<Traversal> variants_,
                           std::optional<Traversal> fitting_corpus_)
    : reference(std::move(reference_)), variants(std::move(variants_)), fitting_corpus(std::move(fitting_corpus_)) {
  for (const Traversal& v : variants) {
    require(v.size() == reference.size(), ErrorKind::alignment,
            "variant '" + v.name() + "' has " + std::to_string(v.size()) + " frames, reference '" +
                reference.name() + "' has " + std::to_string(reference.size()));
    require(v.dim() == reference.dim(), ErrorKind::alignment,
            "variant '" + v.name() + "' has dim " + std::to_string(v.dim()) + ", reference has " +
                std::to_string(reference.dim()));
  }
  if (fitting_corpus) {
    require(fitting_corpus->dim() == reference.dim(), ErrorKind::alignment,
            "fitting corpus dim " + std::to_string(fitting_corpus->dim()) + " differs from reference dim " +
                std::to_string(reference.dim()));
  }
}

const Traversal& TraversalSet::variant(Condition condition) const {
  for (const Traversal& v : variants) {
    if (v.condition() == condition) return v;
  }
  fail(ErrorKind::config, "dataset has no '" + std::string(to_string(condition)) + "' variant");
}

void SynthConfig::validate() const {
  require(n_frames >= 2, ErrorKind::config, "synth: n_frames must be >= 2");
  require(dim >= 2, ErrorKind::config, "synth: dim must be >= 2");
  require(walk_step >= 0.0 && moderate.distortion >= 0.0 && moderate.noise >= 0.0 &&
              extreme.distortion >= 0.0 && extreme.noise >= 0.0 && anisotropy >= 0.0,
          ErrorKind::config, "synth: walk_step, distortion, noise and anisotropy must be >= 0");
  require(corpus_frames == 0 || corpus_frames >= 2, ErrorKind::config, "synth: corpus_frames must be 0 or >= 2");
  require(corpus_segment >= 1, ErrorKind::config, "synth: corpus_segment must be >= 1");
}

TraversalSet generate_synthetic(const SynthConfig& config) {
  config.validate();
  const auto d = static_cast<Eigen::Index>(config.dim);
  const auto n = static_cast<Eigen::Index>(config.n_frames);
  const Eigen::VectorXd scale = axis_scale(config.dim, config.anisotropy);

  // Reference route: random walk on the unit sphere.
  Eigen::MatrixXd walk(d, n);
  {
    Rng rng = make_rng({config.seed, 1});
    Eigen::VectorXd x = gaussian(config.dim, rng).cwiseProduct(scale).normalized();
    walk.col(0) = x;
    for (Eigen::Index i = 1; i < n; ++i) {
      x = (x + config.walk_step * gaussian(config.dim, rng).cwiseProduct(scale)).normalized();
      walk.col(i) = x;
    }
  }
  Traversal reference = make_traversal("reference", Condition::reference, walk);

  // One fixed distortion direction shared by all conditions, scaled by beta.
  Eigen::MatrixXd g(d, d);
  {
    Rng rng = make_rng({config.seed, 2});
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(config.dim)));
    for (Eigen::Index c = 0; c < d; ++c) {
      for (Eigen::Index r = 0; r < d; ++r) g(r, c) = normal(rng);
    }
  }

  std::vector<Traversal> variants;
  for (Condition condition : {Condition::moderate, Condition::extreme}) {
    const ConditionModel& model = condition == Condition::moderate ? config.moderate : config.extreme;
    if (model.distortion == 0.0 && model.noise == 0.0) {
      std::vector<Frame> frames = reference.frames();
      variants.emplace_back(std::string(to_string(condition)), condition, std::move(frames));
      continue;
    }
    Eigen::MatrixXd seen = walk;
    if (model.distortion != 0.0) seen.noalias() += model.distortion * (g * walk);
    Rng rng = make_rng({config.seed, 3, static_cast<std::uint64_t>(condition)});
    const double sigma = model.noise / std::sqrt(double(config.dim));
    std::normal_distribution<double> normal;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index r = 0; r < d; ++r) seen(r, i) += sigma * normal(rng);
    }
    variants.push_back(make_traversal(std::string(to_string(condition)), condition, seen));
  }

  std::optional<Traversal> corpus;
  if (config.corpus_frames > 0) {
    Rng rng = make_rng({config.seed, 4});
    Eigen::MatrixXd places(d, static_cast<Eigen::Index>(config.corpus_frames));
    Eigen::VectorXd x;
    for (std::size_t i = 0; i < config.corpus_frames; ++i) {
      if (i % config.corpus_segment == 0) {
        x = gaussian(config.dim, rng).cwiseProduct(scale).normalized();
      } else {
        x = (x + config.walk_step * gaussian(config.dim, rng).cwiseProduct(scale)).normalized();
      }
      places.col(static_cast<Eigen::Index>(i)) = x;
    }
    corpus = make_traversal("corpus", Condition::reference, places);
  }

  TraversalSet set(std::move(reference), std::move(variants), std::move(corpus));
  set.image_seed = config.seed;
  return set;
}

void write_descriptor_table(const Traversal& traversal, const std::filesystem::path& path) {
  BinaryWriter w(kTableMagic, kTableVersion);
  w.u32(static_cast<std::uint32_t>(traversal.size()));
  w.u32(static_cast<std::uint32_t>(traversal.dim()));
  for (const Frame& f : traversal.frames()) w.f32(std::span<const float>(f.descriptor));
  w.save(path);
}

Traversal read_descriptor_table(const std::filesystem::path& path, std::string name, Condition condition) {
  BinaryReader r(path, kTableMagic, kTableVersion);
  const std::uint32_t count = r.u32("frame_count");
  const std::uint32_t dim = r.u32("dim");
  require(count >= 2, ErrorKind::format, path.string() + ": frame_count must be >= 2, got " + std::to_string(count));
  require(dim >= 1, ErrorKind::format, path.string() + ": dim must be >= 1");
  const std::uint64_t expected = std::uint64_t(count) * dim * 4;
  if (r.remaining() < expected) {
    fail(ErrorKind::format, path.string() + ": truncated payload: header declares frame_count=" +
                                std::to_string(count) + " x dim=" + std::to_string(dim) + " (" +
                                std::to_string(expected) + " bytes) but body holds " +
                                std::to_string(r.remaining()) + " bytes");
  }
  std::vector<Frame> frames(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    frames[i].index = i;
    frames[i].descriptor.resize(dim);
    r.f32(std::span<float>(frames[i].descriptor), "descriptors");
  }
  r.expect_end();
  if (name.empty()) name = path.stem().string();
  return Traversal(std::move(name), condition, std::move(frames));
}

namespace {

using Json = nlohmann::ordered_json;

Json entry_json(const Traversal& t, const std::string& file) {
  return Json{{"name", t.name()}, {"condition", std::string(to_string(t.condition()))}, {"descriptors", file}};
}

Traversal entry_load(const Json& j, const std::filesystem::path& base, const char* where) {
  for (const char* key : {"name", "condition", "descriptors"}) {
    require(j.contains(key) && j[key].is_string(), ErrorKind::format,
            std::string("manifest ") + where + ": missing string field '" + key + "'");
  }
  const std::filesystem::path file = base / j["descriptors"].get<std::string>();
  require(std::filesystem::exists(file), ErrorKind::io, "missing descriptor table " + file.string());
  return read_descriptor_table(file, j["name"].get<std::string>(),
                               parse_condition(j["condition"].get<std::string>()));
}

}  // namespace

void write_manifest(const TraversalSet& set, const std::filesystem::path& manifest_path) {
  const std::filesystem::path dir = manifest_path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  Json j;
  write_descriptor_table(set.reference, dir / (set.reference.name() + ".cldt"));
  j["reference"] = entry_json(set.reference, set.reference.name() + ".cldt");
  j["variants"] = Json::array();
  for (const Traversal& v : set.variants) {
    write_descriptor_table(v, dir / (v.name() + ".cldt"));
    j["variants"].push_back(entry_json(v, v.name() + ".cldt"));
  }
  if (set.fitting_corpus) {
    write_descriptor_table(*set.fitting_corpus, dir / (set.fitting_corpus->name() + ".cldt"));
    j["fitting_corpus"] = entry_json(*set.fitting_corpus, set.fitting_corpus->name() + ".cldt");
  }
  if (set.image_seed) j["image_seed"] = *set.image_seed;
  write_text_file(manifest_path, j.dump(2) + "\n");
}

TraversalSet load_manifest(const std::filesystem::path& manifest_path) {
  require(std::filesystem::exists(manifest_path), ErrorKind::io, "missing manifest " + manifest_path.string());
  const auto bytes = read_file_bytes(manifest_path);
  Json j;
  try {
    j = Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::format, manifest_path.string() + ": invalid JSON: " + e.what());
  }
  require(j.is_object() && j.contains("reference"), ErrorKind::format,
          manifest_path.string() + ": missing 'reference'");
  const std::filesystem::path base = manifest_path.parent_path();
  Traversal reference = entry_load(j["reference"], base, "reference");
  std::vector<Traversal> variants;
  if (j.contains("variants")) {
    require(j["variants"].is_array(), ErrorKind::format, manifest_path.string() + ": 'variants' must be an array");
    for (const Json& v : j["variants"]) variants.push_back(entry_load(v, base, "variant"));
  }
  std::optional<Traversal> corpus;
  if (j.contains("fitting_corpus")) corpus = entry_load(j["fitting_corpus"], base, "fitting_corpus");
  TraversalSet set(std::move(reference), std::move(variants), std::move(corpus));
  if (j.contains("image_seed")) set.image_seed = j["image_seed"].get<std::uint64_t>();
  return set;
}

RawImage make_raw_frame_image(std::size_t place_index, Condition condition, std::uint64_t seed) {
  struct Wave {
    double fx, fy, amplitude, phase, drift;
  };
  constexpr int kWavesPerChannel = 6;
  std::array<std::array<Wave, kWavesPerChannel>, kImageChannels> waves{};
  {
    Rng rng = make_rng({seed, 77});
    std::uniform_real_distribution<double> freq(0.02, 0.15), amp(10.0, 30.0),
        phase(0.0, 2.0 * std::numbers::pi), drift(0.05, 0.25), sign(-1.0, 1.0);
    for (auto& channel : waves) {
      for (Wave& w : channel) {
        w = {freq(rng) * (sign(rng) < 0 ? -1 : 1), freq(rng), amp(rng), phase(rng), drift(rng)};
      }
    }
  }
  double brightness = 0.0, noise = 0.0;
  switch (condition) {
    case Condition::reference: break;
    case Condition::moderate: brightness = -25.0; noise = 8.0; break;
    case Condition::extreme: brightness = -70.0; noise = 25.0; break;
  }
  Rng pixel_rng = make_rng({seed, place_index, static_cast<std::uint64_t>(condition), 78});
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  RawImage image(kImageBytes);
  const double place = static_cast<double>(place_index);
  for (int y = 0; y < kImageSide; ++y) {
    for (int x = 0; x < kImageSide; ++x) {
      for (int c = 0; c < kImageChannels; ++c) {
        double v = 128.0 + brightness;
        for (const Wave& w : waves[c]) v += w.amplitude * std::sin(w.fx * x + w.fy * y + w.phase + w.drift * place);
        if (noise > 0.0) v += noise * jitter(pixel_rng);
        image[(static_cast<std::size_t>(y) * kImageSide + x) * kImageChannels + c] =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return image;
}

}  // namespace routenav
