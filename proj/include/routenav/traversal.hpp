#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace routenav {

enum class Condition { reference, moderate, extreme };

std::string_view to_string(Condition condition);
Condition parse_condition(std::string_view text);

inline constexpr int kImageSide = 84;
inline constexpr int kImageChannels = 3;
inline constexpr std::size_t kImageBytes = kImageSide * kImageSide * kImageChannels;

// Row-major HWC, 84x84x3.
using RawImage = std::vector<std::uint8_t>;

struct Frame {
  std::size_t index = 0;
  std::vector<float> descriptor;
  std::optional<RawImage> raw_image;

  friend bool operator==(const Frame&, const Frame&) = default;
};

// One pass along a route. Immutable once constructed; the constructor enforces
// contiguous indices, a shared dimension, N >= 2 and unit-norm descriptors.
class Traversal {
 public:
  Traversal(std::string name, Condition condition, std::vector<Frame> frames);

  const std::string& name() const { return name_; }
  Condition condition() const { return condition_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return frames_.size(); }

  const Frame& frame(std::size_t i) const { return frames_.at(i); }
  const std::vector<Frame>& frames() const { return frames_; }
  std::span<const float> descriptor(std::size_t i) const { return frames_.at(i).descriptor; }
  bool has_images() const;

  // Same frames with procedural raw images attached (for the raw-image agent).
  Traversal with_images(std::uint64_t image_seed) const;

  friend bool operator==(const Traversal&, const Traversal&) = default;

 private:
  std::string name_;
  Condition condition_;
  std::size_t dim_ = 0;
  std::vector<Frame> frames_;
};

inline constexpr double kUnitNormTolerance = 1e-6;

// Reference traversal plus index-aligned variants: frame i of every variant
// depicts the same place as frame i of the reference.
struct TraversalSet {
  TraversalSet(Traversal reference, std::vector<Traversal> variants,
               std::optional<Traversal> fitting_corpus = std::nullopt);

  Traversal reference;
  std::vector<Traversal> variants;
  // Extra reference-condition places used only to fit projections whose
  // output dimension exceeds what the route alone can support.
  std::optional<Traversal> fitting_corpus;
  std::optional<std::uint64_t> image_seed;

  const Traversal& variant(Condition condition) const;

  friend bool operator==(const TraversalSet&, const TraversalSet&) = default;
};

struct ConditionModel {
  double distortion = 0.0;  // beta: M = I + beta * G
  double noise = 0.0;       // sigma: per-frame isotropic noise
};

struct SynthConfig {
  std::size_t n_frames = 100;
  std::size_t dim = 64;
  double walk_step = 0.15;
  ConditionModel moderate{0.1, 0.3};
  ConditionModel extreme{0.5, 1.0};
  // Power-law decay of the per-axis step scale (0 = isotropic walk).
  double anisotropy = 0.0;
  // Number of extra reference-condition places drawn as independent walk
  // segments for projection fitting (0 = none).
  std::size_t corpus_frames = 0;
  std::size_t corpus_segment = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

TraversalSet generate_synthetic(const SynthConfig& config);

void write_descriptor_table(const Traversal& traversal, const std::filesystem::path& path);
Traversal read_descriptor_table(const std::filesystem::path& path, std::string name = {},
                                Condition condition = Condition::reference);

// Writes one descriptor table per traversal next to `manifest_path` and the
// JSON manifest itself.
void write_manifest(const TraversalSet& set, const std::filesystem::path& manifest_path);
TraversalSet load_manifest(const std::filesystem::path& manifest_path);

RawImage make_raw_frame_image(std::size_t place_index, Condition condition, std::uint64_t seed);

}  // namespace routenav
