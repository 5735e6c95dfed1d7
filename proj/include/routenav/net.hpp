#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "routenav/env.hpp"

namespace routenav {

// Conv encoder geometry for 84x84x3 inputs.
inline constexpr int kConv1Filters = 16, kConv1Kernel = 8, kConv1Stride = 4, kConv1Out = 20;
inline constexpr int kConv2Filters = 32, kConv2Kernel = 4, kConv2Stride = 2, kConv2Out = 9;
inline constexpr int kConvFlat = kConv2Filters * kConv2Out * kConv2Out;  // 2592

struct NetShape {
  // Length of the encoder input b_t: visual features plus the goal scalar.
  // With a conv encoder the visual features are the conv output.
  std::size_t input_dim = 2;
  std::size_t encoder_width = 512;
  std::size_t lstm_width = 256;
  bool conv = false;
  std::size_t conv_features = 512;
  // The encoder is affine by default; this adds a rectifier after it.
  bool encoder_relu = false;

  std::size_t lstm_input() const { return encoder_width + kNumActions; }
  friend bool operator==(const NetShape&, const NetShape&) = default;
};

NetShape shape_for(std::size_t visual_dim, ObservationMode mode);

struct ConvEncoderParams {
  Eigen::MatrixXd w1;  // 16 x (8*8*3), columns ordered (ky, kx, channel)
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // 32 x (4*4*16)
  Eigen::VectorXd b2;
  Eigen::MatrixXd fc_w;  // conv_features x 2592
  Eigen::VectorXd fc_b;
};

// Linear encoder -> LSTM over concat(encoding, previous action one-hot) ->
// policy logits and value. LSTM gate blocks are stacked [input, forget,
// output, candidate]. Gradients and Adam moments share this layout.
struct PolicyParams {
  NetShape shape;
  Eigen::MatrixXd enc_w;  // E x input_dim
  Eigen::VectorXd enc_b;
  Eigen::MatrixXd lstm_wx;  // 4H x (E + |A|)
  Eigen::MatrixXd lstm_wh;  // 4H x H
  Eigen::VectorXd lstm_b;
  Eigen::MatrixXd pi_w;  // |A| x H
  Eigen::VectorXd pi_b;
  Eigen::VectorXd v_w;  // H
  Eigen::VectorXd v_b;  // 1
  std::optional<ConvEncoderParams> conv;

  static PolicyParams zeros(const NetShape& shape);
};

using Gradients = PolicyParams;

struct TensorView {
  std::string_view name;
  Eigen::Map<Eigen::VectorXd> values;
};
struct ConstTensorView {
  std::string_view name;
  Eigen::Map<const Eigen::VectorXd> values;
};

// Every tensor in declaration order (the checkpoint order). Views alias `p`.
std::vector<TensorView> tensors(PolicyParams& p);
std::vector<ConstTensorView> tensors(const PolicyParams& p);

std::size_t parameter_count(const PolicyParams& p);
bool same_shapes(const PolicyParams& a, const PolicyParams& b);

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero except the forget
// gate (1.0); policy and value heads zero.
PolicyParams init_params(const NetShape& shape, std::uint64_t seed);

struct Hidden {
  Eigen::VectorXd h;
  Eigen::VectorXd c;
  Eigen::VectorXd prev_action;  // one-hot, zeros at episode start

  static Hidden zeros(const NetShape& shape);
};

// One policy input: the encoder input b_t, or with a conv encoder the goal
// scalar plus the 84x84x3 image.
struct StepInput {
  std::span<const double> bimodal;
  std::span<const std::uint8_t> image;
};

StepInput step_input(const Observation& obs);

struct PolicyOutput {
  Eigen::VectorXd logits;
  double value = 0.0;
  Hidden hidden;  // prev_action is carried over unchanged
};

PolicyOutput policy_forward(const PolicyParams& p, const StepInput& input, const Hidden& hidden);

// Batched single step: columns are independent agents.
struct HiddenBatch {
  Eigen::MatrixXd h;            // H x B
  Eigen::MatrixXd c;            // H x B
  std::vector<int> prev_action;  // -1 = none

  static HiddenBatch zeros(const NetShape& shape, std::size_t batch);
  void reset(std::size_t column);
};

struct BatchOutput {
  Eigen::MatrixXd logits;  // |A| x B
  Eigen::VectorXd values;  // B
};

// Arithmetic of the encoder, LSTM and heads. The conv stack, the loss and the
// optimizer always run in double.
enum class Precision { float64, float32 };
std::string_view to_string(Precision precision);
Precision parse_precision(std::string_view text);

// Parameters as seen by the forward and backward passes. float64 aliases the
// master copy; float32 rounds a private copy once at construction, so build
// one per parameter version, not per call.
class ComputeParams {
 public:
  struct Float32Copy;

  explicit ComputeParams(const PolicyParams& p, Precision precision = Precision::float64);
  ComputeParams(PolicyParams&&, Precision = Precision::float64) = delete;

  const PolicyParams& master() const { return *master_; }
  const NetShape& shape() const { return master_->shape; }
  Precision precision() const { return precision_; }
  const Float32Copy* float32() const { return f32_.get(); }

 private:
  const PolicyParams* master_;
  Precision precision_;
  std::shared_ptr<const Float32Copy> f32_;
};

// Advances `hidden` in place (h, c); prev_action is left for the caller.
BatchOutput forward_batch(const PolicyParams& p, std::span<const StepInput> inputs, HiddenBatch& hidden);
BatchOutput forward_batch(const ComputeParams& p, std::span<const StepInput> inputs, HiddenBatch& hidden);

Eigen::VectorXd conv_forward(const ConvEncoderParams& p, std::span<const std::uint8_t> image);

// B sequences of T steps, stored time-major: column t * B + b.
struct SequenceInput {
  std::size_t steps = 0;
  std::size_t batch = 0;
  Eigen::MatrixXd bimodal;                         // input rows (or 1 goal row with conv) x (T*B)
  std::vector<std::span<const std::uint8_t>> images;  // T*B, conv only
  std::vector<int> prev_action;                     // T*B, -1 = none
  std::vector<std::uint8_t> episode_start;          // T*B: zero h, c before this step
  Eigen::MatrixXd h0, c0;                           // H x B hidden at the first step
};

struct SequenceCache;

struct SequenceOutput {
  Eigen::MatrixXd logits;  // |A| x (T*B)
  Eigen::VectorXd values;  // T*B
  std::shared_ptr<const SequenceCache> cache;
};

SequenceOutput forward_sequence(const PolicyParams& p, const SequenceInput& in);
SequenceOutput forward_sequence(const ComputeParams& p, const SequenceInput& in);

// Exact gradient of a scalar loss given dLoss/dlogits and dLoss/dvalues,
// backpropagated through time. The hidden snapshot h0/c0 is a constant.
Gradients backward_sequence(const PolicyParams& p, const SequenceInput& in, const SequenceOutput& out,
                            const Eigen::MatrixXd& dlogits, const Eigen::VectorXd& dvalues);
// `out` must come from forward_sequence with the same ComputeParams.
Gradients backward_sequence(const ComputeParams& p, const SequenceInput& in, const SequenceOutput& out,
                            const Eigen::MatrixXd& dlogits, const Eigen::VectorXd& dvalues);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
double log_softmax_at(const Eigen::VectorXd& logits, int action);

struct OptState {
  Gradients m;
  Gradients v;
  std::uint64_t step = 0;

  static OptState zeros_like(const PolicyParams& p);
};

inline constexpr double kAdamBeta1 = 0.9, kAdamBeta2 = 0.999, kAdamEps = 1e-8;

void adam_step(PolicyParams& p, const Gradients& g, OptState& o, double lr);

double global_norm(const Gradients& g);
void scale_gradients(Gradients& g, double factor);
// Throws numeric error naming the first tensor holding a non-finite value.
void check_finite(const PolicyParams& p, std::string_view what);

void write_checkpoint(const PolicyParams& p, const std::filesystem::path& path);
PolicyParams read_checkpoint(const std::filesystem::path& path);

}  // namespace routenav
