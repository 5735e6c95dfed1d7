#include "routenav/net.hpp"

#include <cmath>
#include <string>
#include <type_traits>

#include "routenav/binary_io.hpp"
#include "routenav/error.hpp"
#include "routenav/random.hpp"

namespace routenav {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr std::array<char, 4> kCheckpointMagic{'C', 'L', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

constexpr int kConv1Patch = kConv1Kernel * kConv1Kernel * kImageChannels;  // 192
constexpr int kConv2Patch = kConv2Kernel * kConv2Kernel * kConv1Filters;   // 256
constexpr int kConv1Positions = kConv1Out * kConv1Out;                     // 400
constexpr int kConv2Positions = kConv2Out * kConv2Out;                     // 81

Index idx(std::size_t n) { return static_cast<Index>(n); }

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (S(1) / (S(1) + (-x.array()).exp())).matrix();
}

MatrixXd conv1_patches(std::span<const std::uint8_t> image) {
  MatrixXd p(kConv1Patch, kConv1Positions);
  for (int oy = 0; oy < kConv1Out; ++oy) {
    for (int ox = 0; ox < kConv1Out; ++ox) {
      const Index col = oy * kConv1Out + ox;
      Index row = 0;
      for (int ky = 0; ky < kConv1Kernel; ++ky) {
        const std::size_t base = (static_cast<std::size_t>(oy * kConv1Stride + ky) * kImageSide +
                                  static_cast<std::size_t>(ox * kConv1Stride)) *
                                 kImageChannels;
        for (int k = 0; k < kConv1Kernel * kImageChannels; ++k) p(row++, col) = image[base + k] / 255.0;
      }
    }
  }
  return p;
}

MatrixXd conv2_patches(const MatrixXd& out1) {
  MatrixXd p(kConv2Patch, kConv2Positions);
  for (int oy = 0; oy < kConv2Out; ++oy) {
    for (int ox = 0; ox < kConv2Out; ++ox) {
      const Index col = oy * kConv2Out + ox;
      Index row = 0;
      for (int ky = 0; ky < kConv2Kernel; ++ky) {
        for (int kx = 0; kx < kConv2Kernel; ++kx) {
          const Index pos = (oy * kConv2Stride + ky) * kConv1Out + (ox * kConv2Stride + kx);
          p.block(row, col, kConv1Filters, 1) = out1.col(pos);
          row += kConv1Filters;
        }
      }
    }
  }
  return p;
}

void conv2_patches_backward(const MatrixXd& dpatches, MatrixXd& dout1) {
  for (int oy = 0; oy < kConv2Out; ++oy) {
    for (int ox = 0; ox < kConv2Out; ++ox) {
      const Index col = oy * kConv2Out + ox;
      Index row = 0;
      for (int ky = 0; ky < kConv2Kernel; ++ky) {
        for (int kx = 0; kx < kConv2Kernel; ++kx) {
          const Index pos = (oy * kConv2Stride + ky) * kConv1Out + (ox * kConv2Stride + kx);
          dout1.col(pos) += dpatches.block(row, col, kConv1Filters, 1);
          row += kConv1Filters;
        }
      }
    }
  }
}

struct ConvTrace {
  MatrixXd out1;  // 16 x 400, post-rectifier
  MatrixXd out2;  // 32 x 81, post-rectifier
};

ConvTrace conv_layers(const ConvEncoderParams& p, std::span<const std::uint8_t> image) {
  require(image.size() == kImageBytes, ErrorKind::shape,
          "conv encoder expects an 84x84x3 image, got " + std::to_string(image.size()) + " bytes");
  ConvTrace t;
  t.out1 = ((p.w1 * conv1_patches(image)).colwise() + p.b1).cwiseMax(0.0);
  t.out2 = ((p.w2 * conv2_patches(t.out1)).colwise() + p.b2).cwiseMax(0.0);
  return t;
}

Eigen::Map<const VectorXd> flat(const MatrixXd& out2) { return {out2.data(), out2.size()}; }

// Encoder input columns for a batch of step inputs.
MatrixXd encoder_inputs(const PolicyParams& p, std::span<const StepInput> inputs) {
  const NetShape& s = p.shape;
  MatrixXd x(idx(s.input_dim), idx(inputs.size()));
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    const StepInput& in = inputs[b];
    if (s.conv) {
      require(in.bimodal.size() == 1, ErrorKind::shape, "conv policy expects the goal scalar as its vector input");
      const ConvTrace t = conv_layers(*p.conv, in.image);
      x.col(idx(b)).head(idx(s.conv_features)) = ((p.conv->fc_w * flat(t.out2)) + p.conv->fc_b).cwiseMax(0.0);
      x(idx(s.conv_features), idx(b)) = in.bimodal[0];
    } else {
      require(in.bimodal.size() == s.input_dim, ErrorKind::shape,
              "policy expects input of length " + std::to_string(s.input_dim) + ", got " +
                  std::to_string(in.bimodal.size()));
      x.col(idx(b)) = Eigen::Map<const VectorXd>(in.bimodal.data(), idx(in.bimodal.size()));
    }
  }
  return x;
}

// Encoder, LSTM and head weights in scalar type S.
template <typename S>
struct CoreView {
  Eigen::Map<const Mat<S>> enc_w;
  Eigen::Map<const Vec<S>> enc_b;
  Eigen::Map<const Mat<S>> wx, wh;
  Eigen::Map<const Vec<S>> b;
  Eigen::Map<const Mat<S>> pi_w;
  Eigen::Map<const Vec<S>> pi_b, v_w;
  S v_b;
  bool relu;
};

template <typename S, typename Src>
CoreView<S> core_view(const Src& w, bool relu) {
  auto m = [](const auto& x) { return Eigen::Map<const Mat<S>>(x.data(), x.rows(), x.cols()); };
  auto v = [](const auto& x) { return Eigen::Map<const Vec<S>>(x.data(), x.size()); };
  return {m(w.enc_w), v(w.enc_b), m(w.lstm_wx), m(w.lstm_wh), v(w.lstm_b), m(w.pi_w), v(w.pi_b), v(w.v_w),
          w.v_b[0], relu};
}

template <typename S>
Mat<S> encode(const CoreView<S>& w, const Mat<S>& x) {
  Mat<S> e = w.enc_w * x;
  e.colwise() += w.enc_b;
  if (w.relu) e = e.cwiseMax(S(0));
  return e;
}

// [encoding; previous-action one-hot]
template <typename S>
Mat<S> lstm_inputs(const Mat<S>& e, std::span<const int> prev_action) {
  const Index e_rows = e.rows();
  Mat<S> xa = Mat<S>::Zero(e_rows + kNumActions, e.cols());
  xa.topRows(e_rows) = e;
  for (Index b = 0; b < e.cols(); ++b) {
    const int a = prev_action[static_cast<std::size_t>(b)];
    if (a >= 0) {
      require(a < kNumActions, ErrorKind::shape, "previous action code out of range");
      xa(e_rows + a, b) = S(1);
    }
  }
  return xa;
}

void check_outputs(const MatrixXd& logits, const VectorXd& values) {
  require(logits.allFinite() && values.allFinite(), ErrorKind::numeric, "policy produced non-finite outputs");
}

}  // namespace

NetShape shape_for(std::size_t visual_dim, ObservationMode mode) {
  NetShape s;
  switch (mode) {
    case ObservationMode::bimodal: s.input_dim = visual_dim + 1; break;
    case ObservationMode::position_baseline: s.input_dim = 2; break;
    case ObservationMode::raw_image:
      s.conv = true;
      s.input_dim = s.conv_features + 1;
      break;
  }
  return s;
}

PolicyParams PolicyParams::zeros(const NetShape& s) {
  require(s.input_dim >= 1 && s.encoder_width >= 1 && s.lstm_width >= 1, ErrorKind::shape, "invalid net shape");
  require(!s.conv || s.input_dim == s.conv_features + 1, ErrorKind::shape,
          "conv net input must be conv_features + 1 (goal)");
  const Index e = idx(s.encoder_width), h = idx(s.lstm_width);
  PolicyParams p;
  p.shape = s;
  p.enc_w = MatrixXd::Zero(e, idx(s.input_dim));
  p.enc_b = VectorXd::Zero(e);
  p.lstm_wx = MatrixXd::Zero(4 * h, idx(s.lstm_input()));
  p.lstm_wh = MatrixXd::Zero(4 * h, h);
  p.lstm_b = VectorXd::Zero(4 * h);
  p.pi_w = MatrixXd::Zero(kNumActions, h);
  p.pi_b = VectorXd::Zero(kNumActions);
  p.v_w = VectorXd::Zero(h);
  p.v_b = VectorXd::Zero(1);
  if (s.conv) {
    p.conv = ConvEncoderParams{MatrixXd::Zero(kConv1Filters, kConv1Patch), VectorXd::Zero(kConv1Filters),
                               MatrixXd::Zero(kConv2Filters, kConv2Patch), VectorXd::Zero(kConv2Filters),
                               MatrixXd::Zero(idx(s.conv_features), kConvFlat), VectorXd::Zero(idx(s.conv_features))};
  }
  return p;
}

std::vector<TensorView> tensors(PolicyParams& p) {
  auto view = [](std::string_view name, auto& t) { return TensorView{name, {t.data(), t.size()}}; };
  std::vector<TensorView> out{view("enc_w", p.enc_w),     view("enc_b", p.enc_b), view("lstm_wx", p.lstm_wx),
                              view("lstm_wh", p.lstm_wh), view("lstm_b", p.lstm_b), view("pi_w", p.pi_w),
                              view("pi_b", p.pi_b),       view("v_w", p.v_w),     view("v_b", p.v_b)};
  if (p.conv) {
    ConvEncoderParams& c = *p.conv;
    for (auto v : {view("conv1_w", c.w1), view("conv1_b", c.b1), view("conv2_w", c.w2), view("conv2_b", c.b2),
                   view("conv_fc_w", c.fc_w), view("conv_fc_b", c.fc_b)}) {
      out.push_back(v);
    }
  }
  return out;
}

std::vector<ConstTensorView> tensors(const PolicyParams& p) {
  std::vector<ConstTensorView> out;
  for (const TensorView& v : tensors(const_cast<PolicyParams&>(p))) {
    out.push_back({v.name, {v.values.data(), v.values.size()}});
  }
  return out;
}

std::size_t parameter_count(const PolicyParams& p) {
  std::size_t n = 0;
  for (const auto& t : tensors(p)) n += static_cast<std::size_t>(t.values.size());
  return n;
}

bool same_shapes(const PolicyParams& a, const PolicyParams& b) {
  const auto ta = tensors(a), tb = tensors(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].values.size() != tb[i].values.size()) return false;
  }
  return a.shape == b.shape;
}

PolicyParams init_params(const NetShape& shape, std::uint64_t seed) {
  PolicyParams p = PolicyParams::zeros(shape);
  Rng rng = make_rng({seed, 0x6e6574});
  auto fill = [&](MatrixXd& w, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index j = 0; j < w.cols(); ++j) {
      for (Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
    }
  };
  fill(p.enc_w, shape.input_dim);
  const std::size_t lstm_fan_in = shape.lstm_input() + shape.lstm_width;
  fill(p.lstm_wx, lstm_fan_in);
  fill(p.lstm_wh, lstm_fan_in);
  p.lstm_b.segment(idx(shape.lstm_width), idx(shape.lstm_width)).setOnes();
  if (p.conv) {
    fill(p.conv->w1, kConv1Patch);
    fill(p.conv->w2, kConv2Patch);
    fill(p.conv->fc_w, kConvFlat);
  }
  return p;
}

Hidden Hidden::zeros(const NetShape& s) {
  return {VectorXd::Zero(idx(s.lstm_width)), VectorXd::Zero(idx(s.lstm_width)), VectorXd::Zero(kNumActions)};
}

StepInput step_input(const Observation& obs) {
  if (!obs.image.empty()) return {std::span<const double>(&obs.goal, 1), obs.image};
  return {obs.bimodal, {}};
}

HiddenBatch HiddenBatch::zeros(const NetShape& s, std::size_t batch) {
  return {MatrixXd::Zero(idx(s.lstm_width), idx(batch)), MatrixXd::Zero(idx(s.lstm_width), idx(batch)),
          std::vector<int>(batch, -1)};
}

void HiddenBatch::reset(std::size_t column) {
  h.col(idx(column)).setZero();
  c.col(idx(column)).setZero();
  prev_action[column] = -1;
}

std::string_view to_string(Precision precision) {
  return precision == Precision::float32 ? "float32" : "float64";
}

Precision parse_precision(std::string_view text) {
  if (text == "float64") return Precision::float64;
  if (text == "float32") return Precision::float32;
  fail(ErrorKind::config, "unknown precision '" + std::string(text) + "' (expected float64 or float32)");
}

struct ComputeParams::Float32Copy {
  Mat<float> enc_w;
  Vec<float> enc_b;
  Mat<float> lstm_wx, lstm_wh;
  Vec<float> lstm_b;
  Mat<float> pi_w;
  Vec<float> pi_b, v_w, v_b;
};

ComputeParams::ComputeParams(const PolicyParams& p, Precision precision) : master_(&p), precision_(precision) {
  if (precision == Precision::float32) {
    f32_ = std::make_shared<const Float32Copy>(Float32Copy{
        p.enc_w.cast<float>(), p.enc_b.cast<float>(), p.lstm_wx.cast<float>(), p.lstm_wh.cast<float>(),
        p.lstm_b.cast<float>(), p.pi_w.cast<float>(), p.pi_b.cast<float>(), p.v_w.cast<float>(),
        p.v_b.cast<float>()});
  }
}

namespace {

template <typename S>
CoreView<S> view_of(const ComputeParams& p) {
  if constexpr (std::is_same_v<S, float>) {
    return core_view<float>(*p.float32(), p.shape().encoder_relu);
  } else {
    return core_view<double>(p.master(), p.shape().encoder_relu);
  }
}

template <typename S>
BatchOutput forward_batch_impl(const ComputeParams& cp, std::span<const StepInput> inputs, HiddenBatch& hidden) {
  const CoreView<S> w = view_of<S>(cp);
  const Index h = idx(cp.shape().lstm_width);
  const Mat<S> xa = lstm_inputs<S>(encode<S>(w, encoder_inputs(cp.master(), inputs).cast<S>()), hidden.prev_action);
  Mat<S> pre = w.wx * xa;
  pre.noalias() += w.wh * hidden.h.cast<S>();
  pre.colwise() += w.b;
  const Mat<S> i = sigmoid(pre.topRows(h));
  const Mat<S> f = sigmoid(pre.middleRows(h, h));
  const Mat<S> o = sigmoid(pre.middleRows(2 * h, h));
  const Mat<S> g = pre.bottomRows(h).array().tanh().matrix();
  const Mat<S> c = f.cwiseProduct(hidden.c.cast<S>()) + i.cwiseProduct(g);
  const Mat<S> hs = o.cwiseProduct(c.array().tanh().matrix());
  hidden.c = c.template cast<double>();
  hidden.h = hs.template cast<double>();

  BatchOutput out;
  Mat<S> logits = w.pi_w * hs;
  logits.colwise() += w.pi_b;
  out.logits = logits.template cast<double>();
  out.values = ((hs.transpose() * w.v_w).array() + w.v_b).template cast<double>().matrix();
  check_outputs(out.logits, out.values);
  return out;
}

}  // namespace

BatchOutput forward_batch(const ComputeParams& p, std::span<const StepInput> inputs, HiddenBatch& hidden) {
  require(hidden.h.cols() == idx(inputs.size()) && hidden.h.rows() == idx(p.shape().lstm_width), ErrorKind::shape,
          "hidden batch does not match inputs");
  return p.precision() == Precision::float32 ? forward_batch_impl<float>(p, inputs, hidden)
                                             : forward_batch_impl<double>(p, inputs, hidden);
}

BatchOutput forward_batch(const PolicyParams& p, std::span<const StepInput> inputs, HiddenBatch& hidden) {
  return forward_batch(ComputeParams(p), inputs, hidden);
}

PolicyOutput policy_forward(const PolicyParams& p, const StepInput& input, const Hidden& hidden) {
  require(hidden.h.size() == idx(p.shape.lstm_width) && hidden.c.size() == idx(p.shape.lstm_width) &&
              hidden.prev_action.size() == kNumActions,
          ErrorKind::shape, "hidden state does not match the network");
  HiddenBatch batch{hidden.h, hidden.c, {-1}};
  for (int a = 0; a < kNumActions; ++a) {
    if (hidden.prev_action[a] != 0.0) batch.prev_action[0] = a;
  }
  const BatchOutput out = forward_batch(p, std::span<const StepInput>(&input, 1), batch);
  return {out.logits.col(0), out.values[0], Hidden{batch.h.col(0), batch.c.col(0), hidden.prev_action}};
}

Eigen::VectorXd conv_forward(const ConvEncoderParams& p, std::span<const std::uint8_t> image) {
  const ConvTrace t = conv_layers(p, image);
  return ((p.fc_w * flat(t.out2)) + p.fc_b).cwiseMax(0.0);
}

template <typename S>
struct CoreCache {
  Mat<S> x;   // encoder input
  Mat<S> e;   // encoding (post-rectifier when enabled)
  Mat<S> xa;  // LSTM input
  Mat<S> gates;
  Mat<S> c, tanh_c, h_prev, c_prev, h;
};

struct SequenceCache {
  Precision precision = Precision::float64;
  CoreCache<double> f64;
  CoreCache<float> f32;
  std::vector<ConvTrace> conv;
  MatrixXd conv_feat;  // post-rectifier conv features

  template <typename S>
  CoreCache<S>& core() {
    if constexpr (std::is_same_v<S, float>) {
      return f32;
    } else {
      return f64;
    }
  }
  template <typename S>
  const CoreCache<S>& core() const {
    return const_cast<SequenceCache*>(this)->core<S>();
  }
};

namespace {

template <typename S>
void forward_core(const CoreView<S>& w, const SequenceInput& in, const MatrixXd& x, std::size_t hidden_width,
                  CoreCache<S>& k, SequenceOutput& out) {
  const std::size_t n = in.steps * in.batch;
  const Index hw = idx(hidden_width), bsz = idx(in.batch);
  k.x = x.cast<S>();
  k.e = encode<S>(w, k.x);
  k.xa = lstm_inputs<S>(k.e, in.prev_action);

  Mat<S> pre = w.wx * k.xa;
  pre.colwise() += w.b;
  k.gates.resize(4 * hw, idx(n));
  k.c.resize(hw, idx(n));
  k.tanh_c.resize(hw, idx(n));
  k.h_prev.resize(hw, idx(n));
  k.c_prev.resize(hw, idx(n));
  k.h.resize(hw, idx(n));

  Mat<S> hp(hw, bsz), cp(hw, bsz), z(4 * hw, bsz);
  for (std::size_t t = 0; t < in.steps; ++t) {
    const Index col = idx(t * in.batch);
    if (t == 0) {
      hp = in.h0.cast<S>();
      cp = in.c0.cast<S>();
    } else {
      hp = k.h.middleCols(col - bsz, bsz);
      cp = k.c.middleCols(col - bsz, bsz);
    }
    for (Index b = 0; b < bsz; ++b) {
      if (in.episode_start[static_cast<std::size_t>(col + b)]) {
        hp.col(b).setZero();
        cp.col(b).setZero();
      }
    }
    z = pre.middleCols(col, bsz);
    z.noalias() += w.wh * hp;
    auto gates = k.gates.middleCols(col, bsz);
    gates.topRows(3 * hw) = sigmoid(z.topRows(3 * hw));
    gates.bottomRows(hw) = z.bottomRows(hw).array().tanh().matrix();
    const auto i = gates.topRows(hw);
    const auto f = gates.middleRows(hw, hw);
    const auto o = gates.middleRows(2 * hw, hw);
    const auto g = gates.bottomRows(hw);
    k.c.middleCols(col, bsz) = f.cwiseProduct(cp) + i.cwiseProduct(g);
    k.tanh_c.middleCols(col, bsz) = k.c.middleCols(col, bsz).array().tanh().matrix();
    k.h.middleCols(col, bsz) = o.cwiseProduct(k.tanh_c.middleCols(col, bsz));
    k.h_prev.middleCols(col, bsz) = hp;
    k.c_prev.middleCols(col, bsz) = cp;
  }

  Mat<S> logits = w.pi_w * k.h;
  logits.colwise() += w.pi_b;
  out.logits = logits.template cast<double>();
  out.values = ((k.h.transpose() * w.v_w).array() + w.v_b).template cast<double>().matrix();
}

// Fills the encoder, LSTM and head gradients; returns dLoss/dx.
template <typename S>
MatrixXd backward_core(const CoreView<S>& w, const SequenceInput& in, const CoreCache<S>& k,
                       std::size_t hidden_width, const MatrixXd& dlogits_d, const VectorXd& dvalues_d, Gradients& g,
                       bool want_dx) {
  const std::size_t n = in.steps * in.batch;
  const Index hw = idx(hidden_width), bsz = idx(in.batch);
  const Mat<S> dlogits = dlogits_d.cast<S>();
  const Vec<S> dvalues = dvalues_d.cast<S>();
  g.pi_w = (dlogits * k.h.transpose()).template cast<double>();
  g.pi_b = dlogits_d.rowwise().sum();
  g.v_w = (k.h * dvalues).template cast<double>();
  g.v_b[0] = dvalues_d.sum();

  Mat<S> dh_out = w.pi_w.transpose() * dlogits;
  dh_out.noalias() += w.v_w * dvalues.transpose();

  Mat<S> dpre(4 * hw, idx(n));
  Mat<S> dh_next = Mat<S>::Zero(hw, bsz), dc_next = Mat<S>::Zero(hw, bsz);
  Mat<S> dh(hw, bsz), dc(hw, bsz);
  for (std::size_t step = in.steps; step-- > 0;) {
    const Index col = idx(step * in.batch);
    const auto gates = k.gates.middleCols(col, bsz);
    const auto i = gates.topRows(hw);
    const auto f = gates.middleRows(hw, hw);
    const auto o = gates.middleRows(2 * hw, hw);
    const auto gg = gates.bottomRows(hw);
    const auto tc = k.tanh_c.middleCols(col, bsz);

    dh = dh_out.middleCols(col, bsz) + dh_next;
    dc = dh.cwiseProduct(o).cwiseProduct((S(1) - tc.array().square()).matrix()) + dc_next;
    auto d = dpre.middleCols(col, bsz);
    d.topRows(hw) = dc.cwiseProduct(gg).cwiseProduct(i.cwiseProduct((S(1) - i.array()).matrix()));
    d.middleRows(hw, hw) =
        dc.cwiseProduct(k.c_prev.middleCols(col, bsz)).cwiseProduct(f.cwiseProduct((S(1) - f.array()).matrix()));
    d.middleRows(2 * hw, hw) = dh.cwiseProduct(tc).cwiseProduct(o.cwiseProduct((S(1) - o.array()).matrix()));
    d.bottomRows(hw) = dc.cwiseProduct(i).cwiseProduct((S(1) - gg.array().square()).matrix());

    dh_next.noalias() = w.wh.transpose() * d;
    dc_next = dc.cwiseProduct(f);
    for (Index b = 0; b < bsz; ++b) {
      if (in.episode_start[static_cast<std::size_t>(col + b)]) {
        dh_next.col(b).setZero();
        dc_next.col(b).setZero();
      }
    }
  }

  g.lstm_wh = (dpre * k.h_prev.transpose()).template cast<double>();
  g.lstm_wx = (dpre * k.xa.transpose()).template cast<double>();
  g.lstm_b = dpre.rowwise().sum().template cast<double>();

  Mat<S> de = (w.wx.transpose() * dpre).topRows(w.enc_w.rows());
  if (w.relu) de = de.cwiseProduct((k.e.array() > S(0)).template cast<S>().matrix());
  g.enc_w = (de * k.x.transpose()).template cast<double>();
  g.enc_b = de.rowwise().sum().template cast<double>();
  if (!want_dx) return {};
  return (w.enc_w.transpose() * de).template cast<double>();
}

template <typename S>
SequenceOutput forward_sequence_impl(const ComputeParams& cp, const SequenceInput& in) {
  const NetShape& s = cp.shape();
  const PolicyParams& p = cp.master();
  const std::size_t n = in.steps * in.batch;
  auto cache = std::make_shared<SequenceCache>();
  cache->precision = cp.precision();
  MatrixXd x;
  if (s.conv) {
    require(in.images.size() == n && in.bimodal.rows() == 1, ErrorKind::shape,
            "conv sequence needs one image and one goal per step");
    cache->conv.reserve(n);
    MatrixXd flat_all(kConvFlat, idx(n));
    for (std::size_t k = 0; k < n; ++k) {
      cache->conv.push_back(conv_layers(*p.conv, in.images[k]));
      flat_all.col(idx(k)) = flat(cache->conv.back().out2);
    }
    cache->conv_feat = ((p.conv->fc_w * flat_all).colwise() + p.conv->fc_b).cwiseMax(0.0);
    x.resize(idx(s.input_dim), idx(n));
    x.topRows(idx(s.conv_features)) = cache->conv_feat;
    x.bottomRows(1) = in.bimodal;
  } else {
    require(in.bimodal.rows() == idx(s.input_dim), ErrorKind::shape,
            "sequence input has " + std::to_string(in.bimodal.rows()) + " rows, net expects " +
                std::to_string(s.input_dim));
    x = in.bimodal;
  }
  SequenceOutput out;
  forward_core<S>(view_of<S>(cp), in, x, s.lstm_width, cache->core<S>(), out);
  check_outputs(out.logits, out.values);
  out.cache = std::move(cache);
  return out;
}

}  // namespace

SequenceOutput forward_sequence(const ComputeParams& p, const SequenceInput& in) {
  const NetShape& s = p.shape();
  const std::size_t n = in.steps * in.batch;
  const Index hw = idx(s.lstm_width), bsz = idx(in.batch);
  require(in.steps >= 1 && in.batch >= 1, ErrorKind::shape, "empty sequence batch");
  require(in.prev_action.size() == n && in.episode_start.size() == n, ErrorKind::shape,
          "sequence bookkeeping length mismatch");
  require(in.h0.rows() == hw && in.h0.cols() == bsz && in.c0.rows() == hw && in.c0.cols() == bsz,
          ErrorKind::shape, "sequence hidden snapshot has wrong shape");
  require(in.bimodal.cols() == idx(n), ErrorKind::shape, "sequence input has wrong column count");
  return p.precision() == Precision::float32 ? forward_sequence_impl<float>(p, in)
                                             : forward_sequence_impl<double>(p, in);
}

SequenceOutput forward_sequence(const PolicyParams& p, const SequenceInput& in) {
  return forward_sequence(ComputeParams(p), in);
}

Gradients backward_sequence(const ComputeParams& cp, const SequenceInput& in, const SequenceOutput& out,
                            const MatrixXd& dlogits, const VectorXd& dvalues) {
  const SequenceCache& k = *out.cache;
  const PolicyParams& p = cp.master();
  const NetShape& s = p.shape;
  const std::size_t n = in.steps * in.batch;
  require(dlogits.rows() == kNumActions && dlogits.cols() == idx(n) && dvalues.size() == idx(n), ErrorKind::shape,
          "loss gradient does not match the sequence");
  require(k.precision == cp.precision(), ErrorKind::contract,
          "backward pass precision differs from the forward pass");

  Gradients g = PolicyParams::zeros(s);
  const MatrixXd dx =
      cp.precision() == Precision::float32
          ? backward_core<float>(view_of<float>(cp), in, k.core<float>(), s.lstm_width, dlogits, dvalues, g, s.conv)
          : backward_core<double>(view_of<double>(cp), in, k.core<double>(), s.lstm_width, dlogits, dvalues, g,
                                  s.conv);

  if (s.conv) {
    const ConvEncoderParams& c = *p.conv;
    ConvEncoderParams& gc = *g.conv;
    MatrixXd dfeat = dx.topRows(idx(s.conv_features));
    dfeat = dfeat.cwiseProduct((k.conv_feat.array() > 0.0).cast<double>().matrix());
    MatrixXd flat_all(kConvFlat, idx(n));
    for (std::size_t j = 0; j < n; ++j) flat_all.col(idx(j)) = flat(k.conv[j].out2);
    gc.fc_w.noalias() = dfeat * flat_all.transpose();
    gc.fc_b = dfeat.rowwise().sum();
    const MatrixXd dflat = c.fc_w.transpose() * dfeat;
    for (std::size_t j = 0; j < n; ++j) {
      const ConvTrace& t = k.conv[j];
      MatrixXd dout2 = Eigen::Map<const MatrixXd>(dflat.col(idx(j)).data(), kConv2Filters, kConv2Positions);
      dout2 = dout2.cwiseProduct((t.out2.array() > 0.0).cast<double>().matrix());
      const MatrixXd patches2 = conv2_patches(t.out1);
      gc.w2.noalias() += dout2 * patches2.transpose();
      gc.b2 += dout2.rowwise().sum();
      MatrixXd dout1 = MatrixXd::Zero(kConv1Filters, kConv1Positions);
      conv2_patches_backward(c.w2.transpose() * dout2, dout1);
      dout1 = dout1.cwiseProduct((t.out1.array() > 0.0).cast<double>().matrix());
      gc.w1.noalias() += dout1 * conv1_patches(in.images[j]).transpose();
      gc.b1 += dout1.rowwise().sum();
    }
  }
  check_finite(g, "gradient");
  return g;
}

Gradients backward_sequence(const PolicyParams& p, const SequenceInput& in, const SequenceOutput& out,
                            const MatrixXd& dlogits, const VectorXd& dvalues) {
  return backward_sequence(ComputeParams(p), in, out, dlogits, dvalues);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const VectorXd z = (logits.array() - logits.maxCoeff()).exp();
  return z / z.sum();
}

double log_softmax_at(const Eigen::VectorXd& logits, int action) {
  const double m = logits.maxCoeff();
  return logits[action] - m - std::log((logits.array() - m).exp().sum());
}

OptState OptState::zeros_like(const PolicyParams& p) {
  return {PolicyParams::zeros(p.shape), PolicyParams::zeros(p.shape), 0};
}

void adam_step(PolicyParams& p, const Gradients& g, OptState& o, double lr) {
  require(same_shapes(p, g) && same_shapes(p, o.m) && same_shapes(p, o.v), ErrorKind::shape,
          "adam: parameter, gradient and moment shapes differ");
  o.step += 1;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(o.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(o.step));
  auto pt = tensors(p);
  const auto gt = tensors(g);
  auto mt = tensors(o.m);
  auto vt = tensors(o.v);
  for (std::size_t k = 0; k < pt.size(); ++k) {
    auto& m = mt[k].values;
    auto& v = vt[k].values;
    const auto& grad = gt[k].values;
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grad.cwiseAbs2();
    pt[k].values.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kAdamEps);
  }
}

double global_norm(const Gradients& g) {
  double sq = 0.0;
  for (const auto& t : tensors(g)) sq += t.values.squaredNorm();
  return std::sqrt(sq);
}

void scale_gradients(Gradients& g, double factor) {
  for (auto& t : tensors(g)) t.values *= factor;
}

void check_finite(const PolicyParams& p, std::string_view what) {
  for (const auto& t : tensors(p)) {
    require(t.values.allFinite(), ErrorKind::numeric,
            std::string(what) + ": non-finite value in '" + std::string(t.name) + "'");
  }
}

void write_checkpoint(const PolicyParams& p, const std::filesystem::path& path) {
  BinaryWriter w(kCheckpointMagic, kCheckpointVersion);
  const NetShape& s = p.shape;
  const std::size_t visual = s.conv ? 0 : s.input_dim - 1;
  w.u32(static_cast<std::uint32_t>(visual));
  w.u32(static_cast<std::uint32_t>(s.encoder_width));
  w.u32(static_cast<std::uint32_t>(s.lstm_width));
  w.u32(kNumActions);
  w.u32((s.conv ? 1u : 0u) | (s.encoder_relu ? 2u : 0u));
  w.u32(static_cast<std::uint32_t>(s.conv_features));
  for (const auto& t : tensors(p)) w.f64(std::span<const double>(t.values.data(), idx(t.values.size())));
  w.save(path);
}

PolicyParams read_checkpoint(const std::filesystem::path& path) {
  BinaryReader r(path, kCheckpointMagic, kCheckpointVersion);
  NetShape s;
  const std::uint32_t visual = r.u32("d");
  s.encoder_width = r.u32("encoder_width");
  s.lstm_width = r.u32("lstm_width");
  const std::uint32_t actions = r.u32("n_actions");
  require(actions == kNumActions, ErrorKind::format, path.string() + ": checkpoint has " + std::to_string(actions) +
                                                         " actions, expected " + std::to_string(kNumActions));
  const std::uint32_t flags = r.u32("flags");
  s.conv = (flags & 1u) != 0;
  s.encoder_relu = (flags & 2u) != 0;
  s.conv_features = r.u32("conv_features");
  s.input_dim = s.conv ? s.conv_features + 1 : visual + 1;
  require(s.encoder_width >= 1 && s.lstm_width >= 1 && s.input_dim >= 2, ErrorKind::format,
          path.string() + ": invalid network shape");
  PolicyParams p = PolicyParams::zeros(s);
  for (auto& t : tensors(p)) {
    const std::string field(t.name);
    r.f64(std::span<double>(t.values.data(), idx(t.values.size())), field.c_str());
  }
  r.expect_end();
  return p;
}

}  // namespace routenav
