#include "routenav/features.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>

#include "routenav/binary_io.hpp"
#include "routenav/error.hpp"

namespace routenav {

namespace {

constexpr std::array<char, 4> kProjectionMagic{'C', 'L', 'P', 'J'};
constexpr std::uint32_t kProjectionVersion = 1;

struct EigenPairs {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // columns
};

// Top-k eigenpairs of a symmetric matrix (lower triangle referenced).
EigenPairs top_eigenpairs(Eigen::MatrixXd a, std::size_t k) {
  const auto n = static_cast<lapack_int>(a.rows());
  const auto kk = static_cast<lapack_int>(k);
  Eigen::VectorXd w(n);
  Eigen::MatrixXd z(n, kk);
  Eigen::Matrix<lapack_int, Eigen::Dynamic, 1> support(2 * std::max<lapack_int>(kk, 1));
  lapack_int found = 0;
  const lapack_int info =
      LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', n, a.data(), n, 0.0, 0.0, n - kk + 1, n, 0.0, &found,
                     w.data(), z.data(), n, support.data());
  require(info == 0 && found == kk, ErrorKind::numeric,
          "symmetric eigensolver failed (info=" + std::to_string(info) + ")");
  EigenPairs out{Eigen::VectorXd(kk), Eigen::MatrixXd(n, kk)};
  for (lapack_int i = 0; i < kk; ++i) {  // ascending -> descending
    out.values[i] = w[kk - 1 - i];
    out.vectors.col(i) = z.col(kk - 1 - i);
  }
  return out;
}

}  // namespace

Normalized l2_normalize(const Eigen::VectorXd& x) {
  const double n = x.norm();
  if (n < kDegenerateNorm) return {x, true};
  return {x / n, false};
}

Projection Projection::truncated(std::size_t d_out) const {
  require(d_out >= 1 && d_out <= out_dim(), ErrorKind::rank,
          "cannot truncate a " + std::to_string(out_dim()) + "-d projection to " + std::to_string(d_out));
  const auto k = static_cast<Eigen::Index>(d_out);
  return {mean, basis.topRows(k), whiten_scale.head(k)};
}

Projection fit_pca_whitening(const Eigen::MatrixXd& samples, std::size_t d_out) {
  const auto n = static_cast<std::size_t>(samples.rows());
  const auto dim = static_cast<std::size_t>(samples.cols());
  require(n >= 2 && dim >= 1, ErrorKind::rank, "pca: need at least 2 samples");
  require(d_out >= 1 && d_out <= std::min(dim, n - 1), ErrorKind::rank,
          "pca: d_out=" + std::to_string(d_out) + " exceeds min(D=" + std::to_string(dim) +
              ", n-1=" + std::to_string(n - 1) + ")");
  require(samples.allFinite(), ErrorKind::numeric, "pca: non-finite input");

  Projection p;
  p.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - p.mean.transpose();
  const double scale = std::max(1.0, samples.squaredNorm());
  require(centered.squaredNorm() > 1e-28 * scale, ErrorKind::degenerate_data, "pca: input has zero variance");

  const double denom = static_cast<double>(n - 1);
  Eigen::MatrixXd directions;  // D x d_out
  Eigen::VectorXd variances;
  if (dim <= n) {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), 1.0 / denom);
    EigenPairs e = top_eigenpairs(std::move(cov), d_out);
    directions = std::move(e.vectors);
    variances = std::move(e.values);
  } else {
    // Fewer samples than dimensions: decompose the n x n Gram matrix instead.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    gram.selfadjointView<Eigen::Lower>().rankUpdate(centered, 1.0 / denom);
    EigenPairs e = top_eigenpairs(std::move(gram), d_out);
    variances = std::move(e.values);
    directions = centered.transpose() * e.vectors;
    for (Eigen::Index k = 0; k < directions.cols(); ++k) {
      const double norm = directions.col(k).norm();
      require(norm > 0.0, ErrorKind::degenerate_data,
              "pca: component " + std::to_string(k) + " has zero variance");
      directions.col(k) /= norm;
    }
  }
  require(variances[0] > 0.0, ErrorKind::degenerate_data, "pca: input has zero variance");

  for (Eigen::Index k = 0; k < directions.cols(); ++k) {
    Eigen::Index arg = 0;
    directions.col(k).cwiseAbs().maxCoeff(&arg);
    if (directions(arg, k) < 0.0) directions.col(k) *= -1.0;
  }
  p.basis = directions.transpose();
  p.whiten_scale = (variances.cwiseMax(0.0).array() + kWhitenRegularizer).rsqrt().matrix();
  return p;
}

Eigen::VectorXd whiten(const Projection& p, const Eigen::VectorXd& x) {
  require(static_cast<std::size_t>(x.size()) == p.in_dim(), ErrorKind::shape,
          "project: input has length " + std::to_string(x.size()) + ", projection expects " +
              std::to_string(p.in_dim()));
  return p.whiten_scale.cwiseProduct(p.basis * (x - p.mean));
}

Normalized project(const Projection& p, const Eigen::VectorXd& x) { return l2_normalize(whiten(p, x)); }

Eigen::MatrixXd descriptor_matrix(const Traversal& t) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.size()), static_cast<Eigen::Index>(t.dim()));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto d = t.descriptor(i);
    for (std::size_t j = 0; j < d.size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d[j];
  }
  return m;
}

Eigen::MatrixXd fitting_pool(const TraversalSet& set) {
  if (!set.fitting_corpus) return descriptor_matrix(set.reference);
  Eigen::MatrixXd pool(static_cast<Eigen::Index>(set.reference.size() + set.fitting_corpus->size()),
                       static_cast<Eigen::Index>(set.reference.dim()));
  pool << descriptor_matrix(set.reference), descriptor_matrix(*set.fitting_corpus);
  return pool;
}

Traversal project_traversal(const Projection& p, const Traversal& t) {
  require(t.dim() == p.in_dim(), ErrorKind::shape,
          "traversal '" + t.name() + "' has dim " + std::to_string(t.dim()) + ", projection expects " +
              std::to_string(p.in_dim()));
  const Eigen::MatrixXd x = descriptor_matrix(t);
  const Eigen::MatrixXd z = p.whiten_scale.asDiagonal() * (p.basis * (x.rowwise() - p.mean.transpose()).transpose());
  std::vector<Frame> frames(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const Normalized n = l2_normalize(z.col(static_cast<Eigen::Index>(i)));
    require(!n.degenerate, ErrorKind::numeric,
            "traversal '" + t.name() + "': frame " + std::to_string(i) + " projects to the zero vector");
    frames[i].index = i;
    frames[i].descriptor.assign(n.vector.data(), n.vector.data() + n.vector.size());
    frames[i].raw_image = t.frame(i).raw_image;
  }
  return Traversal(t.name(), t.condition(), std::move(frames));
}

void write_projection(const Projection& p, const std::filesystem::path& path) {
  BinaryWriter w(kProjectionMagic, kProjectionVersion);
  w.u32(static_cast<std::uint32_t>(p.in_dim()));
  w.u32(static_cast<std::uint32_t>(p.out_dim()));
  w.f32(std::span<const double>(p.mean.data(), p.mean.size()));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = p.basis;
  w.f32(std::span<const double>(rows.data(), rows.size()));
  w.f32(std::span<const double>(p.whiten_scale.data(), p.whiten_scale.size()));
  w.save(path);
}

Projection read_projection(const std::filesystem::path& path) {
  BinaryReader r(path, kProjectionMagic, kProjectionVersion);
  const std::uint32_t in = r.u32("D");
  const std::uint32_t out = r.u32("d_out");
  require(in >= 1 && out >= 1 && out <= in, ErrorKind::format,
          path.string() + ": invalid shape D=" + std::to_string(in) + " d_out=" + std::to_string(out));
  Projection p;
  p.mean.resize(in);
  r.f32(std::span<double>(p.mean.data(), in), "mean");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(out, in);
  r.f32(std::span<double>(rows.data(), rows.size()), "basis");
  p.basis = rows;
  p.whiten_scale.resize(out);
  r.f32(std::span<double>(p.whiten_scale.data(), out), "whiten_scale");
  r.expect_end();
  return p;
}

}  // namespace routenav
