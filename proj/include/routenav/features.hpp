#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <span>

#include "routenav/traversal.hpp"

namespace routenav {

inline constexpr double kWhitenRegularizer = 1e-8;
inline constexpr double kDegenerateNorm = 1e-12;

struct Normalized {
  Eigen::VectorXd vector;
  bool degenerate = false;
};

// Unit-norm copy of x; vectors with norm below 1e-12 come back unchanged and
// flagged.
Normalized l2_normalize(const Eigen::VectorXd& x);

// PCA + whitening: x -> whiten_scale .* (basis * (x - mean)).
struct Projection {
  Eigen::VectorXd mean;          // D
  Eigen::MatrixXd basis;         // d_out x D, rows are principal directions
  Eigen::VectorXd whiten_scale;  // d_out, 1/sqrt(lambda + eps)

  std::size_t in_dim() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(basis.rows()); }

  // Leading `d_out` components. Equal to refitting the same data at d_out.
  Projection truncated(std::size_t d_out) const;
};

// `samples` holds one descriptor per row. Directions are ordered by
// decreasing variance, each signed so its largest-magnitude entry is positive.
Projection fit_pca_whitening(const Eigen::MatrixXd& samples, std::size_t d_out);

// Whitened coordinates before the final normalization.
Eigen::VectorXd whiten(const Projection& p, const Eigen::VectorXd& x);
Normalized project(const Projection& p, const Eigen::VectorXd& x);

Eigen::MatrixXd descriptor_matrix(const Traversal& t);
// Reference-condition descriptors available for fitting: the reference route
// plus the fitting corpus when present. Never includes variants.
Eigen::MatrixXd fitting_pool(const TraversalSet& set);

// Projects every frame; throws numeric error if any frame is degenerate.
Traversal project_traversal(const Projection& p, const Traversal& t);

void write_projection(const Projection& p, const std::filesystem::path& path);
Projection read_projection(const std::filesystem::path& path);

}  // namespace routenav
