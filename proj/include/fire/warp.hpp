#pragma once

#include "fire/ops.hpp"
#include "fire/rng.hpp"
#include "fire/tensor.hpp"

namespace fire {

// Affine map on normalized coordinates in [-1,1]^D, one D x (D+1) matrix per
// batch item (last column is the translation).
struct AffineTransform {
  Tensor matrix;  // [B, D, D+1]

  static AffineTransform identity(int batch, int dim);
  static AffineTransform from_matrix(Tensor m);  // validates the linear block

  int dim() const { return static_cast<int>(matrix.dim(1)); }
  int batch() const { return static_cast<int>(matrix.dim(0)); }
  double linear_det(int b = 0) const;
  AffineTransform inverse() const;
};

// Dense displacement vectors in normalized coordinate units; zero field is
// the identity.
struct DisplacementField {
  Tensor grid;  // [B, D, spatial...]

  static DisplacementField zero(int batch, int dim, const Shape& spatial);
  int dim() const { return static_cast<int>(grid.dim(1)); }
  Shape spatial() const { return grid.spatial_shape(); }
};

// Total map per output coordinate p: sample at affine(p) + dense(p).
struct FactorisedWarp {
  AffineTransform affine;
  DisplacementField dense;

  static FactorisedWarp identity(int batch, int dim, const Shape& spatial);
  int dim() const { return dense.dim(); }
};

// Normalized mesh coordinates (align-corners-false): channel d holds the
// coordinate along spatial axis d.
Tensor identity_mesh(int batch, int dim, const Shape& spatial);

// Sampling grid for an affine transform; differentiable wrt the matrix.
Tensor affine_grid(const AffineTransform& a, const Shape& spatial);

// Linear interpolation of image at grid coordinates, out-of-range samples
// clamped to the boundary. Differentiable wrt image and grid.
Tensor grid_sample(const Tensor& image, const Tensor& grid);

Tensor apply_warp(const Tensor& image, const FactorisedWarp& w);

// affine(p) + dense(p) for every output voxel p.
Tensor total_coordinate_map(const FactorisedWarp& w, const Shape& spatial);

// Dense field of inner-then-outer: inner_total(outer_total(p)) - p.
DisplacementField compose(const FactorisedWarp& outer, const FactorisedWarp& inner);

// Fixed-point inversion v_{k+1}(p) = -u(p + v_k(p)), v_0 = -u.
DisplacementField invert_dense(const DisplacementField& u, int iters);

// Determinant of the spatial gradient of the total map, voxel units; central
// differences inside, one-sided at borders. Output [B,1,spatial].
Tensor jacobian_determinant(const FactorisedWarp& w);

// Magnitude m ~ U[lo,hi]; per-axis scale in [1-m,1+m], rotation bounded by
// m*pi/4, translation in [-m,m]; at least one axis change >= lo.
AffineTransform random_affine(Rng& rng, int dim, double lo, double hi);

// Gaussian-smoothed white noise rescaled so the max vector norm equals
// amplitude exactly.
DisplacementField random_smooth_field(Rng& rng, int dim, const Shape& spatial, double sigma,
                                      double amplitude);

// Separable truncated-gaussian smoothing of one scalar channel, kernel
// renormalized at the borders.
void gaussian_smooth(std::vector<float>& values, const Shape& spatial, double sigma);

// Perturbation sampler used by training and evaluation: random affine plus a
// smooth field with amplitude 0.2*m (m ~ U[lo,hi]) at sigma 6.
FactorisedWarp random_factorised_warp(Rng& rng, int dim, const Shape& spatial, double lo, double hi);

}  // namespace fire
