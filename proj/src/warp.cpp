#include "fire/warp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fire {

namespace {

double det2(const float* m, int64_t cols) { return double(m[0]) * m[cols + 1] - double(m[1]) * m[cols]; }

double det3(const float* m, int64_t cols) {
  const double a = m[0], b = m[1], c = m[2];
  const double d = m[cols], e = m[cols + 1], f = m[cols + 2];
  const double g = m[2 * cols], h = m[2 * cols + 1], i = m[2 * cols + 2];
  return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
}

void check_dim(int dim, const char* what) {
  if (dim != 2 && dim != 3) throw std::invalid_argument(std::string(what) + ": dim must be 2 or 3");
}

}  // namespace

AffineTransform AffineTransform::identity(int batch, int dim) {
  check_dim(dim, "affine identity");
  Tensor m(Shape{batch, dim, dim + 1});
  for (int64_t b = 0; b < batch; ++b)
    for (int d = 0; d < dim; ++d) m.data()[(b * dim + d) * (dim + 1) + d] = 1.0f;
  return AffineTransform{m};
}

AffineTransform AffineTransform::from_matrix(Tensor m) {
  if (m.rank() != 3 || m.dim(2) != m.dim(1) + 1)
    throw std::invalid_argument("affine: matrix must be [B,D,D+1], got " + shape_str(m.shape()));
  check_dim(static_cast<int>(m.dim(1)), "affine");
  AffineTransform a{m};
  for (int b = 0; b < a.batch(); ++b) {
    if (std::abs(a.linear_det(b)) <= 1e-8)
      throw std::invalid_argument("affine: singular linear block (batch " + std::to_string(b) + ")");
  }
  return a;
}

double AffineTransform::linear_det(int b) const {
  const int d = dim();
  const float* m = matrix.data() + int64_t(b) * d * (d + 1);
  return d == 2 ? det2(m, d + 1) : det3(m, d + 1);
}

AffineTransform AffineTransform::inverse() const {
  const int d = dim();
  const int64_t cols = d + 1;
  Tensor out(matrix.shape());
  for (int b = 0; b < batch(); ++b) {
    const float* m = matrix.data() + int64_t(b) * d * cols;
    float* o = out.data() + int64_t(b) * d * cols;
    const double det = linear_det(b);
    if (std::abs(det) <= 1e-8)
      throw std::invalid_argument("affine inverse: singular linear block");
    double inv[9];
    if (d == 2) {
      inv[0] = m[cols + 1] / det;
      inv[1] = -m[1] / det;
      inv[2] = -m[cols] / det;
      inv[3] = m[0] / det;
    } else {
      const double a = m[0], bb = m[1], c = m[2];
      const double dd = m[cols], e = m[cols + 1], f = m[cols + 2];
      const double g = m[2 * cols], h = m[2 * cols + 1], i = m[2 * cols + 2];
      inv[0] = (e * i - f * h) / det;
      inv[1] = (c * h - bb * i) / det;
      inv[2] = (bb * f - c * e) / det;
      inv[3] = (f * g - dd * i) / det;
      inv[4] = (a * i - c * g) / det;
      inv[5] = (c * dd - a * f) / det;
      inv[6] = (dd * h - e * g) / det;
      inv[7] = (bb * g - a * h) / det;
      inv[8] = (a * e - bb * dd) / det;
    }
    for (int r = 0; r < d; ++r) {
      double t = 0.0;
      for (int cidx = 0; cidx < d; ++cidx) {
        o[r * cols + cidx] = static_cast<float>(inv[r * d + cidx]);
        t += inv[r * d + cidx] * m[cidx * cols + d];
      }
      o[r * cols + d] = static_cast<float>(-t);
    }
  }
  return AffineTransform{out};
}

DisplacementField DisplacementField::zero(int batch, int dim, const Shape& spatial) {
  check_dim(dim, "displacement field");
  if (static_cast<int>(spatial.size()) != dim)
    throw std::invalid_argument("displacement field: spatial rank does not match dim");
  Shape s{batch, dim};
  s.insert(s.end(), spatial.begin(), spatial.end());
  return DisplacementField{Tensor(s)};
}

FactorisedWarp FactorisedWarp::identity(int batch, int dim, const Shape& spatial) {
  return FactorisedWarp{AffineTransform::identity(batch, dim),
                        DisplacementField::zero(batch, dim, spatial)};
}

Tensor identity_mesh(int batch, int dim, const Shape& spatial) {
  check_dim(dim, "identity_mesh");
  if (static_cast<int>(spatial.size()) != dim)
    throw std::invalid_argument("identity_mesh: spatial rank " + std::to_string(spatial.size()) +
                                " does not match dim " + std::to_string(dim));
  Shape s{batch, dim};
  s.insert(s.end(), spatial.begin(), spatial.end());
  Tensor mesh(s);
  const int64_t vol = shape_numel(spatial);
  // coordinate along axis d varies with index d of the row-major position
  for (int d = 0; d < dim; ++d) {
    int64_t repeat = 1;  // product of extents after d
    for (int e = d + 1; e < dim; ++e) repeat *= spatial[static_cast<size_t>(e)];
    const int64_t extent = spatial[static_cast<size_t>(d)];
    for (int64_t b = 0; b < batch; ++b) {
      float* ch = mesh.data() + (b * dim + d) * vol;
      for (int64_t pos = 0; pos < vol; ++pos) {
        const int64_t idx = (pos / repeat) % extent;
        ch[pos] = static_cast<float>((2.0 * double(idx) + 1.0) / double(extent) - 1.0);
      }
    }
  }
  return mesh;
}

Tensor affine_grid(const AffineTransform& a, const Shape& spatial) {
  const int dim = a.dim();
  if (static_cast<int>(spatial.size()) != dim)
    throw std::invalid_argument("affine_grid: spatial rank does not match transform dim");
  const int batch = a.batch();
  const Tensor mesh = identity_mesh(batch, dim, spatial);
  const int64_t vol = shape_numel(spatial);
  Tensor out(mesh.shape());
  const int64_t cols = dim + 1;
  for (int64_t b = 0; b < batch; ++b) {
    const float* m = a.matrix.data() + b * dim * cols;
    for (int d = 0; d < dim; ++d) {
      float* o = out.data() + (b * dim + d) * vol;
      for (int64_t pos = 0; pos < vol; ++pos) {
        float acc = m[d * cols + dim];
        for (int e = 0; e < dim; ++e) acc += m[d * cols + e] * mesh.data()[(b * dim + e) * vol + pos];
        o[pos] = acc;
      }
    }
  }
  Tape* tape = Tape::active();
  if (tape && tracks_grad(a.matrix)) {
    auto mi = a.matrix.impl, oi = out.impl, meshi = mesh.impl;
    tape->record("affine_grid", {a.matrix}, out, [=]() {
      if (oi->grad.empty()) return;
      float* gm = grad_buffer(mi.get());
      const float* g = oi->grad.data();
      for (int64_t b = 0; b < batch; ++b) {
        for (int d = 0; d < dim; ++d) {
          const float* gch = g + (b * dim + d) * vol;
          for (int e = 0; e < dim; ++e) {
            const float* mch = meshi->data.data() + (b * dim + e) * vol;
            double acc = 0.0;
            for (int64_t pos = 0; pos < vol; ++pos) acc += double(gch[pos]) * double(mch[pos]);
            gm[(b * dim + d) * cols + e] += static_cast<float>(acc);
          }
          double acc = 0.0;
          for (int64_t pos = 0; pos < vol; ++pos) acc += gch[pos];
          gm[(b * dim + d) * cols + dim] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

namespace {

struct SampleContext {
  int64_t batch, chans, dim;
  Shape in_spatial, out_spatial;
  int64_t in_vol, out_vol;
};

// One interpolation site: base corner index, fractional weights, and whether
// the coordinate was clamped (zero grad to the grid there).
inline void resolve_axis(float coord, int64_t extent, int64_t& i0, int64_t& i1, float& t, bool& clamped) {
  const double pixel = (double(coord) + 1.0) * double(extent) / 2.0 - 0.5;
  double p = pixel;
  clamped = false;
  if (p < 0.0) {
    p = 0.0;
    clamped = true;
  } else if (p > double(extent - 1)) {
    p = double(extent - 1);
    clamped = true;
  }
  const double f = std::floor(p);
  i0 = static_cast<int64_t>(f);
  t = static_cast<float>(p - f);
  i1 = std::min(i0 + 1, extent - 1);
}

}  // namespace

Tensor grid_sample(const Tensor& image, const Tensor& grid) {
  if (image.rank() < 4 || image.rank() > 5)
    throw std::invalid_argument("grid_sample: image spatial rank must be 2 or 3");
  const int dim = image.spatial_rank();
  if (grid.rank() != image.rank() || grid.dim(1) != dim)
    throw std::invalid_argument("grid_sample: grid " + shape_str(grid.shape()) +
                                " does not match image " + shape_str(image.shape()));
  if (grid.dim(0) != image.dim(0)) throw std::invalid_argument("grid_sample: batch mismatch");

  SampleContext cx;
  cx.batch = image.dim(0);
  cx.chans = image.dim(1);
  cx.dim = dim;
  cx.in_spatial = image.spatial_shape();
  cx.out_spatial = grid.spatial_shape();
  cx.in_vol = shape_numel(cx.in_spatial);
  cx.out_vol = shape_numel(cx.out_spatial);

  Shape oshape{cx.batch, cx.chans};
  oshape.insert(oshape.end(), cx.out_spatial.begin(), cx.out_spatial.end());
  Tensor out(oshape);

  const float* img = image.data();
  const float* grd = grid.data();
  float* dst = out.data();

  if (dim == 2) {
    const int64_t sy = cx.in_spatial[0], sx = cx.in_spatial[1];
    for (int64_t b = 0; b < cx.batch; ++b) {
      const float* gy = grd + (b * 2 + 0) * cx.out_vol;
      const float* gx = grd + (b * 2 + 1) * cx.out_vol;
      for (int64_t pos = 0; pos < cx.out_vol; ++pos) {
        int64_t y0, y1, x0, x1;
        float ty, tx;
        bool cy, cxl;
        resolve_axis(gy[pos], sy, y0, y1, ty, cy);
        resolve_axis(gx[pos], sx, x0, x1, tx, cxl);
        const float w00 = (1 - ty) * (1 - tx), w01 = (1 - ty) * tx, w10 = ty * (1 - tx), w11 = ty * tx;
        for (int64_t c = 0; c < cx.chans; ++c) {
          const float* ic = img + (b * cx.chans + c) * cx.in_vol;
          dst[(b * cx.chans + c) * cx.out_vol + pos] = w00 * ic[y0 * sx + x0] + w01 * ic[y0 * sx + x1] +
                                                       w10 * ic[y1 * sx + x0] + w11 * ic[y1 * sx + x1];
        }
      }
    }
  } else {
    const int64_t sz = cx.in_spatial[0], sy = cx.in_spatial[1], sx = cx.in_spatial[2];
    for (int64_t b = 0; b < cx.batch; ++b) {
      const float* gz = grd + (b * 3 + 0) * cx.out_vol;
      const float* gy = grd + (b * 3 + 1) * cx.out_vol;
      const float* gx = grd + (b * 3 + 2) * cx.out_vol;
      for (int64_t pos = 0; pos < cx.out_vol; ++pos) {
        int64_t z0, z1, y0, y1, x0, x1;
        float tz, ty, tx;
        bool cz, cy, cxl;
        resolve_axis(gz[pos], sz, z0, z1, tz, cz);
        resolve_axis(gy[pos], sy, y0, y1, ty, cy);
        resolve_axis(gx[pos], sx, x0, x1, tx, cxl);
        for (int64_t c = 0; c < cx.chans; ++c) {
          const float* ic = img + (b * cx.chans + c) * cx.in_vol;
          auto at = [&](int64_t z, int64_t y, int64_t x) { return ic[(z * sy + y) * sx + x]; };
          const float v00 = (1 - tx) * at(z0, y0, x0) + tx * at(z0, y0, x1);
          const float v01 = (1 - tx) * at(z0, y1, x0) + tx * at(z0, y1, x1);
          const float v10 = (1 - tx) * at(z1, y0, x0) + tx * at(z1, y0, x1);
          const float v11 = (1 - tx) * at(z1, y1, x0) + tx * at(z1, y1, x1);
          dst[(b * cx.chans + c) * cx.out_vol + pos] =
              (1 - tz) * ((1 - ty) * v00 + ty * v01) + tz * ((1 - ty) * v10 + ty * v11);
        }
      }
    }
  }

  Tape* tape = Tape::active();
  if (tape && (tracks_grad(image) || tracks_grad(grid))) {
    auto ii = image.impl, gi = grid.impl, oi = out.impl;
    const bool need_img = tracks_grad(image), need_grid = tracks_grad(grid);
    tape->record("grid_sample", {image, grid}, out, [=]() {
      if (oi->grad.empty()) return;
      const float* go = oi->grad.data();
      const float* img2 = ii->data.data();
      const float* grd2 = gi->data.data();
      float* gimg = need_img ? grad_buffer(ii.get()) : nullptr;
      float* ggrid = need_grid ? grad_buffer(gi.get()) : nullptr;
      if (cx.dim == 2) {
        const int64_t sy = cx.in_spatial[0], sx = cx.in_spatial[1];
        for (int64_t b = 0; b < cx.batch; ++b) {
          const float* gy = grd2 + (b * 2 + 0) * cx.out_vol;
          const float* gx = grd2 + (b * 2 + 1) * cx.out_vol;
          for (int64_t pos = 0; pos < cx.out_vol; ++pos) {
            int64_t y0, y1, x0, x1;
            float ty, tx;
            bool cy, cxl;
            resolve_axis(gy[pos], sy, y0, y1, ty, cy);
            resolve_axis(gx[pos], sx, x0, x1, tx, cxl);
            float dy_acc = 0.0f, dx_acc = 0.0f;
            for (int64_t c = 0; c < cx.chans; ++c) {
              const float g = go[(b * cx.chans + c) * cx.out_vol + pos];
              if (g == 0.0f) continue;
              const float* ic = img2 + (b * cx.chans + c) * cx.in_vol;
              const float v00 = ic[y0 * sx + x0], v01 = ic[y0 * sx + x1];
              const float v10 = ic[y1 * sx + x0], v11 = ic[y1 * sx + x1];
              if (gimg) {
                float* gc = gimg + (b * cx.chans + c) * cx.in_vol;
                gc[y0 * sx + x0] += g * (1 - ty) * (1 - tx);
                gc[y0 * sx + x1] += g * (1 - ty) * tx;
                gc[y1 * sx + x0] += g * ty * (1 - tx);
                gc[y1 * sx + x1] += g * ty * tx;
              }
              if (ggrid) {
                dy_acc += g * ((1 - tx) * (v10 - v00) + tx * (v11 - v01));
                dx_acc += g * ((1 - ty) * (v01 - v00) + ty * (v11 - v10));
              }
            }
            if (ggrid) {
              if (!cy) ggrid[(b * 2 + 0) * cx.out_vol + pos] += dy_acc * float(sy) * 0.5f;
              if (!cxl) ggrid[(b * 2 + 1) * cx.out_vol + pos] += dx_acc * float(sx) * 0.5f;
            }
          }
        }
      } else {
        const int64_t sz = cx.in_spatial[0], sy = cx.in_spatial[1], sx = cx.in_spatial[2];
        for (int64_t b = 0; b < cx.batch; ++b) {
          const float* gz = grd2 + (b * 3 + 0) * cx.out_vol;
          const float* gy = grd2 + (b * 3 + 1) * cx.out_vol;
          const float* gx = grd2 + (b * 3 + 2) * cx.out_vol;
          for (int64_t pos = 0; pos < cx.out_vol; ++pos) {
            int64_t z0, z1, y0, y1, x0, x1;
            float tz, ty, tx;
            bool cz, cy, cxl;
            resolve_axis(gz[pos], sz, z0, z1, tz, cz);
            resolve_axis(gy[pos], sy, y0, y1, ty, cy);
            resolve_axis(gx[pos], sx, x0, x1, tx, cxl);
            float dz_acc = 0.0f, dy_acc = 0.0f, dx_acc = 0.0f;
            for (int64_t c = 0; c < cx.chans; ++c) {
              const float g = go[(b * cx.chans + c) * cx.out_vol + pos];
              if (g == 0.0f) continue;
              const float* ic = img2 + (b * cx.chans + c) * cx.in_vol;
              auto at = [&](int64_t z, int64_t y, int64_t x) { return ic[(z * sy + y) * sx + x]; };
              const float wz0 = 1 - tz, wy0 = 1 - ty, wx0 = 1 - tx;
              if (gimg) {
                float* gc = gimg + (b * cx.chans + c) * cx.in_vol;
                gc[(z0 * sy + y0) * sx + x0] += g * wz0 * wy0 * wx0;
                gc[(z0 * sy + y0) * sx + x1] += g * wz0 * wy0 * tx;
                gc[(z0 * sy + y1) * sx + x0] += g * wz0 * ty * wx0;
                gc[(z0 * sy + y1) * sx + x1] += g * wz0 * ty * tx;
                gc[(z1 * sy + y0) * sx + x0] += g * tz * wy0 * wx0;
                gc[(z1 * sy + y0) * sx + x1] += g * tz * wy0 * tx;
                gc[(z1 * sy + y1) * sx + x0] += g * tz * ty * wx0;
                gc[(z1 * sy + y1) * sx + x1] += g * tz * ty * tx;
              }
              if (ggrid) {
                const float f00 = wx0 * at(z0, y0, x0) + tx * at(z0, y0, x1);
                const float f01 = wx0 * at(z0, y1, x0) + tx * at(z0, y1, x1);
                const float f10 = wx0 * at(z1, y0, x0) + tx * at(z1, y0, x1);
                const float f11 = wx0 * at(z1, y1, x0) + tx * at(z1, y1, x1);
                dz_acc += g * ((wy0 * f10 + ty * f11) - (wy0 * f00 + ty * f01));
                dy_acc += g * (wz0 * (f01 - f00) + tz * (f11 - f10));
                const float e00 = at(z0, y0, x1) - at(z0, y0, x0);
                const float e01 = at(z0, y1, x1) - at(z0, y1, x0);
                const float e10 = at(z1, y0, x1) - at(z1, y0, x0);
                const float e11 = at(z1, y1, x1) - at(z1, y1, x0);
                dx_acc += g * (wz0 * (wy0 * e00 + ty * e01) + tz * (wy0 * e10 + ty * e11));
              }
            }
            if (ggrid) {
              if (!cz) ggrid[(b * 3 + 0) * cx.out_vol + pos] += dz_acc * float(sz) * 0.5f;
              if (!cy) ggrid[(b * 3 + 1) * cx.out_vol + pos] += dy_acc * float(sy) * 0.5f;
              if (!cxl) ggrid[(b * 3 + 2) * cx.out_vol + pos] += dx_acc * float(sx) * 0.5f;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor total_coordinate_map(const FactorisedWarp& w, const Shape& spatial) {
  return add(affine_grid(w.affine, spatial), w.dense.grid);
}

Tensor apply_warp(const Tensor& image, const FactorisedWarp& w) {
  if (image.spatial_shape() != w.dense.spatial())
    throw std::invalid_argument("apply_warp: image " + shape_str(image.shape()) +
                                " vs field spatial " + shape_str(w.dense.grid.shape()));
  return grid_sample(image, total_coordinate_map(w, image.spatial_shape()));
}

DisplacementField compose(const FactorisedWarp& outer, const FactorisedWarp& inner) {
  const Shape spatial = outer.dense.spatial();
  if (inner.dense.spatial() != spatial)
    throw std::invalid_argument("compose: spatial shape mismatch");
  const int batch = static_cast<int>(outer.dense.grid.dim(0));
  const Tensor outer_total = total_coordinate_map(outer, spatial);
  const Tensor inner_total = total_coordinate_map(inner, spatial);
  const Tensor sampled = grid_sample(inner_total, outer_total);
  const Tensor mesh = identity_mesh(batch, outer.dim(), spatial);
  return DisplacementField{sub(sampled, mesh)};
}

DisplacementField invert_dense(const DisplacementField& u, int iters) {
  if (iters < 1) throw std::invalid_argument("invert_dense: iters must be >= 1");
  TapePause pause;
  const int batch = static_cast<int>(u.grid.dim(0));
  const Tensor mesh = identity_mesh(batch, u.dim(), u.spatial());
  Tensor v = scale(u.grid, -1.0f);
  for (int k = 0; k < iters; ++k) {
    v = scale(grid_sample(u.grid, add(mesh, v)), -1.0f);
  }
  return DisplacementField{v};
}

Tensor jacobian_determinant(const FactorisedWarp& w) {
  TapePause pause;
  const Shape spatial = w.dense.spatial();
  const int dim = w.dim();
  for (int64_t e : spatial)
    if (e < 3) throw std::invalid_argument("jacobian_determinant: spatial extents must be >= 3");
  const int64_t batch = w.dense.grid.dim(0);
  const Tensor total = total_coordinate_map(w, spatial);
  const int64_t vol = shape_numel(spatial);

  // total map in voxel units per axis
  std::vector<float> tvox(static_cast<size_t>(batch * dim * vol));
  for (int64_t b = 0; b < batch; ++b)
    for (int d = 0; d < dim; ++d) {
      const int64_t extent = spatial[static_cast<size_t>(d)];
      const float* src = total.data() + (b * dim + d) * vol;
      float* dst = tvox.data() + (b * dim + d) * vol;
      for (int64_t pos = 0; pos < vol; ++pos)
        dst[pos] = ((src[pos] + 1.0f) * float(extent) - 1.0f) * 0.5f;
    }

  std::vector<int64_t> stride(static_cast<size_t>(dim));
  int64_t acc = 1;
  for (int d = dim - 1; d >= 0; --d) {
    stride[static_cast<size_t>(d)] = acc;
    acc *= spatial[static_cast<size_t>(d)];
  }

  Shape oshape{batch, 1};
  oshape.insert(oshape.end(), spatial.begin(), spatial.end());
  Tensor out(oshape);

  std::vector<int64_t> idx(static_cast<size_t>(dim), 0);
  for (int64_t b = 0; b < batch; ++b) {
    float* o = out.data() + b * vol;
    std::fill(idx.begin(), idx.end(), 0);
    for (int64_t pos = 0; pos < vol; ++pos) {
      double jac[9] = {0};
      for (int d = 0; d < dim; ++d) {  // component d of the map
        const float* comp = tvox.data() + (b * dim + d) * vol;
        for (int e = 0; e < dim; ++e) {  // derivative along axis e
          const int64_t extent = spatial[static_cast<size_t>(e)];
          const int64_t i = idx[static_cast<size_t>(e)];
          const int64_t st = stride[static_cast<size_t>(e)];
          double deriv;
          if (i == 0)
            deriv = double(comp[pos + st]) - double(comp[pos]);
          else if (i == extent - 1)
            deriv = double(comp[pos]) - double(comp[pos - st]);
          else
            deriv = 0.5 * (double(comp[pos + st]) - double(comp[pos - st]));
          jac[d * dim + e] = deriv;
        }
      }
      double det;
      if (dim == 2) {
        det = jac[0] * jac[3] - jac[1] * jac[2];
      } else {
        det = jac[0] * (jac[4] * jac[8] - jac[5] * jac[7]) - jac[1] * (jac[3] * jac[8] - jac[5] * jac[6]) +
              jac[2] * (jac[3] * jac[7] - jac[4] * jac[6]);
      }
      o[pos] = static_cast<float>(det);
      for (int d = dim - 1; d >= 0; --d) {
        if (++idx[static_cast<size_t>(d)] < spatial[static_cast<size_t>(d)]) break;
        idx[static_cast<size_t>(d)] = 0;
      }
    }
  }
  return out;
}

AffineTransform random_affine(Rng& rng, int dim, double lo, double hi) {
  check_dim(dim, "random_affine");
  if (lo < 0.0 || hi < lo || hi >= 1.0)
    throw std::invalid_argument("random_affine: magnitude range must satisfy 0 <= lo <= hi < 1");
  const double m = rng.uniform(lo, hi);
  double scales[3], trans[3], angles[3] = {0, 0, 0};
  for (int attempt = 0; attempt < 1000; ++attempt) {
    double change = 0.0;
    for (int d = 0; d < dim; ++d) {
      scales[d] = 1.0 + rng.uniform(-m, m);
      trans[d] = rng.uniform(-m, m);
      change = std::max({change, std::abs(scales[d] - 1.0), std::abs(trans[d])});
    }
    const int n_angles = dim == 2 ? 1 : 3;
    for (int a = 0; a < n_angles; ++a) angles[a] = rng.uniform(-m, m) * (3.14159265358979323846 / 4.0);
    if (change >= lo) break;
  }
  Tensor mt(Shape{1, dim, dim + 1});
  float* out = mt.data();
  const int64_t cols = dim + 1;
  if (dim == 2) {
    const double c = std::cos(angles[0]), s = std::sin(angles[0]);
    const double rot[4] = {c, -s, s, c};
    for (int r = 0; r < 2; ++r)
      for (int cidx = 0; cidx < 2; ++cidx) out[r * cols + cidx] = static_cast<float>(rot[r * 2 + cidx] * scales[cidx]);
    out[0 * cols + 2] = static_cast<float>(trans[0]);
    out[1 * cols + 2] = static_cast<float>(trans[1]);
  } else {
    double rot[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    for (int axis = 0; axis < 3; ++axis) {
      const double c = std::cos(angles[axis]), s = std::sin(angles[axis]);
      double r[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      r[u * 3 + u] = c;
      r[u * 3 + v] = -s;
      r[v * 3 + u] = s;
      r[v * 3 + v] = c;
      double tmp[9];
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double acc2 = 0.0;
          for (int k = 0; k < 3; ++k) acc2 += r[i * 3 + k] * rot[k * 3 + j];
          tmp[i * 3 + j] = acc2;
        }
      std::copy(tmp, tmp + 9, rot);
    }
    for (int r = 0; r < 3; ++r) {
      for (int cidx = 0; cidx < 3; ++cidx) out[r * cols + cidx] = static_cast<float>(rot[r * 3 + cidx] * scales[cidx]);
      out[r * cols + 3] = static_cast<float>(trans[r]);
    }
  }
  return AffineTransform::from_matrix(mt);
}

// separable truncated-gaussian blur with per-position renormalization
void gaussian_smooth(std::vector<float>& buf, const Shape& spatial, double sigma) {
  const int dim = static_cast<int>(spatial.size());
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  for (int j = -radius; j <= radius; ++j)
    kernel[static_cast<size_t>(j + radius)] = std::exp(-0.5 * double(j) * double(j) / (sigma * sigma));
  std::vector<int64_t> stride(static_cast<size_t>(dim));
  int64_t acc = 1;
  for (int d = dim - 1; d >= 0; --d) {
    stride[static_cast<size_t>(d)] = acc;
    acc *= spatial[static_cast<size_t>(d)];
  }
  const int64_t vol = acc;
  std::vector<float> tmp(buf.size());
  for (int d = 0; d < dim; ++d) {
    const int64_t extent = spatial[static_cast<size_t>(d)];
    const int64_t st = stride[static_cast<size_t>(d)];
    const int64_t block = extent * st;
    for (int64_t base = 0; base < vol; base += block) {
      for (int64_t inner = 0; inner < st; ++inner) {
        for (int64_t i = 0; i < extent; ++i) {
          double num = 0.0, den = 0.0;
          const int64_t jlo = std::max<int64_t>(-radius, -i);
          const int64_t jhi = std::min<int64_t>(radius, extent - 1 - i);
          for (int64_t j = jlo; j <= jhi; ++j) {
            const double w = kernel[static_cast<size_t>(j + radius)];
            num += w * buf[static_cast<size_t>(base + (i + j) * st + inner)];
            den += w;
          }
          tmp[static_cast<size_t>(base + i * st + inner)] = static_cast<float>(num / den);
        }
      }
    }
    buf.swap(tmp);
  }
}

DisplacementField random_smooth_field(Rng& rng, int dim, const Shape& spatial, double sigma,
                                      double amplitude) {
  check_dim(dim, "random_smooth_field");
  if (sigma < 1.0) throw std::invalid_argument("random_smooth_field: sigma must be >= 1");
  if (amplitude < 0.0) throw std::invalid_argument("random_smooth_field: amplitude must be >= 0");
  DisplacementField field = DisplacementField::zero(1, dim, spatial);
  if (amplitude == 0.0) return field;
  const int64_t vol = shape_numel(spatial);
  std::vector<float> chan(static_cast<size_t>(vol));
  for (int d = 0; d < dim; ++d) {
    for (auto& v : chan) v = static_cast<float>(rng.normal());
    gaussian_smooth(chan, spatial, sigma);
    std::copy(chan.begin(), chan.end(), field.grid.data() + int64_t(d) * vol);
  }
  double max_norm = 0.0;
  for (int64_t pos = 0; pos < vol; ++pos) {
    double nsq = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double v = field.grid.data()[int64_t(d) * vol + pos];
      nsq += v * v;
    }
    max_norm = std::max(max_norm, std::sqrt(nsq));
  }
  if (max_norm > 0.0) {
    const float s = static_cast<float>(amplitude / max_norm);
    float* p = field.grid.data();
    for (int64_t i = 0; i < field.grid.numel(); ++i) p[i] *= s;
  }
  return field;
}

FactorisedWarp random_factorised_warp(Rng& rng, int dim, const Shape& spatial, double lo, double hi) {
  AffineTransform affine = random_affine(rng, dim, lo, hi);
  const double m = rng.uniform(lo, hi);
  DisplacementField dense = random_smooth_field(rng, dim, spatial, 6.0, 0.2 * m);
  return FactorisedWarp{affine, dense};
}

}  // namespace fire
