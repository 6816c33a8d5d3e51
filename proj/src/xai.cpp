#include "fire/xai.hpp"

#include <cmath>
#include <stdexcept>

#include "fire/io.hpp"
#include "fire/warp.hpp"

namespace fire {

bool site_accepts(Site site, TargetKind kind) {
  const bool disc_site = site == Site::disc_a || site == Site::disc_b;
  return disc_site == (kind == TargetKind::disc_score);
}

Tensor gradcam_channel_weights(const ActivationTap& tap) {
  if (!tap.activation.has_grad())
    throw std::runtime_error("gradcam: tap gradient missing (backward not run)");
  const int64_t batch = tap.activation.dim(0);
  const int64_t chans = tap.activation.dim(1);
  const int64_t vol = shape_numel(tap.activation.spatial_shape());
  Tensor alpha(Shape{batch, chans});
  const float* g = tap.activation.grad();
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t k = 0; k < chans; ++k) {
      double acc = 0.0;
      const float* gch = g + (b * chans + k) * vol;
      for (int64_t i = 0; i < vol; ++i) acc += gch[i];
      alpha.data()[b * chans + k] = static_cast<float>(acc / double(vol));
    }
  return alpha;
}

AttentionMap gradcam(const ActivationTap& tap, const TargetSpec& spec, const Shape& out_spatial,
                     MapNorm norm) {
  if (!site_accepts(tap.site, spec.kind))
    throw std::invalid_argument("gradcam: target kind incompatible with tap site");
  const Tensor alpha = gradcam_channel_weights(tap);
  TapePause pause;

  const int64_t batch = tap.activation.dim(0);
  const int64_t chans = tap.activation.dim(1);
  const Shape tap_spatial = tap.activation.spatial_shape();
  const int64_t vol = shape_numel(tap_spatial);
  if (tap_spatial.size() != out_spatial.size())
    throw std::invalid_argument("gradcam: output rank mismatch");
  int factor = 0;
  for (size_t d = 0; d < tap_spatial.size(); ++d) {
    if (out_spatial[d] % tap_spatial[d] != 0)
      throw std::invalid_argument("gradcam: output extent not a multiple of the tap extent");
    const int f = static_cast<int>(out_spatial[d] / tap_spatial[d]);
    if (factor == 0) factor = f;
    if (f != factor) throw std::invalid_argument("gradcam: anisotropic upsampling factor");
  }

  Shape raw_shape{batch, 1};
  raw_shape.insert(raw_shape.end(), tap_spatial.begin(), tap_spatial.end());
  Tensor raw(raw_shape);
  const float* act = tap.activation.data();
  for (int64_t b = 0; b < batch; ++b) {
    float* o = raw.data() + b * vol;
    for (int64_t k = 0; k < chans; ++k) {
      const float a = alpha.data()[b * chans + k];
      if (a == 0.0f) continue;
      const float* ach = act + (b * chans + k) * vol;
      for (int64_t i = 0; i < vol; ++i) o[i] += a * ach[i];
    }
    for (int64_t i = 0; i < vol; ++i) o[i] = std::max(o[i], 0.0f);
  }

  AttentionMap map;
  map.values = factor == 1 ? raw : upsample_linear(raw, factor);
  // interpolation of a nonnegative map stays nonnegative; clamp away -0 noise
  for (int64_t i = 0; i < map.values.numel(); ++i)
    map.values.data()[i] = std::max(map.values.data()[i], 0.0f);
  map.site = tap.site;
  map.target = spec.kind;
  map.norm = MapNorm::raw;
  return norm == MapNorm::minmax ? minmax_normalize(map) : map;
}

AttentionMap minmax_normalize(const AttentionMap& map) {
  AttentionMap out = map;
  out.values = map.values.clone();
  out.norm = MapNorm::minmax;
  const int64_t batch = out.values.dim(0);
  const int64_t vol = out.values.numel() / batch;
  for (int64_t b = 0; b < batch; ++b) {
    float* v = out.values.data() + b * vol;
    float maxv = 0.0f;
    for (int64_t i = 0; i < vol; ++i) maxv = std::max(maxv, v[i]);
    if (maxv > 0.0f)
      for (int64_t i = 0; i < vol; ++i) v[i] /= maxv;
  }
  return out;
}

Tensor transform_target(const RegistrationOutputs& outputs, const TargetSpec& spec) {
  if (spec.kind == TargetKind::disc_score)
    throw std::invalid_argument("transform_target: disc_score is not a field target");
  const FactorisedWarp& phi = spec.direction == Direction::AtoB ? outputs.phi_ab : outputs.phi_ba;
  const Shape spatial = outputs.input_a.spatial_shape();
  const int batch = static_cast<int>(outputs.input_a.dim(0));
  const Tensor mesh = identity_mesh(batch, phi.dim(), spatial);
  switch (spec.kind) {
    case TargetKind::field_magnitude: {
      const Tensor offset = sub(affine_grid(phi.affine, spatial), mesh);
      return reduce(add(offset, phi.dense.grid), Reduce::sumsq);
    }
    case TargetKind::field_affine_part:
      return reduce(sub(affine_grid(phi.affine, spatial), mesh), Reduce::sumsq);
    case TargetKind::field_dense_part:
      return reduce(phi.dense.grid, Reduce::sumsq);
    default:
      throw std::invalid_argument("transform_target: invalid kind");
  }
}

namespace {

AttentionMap field_site_map(const FireModel& model, const Tensor& xa, const Tensor& xb,
                            const TargetSpec& spec, Site site, RegistrationOutputs* outs_keep) {
  Tape tape;
  RegistrationOutputs outs = forward_pass(model, xa, xb);
  const Tensor target = transform_target(outs, spec);
  tape.backward(target);
  Tensor tap_act;
  switch (site) {
    case Site::encoder:
      tap_act = spec.direction == Direction::AtoB ? outs.latent_a : outs.latent_b;
      break;
    case Site::stn_ab:
      tap_act = outs.stn_tap_ab;
      break;
    case Site::stn_ba:
      tap_act = outs.stn_tap_ba;
      break;
    default:
      throw std::invalid_argument("field_site_map: not a field site");
  }
  if (!tap_act.has_grad()) tap_act.grad();  // a target off this branch leaves a zero map
  if (outs_keep) *outs_keep = outs;
  return gradcam(ActivationTap{site, tap_act}, spec, xa.spatial_shape(), MapNorm::minmax);
}

}  // namespace

std::pair<AttentionMap, AttentionMap> encoder_attention(const FireModel& model, const Tensor& xa,
                                                        const Tensor& xb, const TargetSpec& spec) {
  TargetSpec ab = spec, ba = spec;
  ab.direction = Direction::AtoB;
  ba.direction = Direction::BtoA;
  AttentionMap map_a = field_site_map(model, xa, xb, ab, Site::encoder, nullptr);
  AttentionMap map_b = field_site_map(model, xa, xb, ba, Site::encoder, nullptr);
  return {map_a, map_b};
}

std::pair<AttentionMap, AttentionMap> stn_attention(const FireModel& model, const Tensor& xa,
                                                    const Tensor& xb, const TargetSpec& spec) {
  TargetSpec ab = spec, ba = spec;
  ab.direction = Direction::AtoB;
  ba.direction = Direction::BtoA;
  AttentionMap map_ab = field_site_map(model, xa, xb, ab, Site::stn_ab, nullptr);
  RegistrationOutputs outs;
  AttentionMap map_ba = field_site_map(model, xa, xb, ba, Site::stn_ba, &outs);
  // report in the fixed-image frame: pull the B->A map onto xB's grid
  {
    TapePause pause;
    map_ba.values = apply_warp(map_ba.values, outs.phi_ab);
    for (int64_t i = 0; i < map_ba.values.numel(); ++i)
      map_ba.values.data()[i] = std::max(map_ba.values.data()[i], 0.0f);
    map_ba = minmax_normalize(map_ba);
  }
  return {map_ab, map_ba};
}

DiscMapResult discriminator_map(const FireModel& model, const Tensor& x, Side side,
                                const FactorisedWarp& w) {
  Tensor warped;
  {
    TapePause pause;
    warped = apply_warp(x, w);
  }
  Tape tape;
  const DiscResult d = discriminate(model, warped, side);
  const Tensor target = reduce(d.score_map, Reduce::mean);
  tape.backward(target);
  const Site site = side == Side::A ? Site::disc_a : Site::disc_b;
  TargetSpec spec{TargetKind::disc_score, Direction::AtoB};
  AttentionMap map = gradcam(ActivationTap{site, d.tap}, spec, x.spatial_shape(), MapNorm::minmax);
  return DiscMapResult{map, warped};
}

AffineTransform random_rigid_affine(Rng& rng, int dim, double lo, double hi) {
  if (lo < 0.0 || hi < lo || hi >= 1.0)
    throw std::invalid_argument("random_rigid_affine: bad magnitude range");
  const double m = rng.uniform(lo, hi);
  const int n_angles = dim == 2 ? 1 : 3;
  double angles[3] = {0, 0, 0};
  for (int a = 0; a < n_angles; ++a) angles[a] = rng.uniform(-m, m) * (3.14159265358979323846 / 4.0);
  Tensor mt(Shape{1, dim, dim + 1});
  float* out = mt.data();
  const int64_t cols = dim + 1;
  if (dim == 2) {
    const double c = std::cos(angles[0]), s = std::sin(angles[0]);
    out[0] = static_cast<float>(c);
    out[1] = static_cast<float>(-s);
    out[cols] = static_cast<float>(s);
    out[cols + 1] = static_cast<float>(c);
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
          double acc = 0.0;
          for (int k = 0; k < 3; ++k) acc += r[i * 3 + k] * rot[k * 3 + j];
          tmp[i * 3 + j] = acc;
        }
      std::copy(tmp, tmp + 9, rot);
    }
    for (int r = 0; r < 3; ++r)
      for (int cidx = 0; cidx < 3; ++cidx) out[r * cols + cidx] = static_cast<float>(rot[r * 3 + cidx]);
  }
  for (int d = 0; d < dim; ++d) out[d * cols + dim] = static_cast<float>(rng.uniform(-m, m));
  return AffineTransform{mt};
}

DiscriminatorAttention discriminator_attention(const FireModel& model, const Tensor& x_real,
                                               const Tensor& x_synth, Side side, Rng& rng, double lo,
                                               double hi) {
  if (x_real.shape() != x_synth.shape())
    throw std::invalid_argument("discriminator_attention: real/synth shape mismatch");
  const int dim = x_real.spatial_rank();
  const Shape spatial = x_real.spatial_shape();
  const int batch = static_cast<int>(x_real.dim(0));

  const FactorisedWarp rigid{random_rigid_affine(rng, dim, lo, hi),
                             DisplacementField::zero(batch, dim, spatial)};
  const double m = rng.uniform(lo, hi);
  FactorisedWarp nonrigid{AffineTransform::identity(batch, dim),
                          random_smooth_field(rng, dim, spatial, 6.0, 0.2 * m)};

  DiscriminatorAttention out;
  out.real_rigid = discriminator_map(model, x_real, side, rigid);
  out.synth_rigid = discriminator_map(model, x_synth, side, rigid);
  out.real_nonrigid = discriminator_map(model, x_real, side, nonrigid);
  out.synth_nonrigid = discriminator_map(model, x_synth, side, nonrigid);
  return out;
}

namespace {

// central slice of the leading spatial axis for 3D volumes
Tensor as_plane(const Tensor& t) {
  if (t.rank() == 4) {
    if (t.dim(0) != 1 || t.dim(1) != 1)
      throw std::invalid_argument("export_overlay: expected a single-channel map");
    return t;
  }
  if (t.rank() != 5) throw std::invalid_argument("export_overlay: expected rank 4 or 5");
  const int64_t sz = t.dim(2), sy = t.dim(3), sx = t.dim(4);
  Tensor plane(Shape{1, 1, sy, sx});
  const float* src = t.data() + (sz / 2) * sy * sx;
  std::copy(src, src + sy * sx, plane.data());
  return plane;
}

}  // namespace

std::vector<unsigned char> render_overlay_rgb(const Tensor& map_plane, const Tensor& underlay_plane) {
  const int64_t h = map_plane.dim(2), w = map_plane.dim(3);
  std::vector<unsigned char> rgb(static_cast<size_t>(h * w * 3));
  for (int64_t i = 0; i < h * w; ++i) {
    const float a = std::clamp(map_plane.data()[i], 0.0f, 1.0f);
    const float lum = std::clamp((underlay_plane.data()[i] + 1.0f) * 0.5f, 0.0f, 1.0f) * 255.0f;
    const float heat_r = 255.0f, heat_g = 255.0f * a, heat_b = 0.0f;
    rgb[static_cast<size_t>(3 * i + 0)] =
        static_cast<unsigned char>(std::lround((1.0f - a) * lum + a * heat_r));
    rgb[static_cast<size_t>(3 * i + 1)] =
        static_cast<unsigned char>(std::lround((1.0f - a) * lum + a * heat_g));
    rgb[static_cast<size_t>(3 * i + 2)] =
        static_cast<unsigned char>(std::lround((1.0f - a) * lum + a * heat_b));
  }
  return rgb;
}

void export_overlay(const AttentionMap& map, const Tensor& underlay, const std::string& base_path) {
  if (map.norm != MapNorm::minmax)
    throw std::invalid_argument("export_overlay: map must be minmax-normalized");
  if (map.values.spatial_shape() != underlay.spatial_shape())
    throw std::invalid_argument("export_overlay: map/underlay shape mismatch");
  const Tensor plane = as_plane(map.values);
  const Tensor gray = as_plane(underlay);
  write_pgm(plane, base_path + ".pgm");
  const std::vector<unsigned char> rgb = render_overlay_rgb(plane, gray);
  write_png_rgb(static_cast<int>(plane.dim(3)), static_cast<int>(plane.dim(2)), rgb, base_path + ".png");
}

double map_ncc(const AttentionMap& a, const AttentionMap& b) {
  if (a.values.shape() != b.values.shape())
    throw std::invalid_argument("map_ncc: shape mismatch");
  const int64_t n = a.values.numel();
  double ma = 0.0, mb = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    ma += a.values.data()[i];
    mb += b.values.data()[i];
  }
  ma /= double(n);
  mb /= double(n);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double da = a.values.data()[i] - ma;
    const double db = b.values.data()[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace fire
