#pragma once

#include <string>
#include <utility>

#include "fire/nets.hpp"
#include "fire/rng.hpp"

namespace fire {

enum class Site { encoder, stn_ab, stn_ba, disc_a, disc_b };
enum class TargetKind { field_magnitude, field_affine_part, field_dense_part, disc_score };
enum class MapNorm { raw, minmax };

struct TargetSpec {
  TargetKind kind = TargetKind::field_magnitude;
  Direction direction = Direction::AtoB;
};

bool site_accepts(Site site, TargetKind kind);

// Activation captured at a site's designated last conv layer; its gradient
// store is filled by backward on the target scalar.
struct ActivationTap {
  Site site;
  Tensor activation;
};

struct AttentionMap {
  Tensor values;  // [B,1,spatial] at input resolution, nonnegative
  Site site = Site::encoder;
  TargetKind target = TargetKind::field_magnitude;
  MapNorm norm = MapNorm::raw;
};

// alpha_k = spatial mean of the tap gradient for channel k.
Tensor gradcam_channel_weights(const ActivationTap& tap);  // [B,K]

// relu(sum_k alpha_k * activation_k) upsampled linearly to out_spatial.
AttentionMap gradcam(const ActivationTap& tap, const TargetSpec& spec, const Shape& out_spatial,
                     MapNorm norm);

AttentionMap minmax_normalize(const AttentionMap& map);

// sumsq of the displacement away from identity; the *_part kinds restrict to
// the affine or dense factor. Recorded on the active tape.
Tensor transform_target(const RegistrationOutputs& outputs, const TargetSpec& spec);

// One map per input image, each from the encoder tap of that input with the
// per-direction field target backpropagated through the pass.
std::pair<AttentionMap, AttentionMap> encoder_attention(const FireModel& model, const Tensor& xa,
                                                        const Tensor& xb, const TargetSpec& spec);

// Taps the transform-net trunks; both maps reported in the fixed-image frame
// (the B->A map is resampled onto xB's grid).
std::pair<AttentionMap, AttentionMap> stn_attention(const FireModel& model, const Tensor& xa,
                                                    const Tensor& xb, const TargetSpec& spec);

// Map for one input through one critic, target = mean score of the input
// warped by w.
struct DiscMapResult {
  AttentionMap map;
  Tensor warped_input;
};
DiscMapResult discriminator_map(const FireModel& model, const Tensor& x, Side side,
                                const FactorisedWarp& w);

// Four maps per side: {real, synth} x {rigid, nonrigid}; within a variant the
// same random warp is applied to both inputs.
struct DiscriminatorAttention {
  DiscMapResult real_rigid, real_nonrigid, synth_rigid, synth_nonrigid;
};
DiscriminatorAttention discriminator_attention(const FireModel& model, const Tensor& x_real,
                                               const Tensor& x_synth, Side side, Rng& rng,
                                               double lo = 0.2, double hi = 0.5);

// Rotation + translation only.
AffineTransform random_rigid_affine(Rng& rng, int dim, double lo, double hi);

// Overlay pixels: underlay as luminance, red-to-yellow heat layer with alpha
// equal to the map value. Inputs are single planes.
std::vector<unsigned char> render_overlay_rgb(const Tensor& map_plane, const Tensor& underlay_plane);

// Writes base_path + ".pgm" (raw map) and base_path + ".png" (heat overlay on
// the underlay). Map must be minmax-normalized. 3D volumes render the central
// slice of the leading spatial axis.
void export_overlay(const AttentionMap& map, const Tensor& underlay, const std::string& base_path);

// Normalized cross-correlation between two maps of equal shape; 0 when either
// map has no variance.
double map_ncc(const AttentionMap& a, const AttentionMap& b);

}  // namespace fire
