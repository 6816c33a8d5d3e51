#pragma once

#include <string>
#include <vector>

#include "fire/ops.hpp"
#include "fire/tensor.hpp"
#include "fire/warp.hpp"

namespace fire {

enum class Direction { AtoB, BtoA };
enum class Side { A, B };

struct ConvLayer {
  Parameter weight, bias;
  int stride = 1;
  int padding = 1;
  Tensor forward(const Tensor& x) const { return conv(x, weight.tensor, bias.tensor, stride, padding); }
};

struct LinearLayer {
  Parameter weight, bias;
  Tensor forward(const Tensor& x) const { return linear(x, weight.tensor, bias.tensor); }
};

struct Encoder {
  ConvLayer c1, c2, c3;  // 1->16 s1, 16->32 s2, 32->32 s2; IN + leaky relu each
};

struct Decoder {
  ConvLayer c1, c2, c3;  // x2 up, 32->16; x2 up, 16->8; 8->1 tanh
};

struct TransformNet {
  ConvLayer trunk1, trunk2;  // (2*latent)->32, 32->32; trunk2 output is the Grad-CAM tap
  LinearLayer affine_head;   // pooled trunk -> D*(D+1) residual on the identity
  ConvLayer dense_head;      // trunk -> D channels, tanh * 0.2, upsampled x4
};

struct Critic {
  ConvLayer c1, c2, c3, c4;  // k4 s2 x3 (c3 output is the tap), then k3 score head
};

// Parameter bundle for the whole network. One weight-shared encoder serves
// both modalities.
struct FireModel {
  int dim = 2;
  Encoder encoder;
  Decoder decoder_ab, decoder_ba;
  TransformNet tnet_ab, tnet_ba;
  Critic disc_a, disc_b;

  static FireModel create(int dim, uint64_t seed);

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> generator_parameters();
  std::vector<Parameter*> discriminator_parameters();
  Parameter* find(const std::string& name);
};

struct TransformResult {
  FactorisedWarp warp;
  Tensor trunk_tap;
};

struct DiscResult {
  Tensor score_map;  // [B,1,spatial/8], unbounded patch scores
  Tensor tap;
};

struct RegistrationOutputs {
  FactorisedWarp phi_ab, phi_ba;
  Tensor synth_b, synth_a;
  Tensor warped_a, warped_b;
  Tensor latent_a, latent_b;  // also the encoder Grad-CAM taps
  Tensor stn_tap_ab, stn_tap_ba;
  Tensor input_a, input_b;  // the pass's inputs, kept for the losses
};

// latent at spatial/4 with 32 channels; input must be normalized to [-1,1]
Tensor encode(const FireModel& model, const Tensor& x);

Tensor decode(const FireModel& model, const Tensor& latent, Direction dir);

TransformResult predict_transform(const FireModel& model, const Tensor& latent_src,
                                  const Tensor& latent_dst, Direction dir);

DiscResult discriminate(const FireModel& model, const Tensor& x, Side side);

RegistrationOutputs forward_pass(const FireModel& model, const Tensor& xa, const Tensor& xb);

}  // namespace fire
