#include "fire/nets.hpp"

#include <cmath>
#include <stdexcept>

#include "fire/rng.hpp"

namespace fire {

namespace {

constexpr int kLatentChannels = 32;
constexpr float kLeakyAlpha = 0.2f;
constexpr float kDenseBound = 0.2f;

Tensor kaiming_uniform(Rng& rng, Shape shape, int64_t fan_in) {
  const double bound = std::sqrt(6.0 / ((1.0 + kLeakyAlpha * kLeakyAlpha) * double(fan_in)));
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

ConvLayer make_conv(Rng& rng, const std::string& name, int dim, int64_t cin, int64_t cout, int64_t k,
                    int stride, int padding, bool zero_init = false) {
  Shape wshape{cout, cin};
  for (int d = 0; d < dim; ++d) wshape.push_back(k);
  const int64_t fan_in = cin * static_cast<int64_t>(std::pow(double(k), dim));
  ConvLayer layer;
  layer.weight = Parameter{name + ".weight",
                           zero_init ? Tensor(wshape) : kaiming_uniform(rng, wshape, fan_in)};
  layer.bias = Parameter{name + ".bias", Tensor(Shape{cout})};
  layer.weight.tensor.set_requires_grad(true);
  layer.bias.tensor.set_requires_grad(true);
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

LinearLayer make_linear(Rng& rng, const std::string& name, int64_t in, int64_t out, bool zero_init) {
  LinearLayer layer;
  layer.weight =
      Parameter{name + ".weight", zero_init ? Tensor(Shape{out, in}) : kaiming_uniform(rng, {out, in}, in)};
  layer.bias = Parameter{name + ".bias", Tensor(Shape{out})};
  layer.weight.tensor.set_requires_grad(true);
  layer.bias.tensor.set_requires_grad(true);
  return layer;
}

Tensor conv_block(const ConvLayer& layer, const Tensor& x) {
  return activation(instance_norm(layer.forward(x)), Act::leaky_relu, kLeakyAlpha);
}

void check_normalized(const Tensor& x, const char* what) {
  for (int64_t i = 0; i < x.numel(); ++i) {
    const float v = x.data()[i];
    if (!(v >= -1.5f && v <= 1.5f))
      throw std::invalid_argument(std::string(what) + ": input not normalized to [-1,1]");
  }
}

}  // namespace

FireModel FireModel::create(int dim, uint64_t seed) {
  if (dim != 2 && dim != 3) throw std::invalid_argument("model: dim must be 2 or 3");
  Rng rng(seed);
  FireModel m;
  m.dim = dim;
  m.encoder.c1 = make_conv(rng, "encoder.conv1", dim, 1, 16, 3, 1, 1);
  m.encoder.c2 = make_conv(rng, "encoder.conv2", dim, 16, 32, 3, 2, 1);
  m.encoder.c3 = make_conv(rng, "encoder.conv3", dim, 32, kLatentChannels, 3, 2, 1);

  auto make_decoder = [&](const std::string& prefix) {
    Decoder d;
    d.c1 = make_conv(rng, prefix + ".conv1", dim, kLatentChannels, 16, 3, 1, 1);
    d.c2 = make_conv(rng, prefix + ".conv2", dim, 16, 8, 3, 1, 1);
    d.c3 = make_conv(rng, prefix + ".conv3", dim, 8, 1, 3, 1, 1);
    return d;
  };
  m.decoder_ab = make_decoder("decoder_ab");
  m.decoder_ba = make_decoder("decoder_ba");

  auto make_tnet = [&](const std::string& prefix) {
    TransformNet t;
    t.trunk1 = make_conv(rng, prefix + ".trunk1", dim, 2 * kLatentChannels, 32, 3, 1, 1);
    t.trunk2 = make_conv(rng, prefix + ".trunk2", dim, 32, 32, 3, 1, 1);
    t.affine_head = make_linear(rng, prefix + ".affine", 32, int64_t(dim) * (dim + 1), /*zero_init=*/true);
    t.dense_head = make_conv(rng, prefix + ".dense", dim, 32, dim, 3, 1, 1, /*zero_init=*/true);
    return t;
  };
  m.tnet_ab = make_tnet("tnet_ab");
  m.tnet_ba = make_tnet("tnet_ba");

  auto make_critic = [&](const std::string& prefix) {
    Critic c;
    c.c1 = make_conv(rng, prefix + ".conv1", dim, 1, 16, 4, 2, 1);
    c.c2 = make_conv(rng, prefix + ".conv2", dim, 16, 32, 4, 2, 1);
    c.c3 = make_conv(rng, prefix + ".conv3", dim, 32, 64, 4, 2, 1);
    c.c4 = make_conv(rng, prefix + ".conv4", dim, 64, 1, 3, 1, 1);
    return c;
  };
  m.disc_a = make_critic("disc_a");
  m.disc_b = make_critic("disc_b");
  return m;
}

std::vector<Parameter*> FireModel::generator_parameters() {
  std::vector<Parameter*> out;
  auto push_conv = [&](ConvLayer& l) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  };
  push_conv(encoder.c1);
  push_conv(encoder.c2);
  push_conv(encoder.c3);
  for (Decoder* d : {&decoder_ab, &decoder_ba}) {
    push_conv(d->c1);
    push_conv(d->c2);
    push_conv(d->c3);
  }
  for (TransformNet* t : {&tnet_ab, &tnet_ba}) {
    push_conv(t->trunk1);
    push_conv(t->trunk2);
    out.push_back(&t->affine_head.weight);
    out.push_back(&t->affine_head.bias);
    push_conv(t->dense_head);
  }
  return out;
}

std::vector<Parameter*> FireModel::discriminator_parameters() {
  std::vector<Parameter*> out;
  for (Critic* c : {&disc_a, &disc_b}) {
    for (ConvLayer* l : {&c->c1, &c->c2, &c->c3, &c->c4}) {
      out.push_back(&l->weight);
      out.push_back(&l->bias);
    }
  }
  return out;
}

std::vector<Parameter*> FireModel::parameters() {
  std::vector<Parameter*> out = generator_parameters();
  for (Parameter* p : discriminator_parameters()) out.push_back(p);
  return out;
}

Parameter* FireModel::find(const std::string& name) {
  for (Parameter* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

Tensor encode(const FireModel& model, const Tensor& x) {
  if (x.spatial_rank() != model.dim)
    throw std::invalid_argument("encode: input rank does not match model dim");
  check_normalized(x, "encode");
  Tensor h = conv_block(model.encoder.c1, x);
  h = conv_block(model.encoder.c2, h);
  return conv_block(model.encoder.c3, h);  // encoder Grad-CAM tap
}

Tensor decode(const FireModel& model, const Tensor& latent, Direction dir) {
  if (latent.dim(1) != kLatentChannels)
    throw std::invalid_argument("decode: latent has " + std::to_string(latent.dim(1)) +
                                " channels, expected " + std::to_string(kLatentChannels));
  const Decoder& d = dir == Direction::AtoB ? model.decoder_ab : model.decoder_ba;
  Tensor h = upsample_linear(latent, 2);
  h = activation(d.c1.forward(h), Act::leaky_relu, kLeakyAlpha);
  h = upsample_linear(h, 2);
  h = activation(d.c2.forward(h), Act::leaky_relu, kLeakyAlpha);
  return activation(d.c3.forward(h), Act::tanh);
}

TransformResult predict_transform(const FireModel& model, const Tensor& latent_src,
                                  const Tensor& latent_dst, Direction dir) {
  if (latent_src.shape() != latent_dst.shape())
    throw std::invalid_argument("predict_transform: latent shapes differ: " +
                                shape_str(latent_src.shape()) + " vs " + shape_str(latent_dst.shape()));
  const TransformNet& t = dir == Direction::AtoB ? model.tnet_ab : model.tnet_ba;
  const int dim = model.dim;
  const int64_t batch = latent_src.dim(0);

  // no normalization in the trunk: the affine head pools these activations,
  // and per-instance standardization would erase the global misalignment cues
  Tensor h = concat_channels(latent_src, latent_dst);
  h = activation(t.trunk1.forward(h), Act::leaky_relu, kLeakyAlpha);
  Tensor tap = activation(t.trunk2.forward(h), Act::leaky_relu, kLeakyAlpha);  // STN Grad-CAM tap

  // affine head: residual on the identity matrix
  Tensor pooled = spatial_mean(tap);
  Tensor residual = reshape(t.affine_head.forward(pooled), Shape{batch, dim, dim + 1});
  Tensor matrix = add(residual, AffineTransform::identity(static_cast<int>(batch), dim).matrix);

  // dense head: bounded displacement at latent resolution, upsampled x4
  Tensor dense = scale(activation(t.dense_head.forward(tap), Act::tanh), kDenseBound);
  dense = upsample_linear(dense, 4);

  return TransformResult{FactorisedWarp{AffineTransform{matrix}, DisplacementField{dense}}, tap};
}

DiscResult discriminate(const FireModel& model, const Tensor& x, Side side) {
  for (int d = 0; d < x.spatial_rank(); ++d)
    if (x.dim(2 + d) < 16)
      throw std::invalid_argument("discriminate: spatial extent below minimum 16");
  const Critic& c = side == Side::A ? model.disc_a : model.disc_b;
  Tensor h = activation(c.c1.forward(x), Act::leaky_relu, kLeakyAlpha);
  h = activation(c.c2.forward(h), Act::leaky_relu, kLeakyAlpha);
  Tensor tap = activation(c.c3.forward(h), Act::leaky_relu, kLeakyAlpha);  // disc Grad-CAM tap
  return DiscResult{c.c4.forward(tap), tap};
}

RegistrationOutputs forward_pass(const FireModel& model, const Tensor& xa, const Tensor& xb) {
  if (xa.shape() != xb.shape())
    throw std::invalid_argument("forward_pass: inputs must share shape, got " + shape_str(xa.shape()) +
                                " vs " + shape_str(xb.shape()));
  RegistrationOutputs out;
  out.input_a = xa;
  out.input_b = xb;
  out.latent_a = encode(model, xa);
  out.latent_b = encode(model, xb);
  out.synth_b = decode(model, out.latent_a, Direction::AtoB);
  out.synth_a = decode(model, out.latent_b, Direction::BtoA);
  TransformResult ab = predict_transform(model, out.latent_a, out.latent_b, Direction::AtoB);
  TransformResult ba = predict_transform(model, out.latent_b, out.latent_a, Direction::BtoA);
  out.phi_ab = ab.warp;
  out.phi_ba = ba.warp;
  out.stn_tap_ab = ab.trunk_tap;
  out.stn_tap_ba = ba.trunk_tap;
  out.warped_a = apply_warp(xa, out.phi_ab);
  out.warped_b = apply_warp(xb, out.phi_ba);
  return out;
}

}  // namespace fire
